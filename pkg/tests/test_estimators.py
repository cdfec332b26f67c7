import math

import numpy as np
import pytest

from nbrec.errors import DataError
from nbrec.estimators import (CallableErrorSource, LossSpec,
                              ObservedErrorSource, PotentialErrorSource,
                              ideal_loss, ideal_loss_n, ips_loss, n_dr_loss,
                              n_ips_loss, naive_loss)
from nbrec.kernels import KernelSpec, exact_match
from nbrec.neighborhood import discrete, point_mass, uniform_binary
from nbrec.propensity import OraclePropensity, PropensityField

MAE = LossSpec("absolute-error")


def _field(p_grid, clip=1000.0):
    return PropensityField(base=OraclePropensity(grid=p_grid), clip=clip)


class TestLossSpec:
    def test_values(self):
        sq = LossSpec("squared-error")
        assert sq(np.array([2.0]), np.array([5.0]))[0] == 9.0
        assert MAE(np.array([2.0]), np.array([5.0]))[0] == 3.0
        xent = LossSpec("cross-entropy")
        assert xent(np.array([0.5]), np.array([1.0]))[0] == pytest.approx(math.log(2))

    def test_nonnegative_and_zero_at_match(self, rng):
        x = rng.uniform(1, 5, 20)
        for kind in ("absolute-error", "squared-error"):
            loss = LossSpec(kind)
            assert np.all(loss(x, x) == 0.0)
            assert np.all(loss(x, x[::-1]) >= 0.0)


class TestIdealLoss:
    def test_zero_when_equal(self, rng):
        r = rng.uniform(1, 5, (4, 4))
        assert ideal_loss(r, r, MAE) == 0.0

    def test_hand_example(self):
        rhat = np.array([[1.0], [3.0]])
        rtrue = np.array([[2.0], [5.0]])
        assert ideal_loss(rhat, rtrue, MAE) == 1.5

    def test_matches_loop_oracle(self, rng):
        rhat = rng.uniform(1, 5, (10, 10))
        rtrue = rng.uniform(1, 5, (10, 10))
        oracle = sum(abs(rhat[u, i] - rtrue[u, i])
                     for u in range(10) for i in range(10)) / 100
        assert ideal_loss(rhat, rtrue, MAE) == pytest.approx(oracle, abs=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(DataError):
            ideal_loss(np.ones((2, 2)), np.ones((2, 3)), MAE)


class TestIdealLossN:
    def test_identical_potentials_reduce_to_plain(self, rng):
        rhat = rng.uniform(1, 5, (3, 3))
        rtrue = rng.uniform(1, 5, (3, 3))
        pots = {0.0: rtrue, 1.0: rtrue}
        assert ideal_loss_n(rhat, pots, uniform_binary(), MAE) == \
            pytest.approx(ideal_loss(rhat, rtrue, MAE), abs=1e-15)

    def test_point_mass_selects_one_matrix(self, rng):
        rhat = rng.uniform(1, 5, (3, 3))
        pots = {0.0: rng.uniform(1, 5, (3, 3)), 1.0: rng.uniform(1, 5, (3, 3))}
        got = ideal_loss_n(rhat, pots, point_mass(0.0), MAE)
        assert got == ideal_loss(rhat, pots[0.0], MAE)

    def test_hand_average(self):
        rhat = np.array([[2.0, 3.0], [4.0, 1.0]])
        p0 = np.array([[1.0, 3.0], [4.0, 2.0]])
        p1 = np.array([[3.0, 3.0], [2.0, 1.0]])
        # per-level MAE: (1+0+0+1)/4 = 0.5 and (1+0+2+0)/4 = 0.75
        got = ideal_loss_n(rhat, {0.0: p0, 1.0: p1}, uniform_binary(), MAE)
        assert got == pytest.approx(0.625, abs=1e-15)

    def test_missing_potential(self):
        with pytest.raises(DataError):
            ideal_loss_n(np.ones((2, 2)), {0.0: np.ones((2, 2))},
                         uniform_binary(), MAE)


class TestNaiveLoss:
    def test_full_mask_equals_ideal(self, rng):
        rhat, robs = rng.uniform(1, 5, (4, 5)), rng.uniform(1, 5, (4, 5))
        assert naive_loss(rhat, robs, np.ones((4, 5)), MAE) == \
            ideal_loss(rhat, robs, MAE)

    def test_single_pair(self):
        mask = np.zeros((2, 2))
        mask[1, 0] = 1.0
        rhat = np.full((2, 2), 2.0)
        robs = np.full((2, 2), 5.0)
        assert naive_loss(rhat, robs, mask, MAE) == 3.0

    def test_matches_filtered_loop(self, rng):
        rhat, robs = rng.uniform(1, 5, (6, 6)), rng.uniform(1, 5, (6, 6))
        mask = (rng.random((6, 6)) < 0.5).astype(float)
        if mask.sum() == 0:
            mask[0, 0] = 1.0
        vals = [abs(rhat[u, i] - robs[u, i]) for u in range(6) for i in range(6)
                if mask[u, i] > 0]
        assert naive_loss(rhat, robs, mask, MAE) == pytest.approx(
            sum(vals) / len(vals), abs=1e-12)

    def test_empty_mask(self):
        with pytest.raises(DataError):
            naive_loss(np.ones((2, 2)), np.ones((2, 2)), np.zeros((2, 2)), MAE)


class TestIpsLoss:
    def test_full_mask_unit_propensity(self, rng):
        rhat, robs = rng.uniform(1, 5, (4, 4)), rng.uniform(1, 5, (4, 4))
        field = _field(np.ones((4, 4)))
        assert ips_loss(rhat, robs, np.ones((4, 4)), field, MAE) == \
            pytest.approx(ideal_loss(rhat, robs, MAE), abs=1e-15)

    def test_single_pair_formula(self):
        mask = np.zeros((1, 1)) + 1.0
        rhat, robs = np.array([[1.0]]), np.array([[3.0]])
        field = _field(np.array([[0.5]]))
        assert ips_loss(rhat, robs, mask, field, MAE) == 4.0

    def test_monte_carlo_unbiased_with_oracle_propensity(self, rng):
        # mean over resampled exposures within 3 standard errors of the ideal
        shape = (20, 20)
        rhat = rng.uniform(1, 5, shape)
        rtrue = rng.uniform(1, 5, shape)
        p = np.clip(rng.random(shape), 0.2, 0.9)
        field = _field(p)
        ideal = ideal_loss(rhat, rtrue, MAE)
        draws = np.array([
            ips_loss(rhat, rtrue, (rng.random(shape) < p).astype(float),
                     field, MAE)
            for _ in range(400)])
        se = draws.std(ddof=1) / math.sqrt(len(draws))
        assert abs(draws.mean() - ideal) < 3 * se


class TestNIpsLoss:
    def test_single_pair_direct_formula(self):
        # one exposed pair at the reference level: K(0) * delta / (h * p)
        mask = np.ones((1, 1))
        rep = np.array([[0.7]])
        field = _field(np.array([[0.5]]))
        kernel = KernelSpec("gaussian", np.array([1.0]))
        errors = CallableErrorSource(lambda g: np.array([[2.0]]))
        report = n_ips_loss(np.ones((1, 1)), mask, rep, field, kernel,
                            point_mass(0.7), MAE, errors)
        assert report.integrated == pytest.approx(1.5957691216, abs=1e-9)

    def test_exact_match_reduces_to_ips(self, rng):
        shape = (7, 8)
        rhat, robs = rng.uniform(1, 5, shape), rng.uniform(1, 5, shape)
        mask = (rng.random(shape) < 0.5).astype(float)
        field = _field(np.clip(rng.random(shape), 0.3, 0.9))
        rep = np.full(shape, 2.0)
        report = n_ips_loss(rhat, mask, rep, field, exact_match(),
                            point_mass(2.0), MAE,
                            ObservedErrorSource(rhat, robs, MAE))
        assert abs(report.integrated -
                   ips_loss(rhat, robs, mask, field, MAE)) < 1e-12

    def test_report_integration_identity(self, rng):
        shape = (5, 6)
        rhat = rng.uniform(1, 5, shape)
        mask = (rng.random(shape) < 0.6).astype(float)
        rep = (rng.random(shape) < 0.5).astype(float)
        field = _field(np.clip(rng.random(shape), 0.2, 0.9))
        pots = {0.0: rng.uniform(1, 5, shape), 1.0: rng.uniform(1, 5, shape)}
        pi = discrete(np.array([0.0, 1.0]), np.array([0.25, 0.75]))
        report = n_ips_loss(rhat, mask, rep, field, exact_match(), pi, MAE,
                            PotentialErrorSource(rhat, pots, MAE))
        assert abs(float(np.dot(report.per_g, pi.weights)) -
                   report.integrated) < 1e-12

    def test_linearity_in_loss_scale(self, rng):
        shape = (5, 5)
        rhat = rng.uniform(1, 5, shape)
        mask = (rng.random(shape) < 0.5).astype(float)
        rep = rng.random(shape)
        field = _field(np.clip(rng.random(shape), 0.3, 0.9))
        kernel = KernelSpec("gaussian", np.array([0.5]))
        base = rng.uniform(0.5, 2.0, shape)
        lam = 3.5
        r1 = n_ips_loss(rhat, mask, rep, field, kernel, point_mass(0.4), MAE,
                        CallableErrorSource(lambda g: base))
        r2 = n_ips_loss(rhat, mask, rep, field, kernel, point_mass(0.4), MAE,
                        CallableErrorSource(lambda g: lam * base))
        assert r2.integrated == pytest.approx(lam * r1.integrated, rel=1e-12)


class TestNDrLoss:
    def _setup(self, rng, shape=(6, 7)):
        rhat = rng.uniform(1, 5, shape)
        mask = (rng.random(shape) < 0.5).astype(float)
        rep = (rng.random(shape) < 0.5).astype(float)
        field = _field(np.clip(rng.random(shape), 0.25, 0.9))
        pots = {0.0: rng.uniform(1, 5, shape), 1.0: rng.uniform(1, 5, shape)}
        errors = PotentialErrorSource(rhat, pots, MAE)
        return rhat, mask, rep, field, pots, errors

    def test_perfect_imputation_equals_ideal(self, rng):
        rhat, mask, rep, field, pots, errors = self._setup(rng)
        perfect = CallableErrorSource(lambda g: MAE(rhat, pots[float(g)]))
        report = n_dr_loss(rhat, mask, rep, field, exact_match(),
                           uniform_binary(), MAE, errors, perfect)
        assert report.integrated == pytest.approx(
            ideal_loss_n(rhat, pots, uniform_binary(), MAE), abs=1e-12)

    def test_zero_imputation_equals_n_ips(self, rng):
        rhat, mask, rep, field, pots, errors = self._setup(rng)
        zero = CallableErrorSource(lambda g: np.zeros(rhat.shape))
        dr = n_dr_loss(rhat, mask, rep, field, exact_match(), uniform_binary(),
                       MAE, errors, zero)
        ips_n = n_ips_loss(rhat, mask, rep, field, exact_match(),
                           uniform_binary(), MAE, errors)
        assert abs(dr.integrated - ips_n.integrated) < 1e-12

    def test_dr_identity_against_direct_computation(self, rng):
        # dr - ips = |D|^-1 sum hat * (1 - o K w) integrated over pi
        shape = (6, 7)
        rhat, mask, rep, field, pots, errors = self._setup(rng, shape)
        hat_grids = {0.0: rng.uniform(0.1, 2.0, shape),
                     1.0: rng.uniform(0.1, 2.0, shape)}
        imputed = CallableErrorSource(lambda g: hat_grids[float(g)])
        kernel = KernelSpec("epanechnikov", np.array([0.8]))
        pi = uniform_binary()
        dr = n_dr_loss(rhat, mask, rep, field, kernel, pi, MAE, errors, imputed)
        ips_n = n_ips_loss(rhat, mask, rep, field, kernel, pi, MAE, errors)
        direct = 0.0
        from nbrec.kernels import smoothing_weights
        for k, g in enumerate(pi.points):
            w = smoothing_weights(kernel, rep.reshape(-1), g).reshape(shape)
            inv = field.inverse_grid(g)
            hat = hat_grids[float(g)]
            direct += pi.weights[k] * np.sum(hat * (1.0 - mask * w * inv)) / rhat.size
        assert dr.integrated - ips_n.integrated == pytest.approx(direct, abs=1e-12)

    def test_report_csv_interface(self, rng, tmp_path):
        from nbrec.estimators import report_to_csv
        rhat, mask, rep, field, pots, errors = self._setup(rng)
        report = n_ips_loss(rhat, mask, rep, field, exact_match(),
                            uniform_binary(), MAE, errors)
        path = str(tmp_path / "report.csv")
        report_to_csv([report], path, header_comment="cfg 123")
        lines = open(path).read().splitlines()
        assert lines[0] == "# cfg 123"
        assert lines[1] == "estimator,g,loss,integrated"
        assert len(lines) == 4  # two reference points

    def test_smoothed_mode_runs_with_continuous_rep(self, rng):
        shape = (5, 5)
        rhat = rng.uniform(1, 5, shape)
        mask = (rng.random(shape) < 0.7).astype(float)
        rep = rng.random(shape)
        field = _field(np.clip(rng.random(shape), 0.3, 0.9))
        errors = ObservedErrorSource(rhat, rng.uniform(1, 5, shape), MAE)
        imputed = CallableErrorSource(lambda g: np.full(shape, 0.5))
        report = n_dr_loss(rhat, mask, rep, field,
                           KernelSpec("gaussian", np.array([0.3])),
                           discrete(np.array([0.3, 0.6])), MAE, errors, imputed)
        assert np.isfinite(report.integrated)
        assert len(report.per_g) == 2
