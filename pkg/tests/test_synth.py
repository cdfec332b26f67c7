import numpy as np
import pytest

from nbrec.errors import ConfigError, DataError
from nbrec.neighborhood import NeighborhoodSpec, compute_rep, median_threshold, \
    neighbor_counts
from nbrec.synth import (SemiSynthConfig, apply_mask, build_world,
                         complete_matrix, gen_propensities, load_world,
                         make_prediction_matrix, save_world,
                         synthetic_mnar_dataset, world_from_rating)


@pytest.fixture(scope="module")
def demo_ds():
    return synthetic_mnar_dataset(40, 50, 700, seed=9)


@pytest.fixture(scope="module")
def demo_world(demo_ds):
    cfg = SemiSynthConfig(seed=3, completion_epochs=25, completion_dim=8,
                          completion_batch=256)
    return build_world(demo_ds, cfg)


class TestCompleteMatrix:
    def test_recovers_planted_low_rank(self):
        rng = np.random.default_rng(4)
        ue = rng.normal(0, 1, (30, 2))
        ie = rng.normal(0, 1, (40, 2))
        truth = np.clip(np.round(3.0 + ue @ ie.T), 1.0, 5.0)
        mask = rng.random((30, 40)) < 0.5
        u, i = np.nonzero(mask)
        from nbrec.data import Dataset
        ds = Dataset(n_users=30, n_items=40, mnar=(u, i, truth[u, i]))
        cfg = SemiSynthConfig(seed=0, completion_dim=2, completion_epochs=120,
                              completion_lr=0.02, completion_batch=256)
        full = complete_matrix(ds, cfg)
        mae = np.abs(full[mask] - truth[mask]).mean()
        assert mae < 0.5

    def test_alphabet_and_determinism(self, demo_ds):
        cfg = SemiSynthConfig(seed=1, completion_epochs=10, completion_dim=4)
        a = complete_matrix(demo_ds, cfg)
        b = complete_matrix(demo_ds, cfg)
        assert set(np.unique(a)) <= {1.0, 2.0, 3.0, 4.0, 5.0}
        np.testing.assert_array_equal(a, b)


class TestGenPropensities:
    def test_rating_shape_factor(self):
        rating = np.array([[5.0, 1.0]])
        cfg = SemiSynthConfig(alpha=0.5, target_fraction=0.1)
        p = gen_propensities(rating, cfg)
        # alpha^0 vs alpha^3
        assert p[0, 0] / p[0, 1] == pytest.approx(8.0)

    def test_all_fives_gives_target_exactly(self):
        rating = np.full((10, 10), 5.0)
        cfg = SemiSynthConfig(target_fraction=0.05)
        p = gen_propensities(rating, cfg)
        np.testing.assert_allclose(p, 0.05)

    def test_expected_count_matches_target(self, rng):
        rating = rng.integers(1, 6, size=(30, 30)).astype(float)
        cfg = SemiSynthConfig(target_fraction=0.05)
        p = gen_propensities(rating, cfg)
        assert p.sum() == pytest.approx(0.05 * rating.size, abs=1e-9)

    def test_infeasible_target(self):
        rating = np.full((4, 4), 1.0)
        with pytest.raises(ConfigError):
            gen_propensities(rating, SemiSynthConfig(target_fraction=0.5))


class TestApplyMask:
    def test_no_mask_is_identity(self, rng):
        p = rng.random((8, 8)) * 0.1
        out, mask = apply_mask(p, 0, 0, seed=1)
        np.testing.assert_array_equal(out, p)
        np.testing.assert_array_equal(mask, np.ones((8, 8)))

    def test_full_user_mask_zeroes_everything(self, rng):
        p = rng.random((8, 8)) * 0.1
        out, mask = apply_mask(p, 8, 0, seed=1)
        np.testing.assert_array_equal(out, np.zeros((8, 8)))

    def test_expected_count_preserved(self, rng):
        p = rng.random((40, 40)) * 0.08
        out, mask = apply_mask(p, 10, 10, seed=7)
        if out.sum() > 0:
            assert out.sum() == pytest.approx(p.sum(), abs=1e-9)

    def test_user_item_product_structure(self, rng):
        p = np.full((20, 20), 0.05)
        out, mask = apply_mask(p, 5, 5, seed=3)
        row_any = mask.any(axis=1)
        col_any = mask.any(axis=0)
        np.testing.assert_array_equal(mask,
                                      np.outer(row_any, col_any).astype(float))


class TestBuildWorld:
    def test_observed_count_near_target(self, demo_world):
        n = demo_world.rating.size
        target = 0.05 * n
        got = demo_world.observed.sum()
        sd = np.sqrt((demo_world.propensity * (1 - demo_world.propensity)).sum())
        assert abs(got - target) < 4 * sd

    def test_noisy_inverse_is_convex_combination(self, demo_world):
        live = demo_world.propensity > 0
        inv_true = 1.0 / demo_world.propensity[live]
        inv_obs = 1.0 / demo_world.observed.mean()
        noisy = demo_world.inv_propensity_noisy[live]
        lo = np.minimum(inv_true, inv_obs) - 1e-9
        hi = np.maximum(inv_true, inv_obs) + 1e-9
        assert np.all(noisy >= lo)
        assert np.all(noisy <= hi)

    def test_rep_self_consistent(self, demo_world):
        spec = NeighborhoodSpec("row-column")
        counts = neighbor_counts(spec, demo_world.observed)
        c = median_threshold(counts, demo_world.observed)
        assert c == demo_world.threshold
        rep = compute_rep(spec, demo_world.observed, kind="binary-threshold",
                          threshold=c)
        np.testing.assert_array_equal(rep.values, demo_world.rep.values)

    def test_deterministic(self, demo_ds):
        cfg = SemiSynthConfig(seed=11, completion_epochs=8, completion_dim=4)
        a = build_world(demo_ds, cfg)
        b = build_world(demo_ds, cfg)
        np.testing.assert_array_equal(a.observed, b.observed)
        np.testing.assert_array_equal(a.potential_g1, b.potential_g1)

    def test_realized_ratings_pick_per_level_potentials(self, demo_world):
        realized = demo_world.realized_ratings()
        g = demo_world.rep.values
        assert np.all(realized[g > 0] == demo_world.potential_g1[g > 0])
        assert np.all(realized[g == 0] == demo_world.potential_g0[g == 0])

    def test_round_trip_serialization(self, demo_world, tmp_path):
        out = str(tmp_path / "world")
        save_world(demo_world, out)
        back = load_world(out)
        np.testing.assert_array_equal(back.rating, demo_world.rating)
        np.testing.assert_array_equal(back.rep.values, demo_world.rep.values)
        np.testing.assert_array_equal(back.inv_propensity_noisy,
                                      demo_world.inv_propensity_noisy)
        assert back.threshold == demo_world.threshold

    def test_resampling_from_rating_varies_mask_only(self, demo_world):
        cfg = demo_world.config
        from dataclasses import replace
        w2 = world_from_rating(demo_world.rating, replace(cfg, seed=cfg.seed + 1))
        np.testing.assert_array_equal(w2.rating, demo_world.rating)
        assert not np.array_equal(w2.observed, demo_world.observed)


@pytest.fixture(scope="module")
def rating():
    rng = np.random.default_rng(12)
    return rng.choice([1.0, 2.0, 3.0, 4.0, 5.0], size=(30, 30),
                      p=[0.3, 0.2, 0.2, 0.2, 0.1])


class TestPredictionMatrices:

    def test_rotate_rule(self):
        r = np.array([[1.0, 3.0, 5.0]])
        np.testing.assert_array_equal(make_prediction_matrix("ROTATE", r, 0),
                                      [[5.0, 2.0, 4.0]])

    def test_rotate_is_period_five(self, rating):
        out = rating
        for _ in range(5):
            out = make_prediction_matrix("ROTATE", out, 0)
        np.testing.assert_array_equal(out, rating)

    def test_crs_rule(self):
        r = np.array([[2.0, 3.0, 4.0, 5.0]])
        np.testing.assert_array_equal(make_prediction_matrix("CRS", r, 0),
                                      [[2.0, 2.0, 4.0, 4.0]])

    def test_one_flip_count(self, rating):
        pred = make_prediction_matrix("ONE", rating, seed=5)
        n5 = (rating == 5.0).sum()
        assert (pred == 5.0).sum() == 2 * n5
        # non-donor entries untouched
        untouched = rating != 1.0
        np.testing.assert_array_equal(pred[untouched], rating[untouched])

    def test_one_infeasible(self):
        rating = np.full((3, 3), 5.0)
        with pytest.raises(DataError):
            make_prediction_matrix("ONE", rating, seed=0)

    def test_skew_range_and_spread(self):
        rating = np.full((100, 100), 5.0)
        pred = make_prediction_matrix("SKEW", rating, seed=3)
        assert pred.min() >= 1.0
        assert pred.max() <= 5.0
        # sigma = (6-5)/2 = 0.5 before clipping; redraw unclipped to check
        rng = np.random.default_rng(3)
        draws = rng.normal(rating, (6.0 - rating) / 2.0)
        assert draws.std() == pytest.approx(0.5, rel=0.1)

    @pytest.mark.parametrize("kind", ["ONE", "THREE", "FOUR", "ROTATE",
                                      "SKEW", "CRS"])
    def test_values_stay_in_range(self, rating, kind):
        pred = make_prediction_matrix(kind, rating, seed=1)
        assert pred.min() >= 1.0
        assert pred.max() <= 5.0

    def test_unknown_kind(self, rating):
        with pytest.raises(ConfigError):
            make_prediction_matrix("SHUFFLE", rating, 0)


class TestSyntheticDataset:
    def test_shape_and_uniqueness(self, demo_ds):
        assert demo_ds.n_users == 40
        assert demo_ds.n_items == 50
        assert demo_ds.n_mnar == 700
        keys = set(zip(demo_ds.mnar[0], demo_ds.mnar[1]))
        assert len(keys) == 700

    def test_rating_skew(self, demo_ds):
        # self-selection should tilt observed ratings above the grid mean
        assert demo_ds.mnar[2].mean() > 2.9
