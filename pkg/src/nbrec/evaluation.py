"""Metrics and the estimator-theory verification harness.

The harness drives the production estimators on data drawn from a fully
known generative model whose every moment is computable by quadrature, and
checks three laws: the quadratic-in-bandwidth bias of the smoothed
estimators, the 1/(n h) variance scaling, and the fifth-root optimal
bandwidth implied by their trade-off.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr, ndtri
from scipy.stats import rankdata

from .errors import ConfigError, DataError, NumericError
from .estimators import (CallableErrorSource, LossSpec, PotentialErrorSource,
                         n_dr_loss, n_ips_loss)
from .kernels import KernelSpec, second_moment, self_convolution
from .neighborhood import RepDistribution, point_mass
from .propensity import OraclePropensity, OracleRatio, PropensityField


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MetricReport:
    metric: str
    value: float
    k: int | None = None
    n_evaluated: int = 0


def relative_error(est, ideal) -> float:
    """|ideal - est| / ideal; the ideal value must be positive."""
    if ideal <= 0:
        raise DataError(f"ideal loss must be positive, got {ideal}")
    return abs(ideal - est) / ideal


def mse(scores, labels) -> float:
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    return float(np.mean((scores - labels) ** 2))


def auc(scores, labels) -> float:
    """Probability that a random positive outranks a random negative,
    ties counting one half (rank statistic form)."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    pos = labels > 0
    n_pos, n_neg = int(pos.sum()), int((~pos).sum())
    if n_pos == 0 or n_neg == 0:
        raise DataError("AUC needs both classes present")
    ranks = rankdata(scores, method="average")
    return float((ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def ndcg_at_k(user_scores, user_relevances, k) -> float:
    """Mean per-user DCG@k / IDCG@k with gain = relevance and logarithmic
    discount; users with zero ideal gain are skipped.

    Accepts parallel sequences of per-user score and relevance vectors.
    Ties in scores break by item position (stable sort), deterministically.
    """
    if k < 1:
        raise ConfigError("k must be >= 1")
    total, counted = 0.0, 0
    discounts = 1.0 / np.log2(np.arange(2, k + 2))
    for scores, rels in zip(user_scores, user_relevances):
        scores = np.asarray(scores, dtype=np.float64)
        rels = np.asarray(rels, dtype=np.float64)
        if len(scores) == 0:
            continue
        order = np.argsort(-scores, kind="stable")[:k]
        top = min(k, len(scores))
        dcg = float(np.dot(rels[order], discounts[:len(order)]))
        ideal = float(np.dot(np.sort(rels)[::-1][:top], discounts[:top]))
        if ideal > 0:
            total += dcg / ideal
            counted += 1
    if counted == 0:
        return 0.0
    return total / counted


# ---------------------------------------------------------------------------
# Exactly enumerable discrete confounder model (selection-link check)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DiscreteConfounderModel:
    """Finite model with confounder x, exposure o and representation g.

    ``p_g_given_xo[j, o, k]`` is P(g = g_k | x_j, o); the representation may
    depend on exposure, which is exactly the regime where ignoring the
    neighborhood channel biases the exposed-regime loss.
    ``delta[j, k]`` is the (deterministic) prediction error at (x_j, g_k).
    """

    p_x: np.ndarray
    p_o_given_x: np.ndarray
    p_g_given_xo: np.ndarray
    delta: np.ndarray
    g_values: np.ndarray

    def __post_init__(self):
        if abs(self.p_x.sum() - 1.0) > 1e-12:
            raise ConfigError("p_x must sum to 1")
        if np.any(np.abs(self.p_g_given_xo.sum(axis=2) - 1.0) > 1e-12):
            raise ConfigError("each P(g|x,o) must sum to 1")

    def p_g_given_x(self):
        """Pre-exposure representation distribution P(g|x)."""
        p_o = self.p_o_given_x
        return ((1.0 - p_o)[:, None] * self.p_g_given_xo[:, 0, :]
                + p_o[:, None] * self.p_g_given_xo[:, 1, :])


def natural_ideal_loss(model: DiscreteConfounderModel) -> float:
    """Ideal loss with g weighted by its pre-exposure distribution P(g|x)."""
    return float(np.sum(model.p_x[:, None] * model.p_g_given_x() * model.delta))


def exposed_regime_loss(model: DiscreteConfounderModel) -> float:
    """Loss identified from exposed data: g weighted by P(g|x, o=1)."""
    return float(np.sum(model.p_x[:, None] * model.p_g_given_xo[:, 1, :]
                        * model.delta))


def selection_gap(model: DiscreteConfounderModel) -> float:
    """The gap written as sum_g E_x[ delta(x,g) {P(g|x) - P(g|x,o=1)} ]."""
    diff = model.p_g_given_x() - model.p_g_given_xo[:, 1, :]
    return float(np.sum(model.p_x[:, None] * model.delta * diff))


# ---------------------------------------------------------------------------
# Reference generative model for the scaling-law checks
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GenerativeSpec:
    """Scalar-confounder model with every quantity computable by quadrature.

    x ~ U(0,1); exposure is logistic in x; the representation given
    exposure is a truncated Gaussian on [0, 1] with x-dependent mean, so its
    density has closed-form g-derivatives.  Prediction, potential feedback
    and imputation are smooth functions of (x, g); the pointwise loss is the
    squared error.

    The default constants put the reference treatment level about two
    density standard deviations off-center: there the curvature term is
    uniformly positive in x and the variance constant dominates the squared
    mean, which keeps both scaling-law fits clean at desk-scale replication
    counts.  The imputation deliberately overshoots (residual ~ -0.96 of the
    error) so the doubly robust estimator has bias and variance constants of
    the same order as the plain reweighted one.
    """

    exposure_intercept: float = -1.2
    exposure_slope: float = 0.9
    mean_intercept: float = 0.30
    mean_slope: float = 0.01
    sigma: float = 0.1
    quad_nodes: int = 64

    def exposure(self, x):
        z = self.exposure_intercept + self.exposure_slope * np.asarray(x)
        return 1.0 / (1.0 + np.exp(-z))

    def _trunc_consts(self, x):
        mu = self.mean_intercept + self.mean_slope * np.asarray(x)
        z0 = (0.0 - mu) / self.sigma
        z1 = (1.0 - mu) / self.sigma
        return mu, ndtr(z1) - ndtr(z0), ndtr(z0)

    def g_density(self, g, x):
        """f(g | o=1, x): truncated Gaussian density on [0, 1]."""
        mu, norm, _ = self._trunc_consts(x)
        z = (g - mu) / self.sigma
        phi = np.exp(-0.5 * z * z) / np.sqrt(2.0 * np.pi)
        inside = (g >= 0.0) & (g <= 1.0)
        return np.where(inside, phi / (self.sigma * norm), 0.0)

    def g_density_dd(self, g, x):
        """Second g-derivative of the truncated Gaussian density."""
        mu, _, _ = self._trunc_consts(x)
        z = (g - mu) / self.sigma
        return self.g_density(g, x) * (z * z - 1.0) / self.sigma ** 2

    def sample_g(self, rng, x):
        mu, norm, lo_cdf = self._trunc_consts(x)
        u = rng.random(np.shape(x))
        return mu + self.sigma * ndtri(lo_cdf + u * norm)

    def joint_density(self, g, x):
        return self.exposure(x) * self.g_density(g, x)

    def joint_density_dd(self, g, x):
        return self.exposure(x) * self.g_density_dd(g, x)

    def rhat(self, x):
        return 2.0 + np.asarray(x)

    def potential(self, x, g):
        x = np.asarray(x)
        return 2.0 + 0.5 * x + 1.2 * g + 0.8 * g * x

    def imputed(self, x, g):
        return 1.4 * self.potential(x, g) - 0.4 * self.rhat(x)

    def delta(self, x, g):
        return (self.rhat(x) - self.potential(x, g)) ** 2

    def delta_hat(self, x, g):
        return (self.rhat(x) - self.imputed(x, g)) ** 2

    def x_quadrature(self):
        nodes, w = np.polynomial.legendre.leggauss(self.quad_nodes)
        return 0.5 * (nodes + 1.0), 0.5 * w


def default_reference_spec() -> GenerativeSpec:
    return GenerativeSpec()


def default_reference_pi() -> RepDistribution:
    return point_mass(0.5)


def ideal_loss_quadrature(spec: GenerativeSpec, pi: RepDistribution) -> float:
    xs, wx = spec.x_quadrature()
    per_g = np.array([float(np.dot(wx, spec.delta(xs, g))) for g in pi.points])
    return float(pi.integrate(per_g))


def bias_coefficient(spec: GenerativeSpec, kind, kernel_family, pi) -> float:
    """Leading bias constant C such that bias(h) ~= C h^2.

    C = (mu_2 / 2) * sum_k pi_k E_x[ p''(g_k|x)/p(g_k|x) * residual ], where
    p(g|x) is the joint exposure/treatment density, '' its second
    g-derivative, and residual = delta for the IPS-type estimator and
    delta - delta_hat for the DR-type estimator.  The density ratio reduces
    to f''/f of the conditional treatment density (the exposure probability
    cancels); both the exact Taylor expansion and direct simulation confirm
    this normalized form.
    """
    xs, wx = spec.x_quadrature()
    mu2 = second_moment(kernel_family)
    total = 0.0
    for k, g in enumerate(pi.points):
        resid = spec.delta(xs, g)
        if kind == "n-dr":
            resid = resid - spec.delta_hat(xs, g)
        curvature = spec.joint_density_dd(g, xs) / spec.joint_density(g, xs)
        total += pi.weights[k] * float(np.dot(wx, curvature * resid))
    return 0.5 * mu2 * total


def variance_coefficient(spec: GenerativeSpec, kind, kernel_family, pi,
                         h) -> float:
    """Leading variance constant V(h) such that var ~= V(h) / (n h).

    Evaluates the full double integral including the kernel self-convolution
    at the given bandwidth (its argument scales with 1/h, so for separated
    reference points only near-diagonal terms survive as h -> 0).
    """
    xs, wx = spec.x_quadrature()
    total = 0.0
    for k, g in enumerate(pi.points):
        for l, g2 in enumerate(pi.points):
            r1 = spec.delta(xs, g)
            r2 = spec.delta(xs, g2)
            if kind == "n-dr":
                r1 = r1 - spec.delta_hat(xs, g)
                r2 = r2 - spec.delta_hat(xs, g2)
            inner = float(np.dot(wx, r1 * r2 / spec.joint_density(g2, xs)))
            kbar = float(self_convolution(kernel_family, (g - g2) / h))
            total += pi.weights[k] * pi.weights[l] * kbar * inner
    return total


# ---------------------------------------------------------------------------
# Monte-Carlo harness
# ---------------------------------------------------------------------------


@dataclass
class SweepReport:
    """Per-bandwidth empirical bias/variance/MSE over replications, with
    the quadrature theory values and fitted log-log slopes."""

    h_grid: np.ndarray
    bias: np.ndarray
    variance: np.ndarray
    mse: np.ndarray
    theory_bias: np.ndarray
    theory_variance: np.ndarray
    t_stats: np.ndarray
    bias_slope: float
    variance_slope: float
    estimator: str
    n_units: int
    replications: int

    def to_csv(self, path, header_comment=None):
        with open(path, "w", encoding="utf-8") as fh:
            if header_comment:
                fh.write(f"# {header_comment}\n")
            fh.write("h,bias,variance,mse,theory_bias,theory_variance,t_stat\n")
            for row in zip(self.h_grid, self.bias, self.variance, self.mse,
                           self.theory_bias, self.theory_variance, self.t_stats):
                fh.write(",".join(f"{x:.17g}" for x in row) + "\n")


def _simulate(spec: GenerativeSpec, n, seed):
    """One draw of (x, o, g) with g set at an arbitrary in-range value on
    unexposed units (it is never consumed there)."""
    rng = np.random.default_rng(seed)
    x = rng.random(n)
    o = (rng.random(n) < spec.exposure(x)).astype(np.float64)
    g = np.full(n, 0.5)
    exp_idx = o > 0
    g[exp_idx] = spec.sample_g(rng, x[exp_idx])
    return x, o, g


def _field_for(spec: GenerativeSpec, x) -> PropensityField:
    base = OraclePropensity(grid=spec.exposure(x)[None, :])
    ratio = OracleRatio(density=lambda g: spec.g_density(float(np.atleast_1d(g)[0]),
                                                         x)[None, :])
    # Continuous treatment densities exceed 1, so the inverse may drop
    # below 1; relax the floor accordingly.
    return PropensityField(base=base, ratio=ratio, clip=1e9, scale=1.0,
                           lower=0.0)


def estimate_replication(spec: GenerativeSpec, kind, h, pi: RepDistribution,
                         n, seed, oracle_imputation=False) -> float:
    """Run the production estimator once on freshly simulated units."""
    x, o, g = _simulate(spec, n, seed)
    rhat = spec.rhat(x)[None, :]
    mask = o[None, :]
    rep = g[None, :]
    field = _field_for(spec, x)
    kernel = KernelSpec(family="epanechnikov", bandwidth=np.array([h]))
    loss = LossSpec("squared-error")
    errors = PotentialErrorSource(
        rhat, lambda gp: spec.potential(x, float(np.atleast_1d(gp)[0]))[None, :],
        loss)
    if kind == "n-ips":
        report = n_ips_loss(rhat, mask, rep, field, kernel, pi, loss, errors)
        return report.integrated
    imputer = spec.potential if oracle_imputation else spec.imputed
    imputed = CallableErrorSource(
        lambda gp: ((spec.rhat(x)
                     - imputer(x, float(np.atleast_1d(gp)[0]))) ** 2)[None, :])
    report = n_dr_loss(rhat, mask, rep, field, kernel, pi, loss, errors, imputed)
    return report.integrated


def verify_bias_variance(spec: GenerativeSpec, kind, h_grid, replications,
                         n, seed, pi: RepDistribution | None = None,
                         oracle_imputation=False) -> SweepReport:
    """Monte-Carlo sweep of the estimator over a bandwidth grid.

    Per bandwidth: empirical bias against the quadrature ideal, empirical
    variance and MSE across replications, the theory values, and the
    one-sample t statistic of the bias.  Slopes are fitted on log|bias| vs
    log h (expected 2) and log variance vs log 1/(n h) (expected 1).
    """
    h_grid = np.asarray(h_grid, dtype=np.float64)
    if len(h_grid) < 2 or np.any(h_grid <= 0):
        raise ConfigError("need at least two positive bandwidths")
    if pi is None:
        pi = default_reference_pi()
    ideal = ideal_loss_quadrature(spec, pi)
    estimates = np.empty((len(h_grid), replications))
    for rep_i in range(replications):
        rep_seed = seed ^ rep_i
        x, o, g = _simulate(spec, n, rep_seed)
        field = _field_for(spec, x)
        rhat = spec.rhat(x)[None, :]
        loss = LossSpec("squared-error")
        errors = PotentialErrorSource(
            rhat, lambda gp: spec.potential(x, float(np.atleast_1d(gp)[0]))[None, :],
            loss)
        imputer = spec.potential if oracle_imputation else spec.imputed
        imputed = CallableErrorSource(
            lambda gp: ((spec.rhat(x)
                         - imputer(x, float(np.atleast_1d(gp)[0]))) ** 2)[None, :])
        for hi, h in enumerate(h_grid):
            kernel = KernelSpec(family="epanechnikov", bandwidth=np.array([h]))
            if kind == "n-ips":
                rep_val = n_ips_loss(rhat, o[None, :], g[None, :], field, kernel,
                                     pi, loss, errors).integrated
            else:
                rep_val = n_dr_loss(rhat, o[None, :], g[None, :], field, kernel,
                                    pi, loss, errors, imputed).integrated
            estimates[hi, rep_i] = rep_val
    mean = estimates.mean(axis=1)
    bias = mean - ideal
    variance = estimates.var(axis=1, ddof=0)
    mse_emp = np.mean((estimates - ideal) ** 2, axis=1)
    se = np.sqrt(variance / replications)
    t_stats = np.where(se > 0, bias / se, 0.0)

    if oracle_imputation and kind == "n-dr":
        theory_c = 0.0
    else:
        theory_c = bias_coefficient(spec, kind, "epanechnikov", pi)
    theory_bias = theory_c * h_grid ** 2
    theory_variance = np.array([
        variance_coefficient(spec, kind, "epanechnikov", pi, h) / (n * h)
        for h in h_grid])

    with np.errstate(divide="ignore"):
        log_bias = np.log(np.abs(bias))
    bias_slope = float(np.polyfit(np.log(h_grid), log_bias, 1)[0])
    variance_slope = float(np.polyfit(np.log(1.0 / (n * h_grid)),
                                      np.log(variance), 1)[0])
    return SweepReport(h_grid=h_grid, bias=bias, variance=variance, mse=mse_emp,
                       theory_bias=theory_bias, theory_variance=theory_variance,
                       t_stats=t_stats, bias_slope=bias_slope,
                       variance_slope=variance_slope, estimator=kind,
                       n_units=n, replications=replications)


def optimal_bandwidth(spec: GenerativeSpec, kind, n,
                      pi: RepDistribution | None = None,
                      kernel_family="epanechnikov") -> float:
    """Fifth-root bandwidth minimizing the asymptotic mean-squared error:

        h* = [ V / (4 n C^2) ]^(1/5)

    with V the small-bandwidth variance constant and C the quadratic bias
    constant.  A vanishing bias constant (e.g. exact imputation) leaves the
    trade-off degenerate and raises an error.
    """
    if pi is None:
        pi = default_reference_pi()
    c_bias = bias_coefficient(spec, kind, kernel_family, pi)
    if abs(c_bias) < 1e-12:
        raise NumericError("bias constant is zero: optimal bandwidth unbounded")
    # Small-h limit of the variance constant: kernel self-convolution at lag 0
    # on the diagonal, zero off the diagonal for separated reference points.
    xs, wx = spec.x_quadrature()
    kbar0 = float(self_convolution(kernel_family, 0.0))
    v = 0.0
    for k, g in enumerate(pi.points):
        resid = spec.delta(xs, g)
        if kind == "n-dr":
            resid = resid - spec.delta_hat(xs, g)
        v += pi.weights[k] ** 2 * kbar0 * float(
            np.dot(wx, resid ** 2 / spec.joint_density(g, xs)))
    return float((v / (4.0 * n * c_bias ** 2)) ** 0.2)
