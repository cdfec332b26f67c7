"""Loss estimators: ideal losses, Naive/IPS baselines, and the
kernel-smoothed neighborhood-aware IPS/DR estimators.

All estimators are linear in the pointwise loss and accumulate per-pair
contributions in fixed row-major order with exact (fsum) summation, so
results are bit-stable regardless of execution parallelism.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError
from .kernels import KernelSpec, smoothing_weights
from .neighborhood import RepDistribution

LOSS_KINDS = ("absolute-error", "squared-error", "cross-entropy")

_EPS = 1e-7


@dataclass(frozen=True)
class LossSpec:
    """Pointwise loss delta(prediction, target)."""

    kind: str = "absolute-error"

    def __post_init__(self):
        if self.kind not in LOSS_KINDS:
            raise ConfigError(f"unknown loss kind {self.kind!r}")

    def __call__(self, pred, target):
        pred = np.asarray(pred, dtype=np.float64)
        target = np.asarray(target, dtype=np.float64)
        if self.kind == "absolute-error":
            return np.abs(pred - target)
        if self.kind == "squared-error":
            return (pred - target) ** 2
        p = np.clip(pred, _EPS, 1.0 - _EPS)
        return -(target * np.log(p) + (1.0 - target) * np.log(1.0 - p))

    def d_pred(self, pred, target):
        """Derivative of the loss in its first (prediction) argument."""
        pred = np.asarray(pred, dtype=np.float64)
        target = np.asarray(target, dtype=np.float64)
        if self.kind == "absolute-error":
            return np.sign(pred - target)
        if self.kind == "squared-error":
            return 2.0 * (pred - target)
        p = np.clip(pred, _EPS, 1.0 - _EPS)
        return (p - target) / (p * (1.0 - p))

    def d_target(self, pred, target):
        """Derivative in the second (target) argument, used when the target
        is itself a model output (imputation training)."""
        pred = np.asarray(pred, dtype=np.float64)
        target = np.asarray(target, dtype=np.float64)
        if self.kind == "absolute-error":
            return -np.sign(pred - target)
        if self.kind == "squared-error":
            return -2.0 * (pred - target)
        p = np.clip(pred, _EPS, 1.0 - _EPS)
        return np.log((1.0 - p) / p)


@dataclass(frozen=True)
class EstimateReport:
    """Per-treatment-level losses plus their reference-weighted integral."""

    estimator: str
    g_points: np.ndarray
    per_g: np.ndarray
    integrated: float
    config: dict = field(default_factory=dict)

    def rows(self):
        """CSV rows ``estimator,g,loss,integrated``."""
        out = []
        for g, v in zip(np.atleast_1d(self.g_points), self.per_g):
            g_str = ",".join(f"{x:.17g}" for x in np.atleast_1d(g))
            out.append((self.estimator, g_str, v, self.integrated))
        return out


# ---------------------------------------------------------------------------
# Error sources: where delta_{u,i}(g) values come from
# ---------------------------------------------------------------------------


class PotentialErrorSource:
    """Per-level errors from per-level potential matrices (synthetic use)."""

    def __init__(self, rhat, potentials, loss: LossSpec):
        self.rhat = np.asarray(rhat, dtype=np.float64)
        self.potentials = potentials
        self.loss = loss

    def _lookup(self, g):
        if callable(self.potentials):
            return np.asarray(self.potentials(g), dtype=np.float64)
        key = float(np.atleast_1d(g)[0]) if np.ndim(g) else float(g)
        try:
            return np.asarray(self.potentials[key], dtype=np.float64)
        except KeyError:
            raise DataError(f"no potential matrix for treatment level {g!r}") from None

    def errors_at(self, k, g):
        mat = self._lookup(g)
        if mat.shape != self.rhat.shape:
            raise DataError("potential matrix shape mismatch")
        return self.loss(self.rhat, mat)


class ObservedErrorSource:
    """Level-independent errors against observed feedback (real-data use).

    Only entries where the exposure indicator is 1 are ever consumed, which
    is exactly where observed feedback exists.
    """

    def __init__(self, rhat, robs, loss: LossSpec):
        self.rhat = np.asarray(rhat, dtype=np.float64)
        self.robs = np.asarray(robs, dtype=np.float64)
        self.loss = loss
        self._cache = self.loss(self.rhat, self.robs)

    def errors_at(self, k, g):
        return self._cache


class ImputedErrorSource:
    """Errors against an imputation model's per-level predictions."""

    def __init__(self, rhat, imputation, loss: LossSpec):
        self.rhat = np.asarray(rhat, dtype=np.float64)
        self.imputation = imputation
        self.loss = loss

    def errors_at(self, k, g):
        return self.loss(self.rhat, self.imputation.predict_grid(k, g))


class CallableErrorSource:
    """Errors given directly as a function of the treatment level."""

    def __init__(self, fn):
        self.fn = fn

    def errors_at(self, k, g):
        return np.asarray(self.fn(g), dtype=np.float64)


def _fsum(values):
    """Exact summation in fixed (row-major) order."""
    return math.fsum(np.asarray(values, dtype=np.float64).ravel().tolist())


def _as_array(x):
    return np.asarray(x.values if hasattr(x, "values") else
                      (x.bits if hasattr(x, "bits") else x), dtype=np.float64)


# ---------------------------------------------------------------------------
# Ideal losses
# ---------------------------------------------------------------------------


def ideal_loss(rhat, rtrue, loss: LossSpec) -> float:
    """Mean pointwise loss over every pair of the grid."""
    rhat, rtrue = _as_array(rhat), _as_array(rtrue)
    if rhat.shape != rtrue.shape:
        raise DataError(f"shape mismatch {rhat.shape} vs {rtrue.shape}")
    return _fsum(loss(rhat, rtrue)) / rhat.size


def ideal_loss_n(rhat, potentials, pi: RepDistribution, loss: LossSpec) -> float:
    """Reference-weighted mean of per-level ideal losses.

    ``potentials`` maps each support point of ``pi`` to the full grid of
    potential feedback at that treatment level (dict keyed by scalar level,
    or a callable).
    """
    rhat = _as_array(rhat)
    src = PotentialErrorSource(rhat, potentials, loss)
    per_g = np.array([
        _fsum(src.errors_at(k, g)) / rhat.size for k, g in enumerate(pi.points)
    ])
    return float(pi.integrate(per_g))


# ---------------------------------------------------------------------------
# Baseline estimators
# ---------------------------------------------------------------------------


def naive_loss(rhat, robs, mask, loss: LossSpec) -> float:
    """Mean loss over exposed pairs only."""
    rhat, robs, bits = _as_array(rhat), _as_array(robs), _as_array(mask)
    obs = bits > 0
    if not np.any(obs):
        raise DataError("no observed pairs")
    return _fsum(loss(rhat[obs], robs[obs])) / int(obs.sum())


def ips_loss(rhat, robs, mask, field, loss: LossSpec) -> float:
    """Selection-only inverse-propensity estimate of the ideal loss."""
    rhat, robs, bits = _as_array(rhat), _as_array(robs), _as_array(mask)
    obs = bits > 0
    inv = field.inverse_base_grid()
    contrib = loss(rhat[obs], robs[obs]) * inv[obs]
    return _fsum(contrib) / rhat.size


# ---------------------------------------------------------------------------
# Kernel-smoothed neighborhood estimators
# ---------------------------------------------------------------------------


def n_ips_loss(rhat, mask, rep, field, kernel: KernelSpec, pi: RepDistribution,
               loss: LossSpec, errors) -> EstimateReport:
    """Kernel-smoothed inverse-propensity estimate under interference.

    Per level g: |D|^-1 sum over exposed pairs of
    K((g_ui - g)/h)/h * delta_ui(g) * inverse_joint(u, i, g); the report
    integrates the per-level values over the reference distribution.
    """
    rhat, bits = _as_array(rhat), _as_array(mask)
    obs = bits > 0
    g_obs = _as_array(rep)[obs]
    n_pairs = rhat.size
    per_g = np.empty(len(pi))
    for k, g in enumerate(pi.points):
        w = smoothing_weights(kernel, g_obs, g)
        inv = field.inverse_grid(g)[obs]
        delta = errors.errors_at(k, g)[obs]
        per_g[k] = _fsum(w * inv * delta) / n_pairs
    integrated = float(pi.integrate(per_g))
    return EstimateReport(
        estimator="n-ips", g_points=np.asarray(pi.points), per_g=per_g,
        integrated=integrated,
        config={"kernel": kernel.family,
                "bandwidth": list(map(float, kernel.bandwidth)),
                "loss": loss.kind})


def n_dr_loss(rhat, mask, rep, field, kernel: KernelSpec, pi: RepDistribution,
              loss: LossSpec, errors, imputed_errors) -> EstimateReport:
    """Kernel-smoothed doubly robust estimate under interference.

    Per level g: |D|^-1 sum over all pairs of imputed error, plus the
    kernel- and propensity-weighted residual correction on exposed pairs.
    """
    rhat, bits = _as_array(rhat), _as_array(mask)
    obs = bits > 0
    g_obs = _as_array(rep)[obs]
    n_pairs = rhat.size
    per_g = np.empty(len(pi))
    for k, g in enumerate(pi.points):
        hat = imputed_errors.errors_at(k, g)
        if hat.shape != rhat.shape:
            raise DataError("imputed error grid shape mismatch")
        w = smoothing_weights(kernel, g_obs, g)
        inv = field.inverse_grid(g)[obs]
        delta = errors.errors_at(k, g)[obs]
        direct = _fsum(hat)
        correction = _fsum(w * inv * (delta - hat[obs]))
        per_g[k] = (direct + correction) / n_pairs
    integrated = float(pi.integrate(per_g))
    return EstimateReport(
        estimator="n-dr", g_points=np.asarray(pi.points), per_g=per_g,
        integrated=integrated,
        config={"kernel": kernel.family,
                "bandwidth": list(map(float, kernel.bandwidth)),
                "loss": loss.kind})


def report_to_csv(reports, path, header_comment=None):
    """Write EstimateReports as ``estimator,g,loss,integrated`` CSV."""
    with open(path, "w", encoding="utf-8") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        fh.write("estimator,g,loss,integrated\n")
        for rep in reports:
            for est, g, v, integ in rep.rows():
                fh.write(f"{est},{g},{v:.17g},{integ:.17g}\n")
