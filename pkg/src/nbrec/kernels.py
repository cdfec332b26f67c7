"""Smoothing kernels and bandwidths for the neighborhood estimators.

Multi-dimensional representations use a product kernel with a per-dimension
bandwidth; the full smoothing factor is prod_s K((g_s - g'_s)/h_s) / prod_s h_s.
An ``exact`` pseudo-kernel (indicator of equality, no bandwidth division)
recovers the exact-match estimator for discrete representations.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError

FAMILIES = ("gaussian", "epanechnikov", "exact")

_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


@dataclass(frozen=True)
class KernelSpec:
    """Kernel family plus positive per-dimension bandwidths.

    Scalar representations use ``bandwidth`` of length 1.  The ``exact``
    family ignores the bandwidth entirely.
    """

    family: str = "gaussian"
    bandwidth: np.ndarray = field(default_factory=lambda: np.array([1.0]))

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigError(f"unknown kernel family {self.family!r}")
        h = np.atleast_1d(np.asarray(self.bandwidth, dtype=np.float64))
        object.__setattr__(self, "bandwidth", h)
        if self.family != "exact" and np.any(h <= 0):
            raise ConfigError("bandwidth entries must be positive")

    @property
    def q(self):
        return len(self.bandwidth)


def exact_match() -> KernelSpec:
    return KernelSpec(family="exact", bandwidth=np.array([1.0]))


def kernel_eval(family, t):
    """Univariate kernel value K(t); symmetric, integrates to 1."""
    t = np.asarray(t, dtype=np.float64)
    if family == "gaussian":
        return _INV_SQRT_2PI * np.exp(-0.5 * t * t)
    if family == "epanechnikov":
        return np.where(np.abs(t) <= 1.0, 0.75 * (1.0 - t * t), 0.0)
    raise ConfigError(f"kernel_eval undefined for family {family!r}")


def kernel_weight(spec: KernelSpec, g_pair, g):
    """Full smoothing factor prod_s K((g_pair_s - g_s)/h_s) / prod_s h_s.

    For the ``exact`` family this is the equality indicator with no
    bandwidth division.
    """
    g_pair = np.atleast_1d(np.asarray(g_pair, dtype=np.float64))
    g = np.atleast_1d(np.asarray(g, dtype=np.float64))
    if spec.family == "exact":
        return float(np.all(g_pair == g))
    if len(g_pair) != spec.q or len(g) != spec.q:
        raise ConfigError(
            f"dimension mismatch: q={spec.q}, got {len(g_pair)} and {len(g)}")
    t = (g_pair - g) / spec.bandwidth
    return float(np.prod(kernel_eval(spec.family, t)) / np.prod(spec.bandwidth))


def smoothing_weights(spec: KernelSpec, g_values, g_point):
    """Vectorized kernel_weight over per-pair values.

    ``g_values`` has shape (n,) for scalar g or (n, q); returns shape (n,).
    """
    g_values = np.asarray(g_values, dtype=np.float64)
    g_point = np.atleast_1d(np.asarray(g_point, dtype=np.float64))
    if g_values.ndim == 1:
        g_values = g_values[:, None]
    if spec.family == "exact":
        return np.all(g_values == g_point[None, :], axis=1).astype(np.float64)
    if g_values.shape[1] != spec.q:
        raise ConfigError(
            f"dimension mismatch: q={spec.q}, got {g_values.shape[1]}")
    t = (g_values - g_point[None, :]) / spec.bandwidth[None, :]
    return np.prod(kernel_eval(spec.family, t), axis=1) / np.prod(spec.bandwidth)


def second_moment(family):
    """mu_2 = int t^2 K(t) dt, the curvature constant of the bias law."""
    if family == "gaussian":
        return 1.0
    if family == "epanechnikov":
        return 0.2
    raise ConfigError(f"second moment undefined for family {family!r}")


def self_convolution(family, u):
    """bar K(u) = int K(t) K(u + t) dt.

    Gaussian: closed form (density of N(0, 2)).  Epanechnikov: the overlap
    integrand is a quartic polynomial, so fixed Gauss-Legendre quadrature on
    the overlap interval is exact.
    """
    u = np.asarray(u, dtype=np.float64)
    if family == "gaussian":
        return np.exp(-0.25 * u * u) / (2.0 * np.sqrt(np.pi))
    if family == "epanechnikov":
        nodes, w = np.polynomial.legendre.leggauss(8)

        def one(uu):
            lo = max(-1.0, -1.0 - uu)
            hi = min(1.0, 1.0 - uu)
            if hi <= lo:
                return 0.0
            t = 0.5 * (hi - lo) * nodes + 0.5 * (hi + lo)
            vals = kernel_eval("epanechnikov", t) * kernel_eval("epanechnikov", uu + t)
            return 0.5 * (hi - lo) * float(np.dot(w, vals))

        return np.vectorize(one)(u) if u.ndim else one(float(u))
    raise ConfigError(f"self-convolution undefined for family {family!r}")
