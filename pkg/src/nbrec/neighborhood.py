"""Neighbor sets, treatment representations and reference distributions.

A pair's treatment representation summarizes the exposure statuses of its
neighbors.  Representations are computed once from the full exposure grid,
never per minibatch.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError

MODES = ("row-column", "user-history", "item-history", "interaction")


@dataclass(frozen=True)
class NeighborhoodSpec:
    """Which pairs count as neighbors of (u, i).

    ``row-column`` (alias ``interaction``): same user or same item;
    ``user-history``: same user only; ``item-history``: same item only.
    """

    mode: str = "row-column"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"unknown neighborhood mode {self.mode!r}")


@dataclass(frozen=True)
class TreatmentRep:
    """Per-pair representation values g, plus a description of its support.

    ``values`` has shape (n_users, n_items) for scalar representations or
    (n_users, n_items, q) for q-dimensional ones.  ``kind`` is one of
    ``binary-threshold``, ``count`` or ``custom``.
    """

    values: np.ndarray
    kind: str = "count"
    support: str = ""

    def __post_init__(self):
        if self.values.ndim not in (2, 3):
            raise DataError("representation values must be 2-D or 3-D")
        if not np.all(np.isfinite(self.values)):
            raise DataError("non-finite representation value")
        if self.kind == "binary-threshold":
            vals = np.unique(self.values)
            if not np.all(np.isin(vals, (0.0, 1.0))):
                raise DataError("binary-threshold representation must be 0/1")

    @property
    def q(self):
        return 1 if self.values.ndim == 2 else self.values.shape[2]


@dataclass(frozen=True)
class RepDistribution:
    """Reference distribution over representation values.

    Either a discrete distribution (points with probabilities summing to 1)
    or a fixed quadrature rule whose weights already absorb the density, so
    that ``integrate(f) ~= int f(g) pi(g) dg``.
    """

    points: np.ndarray
    weights: np.ndarray
    kind: str = "discrete"

    def __post_init__(self):
        if len(self.points) != len(self.weights):
            raise ConfigError("points/weights length mismatch")
        if np.any(self.weights < 0):
            raise ConfigError("negative weight in reference distribution")
        total = float(np.sum(self.weights))
        tol = 1e-12 if self.kind == "discrete" else 1e-9
        if abs(total - 1.0) > tol:
            raise ConfigError(f"weights sum to {total}, expected 1 within {tol}")

    def __len__(self):
        return len(self.points)

    def integrate(self, values):
        """Weighted sum of per-point values (leading axis indexes points)."""
        values = np.asarray(values, dtype=np.float64)
        return float(np.dot(self.weights, values)) if values.ndim == 1 else \
            np.tensordot(self.weights, values, axes=(0, 0))


def discrete(points, weights=None) -> RepDistribution:
    points = np.asarray(points, dtype=np.float64)
    if weights is None:
        weights = np.full(len(points), 1.0 / len(points))
    return RepDistribution(points=points, weights=np.asarray(weights, dtype=np.float64))


def uniform_binary() -> RepDistribution:
    """Equal mass on representation levels 0 and 1."""
    return discrete(np.array([0.0, 1.0]), np.array([0.5, 0.5]))


def point_mass(g) -> RepDistribution:
    return discrete(np.array([float(g)]), np.array([1.0]))


def from_counts(count_values, max_points=None) -> RepDistribution:
    """Discrete uniform over the empirical support, quantized to integers.

    When the support is large, ``max_points`` thins it to evenly spaced
    quantiles (still a discrete uniform over the retained points).
    """
    vals = np.unique(np.round(np.asarray(count_values, dtype=np.float64)))
    if max_points is not None and len(vals) > max_points:
        idx = np.linspace(0, len(vals) - 1, max_points).round().astype(int)
        vals = np.unique(vals[idx])
    return discrete(vals)


def gauss_legendre(density, lo, hi, n=64) -> RepDistribution:
    """Quadrature rule for a continuous reference density on [lo, hi]."""
    nodes, w = np.polynomial.legendre.leggauss(n)
    points = 0.5 * (hi - lo) * nodes + 0.5 * (hi + lo)
    weights = 0.5 * (hi - lo) * w * np.array([density(g) for g in points])
    return RepDistribution(points=points, weights=weights, kind="quadrature")


def neighbors(spec: NeighborhoodSpec, u, i, mask) -> set:
    """Explicit neighbor set of (u, i); excludes the pair itself.

    The mask argument fixes the grid dimensions; membership does not depend
    on exposure values.
    """
    bits = mask.bits if hasattr(mask, "bits") else np.asarray(mask)
    n_users, n_items = bits.shape
    if not (0 <= u < n_users and 0 <= i < n_items):
        raise DataError(f"pair ({u}, {i}) out of range")
    row = {(u, j) for j in range(n_items) if j != i}
    col = {(v, i) for v in range(n_users) if v != u}
    if spec.mode == "user-history":
        return row
    if spec.mode == "item-history":
        return col
    return row | col


def neighbor_counts(spec: NeighborhoodSpec, mask) -> np.ndarray:
    """Per-pair count of exposed neighbors, for every pair of the grid."""
    bits = np.asarray(mask.bits if hasattr(mask, "bits") else mask, dtype=np.float64)
    row = bits.sum(axis=1, keepdims=True)  # includes the pair itself
    col = bits.sum(axis=0, keepdims=True)
    if spec.mode == "user-history":
        return row - bits
    if spec.mode == "item-history":
        return col - bits
    return row + col - 2.0 * bits


def compute_rep(spec: NeighborhoodSpec, mask, kind="count", threshold=None) -> TreatmentRep:
    """Treatment representation from an exposure grid.

    ``count``: number of exposed neighbors.  ``binary-threshold``: indicator
    of that count reaching ``threshold`` (the threshold must be supplied, or
    be derivable as the median of observed-pair counts).
    """
    counts = neighbor_counts(spec, mask)
    if kind == "count":
        return TreatmentRep(values=counts, kind="count",
                            support=f"integers [{counts.min():.0f}, {counts.max():.0f}]")
    if kind == "binary-threshold":
        if threshold is None:
            threshold = median_threshold(counts, mask)
        values = (counts >= threshold).astype(np.float64)
        return TreatmentRep(values=values, kind="binary-threshold",
                            support="{0, 1}")
    raise ConfigError(f"unknown representation kind {kind!r}")


def median_threshold(counts, mask) -> float:
    """Lower median of neighbor-exposure counts over observed pairs.

    The lower median (element at index (n-1)//2 of the sorted counts) makes
    the even-length tie deterministic.
    """
    bits = np.asarray(mask.bits if hasattr(mask, "bits") else mask)
    observed = np.asarray(counts)[bits > 0]
    if observed.size == 0:
        raise DataError("no observed pairs to take a median over")
    ordered = np.sort(observed)
    return float(ordered[(len(ordered) - 1) // 2])


def rep_to_tsv(rep: TreatmentRep, path):
    """Serialize per-pair representation values as user, item, g1[,g2,...]."""
    vals = rep.values if rep.values.ndim == 3 else rep.values[:, :, None]
    with open(path, "w", encoding="utf-8") as fh:
        for u in range(vals.shape[0]):
            for i in range(vals.shape[1]):
                gs = ",".join(f"{x:.17g}" for x in vals[u, i])
                fh.write(f"{u}\t{i}\t{gs}\n")
