"""Semi-synthetic experiment pipeline.

Starting from a self-selected interaction dataset: complete the full rating
matrix by factorization, derive rating-dependent exposure propensities,
optionally block off user rows / item columns, sample the exposure grid,
compute the binary neighborhood representation, fit per-level potential
matrices, and perturb the inverse propensities with mixture noise.  All
steps are seed-deterministic.
"""

from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset
from .errors import ConfigError, DataError
from .learning import TrainConfig, TrainData, _run_weighted
from .neighborhood import NeighborhoodSpec, TreatmentRep, compute_rep, \
    median_threshold, neighbor_counts

PREDICTION_KINDS = ("ONE", "THREE", "FOUR", "ROTATE", "SKEW", "CRS")

ALPHABET = np.array([1.0, 2.0, 3.0, 4.0, 5.0])


@dataclass
class SemiSynthConfig:
    alpha: float = 0.5
    target_fraction: float = 0.05
    mask_users: int = 0
    mask_items: int = 0
    seed: int = 0
    completion_dim: int = 16
    completion_lr: float = 0.01
    completion_weight_decay: float = 1e-5
    completion_epochs: int = 50
    completion_batch: int = 1024

    def __post_init__(self):
        if not 0 < self.alpha < 1:
            raise ConfigError("alpha must lie in (0, 1)")
        if not 0 < self.target_fraction < 1:
            raise ConfigError("target fraction must lie in (0, 1)")


@dataclass
class SemiSynthWorld:
    rating: np.ndarray             # completed ground-truth ratings
    propensity: np.ndarray         # exposure probabilities (0 on masked pairs)
    mask: np.ndarray               # row/column keep mask m_u * m_i
    observed: np.ndarray           # sampled exposure grid
    rep: TreatmentRep              # binary neighborhood representation
    threshold: float               # count threshold used for the representation
    potential_g0: np.ndarray
    potential_g1: np.ndarray
    inv_propensity_noisy: np.ndarray  # mixture-noise inverse propensities
    config: SemiSynthConfig = field(repr=False, default=None)

    @property
    def shape(self):
        return self.rating.shape

    def potentials(self):
        return {0.0: self.potential_g0, 1.0: self.potential_g1}

    def realized_ratings(self):
        """Feedback actually generated: the potential at the realized level."""
        g = self.rep.values
        return np.where(g > 0, self.potential_g1, self.potential_g0)


def _completion_cfg(cfg: SemiSynthConfig, seed) -> TrainConfig:
    return TrainConfig(lr=cfg.completion_lr, weight_decay=cfg.completion_weight_decay,
                       batch_size=cfg.completion_batch, epochs=cfg.completion_epochs,
                       latent_dim=cfg.completion_dim, seed=seed,
                       loss="squared-error")


def complete_matrix(ds: Dataset, cfg: SemiSynthConfig, seed=None) -> np.ndarray:
    """Factorization completion of the full grid, rounded into {1..5}."""
    if ds.n_mnar == 0:
        raise DataError("cannot complete an empty dataset")
    data = TrainData.from_dataset(ds)
    result = _run_weighted(data, np.ones(data.n_obs),
                           _completion_cfg(cfg, cfg.seed if seed is None else seed))
    full = result.model.predict_full()
    return np.clip(np.round(full), 1.0, 5.0)


def _complete_subset(shape, users, items, values, cfg, seed):
    if len(users) == 0:
        raise DataError("a representation-level subset is empty; "
                        "use a larger sample or weaker masking")
    data = TrainData(shape[0], shape[1], users, items, values)
    result = _run_weighted(data, np.ones(data.n_obs), _completion_cfg(cfg, seed))
    return np.clip(np.round(result.model.predict_full()), 1.0, 5.0)


def gen_propensities(rating, cfg: SemiSynthConfig) -> np.ndarray:
    """Rating-dependent exposure probabilities p * alpha^max(0, 4 - r).

    The base rate p is solved so the expected number of exposures equals the
    target fraction of the grid.
    """
    rating = np.asarray(rating, dtype=np.float64)
    if not np.all(np.isin(rating, ALPHABET)):
        raise DataError("ratings outside the {1..5} alphabet")
    shape_factor = cfg.alpha ** np.maximum(0.0, 4.0 - rating)
    total = shape_factor.sum()
    p = cfg.target_fraction * rating.size / total
    if p > 1.0:
        raise ConfigError(f"target fraction infeasible: base rate {p:.3f} > 1")
    return p * shape_factor


def apply_mask(propensity, mask_users, mask_items, seed,
               target_count=None):
    """Block off Bernoulli-sampled user rows and item columns.

    Keep probabilities are (|U| - n_u)/|U| per user and (|I| - n_i)/|I| per
    item; a pair survives when both its row and column survive.  Unmasked
    propensities are rescaled to preserve the expected exposure count.
    """
    propensity = np.asarray(propensity, dtype=np.float64)
    n_users, n_items = propensity.shape
    if not (0 <= mask_users <= n_users and 0 <= mask_items <= n_items):
        raise ConfigError("mask counts out of range")
    rng = np.random.default_rng(seed)
    p_u = (n_users - mask_users) / n_users
    p_i = (n_items - mask_items) / n_items
    m_u = (rng.random(n_users) < p_u).astype(np.float64)
    m_i = (rng.random(n_items) < p_i).astype(np.float64)
    mask = m_u[:, None] * m_i[None, :]
    masked = propensity * mask
    if target_count is None:
        target_count = propensity.sum()
    remaining = masked.sum()
    if remaining <= 0:
        return masked, mask
    scale = target_count / remaining
    rescaled = masked * scale
    if rescaled.max() > 1.0:
        raise ConfigError("mask rescaling pushed a propensity above 1")
    return rescaled, mask


def build_world(ds: Dataset, cfg: SemiSynthConfig) -> SemiSynthWorld:
    """Run the full pipeline; see the module docstring for the steps."""
    rating = complete_matrix(ds, cfg, seed=cfg.seed)
    return world_from_rating(rating, cfg)


def world_from_rating(rating, cfg: SemiSynthConfig) -> SemiSynthWorld:
    """Everything downstream of the completion, resampled under cfg.seed.

    Splitting here lets repeated-seed experiments share one completed
    matrix while redrawing masks, exposures, potentials and noise.
    """
    propensity = gen_propensities(rating, cfg)
    propensity, mask = apply_mask(propensity, cfg.mask_users, cfg.mask_items,
                                  cfg.seed + 1)
    rng = np.random.default_rng(cfg.seed + 2)
    observed = (rng.random(rating.shape) < propensity).astype(np.float64)

    spec = NeighborhoodSpec("row-column")
    counts = neighbor_counts(spec, observed)
    threshold = median_threshold(counts, observed)
    rep = compute_rep(spec, observed, kind="binary-threshold", threshold=threshold)

    g_obs = rep.values[observed > 0]
    obs_u, obs_i = np.nonzero(observed > 0)
    r_obs = rating[obs_u, obs_i]
    low = g_obs < 1
    potential_g0 = _complete_subset(rating.shape, obs_u[low], obs_i[low],
                                    r_obs[low], cfg, cfg.seed + 3)
    potential_g1 = _complete_subset(rating.shape, obs_u[~low], obs_i[~low],
                                    r_obs[~low], cfg, cfg.seed + 4)

    p_o = observed.mean()
    beta = rng.random(rating.shape)
    safe_p = np.where(propensity > 0, propensity, 1.0)
    inv_noisy = np.where(propensity > 0,
                         beta / safe_p + (1.0 - beta) / p_o, 0.0)

    return SemiSynthWorld(
        rating=rating, propensity=propensity, mask=mask, observed=observed,
        rep=rep, threshold=threshold, potential_g0=potential_g0,
        potential_g1=potential_g1, inv_propensity_noisy=inv_noisy, config=cfg)


def make_prediction_matrix(kind, rating, seed) -> np.ndarray:
    """The six evaluation prediction matrices.

    ONE/THREE/FOUR copy the true matrix and flip |{r=5}| randomly chosen
    ratings of value 1/3/4 up to 5; ROTATE shifts every rating down by one
    with wraparound at 1 -> 5; SKEW samples around the true rating with a
    rating-dependent spread, clipped to [1, 5]; CRS collapses the scale to
    {2, 4} at the r <= 3 boundary.
    """
    rating = np.asarray(rating, dtype=np.float64)
    rng = np.random.default_rng(seed)
    if kind in ("ONE", "THREE", "FOUR"):
        donor_value = {"ONE": 1.0, "THREE": 3.0, "FOUR": 4.0}[kind]
        pred = rating.copy()
        donors = np.flatnonzero(rating == donor_value)
        n_flip = int((rating == 5.0).sum())
        if len(donors) < n_flip:
            raise DataError(
                f"{kind}: only {len(donors)} ratings of {donor_value:.0f} "
                f"available, need {n_flip}")
        chosen = rng.choice(donors, size=n_flip, replace=False)
        pred.reshape(-1)[chosen] = 5.0
        return pred
    if kind == "ROTATE":
        return np.where(rating >= 2.0, rating - 1.0, 5.0)
    if kind == "SKEW":
        sigma = (6.0 - rating) / 2.0
        return np.clip(rng.normal(rating, sigma), 1.0, 5.0)
    if kind == "CRS":
        return np.where(rating <= 3.0, 2.0, 4.0)
    raise ConfigError(f"unknown prediction matrix kind {kind!r}")


def synthetic_mnar_dataset(n_users, n_items, n_records, seed) -> Dataset:
    """Small planted-factor dataset with popularity-skewed exposure.

    Stands in for a real ratings file in desk-scale runs and CI; the rating
    surface is low-rank plus noise, discretized to {1..5}, and pairs are
    sampled with user/item popularity weights so the observed slice is
    self-selected.
    """
    if n_records > n_users * n_items:
        raise ConfigError("more records than pairs")
    rng = np.random.default_rng(seed)
    ue = rng.normal(0.0, 1.0, size=(n_users, 3))
    ie = rng.normal(0.0, 1.0, size=(n_items, 3))
    raw = ue @ ie.T
    raw = (raw - raw.mean()) / raw.std()
    # strong user/item main effects dominate, as in real ratings data
    bias_u = rng.normal(0.0, 0.8, size=n_users)
    bias_i = rng.normal(0.0, 0.8, size=n_items)
    rating = np.clip(np.round(2.7 + bias_u[:, None] + bias_i[None, :]
                              + 0.8 * raw + rng.normal(0.0, 0.35, raw.shape)),
                     1.0, 5.0)
    pop_u = rng.gamma(2.0, 1.0, size=n_users)
    pop_i = rng.gamma(2.0, 1.0, size=n_items)
    # Ratings-tilted sampling: higher ratings are more likely to be reported.
    weight = pop_u[:, None] * pop_i[None, :] * (1.3 ** rating)
    flat = weight.reshape(-1) / weight.sum()
    chosen = rng.choice(n_users * n_items, size=n_records, replace=False, p=flat)
    u = chosen // n_items
    i = chosen % n_items
    return Dataset(n_users=n_users, n_items=n_items,
                   mnar=(u.astype(np.int64), i.astype(np.int64), rating[u, i]),
                   meta=f"demo:{n_users}x{n_items}:{seed}")


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

WORLD_FILES = ("rating.tsv", "propensity.tsv", "mask.tsv", "observed.tsv",
               "rep.tsv", "potential_g0.tsv", "potential_g1.tsv",
               "inv_propensity_noisy.tsv", "config.txt")


def _write_grid(path, grid):
    with open(path, "w", encoding="utf-8") as fh:
        for row in np.asarray(grid, dtype=np.float64):
            fh.write("\t".join(f"{x:.17g}" for x in row))
            fh.write("\n")


def _read_grid(path):
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                rows.append([float(x) for x in line.split("\t")])
    return np.array(rows, dtype=np.float64)


def save_world(world: SemiSynthWorld, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    grids = {
        "rating.tsv": world.rating,
        "propensity.tsv": world.propensity,
        "mask.tsv": world.mask,
        "observed.tsv": world.observed,
        "rep.tsv": world.rep.values,
        "potential_g0.tsv": world.potential_g0,
        "potential_g1.tsv": world.potential_g1,
        "inv_propensity_noisy.tsv": world.inv_propensity_noisy,
    }
    for name, grid in grids.items():
        _write_grid(os.path.join(out_dir, name), grid)
    cfg = world.config
    with open(os.path.join(out_dir, "config.txt"), "w", encoding="utf-8") as fh:
        fh.write(f"alpha={cfg.alpha}\ntarget_fraction={cfg.target_fraction}\n"
                 f"mask_users={cfg.mask_users}\nmask_items={cfg.mask_items}\n"
                 f"seed={cfg.seed}\nthreshold={world.threshold}\n")
    with open(os.path.join(out_dir, "manifest.txt"), "w", encoding="utf-8") as fh:
        fh.write(f"n_files={len(WORLD_FILES)}\n")
        fh.write(f"n_users={world.shape[0]}\nn_items={world.shape[1]}\n")
        for name in WORLD_FILES:
            digest = hashlib.sha256(
                open(os.path.join(out_dir, name), "rb").read()).hexdigest()
            fh.write(f"file={name} sha256={digest}\n")


def load_world(world_dir) -> SemiSynthWorld:
    def grid(name):
        return _read_grid(os.path.join(world_dir, name))

    cfg_lines = {}
    with open(os.path.join(world_dir, "config.txt"), "r", encoding="utf-8") as fh:
        for line in fh:
            if "=" in line:
                k, v = line.strip().split("=", 1)
                cfg_lines[k] = v
    cfg = SemiSynthConfig(alpha=float(cfg_lines["alpha"]),
                          target_fraction=float(cfg_lines["target_fraction"]),
                          mask_users=int(cfg_lines["mask_users"]),
                          mask_items=int(cfg_lines["mask_items"]),
                          seed=int(cfg_lines["seed"]))
    return SemiSynthWorld(
        rating=grid("rating.tsv"), propensity=grid("propensity.tsv"),
        mask=grid("mask.tsv"), observed=grid("observed.tsv"),
        rep=TreatmentRep(values=grid("rep.tsv"), kind="binary-threshold",
                         support="{0, 1}"),
        threshold=float(cfg_lines["threshold"]),
        potential_g0=grid("potential_g0.tsv"),
        potential_g1=grid("potential_g1.tsv"),
        inv_propensity_noisy=grid("inv_propensity_noisy.tsv"),
        config=cfg)
