"""Base propensities P(o=1|x) and joint inverse propensities 1/p(o=1, g|x).

The joint propensity factorizes as P(o=1|x) * P(g|o=1|x); the conditional
treatment density is handled through a density-ratio classifier trained to
separate observed (x, g) pairs from pairs with uniformly resampled g.  The
classifier's odds, rescaled by the support measure of the uniform reference,
estimate 1/P(g|o=1,x).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import serialize
from .errors import ConfigError, DataError, TrainingError

DEFAULT_CLIP = 100.0


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


# ---------------------------------------------------------------------------
# Treatment supports (the space the uniform reference lives on)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DiscreteSupport:
    """Finite set of representation values; uniform reference is 1/measure."""

    values: np.ndarray

    @property
    def measure(self):
        return float(len(self.values))

    def sample(self, rng, n):
        return self.values[rng.integers(0, len(self.values), size=n)]


@dataclass(frozen=True)
class IntervalSupport:
    """Interval [lo, hi] for scalar continuous representations."""

    lo: float
    hi: float

    @property
    def measure(self):
        return float(self.hi - self.lo)

    def sample(self, rng, n):
        return rng.uniform(self.lo, self.hi, size=n)


def support_from_rep(rep_values, mask=None):
    """Default truncation of the treatment space: the observed range.

    Integer-valued representations give a discrete support over the observed
    unique values; anything else gives the observed interval.
    """
    vals = np.asarray(rep_values, dtype=np.float64)
    if mask is not None:
        vals = vals[np.asarray(mask) > 0]
    uniq = np.unique(vals)
    if np.all(uniq == np.round(uniq)) and len(uniq) <= 4096:
        return DiscreteSupport(values=uniq)
    return IntervalSupport(lo=float(uniq.min()), hi=float(uniq.max()))


# ---------------------------------------------------------------------------
# Base propensity models: P(o=1|x)
# ---------------------------------------------------------------------------


@dataclass
class NaiveBayesPropensity:
    """P(o=1|r) = P(r|o=1) P(o=1) / P(r) from rating-value frequencies.

    P(r|o=1) comes from the self-selected slice, P(r) from the uniform
    slice; add-one smoothing kicks in only for rating values unseen in the
    reference slice, so exact-count toys reproduce the hand arithmetic.
    """

    kind = "naive-bayes"
    alphabet: np.ndarray
    prob_by_rating: np.ndarray
    p_observed: float
    grid: np.ndarray | None = None

    def prob_for_rating(self, r):
        idx = np.searchsorted(self.alphabet, np.asarray(r, dtype=np.float64))
        idx = np.clip(idx, 0, len(self.alphabet) - 1)
        return self.prob_by_rating[idx]

    def prob_grid(self):
        if self.grid is None:
            raise DataError("naive Bayes model was fitted without a grid")
        return self.grid

    def save(self, path):
        serialize.save_params(path, "propensity-naive-bayes",
                              {"p_observed": repr(self.p_observed)},
                              {"alphabet": self.alphabet,
                               "prob_by_rating": self.prob_by_rating,
                               "grid": self.grid})


def fit_naive_bayes(mnar_ds, mar_ds) -> NaiveBayesPropensity:
    """Naive Bayes base propensity from an MNAR dataset plus MAR ratings.

    The MAR argument may be a subsample (callers typically pass ~5% of the
    uniform slice).  Rating values are matched exactly, so binarize first
    when the two slices use different scales.
    """
    r_mnar = mnar_ds.mnar[2]
    r_mar = mar_ds.mnar[2] if mar_ds.mar is None else mar_ds.mar[2]
    if len(r_mnar) == 0 or len(r_mar) == 0:
        raise DataError("both MNAR and MAR slices must be nonempty")
    alphabet = np.unique(np.concatenate([r_mnar, r_mar]))
    n_a = len(alphabet)
    cnt_mnar = np.array([(r_mnar == a).sum() for a in alphabet], dtype=np.float64)
    cnt_mar = np.array([(r_mar == a).sum() for a in alphabet], dtype=np.float64)
    p_r_given_o = cnt_mnar / len(r_mnar)
    p_r = cnt_mar / len(r_mar)
    # Smooth the reference marginal only where it has no mass: never divide
    # by zero, and keep exact-count cases exact.
    smoothed = (cnt_mar + 1.0) / (len(r_mar) + n_a)
    p_r = np.where(cnt_mar == 0, smoothed, p_r)
    p_o = len(r_mnar) / float(mnar_ds.n_users * mnar_ds.n_items)
    probs = np.clip(p_r_given_o * p_o / p_r, 1e-12, 1.0)

    model = NaiveBayesPropensity(alphabet=alphabet, prob_by_rating=probs, p_observed=p_o)
    grid = np.full((mnar_ds.n_users, mnar_ds.n_items), p_o, dtype=np.float64)
    u, i, r = mnar_ds.mnar
    grid[u, i] = model.prob_for_rating(r)
    model.grid = grid
    return model


@dataclass
class LogisticPropensity:
    """Logistic model of exposure over pair features.

    ``features="embeddings"`` learns per-user/per-item embedding vectors
    whose inner product plus biases forms the logit; ``"intercept"`` fits a
    single bias (its MLE is the marginal exposure rate).
    """

    kind = "logistic"
    user_emb: np.ndarray
    item_emb: np.ndarray
    user_bias: np.ndarray
    item_bias: np.ndarray
    global_bias: float

    def logits(self):
        z = self.user_emb @ self.item_emb.T
        return z + self.user_bias[:, None] + self.item_bias[None, :] + self.global_bias

    def prob_grid(self):
        return _sigmoid(self.logits())

    def save(self, path):
        serialize.save_params(path, "propensity-logistic",
                              {"global_bias": repr(self.global_bias)},
                              {"user_emb": self.user_emb, "item_emb": self.item_emb,
                               "user_bias": self.user_bias, "item_bias": self.item_bias})


def fit_logistic(mask, features="embeddings", dim=8, epochs=30, lr=0.05,
                 weight_decay=1e-5, batch_size=4096, seed=0) -> LogisticPropensity:
    """Fit exposure probabilities by minibatch gradient descent on log loss.

    Deterministic given the seed.  ``features="intercept"`` reduces to the
    closed-form exposure-rate fit (still found by descent).
    """
    o = np.asarray(mask.bits if hasattr(mask, "bits") else mask, dtype=np.float64)
    n_users, n_items = o.shape
    rng = np.random.default_rng(seed)
    if features == "intercept":
        dim = 0
    elif features != "embeddings":
        raise ConfigError(f"unknown feature mode {features!r}")

    scale = 0.1 / np.sqrt(max(dim, 1))
    model = LogisticPropensity(
        user_emb=rng.normal(0.0, scale, size=(n_users, dim)),
        item_emb=rng.normal(0.0, scale, size=(n_items, dim)),
        user_bias=np.zeros(n_users) if dim else np.zeros(n_users) * 0.0,
        item_bias=np.zeros(n_items),
        global_bias=0.0,
    )
    if features == "intercept":
        model.user_bias = np.zeros(n_users)
        model.item_bias = np.zeros(n_items)

    uu, ii = np.meshgrid(np.arange(n_users), np.arange(n_items), indexing="ij")
    pairs_u, pairs_i = uu.reshape(-1), ii.reshape(-1)
    labels = o.reshape(-1)
    n = len(labels)
    adam = _AdamState(
        {"ue": model.user_emb, "ie": model.item_emb,
         "ub": model.user_bias, "ib": model.item_bias,
         "gb": np.array([model.global_bias])})
    for _ in range(epochs):
        perm = rng.permutation(n)
        for start in range(0, n, batch_size):
            sel = perm[start:start + batch_size]
            bu, bi, y = pairs_u[sel], pairs_i[sel], labels[sel]
            eu, ei = model.user_emb[bu], model.item_emb[bi]
            z = np.sum(eu * ei, axis=1) + model.user_bias[bu] + model.item_bias[bi] \
                + model.global_bias
            p = _sigmoid(z)
            dz = (p - y) / len(sel)
            grads = {
                "ue": np.zeros_like(model.user_emb),
                "ie": np.zeros_like(model.item_emb),
                "ub": np.zeros_like(model.user_bias),
                "ib": np.zeros_like(model.item_bias),
                "gb": np.array([dz.sum()]),
            }
            if dim:
                np.add.at(grads["ue"], bu, dz[:, None] * ei)
                np.add.at(grads["ie"], bi, dz[:, None] * eu)
            if features == "embeddings":
                np.add.at(grads["ub"], bu, dz)
                np.add.at(grads["ib"], bi, dz)
            if not np.all(np.isfinite(dz)):
                raise TrainingError("non-finite gradient in logistic propensity fit")
            adam.step(lr, grads, weight_decay)
            model.global_bias = float(adam.params["gb"][0])
    return model


@dataclass
class OraclePropensity:
    """Stored true base-propensity grid (or noisy stand-in for it)."""

    kind = "oracle"
    grid: np.ndarray

    def prob_grid(self):
        return self.grid

    def save(self, path):
        serialize.save_params(path, "propensity-oracle", {}, {"grid": self.grid})


class _AdamState:
    """Dense adaptive-moment updates shared by the propensity fitters."""

    def __init__(self, params, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, lr, grads, weight_decay=0.0):
        self.t += 1
        b1c = 1.0 - self.beta1 ** self.t
        b2c = 1.0 - self.beta2 ** self.t
        for k, p in self.params.items():
            g = grads[k] + weight_decay * p
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g
            p -= lr * (self.m[k] / b1c) / (np.sqrt(self.v[k] / b2c) + self.eps)


# ---------------------------------------------------------------------------
# Density-ratio classifier for the treatment part of the joint propensity
# ---------------------------------------------------------------------------


@dataclass
class DensityRatioModel:
    """Logistic classifier of observed vs uniformly resampled treatments.

    The logit combines user/item intercepts with user/item-specific linear
    trends in g (an x-by-treatment interaction; without it, a two-point
    treatment would be forced to the same odds shift for every pair).
    ``ratio_grid(g)`` returns the estimated density ratio
    P_uniform(g|o=1,x) / P(g|o=1,x) (up to the uniform level 1/measure,
    which the enclosing field reapplies through its ``scale``).
    """

    user_bias: np.ndarray
    item_bias: np.ndarray
    user_slope: np.ndarray  # (n_users, q)
    item_slope: np.ndarray  # (n_items, q)
    g_weight: np.ndarray
    global_bias: float
    prior_ratio: float  # P(L=1)/P(L=0) = n_pos / n_neg
    k_neg: int = 1

    def _logit(self, g):
        g = np.atleast_1d(np.asarray(g, dtype=np.float64))
        zg = float(np.dot(self.g_weight, g))
        return (self.user_bias[:, None] + self.item_bias[None, :]
                + (self.user_slope @ g)[:, None] + (self.item_slope @ g)[None, :]
                + zg + self.global_bias)

    def prob_positive(self, g):
        """P(L=1|x, g) over the full pair grid for one treatment level."""
        return _sigmoid(self._logit(g))

    def ratio_grid(self, g):
        p = np.clip(self.prob_positive(g), 1e-8, 1.0 - 1e-8)
        return self.prior_ratio * (1.0 - p) / p

    def save(self, path):
        serialize.save_params(path, "density-ratio",
                              {"global_bias": repr(self.global_bias),
                               "prior_ratio": repr(self.prior_ratio),
                               "k_neg": self.k_neg},
                              {"user_bias": self.user_bias,
                               "item_bias": self.item_bias,
                               "user_slope": self.user_slope,
                               "item_slope": self.item_slope,
                               "g_weight": self.g_weight})


def fit_density_ratio(mask, rep, support, k_neg=1, seed=0, epochs=30, lr=0.05,
                      weight_decay=1e-6, batch_size=4096) -> DensityRatioModel:
    """Train the treatment-density classifier on exposed pairs.

    Positives are the exposed pairs with their actual representation value;
    negatives re-use the same pairs with ``k_neg`` treatments drawn uniformly
    from the support (fresh draws every epoch).  Seed-deterministic.
    """
    o = np.asarray(mask.bits if hasattr(mask, "bits") else mask, dtype=np.float64)
    n_users, n_items = o.shape
    obs_u, obs_i = np.nonzero(o > 0)
    if len(obs_u) == 0:
        raise DataError("no exposed pairs to fit the density ratio on")
    g_vals = np.asarray(rep.values if hasattr(rep, "values") else rep, dtype=np.float64)
    if g_vals.ndim == 2:
        g_vals = g_vals[:, :, None]
    q = g_vals.shape[2]
    g_obs = g_vals[obs_u, obs_i, :]

    rng = np.random.default_rng(seed)
    model = DensityRatioModel(
        user_bias=np.zeros(n_users),
        item_bias=np.zeros(n_items),
        user_slope=np.zeros((n_users, q)),
        item_slope=np.zeros((n_items, q)),
        g_weight=np.zeros(q),
        global_bias=0.0,
        prior_ratio=1.0 / float(k_neg),
        k_neg=k_neg,
    )
    adam = _AdamState({"ub": model.user_bias, "ib": model.item_bias,
                       "us": model.user_slope, "is": model.item_slope,
                       "gw": model.g_weight, "gb": np.array([0.0])})
    n_pos = len(obs_u)
    for _ in range(epochs):
        neg_g = support.sample(rng, n_pos * k_neg)
        neg_g = np.asarray(neg_g, dtype=np.float64).reshape(n_pos * k_neg, -1)
        all_u = np.concatenate([obs_u] + [obs_u] * k_neg)
        all_i = np.concatenate([obs_i] + [obs_i] * k_neg)
        all_g = np.concatenate([g_obs, neg_g], axis=0)
        labels = np.concatenate([np.ones(n_pos), np.zeros(n_pos * k_neg)])
        perm = rng.permutation(len(labels))
        for start in range(0, len(labels), batch_size):
            sel = perm[start:start + batch_size]
            bu, bi, bg, y = all_u[sel], all_i[sel], all_g[sel], labels[sel]
            z = (model.user_bias[bu] + model.item_bias[bi]
                 + np.sum(model.user_slope[bu] * bg, axis=1)
                 + np.sum(model.item_slope[bi] * bg, axis=1)
                 + bg @ model.g_weight + model.global_bias)
            p = _sigmoid(z)
            dz = (p - y) / len(sel)
            grads = {
                "ub": np.zeros_like(model.user_bias),
                "ib": np.zeros_like(model.item_bias),
                "us": np.zeros_like(model.user_slope),
                "is": np.zeros_like(model.item_slope),
                "gw": dz @ bg,
                "gb": np.array([dz.sum()]),
            }
            np.add.at(grads["ub"], bu, dz)
            np.add.at(grads["ib"], bi, dz)
            np.add.at(grads["us"], bu, dz[:, None] * bg)
            np.add.at(grads["is"], bi, dz[:, None] * bg)
            if not np.all(np.isfinite(dz)):
                raise TrainingError("non-finite gradient in density-ratio fit")
            adam.step(lr, grads, weight_decay)
            model.global_bias = float(adam.params["gb"][0])
    return model


@dataclass
class FeatureDensityRatio:
    """Density-ratio classifier over explicit pair features.

    Logit is linear in [1, features, g, features x g]; a handful of
    well-chosen covariates stays calibrated where per-entity parameters
    would be estimation-starved.  ``feature_grids`` has shape
    (n_users, n_items, f).
    """

    feature_grids: np.ndarray
    w0: float
    w_x: np.ndarray          # (f,)
    w_g: np.ndarray          # (q,)
    w_xg: np.ndarray         # (f, q)
    prior_ratio: float
    k_neg: int = 1

    def _logit(self, g):
        g = np.atleast_1d(np.asarray(g, dtype=np.float64))
        inter = self.feature_grids @ (self.w_xg @ g)
        return (self.w0 + self.feature_grids @ self.w_x
                + float(np.dot(self.w_g, g)) + inter)

    def prob_positive(self, g):
        return _sigmoid(self._logit(g))

    def ratio_grid(self, g):
        p = np.clip(self.prob_positive(g), 1e-8, 1.0 - 1e-8)
        return self.prior_ratio * (1.0 - p) / p

    def save(self, path):
        serialize.save_params(path, "feature-density-ratio",
                              {"w0": repr(self.w0),
                               "prior_ratio": repr(self.prior_ratio),
                               "k_neg": self.k_neg},
                              {"w_x": self.w_x, "w_g": self.w_g,
                               "w_xg": self.w_xg})


def fit_feature_density_ratio(mask, rep, support, feature_grids, k_neg=1,
                              seed=0, epochs=40, lr=0.1, weight_decay=0.0,
                              batch_size=8192) -> FeatureDensityRatio:
    """Like fit_density_ratio, but over explicit pair features."""
    o = np.asarray(mask.bits if hasattr(mask, "bits") else mask, dtype=np.float64)
    obs_u, obs_i = np.nonzero(o > 0)
    if len(obs_u) == 0:
        raise DataError("no exposed pairs to fit the density ratio on")
    feats = np.asarray(feature_grids, dtype=np.float64)
    if feats.ndim == 2:
        feats = feats[:, :, None]
    f = feats.shape[2]
    g_vals = np.asarray(rep.values if hasattr(rep, "values") else rep,
                        dtype=np.float64)
    if g_vals.ndim == 2:
        g_vals = g_vals[:, :, None]
    q = g_vals.shape[2]
    x_obs = feats[obs_u, obs_i, :]
    g_obs = g_vals[obs_u, obs_i, :]

    rng = np.random.default_rng(seed)
    model = FeatureDensityRatio(
        feature_grids=feats, w0=0.0, w_x=np.zeros(f), w_g=np.zeros(q),
        w_xg=np.zeros((f, q)), prior_ratio=1.0 / float(k_neg), k_neg=k_neg)
    adam = _AdamState({"w0": np.array([0.0]), "wx": model.w_x,
                       "wg": model.w_g, "wxg": model.w_xg})
    n_pos = len(obs_u)
    for _ in range(epochs):
        neg_g = np.asarray(support.sample(rng, n_pos * k_neg),
                           dtype=np.float64).reshape(n_pos * k_neg, -1)
        all_x = np.concatenate([x_obs] + [x_obs] * k_neg, axis=0)
        all_g = np.concatenate([g_obs, neg_g], axis=0)
        labels = np.concatenate([np.ones(n_pos), np.zeros(n_pos * k_neg)])
        perm = rng.permutation(len(labels))
        for start in range(0, len(labels), batch_size):
            sel = perm[start:start + batch_size]
            bx, bg, y = all_x[sel], all_g[sel], labels[sel]
            z = (adam.params["w0"][0] + bx @ model.w_x + bg @ model.w_g
                 + np.sum((bx @ model.w_xg) * bg, axis=1))
            p = _sigmoid(z)
            dz = (p - y) / len(sel)
            grads = {"w0": np.array([dz.sum()]), "wx": dz @ bx, "wg": dz @ bg,
                     "wxg": bx.T @ (dz[:, None] * bg)}
            if not np.all(np.isfinite(dz)):
                raise TrainingError("non-finite gradient in density-ratio fit")
            adam.step(lr, grads, weight_decay)
            model.w0 = float(adam.params["w0"][0])
    return model


@dataclass
class ClippedRatio:
    """Bounds another ratio model's output, i.e. floors/caps the implied
    conditional treatment probability before inversion."""

    inner: object
    lo: float
    hi: float

    def ratio_grid(self, g):
        return np.clip(self.inner.ratio_grid(g), self.lo, self.hi)


@dataclass
class NormalizedRatio:
    """Rescales a ratio model by a fixed constant.

    Used to absorb the unknown multiplicative constants of the
    classifier-based ratio (uniform level, label priors, calibration
    drift): callers pick z so the mean composition reweighting over the
    exposed pairs is exactly one, which a perfectly calibrated ratio
    satisfies identically.
    """

    inner: object
    z: float

    def ratio_grid(self, g):
        return self.inner.ratio_grid(g) / self.z


@dataclass
class OracleRatio:
    """Exact inverse conditional treatment density 1/P(g|o=1,x).

    ``density`` maps a treatment level to the per-pair grid of conditional
    densities; used where the generative process is known.
    """

    density: object  # callable g -> (n_users, n_items) array

    def ratio_grid(self, g):
        return 1.0 / np.asarray(self.density(g), dtype=np.float64)


def load_propensity(path):
    """Reload any saved propensity-side model from its text checkpoint."""
    kind, meta, arrays = serialize.load_params(path)
    if kind == "propensity-oracle":
        return OraclePropensity(grid=arrays["grid"])
    if kind == "propensity-naive-bayes":
        return NaiveBayesPropensity(alphabet=arrays["alphabet"],
                                    prob_by_rating=arrays["prob_by_rating"],
                                    p_observed=float(meta["p_observed"]),
                                    grid=arrays.get("grid"))
    if kind == "propensity-logistic":
        return LogisticPropensity(user_emb=arrays["user_emb"],
                                  item_emb=arrays["item_emb"],
                                  user_bias=arrays["user_bias"],
                                  item_bias=arrays["item_bias"],
                                  global_bias=float(meta["global_bias"]))
    if kind == "density-ratio":
        return DensityRatioModel(user_bias=arrays["user_bias"],
                                 item_bias=arrays["item_bias"],
                                 user_slope=arrays["user_slope"],
                                 item_slope=arrays["item_slope"],
                                 g_weight=arrays["g_weight"],
                                 global_bias=float(meta["global_bias"]),
                                 prior_ratio=float(meta["prior_ratio"]),
                                 k_neg=int(meta["k_neg"]))
    raise DataError(f"{path}: unknown propensity checkpoint kind {kind!r}")


# ---------------------------------------------------------------------------
# The combined field
# ---------------------------------------------------------------------------


@dataclass
class PropensityField:
    """Joint inverse propensity evaluator with clipping.

    ``inverse_grid(g) = clip(scale * ratio(g) / base, lower, clip)``.  With
    no ratio component this reduces to the clipped inverse base propensity.
    ``scale`` reapplies the uniform reference level (the support measure)
    when the ratio comes from the classifier; exact-oracle ratios use 1.
    ``lower`` defaults to 1 (inverse probabilities cannot be smaller), but
    continuous treatment densities may exceed 1, so density-backed fields
    can relax it to 0.
    """

    base: object
    ratio: object | None = None
    clip: float = DEFAULT_CLIP
    scale: float = 1.0
    lower: float = 1.0

    def __post_init__(self):
        if self.clip <= self.lower:
            raise ConfigError("clip bound must exceed the lower bound")
        self._base_grid = np.asarray(self.base.prob_grid(), dtype=np.float64)
        if np.any(self._base_grid <= 0) or np.any(self._base_grid > 1):
            raise DataError("base propensities must lie in (0, 1]")

    @property
    def n_users(self):
        return self._base_grid.shape[0]

    @property
    def n_items(self):
        return self._base_grid.shape[1]

    def base_prob_grid(self):
        return self._base_grid

    def inverse_base_grid(self):
        """Clipped 1/P(o=1|x): the classic selection-only inverse weight."""
        return np.clip(1.0 / self._base_grid, self.lower, self.clip)

    def inverse_grid(self, g):
        inv = 1.0 / self._base_grid
        if self.ratio is not None:
            inv = inv * (self.scale * self.ratio.ratio_grid(g))
        return np.clip(inv, self.lower, self.clip)

    def inverse_joint(self, u, i, g):
        return float(self.inverse_grid(g)[u, i])
