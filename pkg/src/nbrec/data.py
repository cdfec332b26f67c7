"""Dataset representation, TSV ingestion, binarization and splitting.

Interaction files are UTF-8 TSV with ``user<TAB>item<TAB>rating`` records,
one per line, ``#`` starting a comment line.  User and item ids are remapped
to dense 0-based integers at load time; the original ids are retained in
sidecar maps for reporting.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DataError, DuplicateError, ParseError

RATING_MIN = 0.0
RATING_MAX = 5.0


@dataclass(frozen=True)
class Dataset:
    """Explicit-feedback interactions, optionally with a uniform (MAR) slice.

    ``mnar`` holds the self-selected interactions; ``mar`` (optional) holds
    interactions collected under uniform exposure.  Both are (users, items,
    ratings) triples of equal-length arrays with dense 0-based ids.
    """

    n_users: int
    n_items: int
    mnar: tuple[np.ndarray, np.ndarray, np.ndarray]
    mar: tuple[np.ndarray, np.ndarray, np.ndarray] | None = None
    meta: str = ""
    user_ids: dict = field(default_factory=dict, repr=False)
    item_ids: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        for name, triple in (("mnar", self.mnar), ("mar", self.mar)):
            if triple is None:
                continue
            u, i, r = triple
            if not (len(u) == len(i) == len(r)):
                raise DataError(f"{name}: ragged arrays")
            if len(u):
                if u.min() < 0 or u.max() >= self.n_users:
                    raise DataError(f"{name}: user id out of range")
                if i.min() < 0 or i.max() >= self.n_items:
                    raise DataError(f"{name}: item id out of range")
                if not np.all(np.isfinite(r)):
                    raise DataError(f"{name}: non-finite rating")
                if r.min() < RATING_MIN or r.max() > RATING_MAX:
                    raise DataError(f"{name}: rating outside [{RATING_MIN}, {RATING_MAX}]")
                keys = u.astype(np.int64) * self.n_items + i
                if len(np.unique(keys)) != len(keys):
                    raise DuplicateError(f"{name}: duplicate (user, item) pair")

    @property
    def n_mnar(self):
        return len(self.mnar[0])

    @property
    def n_mar(self):
        return 0 if self.mar is None else len(self.mar[0])

    def with_mar(self, mar_ds: "Dataset") -> "Dataset":
        """Attach another dataset's interactions as the MAR slice.

        The MAR file must use the same id universe (checked against range
        only; callers load both files through a shared remap when original
        ids must line up).
        """
        u, i, r = mar_ds.mnar
        if len(u) and (u.max() >= self.n_users or i.max() >= self.n_items):
            raise DataError("MAR ids exceed MNAR id range")
        return replace(self, mar=(u, i, r))


@dataclass(frozen=True)
class RatingMatrix:
    """Dense |U| x |I| grid of (true, potential or predicted) ratings."""

    values: np.ndarray

    def __post_init__(self):
        if self.values.ndim != 2:
            raise DataError("rating matrix must be 2-D")
        if not np.all(np.isfinite(self.values)):
            raise DataError("rating matrix contains non-finite values")

    @property
    def n_users(self):
        return self.values.shape[0]

    @property
    def n_items(self):
        return self.values.shape[1]


@dataclass(frozen=True)
class ObservationMask:
    """Dense binary |U| x |I| exposure grid."""

    bits: np.ndarray

    def __post_init__(self):
        if self.bits.ndim != 2:
            raise DataError("observation mask must be 2-D")
        vals = np.unique(self.bits)
        if not np.all(np.isin(vals, (0, 1))):
            raise DataError("observation mask entries must be 0/1")

    @property
    def n_users(self):
        return self.bits.shape[0]

    @property
    def n_items(self):
        return self.bits.shape[1]


def _parse_rows(path, columns):
    cu, ci, cr = columns
    users, items, ratings = [], [], []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) <= max(columns):
                raise ParseError(path, line_no, f"expected >= {max(columns) + 1} columns")
            try:
                users.append(int(parts[cu]))
                items.append(int(parts[ci]))
                ratings.append(float(parts[cr]))
            except ValueError as exc:
                raise ParseError(path, line_no, str(exc)) from None
    return users, items, ratings


def load_tsv(path, columns=(0, 1, 2), meta=None, align_to: Dataset | None = None) -> Dataset:
    """Load a TSV interaction file, remapping ids to dense 0-based ranges.

    ``columns`` gives the (user, item, rating) column indices.  With
    ``align_to``, original ids are mapped through that dataset's id tables
    instead (so two files over one id universe stay aligned); unknown ids
    are an error.  Raises ParseError with the offending line number on
    malformed rows and DuplicateError on repeated (user, item) pairs.
    """
    if not os.path.exists(path):
        raise DataError(f"no such file: {path}")
    users, items, ratings = _parse_rows(path, columns)
    if align_to is not None:
        umap = {orig: dense for dense, orig in align_to.user_ids.items()}
        imap = {orig: dense for dense, orig in align_to.item_ids.items()}
        for x in users:
            if x not in umap:
                raise DataError(f"{path}: user id {x} absent from the aligned dataset")
        for x in items:
            if x not in imap:
                raise DataError(f"{path}: item id {x} absent from the aligned dataset")
        n_users, n_items = align_to.n_users, align_to.n_items
    else:
        umap = {orig: k for k, orig in enumerate(sorted(set(users)))}
        imap = {orig: k for k, orig in enumerate(sorted(set(items)))}
        n_users, n_items = len(umap), len(imap)
    u = np.array([umap[x] for x in users], dtype=np.int64)
    i = np.array([imap[x] for x in items], dtype=np.int64)
    r = np.array(ratings, dtype=np.float64)
    return Dataset(
        n_users=n_users,
        n_items=n_items,
        mnar=(u, i, r),
        meta=meta or os.path.basename(path),
        user_ids={v: k for k, v in umap.items()},
        item_ids={v: k for k, v in imap.items()},
    )


def write_tsv(ds: Dataset, path, which="mnar"):
    """Write one slice back to TSV (dense ids) plus a key=value manifest."""
    triple = ds.mnar if which == "mnar" else ds.mar
    if triple is None:
        raise DataError(f"dataset has no {which} slice")
    u, i, r = triple
    with open(path, "w", encoding="utf-8") as fh:
        for uu, ii, rr in zip(u, i, r):
            fh.write(f"{uu}\t{ii}\t{rr:.17g}\n")
    with open(path + ".manifest", "w", encoding="utf-8") as fh:
        fh.write(f"n_users={ds.n_users}\n")
        fh.write(f"n_items={ds.n_items}\n")
        fh.write(f"n_records={len(u)}\n")
        fh.write(f"slice={which}\n")
        fh.write(f"meta={ds.meta}\n")


def binarize(ds: Dataset, threshold: float) -> Dataset:
    """Map every rating to 1 if >= threshold else 0 (both slices)."""
    if not (RATING_MIN <= threshold <= RATING_MAX):
        raise DataError(f"threshold {threshold} outside rating range")

    def _bin(triple):
        if triple is None:
            return None
        u, i, r = triple
        return u, i, (r >= threshold).astype(np.float64)

    return replace(ds, mnar=_bin(ds.mnar), mar=_bin(ds.mar))


def split(ds: Dataset, fractions, seed) -> tuple[Dataset, Dataset]:
    """Partition the MNAR records into disjoint train/validation datasets.

    Deterministic given the seed.  The MAR slice, when present, stays with
    the train split (it feeds propensity fitting, not evaluation).
    """
    f_train, f_val = fractions
    if f_train <= 0 or f_val <= 0 or f_train + f_val > 1 + 1e-12:
        raise DataError(f"invalid fractions {fractions}")
    u, i, r = ds.mnar
    n = len(u)
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    n_train = int(np.floor(f_train * n))
    n_val = int(np.floor(f_val * n))
    tr, va = perm[:n_train], perm[n_train:n_train + n_val]

    def _take(idx, mar):
        return Dataset(
            n_users=ds.n_users,
            n_items=ds.n_items,
            mnar=(u[idx], i[idx], r[idx]),
            mar=mar,
            meta=ds.meta,
            user_ids=ds.user_ids,
            item_ids=ds.item_ids,
        )

    return _take(tr, ds.mar), _take(va, None)


def to_mask(ds: Dataset, which="mnar") -> np.ndarray:
    """Dense 0/1 exposure grid for one slice."""
    grid = np.zeros((ds.n_users, ds.n_items), dtype=np.float64)
    triple = ds.mnar if which == "mnar" else ds.mar
    u, i, _ = triple
    grid[u, i] = 1.0
    return grid


def to_rating_grid(ds: Dataset, which="mnar", fill=0.0) -> np.ndarray:
    """Dense rating grid for one slice, ``fill`` where unobserved."""
    grid = np.full((ds.n_users, ds.n_items), fill, dtype=np.float64)
    triple = ds.mnar if which == "mnar" else ds.mar
    u, i, r = triple
    grid[u, i] = r
    return grid
