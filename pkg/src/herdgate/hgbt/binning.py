"""Feature binning for histogram-based boosting.

Every feature is mapped to at most ``max_bins`` value bins plus one reserved
missing bin whose index is ``max_bins`` for all features, so binned matrices
fit in ``uint8`` when ``max_bins <= 255``.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

MAX_BINS_LIMIT = 255


@dataclass
class FeatureBins:
    categorical: bool
    # numeric: right-inclusive thresholds; value v goes to bin searchsorted(edges, v)
    edges: np.ndarray = field(default_factory=lambda: np.zeros(0))
    # categorical: category code -> bin; overflow_bin receives unseen/rare codes
    categories: dict = field(default_factory=dict)
    overflow_bin: int = -1
    n_value_bins: int = 0


@dataclass
class BinMapper:
    max_bins: int
    features: list
    warnings: list = field(default_factory=list)

    @property
    def missing_bin(self) -> int:
        return self.max_bins

    @property
    def n_features(self) -> int:
        return len(self.features)

    def transform(self, X) -> np.ndarray:
        X = _as_matrix(X)
        if X.shape[1] != self.n_features:
            raise ValueError(f"expected {self.n_features} features, got {X.shape[1]}")
        out = np.empty(X.shape, dtype=np.uint8)
        for j, fb in enumerate(self.features):
            out[:, j] = _bin_column(fb, X[:, j], self.missing_bin)
        return out

    def bin_upper_value(self, feature: int, bin_index: int) -> float:
        """Largest raw value mapped to ``bin_index`` (its right-inclusive edge)."""
        edges = self.features[feature].edges
        return float(edges[bin_index]) if bin_index < len(edges) else float("inf")


def _as_matrix(X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError("feature matrix must be 2-D")
    if np.isinf(X).any():
        bad = np.argwhere(np.isinf(X))[0]
        raise ValueError(f"non-finite value at row {bad[0]}, feature {bad[1]}")
    return X


def _bin_column(fb: FeatureBins, col: np.ndarray, missing_bin: int) -> np.ndarray:
    out = np.full(col.shape, missing_bin, dtype=np.int64)
    ok = ~np.isnan(col)
    if fb.n_value_bins == 0:
        return out
    if fb.categorical:
        codes = col[ok]
        keys = np.fromiter(fb.categories.keys(), dtype=np.float64, count=len(fb.categories))
        vals = np.fromiter(fb.categories.values(), dtype=np.int64, count=len(fb.categories))
        order = np.argsort(keys)
        keys, vals = keys[order], vals[order]
        pos = np.searchsorted(keys, codes)
        pos_c = np.minimum(pos, len(keys) - 1)
        hit = (pos < len(keys)) & (keys[pos_c] == codes)
        out[ok] = np.where(hit, vals[pos_c], fb.overflow_bin)
    else:
        out[ok] = np.searchsorted(fb.edges, col[ok], side="left")
    return out


def _numeric_bins(values: np.ndarray, max_bins: int) -> FeatureBins:
    uniq = np.unique(values)
    if len(uniq) <= max_bins:
        edges = (uniq[:-1] + uniq[1:]) / 2.0
        # midpoints can round onto the lower neighbour for adjacent floats
        edges = np.where(edges < uniq[1:], edges, uniq[:-1])
    else:
        qs = np.linspace(0, 100, max_bins + 1)[1:-1]
        edges = np.percentile(values, qs, method="midpoint")
        edges = np.unique(edges)
    return FeatureBins(categorical=False, edges=edges, n_value_bins=len(edges) + 1)


def _categorical_bins(values: np.ndarray, max_bins: int) -> FeatureBins:
    if np.any(values != np.round(values)) or np.any(values < 0):
        raise ValueError("categorical codes must be non-negative integers")
    cats, counts = np.unique(values, return_counts=True)
    # most frequent first; ties by code
    order = np.lexsort((cats, -counts))
    cats = cats[order]
    if len(cats) < max_bins:
        own = cats
        overflow = len(cats)
    else:
        own = cats[: max_bins - 1]
        overflow = max_bins - 1
    mapping = {float(c): i for i, c in enumerate(own)}
    for c in cats[len(own):]:
        mapping[float(c)] = overflow
    return FeatureBins(categorical=True, categories=mapping, overflow_bin=overflow, n_value_bins=overflow + 1)


def fit_bins(X, categorical=None, max_bins: int = MAX_BINS_LIMIT) -> BinMapper:
    """Fit per-feature bins on the non-missing values of ``X``.

    Numeric features with at most ``max_bins`` distinct values get one bin per
    value (edges at midpoints); otherwise edges sit at quantiles. Categorical
    features get one bin per category by descending frequency, with an
    overflow bin for rare and unseen categories.
    """
    if not 2 <= max_bins <= MAX_BINS_LIMIT:
        raise ValueError(f"max_bins must lie in [2, {MAX_BINS_LIMIT}]")
    X = _as_matrix(X)
    if X.shape[0] < 1:
        raise ValueError("cannot fit bins on an empty matrix")
    if categorical is None:
        categorical = np.zeros(X.shape[1], dtype=bool)
    categorical = np.asarray(categorical, dtype=bool)
    mapper = BinMapper(max_bins=max_bins, features=[])
    for j in range(X.shape[1]):
        col = X[:, j]
        values = col[~np.isnan(col)]
        if len(values) == 0:
            msg = f"feature {j} has no non-missing values; only the missing bin is used"
            mapper.warnings.append(msg)
            warnings.warn(msg, RuntimeWarning, stacklevel=2)
            mapper.features.append(FeatureBins(categorical=bool(categorical[j])))
        elif categorical[j]:
            mapper.features.append(_categorical_bins(values, max_bins))
        else:
            mapper.features.append(_numeric_bins(values, max_bins))
    return mapper
