"""Best-first growth of a single regression tree on binned data.

Histograms hold, per feature and bin, the sum of gradients, the sum of
hessians and the row count. After a split only the smaller child's histogram
is built from rows; the sibling is the parent minus that child.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

# Gains within this relative distance of the best count as ties, which are
# broken by the lowest (feature, bin, missing direction) index. Without it,
# summation-order noise would decide between mathematically equal splits.
TIE_RTOL = 1e-9
# A split must improve the objective by more than this, relative to the
# parent's own score term, to be accepted.
MIN_GAIN_RTOL = 1e-9

MISSING_RIGHT, MISSING_LEFT = 0, 1


def split_gain(GL, HL, GR, HR, lam):
    G, H = GL + GR, HL + HR
    return GL * GL / (HL + lam) + GR * GR / (HR + lam) - G * G / (H + lam)


def gain_floor(G: float, H: float, lam: float) -> float:
    return MIN_GAIN_RTOL * (1.0 + G * G / (H + lam))


def pick_first_best(gains: np.ndarray) -> int:
    """Index of the maximal entry, ties resolved to the lowest index."""
    best = np.max(gains)
    if not np.isfinite(best):
        return -1
    tol = TIE_RTOL * abs(best) + 1e-300
    return int(np.flatnonzero(gains >= best - tol)[0])


@dataclass
class Histogram:
    g: np.ndarray  # (n_features, n_bins) float64
    h: np.ndarray
    c: np.ndarray  # int64

    def __sub__(self, other: "Histogram") -> "Histogram":
        c = self.c - other.c
        g = self.g - other.g
        h = self.h - other.h
        # empty bins must be exactly zero, not a rounding residue
        nonempty = c != 0
        g *= nonempty
        h *= nonempty
        return Histogram(g, h, c)


class HistogramBuilder:
    def __init__(self, binned: np.ndarray, n_bins: int):
        n, p = binned.shape
        self.n_features = p
        self.n_bins = n_bins
        offsets = (np.arange(p, dtype=np.int64) * n_bins)[None, :]
        self._flat = binned.astype(np.int64) + offsets

    def build(self, rows: np.ndarray, g: np.ndarray, h: np.ndarray) -> Histogram:
        size = self.n_features * self.n_bins
        codes = self._flat[rows].ravel()
        p = self.n_features
        hist_g = np.bincount(codes, weights=np.repeat(g[rows], p), minlength=size)
        hist_h = np.bincount(codes, weights=np.repeat(h[rows], p), minlength=size)
        hist_c = np.bincount(codes, minlength=size)
        shape = (p, self.n_bins)
        return Histogram(hist_g.reshape(shape), hist_h.reshape(shape), hist_c.reshape(shape).astype(np.int64))


@dataclass
class SplitInfo:
    gain: float
    feature: int
    bin: int  # numeric: threshold bin (left = bins <= bin); categorical: scan position
    missing_left: bool
    categorical: bool = False
    left_bins: Optional[np.ndarray] = None  # categorical: value bins sent left
    n_left: int = 0
    n_right: int = 0


class SplitLayout:
    """Ragged flat index over the value bins each feature uses.

    Position ``k`` is bin ``pos[k]`` of feature ``feat[k]``. Positions are in
    (feature, bin) order, so a flat argmax keeps the documented tie order.
    """

    def __init__(self, n_value_bins, is_categorical, n_bins: int):
        nvb = np.asarray(n_value_bins, dtype=np.int64)
        self.nvb = nvb
        self.start = np.concatenate([[0], np.cumsum(nvb)[:-1]]).astype(np.int64)
        self.feat = np.repeat(np.arange(len(nvb)), nvb)
        self.pos = np.arange(int(nvb.sum())) - self.start[self.feat]
        self.gidx = self.feat * n_bins + self.pos
        self.is_categorical = np.asarray(is_categorical, dtype=bool)
        self.catpos = np.flatnonzero(self.is_categorical[self.feat])

    def segment_cumsum(self, x: np.ndarray):
        """Running sums restarted at every feature, plus per-feature totals.

        One global cumsum is shifted per feature; the extra rounding is of
        order n_features * eps relative to the node totals.
        """
        csp = np.concatenate([[0], np.cumsum(x)])
        before = csp[self.start]
        return csp[1:] - before[self.feat], csp[self.start + self.nvb] - before


def find_best_split(
    hist: Histogram,
    n_value_bins: np.ndarray,
    is_categorical: np.ndarray,
    lam: float,
    min_samples_leaf: int,
    layout: Optional[SplitLayout] = None,
) -> Optional[SplitInfo]:
    """Best split of a node from its histogram, or None if no split gains.

    Categorical features are scanned like numeric ones after their non-empty
    bins are sorted by G/(H+lambda); empty bins sort last and are never used
    as a scan position.
    """
    B = hist.g.shape[1]
    mb = B - 1  # index of the missing bin
    if layout is None:
        layout = SplitLayout(n_value_bins, is_categorical, B)
    if not len(layout.feat):
        return None
    mg, mh, mc = hist.g[:, mb], hist.h[:, mb], hist.c[:, mb]
    g = hist.g.ravel()[layout.gidx]
    h = hist.h.ravel()[layout.gidx]
    c = hist.c.ravel()[layout.gidx]
    valid = np.ones(len(g), dtype=bool)
    orig_bin = layout.pos

    cp = layout.catpos
    if len(cp):
        with np.errstate(divide="ignore", invalid="ignore"):
            key = np.where(c[cp] > 0, g[cp] / (h[cp] + lam), np.inf)
        perm = cp[np.lexsort((layout.pos[cp], key, layout.feat[cp]))]
        g[cp], h[cp], c[cp] = g[perm], h[perm], c[perm]
        orig_bin = orig_bin.copy()
        orig_bin[cp] = layout.pos[perm]
        valid[cp] = c[cp] > 0

    fo = layout.feat
    cg, Gs = layout.segment_cumsum(g)
    ch, Hs = layout.segment_cumsum(h)
    cc, Cs = layout.segment_cumsum(c)
    Gt, Ht, Ct = Gs + mg, Hs + mh, Cs + mc
    parent = Gt * Gt / (Ht + lam)
    Gt_, Ht_, Ct_ = Gt[fo], Ht[fo], Ct[fo]

    gains = np.full((len(g), 2), -np.inf)
    for direction in (MISSING_RIGHT, MISSING_LEFT):
        if direction == MISSING_LEFT:
            if not mc.any():
                continue
            GL, HL, CL = cg + mg[fo], ch + mh[fo], cc + mc[fo]
            # without missing rows both directions give one partition
            ok = valid & (mc > 0)[fo]
        else:
            GL, HL, CL = cg, ch, cc
            ok = valid
        ok = ok & (CL >= min_samples_leaf) & (Ct_ - CL >= min_samples_leaf)
        GR, HR = Gt_ - GL, Ht_ - HL
        with np.errstate(divide="ignore", invalid="ignore"):
            gval = GL * GL / (HL + lam) + GR * GR / (HR + lam) - parent[fo]
        gains[:, direction] = np.where(ok, gval, -np.inf)

    flat = gains.ravel()
    idx = pick_first_best(flat)
    if idx < 0:
        return None
    k, direction = divmod(idx, 2)
    f, b = int(fo[k]), int(layout.pos[k])
    gain = float(flat[idx])
    if gain <= gain_floor(Gt[f], Ht[f], lam):
        return None
    missing_left = direction == MISSING_LEFT
    is_cat = bool(layout.is_categorical[f])
    n_left = int(cc[k] + (mc[f] if missing_left else 0))
    n_right = int(Ct[f]) - n_left
    if mc[f] == 0:
        # no missing rows here: unseen missing values follow the larger child
        missing_left = n_left >= n_right
    return SplitInfo(
        gain=gain,
        feature=f,
        bin=b,
        missing_left=missing_left,
        categorical=is_cat,
        left_bins=np.sort(orig_bin[layout.start[f]: k + 1]) if is_cat else None,
        n_left=n_left,
        n_right=n_right,
    )


@dataclass
class Tree:
    """Flat array representation; ``left == -1`` marks a leaf."""

    feature: list = field(default_factory=list)
    threshold_bin: list = field(default_factory=list)
    missing_left: list = field(default_factory=list)
    categorical: list = field(default_factory=list)
    left_bins: list = field(default_factory=list)  # categorical: bins routed left
    left: list = field(default_factory=list)
    right: list = field(default_factory=list)
    value: list = field(default_factory=list)
    gain: list = field(default_factory=list)
    count: list = field(default_factory=list)

    def add_leaf(self, value: float, count: int) -> int:
        self.feature.append(-1)
        self.threshold_bin.append(-1)
        self.missing_left.append(False)
        self.categorical.append(False)
        self.left_bins.append([])
        self.left.append(-1)
        self.right.append(-1)
        self.value.append(float(value))
        self.gain.append(0.0)
        self.count.append(int(count))
        return len(self.value) - 1

    @property
    def n_nodes(self) -> int:
        return len(self.value)

    @property
    def n_leaves(self) -> int:
        return sum(1 for x in self.left if x < 0)

    def is_leaf(self, node: int) -> bool:
        return self.left[node] < 0

    def split_order(self) -> list:
        """Internal nodes in the order they were split."""
        internal = [i for i in range(self.n_nodes) if self.left[i] >= 0]
        return sorted(internal, key=lambda i: self.left[i])

    def go_left_mask(self, node: int, n_bins: int) -> np.ndarray:
        """Boolean lookup over every bin (missing bin last) for ``node``."""
        mask = np.zeros(n_bins, dtype=bool)
        if self.categorical[node]:
            mask[np.asarray(self.left_bins[node], dtype=np.int64)] = True
        else:
            mask[: self.threshold_bin[node] + 1] = True
        mask[n_bins - 1] = self.missing_left[node]
        return mask

    def leaf_index(self, binned: np.ndarray, missing_bin: int) -> np.ndarray:
        n = binned.shape[0]
        node = np.zeros(n, dtype=np.int64)
        left = np.asarray(self.left, dtype=np.int64)
        right = np.asarray(self.right, dtype=np.int64)
        feature = np.asarray(self.feature, dtype=np.int64)
        thr = np.asarray(self.threshold_bin, dtype=np.int64)
        miss_left = np.asarray(self.missing_left, dtype=bool)
        cat_nodes = [i for i, c in enumerate(self.categorical) if c]
        cat_row = np.full(self.n_nodes, -1, dtype=np.int64)
        cat_masks = np.zeros((len(cat_nodes), missing_bin + 1), dtype=bool)
        for k, i in enumerate(cat_nodes):
            cat_row[i] = k
            cat_masks[k] = self.go_left_mask(i, missing_bin + 1)
        active = np.flatnonzero(left[node] >= 0)
        while len(active):
            nd = node[active]
            b = binned[active, feature[nd]].astype(np.int64)
            go_left = np.where(b == missing_bin, miss_left[nd], b <= thr[nd])
            is_cat = cat_row[nd] >= 0
            if is_cat.any():
                go_left[is_cat] = cat_masks[cat_row[nd[is_cat]], b[is_cat]]
            node[active] = np.where(go_left, left[nd], right[nd])
            active = active[left[node[active]] >= 0]
        return node


class TreeGrower:
    """Grows one tree best-first on the gradients/hessians of one iteration."""

    def __init__(
        self,
        binned: np.ndarray,
        builder: HistogramBuilder,
        n_value_bins: np.ndarray,
        is_categorical: np.ndarray,
        max_leaf_nodes: int,
        min_samples_leaf: int,
        l2_regularization: float,
    ):
        self.binned = binned
        self.builder = builder
        self.n_value_bins = n_value_bins
        self.is_categorical = is_categorical
        self.max_leaf_nodes = max_leaf_nodes
        self.min_samples_leaf = min_samples_leaf
        self.lam = l2_regularization
        self.layout = SplitLayout(n_value_bins, is_categorical, builder.n_bins)
        self.split_log: list = []  # (node, SplitInfo) in expansion order
        self.leaf_rows: dict = {}

    def _leaf_value(self, rows, g, h) -> float:
        return float(-np.sum(g[rows]) / (np.sum(h[rows]) + self.lam))

    def _best(self, hist: Histogram, n_rows: int) -> Optional[SplitInfo]:
        if n_rows < 2 * self.min_samples_leaf:
            return None
        return find_best_split(hist, self.n_value_bins, self.is_categorical, self.lam, self.min_samples_leaf,
                               self.layout)

    def grow(self, g: np.ndarray, h: np.ndarray, rows: Optional[np.ndarray] = None) -> Tree:
        tree = Tree()
        if rows is None:
            rows = np.arange(self.binned.shape[0])
        root = tree.add_leaf(self._leaf_value(rows, g, h), len(rows))
        root_hist = self.builder.build(rows, g, h)
        state = {root: (rows, root_hist, self._best(root_hist, len(rows)))}
        n_leaves = 1
        missing_bin = self.builder.n_bins - 1
        while n_leaves < self.max_leaf_nodes:
            candidates = [(nid, s[2]) for nid, s in state.items() if s[2] is not None]
            if not candidates:
                break
            candidates.sort(key=lambda t: t[0])
            gains = np.array([c[1].gain for c in candidates])
            nid, split = candidates[pick_first_best(gains)]
            node_rows, node_hist, _ = state.pop(nid)
            col = self.binned[node_rows, split.feature].astype(np.int64)
            mask = np.zeros(missing_bin + 1, dtype=bool)
            if split.categorical:
                mask[split.left_bins] = True
                # bins empty at this node (incl. unseen overflow) follow missing
                present = node_hist.c[split.feature, : missing_bin] > 0
                mask[:missing_bin] |= ~present & split.missing_left
            else:
                mask[: split.bin + 1] = True
            mask[missing_bin] = split.missing_left
            go_left = mask[col]
            l_rows, r_rows = node_rows[go_left], node_rows[~go_left]

            if len(l_rows) <= len(r_rows):
                l_hist = self.builder.build(l_rows, g, h)
                r_hist = node_hist - l_hist
            else:
                r_hist = self.builder.build(r_rows, g, h)
                l_hist = node_hist - r_hist

            li = tree.add_leaf(self._leaf_value(l_rows, g, h), len(l_rows))
            ri = tree.add_leaf(self._leaf_value(r_rows, g, h), len(r_rows))
            tree.feature[nid] = split.feature
            tree.threshold_bin[nid] = split.bin if not split.categorical else -1
            tree.missing_left[nid] = bool(split.missing_left)
            tree.categorical[nid] = split.categorical
            tree.left_bins[nid] = [int(b) for b in np.flatnonzero(mask[:missing_bin])] if split.categorical else []
            tree.left[nid], tree.right[nid] = li, ri
            tree.gain[nid] = split.gain
            self.split_log.append((nid, split))
            n_leaves += 1
            state[li] = (l_rows, l_hist, None)
            state[ri] = (r_rows, r_hist, None)
            if n_leaves < self.max_leaf_nodes:
                state[li] = (l_rows, l_hist, self._best(l_hist, len(l_rows)))
                state[ri] = (r_rows, r_hist, self._best(r_hist, len(r_rows)))
        self.leaf_rows = {nid: s[0] for nid, s in state.items()}
        return tree
