"""Independent reference computations used by the test-suite.

Each oracle recomputes a quantity by brute force (enumeration, pairwise
comparison, exact dynamic programming) without touching the code path it
checks. Only shared *definitions* are imported: the tie tolerance and the
minimum-gain rule.
"""
from __future__ import annotations

import itertools

import numpy as np
from scipy.stats import binom

from herdgate.hgbt.grower import MIN_GAIN_RTOL, TIE_RTOL


# ------------------------------------------------------------------ trees


def _gain(GL, HL, GR, HR, lam):
    return GL**2 / (HL + lam) + GR**2 / (HR + lam) - (GL + GR) ** 2 / (HL + HR + lam)


def _first_best(keys_gains):
    best = max(g for _, g in keys_gains)
    tol = TIE_RTOL * abs(best) + 1e-300
    return min(k for k, g in keys_gains if g >= best - tol)


def exact_greedy_split(X, g, h, rows, lam, min_samples_leaf):
    """Best (feature, threshold rank, missing_left) for ``rows`` by enumeration.

    Threshold rank t sends non-missing values <= the t-th smallest distinct
    value of the *whole* column to the left.
    """
    cands = []
    G, H = g[rows].sum(), h[rows].sum()
    for f in range(X.shape[1]):
        col = X[:, f]
        uniq = np.unique(col[~np.isnan(col)])
        x = col[rows]
        miss = np.isnan(x)
        for t, u in enumerate(uniq):
            base_left = (~miss) & (x <= u)
            dirs = (0, 1) if miss.any() else (0,)
            for d in dirs:
                left = base_left | (miss if d == 1 else False)
                nl = int(left.sum())
                nr = len(rows) - nl
                if nl < min_samples_leaf or nr < min_samples_leaf:
                    continue
                GL, HL = g[rows][left].sum(), h[rows][left].sum()
                cands.append(((f, t, d), _gain(GL, HL, G - GL, H - HL, lam)))
    if not cands:
        return None
    key = _first_best(cands)
    gain = dict(cands)[key]
    if gain <= MIN_GAIN_RTOL * (1.0 + G * G / (H + lam)):
        return None
    f, t, d = key
    x = X[rows, f]
    miss = np.isnan(x)
    u = np.unique(X[:, f][~np.isnan(X[:, f])])[t]
    left = ((~miss) & (x <= u)) | (miss if d == 1 else False)
    missing_left = bool(d == 1)
    if not miss.any():
        missing_left = bool(left.sum() >= (~left).sum())
    return {"feature": f, "rank": t, "missing_left": missing_left, "gain": gain, "left": rows[left], "right": rows[~left]}


def exact_greedy_tree(X, y, max_leaf_nodes, lam=0.0, min_samples_leaf=1):
    """Split sequence of the first boosting tree grown best-first by brute force.

    Returns a list of (node_id, feature, threshold_rank, missing_left).
    """
    y = np.asarray(y, dtype=float)
    p0 = y.mean()
    g = p0 - y
    h = np.full(len(y), p0 * (1 - p0))
    leaves = {0: np.arange(len(y))}
    best = {0: exact_greedy_split(X, g, h, leaves[0], lam, min_samples_leaf)}
    next_id = 1
    seq = []
    while len(leaves) < max_leaf_nodes:
        ready = [(nid, s["gain"]) for nid, s in best.items() if s is not None]
        if not ready:
            break
        nid = _first_best(ready)
        s = best.pop(nid)
        leaves.pop(nid)
        seq.append((nid, s["feature"], s["rank"], s["missing_left"]))
        for rows in (s["left"], s["right"]):
            leaves[next_id] = rows
            best[next_id] = exact_greedy_split(X, g, h, rows, lam, min_samples_leaf)
            next_id += 1
    return seq


def best_categorical_partition_gain(codes, g, h, lam=0.0):
    """Maximum gain over every two-way partition of the categories present."""
    cats = np.unique(codes)
    G, H = g.sum(), h.sum()
    best = -np.inf
    for r in range(1, len(cats)):
        for subset in itertools.combinations(cats, r):
            left = np.isin(codes, subset)
            GL, HL = g[left].sum(), h[left].sum()
            best = max(best, _gain(GL, HL, G - GL, H - HL, lam))
    return best


# ------------------------------------------------------------------ ROC


def pairwise_auc(scores, labels):
    """P(score_pos > score_neg) + 0.5 P(tie), by explicit pair enumeration."""
    s = np.asarray(scores, dtype=float)
    y = np.asarray(labels).astype(bool)
    pos, neg = s[y], s[~y]
    wins = 0.0
    for a in pos:
        wins += np.sum(a > neg) + 0.5 * np.sum(a == neg)
    return wins / (len(pos) * len(neg))


def sweep_operating_points(scores, labels):
    """(threshold, sens, spec) for every distinct score and the two infinities."""
    s = np.asarray(scores, dtype=float)
    y = np.asarray(labels).astype(bool)
    out = []
    for t in [-np.inf, *np.unique(s), np.inf]:
        pred = s >= t
        sens = np.sum(pred & y) / y.sum()
        spec = np.sum(~pred & ~y) / (~y).sum()
        out.append((t, sens, spec))
    return out


# ------------------------------------------------------------------ epidemics


def chain_binomial_sti(n, t0, i0, beta, sigma, days):
    """Exact distribution of a closed-herd S->T->I chain binomial.

    Each day: new infections ~ Bin(S, 1 - exp(-beta I / n)), progressions
    ~ Bin(T, 1 - exp(-sigma)), both from start-of-day counts. Returns
    (mean cumulative infections per day, pmf of cumulative infections at the end).
    """
    p_prog = 1 - np.exp(-sigma)
    dist = {(n - t0 - i0, t0, i0): 1.0}
    means = []
    for _ in range(days):
        nxt: dict = {}
        for (s, t, i), pr in dist.items():
            p_inf = 1 - np.exp(-beta * i / n)
            inf_pmf = binom.pmf(np.arange(s + 1), s, p_inf)
            prog_pmf = binom.pmf(np.arange(t + 1), t, p_prog)
            for x, px in enumerate(inf_pmf):
                if px < 1e-15:
                    continue
                for yv, py in enumerate(prog_pmf):
                    if py < 1e-15:
                        continue
                    key = (s - x, t + x - yv, i + yv)
                    nxt[key] = nxt.get(key, 0.0) + pr * px * py
        dist = nxt
        means.append(sum(pr * (n - s) for (s, _, _), pr in dist.items()))
    pmf = np.zeros(n + 1)
    for (s, _, _), pr in dist.items():
        pmf[n - s] += pr
    return np.array(means), pmf


def beta_binomial_posterior_mean(k, n, a=1.0, b=1.0):
    return (a + k) / (a + b + n)
