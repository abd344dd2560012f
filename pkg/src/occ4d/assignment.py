"""Exact maximum-weight bipartite matching and the strict-IoU matcher.

max_weight_matching optimizes, in order: total weight, number of matched
pairs, lexicographically smallest row-sorted pair sequence. Totals are
compared as correctly-rounded sums (math.fsum), so "tied" means the rounded
totals are equal. The optimum itself comes from scipy's exact solver; the
tie canonicalization only runs when a second optimal matching exists, which
a Murty-style probe detects.
"""

from __future__ import annotations

import math
from typing import Optional

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import NonFiniteWeight, WeightOutOfRange

Matching = list[tuple[int, int]]

# Caps the tie-canonicalization search. Tie structures from IoU matrices are
# tiny; the cap only matters for adversarial all-equal matrices, where the
# greedy incumbent below is already canonical.
_TIE_NODE_BUDGET = 4000


def _validate_weights(w, *, upper: Optional[float] = None) -> np.ndarray:
    arr = np.asarray(w, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"weight matrix must be 2-D, got shape {arr.shape}")
    if not np.isfinite(arr).all():
        raise NonFiniteWeight("weight matrix contains NaN or infinity")
    if arr.size and arr.min() < 0:
        raise WeightOutOfRange(f"weights must be >= 0, got {arr.min()}")
    if upper is not None and arr.size and arr.max() > upper:
        raise WeightOutOfRange(f"weights must be <= {upper}, got {arr.max()}")
    return arr


def threshold_matching(iou) -> Matching:
    """All (row, col) pairs with IoU strictly above 0.5.

    Entries must lie in [0, 1]. The result is always one-to-one: two
    segments cannot each overlap a third by more than half.
    """
    arr = _validate_weights(iou, upper=1.0)
    rows, cols = np.nonzero(arr > 0.5)
    return [(int(r), int(c)) for r, c in zip(rows, cols)]


def _solve(masked: np.ndarray, admissible: np.ndarray) -> Matching:
    """One scipy solve; returns only admissible pairs, sorted by row."""
    rows, cols = linear_sum_assignment(masked, maximize=True)
    return [(int(r), int(c)) for r, c in zip(rows, cols) if admissible[r, c]]


def _total(masked: np.ndarray, pairs: Matching) -> float:
    return math.fsum(masked[r, c] for r, c in pairs)


def _best_completion_total(
    masked: np.ndarray, admissible: np.ndarray, rows: list[int], cols: list[int]
) -> float:
    """Best achievable total over a row/col subset."""
    if not rows or not cols:
        return 0.0
    sub = masked[np.ix_(rows, cols)]
    sub_adm = admissible[np.ix_(rows, cols)]
    if not sub_adm.any():
        return 0.0
    pairs = _solve(sub, sub_adm)
    return math.fsum(sub[r, c] for r, c in pairs)


def _has_tied_alternative(
    masked: np.ndarray, admissible: np.ndarray, best: Matching, vstar: float
) -> bool:
    """True if some matching other than `best` reaches vstar.

    Murty partition: any distinct matching omits at least one edge of
    `best`, so banning each edge in turn (with the earlier ones forced)
    covers all alternatives.
    """
    n_rows, n_cols = masked.shape
    for i, banned in enumerate(best):
        forced = best[:i]
        forced_rows = {r for r, _ in forced}
        forced_cols = {c for _, c in forced}
        rows = [r for r in range(n_rows) if r not in forced_rows]
        cols = [c for c in range(n_cols) if c not in forced_cols]
        sub = masked[np.ix_(rows, cols)].copy()
        sub_adm = admissible[np.ix_(rows, cols)].copy()
        br = rows.index(banned[0])
        bc = cols.index(banned[1])
        sub[br, bc] = 0.0
        sub_adm[br, bc] = False
        if not sub_adm.any():
            alt = 0.0
        else:
            pairs = _solve(sub, sub_adm)
            alt = math.fsum(sub[r, c] for r, c in pairs)
        total = math.fsum([masked[r, c] for r, c in forced] + [alt])
        if total == vstar:
            return True
    return False


def _better_candidate(cand: Matching, incumbent: Matching) -> bool:
    if len(cand) != len(incumbent):
        return len(cand) > len(incumbent)
    return cand < incumbent


def _canonical_tied(
    masked: np.ndarray, admissible: np.ndarray, vstar: float, seed: Matching
) -> Matching:
    """Enumerate optimal matchings, keeping the (cardinality, lex) best.

    Depth-first over rows; each node either assigns the row one admissible
    column or skips it. Branches that cannot reach vstar are pruned with a
    subproblem solve. A node budget bounds adversarial inputs; the seed
    solution is the incumbent so exhaustion still returns an optimum.
    """
    n_rows, n_cols = masked.shape
    incumbent = sorted(seed)
    nodes = 0

    def dfs(row: int, used_cols: set, fixed: Matching, fixed_weights: list):
        nonlocal incumbent, nodes
        if nodes > _TIE_NODE_BUDGET:
            return
        nodes += 1
        if row == n_rows:
            if math.fsum(fixed_weights) == vstar and _better_candidate(
                fixed, incumbent
            ):
                incumbent = list(fixed)
            return
        rest_rows = list(range(row + 1, n_rows))
        options: list[Optional[int]] = [
            c for c in range(n_cols) if c not in used_cols and admissible[row, c]
        ]
        options.append(None)
        for c in options:
            if c is None:
                step_weight: list = []
                avail = [cc for cc in range(n_cols) if cc not in used_cols]
            else:
                step_weight = [masked[row, c]]
                avail = [cc for cc in range(n_cols) if cc not in used_cols and cc != c]
            bound = math.fsum(
                fixed_weights
                + step_weight
                + [_best_completion_total(masked, admissible, rest_rows, avail)]
            )
            if bound < vstar:
                continue
            if c is None:
                dfs(row + 1, used_cols, fixed, fixed_weights)
            else:
                used_cols.add(c)
                fixed.append((row, c))
                dfs(row + 1, used_cols, fixed, fixed_weights + step_weight)
                fixed.pop()
                used_cols.remove(c)

    dfs(0, set(), [], [])
    return incumbent


def max_weight_matching(w, min_weight: float = 0.0) -> Matching:
    """Maximum-weight one-to-one matching over edges with weight > min_weight.

    Returns (row, col) pairs sorted by row. Ties on total weight prefer more
    matched pairs, then the lexicographically smallest pair sequence.
    """
    arr = _validate_weights(w)
    if not (min_weight >= 0.0):
        raise ValueError(f"min_weight must be >= 0, got {min_weight}")
    if arr.size == 0:
        return []
    admissible = arr > min_weight
    if not admissible.any():
        return []
    masked = np.where(admissible, arr, 0.0)
    best = _solve(masked, admissible)
    vstar = _total(masked, best)
    if not _has_tied_alternative(masked, admissible, best, vstar):
        return sorted(best)
    return _canonical_tied(masked, admissible, vstar, best)
