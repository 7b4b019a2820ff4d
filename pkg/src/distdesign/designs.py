"""Candidate design construction: greedy nearest-neighbor matching, caliper
matching, optimal caliper-constrained matching, and iterative
subclassification. All methods are deterministic given their inputs."""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field

import numpy as np

from .glm import GlmError, two_sample_t
from .propensity import ScoreVector, linearize

MATCHED_PAIRS = "matched-pairs"
SUBCLASSES = "subclasses"

METHOD_SUBCLASS = "subclass"
METHOD_NN = "nn"
METHOD_CALIPER = "caliper"
METHOD_OPTIMAL = "optimal-caliper"
ALL_METHODS = (METHOD_SUBCLASS, METHOD_NN, METHOD_CALIPER, METHOD_OPTIMAL)


class DesignError(ValueError):
    pass


@dataclass(frozen=True)
class DesignVector:
    """Length-N group encoding of a candidate design: positive integers label
    matched pairs or subclasses, 0 marks a dropped subject."""

    assignments: np.ndarray
    kind: str                       # matched-pairs | subclasses
    designer_id: int | str
    method: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        a = np.asarray(self.assignments, dtype=np.int64)
        if a.ndim != 1:
            raise DesignError("assignments must be a vector")
        if (a < 0).any():
            raise DesignError("assignments must be nonnegative")
        object.__setattr__(self, "assignments", a)

    @property
    def n_groups(self) -> int:
        return int(self.assignments.max(initial=0))

    @property
    def n_retained(self) -> int:
        return int((self.assignments > 0).sum())

    def relabel(self, designer_id) -> "DesignVector":
        return DesignVector(self.assignments, self.kind, designer_id, self.method, self.params)

    def validate(self, w: np.ndarray) -> None:
        """Check the structural invariants against a treatment vector."""
        a = self.assignments
        k = self.n_groups
        ids = np.unique(a[a > 0])
        if k and not np.array_equal(ids, np.arange(1, k + 1)):
            raise DesignError("group ids must be contiguous 1..K")
        for g in ids:
            sel = a == g
            n_t = int((w[sel] == 1).sum())
            n_c = int((w[sel] == 0).sum())
            if self.kind == MATCHED_PAIRS:
                if n_t != 1 or n_c != 1:
                    raise DesignError(f"pair {g} has {n_t} treated / {n_c} control subjects")
            elif n_t < 1 or n_c < 1:
                raise DesignError(f"subclass {g} is missing a treatment arm")


# ---------------------------------------------------------------------------
# Greedy matching


def _greedy_match(logit, w, mask, caliper):
    """Greedy 1:1 matching without replacement on |logit difference|; treated
    processed in descending score order, ties broken by lower subject index.
    A treated unit whose nearest unmatched control is beyond the caliper is
    dropped."""
    logit = np.asarray(logit, dtype=np.float64)
    w = np.asarray(w)
    mask = np.asarray(mask, dtype=bool)
    t_idx = np.flatnonzero(mask & (w == 1))
    c_idx = np.flatnonzero(mask & (w == 0))
    if t_idx.size == 0 or c_idx.size == 0:
        raise DesignError("both groups must retain at least one subject")
    if c_idx.size < t_idx.size:
        raise DesignError(
            f"{t_idx.size} treated vs {c_idx.size} control subjects retained; "
            "trim more aggressively or use subclassification"
        )

    t_sorted = t_idx[np.lexsort((t_idx, -logit[t_idx]))]
    c_sorted = c_idx[np.lexsort((c_idx, logit[c_idx]))]
    c_vals = logit[c_sorted]
    nc = c_sorted.size

    alive = np.ones(nc, dtype=bool)
    jump_l = np.arange(nc)          # candidate alive position at-or-left
    jump_r = np.arange(nc)          # candidate alive position at-or-right

    def alive_left(pos):
        path = []
        while pos >= 0 and not alive[pos]:
            path.append(pos)
            nxt = jump_l[pos]
            pos = pos - 1 if nxt == pos else nxt
        for q in path:
            jump_l[q] = pos if pos >= 0 else 0
        return pos

    def alive_right(pos):
        path = []
        while pos < nc and not alive[pos]:
            path.append(pos)
            nxt = jump_r[pos]
            pos = pos + 1 if nxt == pos else nxt
        for q in path:
            jump_r[q] = pos if pos < nc else nc - 1
        return pos

    assignments = np.zeros(logit.shape[0], dtype=np.int64)
    pair = 0
    for ti in t_sorted:
        tv = logit[ti]
        ins = int(np.searchsorted(c_vals, tv))
        best_pos = -1
        best_dist = np.inf
        for side_pos, step in ((alive_left(ins - 1), -1), (alive_right(ins), +1)):
            if side_pos < 0 or side_pos >= nc:
                continue
            d = abs(c_vals[side_pos] - tv)
            if d > best_dist:
                continue
            # lowest subject index among alive controls at this exact value
            cand_pos = side_pos
            val = c_vals[side_pos]
            q = side_pos + step
            while 0 <= q < nc and c_vals[q] == val:
                if alive[q] and c_sorted[q] < c_sorted[cand_pos]:
                    cand_pos = q
                q += step
            if best_pos < 0 or d < best_dist or c_sorted[cand_pos] < c_sorted[best_pos]:
                best_dist = d
                best_pos = cand_pos
        if best_pos < 0 or best_dist > caliper:
            continue                # dropped: no unmatched control within the caliper
        pair += 1
        assignments[ti] = pair
        assignments[c_sorted[best_pos]] = pair
        alive[best_pos] = False
    return assignments


def nearest_neighbor_match(logit_scores, w, mask) -> DesignVector:
    """Greedy one-to-one nearest-neighbor matching on the logit score."""
    assignments = _greedy_match(logit_scores, w, mask, np.inf)
    return DesignVector(
        assignments=assignments, kind=MATCHED_PAIRS, designer_id=0,
        method=METHOD_NN, params={},
    )


def caliper_match(logit_scores, w, mask, caliper_multiplier: float = 0.2) -> DesignVector:
    """Greedy matching restricted to a caliper of caliper_multiplier times the
    standard deviation of the retained logit scores."""
    logit = np.asarray(logit_scores, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    sd = float(logit[mask].std(ddof=1)) if mask.sum() > 1 else 0.0
    caliper = caliper_multiplier * sd
    assignments = _greedy_match(logit, w, mask, caliper)
    return DesignVector(
        assignments=assignments, kind=MATCHED_PAIRS, designer_id=0,
        method=METHOD_CALIPER,
        params={"caliper": caliper, "caliper_multiplier": caliper_multiplier},
    )


# ---------------------------------------------------------------------------
# Optimal caliper-constrained matching


def _interval_feasible(t_vals, c_vals, caliper):
    """Can every treated value be matched to a distinct control within the
    caliper? Admissible controls form an interval of the sorted control array
    per treated unit; greedy earliest-deadline assignment decides feasibility."""
    nt = t_vals.shape[0]
    slack = caliper * 1e-12 + 1e-15     # keep exact-boundary pairs despite rounding
    lo = np.searchsorted(c_vals, t_vals - caliper - slack, side="left")
    hi = np.searchsorted(c_vals, t_vals + caliper + slack, side="right")    # exclusive
    if (lo >= hi).any():
        return False
    items = sorted(zip(lo.tolist(), hi.tolist()))
    heap: list[int] = []
    pos = 0
    matched = 0
    for j in range(c_vals.shape[0]):
        while pos < nt and items[pos][0] <= j:
            heapq.heappush(heap, items[pos][1])
            pos += 1
        while heap and heap[0] <= j:
            heapq.heappop(heap)     # this interval's deadline passed: infeasible
        if heap:
            heapq.heappop(heap)
            matched += 1
            if matched == nt:
                return True
    return matched == nt


def _distances_in(t_vals, c_vals, lo, hi, limit):
    """All treated-control distances d with lo < d <= hi, or None if more than
    limit exist."""
    out: list[float] = []
    for tv in t_vals:
        spans = (
            (np.searchsorted(c_vals, tv - hi, side="left"),
             np.searchsorted(c_vals, tv - lo, side="left")),
            (np.searchsorted(c_vals, tv + lo, side="right"),
             np.searchsorted(c_vals, tv + hi, side="right")),
        )
        for a, b in spans:
            if limit is not None and len(out) + (b - a) > limit:
                return None
            for j in range(a, b):
                d = abs(tv - c_vals[j])
                if lo < d <= hi:
                    out.append(float(d))
    return out


def _min_feasible_caliper(t_vals, c_vals):
    """Smallest treated-control |difference| at which a perfect matching of
    all treated units exists: bisection on the caliper value, finished exactly
    over the few candidate distances left in the bracketing interval."""
    if _interval_feasible(t_vals, c_vals, 0.0):
        return 0.0
    lo_val = 0.0                    # infeasible
    hi_val = float(max(t_vals.max(), c_vals.max()) - min(t_vals.min(), c_vals.min()))
    cands = None
    for _ in range(200):
        cands = _distances_in(t_vals, c_vals, lo_val, hi_val, limit=64)
        if cands is not None:
            break
        mid = 0.5 * (lo_val + hi_val)
        if mid <= lo_val or mid >= hi_val:
            cands = _distances_in(t_vals, c_vals, lo_val, hi_val, limit=None)
            break
        if _interval_feasible(t_vals, c_vals, mid):
            hi_val = mid
        else:
            lo_val = mid
    for d in sorted(set(cands or [])):
        if _interval_feasible(t_vals, c_vals, d):
            return d
    return hi_val


def _min_cost_caliper_assignment(t_vals, c_vals, caliper):
    """Minimum total |difference| matching of every treated unit onto a
    distinct control using only pairs within the caliper: successive shortest
    augmenting paths with dual potentials (Dijkstra on reduced costs)."""
    nt = t_vals.shape[0]
    nc = c_vals.shape[0]
    slack = caliper * 1e-12 + 1e-15                 # keep exact-boundary edges
    lo = np.searchsorted(c_vals, t_vals - caliper - slack, side="left")
    hi = np.searchsorted(c_vals, t_vals + caliper + slack, side="right")
    u = np.zeros(nt)
    vpot = np.zeros(nc)
    match_c = np.full(nc, -1, dtype=np.int64)
    match_t = np.full(nt, -1, dtype=np.int64)

    for start in range(nt):
        dist = np.full(nc, np.inf)
        prev_t = np.full(nc, -1, dtype=np.int64)
        done = np.zeros(nc, dtype=bool)
        heap: list[tuple[float, int]] = []
        for j in range(lo[start], hi[start]):
            rc = abs(t_vals[start] - c_vals[j]) - u[start] - vpot[j]
            if rc < dist[j]:
                dist[j] = rc
                prev_t[j] = start
                heapq.heappush(heap, (rc, j))
        end_j = -1
        d_end = np.inf
        while heap:
            d, j = heapq.heappop(heap)
            if done[j] or d > dist[j]:
                continue
            if match_c[j] < 0:
                end_j = j
                d_end = d
                break
            done[j] = True
            ti = match_c[j]
            base = d - (abs(t_vals[ti] - c_vals[j]) - u[ti] - vpot[j])
            for j2 in range(lo[ti], hi[ti]):
                if done[j2]:
                    continue
                rc = base + abs(t_vals[ti] - c_vals[j2]) - u[ti] - vpot[j2]
                if rc < dist[j2]:
                    dist[j2] = rc
                    prev_t[j2] = ti
                    heapq.heappush(heap, (rc, j2))
        if end_j < 0:
            raise DesignError("internal: matching infeasible at the chosen caliper")
        for j in np.flatnonzero(done):
            delta = d_end - dist[j]
            vpot[j] -= delta
            u[match_c[j]] += delta
        u[start] += d_end
        j = end_j
        while True:
            ti = prev_t[j]
            next_j = match_t[ti]
            match_c[j] = ti
            match_t[ti] = j
            if ti == start:
                break
            j = next_j
    return match_t


def _min_cost_caliper_assignment_dp(t_vals, c_vals, caliper):
    """Same minimum as the augmenting-path solver, via the order-preserving
    dynamic program: for absolute-difference costs on a line an optimal
    non-crossing matching always exists (uncrossing two pairs never raises the
    cost and keeps both within the caliper), so sorted treated units match
    monotonically into sorted controls. Used for large instances."""
    order = np.argsort(t_vals, kind="stable")
    ts = t_vals[order]
    nt = ts.shape[0]
    nc = c_vals.shape[0]
    slack = caliper * 1e-12 + 1e-15
    choice = np.zeros((nt, nc), dtype=bool)
    dp = np.zeros(nc + 1)
    for i in range(nt):
        cost = np.abs(ts[i] - c_vals)
        cost[cost > caliper + slack] = np.inf
        cand = dp[:-1] + cost           # match sorted-treated i to control j
        newdp = np.empty(nc + 1)
        newdp[0] = np.inf
        np.minimum.accumulate(cand, out=newdp[1:])
        choice[i] = cand <= newdp[1:]
        dp = newdp
    if not np.isfinite(dp[nc]):
        raise DesignError("internal: matching infeasible at the chosen caliper")
    match_sorted = np.empty(nt, dtype=np.int64)
    j = nc
    for i in range(nt - 1, -1, -1):
        while j > 0 and not choice[i, j - 1]:
            j -= 1
        match_sorted[i] = j - 1
        j -= 1
    match_t = np.empty(nt, dtype=np.int64)
    match_t[order] = match_sorted
    return match_t


# above this many treated-control pairs, switch from augmenting paths to the
# order-preserving dynamic program
_DP_CUTOVER = 250_000


def optimal_caliper_match(logit_scores, w, mask, inflation: float = 1.0) -> DesignVector:
    """Find the smallest caliper admitting a perfect matching of all retained
    treated subjects, then the minimum-total-distance matching within it."""
    logit = np.asarray(logit_scores, dtype=np.float64)
    w = np.asarray(w)
    mask = np.asarray(mask, dtype=bool)
    t_idx = np.flatnonzero(mask & (w == 1))
    c_idx = np.flatnonzero(mask & (w == 0))
    if t_idx.size == 0 or c_idx.size == 0:
        raise DesignError("both groups must retain at least one subject")
    if c_idx.size < t_idx.size:
        raise DesignError(
            f"{t_idx.size} treated vs {c_idx.size} control subjects retained; "
            "trim more aggressively or use subclassification"
        )
    c_sorted = c_idx[np.lexsort((c_idx, logit[c_idx]))]
    c_vals = logit[c_sorted]
    t_vals = logit[t_idx]

    c_star = _min_feasible_caliper(t_vals, c_vals)
    caliper = c_star * inflation
    if t_vals.shape[0] * c_vals.shape[0] > _DP_CUTOVER:
        match_t = _min_cost_caliper_assignment_dp(t_vals, c_vals, caliper)
    else:
        match_t = _min_cost_caliper_assignment(t_vals, c_vals, caliper)

    assignments = np.zeros(logit.shape[0], dtype=np.int64)
    for pair, pos in enumerate(np.argsort(t_idx), start=1):
        assignments[t_idx[pos]] = pair
        assignments[c_sorted[match_t[pos]]] = pair
    total = float(np.abs(t_vals - c_vals[match_t]).sum())
    return DesignVector(
        assignments=assignments, kind=MATCHED_PAIRS, designer_id=0,
        method=METHOD_OPTIMAL,
        params={"caliper": float(caliper), "inflation": inflation, "total_distance": total},
    )


# ---------------------------------------------------------------------------
# Iterative subclassification


@dataclass(frozen=True)
class SubclassParams:
    p_threshold: float = 0.15
    min_subclass: int = 50
    min_group: int = 30
    test_scale: str = "logit"       # logit | probability


def _split_point(values: np.ndarray) -> float:
    """Lower median; subjects with value <= it go to the low half."""
    s = np.sort(values)
    return float(s[(s.shape[0] + 1) // 2 - 1])


def _may_split(values, w_sub, params: SubclassParams):
    """Evaluate the split conditions for one subclass (values on logit scale);
    returns the decision and the split value."""
    med = _split_point(values)
    low = values <= med
    high = ~low
    if low.sum() < params.min_subclass or high.sum() < params.min_subclass:
        return False, med
    for half in (low, high):
        for arm in (0, 1):
            if (w_sub[half] == arm).sum() < params.min_group:
                return False, med
    test_vals = values if params.test_scale == "logit" else 1.0 / (1.0 + np.exp(-values))
    try:
        result = two_sample_t(test_vals[w_sub == 1], test_vals[w_sub == 0])
    except GlmError:
        return False, med           # degenerate scores: split ineligible
    return result.p_value < params.p_threshold, med


def iterative_subclassification(
    scores: ScoreVector | np.ndarray,
    w: np.ndarray,
    mask: np.ndarray,
    params: SubclassParams | None = None,
) -> DesignVector:
    """Split subclasses at their median score while the treated and control
    score means differ (Welch p-value below threshold) and both halves stay
    above the subclass and per-arm size floors. Subclass ids follow score
    order."""
    params = params or SubclassParams()
    v = scores.values if isinstance(scores, ScoreVector) else np.asarray(scores, dtype=np.float64)
    w = np.asarray(w)
    mask = np.asarray(mask, dtype=bool)
    idx = np.flatnonzero(mask)
    if idx.size < params.min_subclass:
        raise DesignError(
            f"{idx.size} retained subjects, below the subclass floor {params.min_subclass}"
        )
    for arm in (0, 1):
        if (w[idx] == arm).sum() < params.min_group:
            raise DesignError("a treatment arm is below the group floor before splitting")

    lv = linearize(v)
    final: list[np.ndarray] = []
    stack = [idx]
    while stack:
        sub = stack.pop()
        split, med = _may_split(lv[sub], w[sub], params)
        if not split:
            final.append(sub)
            continue
        low = sub[lv[sub] <= med]
        stack.append(sub[lv[sub] > med])
        stack.append(low)

    final.sort(key=lambda s: lv[s].min())
    assignments = np.zeros(v.shape[0], dtype=np.int64)
    for g, sub in enumerate(final, start=1):
        assignments[sub] = g
    return DesignVector(
        assignments=assignments, kind=SUBCLASSES, designer_id=0,
        method=METHOD_SUBCLASS,
        params={
            "p_threshold": params.p_threshold,
            "min_subclass": params.min_subclass,
            "min_group": params.min_group,
            "test_scale": params.test_scale,
        },
    )
