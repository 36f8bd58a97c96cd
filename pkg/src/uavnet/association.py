"""Per-cluster user association: exact max-min scheduling by branch and bound.

Maximizes the minimum per-user average rate over binary slot assignments,
subject to per-user connectivity (at least tau slots) and per-slot capacity
(at most c_max users).  Because rates are nonnegative and the connectivity
constraint is one-sided, serving an extra user never lowers the optimum, so
only oversubscribed instances force choices and every slot can be filled to
capacity.

Two exact engines alternate under growing node budgets because their hard
cases are disjoint.  Branch and cut on the epigraph MILP (HiGHS, zero gap)
bounds tightly when per-slot rate structure decides the schedule.  The
combinatorial search branches on which n - c_max users each slot excludes,
pruned by fractional waterfilling of the unavoidable per-slot removal mass
and by the integer-count bound that charges a user absorbing k exclusions
its k cheapest remaining rates; the count bound closes the near-symmetric
instances whose LP relaxation plateaus an integrality gap above the optimum.
Budgets count solver nodes rather than seconds so reruns stay bit-identical
under load.  Instances that exhaust every budgeted rung finish with a coarse
pruning slack, still far below any reported digit.
The QoS floor Gamma*tau*dt >= r_on never changes the arg-max of the max-min
objective, so it is checked on the optimum and reported as a flag instead of
constraining the search; callers treat a failed flag as a relaxed round.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations

import numpy as np
from scipy.optimize import Bounds, LinearConstraint, milp

from .clustering import InfeasibilityError


@dataclass
class AssociationMatrix:
    j: np.ndarray  # (N, T) binary
    tau_req: int
    qos_met: bool = True

    def __post_init__(self) -> None:
        self.j = np.asarray(self.j, dtype=np.int8)

    def validate(self, c_max: int) -> None:
        if np.any((self.j != 0) & (self.j != 1)):
            raise ValueError("association entries must be binary")
        if np.any(self.j.sum(axis=1) < self.tau_req):
            raise ValueError("a user falls short of its connectivity slots")
        if np.any(self.j.sum(axis=0) > c_max):
            raise ValueError("a slot exceeds the user capacity")


def _cyclic_schedule(n: int, t: int, tau: int, c_max: int) -> np.ndarray:
    """Feasible fallback: tau consecutive slots per user, wrapped around."""
    j = np.zeros((n, t), dtype=np.int8)
    start = 0
    for u in range(n):
        for i in range(tau):
            j[u, (start + i) % t] = 1
        start = (start + tau) % t
    # wrapped placement keeps slot load <= ceil(n*tau/t) <= c_max
    if np.any(j.sum(axis=0) > c_max):
        raise InfeasibilityError("capacity: cyclic fallback exceeded c_max")
    return j


def _greedy_incumbent(rates: np.ndarray, tau: int, c_max: int) -> np.ndarray:
    """All-ones minus per-slot exclusions of the richest users, then swap search.

    Associating an extra slot never hurts under the at-least-tau formulation,
    so only slots with more users than capacity force choices.  The swap pass
    repeatedly tries to hand the current minimum user one more slot at the
    expense of a user that can afford the loss.
    """
    n, t = rates.shape
    if n <= c_max:
        return np.ones((n, t), dtype=np.int8)
    m_ex = n - c_max
    cap_ex = t - tau  # per-user exclusion budget keeps tau reachable
    j = np.ones((n, t), dtype=np.int8)
    totals = rates.sum(axis=1).astype(float)
    exc = np.zeros(n, dtype=int)
    for s in range(t):
        eligible = np.nonzero(exc < cap_ex)[0]
        order = eligible[np.argsort(-totals[eligible], kind="stable")]
        out = order[:m_ex]
        if len(out) < m_ex:
            return _cyclic_schedule(n, t, tau, c_max)
        j[out, s] = 0
        totals[out] -= rates[out, s]
        exc[out] += 1
    for _ in range(4 * n * t):
        avg = (j * rates).sum(axis=1)
        u = int(np.argmin(avg))
        cur_min = float(avg[u])
        best = None
        for s in np.nonzero(j[u] == 0)[0]:
            for v in np.nonzero(j[:, s] == 1)[0]:
                if v == u or j[v].sum() - 1 < tau:
                    continue
                na = avg.astype(float).copy()
                na[u] += rates[u, s]
                na[v] -= rates[v, s]
                nm = float(na.min())
                if nm > cur_min + 1e-15 and (best is None or nm > best[0]):
                    best = (nm, s, v)
        if best is None:
            break
        _, s, v = best
        j[u, s] = 1
        j[v, s] = 0
    return j


def solve_association(
    per_slot_rates: np.ndarray,
    tau: int,
    c_max: int,
    r_on: float,
    serve_slots: int,
    slot_duration: float = 1.0,
) -> tuple[AssociationMatrix, float]:
    """Exact optimum of the per-cluster max-min association problem.

    per_slot_rates[n, t] are the Eq.-9 summands under the fixed trajectory
    and resources; returns the binary matrix and the achieved min average
    rate in bits/s.
    """
    rates = np.asarray(per_slot_rates, dtype=float)
    n, t = rates.shape
    if t != serve_slots:
        raise ValueError("per_slot_rates width must equal serve_slots")
    if tau > t:
        raise InfeasibilityError(
            f"connectivity: tau={tau} exceeds the {t} slots of this round"
        )
    if n * tau > c_max * t:
        raise InfeasibilityError(
            f"capacity: {n} users x tau={tau} exceed c_max={c_max} x {t} slots"
        )

    scale = float(rates.max())
    if scale <= 0.0:
        j = _cyclic_schedule(n, t, tau, c_max)
        qos = r_on <= 0.0
        return AssociationMatrix(j=j, tau_req=tau, qos_met=qos), 0.0
    r = rates / scale  # O(1) magnitudes: stable LP tolerances and pruning

    def finish(j: np.ndarray, gamma_scaled: float):
        gamma = gamma_scaled * scale
        qos_floor = r_on / (tau * slot_duration)
        qos_met = gamma >= qos_floor * (1.0 - 1e-9)
        assoc = AssociationMatrix(j=j.astype(np.int8), tau_req=tau, qos_met=qos_met)
        assoc.validate(c_max)
        return assoc, gamma

    def exact_gamma(j: np.ndarray) -> float:
        return float(((j * r).sum(axis=1) / t).min())

    # capacity never binds: every user taking every slot is optimal
    if n <= c_max:
        ones = np.ones((n, t), dtype=np.int8)
        return finish(ones, exact_gamma(ones))

    best_j = _greedy_incumbent(r, tau, c_max)
    best_g = exact_gamma(best_j)

    def take(j: np.ndarray | None) -> None:
        nonlocal best_j, best_g
        if j is not None:
            g = exact_gamma(j)
            if g > best_g:
                best_j, best_g = j, g

    # Escalation ladder: branch-and-cut and the combinatorial search have
    # disjoint hard cases (slot-structured vs near-symmetric), so alternate
    # them under growing node budgets.  Budgets count nodes, not seconds,
    # keeping reruns bit-identical regardless of machine load.  The last
    # rung trades proof precision for termination: a 1e-6 then 1e-4 pruning
    # slack on rates prescaled to unit maximum, far below any reported digit
    for milp_nodes, dfs_nodes, dfs_eps in (
        (600, 5_000, 1e-9),
        (5_000, 100_000, 1e-6),
        (None, None, 1e-4),
    ):
        if milp_nodes is not None:
            j_milp, proven = _milp_schedule(r, tau, c_max, best_g, milp_nodes)
            take(j_milp)
            if proven:
                return finish(best_j, best_g)
        j_dfs, g_dfs, complete = _column_search(
            r, tau, c_max, best_j, best_g, node_budget=dfs_nodes, eps=dfs_eps
        )
        take(j_dfs)
        if complete:
            return finish(best_j, best_g)
    return finish(best_j, best_g)  # unreachable: the last rung has no budget


def _milp_schedule(
    r: np.ndarray,
    tau: int,
    c_max: int,
    gamma_floor: float,
    node_limit: int,
) -> tuple[np.ndarray | None, bool]:
    """Branch-and-cut attempt on the epigraph form, budgeted by node count.

    Variables are the n*t binaries plus the epigraph level Gamma.  Slot sums
    are pinned to c_max: rates are nonnegative and the connectivity bound is
    one-sided, so a saturated optimum always exists.  gamma_floor comes from
    a feasible incumbent and is therefore a valid lower bound on Gamma.
    Returns (schedule or None, proven optimal).  On the node limit the best
    incumbent found is still returned so the next rung starts warm.
    """
    n, t = r.shape
    nt = n * t
    c = np.zeros(nt + 1)
    c[-1] = -1.0
    rows, lb, ub = [], [], []
    for u in range(n):
        row = np.zeros(nt + 1)
        row[u * t:(u + 1) * t] = r[u] / t
        row[-1] = -1.0
        rows.append(row)
        lb.append(0.0)
        ub.append(np.inf)
        row = np.zeros(nt + 1)
        row[u * t:(u + 1) * t] = 1.0
        rows.append(row)
        lb.append(float(tau))
        ub.append(float(t))
    for s in range(t):
        row = np.zeros(nt + 1)
        row[s::t] = 1.0
        row[-1] = 0.0  # the stride above touches the Gamma column at s=0
        rows.append(row)
        lb.append(float(c_max))
        ub.append(float(c_max))
    gamma_ub = float((r.sum(axis=1) / t).min())
    bounds = Bounds(
        np.concatenate([np.zeros(nt), [gamma_floor * (1.0 - 1e-9)]]),
        np.concatenate([np.ones(nt), [gamma_ub]]),
    )
    integrality = np.concatenate([np.ones(nt, dtype=int), [0]])
    res = milp(
        c=c,
        constraints=LinearConstraint(np.array(rows), lb, ub),
        integrality=integrality,
        bounds=bounds,
        options={"mip_rel_gap": 0.0, "node_limit": node_limit},
    )
    if res.x is None:
        return None, False
    j = np.round(res.x[:nt]).reshape(n, t).astype(np.int8)
    ok = (
        np.all((j == 0) | (j == 1))
        and np.all(j.sum(axis=1) >= tau)
        and np.all(j.sum(axis=0) <= c_max)
    )
    if not ok:
        return None, False
    return j, res.status == 0


def _column_search(
    r: np.ndarray,
    tau: int,
    c_max: int,
    j_init: np.ndarray,
    gamma_init: float,
    node_budget: int | None = None,
    eps: float = 1e-9,
) -> tuple[np.ndarray, float, bool]:
    """Depth-first search over per-slot exclusion sets with relaxation bounds.

    Valid because filling every slot to capacity is optimal: each slot
    excludes exactly m_ex = n - c_max users, and a user may be excluded at
    most t - tau times.  Nodes are bounded by the waterfilling and the
    integer-count relaxations; subtrees within eps of the incumbent are
    pruned.  Stops after node_budget nodes; the returned flag tells whether
    the search ran to completion.
    """
    n, t = r.shape
    m_ex = n - c_max
    cap_ex = t - tau
    totals = r.sum(axis=1)
    # decide the slots with the largest unavoidable loss first
    colmin = np.sort(r, axis=0)[:m_ex].sum(axis=0)
    order = np.argsort(-colmin, kind="stable")
    suffix = np.zeros(t + 1)
    suffix[:t] = np.cumsum(colmin[order][::-1])[::-1]
    # cheap[d][u, k]: least rate mass user u can lose to k exclusions among
    # the undecided slots order[d:]; steep[d][u, k]: the most it can absorb
    cheap = [np.stack([np.concatenate(([0.0], np.cumsum(np.sort(r[u, order[d:]]))))
                       for u in range(n)]) for d in range(t + 1)]
    steep = [np.stack([np.concatenate(([0.0], np.cumsum(np.sort(r[u, order[d:]])[::-1])))
                       for u in range(n)]) for d in range(t + 1)]

    best_gamma = gamma_init
    best_excl: list[tuple[int, ...]] | None = None
    chosen: list[tuple[int, ...]] = [()] * t
    loss = np.zeros(n)
    exc = np.zeros(n, dtype=int)
    nodes = 0

    def waterfill(a: np.ndarray, pool: float) -> float:
        # max of min(a - z) with z >= 0, sum z = pool: drain from the top,
        # the min only drops once every user is leveled
        amin = float(a.min())
        headroom = float(a.sum()) - n * amin
        return (amin - max(0.0, pool - headroom) / n) / t

    def count_bound(a: np.ndarray, depth: int) -> float:
        # drop the one-per-slot matching but keep integer exclusion counts.
        # A level v is reachable only if (i) handing each user max{k :
        # a_u - cheap(u, k) >= v} exclusions, capped by budget, covers the
        # remaining demand, and (ii) the unavoidable per-slot removal mass
        # can be absorbed with every user held at >= v, each contributing at
        # most min(a_u - v, its kcap steepest rates).  The largest feasible
        # v bounds the subtree; some user attains its level, so v is a
        # candidate from the loss tables
        m = t - depth
        need = m * m_ex
        if need == 0:
            return float(a.min()) / t
        kcap = np.minimum(cap_ex - exc, m)
        val = a[:, None] - cheap[depth]  # (n, m+1), nonincreasing in k
        absorb_cap = steep[depth][np.arange(n), kcap]
        pool = suffix[depth]
        cand = np.unique(val)
        lo, hi = 0, len(cand) - 1
        best = -np.inf
        while lo <= hi:
            mid = (lo + hi) // 2
            v = cand[mid]
            if val[:, 0].min() >= v:
                counts = np.minimum((val >= v).sum(axis=1) - 1, kcap)
                slack = np.minimum(a - v, absorb_cap)
                feasible = int(counts.sum()) >= need and float(slack.sum()) >= pool
            else:
                feasible = False
            if feasible:
                best = v
                lo = mid + 1
            else:
                hi = mid - 1
        return float(best) / t

    def bound(a: np.ndarray, depth: int) -> float:
        b = waterfill(a, suffix[depth])
        if b <= best_gamma + eps:
            return b
        return min(b, count_bound(a, depth))

    class _Exhausted(Exception):
        pass

    def dfs(depth: int) -> None:
        nonlocal best_gamma, best_excl, nodes
        nodes += 1
        if node_budget is not None and nodes > node_budget:
            raise _Exhausted
        if depth == t:
            g = float((totals - loss).min()) / t
            if g > best_gamma:
                best_gamma = g
                best_excl = list(chosen)
            return
        if (t - depth) * m_ex > int((cap_ex - exc).sum()):
            return  # not enough exclusion budget left to fill the slots
        a = totals - loss
        if bound(a, depth) <= best_gamma + eps:
            return
        s = order[depth]
        elig = np.nonzero(exc < cap_ex)[0]
        if len(elig) < m_ex:
            return
        kids = []
        for sub in combinations(elig.tolist(), m_ex):
            child = a.copy()
            for u in sub:
                child[u] -= r[u, s]
                exc[u] += 1
            cb = bound(child, depth + 1)
            for u in sub:
                exc[u] -= 1
            if cb > best_gamma + eps:
                kids.append((cb, sub))
        kids.sort(key=lambda k: -k[0])
        for cb, sub in kids:
            if cb <= best_gamma + eps:  # incumbent may have improved
                continue
            for u in sub:
                loss[u] += r[u, s]
                exc[u] += 1
            chosen[depth] = sub
            dfs(depth + 1)
            for u in sub:
                loss[u] -= r[u, s]
                exc[u] -= 1

    complete = True
    try:
        dfs(0)
    except _Exhausted:
        complete = False
    if best_excl is None:
        return j_init, gamma_init, complete
    j = np.ones((n, t), dtype=np.int8)
    for depth, sub in enumerate(best_excl):
        for u in sub:
            j[u, order[depth]] = 0
    return j, best_gamma, complete


def association_to_csv(assoc: AssociationMatrix, path) -> None:
    import csv

    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["user", "slot", "associated"])
        n, t = assoc.j.shape
        for u in range(n):
            for s in range(t):
                writer.writerow([u, s, int(assoc.j[u, s])])
