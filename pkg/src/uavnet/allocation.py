"""Bandwidth and power allocation on a fixed trajectory and association.

Per-slot rate is written B*psi with psi <= log2(1 + Psi) and the coupling
B*Psi <= p*g/N_o.  Two SCA devices make the program conic: the difference of
squares identity 2*B*psi = (B+psi)^2 - B^2 - psi^2 with the convex square
replaced by its tangent (a valid restriction), and a bilinear linearization
of B*Psi around the previous point (not a bound, so each step is followed by
slack tightening: psi is recomputed from the physical rate law and the loop
accepts a step only if the true worst average rate does not drop).

Internally bandwidth is in MHz, power in mW, rates in Mb/s so program
coefficients stay near unity.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import convex
from .channel import average_rates
from .clustering import InfeasibilityError
from .scenario import ScenarioConfig

B_SCALE = 1e6  # Hz per program bandwidth unit
P_SCALE = 1e-3  # W per program power unit
B_FLOOR = 1e3  # Hz; keeps 1/B terms conditioned on associated slots


@dataclass
class AllocationTable:
    """Bandwidth (Hz) and transmit power (W) per user and slot."""

    b: np.ndarray
    p: np.ndarray

    def __post_init__(self) -> None:
        self.b = np.asarray(self.b, dtype=float)
        self.p = np.asarray(self.p, dtype=float)
        if self.b.shape != self.p.shape:
            raise ValueError("bandwidth and power grids must have equal shape")

    def validate(self, assoc, cfg: ScenarioConfig, tol: float = 1e-9) -> None:
        j = np.asarray(assoc.j, dtype=bool)
        if np.any(self.b[~j] != 0.0) or np.any(self.p[~j] != 0.0):
            raise ValueError("allocation assigns resources on unassociated slots")
        if np.any(self.b < 0.0) or np.any(self.p < 0.0):
            raise ValueError("allocation contains negative entries")
        if np.any(self.p > cfg.p_user_max * (1.0 + tol)):
            raise ValueError("per-user power cap exceeded")
        if np.any(self.b.sum(axis=0) > cfg.b_total_max * (1.0 + tol)):
            raise ValueError("per-slot bandwidth budget exceeded")
        if np.any(self.p.sum(axis=0) > cfg.p_total_max * (1.0 + tol)):
            raise ValueError("per-slot power budget exceeded")


def init_allocation(assoc, cfg: ScenarioConfig) -> AllocationTable:
    """Equal split of both budgets among each slot's associated users."""
    j = np.asarray(assoc.j, dtype=float)
    m = j.sum(axis=0)
    share = np.where(m > 0, 1.0 / np.maximum(m, 1.0), 0.0)
    b = j * (cfg.b_total_max * share)[None, :]
    p = j * np.minimum(cfg.p_user_max, cfg.p_total_max * share)[None, :]
    return AllocationTable(b=b, p=p)


@dataclass
class ExpansionPoint:
    """Previous-iterate values the two linearizations hinge on (program units)."""

    b_hat: np.ndarray  # MHz
    psi_hat: np.ndarray  # b/s/Hz
    snr_hat: np.ndarray  # linear SNR


def expansion_point(alloc: AllocationTable, assoc, gain: np.ndarray,
                    cfg: ScenarioConfig) -> ExpansionPoint:
    j = np.asarray(assoc.j, dtype=bool)
    b = np.maximum(alloc.b, B_FLOOR) / B_SCALE
    with np.errstate(divide="ignore", invalid="ignore"):
        snr = np.where(j, alloc.p * gain / (np.maximum(alloc.b, B_FLOOR) * cfg.noise_psd), 0.0)
    psi = np.log2(1.0 + snr)
    return ExpansionPoint(b_hat=np.where(j, b, 0.0), psi_hat=psi, snr_hat=snr)


def square_tangent(b, psi, b_hat, psi_hat):
    """Tangent of (B+psi)^2 at the hat point; a global under-estimator."""
    anchor = b_hat + psi_hat
    return 2.0 * anchor * (b + psi) - anchor ** 2


def bilinear_tangent(b, snr, b_hat, snr_hat):
    """First-order model of B*Psi around the hat point (not one-sided)."""
    return b_hat * snr + snr_hat * b - b_hat * snr_hat


def tighten(alloc: AllocationTable, assoc, gain: np.ndarray,
            cfg: ScenarioConfig) -> np.ndarray:
    """Per-user true average rates implied by the physical rate law (b/s)."""
    return average_rates(assoc.j, alloc.b, alloc.p, gain, cfg, alloc.b.shape[1])


def _true_min(alloc: AllocationTable, assoc, gain, cfg) -> float:
    served = np.asarray(assoc.j).sum(axis=1) > 0
    if not served.any():
        return 0.0
    return float(tighten(alloc, assoc, gain, cfg)[served].min())


def solve_allocation_step(
    alloc0: AllocationTable,
    assoc,
    gain: np.ndarray,
    cfg: ScenarioConfig,
) -> tuple[AllocationTable, float, bool]:
    """One conic step around alloc0.  Returns (table, model Gamma b/s, stalled)."""
    j = np.asarray(assoc.j, dtype=bool)
    n, t = j.shape
    served = np.nonzero(j.any(axis=1))[0]
    if len(served) == 0:
        return alloc0, 0.0, True
    hat = expansion_point(alloc0, assoc, gain, cfg)
    pairs = [(int(u), int(s)) for u, s in zip(*np.nonzero(j))]
    idx = {pair: k for k, pair in enumerate(pairs)}
    gcoef = gain * P_SCALE / (cfg.noise_psd * B_SCALE)  # Psi * B' <= p' * gcoef

    prog = convex.ConvexProgram()
    bv = prog.add_var("b", len(pairs))
    pv = prog.add_var("p", len(pairs))
    se = prog.add_var("psi", len(pairs))
    snr = prog.add_var("snr", len(pairs))
    gam = prog.add_var("gamma")
    prog.maximize(gam[0])

    floor = B_FLOOR / B_SCALE
    for (u, s), k in idx.items():
        prog.add_ineq(-bv[k], -floor)
        prog.add_ineq(-pv[k], 0.0)
        prog.add_ineq(pv[k], cfg.p_user_max / P_SCALE)
        prog.add_ineq(-se[k], 0.0)
        prog.add_ineq(-snr[k], 0.0)
        # psi <= log2(1 + Psi)
        prog.add_log2_bound(se[k], 1.0 + snr[k])
        # linearized coupling B*Psi <= p*g/N_o
        prog.add_ineq(
            hat.b_hat[u, s] * snr[k] + hat.snr_hat[u, s] * bv[k] - gcoef[u, s] * pv[k],
            hat.b_hat[u, s] * hat.snr_hat[u, s],
        )
    for s in range(t):
        users_here = [idx[(u, s)] for u in range(n) if j[u, s]]
        if not users_here:
            continue
        b_sum = convex.LinExpr()
        p_sum = convex.LinExpr()
        for k in users_here:
            b_sum = b_sum + bv[k]
            p_sum = p_sum + pv[k]
        prog.add_ineq(b_sum, cfg.b_total_max / B_SCALE)
        prog.add_ineq(p_sum, cfg.p_total_max / P_SCALE)
    for u in served:
        slots = [s for s in range(t) if j[u, s]]
        lin = convex.LinExpr()
        parts = []
        for s in slots:
            k = idx[(u, s)]
            anchor = hat.b_hat[u, s] + hat.psi_hat[u, s]
            lin = lin + 2.0 * anchor * (bv[k] + se[k]) - anchor ** 2
            parts.extend([bv[k], se[k]])
        # sum of squares + 2*T*Gamma <= tangent of sum (B+psi)^2
        prog.add_sq_leq(parts, lin - 2.0 * t * gam[0])

    report = convex.solve(prog, tol=1e-9)
    if report.status != convex.OPTIMAL:
        return alloc0, 0.0, True

    b_new = np.zeros((n, t))
    p_new = np.zeros((n, t))
    for (u, s), k in idx.items():
        b_new[u, s] = max(float(np.atleast_1d(report.value(bv))[k]), 0.0) * B_SCALE
        p_new[u, s] = float(np.clip(np.atleast_1d(report.value(pv))[k], 0.0,
                                    cfg.p_user_max / P_SCALE)) * P_SCALE
    # exact cap projection; solver residuals are ~1e-9 so this barely moves
    b_tot = b_new.sum(axis=0)
    over = b_tot > cfg.b_total_max
    if over.any():
        b_new[:, over] *= cfg.b_total_max / b_tot[over]
    p_tot = p_new.sum(axis=0)
    over = p_tot > cfg.p_total_max
    if over.any():
        p_new[:, over] *= cfg.p_total_max / p_tot[over]
    table = AllocationTable(b=b_new, p=p_new)
    return table, report.value(gam) * B_SCALE, False


def sca_allocation(
    alloc0: AllocationTable,
    assoc,
    gain: np.ndarray,
    cfg: ScenarioConfig,
) -> tuple[AllocationTable, list[float]]:
    """Safeguarded SCA on the true worst average rate.

    History holds the true objective after each accepted iterate, starting
    from the initialization.  The best-seen table is returned.
    """
    cur = alloc0
    cur_true = _true_min(cur, assoc, gain, cfg)
    best, best_true = cur, cur_true
    history = [cur_true]
    for _ in range(cfg.sca_max_iters):
        new_alloc, _, stalled = solve_allocation_step(cur, assoc, gain, cfg)
        if stalled:
            break
        new_true = _true_min(new_alloc, assoc, gain, cfg)
        if new_true < cur_true * (1.0 - 1e-9) - 1e-12:
            break
        delta = new_true - cur_true
        cur, cur_true = new_alloc, new_true
        history.append(cur_true)
        if cur_true > best_true:
            best, best_true = cur, cur_true
        if delta <= cfg.sca_tol * max(1.0, cur_true):
            break
    return best, history


def allocation_to_csv(alloc: AllocationTable, path) -> None:
    import csv

    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["user", "slot", "bandwidth_hz", "power_w"])
        n, t = alloc.b.shape
        for u in range(n):
            for s in range(t):
                if alloc.b[u, s] > 0.0 or alloc.p[u, s] > 0.0:
                    writer.writerow([u, s, f"{alloc.b[u, s]:.9g}", f"{alloc.p[u, s]:.9g}"])


__all__ = [
    "AllocationTable",
    "ExpansionPoint",
    "InfeasibilityError",
    "allocation_to_csv",
    "bilinear_tangent",
    "expansion_point",
    "init_allocation",
    "sca_allocation",
    "solve_allocation_step",
    "square_tangent",
    "tighten",
]
