"""Sequential big-M tightening: the M-update rule, the centralized driver,
binary recovery from constraint activity, and the fixed-binary second stage.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import model as _m
from . import qp as _qp
from .model import BigMEntry, MiqpProblem, Polarity, Solution, Status


@dataclass
class TightenConfig:
    xi: float = 0.01
    eps: float = 1e-3
    t_max: int = 100
    qp_tol: float = 1e-8
    qp_max_iter: int = 20000
    penalty_weight: float = 1.0
    feas_tol: float = 1e-6

    def __post_init__(self):
        if not (0.0 < self.xi < 1.0):
            raise ValueError("xi must be in (0, 1)")
        if not (0.0 < self.eps < 0.5):
            raise ValueError("eps must be in (0, 0.5)")
        if self.t_max < 1:
            raise ValueError("t_max must be positive")


@dataclass
class SolveReport:
    status: Status
    objective: float
    x: list  # per-agent vectors
    binaries: list  # per-agent arrays aligned with binary_cols
    iterations: int
    trace: list = field(default_factory=list)
    stage2_status: str = ""
    runtime: float = 0.0

    def solution(self) -> Solution:
        return Solution(x=self.x, binaries=self.binaries, objective=self.objective, status=self.status)

    def to_dict(self) -> dict:
        return {
            "status": self.status.value,
            "objective": self.objective,
            "binaries": [[int(v) for v in bs] for bs in self.binaries],
            "x": [[float(v) for v in xi] for xi in self.x],
            "iterations": self.iterations,
            "stage2_status": self.stage2_status,
            "trace": self.trace,
        }


def int_distance(y: float) -> float:
    return min(abs(y), abs(y - 1.0))


def update_M(entry: BigMEntry, y_bar_r: float, xi: float, eps: float = 1e-3) -> float:
    """One tightening step for a single big-M row.

    Keeps M when the relaxed binary is within ``eps`` of {0, 1}; otherwise
    scales it by max(xi, a), where a is the activation value (the relaxed
    binary itself, or its complement for the (1 - delta) polarity).
    """
    if not (-eps <= y_bar_r <= 1.0 + eps):
        raise ValueError(f"relaxed binary value {y_bar_r} outside [-eps, 1+eps]")
    if int_distance(y_bar_r) < eps:
        return entry.M_current
    a = y_bar_r if entry.polarity is Polarity.DELTA else 1.0 - y_bar_r
    a = min(max(a, 0.0), 1.0)
    return entry.M_current * max(xi, a)


def _binary_values(p: MiqpProblem, xs: list) -> list:
    return [np.array([xs[i][c] for c in a.binary_cols]) for i, a in enumerate(p.agents)]


def _max_int_distance(p: MiqpProblem, xs: list) -> float:
    worst = 0.0
    for i, a in enumerate(p.agents):
        for c in a.binary_cols:
            worst = max(worst, int_distance(float(xs[i][c])))
    return worst


def _trace_M(p: MiqpProblem) -> dict:
    out = {}
    for i, a in enumerate(p.agents):
        for e in a.bigm_entries:
            scope = "c" if e.coupling else "l"
            out[f"{i}:{scope}{e.row}:{e.col}"] = float(e.M_current)
    return out


def recover_binaries(p: MiqpProblem, relaxed_x: list, eps: float, feas_tol: float = 1e-6) -> list:
    """Round near-integral binaries; otherwise test big-M constraint activity.

    For an undecided binary, each candidate value is substituted into all of
    its registered rows (with the ORIGINAL M) and checked against the current
    continuous iterate; 0 is preferred when both candidates satisfy.
    """
    out = []
    for i, agent in enumerate(p.agents):
        vals = np.zeros(len(agent.binary_cols))
        for j, c in enumerate(agent.binary_cols):
            y = float(relaxed_x[i][c])
            if int_distance(y) <= eps:
                vals[j] = round(min(max(y, 0.0), 1.0))
                continue
            entries = [e for e in agent.bigm_entries if e.col == c]
            feasible = {}
            for v in (0.0, 1.0):
                worst = 0.0
                for e in entries:
                    if e.coupling:
                        lhs = sum(p.C[k] @ relaxed_x[k] for k in range(p.N))[e.row]
                        lhs += p.C[i][e.row, c] * (v - y)
                        worst = max(worst, float(lhs - p.d[e.row]))
                    else:
                        lhs = agent.A[e.row] @ relaxed_x[i]
                        lhs += agent.A[e.row, c] * (v - y)
                        worst = max(worst, float(lhs - agent.b[e.row]))
                feasible[v] = worst
            if feasible[0.0] <= feas_tol:
                vals[j] = 0.0
            elif feasible[1.0] <= feas_tol:
                vals[j] = 1.0
            else:
                vals[j] = 0.0 if feasible[0.0] <= feasible[1.0] else 1.0
        out.append(vals)
    return out


def second_stage(p: MiqpProblem, binaries: list, qp_tol: float = 1e-8, qp_max_iter: int = 20000, x0=None) -> _qp.QpResult:
    """Fix the recovered binaries, restore the original M values, and re-solve
    the continuous QP with the big-M rows hard (soft rows stay penalized)."""
    spec, offsets, _ = _qp.stack(p, use_initial_M=True, relax_binaries=False, penalize_bigm=False)
    cols = []
    vals = []
    for i, agent in enumerate(p.agents):
        for j, c in enumerate(agent.binary_cols):
            cols.append(offsets[i] + c)
            vals.append(float(binaries[i][j]))
    solver = _qp.FixedColumnSolver(spec, cols, tol=qp_tol, max_iter=qp_max_iter)
    return solver.solve(vals, warm=False, x0=x0)


def solve_centralized(p: MiqpProblem, cfg: TightenConfig = None) -> SolveReport:
    """Algorithm: iterate {penalized relaxed solve; tighten M} until every
    relaxed binary is within eps of {0, 1}, then recover binaries and run the
    fixed-binary second stage against the original M values."""
    cfg = cfg or TightenConfig()
    issues = _m.validate(p)
    if issues:
        raise ValueError("invalid problem: " + "; ".join(issues))
    t0 = time.perf_counter()
    work = p.copy()
    trace = []
    converged = False
    xs = None
    res = None
    x_prev = None
    t = 0
    for t in range(1, cfg.t_max + 1):
        res = _qp.solve_penalized_relaxation(
            work, weights=cfg.penalty_weight, tol=cfg.qp_tol, max_iter=cfg.qp_max_iter, x0=x_prev
        )
        if res.status is _qp.QpStatus.PRIMAL_INFEASIBLE:
            return SolveReport(
                status=Status.INFEASIBLE,
                objective=float("inf"),
                x=[np.zeros(a.n) for a in work.agents],
                binaries=[np.zeros(len(a.binary_cols)) for a in work.agents],
                iterations=t,
                trace=trace,
                runtime=time.perf_counter() - t0,
            )
        x_prev = res.x
        xs = _qp.split_stacked(work, res.x)
        dist = _max_int_distance(work, xs)
        trace.append({"t": t, "obj": float(res.objective), "int_dist": float(dist), "M": _trace_M(work)})
        if dist <= cfg.eps:
            converged = True
            break
        for i, agent in enumerate(work.agents):
            for e in agent.bigm_entries:
                e.M_current = update_M(e, float(xs[i][e.col]), cfg.xi, cfg.eps)
    binaries = recover_binaries(work, xs, cfg.eps, cfg.feas_tol)
    stage2 = second_stage(work, binaries, qp_tol=cfg.qp_tol, qp_max_iter=cfg.qp_max_iter)
    runtime = time.perf_counter() - t0
    if stage2.status is _qp.QpStatus.SOLVED:
        xs_final = _qp.split_stacked(work, stage2.x)
        sol = Solution(x=xs_final, binaries=binaries, objective=float(stage2.objective), status=Status.OPTIMAL_MI)
        ok, _ = _m.check_feasible(p, sol, cfg.feas_tol * 10)
        status = (Status.OPTIMAL_MI if converged else Status.FEASIBLE_MI) if ok else Status.RELAXED_ONLY
        if not ok:
            xs_final = xs
        return SolveReport(
            status=status,
            objective=float(stage2.objective) if ok else float(res.objective),
            x=xs_final,
            binaries=binaries,
            iterations=t,
            trace=trace,
            stage2_status=stage2.status.value,
            runtime=runtime,
        )
    status = Status.RELAXED_ONLY if converged else Status.MAX_ITER
    return SolveReport(
        status=status,
        objective=float(res.objective),
        x=xs,
        binaries=binaries,
        iterations=t,
        trace=trace,
        stage2_status=stage2.status.value,
        runtime=runtime,
    )
