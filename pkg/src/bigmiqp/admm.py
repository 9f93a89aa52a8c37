"""Distributed proximal-ADMM solver over an allocation splitting of the
coupling rows.

Each coupling system sum_i C_i x_i <= d is rewritten with per-agent
allocation vectors w_i: C_i x_i <= w_i and sum_i w_i = d.  Every iteration,
all agents solve their proximal x-minimization in parallel (Jacobi: reading
only iteration-t data), big-M coefficients are tightened from the fresh
local iterate, allocations are exchanged, and the shared dual is updated
with a damped step.  A second stage re-solves with binaries fixed and the
original M values through the same loop.
"""

from __future__ import annotations

import dataclasses
import time
from dataclasses import dataclass, field

import numpy as np

from . import model as _m
from . import qp as _qp
from .model import MiqpProblem, Solution, Status
from .tighten import SolveReport, int_distance, recover_binaries, update_M


@dataclass
class AdmmParams:
    rho: float = 0.1
    beta: float = 0.5
    gamma: float = 1.0
    t_max: int = 100
    eps: float = 1e-3
    xi: float = 0.01
    penalty_weight: float = 1.0
    stage2_tol: float = 1e-6
    stage2_t_max: int = 2000
    stage2_rho: float = None  # type: ignore[assignment]  # default 10x rho
    stage2_beta: float = None  # type: ignore[assignment]  # default just above the gate
    stage2_gamma: float = None  # type: ignore[assignment]
    qp_tol: float = 1e-8
    qp_max_iter: int = 20000
    single_loop: bool = True
    tighten_every: int = 1  # apply the M update on every k-th iteration
    tighten_warmup: int = 0  # iterations to let the allocations settle first
    override_gate: bool = False
    feas_tol: float = 1e-6
    # binary-recovery heuristics: size of the candidate-pattern pool kept from
    # the first stage, local-search rounds around the accepted pattern, and
    # the iteration cap for the warm-started pattern-scoring QP (infeasible
    # patterns otherwise burn the full budget just to be rejected)
    pool_size: int = 5
    improve_rounds: int = 4
    scorer_max_iter: int = 4000

    def __post_init__(self):
        if self.rho <= 0:
            raise ValueError("rho must be positive")
        if self.beta <= 0:
            raise ValueError("beta must be positive")
        if not (0.0 < self.gamma < 2.0):
            raise ValueError("gamma must lie in (0, 2)")
        if not (0.0 < self.xi < 1.0):
            raise ValueError("xi must be in (0, 1)")

    def gate_bound(self, n_agents: int) -> float:
        return self.rho * (n_agents / (2.0 - self.gamma) - 1.0)

    def check_gate(self, n_agents: int) -> None:
        """Convergence gate: beta must strictly exceed rho(N/(2-gamma) - 1)."""
        bound = self.gate_bound(n_agents)
        if not self.beta > bound:
            if self.override_gate:
                return
            raise ValueError(
                f"beta={self.beta} fails the convergence gate: need beta > "
                f"{bound} for {n_agents} agents (rho={self.rho}, gamma={self.gamma})"
            )


@dataclass
class AdmmState:
    w: list  # per-agent allocation vectors, length m_c each
    lam: np.ndarray  # shared dual, length m_c
    x_bar: list  # per-agent primal iterates
    t: int = 0

    def copy(self) -> "AdmmState":
        return AdmmState(
            w=[wi.copy() for wi in self.w],
            lam=self.lam.copy(),
            x_bar=[xi.copy() for xi in self.x_bar],
            t=self.t,
        )


def neighbor_map(p: MiqpProblem) -> list:
    """Agents sharing a nonzero coupling row are neighbors."""
    support = [set(np.where(np.any(Ci != 0.0, axis=1))[0]) for Ci in p.C]
    out = []
    for i in range(p.N):
        nbrs = sorted(
            j for j in range(p.N) if j != i and support[i] & support[j]
        )
        out.append(tuple(nbrs))
    return out


def split_coupling(p: MiqpProblem, w_init: list = None) -> AdmmState:
    """Initial state: equal allocation split w_i = d/N, zero dual."""
    if w_init is None:
        w = [p.d / p.N for _ in range(p.N)]
    else:
        w = [np.asarray(wi, dtype=float).copy() for wi in w_init]
        total = sum(w) if w else np.zeros(p.m_c)
        if w and not np.allclose(total, p.d, atol=1e-9):
            raise ValueError("initial allocations must sum to d")
    x0 = []
    for a in p.agents:
        lo = np.where(np.isfinite(a.lb), a.lb, 0.0)
        hi = np.where(np.isfinite(a.ub), a.ub, 0.0)
        x0.append(np.clip(np.zeros(a.n), lo, np.maximum(lo, hi)))
    return AdmmState(w=w, lam=np.zeros(p.m_c), x_bar=x0, t=0)


class _AgentWorkspace:
    """Cached QP solver for one agent; rebuilt when its M values change."""

    def __init__(self, p: MiqpProblem, i: int, params: AdmmParams):
        self.p = p
        self.i = i
        self.params = params
        self.touched = [int(r) for r in np.where(np.any(p.C[i] != 0.0, axis=1))[0]]
        self.solver = None
        self.fc = None
        self._key = None

    def _m_key(self, stage2: bool, fixed) -> tuple:
        agent = self.p.agents[self.i]
        ms = () if stage2 else tuple(e.M_current for e in agent.bigm_entries)
        # pinned VALUES are per-solve vector updates on the same workspace;
        # only the pinned column set is structural
        fx = tuple(sorted(fixed)) if fixed else ()
        return (stage2, ms, fx)

    def _build(self, stage2: bool, fixed) -> None:
        p, i, params = self.p, self.i, self.params
        agent = p.agents[i]
        n, T = agent.n, len(self.touched)
        nz = n + T
        Q = np.zeros((nz, nz))
        Q[:n, :n] = agent.Q
        Q[n:, n:] = (params.beta + params.rho) * np.eye(T)
        lb = np.concatenate([agent.lb, np.full(T, -np.inf)])
        ub = np.concatenate([agent.ub, np.full(T, np.inf)])
        for c in agent.binary_cols:
            lb[c], ub[c] = 0.0, 1.0
        if stage2:
            A_loc, b_loc = agent.A, agent.b
            C_i, _ = p.C[i], p.d
        else:
            A_loc, b_loc = _m.effective_local(agent)
            C_i = p.C[i].copy()
            for e in agent.bigm_entries:
                if e.coupling:
                    C_i[e.row, e.col] = e.polarity.sign * e.M_current
        A = np.zeros((agent.m + T, nz))
        A[: agent.m, :n] = A_loc
        b = np.concatenate([b_loc, np.zeros(T)])
        for k, r in enumerate(self.touched):
            A[agent.m + k, :n] = C_i[r]
            A[agent.m + k, n + k] = -1.0
        penalty, weights = [], []
        if not stage2:
            for e in agent.bigm_entries:
                if e.coupling:
                    penalty.append(agent.m + self.touched.index(e.row))
                else:
                    penalty.append(e.row)
                weights.append(params.penalty_weight)
        for r, w in zip(agent.soft_rows, agent.soft_weights):
            penalty.append(r)
            weights.append(w)
        order = sorted(range(len(penalty)), key=lambda k: penalty[k])
        spec = _qp.QpSpec(
            Q=Q,
            q=np.zeros(nz),
            A=A,
            b=b,
            lb=lb,
            ub=ub,
            penalty_rows=tuple(penalty[k] for k in order),
            w_pen=tuple(weights[k] for k in order),
        )
        if fixed is not None:
            # pinned binaries are eliminated, not bound-pinned: leaving their
            # big-M coefficients in the matrix wrecks the scaling and stalls
            # the splitting iteration
            self.fc = _qp.FixedColumnSolver(spec, sorted(fixed), tol=params.qp_tol, max_iter=params.qp_max_iter)
            self.solver = None
        else:
            self.fc = None
            self.solver = _qp.QpSolver(spec, tol=params.qp_tol, max_iter=params.qp_max_iter)

    def solve(self, q_ext: np.ndarray, stage2: bool, fixed) -> _qp.QpResult:
        key = self._m_key(stage2, fixed)
        if self._key is None or key != self._key:
            # tightening changes only coefficient values, so the previous
            # iterate remains an excellent warm start for the rebuilt solver;
            # carry it over when the row/column structure is unchanged
            prev = self.fc if getattr(self, "fc", None) is not None else self.solver
            state = None
            if prev is not None and self._key is not None and key[0] == self._key[0] and key[2] == self._key[2]:
                state = prev.export_warm()
            self._build(stage2, fixed)
            target = self.fc if self.fc is not None else self.solver
            target.import_warm(state)
            self._key = key
        if fixed is not None:
            vals = [float(fixed[c]) for c in sorted(fixed)]
            return self.fc.solve(vals, q=q_ext, warm=True)
        self.solver.update_linear(q_ext)
        return self.solver.solve(warm=True)


def _alloc_target(p: MiqpProblem, state: AdmmState, i: int, d_eff: np.ndarray) -> np.ndarray:
    """Residual allocation available to agent i: d - sum_{j != i} w_j."""
    g = d_eff.copy()
    for j in range(p.N):
        if j != i:
            g -= state.w[j]
    return g


def agent_step(
    i: int,
    state: AdmmState,
    p: MiqpProblem,
    params: AdmmParams,
    stage2: bool = False,
    fixed: dict = None,
    workspace: _AgentWorkspace = None,
    d_eff: np.ndarray = None,
) -> tuple:
    """Agent i's proximal minimization over (x_i, w_i), reading only
    iteration-t state.

    Coupling rows agent i does not touch reduce to a scalar quadratic in w_i
    with a nonnegativity bound; they are solved in closed form and only the
    touched rows enter the QP.
    """
    if workspace is None:
        workspace = _AgentWorkspace(p, i, params)
    if d_eff is None:
        d_eff = _m.effective_coupling(p)[1] if not stage2 else p.d
    agent = p.agents[i]
    beta, rho = params.beta, params.rho
    g = _alloc_target(p, state, i, d_eff)
    w_prev = state.w[i]
    target = (beta * w_prev + rho * g - state.lam) / (beta + rho)
    w_new = np.maximum(0.0, target)
    touched = workspace.touched
    q_ext = np.concatenate(
        [agent.q, -(beta * w_prev[touched] + rho * g[touched] - state.lam[touched])]
    )
    res = workspace.solve(q_ext, stage2, fixed)
    if res.status is _qp.QpStatus.PRIMAL_INFEASIBLE:
        raise InfeasibleSubproblem(i)
    x_new = res.x[: agent.n].copy()
    w_new[touched] = res.x[agent.n :]
    return x_new, w_new


class InfeasibleSubproblem(Exception):
    def __init__(self, agent_index: int):
        super().__init__(f"agent {agent_index} subproblem is primal infeasible")
        self.agent_index = agent_index


def dual_update(state: AdmmState, p: MiqpProblem, params: AdmmParams, d_eff: np.ndarray = None) -> np.ndarray:
    """Damped dual ascent on the allocation-conservation residual."""
    if d_eff is None:
        d_eff = p.d
    residual = sum(state.w) - d_eff if state.w else -d_eff
    return state.lam + params.gamma * params.rho * residual


def _max_int_dist(p: MiqpProblem, xs: list) -> float:
    worst = 0.0
    for i, a in enumerate(p.agents):
        for c in a.binary_cols:
            worst = max(worst, int_distance(float(xs[i][c])))
    return worst


def _run_loop(
    p: MiqpProblem,
    params: AdmmParams,
    state: AdmmState,
    stage2: bool,
    fixed: list = None,
    t_max: int = None,
    recorder=None,
    trace: list = None,
    tighten: bool = True,
    alloc_tol: float = None,
    candidates: dict = None,
):
    """Shared iteration body for both stages.  Returns (state, converged)."""
    spaces = [_AgentWorkspace(p, i, params) for i in range(p.N)]
    fixed_maps = None
    if fixed is not None:
        fixed_maps = [
            {c: float(fixed[i][j]) for j, c in enumerate(a.binary_cols)}
            for i, a in enumerate(p.agents)
        ]
    t_max = t_max or params.t_max
    has_bin = p.total_binaries() > 0 and not stage2
    for _ in range(t_max):
        d_eff = p.d if stage2 else _m.effective_coupling(p)[1]
        results = [
            agent_step(
                i,
                state,
                p,
                params,
                stage2=stage2,
                fixed=fixed_maps[i] if fixed_maps else None,
                workspace=spaces[i],
                d_eff=d_eff,
            )
            for i in range(p.N)
        ]
        new_x = [r[0] for r in results]
        new_w = [r[1] for r in results]
        x_change = 0.0
        dual_res = 0.0
        for i in range(p.N):
            dx = float(np.max(np.abs(new_x[i] - state.x_bar[i]), initial=0.0))
            x_change = max(x_change, dx)
            dual_res = max(dual_res, dx)
            if p.m_c:
                dual_res = max(dual_res, float(np.max(np.abs(new_w[i] - state.w[i]), initial=0.0)))
        int_dist = _max_int_dist(p, new_x) if not stage2 else 0.0
        at_rest = x_change <= params.eps
        due = state.t + 1 > params.tighten_warmup and (state.t + 1) % params.tighten_every == 0
        if tighten and has_bin and ((params.single_loop and due) or at_rest):
            for i, agent in enumerate(p.agents):
                for e in agent.bigm_entries:
                    e.M_current = update_M(e, float(np.clip(new_x[i][e.col], 0.0, 1.0)), params.xi, params.eps)
        state = AdmmState(w=new_w, lam=state.lam, x_bar=new_x, t=state.t + 1)
        state.lam = dual_update(state, p, params, d_eff=d_eff)
        if candidates is not None and has_bin and int_dist <= 0.05:
            pattern = tuple(
                int(round(float(np.clip(new_x[i][c], 0.0, 1.0))))
                for i, a in enumerate(p.agents)
                for c in a.binary_cols
            )
            if pattern not in candidates:
                candidates[pattern] = (state.copy(), _m.objective_value(p, new_x))
        primal_res = float(np.max(np.abs(sum(state.w) - d_eff), initial=0.0)) if p.m_c else 0.0
        rec = {
            "t": state.t,
            "stage": 2 if stage2 else 1,
            "primal_res": primal_res,
            "dual_res": dual_res,
            "int_dist": int_dist,
            "obj": _m.objective_value(p, new_x),
        }
        if trace is not None:
            trace.append(rec)
        if recorder is not None:
            recorder(rec)
        if stage2 or not has_bin:
            tol = params.stage2_tol if stage2 else params.eps
            if primal_res <= tol and dual_res <= tol:
                return state, True
        elif int_dist <= params.eps and at_rest:
            if alloc_tol is None or primal_res <= alloc_tol:
                return state, True
    return state, False


def _stage2_params(params: AdmmParams, n_agents: int) -> AdmmParams:
    """Second-stage parameter set: by default a larger step (10x rho) with
    beta placed just above the convergence gate, which drives the allocation
    residual down much faster than the stage-1 settings."""
    gamma = params.stage2_gamma if params.stage2_gamma is not None else params.gamma
    rho = params.stage2_rho if params.stage2_rho is not None else 10.0 * params.rho
    if params.stage2_beta is not None:
        beta = params.stage2_beta
    else:
        bound = rho * (n_agents / (2.0 - gamma) - 1.0)
        beta = max(1.05 * bound, 0.1 * rho)
    return dataclasses.replace(params, rho=rho, beta=beta, gamma=gamma)


def solve_distributed(p: MiqpProblem, params: AdmmParams = None, recorder=None) -> SolveReport:
    """Single-loop distributed solve: proximal ADMM with per-iteration big-M
    tightening, binary recovery on exit, then a fixed-binary second stage
    through the same loop with the original M values and tightening off."""
    params = params or AdmmParams()
    issues = _m.validate(p)
    if issues:
        raise ValueError("invalid problem: " + "; ".join(issues))
    params.check_gate(p.N)
    t0 = time.perf_counter()
    work = p.copy()
    trace = []
    state = split_coupling(work)
    if work.total_binaries() == 0:
        try:
            state, converged = _run_loop(
                work, params, state, stage2=False, recorder=recorder, trace=trace
            )
        except InfeasibleSubproblem:
            return _infeasible_report(p, state, trace, t0)
        status = Status.OPTIMAL_MI if converged else Status.MAX_ITER
        return SolveReport(
            status=status,
            objective=_m.objective_value(work, state.x_bar),
            x=state.x_bar,
            binaries=[np.zeros(0) for _ in work.agents],
            iterations=state.t,
            trace=trace,
            runtime=time.perf_counter() - t0,
        )
    params2 = _stage2_params(params, p.N)
    # a residual of stage2_tol still allows an objective undershoot of the
    # same order through slight infeasibility; stop an order tighter so the
    # reported objective is never materially below the true fixed-binary
    # optimum
    params2 = dataclasses.replace(params2, stage2_tol=params.stage2_tol / 10.0)
    # the paper's exit (integrality + settled x) can fire while the
    # allocations still disagree, which silently starves some agent of
    # coupling budget; require allocation consistency as well
    alloc_tol = params.eps * max(1.0, float(np.max(np.abs(work.d), initial=0.0)))
    converged = False
    binaries = None
    s2_failed = False
    # distinct near-integral patterns visited during the first stage; the
    # iterate can pass through the optimal pattern and then tighten itself
    # into a worse basin, so each one is kept as a recovery candidate
    pool = {}
    feas_tol = max(params.feas_tol * 10, params.stage2_tol * 10)
    # if the recovered binaries turn out infeasible, the first-stage exit
    # fired before the allocations were consistent; resume with the
    # allocation residual added to the exit test
    for attempt in range(3):
        try:
            state, converged = _run_loop(
                work, params, state, stage2=False, recorder=recorder, trace=trace,
                alloc_tol=alloc_tol, candidates=pool,
            )
        except InfeasibleSubproblem:
            return _infeasible_report(p, state, trace, t0)
        binaries = recover_binaries(work, state.x_bar, params.eps, params.feas_tol)
        primary = tuple(int(v) for bs in binaries for v in bs)
        cand_list = [(binaries, state)]
        if not converged:
            # the loop ran out of iterations without a clean exit, so the
            # final iterate is not trusted over the patterns seen on the way
            ranked = sorted(pool.items(), key=lambda kv: kv[1][1])
            for pat, (snap, _obj) in ranked[: params.pool_size]:
                if pat != primary:
                    cand_list.append((_split_pattern(work, pat), snap))
        best = None
        s2_failed = True
        repair_seeds = []
        qp_cands = []
        count_rows = _m.pure_binary_coupling_rows(p)
        for cand_bin, snap in cand_list:
            # a pattern breaking a binary-only coupling row can never be
            # rescued by the continuous second stage; send it to repair
            if _count_violation(p, cand_bin, count_rows) > feas_tol:
                repair_seeds.append((cand_bin, snap))
            else:
                qp_cands.append((cand_bin, snap))
        scorer = None
        if repair_seeds or len(qp_cands) > 1 or (qp_cands and params.improve_rounds > 0):
            scorer = _PatternScorer(
                p, count_rows, params.qp_tol, min(params.qp_max_iter, params.scorer_max_iter)
            )
        if len(qp_cands) > 1:
            # the score is the exact fixed-binary objective, so ranking by it
            # and verifying in order means the first accepted candidate is the
            # best one; infeasible scores are dropped without a stage-2 run
            qp_cands.sort(key=lambda cs: scorer.score(cs[0]))
            qp_cands = [cs for cs in qp_cands if np.isfinite(scorer.score(cs[0]))]
        for pos, (cand_bin, snap) in enumerate(qp_cands):
            cap = None if pos == 0 else EVAL_T_MAX
            outcome = _eval_candidate(work, p, params, params2, cand_bin, snap, feas_tol, t_max=cap)
            if outcome is None:
                continue
            s2_failed = False
            obj, xs, s2_converged, ok = outcome
            if ok:
                best = (obj, xs, cand_bin, s2_converged)
                break
        for cand_bin, snap in repair_seeds[:2]:
            repaired = _repair_excess_binaries(
                work, p, params, params2, cand_bin, snap, count_rows, scorer, feas_tol
            )
            if repaired is not None:
                s2_failed = False
                if best is None or repaired[0] < best[0] - 1e-9:
                    best = repaired
        if best is not None and params.improve_rounds > 0:
            improved = _improve_pattern(
                work, p, params, params2, best, state, scorer, count_rows, feas_tol,
                max_rounds=params.improve_rounds,
            )
            if improved is not None:
                best = improved
        if best is not None:
            obj, xs, binaries, s2_converged = best
            status = Status.OPTIMAL_MI if (converged and s2_converged) else Status.FEASIBLE_MI
            return SolveReport(
                status=status,
                objective=obj,
                x=xs,
                binaries=binaries,
                iterations=state.t,
                trace=trace,
                stage2_status="SOLVED" if s2_converged else "MAX_ITER",
                runtime=time.perf_counter() - t0,
            )
        if not converged:
            break
        alloc_tol = alloc_tol / 10.0
    status = Status.RELAXED_ONLY if converged else Status.MAX_ITER
    return SolveReport(
        status=status,
        objective=_m.objective_value(work, state.x_bar),
        x=state.x_bar,
        binaries=binaries,
        iterations=state.t,
        trace=trace,
        stage2_status="INFEASIBLE" if s2_failed else "NOT_FEASIBLE",
        runtime=time.perf_counter() - t0,
    )


# iteration cap when scoring alternative binary candidates: feasible
# assignments settle quickly under the second-stage parameters, while
# infeasible ones would otherwise burn the full second-stage budget
EVAL_T_MAX = 250


def _eval_candidate(work, p, params, params2, cand_bin, snap, feas_tol, t_max: int = None):
    """Run the fixed-binary second stage for one candidate assignment.

    Returns (objective, x, stage2_converged, feasible) or None when the
    fixed-binary subproblems are infeasible.
    """
    try:
        s2_state, s2_converged = _run_loop(
            work,
            params2,
            snap.copy(),
            stage2=True,
            fixed=cand_bin,
            t_max=t_max or params.stage2_t_max,
            tighten=False,
        )
    except InfeasibleSubproblem:
        return None
    xs = s2_state.x_bar
    obj = _m.objective_value(work, xs)
    sol = Solution(x=xs, binaries=cand_bin, objective=obj, status=Status.OPTIMAL_MI)
    ok, _ = _m.check_feasible(p, sol, feas_tol)
    return obj, xs, s2_converged, ok


def _count_violation(p: MiqpProblem, bins: list, count_rows: list) -> float:
    worst = 0.0
    for k in count_rows:
        lhs = sum(float(p.C[i][k, list(a.binary_cols)] @ bins[i]) for i, a in enumerate(p.agents))
        worst = max(worst, lhs - float(p.d[k]))
    return worst


class _PatternScorer:
    """Fixed-binary objective of a candidate assignment, with the binary-only
    coupling rows disabled (their feasibility is decided by arithmetic, not by
    the QP).  One warm-started solver is reused across patterns."""

    def __init__(self, p: MiqpProblem, count_rows: list, qp_tol: float, qp_max_iter: int):
        relaxed = p.copy()
        for k in count_rows:
            relaxed.d[k] = np.inf
        slots = [(i, c) for i, a in enumerate(p.agents) for c in a.binary_cols]
        spec, offsets, _ = _qp.stack(relaxed, use_initial_M=True, relax_binaries=False, penalize_bigm=False)
        cols = [offsets[i] + c for (i, c) in slots]
        self.solver = _qp.FixedColumnSolver(spec, cols, tol=qp_tol, max_iter=qp_max_iter)
        self._cache = {}

    def score(self, bins: list) -> float:
        flat = np.concatenate(bins) if bins else np.zeros(0)
        key = tuple(int(round(v)) for v in flat)
        if key in self._cache:
            return self._cache[key]
        res = self.solver.solve(flat, warm=True)
        out = float(res.objective) if res.status is _qp.QpStatus.SOLVED else float("inf")
        self._cache[key] = out
        return out


def _repair_excess_binaries(work, p, params, params2, cand_bin, snap, count_rows, scorer, feas_tol, max_flips: int = 6):
    """Greedy repair of a pattern that over-fills binary-only coupling rows:
    flip off one contributing binary at a time, scoring each flip with the
    fixed-binary objective, then verify the winner through the distributed
    second stage."""
    slots = [(i, j, c) for i, a in enumerate(p.agents) for j, c in enumerate(a.binary_cols)]
    current = [b.copy() for b in cand_bin]
    for _ in range(max_flips):
        if _count_violation(p, current, count_rows) <= feas_tol:
            break
        bad = [
            k
            for k in count_rows
            if sum(float(p.C[i][k, list(a.binary_cols)] @ current[i]) for i, a in enumerate(p.agents))
            > float(p.d[k]) + feas_tol
        ]
        flips = [
            (i, j)
            for (i, j, c) in slots
            if current[i][j] > 0.5 and any(p.C[i][k, c] > 0.0 for k in bad)
        ]
        if not flips:
            return None
        best_flip = None
        best_score = float("inf")
        for (i, j) in flips:
            child = [b.copy() for b in current]
            child[i][j] = 0.0
            score = scorer.score(child)
            if score < best_score - 1e-9:
                best_score = score
                best_flip = child
        if best_flip is None:
            return None
        current = best_flip
    if _count_violation(p, current, count_rows) > feas_tol:
        return None
    outcome = _eval_candidate(work, p, params, params2, current, snap, feas_tol)
    if outcome is None:
        return None
    obj, xs, s2_converged, ok = outcome
    if not ok:
        return None
    return obj, xs, current, s2_converged


def _improve_pattern(work, p, params, params2, best, snap, scorer, count_rows, feas_tol, max_rounds: int = 4):
    """Single-flip local search around an accepted assignment.  Each flip is
    scored with the fixed-binary objective; a strictly better neighbor is
    adopted and the search repeats.  The final pattern is verified through the
    distributed second stage; returns an improved best tuple or None."""
    obj, _, bins, _ = best
    current = [b.copy() for b in bins]
    cur_score = scorer.score(current)
    changed = False
    for _ in range(max_rounds):
        best_flip = None
        best_score = cur_score
        for i, a in enumerate(p.agents):
            for j in range(len(a.binary_cols)):
                child = [b.copy() for b in current]
                child[i][j] = 1.0 - child[i][j]
                if _count_violation(p, child, count_rows) > feas_tol:
                    continue
                s = scorer.score(child)
                if s < best_score - 1e-7:
                    best_score = s
                    best_flip = child
        if best_flip is None:
            break
        current = best_flip
        cur_score = best_score
        changed = True
    if not changed:
        return None
    outcome = _eval_candidate(work, p, params, params2, current, snap, feas_tol)
    if outcome is None:
        return None
    obj2, xs2, s2_converged, ok = outcome
    if ok and obj2 < obj - 1e-9:
        return obj2, xs2, current, s2_converged
    return None


def _split_pattern(p: MiqpProblem, pattern: tuple) -> list:
    """Flat binary pattern -> per-agent arrays aligned with binary_cols."""
    out = []
    pos = 0
    for a in p.agents:
        k = len(a.binary_cols)
        out.append(np.array([float(v) for v in pattern[pos : pos + k]]))
        pos += k
    return out


def _infeasible_report(p: MiqpProblem, state: AdmmState, trace: list, t0: float) -> SolveReport:
    return SolveReport(
        status=Status.INFEASIBLE,
        objective=float("inf"),
        x=[np.zeros(a.n) for a in p.agents],
        binaries=[np.zeros(len(a.binary_cols)) for a in p.agents],
        iterations=state.t + 1,
        trace=trace,
        runtime=time.perf_counter() - t0,
    )
