"""Ground-truth solver by exhaustive binary enumeration, plus the random
instance generator and accuracy experiment that compares the tightening
solvers against enumeration.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from . import qp as _qp
from .model import (
    AgentBlock,
    BigMEntry,
    MiqpProblem,
    Polarity,
    Solution,
    Status,
    pure_binary_coupling_rows,
)

DEFAULT_BINARY_BUDGET = 20


@dataclass
class OracleResult:
    best: Solution  # None when every leaf is infeasible
    objective: float
    leaves: list  # (assignment tuple, status string, objective)
    enumerated: int


def _binary_slots(p: MiqpProblem) -> list:
    return [(i, c) for i, a in enumerate(p.agents) for c in a.binary_cols]


def solve_exhaustive(p: MiqpProblem, binary_budget: int = DEFAULT_BINARY_BUDGET, prune: bool = False) -> OracleResult:
    """Try every binary assignment, solve the continuous QP per leaf, and
    return the best feasible one.

    Leaves are visited in reflected Gray-code order over the flattened
    (agent, column) slots, so consecutive assignments differ in one binary;
    objective ties go to the lexicographically smallest assignment.  With
    ``prune`` set, leaves whose best-case objective (the incumbent-free lower
    bound from the relaxation) cannot beat the incumbent are skipped.
    """
    slots = _binary_slots(p)
    k = len(slots)
    if k > binary_budget:
        raise ValueError(f"{k} binaries exceed the enumeration budget {binary_budget}")
    bound = -np.inf
    if prune and k:
        rel = _qp.solve_penalized_relaxation(p, weights=1e6)
        if rel.status is _qp.QpStatus.SOLVED:
            bound = rel.objective - 1e-6
    best_obj = np.inf
    best_assign = None
    best_x = None
    leaves = []
    count = 0
    # one factorized workspace reused for every leaf: the binaries are
    # eliminated and each assignment is a right-hand-side update
    spec, offsets, _ = _qp.stack(p, use_initial_M=True, relax_binaries=False, penalize_bigm=False)
    cols = [offsets[i] + c for (i, c) in slots]
    solver = _qp.FixedColumnSolver(spec, cols)
    # coupling rows over binaries only are decided by the assignment itself;
    # leaves that break one are infeasible without solving a QP
    count_rows = pure_binary_coupling_rows(p)
    count_coef = np.array([[float(p.C[i][r, c]) for (i, c) in slots] for r in count_rows])
    count_rhs = np.array([float(p.d[r]) for r in count_rows])
    # visit leaves in reflected Gray-code order: consecutive assignments
    # differ in one binary, so the warm-started solver barely moves
    for n in range(1 << k):
        g = n ^ (n >> 1)
        assign = tuple((g >> (k - 1 - j)) & 1 for j in range(k))
        count += 1
        if prune and best_assign is not None and bound > best_obj:
            leaves.append((assign, "PRUNED", np.inf))
            continue
        if count_rows and np.any(count_coef @ np.array(assign, dtype=float) > count_rhs + 1e-9):
            leaves.append((assign, "PRIMAL_INFEASIBLE", np.inf))
            continue
        res = solver.solve(np.array(assign, dtype=float), warm=True)
        if res.status is _qp.QpStatus.SOLVED:
            leaves.append((assign, "SOLVED", float(res.objective)))
            better = res.objective < best_obj - 1e-9
            tied = abs(res.objective - best_obj) <= 1e-9 and best_assign is not None and assign < best_assign
            if better or tied:
                best_obj = min(best_obj, float(res.objective))
                best_assign = assign
                best_x = res.x
        else:
            leaves.append((assign, res.status.value, np.inf))
    if best_assign is None:
        return OracleResult(best=None, objective=np.inf, leaves=leaves, enumerated=count)
    xs = _qp.split_stacked(p, best_x)
    binaries = []
    pos = 0
    for a in p.agents:
        binaries.append(np.array([float(best_assign[pos + j]) for j in range(len(a.binary_cols))]))
        pos += len(a.binary_cols)
    sol = Solution(x=xs, binaries=binaries, objective=best_obj, status=Status.OPTIMAL_MI)
    return OracleResult(best=sol, objective=best_obj, leaves=leaves, enumerated=count)


# ---------------------------------------------------------------------------
# Random instance generation


def random_instance(rng: np.random.Generator, n_agents: int = 4, n_cont: int = 2, n_bin: int = 2) -> MiqpProblem:
    """A feasible multi-agent MIQP in the structural family of the solvers'
    target problems: diagonally dominant PSD objective, box bounds, big-M
    on/off switches on the continuous variables, and a knapsack coupling row.
    """
    M = 100.0
    agents = []
    caps = []
    for _ in range(n_agents):
        n = n_cont + n_bin
        diag = rng.uniform(0.5, 2.0, size=n)
        diag[n_cont:] = 0.0
        L = rng.uniform(-0.3, 0.3, size=(n_cont, n_cont))
        Qc = L @ L.T + np.diag(diag[:n_cont])
        Q = np.zeros((n, n))
        Q[:n_cont, :n_cont] = 0.5 * (Qc + Qc.T)
        q = np.concatenate([rng.uniform(-10.0, -1.0, size=n_cont), np.zeros(n_bin)])
        cap = rng.uniform(2.0, 8.0, size=n_cont)
        caps.append(cap)
        lb = np.zeros(n)
        ub = np.concatenate([cap, np.ones(n_bin)])
        # each continuous variable is switched off unless its binary is on
        rows = []
        entries = []
        for j in range(min(n_cont, n_bin)):
            row = np.zeros(n)
            row[j] = 1.0
            row[n_cont + j] = -M
            rows.append(row)
            entries.append(BigMEntry(row=len(rows) - 1, col=n_cont + j, polarity=Polarity.DELTA, M_initial=M))
        A = np.array(rows)
        b = np.zeros(len(rows))
        agents.append(
            AgentBlock(
                Q=Q,
                q=q,
                A=A,
                b=b,
                lb=lb,
                ub=ub,
                binary_cols=tuple(range(n_cont, n)),
                bigm_entries=entries,
            )
        )
    total_cap = float(sum(c.sum() for c in caps))
    n_total_bin = n_agents * n_bin
    # binary budget in the upper half of the range, as in switch-selection
    # problems where most switches can be on but not all
    d = np.array(
        [
            rng.uniform(0.4, 0.8) * total_cap,
            float(rng.integers(n_total_bin // 2, n_total_bin)),
        ]
    )
    C = []
    for a in agents:
        Ci = np.zeros((2, a.n))
        Ci[0, :n_cont] = 1.0
        Ci[1, n_cont:] = 1.0
        C.append(Ci)
    return MiqpProblem(agents=agents, C=C, d=d)


@dataclass
class AccuracyReport:
    count: int
    matched: int
    fraction: float  # NaN when count == 0
    mean_gap: float  # mean objective gap over mismatches; 0.0 if none
    records: list = field(default_factory=list)

    def to_rows(self) -> list:
        return [
            {
                "instance_id": r["instance_id"],
                "matched": int(r["matched"]),
                "obj_solver": r["obj_solver"],
                "obj_oracle": r["obj_oracle"],
                "iters": r["iters"],
            }
            for r in self.records
        ]

    def write_csv(self, path) -> None:
        rows = self.to_rows()
        with open(path, "w", newline="") as f:
            w = csv.DictWriter(f, fieldnames=["instance_id", "matched", "obj_solver", "obj_oracle", "iters"])
            w.writeheader()
            w.writerows(rows)


def accuracy_experiment(
    seed: int,
    count: int,
    n_agents: int = 4,
    solver=None,
    binary_budget: int = DEFAULT_BINARY_BUDGET,
) -> AccuracyReport:
    """Fraction of random instances whose recovered binaries equal the
    enumeration optimum.  ``solver`` maps MiqpProblem -> SolveReport and
    defaults to the centralized tightening loop.
    """
    if solver is None:
        from .tighten import solve_centralized

        solver = solve_centralized
    rng = np.random.default_rng(seed)
    records = []
    matched = 0
    gaps = []
    for k in range(count):
        p = random_instance(rng, n_agents=n_agents)
        ref = solve_exhaustive(p, binary_budget=binary_budget)
        rep = solver(p)
        sol_bin = np.concatenate([b for b in rep.binaries]) if rep.binaries else np.zeros(0)
        ref_bin = (
            np.concatenate([b for b in ref.best.binaries]) if ref.best is not None else None
        )
        ok = ref_bin is not None and sol_bin.shape == ref_bin.shape and np.array_equal(sol_bin, ref_bin)
        if ok:
            matched += 1
        elif ref.best is not None and np.isfinite(rep.objective):
            gaps.append(abs(rep.objective - ref.objective))
        records.append(
            {
                "instance_id": k,
                "matched": bool(ok),
                "obj_solver": float(rep.objective),
                "obj_oracle": float(ref.objective),
                "iters": rep.iterations,
            }
        )
    fraction = matched / count if count else float("nan")
    mean_gap = float(np.mean(gaps)) if gaps else 0.0
    return AccuracyReport(count=count, matched=matched, fraction=fraction, mean_gap=mean_gap, records=records)
