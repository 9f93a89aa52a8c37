"""Multi-agent MIQP model with big-M constraint bookkeeping.

A problem is a list of agent blocks (quadratic objective, local inequality
rows, variable bounds, binary marks) plus shared coupling rows
``sum_i C_i x_i <= d``.  Equality constraints are stored as paired ``<=``
rows.  Big-M rows keep their original (largest) M baked into the stored
matrices; the registry tracks the current, possibly tightened, M per row.
"""

from __future__ import annotations

import copy
import enum
import json
import math
from dataclasses import dataclass, field

import numpy as np

SYM_RTOL = 1e-9
PSD_RTOL = 1e-8


class Polarity(enum.Enum):
    """Which side of the binary controls a big-M row.

    DELTA: row has the form  Phi(x) - M*delta <= rhs   (enforced when delta=0).
    ONE_MINUS_DELTA: row has  Phi(x) + M*delta <= rhs0 + M  (enforced when
    delta=1); tightening rescales both the coefficient and the rhs offset.
    """

    DELTA = "delta"
    ONE_MINUS_DELTA = "one_minus_delta"

    @property
    def sign(self) -> float:
        return -1.0 if self is Polarity.DELTA else 1.0


class Status(enum.Enum):
    OPTIMAL_MI = "OPTIMAL_MI"
    FEASIBLE_MI = "FEASIBLE_MI"
    RELAXED_ONLY = "RELAXED_ONLY"
    INFEASIBLE = "INFEASIBLE"
    MAX_ITER = "MAX_ITER"


@dataclass
class BigMEntry:
    """One big-M row: constraint row index, controlled binary column, polarity.

    ``row`` indexes the owning agent's local rows when ``coupling`` is False,
    otherwise the global coupling rows.  The stored matrix coefficient at
    (row, col) must equal ``polarity.sign * M_initial``.
    """

    row: int
    col: int
    polarity: Polarity
    M_initial: float
    M_current: float = None  # type: ignore[assignment]
    coupling: bool = False

    def __post_init__(self):
        if self.M_current is None:
            self.M_current = self.M_initial

    def key(self) -> tuple:
        return (self.coupling, self.row, self.col)


@dataclass
class AgentBlock:
    """One agent's variables: objective x'Qx/2 + q'x + const, rows A x <= b.

    ``soft_rows`` marks local rows treated as max(0, violation) penalties by
    the solvers instead of hard constraints (see ``soften``).
    """

    Q: np.ndarray
    q: np.ndarray
    A: np.ndarray
    b: np.ndarray
    lb: np.ndarray
    ub: np.ndarray
    binary_cols: tuple = ()
    bigm_entries: list = field(default_factory=list)
    soft_rows: tuple = ()
    soft_weights: tuple = ()
    const: float = 0.0

    def __post_init__(self):
        self.Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        self.q = np.asarray(self.q, dtype=float).ravel()
        self.A = np.asarray(self.A, dtype=float).reshape(-1, self.Q.shape[0])
        self.b = np.asarray(self.b, dtype=float).ravel()
        self.lb = np.asarray(self.lb, dtype=float).ravel()
        self.ub = np.asarray(self.ub, dtype=float).ravel()
        self.binary_cols = tuple(int(c) for c in self.binary_cols)
        self.soft_rows = tuple(int(r) for r in self.soft_rows)
        if not self.soft_weights:
            self.soft_weights = tuple(1.0 for _ in self.soft_rows)
        else:
            self.soft_weights = tuple(float(w) for w in self.soft_weights)

    @property
    def n(self) -> int:
        return self.Q.shape[0]

    @property
    def m(self) -> int:
        return self.A.shape[0]


@dataclass
class MiqpProblem:
    agents: list
    C: list  # per-agent coupling blocks, each (m_c, n_i)
    d: np.ndarray
    coupling_eq_count: int = 0

    def __post_init__(self):
        self.d = np.asarray(self.d, dtype=float).ravel()
        blocks = []
        for Ci in self.C:
            Ci = np.asarray(Ci, dtype=float)
            if not (Ci.ndim == 2 and Ci.shape[0] == len(self.d)):
                Ci = Ci.reshape(len(self.d), -1)
            blocks.append(Ci)
        self.C = blocks

    @property
    def N(self) -> int:
        return len(self.agents)

    @property
    def m_c(self) -> int:
        return len(self.d)

    def copy(self) -> "MiqpProblem":
        return copy.deepcopy(self)

    def total_binaries(self) -> int:
        return sum(len(a.binary_cols) for a in self.agents)


@dataclass
class Solution:
    x: list  # per-agent vectors
    binaries: list  # per-agent {0,1} arrays aligned with binary_cols
    objective: float
    status: Status


def effective_local(agent: AgentBlock) -> tuple:
    """Local rows with current (tightened) M values substituted."""
    A = agent.A.copy()
    b = agent.b.copy()
    for e in agent.bigm_entries:
        if e.coupling:
            continue
        A[e.row, e.col] = e.polarity.sign * e.M_current
        if e.polarity is Polarity.ONE_MINUS_DELTA:
            b[e.row] += e.M_current - e.M_initial
    return A, b


def effective_coupling(p: MiqpProblem) -> tuple:
    """Coupling blocks and rhs with current M values substituted."""
    Cs = [Ci.copy() for Ci in p.C]
    d = p.d.copy()
    for i, agent in enumerate(p.agents):
        for e in agent.bigm_entries:
            if not e.coupling:
                continue
            Cs[i][e.row, e.col] = e.polarity.sign * e.M_current
            if e.polarity is Polarity.ONE_MINUS_DELTA:
                d[e.row] += e.M_current - e.M_initial
    return Cs, d


def objective_value(p: MiqpProblem, xs: list) -> float:
    total = 0.0
    for agent, x in zip(p.agents, xs):
        x = np.asarray(x, dtype=float)
        total += 0.5 * x @ agent.Q @ x + agent.q @ x + agent.const
    return float(total)


def validate(p: MiqpProblem) -> list:
    """Structural validation; returns a deterministic list of violation strings."""
    issues = []
    if p.N < 1:
        issues.append("problem has no agents")
        return issues
    if len(p.C) != p.N:
        issues.append(f"coupling has {len(p.C)} blocks for {p.N} agents")
    for i, agent in enumerate(p.agents):
        n, m = agent.n, agent.m
        tag = f"agent {i}"
        if agent.q.shape != (n,):
            issues.append(f"{tag}: q has length {agent.q.shape[0]}, expected {n}")
        if agent.b.shape != (m,):
            issues.append(f"{tag}: b has length {agent.b.shape[0]}, expected {m}")
        if agent.lb.shape != (n,) or agent.ub.shape != (n,):
            issues.append(f"{tag}: bounds length mismatch (n={n})")
            continue
        scale = max(1.0, float(np.abs(agent.Q).max(initial=0.0)))
        if np.abs(agent.Q - agent.Q.T).max(initial=0.0) > SYM_RTOL * scale:
            issues.append(f"{tag}: Q is not symmetric")
        else:
            eigmin = float(np.linalg.eigvalsh(agent.Q)[0]) if n else 0.0
            if eigmin < -PSD_RTOL * scale:
                issues.append(f"{tag}: Q has negative eigenvalue {eigmin:.3e}")
        for c in agent.binary_cols:
            if not (0 <= c < n):
                issues.append(f"{tag}: binary column {c} out of range")
            elif agent.lb[c] != 0.0 or agent.ub[c] != 1.0:
                issues.append(f"{tag}: binary column {c} bounds are not [0, 1]")
        if np.any(agent.lb > agent.ub):
            issues.append(f"{tag}: some lower bound exceeds its upper bound")
        for r in agent.soft_rows:
            if not (0 <= r < m):
                issues.append(f"{tag}: soft row {r} out of range")
        if len(agent.soft_weights) != len(agent.soft_rows):
            issues.append(f"{tag}: soft weight count mismatch")
        elif any(w <= 0 for w in agent.soft_weights):
            issues.append(f"{tag}: nonpositive soft weight")
        seen = set()
        for e in agent.bigm_entries:
            etag = f"{tag} bigm ({'coupling' if e.coupling else 'local'} row {e.row}, col {e.col})"
            rows = p.m_c if e.coupling else m
            if not (0 <= e.row < rows):
                issues.append(f"{etag}: row out of range")
                continue
            if e.col not in agent.binary_cols:
                issues.append(f"{etag}: column is not a binary variable")
                continue
            if not (0.0 < e.M_current <= e.M_initial):
                issues.append(f"{etag}: M_current {e.M_current} outside (0, M_initial]")
            if e.key() in seen:
                issues.append(f"{etag}: duplicate registry entry")
            seen.add(e.key())
            mat = p.C[i] if e.coupling else agent.A
            want = e.polarity.sign * e.M_initial
            if not math.isclose(mat[e.row, e.col], want, rel_tol=1e-9, abs_tol=1e-12):
                issues.append(f"{etag}: stored coefficient {mat[e.row, e.col]} != {want}")
    m_c = p.m_c
    for i, Ci in enumerate(p.C):
        if Ci.shape != (m_c, p.agents[i].n):
            issues.append(f"coupling block {i}: shape {Ci.shape}, expected {(m_c, p.agents[i].n)}")
    if not (0 <= p.coupling_eq_count <= m_c):
        issues.append("coupling_eq_count out of range")
    return issues


def relax(p: MiqpProblem) -> MiqpProblem:
    """Convex relaxation: binaries become continuous on [0, 1]; ``p`` untouched."""
    out = p.copy()
    for agent in out.agents:
        for c in agent.binary_cols:
            agent.lb[c] = 0.0
            agent.ub[c] = 1.0
        agent.binary_cols = ()
        # registry entries track integrality structure; none remains
        agent.bigm_entries = []
    return out


def pure_binary_coupling_rows(p: MiqpProblem) -> list:
    """Indices of coupling rows whose continuous coefficients are all zero.
    With the binaries fixed, such a row is a constant: it either holds or it
    does not, and no continuous adjustment can change that."""
    rows = []
    for k in range(p.m_c):
        pure = True
        touches_bin = False
        for i, a in enumerate(p.agents):
            cont = [c for c in range(a.n) if c not in a.binary_cols]
            if cont and np.any(p.C[i][k, cont] != 0.0):
                pure = False
                break
            if a.binary_cols and np.any(p.C[i][k, list(a.binary_cols)] != 0.0):
                touches_bin = True
        if pure and touches_bin:
            rows.append(k)
    return rows


@dataclass
class FeasibilityReport:
    feasible: bool
    worst_violation: float
    worst_row: str


def check_feasible(p: MiqpProblem, s: Solution, tol: float = 1e-6) -> tuple:
    """Check a solution against the ORIGINAL (M_initial) constraints.

    Soft rows are objective terms, not constraints, and are skipped.
    Returns (bool, FeasibilityReport) with the argmax-violation row.
    """
    worst = 0.0
    worst_row = "none"
    if len(s.x) != p.N:
        raise ValueError(f"solution has {len(s.x)} agent vectors, problem has {p.N}")
    xs = []
    for i, agent in enumerate(p.agents):
        x = np.asarray(s.x[i], dtype=float).ravel()
        if x.shape != (agent.n,):
            raise ValueError(f"agent {i}: x has length {x.shape[0]}, expected {agent.n}")
        xs.append(x)

    def consider(v, label):
        nonlocal worst, worst_row
        if v > worst:
            worst = v
            worst_row = label

    for i, agent in enumerate(p.agents):
        x = xs[i]
        if agent.m:
            resid = agent.A @ x - agent.b
            for r in range(agent.m):
                if r in agent.soft_rows:
                    continue
                consider(float(resid[r]), f"agent {i} local row {r}")
        consider(float(np.max(agent.lb - x, initial=0.0)), f"agent {i} lower bound")
        consider(float(np.max(x - agent.ub, initial=0.0)), f"agent {i} upper bound")
        for c in agent.binary_cols:
            val = float(x[c])
            consider(min(abs(val), abs(val - 1.0)), f"agent {i} integrality col {c}")
    if p.m_c:
        resid = sum(Ci @ x for Ci, x in zip(p.C, xs)) - p.d
        for r in range(p.m_c):
            consider(float(resid[r]), f"coupling row {r}")
    ok = worst <= tol
    return ok, FeasibilityReport(ok, worst, worst_row)


def soften(p: MiqpProblem, rows, weights=None) -> MiqpProblem:
    """Return a copy where selected (agent, local-row) pairs are penalty rows.

    ``rows`` is an iterable of (agent_index, row_index); ``weights`` a matching
    iterable of positive penalty weights (default 1.0 each).
    """
    rows = list(rows)
    if weights is None:
        weights = [1.0] * len(rows)
    else:
        weights = [float(w) for w in weights]
    out = p.copy()
    per_agent = {}
    for (i, r), w in zip(rows, weights):
        per_agent.setdefault(i, []).append((int(r), w))
    for i, items in per_agent.items():
        agent = out.agents[i]
        merged = {r: w for r, w in zip(agent.soft_rows, agent.soft_weights)}
        for r, w in items:
            merged[r] = w
        ordered = sorted(merged.items())
        agent.soft_rows = tuple(r for r, _ in ordered)
        agent.soft_weights = tuple(w for _, w in ordered)
    return out


# ---------------------------------------------------------------------------
# JSON problem format


def _enc_float(v: float):
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return float(v)


def _dec_float(v) -> float:
    if isinstance(v, str):
        return float(v)
    return float(v)


def _enc_vec(x: np.ndarray):
    return [_enc_float(float(v)) for v in x]


def _dec_vec(x):
    return np.array([_dec_float(v) for v in x], dtype=float)


def problem_to_dict(p: MiqpProblem) -> dict:
    agents = []
    for agent in p.agents:
        agents.append(
            {
                "Q": [list(map(float, row)) for row in agent.Q],
                "q": _enc_vec(agent.q),
                "A": [list(map(float, row)) for row in agent.A],
                "b": _enc_vec(agent.b),
                "bounds": {"lb": _enc_vec(agent.lb), "ub": _enc_vec(agent.ub)},
                "binary_cols": list(agent.binary_cols),
                "bigm": [
                    {
                        "row": e.row,
                        "col": e.col,
                        "polarity": e.polarity.value,
                        "M": float(e.M_initial),
                        "coupling": e.coupling,
                    }
                    for e in agent.bigm_entries
                ],
                "soft_rows": list(agent.soft_rows),
                "soft_weights": list(agent.soft_weights),
                "const": float(agent.const),
            }
        )
    return {
        "agents": agents,
        "coupling": {
            "C": [[list(map(float, row)) for row in Ci] for Ci in p.C],
            "d": _enc_vec(p.d),
            "eq_count": int(p.coupling_eq_count),
        },
    }


def problem_from_dict(data: dict) -> MiqpProblem:
    agents = []
    for a in data["agents"]:
        entries = [
            BigMEntry(
                row=int(e["row"]),
                col=int(e["col"]),
                polarity=Polarity(e["polarity"]),
                M_initial=float(e["M"]),
                coupling=bool(e.get("coupling", False)),
            )
            for e in a.get("bigm", [])
        ]
        agents.append(
            AgentBlock(
                Q=np.array(a["Q"], dtype=float),
                q=_dec_vec(a["q"]),
                A=np.array(a["A"], dtype=float) if a["A"] else np.zeros((0, len(a["q"]))),
                b=_dec_vec(a["b"]),
                lb=_dec_vec(a["bounds"]["lb"]),
                ub=_dec_vec(a["bounds"]["ub"]),
                binary_cols=tuple(a.get("binary_cols", [])),
                bigm_entries=entries,
                soft_rows=tuple(a.get("soft_rows", [])),
                soft_weights=tuple(a.get("soft_weights", [])),
                const=float(a.get("const", 0.0)),
            )
        )
    cpl = data["coupling"]
    d = _dec_vec(cpl["d"])
    C = [np.array(Ci, dtype=float).reshape(len(d), -1) for Ci in cpl["C"]]
    return MiqpProblem(agents=agents, C=C, d=d, coupling_eq_count=int(cpl.get("eq_count", 0)))


def save_problem(p: MiqpProblem, path) -> None:
    with open(path, "w") as fh:
        json.dump(problem_to_dict(p), fh, indent=2)
        fh.write("\n")


def load_problem(path) -> MiqpProblem:
    with open(path) as fh:
        return problem_from_dict(json.load(fh))
