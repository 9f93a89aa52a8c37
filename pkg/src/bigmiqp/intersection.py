"""Mixed-traffic intersection compiler.

Turns a snapshot of a signalized intersection — lanes with traffic lights,
controlled vehicles (CAVs) and human-driven vehicles (HDVs) — into the
multi-agent MIQP of :mod:`.model`: one agent per traffic-light controller
(TLC) and one per CAV.

Per TLC agent: a continuous switch time ``kappa`` in [1, H+1] (the light
flips at relative step ceil(kappa) within the horizon, or not at all when
kappa = H+1), one binary light state ``s(k)`` per step, and the lateral
occupancy binaries ``c``/``e`` of the lane's CAVs.  Per CAV agent: position,
speed and acceleration trajectories under double-integrator dynamics.

Safety couplings between agents:
  - conflicting lanes with an HDV-involved pre-conflict pair cannot both be
    green: ``s_l(k) + s_m(k) <= 1``;
  - the first queued CAV that can still stop must hold before the line on
    red: ``p(k) - M s(k) <= psi``;
  - rear-end gaps ``p_follow + tau v_follow + d_min <= p_lead`` (local rows
    against an HDV leader's predicted trajectory, coupling rows against a
    CAV leader);
  - two CAVs on crossing lanes are never strictly inside their conflict
    zones simultaneously, via occupancy binaries with big-M rows
    (``c = 0`` forces ``p <= psi``; ``e = 0`` forces ``p >= phi``) and the
    shared count row ``c_i + e_i + c_j + e_j <= 3``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, asdict

import numpy as np

from .model import AgentBlock, BigMEntry, MiqpProblem, Polarity
from . import model as _model

CAV = "CAV"
HDV = "HDV"

# Tiny objective pull on binaries the objective is otherwise indifferent to
# (occupancy flags of a CAV far from the zone, lights of an empty lane).
# Without it the relaxation parks them anywhere in their feasible interval
# and the tightening loop has nothing to converge to.
TIE_BREAK = 1e-3


@dataclass
class ScenarioParams:
    """Horizon, kinematic limits and objective weights."""

    H: int = 20  # horizon steps
    dt: float = 0.5  # step length, s
    delta_min: int = 20  # minimum steps between light switches
    delta_max: int = 100  # maximum steps between light switches
    v_min: float = 0.0  # m/s
    v_max: float = 15.0  # m/s
    u_min: float = -4.0  # m/s^2
    u_max: float = 3.0  # m/s^2
    tau: float = 1.0  # time headway, s
    d_min: float = 6.0  # standstill gap, m
    w_p: float = 1.0  # progress weight
    w_v: float = 1.0  # speed-tracking weight
    w_u: float = 0.1  # control-effort weight
    M: float = 1e3  # big-M magnitude
    eps_strict: float = 1e-3  # strict-inequality slack

    def issues(self) -> list:
        out = []
        if self.H < 1:
            out.append("H must be a positive step count")
        if self.dt <= 0:
            out.append("dt must be positive")
        if not (0 < self.delta_min <= self.delta_max):
            out.append("need 0 < delta_min <= delta_max")
        if not (self.v_min < self.v_max):
            out.append("need v_min < v_max")
        if self.v_min < 0:
            out.append("v_min must be nonnegative")
        if not (self.u_min < 0 < self.u_max):
            out.append("need u_min < 0 < u_max")
        if self.tau <= 0 or self.d_min <= 0:
            out.append("tau and d_min must be positive")
        if min(self.w_p, self.w_v, self.w_u) < 0:
            out.append("objective weights must be nonnegative")
        if self.M <= 0 or self.eps_strict <= 0:
            out.append("M and eps_strict must be positive")
        return out


@dataclass
class Lane:
    id: str
    psi: float  # conflict-zone entry / stop line, m
    phi: float  # conflict-zone exit, m
    light: int = 1  # current state: 1 green, 0 red
    last_switch: int = 0  # step of the most recent switch
    conflicts: tuple = ()  # ids of laterally conflicting lanes

    def __post_init__(self):
        self.light = int(self.light)
        self.conflicts = tuple(self.conflicts)


@dataclass
class Vehicle:
    lane: str
    kind: str  # CAV or HDV
    p: float  # m
    v: float  # m/s
    u_last: float = 0.0  # last observed acceleration (HDV prediction seed)


@dataclass
class IntersectionScenario:
    params: ScenarioParams
    lanes: list
    vehicles: list
    k0: int = 0

    def lane_by_id(self) -> dict:
        return {ln.id: ln for ln in self.lanes}

    def lane_vehicles(self, lane_id: str) -> list:
        """Vehicles on a lane, front (largest p) to back, as given."""
        return [veh for veh in self.vehicles if veh.lane == lane_id]

    def issues(self) -> list:
        out = list(self.params.issues())
        ids = [ln.id for ln in self.lanes]
        if len(set(ids)) != len(ids):
            out.append("duplicate lane ids")
        by_id = self.lane_by_id()
        for ln in self.lanes:
            if not (0.0 < ln.psi < ln.phi):
                out.append(f"lane {ln.id}: need 0 < psi < phi")
            if ln.light not in (0, 1):
                out.append(f"lane {ln.id}: light state must be 0 or 1")
            if ln.last_switch > self.k0:
                out.append(f"lane {ln.id}: last_switch is in the future")
            if ln.id in ln.conflicts:
                out.append(f"lane {ln.id}: conflicts with itself")
            for other in ln.conflicts:
                if other not in by_id:
                    out.append(f"lane {ln.id}: unknown conflicting lane {other}")
                elif ln.id not in by_id[other].conflicts:
                    out.append(f"conflict {ln.id}-{other} is not symmetric")
        for veh in self.vehicles:
            if veh.lane not in by_id:
                out.append(f"vehicle on unknown lane {veh.lane}")
            if veh.kind not in (CAV, HDV):
                out.append(f"vehicle kind {veh.kind!r} is not CAV or HDV")
            if not (self.params.v_min - 1e-9 <= veh.v <= self.params.v_max + 1e-9):
                out.append(f"vehicle on lane {veh.lane}: speed {veh.v} outside limits")
        for ln in self.lanes:
            vehs = self.lane_vehicles(ln.id)
            for a, b in zip(vehs, vehs[1:]):
                if b.p >= a.p:
                    out.append(f"lane {ln.id}: vehicles not ordered front to back")
                    break
        return out

    def validate(self) -> None:
        problems = self.issues()
        if problems:
            raise ValueError("invalid scenario: " + "; ".join(problems))


# ---------------------------------------------------------------------------
# Scalar helpers


def sigmoid(z: float) -> float:
    if z >= 0:
        return 1.0 / (1.0 + math.exp(-z))
    ez = math.exp(z)
    return ez / (1.0 + ez)


def lane_priority(scn: IntersectionScenario, lane_id: str) -> float:
    """Demand weight of a lane: queued vehicles near the stop line count more."""
    lane = scn.lane_by_id()[lane_id]
    half = lane.psi / 2.0
    total = 0.0
    for veh in scn.lane_vehicles(lane_id):
        if veh.p < lane.psi:
            total += sigmoid((veh.p - half) / half)
    return total


def count_conflicts(scn: IntersectionScenario, l: str, m: str) -> int:
    """Number of HDV-involved cross-lane vehicle pairs still ahead of their
    conflict-zone exits.  Pure CAV-CAV pairs are excluded: those are resolved
    by the occupancy binaries, not the lights."""
    by_id = scn.lane_by_id()
    if m not in by_id[l].conflicts:
        raise ValueError(f"lanes {l} and {m} do not conflict")
    pre_l = [veh for veh in scn.lane_vehicles(l) if veh.p < by_id[l].phi]
    pre_m = [veh for veh in scn.lane_vehicles(m) if veh.p < by_id[m].phi]
    return sum(1 for a in pre_l for b in pre_m if a.kind == HDV or b.kind == HDV)


def predict_hdv(veh: Vehicle, params: ScenarioParams, H: int) -> tuple:
    """Constant-acceleration rollout of an HDV, clamped to the speed limits.

    Returns (p, v) arrays over steps 1..H.  The acceleration is reduced in any
    step where holding it would push the speed outside [v_min, v_max].
    """
    if veh.kind != HDV:
        raise ValueError("prediction applies to HDVs only")
    p, v = float(veh.p), float(veh.v)
    ps, vs = np.empty(H), np.empty(H)
    for k in range(H):
        v_next = min(params.v_max, max(params.v_min, v + veh.u_last * params.dt))
        u_eff = (v_next - v) / params.dt
        p += v * params.dt + 0.5 * u_eff * params.dt**2
        v = v_next
        ps[k], vs[k] = p, v
    return ps, vs


# ---------------------------------------------------------------------------
# Compilation


@dataclass
class VarMap:
    """Where every scenario quantity landed in the compiled problem.

    Agent indices: ``tlc[lane_id]`` and ``cav[(lane_id, slot)]`` where slot is
    the vehicle's front-to-back position in its lane.  CAV columns follow a
    fixed layout: p(1..H), v(1..H), u(0..H-1); TLC columns: kappa, s(1..H),
    then the c/e occupancy pairs listed in ``ce_cols``.
    """

    H: int
    tlc: dict = field(default_factory=dict)
    cav: dict = field(default_factory=dict)
    s_cols: dict = field(default_factory=dict)  # lane id -> [col per step 1..H]
    ce_cols: dict = field(default_factory=dict)  # (lane id, slot) -> [(c, e) per step]
    coupling_rows: dict = field(default_factory=dict)  # tag -> [row index]
    local_rows: dict = field(default_factory=dict)  # tag -> [(agent, row)]
    hdv_rear_rows: list = field(default_factory=list)  # [(agent, row)]

    kappa_col = 0

    def p_col(self, k: int) -> int:
        return k - 1

    def v_col(self, k: int) -> int:
        return self.H + k - 1

    def u_col(self, k: int) -> int:
        return 2 * self.H + k


class _AgentBuilder:
    def __init__(self, n: int):
        self.n = n
        self.Q = np.zeros((n, n))
        self.q = np.zeros(n)
        self.lb = np.full(n, -np.inf)
        self.ub = np.full(n, np.inf)
        self.rows = []  # (coef dict, rhs)
        self.binary_cols = []
        self.bigm = []  # (row, col, polarity, M)
        self.const = 0.0

    def add_row(self, coefs: dict, rhs: float, bigm=None) -> int:
        r = len(self.rows)
        self.rows.append((dict(coefs), float(rhs)))
        if bigm is not None:
            col, pol, M = bigm
            self.bigm.append((r, col, pol, M))
        return r

    def add_eq(self, coefs: dict, rhs: float) -> int:
        r = self.add_row(coefs, rhs)
        self.add_row({c: -v for c, v in coefs.items()}, -rhs)
        return r

    def build(self) -> AgentBlock:
        A = np.zeros((len(self.rows), self.n))
        b = np.zeros(len(self.rows))
        for r, (coefs, rhs) in enumerate(self.rows):
            for c, v in coefs.items():
                A[r, c] = v
            b[r] = rhs
        entries = [
            BigMEntry(row=r, col=c, polarity=pol, M_initial=M) for (r, c, pol, M) in self.bigm
        ]
        return AgentBlock(
            Q=self.Q,
            q=self.q,
            A=A,
            b=b,
            lb=self.lb,
            ub=self.ub,
            binary_cols=tuple(self.binary_cols),
            bigm_entries=entries,
            const=self.const,
        )


def _light_M(params: ScenarioParams, r: int, vacuous_high: bool, derived: bool) -> float:
    """Big-M for a light-model row at relative step r.

    ``vacuous_high`` distinguishes the two row shapes: the relaxed side must
    cover kappa up to H+1 (kappa <= r + M) or down to 1 (kappa >= r + eps - M).
    """
    if not derived:
        return params.M
    need = (params.H + 1 - r) if vacuous_high else (r - 1 + params.eps_strict)
    return min(params.M, max(1.0, need))


def compile_scenario(scn: IntersectionScenario, bound_derived_M: bool = False):
    """Compile a validated scenario into (MiqpProblem, VarMap).

    With ``bound_derived_M`` each big-M row gets the smallest magnitude that
    keeps its relaxed side vacuous given the variable bounds, instead of the
    uniform ``params.M``.
    """
    scn.validate()
    prm = scn.params
    H, dt, eps = prm.H, prm.dt, prm.eps_strict
    by_id = scn.lane_by_id()
    lane_order = [ln.id for ln in scn.lanes]

    # agent enumeration: TLCs in lane order, then CAVs in (lane, slot) order
    cav_keys = []
    slot_of = {}
    for lid in lane_order:
        for slot, veh in enumerate(scn.lane_vehicles(lid)):
            slot_of[(lid, slot)] = veh
            if veh.kind == CAV:
                cav_keys.append((lid, slot))

    vmap = VarMap(H=H)
    for i, lid in enumerate(lane_order):
        vmap.tlc[lid] = i
    for j, key in enumerate(cav_keys):
        vmap.cav[key] = len(lane_order) + j

    # CAV-CAV cross-lane pairs, both still ahead of their conflict exits,
    # determine which CAVs need occupancy binaries at all
    lateral_pairs = []
    for a_idx, lid in enumerate(lane_order):
        for mid in by_id[lid].conflicts:
            if lane_order.index(mid) <= a_idx:
                continue
            for key_l in [k for k in cav_keys if k[0] == lid]:
                if slot_of[key_l].p >= by_id[lid].phi:
                    continue
                for key_m in [k for k in cav_keys if k[0] == mid]:
                    if slot_of[key_m].p >= by_id[mid].phi:
                        continue
                    lateral_pairs.append((key_l, key_m))
    needs_ce = sorted({k for pair in lateral_pairs for k in pair}, key=cav_keys.index)

    # ---- TLC agents -------------------------------------------------------
    builders = []
    for lid in lane_order:
        lane = by_id[lid]
        ce_here = [key for key in needs_ce if key[0] == lid]
        n = 1 + H + 2 * H * len(ce_here)
        bld = _AgentBuilder(n)
        bld.lb[0], bld.ub[0] = 1.0, float(H + 1)
        s_cols = list(range(1, H + 1))
        vmap.s_cols[lid] = s_cols
        for c in s_cols:
            bld.lb[c], bld.ub[c] = 0.0, 1.0
            bld.binary_cols.append(c)
        col = 1 + H
        for key in ce_here:
            pairs = []
            for _ in range(H):
                bld.lb[col : col + 2] = 0.0
                bld.ub[col : col + 2] = 1.0
                bld.binary_cols.extend((col, col + 1))
                pairs.append((col, col + 1))
                col += 2
            vmap.ce_cols[key] = pairs
        # light model: s(k) flips away from the current state exactly when the
        # relative step reaches kappa
        s0 = lane.light
        for r in range(1, H + 1):
            sc = s_cols[r - 1]
            M_hi = _light_M(prm, r, True, bound_derived_M)
            M_lo = _light_M(prm, r, False, bound_derived_M)
            if s0 == 0:
                a = bld.add_row({0: 1.0, sc: M_hi}, r + M_hi, bigm=(sc, Polarity.ONE_MINUS_DELTA, M_hi))
                b = bld.add_row({0: -1.0, sc: -M_lo}, -r - eps, bigm=(sc, Polarity.DELTA, M_lo))
            else:
                a = bld.add_row({0: 1.0, sc: -M_hi}, r, bigm=(sc, Polarity.DELTA, M_hi))
                b = bld.add_row({0: -1.0, sc: M_lo}, -r - eps + M_lo, bigm=(sc, Polarity.ONE_MINUS_DELTA, M_lo))
            agent_idx = vmap.tlc[lid]
            vmap.local_rows.setdefault("light_model", []).extend([(agent_idx, a), (agent_idx, b)])
        # switch-gap window on kappa, skipped when every vehicle is automated
        vehs = scn.lane_vehicles(lid)
        if not vehs or any(v.kind == HDV for v in vehs):
            lo = min(prm.delta_min + lane.last_switch - scn.k0, H + 1)
            hi = max(prm.delta_max + lane.last_switch - scn.k0, 1)
            agent_idx = vmap.tlc[lid]
            r1 = bld.add_row({0: -1.0}, -float(lo))
            r2 = bld.add_row({0: 1.0}, float(hi))
            vmap.local_rows.setdefault("switch_gap", []).extend([(agent_idx, r1), (agent_idx, r2)])
        gamma = lane_priority(scn, lid)
        # lights prefer serving demand; absent demand, prefer holding the
        # current state (consistent with a no-switch kappa)
        hold = -TIE_BREAK if s0 == 1 else TIE_BREAK
        for c in s_cols:
            bld.q[c] = -gamma + hold
        for key in ce_here:
            for c_col, e_col in vmap.ce_cols[key]:
                bld.q[c_col] = TIE_BREAK
                bld.q[e_col] = TIE_BREAK
        builders.append(bld)

    # ---- CAV agents -------------------------------------------------------
    p_reach = {}  # key -> worst-case position bounds over the horizon
    for key in cav_keys:
        veh = slot_of[key]
        p_hi = veh.p + prm.v_max * dt * H
        p_lo = veh.p - 0.5 * abs(prm.u_min) * dt**2 * H
        p_reach[key] = (p_lo, p_hi)
        bld = _AgentBuilder(3 * H)
        for k in range(1, H + 1):
            bld.lb[vmap.v_col(k)], bld.ub[vmap.v_col(k)] = prm.v_min, prm.v_max
        for k in range(H):
            bld.lb[vmap.u_col(k)], bld.ub[vmap.u_col(k)] = prm.u_min, prm.u_max
        agent_idx = vmap.cav[key]
        # double-integrator dynamics as equality pairs
        r = bld.add_eq({vmap.p_col(1): 1.0, vmap.u_col(0): -0.5 * dt**2}, veh.p + veh.v * dt)
        vmap.local_rows.setdefault("dynamics", []).append((agent_idx, r))
        r = bld.add_eq({vmap.v_col(1): 1.0, vmap.u_col(0): -dt}, veh.v)
        vmap.local_rows.setdefault("dynamics", []).append((agent_idx, r))
        for k in range(1, H):
            r = bld.add_eq(
                {
                    vmap.p_col(k + 1): 1.0,
                    vmap.p_col(k): -1.0,
                    vmap.v_col(k): -dt,
                    vmap.u_col(k): -0.5 * dt**2,
                },
                0.0,
            )
            vmap.local_rows.setdefault("dynamics", []).append((agent_idx, r))
            r = bld.add_eq({vmap.v_col(k + 1): 1.0, vmap.v_col(k): -1.0, vmap.u_col(k): -dt}, 0.0)
            vmap.local_rows.setdefault("dynamics", []).append((agent_idx, r))
        # objective: make progress, track the speed limit, spend little effort
        for k in range(1, H + 1):
            bld.q[vmap.p_col(k)] += -prm.w_p
            bld.Q[vmap.v_col(k), vmap.v_col(k)] += 2.0 * prm.w_v
            bld.q[vmap.v_col(k)] += -2.0 * prm.w_v * prm.v_max
            bld.const += prm.w_v * prm.v_max**2
        for k in range(H):
            bld.Q[vmap.u_col(k), vmap.u_col(k)] += 2.0 * prm.w_u
        builders.append(bld)

    # rear-end rows against an HDV leader are local to the follower CAV
    for lid in lane_order:
        vehs = scn.lane_vehicles(lid)
        for slot in range(1, len(vehs)):
            follower, leader = vehs[slot], vehs[slot - 1]
            if follower.kind != CAV or leader.kind != HDV:
                continue
            key = (lid, slot)
            bld = builders[vmap.cav[key]]
            p_pred, _ = predict_hdv(leader, prm, H)
            for k in range(1, H + 1):
                r = bld.add_row(
                    {vmap.p_col(k): 1.0, vmap.v_col(k): prm.tau}, float(p_pred[k - 1]) - prm.d_min
                )
                vmap.hdv_rear_rows.append((vmap.cav[key], r))

    # ---- coupling rows ----------------------------------------------------
    # each spec: ({agent: {col: coef}}, rhs, tag, [(agent, col, polarity, M)])
    coupling = []

    def add_coupling(blocks: dict, rhs: float, tag: str, bigm=()):
        coupling.append((blocks, float(rhs), tag, list(bigm)))

    # conflicting lanes with unresolved HDV-involved pairs: not both green
    for i, lid in enumerate(lane_order):
        for mid in by_id[lid].conflicts:
            if lane_order.index(mid) <= i:
                continue
            if count_conflicts(scn, lid, mid) == 0:
                continue
            for k in range(1, H + 1):
                add_coupling(
                    {
                        vmap.tlc[lid]: {vmap.s_cols[lid][k - 1]: 1.0},
                        vmap.tlc[mid]: {vmap.s_cols[mid][k - 1]: 1.0},
                    },
                    1.0,
                    "no_conflict",
                )

    # red light holds the first queued CAV that can still stop at the line
    for lid in lane_order:
        lane = by_id[lid]
        queued = [(slot, veh) for slot, veh in enumerate(scn.lane_vehicles(lid)) if veh.p < lane.psi]
        if not queued:
            continue
        slot, veh = queued[0]
        if veh.kind != CAV:
            continue
        if veh.p + veh.v**2 / (2.0 * abs(prm.u_min)) > lane.psi:
            continue
        key = (lid, slot)
        M = prm.M if not bound_derived_M else min(prm.M, max(1.0, p_reach[key][1] - lane.psi))
        for k in range(1, H + 1):
            sc = vmap.s_cols[lid][k - 1]
            add_coupling(
                {
                    vmap.cav[key]: {vmap.p_col(k): 1.0},
                    vmap.tlc[lid]: {sc: -M},
                },
                lane.psi,
                "red_stop",
                bigm=[(vmap.tlc[lid], sc, Polarity.DELTA, M)],
            )

    # rear-end gaps between consecutive CAVs on a lane
    for lid in lane_order:
        vehs = scn.lane_vehicles(lid)
        for slot in range(1, len(vehs)):
            follower, leader = vehs[slot], vehs[slot - 1]
            if follower.kind != CAV or leader.kind != CAV:
                continue
            fi, li = vmap.cav[(lid, slot)], vmap.cav[(lid, slot - 1)]
            for k in range(1, H + 1):
                add_coupling(
                    {
                        fi: {vmap.p_col(k): 1.0, vmap.v_col(k): prm.tau},
                        li: {vmap.p_col(k): -1.0},
                    },
                    -prm.d_min,
                    "rear_end",
                )

    # occupancy binaries: c = 0 keeps the CAV behind the zone entry,
    # e = 0 keeps it past the zone exit
    for key in needs_ce:
        lid, _ = key
        lane = by_id[lid]
        p_lo, p_hi = p_reach[key]
        M_c = prm.M if not bound_derived_M else min(prm.M, max(1.0, p_hi - lane.psi))
        M_e = prm.M if not bound_derived_M else min(prm.M, max(1.0, lane.phi - p_lo))
        for k in range(1, H + 1):
            c_col, e_col = vmap.ce_cols[key][k - 1]
            add_coupling(
                {
                    vmap.cav[key]: {vmap.p_col(k): 1.0},
                    vmap.tlc[lid]: {c_col: -M_c},
                },
                lane.psi,
                "lateral_c",
                bigm=[(vmap.tlc[lid], c_col, Polarity.DELTA, M_c)],
            )
            add_coupling(
                {
                    vmap.cav[key]: {vmap.p_col(k): -1.0},
                    vmap.tlc[lid]: {e_col: -M_e},
                },
                -lane.phi,
                "lateral_e",
                bigm=[(vmap.tlc[lid], e_col, Polarity.DELTA, M_e)],
            )

    # at most one of two crossing CAVs strictly inside its zone at a time
    for key_l, key_m in lateral_pairs:
        for k in range(1, H + 1):
            cl, el = vmap.ce_cols[key_l][k - 1]
            cm, em = vmap.ce_cols[key_m][k - 1]
            add_coupling(
                {
                    vmap.tlc[key_l[0]]: {cl: 1.0, el: 1.0},
                    vmap.tlc[key_m[0]]: {cm: 1.0, em: 1.0},
                },
                3.0,
                "lateral_one",
            )

    # ---- assemble ---------------------------------------------------------
    agents = [bld.build() for bld in builders]
    m_c = len(coupling)
    C = [np.zeros((m_c, a.n)) for a in agents]
    d = np.zeros(m_c)
    for r, (blocks, rhs, tag, bigm) in enumerate(coupling):
        for agent_idx, cols in blocks.items():
            for c, v in cols.items():
                C[agent_idx][r, c] = v
        d[r] = rhs
        vmap.coupling_rows.setdefault(tag, []).append(r)
        for agent_idx, col, pol, M in bigm:
            agents[agent_idx].bigm_entries.append(
                BigMEntry(row=r, col=col, polarity=pol, M_initial=M, coupling=True)
            )
    problem = MiqpProblem(agents=agents, C=C, d=d)
    return problem, vmap


def soften(p: MiqpProblem, vmap: VarMap = None, rows=None, weights=None) -> MiqpProblem:
    """Convert constraint rows into violation penalties.

    By default softens the rear-end rows written against HDV predictions —
    the one family a CAV cannot always satisfy, since the predicted leader
    may already be closer than the required gap.
    """
    if rows is None:
        if vmap is None:
            raise ValueError("need a VarMap to select the default rows")
        rows = list(vmap.hdv_rear_rows)
    rows = list(rows)
    if not rows:
        return p.copy()
    return _model.soften(p, rows, weights)


# ---------------------------------------------------------------------------
# Scenario JSON format


def scenario_to_dict(scn: IntersectionScenario) -> dict:
    return {
        "params": asdict(scn.params),
        "k0": int(scn.k0),
        "lanes": [
            {
                "id": ln.id,
                "psi": ln.psi,
                "phi": ln.phi,
                "light": ln.light,
                "last_switch": ln.last_switch,
                "conflicts": list(ln.conflicts),
            }
            for ln in scn.lanes
        ],
        "vehicles": [
            {"lane": v.lane, "kind": v.kind, "p": v.p, "v": v.v, "u_last": v.u_last}
            for v in scn.vehicles
        ],
    }


def scenario_from_dict(data: dict) -> IntersectionScenario:
    params = ScenarioParams(**data.get("params", {}))
    lanes = [
        Lane(
            id=str(ln["id"]),
            psi=float(ln["psi"]),
            phi=float(ln["phi"]),
            light=int(ln.get("light", 1)),
            last_switch=int(ln.get("last_switch", 0)),
            conflicts=tuple(str(c) for c in ln.get("conflicts", [])),
        )
        for ln in data["lanes"]
    ]
    vehicles = [
        Vehicle(
            lane=str(v["lane"]),
            kind=str(v["kind"]),
            p=float(v["p"]),
            v=float(v["v"]),
            u_last=float(v.get("u_last", 0.0)),
        )
        for v in data.get("vehicles", [])
    ]
    return IntersectionScenario(params=params, lanes=lanes, vehicles=vehicles, k0=int(data.get("k0", 0)))


def save_scenario(scn: IntersectionScenario, path) -> None:
    with open(path, "w") as fh:
        json.dump(scenario_to_dict(scn), fh, indent=2)
        fh.write("\n")


def load_scenario(path) -> IntersectionScenario:
    with open(path) as fh:
        return scenario_from_dict(json.load(fh))
