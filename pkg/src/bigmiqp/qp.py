"""Convex QP engine: operator splitting with over-relaxation plus an
active-set polish step for high-accuracy solutions.

Solves   min 1/2 x'Qx + q'x + sum_k w_k max(0, A_k x - b_k)
         s.t. A_r x <= b_r  (hard rows), lb <= x <= ub.

Penalty rows are reformulated with one nonnegative slack each, turning the
problem into a smooth QP handled by the same splitting loop.  Exactly
opposite row pairs (equality constraints stored as paired inequalities) are
merged internally into two-sided rows.  The iteration runs on a Ruiz-
equilibrated copy of the problem with residual-ratio rho adaptation;
termination checks, polish, and all reported quantities are in the original
scaling.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

DEFAULT_TOL = 1e-8
DEFAULT_MAX_ITER = 20000


class QpStatus(enum.Enum):
    SOLVED = "SOLVED"
    PRIMAL_INFEASIBLE = "PRIMAL_INFEASIBLE"
    MAX_ITER = "MAX_ITER"


@dataclass
class QpSpec:
    Q: np.ndarray
    q: np.ndarray
    A: np.ndarray
    b: np.ndarray
    lb: np.ndarray
    ub: np.ndarray
    penalty_rows: tuple = ()
    w_pen: tuple = ()
    const: float = 0.0

    def __post_init__(self):
        self.Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        n = self.Q.shape[0]
        self.q = np.asarray(self.q, dtype=float).ravel()
        self.A = np.asarray(self.A, dtype=float).reshape(-1, n)
        self.b = np.asarray(self.b, dtype=float).ravel()
        self.lb = np.asarray(self.lb, dtype=float).ravel()
        self.ub = np.asarray(self.ub, dtype=float).ravel()
        self.penalty_rows = tuple(int(r) for r in self.penalty_rows)
        if not self.w_pen:
            self.w_pen = tuple(1.0 for _ in self.penalty_rows)
        else:
            self.w_pen = tuple(float(w) for w in self.w_pen)
        if len(self.w_pen) != len(self.penalty_rows):
            raise ValueError("w_pen length must match penalty_rows")
        if any(w <= 0 for w in self.w_pen):
            raise ValueError("penalty weights must be positive")

    @property
    def n(self) -> int:
        return self.Q.shape[0]


@dataclass
class QpResult:
    x: np.ndarray
    objective: float
    kkt_residual: float
    status: QpStatus
    duals: np.ndarray = None  # type: ignore[assignment]  # per spec row, >= 0
    bound_duals: np.ndarray = None  # type: ignore[assignment]
    iterations: int = 0


def _pair_equalities(A, b, skip):
    """Find exactly-opposite row pairs (i, j): A[j] == -A[i], b[j] == -b[i].

    Returns (pairs, singles) where pairs is a list of (i, j) and singles the
    remaining row indices, both in deterministic order.
    """
    m = A.shape[0]
    index = {}
    for i in range(m):
        if i in skip:
            continue
        index.setdefault((A[i].tobytes(), float(b[i])), []).append(i)
    used = set()
    pairs = []
    for i in range(m):
        if i in skip or i in used:
            continue
        key = ((-A[i]).tobytes(), float(-b[i]))
        for j in index.get(key, []):
            if j != i and j not in used and j not in skip:
                pairs.append((i, j))
                used.add(i)
                used.add(j)
                break
    singles = [i for i in range(m) if i not in skip and i not in used]
    return pairs, singles


class QpSolver:
    """Reusable workspace: setup once, re-solve after linear-term or bound
    updates.

    The splitting iteration follows the standard over-relaxed ADMM scheme on
    the extended problem min 1/2 z'Pz + g'z s.t. l <= Gz <= u, where z stacks
    the decision variables and penalty slacks and G stacks hard rows, slack
    rows, and finite bounds.
    """

    sigma = 1e-6
    alpha = 1.6
    rho_min = 1e-6
    rho_max = 1e6
    check_every = 25
    ruiz_iters = 10

    def __init__(self, spec: QpSpec, tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER):
        self.spec = spec
        self.tol = float(tol)
        self.max_iter = int(max_iter)
        self._build()
        self._x_warm = None
        self._z_warm = None
        self._y_warm = None

    # -- construction -------------------------------------------------------

    def _build(self):
        spec = self.spec
        n = spec.n
        pen = set(spec.penalty_rows)
        pairs, singles = _pair_equalities(spec.A, spec.b, pen)
        n_slack = len(spec.penalty_rows)
        nz = n + n_slack

        P = np.zeros((nz, nz))
        P[:n, :n] = spec.Q
        g = np.zeros(nz)
        g[:n] = spec.q
        g[n:] = np.asarray(spec.w_pen, dtype=float)

        rows = []
        lo = []
        hi = []
        self._row_map = []  # (kind, payload) to map duals back to spec rows
        for i, j in pairs:
            rows.append(np.concatenate([spec.A[i], np.zeros(n_slack)]))
            lo.append(spec.b[i])
            hi.append(spec.b[i])
            self._row_map.append(("eq", i, j))
        for i in singles:
            rows.append(np.concatenate([spec.A[i], np.zeros(n_slack)]))
            lo.append(-np.inf)
            hi.append(spec.b[i])
            self._row_map.append(("ineq", i))
        for k, r in enumerate(spec.penalty_rows):
            row = np.concatenate([spec.A[r], np.zeros(n_slack)])
            row[n + k] = -1.0
            rows.append(row)
            lo.append(-np.inf)
            hi.append(spec.b[r])
            self._row_map.append(("pen", r, k))
        self._bound_cols = [i for i in range(n) if np.isfinite(spec.lb[i]) or np.isfinite(spec.ub[i])]
        self._bound_set = set(self._bound_cols)
        self._bound_row_start = len(rows)
        for i in self._bound_cols:
            row = np.zeros(nz)
            row[i] = 1.0
            rows.append(row)
            lo.append(spec.lb[i])
            hi.append(spec.ub[i])
            self._row_map.append(("bnd", i))
        for k in range(n_slack):
            row = np.zeros(nz)
            row[n + k] = 1.0
            rows.append(row)
            lo.append(0.0)
            hi.append(np.inf)
            self._row_map.append(("slack", k))

        # unscaled (reference) data
        self.G0 = np.array(rows).reshape(len(rows), nz)
        self.l0 = np.array(lo)
        self.u0 = np.array(hi)
        self.P0 = P
        self.g0 = g
        self.nz = nz
        self.mz = self.G0.shape[0]
        self._equilibrate()
        self._eq_rows = np.isfinite(self.ls) & np.isfinite(self.us) & (self.us - self.ls < 1e-12)
        self._set_rho(0.1)

    def _equilibrate(self):
        """Modified Ruiz scaling of the extended problem plus cost scaling."""
        nz, mz = self.nz, self.mz
        D = np.ones(nz)
        E = np.ones(mz)
        P = self.P0.copy()
        G = self.G0.copy()
        for _ in range(self.ruiz_iters):
            cn = np.maximum(
                np.max(np.abs(P), axis=0, initial=0.0),
                np.max(np.abs(G), axis=0, initial=0.0),
            )
            with np.errstate(divide="ignore"):
                dj = np.where(cn > 0, 1.0 / np.sqrt(cn), 1.0)
                rn = np.max(np.abs(G), axis=1, initial=0.0)
                ei = np.where(rn > 0, 1.0 / np.sqrt(rn), 1.0)
            P = (dj[:, None] * P) * dj[None, :]
            G = (ei[:, None] * G) * dj[None, :]
            D *= dj
            E *= ei
        pc = np.max(np.abs(P), axis=0, initial=0.0)
        denom = max(float(np.mean(pc)), float(np.max(np.abs(D * self.g0), initial=0.0)))
        c = 1.0 / denom if denom > 1e-12 else 1.0
        self.D = D
        self.E = E
        self.c = c
        self.Ps = c * P
        self.Gs = G
        self._refresh_scaled_vectors()

    def _refresh_scaled_vectors(self):
        self.gs = self.c * self.D * self.g0
        self.ls = self.E * self.l0
        self.us = self.E * self.u0

    def _set_rho(self, rho_base: float):
        self._rho_base = rho_base
        rho = np.full(self.mz, rho_base)
        rho[self._eq_rows] = 1e3 * rho_base
        self.rho = rho
        kkt = np.zeros((self.nz + self.mz, self.nz + self.mz))
        kkt[: self.nz, : self.nz] = self.Ps + self.sigma * np.eye(self.nz)
        kkt[: self.nz, self.nz :] = self.Gs.T
        kkt[self.nz :, : self.nz] = self.Gs
        kkt[self.nz :, self.nz :] = -np.diag(1.0 / rho)
        self._lu = sla.lu_factor(kkt)

    def update_linear(self, q_new: np.ndarray) -> None:
        """Replace the linear objective term (matrix and rows unchanged)."""
        self.spec.q = np.asarray(q_new, dtype=float).ravel()
        self.g0 = self.g0.copy()
        self.g0[: self.spec.n] = self.spec.q
        self.gs = self.c * self.D * self.g0

    def update_bounds(self, lb_new: np.ndarray, ub_new: np.ndarray) -> None:
        """Replace variable bounds without refactorizing.

        The set of columns with at least one finite bound must not change
        (those are the rows baked into G at construction).
        """
        lb_new = np.asarray(lb_new, dtype=float).ravel()
        ub_new = np.asarray(ub_new, dtype=float).ravel()
        for i in range(self.spec.n):
            was = i in self._bound_set
            now = np.isfinite(lb_new[i]) or np.isfinite(ub_new[i])
            if was != now:
                raise ValueError(f"column {i} changed between bounded and unbounded")
        self.spec.lb = lb_new
        self.spec.ub = ub_new
        self.l0 = self.l0.copy()
        self.u0 = self.u0.copy()
        changed = np.zeros(self.mz, dtype=bool)
        for k, entry in enumerate(self._row_map):
            if entry[0] == "bnd":
                i = entry[1]
                if self.l0[k] != lb_new[i] or self.u0[k] != ub_new[i]:
                    changed[k] = True
                self.l0[k] = lb_new[i]
                self.u0[k] = ub_new[i]
        self.ls = self.E * self.l0
        self.us = self.E * self.u0
        # pinned columns (lb == ub) turn their bound rows into equalities,
        # which converge far faster on the boosted step size; refactorize
        # when the equality set changes
        eq = np.isfinite(self.ls) & np.isfinite(self.us) & (self.us - self.ls < 1e-12)
        if not np.array_equal(eq, self._eq_rows):
            self._eq_rows = eq
            self._set_rho(self._rho_base)
        # duals on the edited rows refer to the old bounds and poison both
        # the iteration and the active-set detection; the rest of the dual
        # vector usually stays close to optimal when few bounds move
        if self._z_warm is not None:
            self._z_warm = np.clip(self.Gs @ self._x_warm, self.ls, self.us)
            if changed.sum() * 4 > self.mz:
                self._y_warm = np.zeros(self.mz)
            else:
                self._y_warm = self._y_warm.copy()
                self._y_warm[changed] = 0.0

    def update_rhs(self, b_new: np.ndarray) -> None:
        """Replace the constraint right-hand side (matrix and variable bounds
        unchanged); no refactorization needed."""
        b_new = np.asarray(b_new, dtype=float).ravel()
        self.spec.b = b_new
        self.l0 = self.l0.copy()
        self.u0 = self.u0.copy()
        changed = np.zeros(self.mz, dtype=bool)
        for k, entry in enumerate(self._row_map):
            kind = entry[0]
            if kind == "eq":
                i = entry[1]
                if self.l0[k] != b_new[i]:
                    changed[k] = True
                self.l0[k] = b_new[i]
                self.u0[k] = b_new[i]
            elif kind in ("ineq", "pen"):
                i = entry[1]
                if self.u0[k] != b_new[i]:
                    changed[k] = True
                self.u0[k] = b_new[i]
        self.ls = self.E * self.l0
        self.us = self.E * self.u0
        # same warm-start policy as update_bounds: duals on edited rows refer
        # to the old rhs and are reset, the rest are kept
        if self._z_warm is not None:
            self._z_warm = np.clip(self.Gs @ self._x_warm, self.ls, self.us)
            if changed.sum() * 4 > self.mz:
                self._y_warm = np.zeros(self.mz)
            else:
                self._y_warm = self._y_warm.copy()
                self._y_warm[changed] = 0.0

    def export_warm(self):
        """Warm-start state in unscaled coordinates, or None before any solve."""
        if self._z_warm is None:
            return None
        return self._unscale(self._x_warm, self._z_warm, self._y_warm)

    def import_warm(self, state) -> None:
        """Adopt warm-start state from a solver over the same rows and columns
        (coefficient values may differ, e.g. after a big-M update)."""
        if state is None:
            return
        x, z, y = state
        self._x_warm = x / self.D
        self._z_warm = np.clip(self.E * z, self.ls, self.us)
        self._y_warm = self.c * y / self.E

    # -- iteration ----------------------------------------------------------

    def solve(self, x0: np.ndarray = None, warm: bool = True) -> QpResult:
        n, nz, mz = self.spec.n, self.nz, self.mz
        xs_ = np.zeros(nz)
        if x0 is not None:
            xs_[:n] = np.asarray(x0, dtype=float).ravel()
            if self.spec.penalty_rows:
                rows = list(self.spec.penalty_rows)
                viol = self.spec.A[rows] @ xs_[:n] - self.spec.b[rows]
                xs_[n:] = np.maximum(0.0, viol)
            xs_ = xs_ / self.D
            zs_ = self.Gs @ xs_
            ys_ = np.zeros(mz)
        elif warm and self._z_warm is not None:
            xs_ = self._x_warm.copy()
            zs_ = np.clip(self._z_warm, self.ls, self.us)
            ys_ = self._y_warm.copy()
        else:
            zs_ = np.clip(self.Gs @ xs_, self.ls, self.us)
            ys_ = np.zeros(mz)

        best = None
        y_prev_chk = ys_.copy()
        status = QpStatus.MAX_ITER
        it = 0
        checks = 0
        self._failed_polish_key = None
        # a warm start from a nearby problem usually carries the optimal
        # active set already; one direct active-set solve then replaces the
        # whole splitting run (the result is KKT-verified, so never wrong)
        if x0 is None and warm and self._z_warm is not None:
            x, z, y = self._unscale(xs_, zs_, ys_)
            ok, xp, yp = self._polish(x, z, y)
            if ok:
                return self._result(xp, yp, QpStatus.SOLVED, 0)
        rhs = np.empty(nz + mz)
        while it < self.max_iter:
            rho = self.rho
            for _ in range(self.check_every):
                it += 1
                rhs[:nz] = self.sigma * xs_ - self.gs
                rhs[nz:] = zs_ - ys_ / rho
                sol = sla.lu_solve(self._lu, rhs)
                x_t = sol[:nz]
                nu = sol[nz:]
                z_t = zs_ + (nu - ys_) / rho
                xs_ = self.alpha * x_t + (1.0 - self.alpha) * xs_
                z_r = self.alpha * z_t + (1.0 - self.alpha) * zs_ + ys_ / rho
                zs_ = np.clip(z_r, self.ls, self.us)
                ys_ = rho * (z_r - zs_)
            checks += 1
            x, z, y = self._unscale(xs_, zs_, ys_)
            r_p, r_d = self._residuals(x, z, y)
            res = max(r_p, r_d)
            if best is None or res < best[0]:
                best = (res, xs_.copy(), zs_.copy(), ys_.copy())
            if res <= max(self.tol, 1e-10) and self._kkt_residual(x, y) <= self.tol:
                status = QpStatus.SOLVED
                x_fin, y_fin = x, y
                break
            rel_p, rel_d = self._relative(x, z, y, r_p, r_d)
            if max(rel_p, rel_d) <= 1e-2 or checks % 10 == 0 or it >= self.max_iter // 2:
                ok, xp, yp = self._polish(x, z, y)
                if ok:
                    status = QpStatus.SOLVED
                    x_fin, y_fin = xp, yp
                    break
            dy = (ys_ - y_prev_chk) * self.E / self.c
            if self._primal_infeasible(dy):
                self._x_warm, self._z_warm, self._y_warm = xs_, zs_, ys_
                return QpResult(
                    x=x[:n].copy(),
                    objective=np.inf,
                    kkt_residual=np.inf,
                    status=QpStatus.PRIMAL_INFEASIBLE,
                    duals=np.zeros(self.spec.A.shape[0]),
                    bound_duals=np.zeros(n),
                    iterations=it,
                )
            y_prev_chk = ys_.copy()
            self._adapt_rho(xs_, zs_, ys_)

        if status is not QpStatus.SOLVED and best is not None:
            _, xs_, zs_, ys_ = best
            x, z, y = self._unscale(xs_, zs_, ys_)
            ok, xp, yp = self._polish(x, z, y)
            if ok:
                status = QpStatus.SOLVED
                x_fin, y_fin = xp, yp
            else:
                x_fin, y_fin = x, y
                if self._kkt_residual(x, y) <= self.tol:
                    status = QpStatus.SOLVED
        self._x_warm, self._z_warm, self._y_warm = xs_.copy(), zs_.copy(), ys_.copy()
        return self._result(x_fin, y_fin, status, it)

    def _unscale(self, xs_, zs_, ys_):
        return self.D * xs_, zs_ / self.E, self.E * ys_ / self.c

    def _residuals(self, x, z, y):
        Gx = self.G0 @ x
        r_p = float(np.max(np.abs(Gx - z), initial=0.0))
        r_d = float(np.max(np.abs(self.P0 @ x + self.g0 + self.G0.T @ y), initial=0.0))
        return r_p, r_d

    def _relative(self, x, z, y, r_p, r_d):
        s_p = max(
            float(np.max(np.abs(self.G0 @ x), initial=0.0)),
            float(np.max(np.abs(z), initial=0.0)),
            1.0,
        )
        s_d = max(
            float(np.max(np.abs(self.P0 @ x), initial=0.0)),
            float(np.max(np.abs(self.G0.T @ y), initial=0.0)),
            float(np.max(np.abs(self.g0), initial=0.0)),
            1.0,
        )
        return r_p / s_p, r_d / s_d

    def _adapt_rho(self, xs_, zs_, ys_):
        """Residual-balancing rho update (with refactorization) on the scaled
        problem, OSQP style."""
        Gx = self.Gs @ xs_
        r_p = float(np.max(np.abs(Gx - zs_), initial=0.0))
        r_d = float(np.max(np.abs(self.Ps @ xs_ + self.gs + self.Gs.T @ ys_), initial=0.0))
        s_p = max(float(np.max(np.abs(Gx), initial=0.0)), float(np.max(np.abs(zs_), initial=0.0)), 1e-10)
        s_d = max(
            float(np.max(np.abs(self.Ps @ xs_), initial=0.0)),
            float(np.max(np.abs(self.Gs.T @ ys_), initial=0.0)),
            float(np.max(np.abs(self.gs), initial=0.0)),
            1e-10,
        )
        ratio = np.sqrt((r_p / s_p) / max(r_d / s_d, 1e-16))
        new_base = float(np.clip(self._rho_base * ratio, self.rho_min, self.rho_max))
        if new_base > 5.0 * self._rho_base or new_base < self._rho_base / 5.0:
            self._set_rho(new_base)

    def _primal_infeasible(self, dy) -> bool:
        norm = float(np.max(np.abs(dy), initial=0.0))
        if norm < 1e-12:
            return False
        eps = 1e-5 * norm
        if float(np.max(np.abs(self.G0.T @ dy), initial=0.0)) > eps:
            return False
        dyp = np.maximum(dy, 0.0)
        dym = np.minimum(dy, 0.0)
        if np.any(dyp[np.isinf(self.u0)] > eps) or np.any(-dym[np.isinf(self.l0)] > eps):
            return False
        support = float(np.sum(self.u0[np.isfinite(self.u0)] * dyp[np.isfinite(self.u0)]))
        support += float(np.sum(self.l0[np.isfinite(self.l0)] * dym[np.isfinite(self.l0)]))
        return support < -eps

    # -- polish -------------------------------------------------------------

    def _polish(self, x, z, y):
        """Active-set polish: equality-solve on the detected working set,
        then repair it by dropping wrong-signed multipliers and adding
        violated rows until KKT verifies.

        Operates entirely on the unscaled problem.  The initial working set
        comes from the splitting iterate, which may be wrong on degenerate
        problems; hence the repair loop.
        """
        fin_l = np.isfinite(self.l0)
        fin_u = np.isfinite(self.u0)
        act_tol = 1e-7 * (1.0 + float(np.max(np.abs(z), initial=0.0)))
        y_tol = 1e-7 * (1.0 + float(np.max(np.abs(y), initial=0.0)))
        low = ((y < -y_tol) | (np.abs(z - self.l0) < act_tol)) & fin_l
        upp = ((y > y_tol) | (np.abs(z - self.u0) < act_tol)) & fin_u
        # a polish attempt is fully determined by its starting working set;
        # if that set already failed this solve, don't redo the factorizations
        key = (low.tobytes(), upp.tobytes())
        if key == getattr(self, "_failed_polish_key", None):
            return False, None, None
        nz = self.nz
        for _ in range(12):
            idx = np.where(low | upp)[0]
            at_up = upp[idx]
            target = np.where(at_up, self.u0[idx], self.l0[idx])
            Ga = self.G0[idx]
            na = len(idx)
            reg = 1e-9
            kkt = np.zeros((nz + na, nz + na))
            kkt[:nz, :nz] = self.P0 + reg * np.eye(nz)
            kkt[:nz, nz:] = Ga.T
            kkt[nz:, :nz] = Ga
            kkt[nz:, nz:] = -reg * np.eye(na)
            rhs = np.concatenate([-self.g0, target])
            try:
                lu = sla.lu_factor(kkt)
            except sla.LinAlgError:
                self._failed_polish_key = key
                return False, None, None

            # refinement against the unregularized system; keep the best
            # iterate since the working set may be rank-deficient
            def _resid(s):
                return np.concatenate(
                    [
                        self.P0 @ s[:nz] + Ga.T @ s[nz:] + self.g0,
                        Ga @ s[:nz] - target,
                    ]
                )

            sol = sla.lu_solve(lu, rhs)
            best_norm = float(np.max(np.abs(_resid(sol)), initial=0.0))
            for _ in range(10):
                cand = sol - sla.lu_solve(lu, _resid(sol))
                norm = float(np.max(np.abs(_resid(cand)), initial=0.0))
                if norm < best_norm:
                    sol, best_norm = cand, norm
                else:
                    break
            xp = sol[:nz]
            ya = sol[nz:]
            yp = np.zeros(self.mz)
            yp[idx] = ya
            if self._kkt_residual(xp, yp) <= self.tol:
                return True, xp, yp
            # repair: wrong-signed multipliers leave the set, violated rows
            # join at the violated side (equal bounds are never dropped)
            two_sided = low & upp
            sign_tol = 1e-9 * (1.0 + float(np.max(np.abs(ya), initial=0.0)))
            changed = False
            for k, r in enumerate(idx):
                if two_sided[r]:
                    continue
                if at_up[k] and ya[k] < -sign_tol:
                    upp[r] = False
                    changed = True
                elif not at_up[k] and ya[k] > sign_tol:
                    low[r] = False
                    changed = True
            Gx = self.G0 @ xp
            feas_tol = 1e-9 * (1.0 + float(np.max(np.abs(Gx), initial=0.0)))
            for r in np.where(fin_u & ~upp & (Gx > self.u0 + feas_tol))[0]:
                upp[r] = True
                changed = True
            for r in np.where(fin_l & ~low & (Gx < self.l0 - feas_tol))[0]:
                low[r] = True
                changed = True
            if not changed:
                self._failed_polish_key = key
                return False, None, None
        self._failed_polish_key = key
        return False, None, None

    def _kkt_residual(self, x, y) -> float:
        Gx = self.G0 @ x
        r_stat = float(np.max(np.abs(self.P0 @ x + self.g0 + self.G0.T @ y), initial=0.0))
        r_prim = float(np.max(np.maximum(Gx - self.u0, 0.0), initial=0.0))
        r_prim = max(r_prim, float(np.max(np.maximum(self.l0 - Gx, 0.0), initial=0.0)))
        # dual feasibility and complementary slackness
        r_dual = float(np.max(np.where(np.isinf(self.u0), np.maximum(y, 0.0), 0.0), initial=0.0))
        r_dual = max(r_dual, float(np.max(np.where(np.isinf(self.l0), np.maximum(-y, 0.0), 0.0), initial=0.0)))
        slack_u = np.where(np.isfinite(self.u0), self.u0 - Gx, 0.0)
        slack_l = np.where(np.isfinite(self.l0), Gx - self.l0, 0.0)
        comp = np.where(y > 0, y * slack_u, -y * slack_l)
        r_comp = float(np.max(np.abs(comp), initial=0.0))
        return max(r_stat, r_prim, r_dual, r_comp)

    # -- result -------------------------------------------------------------

    def _result(self, x, y, status, it) -> QpResult:
        spec = self.spec
        n = spec.n
        xs = x[:n].copy()
        m = spec.A.shape[0]
        duals = np.zeros(m)
        bound_duals = np.zeros(n)
        for yk, entry in zip(y, self._row_map):
            kind = entry[0]
            if kind == "eq":
                _, i, j = entry
                duals[i] = max(yk, 0.0)
                duals[j] = max(-yk, 0.0)
            elif kind == "ineq":
                duals[entry[1]] = max(yk, 0.0)
            elif kind == "pen":
                duals[entry[1]] = max(yk, 0.0)
            elif kind == "bnd":
                bound_duals[entry[1]] = yk
        viol = spec.A @ xs - spec.b
        pen_term = sum(w * max(0.0, float(viol[r])) for r, w in zip(spec.penalty_rows, spec.w_pen))
        obj = float(0.5 * xs @ spec.Q @ xs + spec.q @ xs + spec.const + pen_term)
        kkt = self._kkt_residual(x, y)
        return QpResult(
            x=xs,
            objective=obj,
            kkt_residual=kkt,
            status=status,
            duals=duals,
            bound_duals=bound_duals,
            iterations=it,
        )


def solve_qp(
    spec: QpSpec,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    x0: np.ndarray = None,
) -> QpResult:
    """One-shot QP solve; see QpSolver for the reusable workspace."""
    return QpSolver(spec, tol=tol, max_iter=max_iter).solve(x0=x0, warm=False)


class FixedColumnSolver:
    """Workspace for a family of QPs sharing one QpSpec but differing in the
    values pinned to a fixed set of columns (typically the binaries).

    The pinned columns are eliminated up front: their constraint coefficients
    move into the right-hand side and their objective cross terms into the
    linear term, so each value change is a pure vector update on one shared
    factorization.  Crucially this keeps large coefficients on pinned columns
    (big-M entries on binaries) out of the iteration matrix: left in place
    they dominate the row scaling and crush the coefficients of the remaining
    variables, which stalls the splitting iteration.
    """

    def __init__(self, spec: QpSpec, cols, tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER):
        cols = sorted({int(c) for c in cols})
        n = spec.n
        self.spec = spec
        self.cols = np.array(cols, dtype=int)
        mask = np.ones(n, dtype=bool)
        mask[self.cols] = False
        self.free = np.where(mask)[0]
        self._A_fix = spec.A[:, self.cols].copy()
        self._Q_cross = spec.Q[np.ix_(self.free, self.cols)].copy()
        self._Q_fix = spec.Q[np.ix_(self.cols, self.cols)].copy()
        self._b0 = spec.b.copy()
        A_red = spec.A[:, self.free].copy()
        # hard rows whose free part vanished are decided by the pinned values
        pen = set(spec.penalty_rows)
        self._const_rows = np.array(
            [r for r in range(A_red.shape[0]) if r not in pen and not A_red[r].any()],
            dtype=int,
        )
        red = QpSpec(
            Q=spec.Q[np.ix_(self.free, self.free)].copy(),
            q=spec.q[self.free].copy(),
            A=A_red,
            b=spec.b.copy(),
            lb=spec.lb[self.free].copy(),
            ub=spec.ub[self.free].copy(),
            penalty_rows=spec.penalty_rows,
            w_pen=spec.w_pen,
            const=spec.const,
        )
        self.solver = QpSolver(red, tol=tol, max_iter=max_iter)
        self._solved_once = False

    def export_warm(self):
        return None if not self._solved_once else self.solver.export_warm()

    def import_warm(self, state) -> None:
        if state is not None:
            self.solver.import_warm(state)
            self._solved_once = True

    def solve(self, values, q=None, warm: bool = True, x0: np.ndarray = None) -> QpResult:
        """Solve with the pinned columns set to ``values``; ``q`` optionally
        replaces the full-spec linear term for this solve."""
        v = np.asarray(values, dtype=float).ravel()
        if v.shape != self.cols.shape:
            raise ValueError("one value per pinned column required")
        q_full = self.spec.q if q is None else np.asarray(q, dtype=float).ravel()
        b_red = self._b0 - self._A_fix @ v
        shift = float(0.5 * v @ self._Q_fix @ v + q_full[self.cols] @ v)
        if self._const_rows.size and np.any(b_red[self._const_rows] < -1e-9):
            x = np.zeros(self.spec.n)
            x[self.cols] = v
            return QpResult(
                x=x,
                objective=np.inf,
                kkt_residual=np.inf,
                status=QpStatus.PRIMAL_INFEASIBLE,
                duals=np.zeros(self.spec.A.shape[0]),
                bound_duals=np.zeros(self.spec.n),
                iterations=0,
            )
        self.solver.update_rhs(b_red)
        self.solver.update_linear(q_full[self.free] + self._Q_cross @ v)
        res = self.solver.solve(
            x0=None if x0 is None else np.asarray(x0, dtype=float).ravel()[self.free],
            warm=warm and self._solved_once,
        )
        self._solved_once = True
        x = np.empty(self.spec.n)
        x[self.free] = res.x
        x[self.cols] = v
        bound_duals = np.zeros(self.spec.n)
        bound_duals[self.free] = res.bound_duals
        if res.status is QpStatus.SOLVED:
            # pinned columns absorb their stationarity residual into the bound dual
            grad = self.spec.Q @ x + q_full + self.spec.A.T @ res.duals
            bound_duals[self.cols] = -grad[self.cols]
        return QpResult(
            x=x,
            objective=res.objective + shift if np.isfinite(res.objective) else res.objective,
            kkt_residual=res.kkt_residual,
            status=res.status,
            duals=res.duals,
            bound_duals=bound_duals,
            iterations=res.iterations,
        )


# ---------------------------------------------------------------------------
# Stacked (monolithic) views of a multi-agent problem


def stack(
    p,
    use_initial_M: bool = False,
    relax_binaries: bool = True,
    fixed_binaries: dict = None,
    penalize_bigm: bool = True,
    bigm_weight: float = 1.0,
):
    """Assemble a MiqpProblem into one QpSpec over the concatenated variable.

    Rows are ordered [agent-0 local rows, ..., agent-N-1 local rows,
    coupling rows].  ``fixed_binaries`` maps (agent_index, col) -> {0, 1} and
    pins those columns via equal bounds.  Returns (QpSpec, var_offsets,
    row_offsets) where row_offsets[-1] is the coupling-row offset.
    """
    from . import model as _m

    n_total = sum(a.n for a in p.agents)
    offsets = []
    off = 0
    for a in p.agents:
        offsets.append(off)
        off += a.n
    Q = np.zeros((n_total, n_total))
    q = np.zeros(n_total)
    lb = np.zeros(n_total)
    ub = np.zeros(n_total)
    const = 0.0
    rows = []
    rhs = []
    row_offsets = []
    penalty = []
    weights = []
    roff = 0
    for i, a in enumerate(p.agents):
        o = offsets[i]
        Q[o : o + a.n, o : o + a.n] = a.Q
        q[o : o + a.n] = a.q
        const += a.const
        lb[o : o + a.n] = a.lb
        ub[o : o + a.n] = a.ub
        for c in a.binary_cols:
            if fixed_binaries is not None and (i, c) in fixed_binaries:
                v = float(fixed_binaries[(i, c)])
                lb[o + c] = v
                ub[o + c] = v
            elif relax_binaries:
                lb[o + c] = 0.0
                ub[o + c] = 1.0
        A_eff, b_eff = (a.A, a.b) if use_initial_M else _m.effective_local(a)
        blk = np.zeros((a.m, n_total))
        blk[:, o : o + a.n] = A_eff
        rows.append(blk)
        rhs.append(b_eff)
        row_offsets.append(roff)
        if penalize_bigm:
            for e in a.bigm_entries:
                if not e.coupling:
                    penalty.append(roff + e.row)
                    weights.append(bigm_weight)
        for r, w in zip(a.soft_rows, a.soft_weights):
            penalty.append(roff + r)
            weights.append(w)
        roff += a.m
    if use_initial_M:
        Cs, d = p.C, p.d
    else:
        Cs, d = _m.effective_coupling(p)
    if p.m_c:
        cpl = np.hstack([Ci for Ci in Cs]) if n_total else np.zeros((p.m_c, 0))
        rows.append(cpl)
        rhs.append(d)
        if penalize_bigm:
            for i, a in enumerate(p.agents):
                for e in a.bigm_entries:
                    if e.coupling:
                        penalty.append(roff + e.row)
                        weights.append(bigm_weight)
    row_offsets.append(roff)
    A = np.vstack(rows) if rows else np.zeros((0, n_total))
    b = np.concatenate(rhs) if rhs else np.zeros(0)
    order = np.argsort(np.asarray(penalty, dtype=int), kind="stable") if penalty else []
    penalty = tuple(int(penalty[k]) for k in order)
    weights = tuple(float(weights[k]) for k in order)
    spec = QpSpec(Q=Q, q=q, A=A, b=b, lb=lb, ub=ub, penalty_rows=penalty, w_pen=weights, const=const)
    return spec, offsets, row_offsets


def split_stacked(p, x: np.ndarray) -> list:
    out = []
    off = 0
    for a in p.agents:
        out.append(np.asarray(x[off : off + a.n], dtype=float).copy())
        off += a.n
    return out


def solve_penalized_relaxation(
    p,
    weights=None,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    x0: np.ndarray = None,
) -> QpResult:
    """Relaxed QP with every big-M row as a max(0, .) penalty, all other rows hard.

    ``weights`` is a scalar or a vector over the big-M rows in stacked order
    (default 1.0 each).
    """
    bigm_weight = 1.0
    spec, _, _ = stack(p, relax_binaries=True, penalize_bigm=True, bigm_weight=bigm_weight)
    if weights is not None:
        w = np.asarray(weights, dtype=float).ravel()
        if w.size == 1:
            spec, _, _ = stack(p, relax_binaries=True, penalize_bigm=True, bigm_weight=float(w[0]))
        else:
            if w.size != len(spec.penalty_rows):
                raise ValueError("weights length must match the number of penalty rows")
            spec.w_pen = tuple(float(v) for v in w)
    return solve_qp(spec, tol=tol, max_iter=max_iter, x0=x0)
