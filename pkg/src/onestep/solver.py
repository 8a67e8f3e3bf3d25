"""Minimum-dispersion balancing weights for one treatment group.

For the rows of one treatment group with basis matrix ``B`` (``m x K``) the
solver finds

    minimize    sum_i w_i**2
    subject to  |B[:, k] @ w - target[k]| <= delta[k]   for every k
                sum_i w_i = 1
                w_i >= 0                                 (optional)

The problem is a strictly convex QP. It is solved with the dual active-set
method of Goldfarb and Idnani, specialised to the identity Hessian so that
each iteration only needs a small ``q x q`` solve, where ``q`` is the number
of active balance constraints plus one. Weight bounds are handled implicitly
by fixing pinned weights at zero.

Dual variables follow one sign convention throughout: at an optimum

    2 w_i = nu - B[i] @ lam + s_i,      s_i >= 0,  s_i w_i = 0

where ``lam[k] > 0`` means the upper side of balance constraint ``k`` is
active, ``lam[k] < 0`` the lower side, and ``nu`` is the multiplier of the
normalization constraint.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
MAX_ITERATIONS = "max-iterations"

_EPS = np.finfo(float).eps


@dataclass(frozen=True)
class SolverSettings:
    feasibility_tol: float = 1e-8
    optimality_tol: float = 1e-8
    max_iterations: int = 100_000

    def __post_init__(self):
        if not (self.feasibility_tol > 0 and self.optimality_tol > 0 and self.max_iterations > 0):
            raise ValueError("solver settings must all be positive")


@dataclass(frozen=True)
class BalanceProblem:
    """One treatment group's balancing problem.

    Parameters
    ----------
    B : (m, K) array
        Basis functions evaluated on the group's units.
    target : (K,) array
        Target means of the basis functions.
    deltas : (K,) array
        Nonnegative imbalance tolerances; zero requests exact balance.
    nonnegative : bool
        Whether weights are constrained to be nonnegative.
    """

    B: np.ndarray
    target: np.ndarray
    deltas: np.ndarray
    nonnegative: bool = True
    normalized: bool = True
    dispersion: str = "sum-of-squares"

    def __post_init__(self):
        B = np.asarray(self.B, dtype=float)
        if B.ndim == 1:
            B = B[:, None]
        target = np.atleast_1d(np.asarray(self.target, dtype=float))
        deltas = np.atleast_1d(np.asarray(self.deltas, dtype=float))
        if B.shape[1] == 0:
            target = target.reshape(0)
            deltas = deltas.reshape(0)
        if B.shape[0] == 0:
            raise ValueError("balance problem needs at least one unit")
        if target.shape != (B.shape[1],) or deltas.shape != (B.shape[1],):
            raise ValueError(
                f"target and deltas must have length K={B.shape[1]}, "
                f"got {target.shape} and {deltas.shape}"
            )
        if not (np.isfinite(B).all() and np.isfinite(target).all() and np.isfinite(deltas).all()):
            raise ValueError("basis matrix, target and deltas must be finite")
        if (deltas < 0).any():
            raise ValueError("tolerances must be nonnegative")
        if not self.normalized:
            raise ValueError("only normalized weights are supported")
        if self.dispersion != "sum-of-squares":
            raise ValueError(f"unsupported dispersion {self.dispersion!r}")
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "target", target)
        object.__setattr__(self, "deltas", deltas)

    @property
    def m(self) -> int:
        return self.B.shape[0]

    @property
    def K(self) -> int:
        return self.B.shape[1]


@dataclass
class WeightSolution:
    weights: np.ndarray
    lam: np.ndarray
    nu: float
    imbalances: np.ndarray
    objective: float
    status: str
    iterations: int
    relaxation_hint: float | None = None
    message: str = ""

    @property
    def optimal(self) -> bool:
        return self.status == OPTIMAL

    @property
    def duals(self) -> np.ndarray:
        """Balance duals followed by the normalization dual."""
        return np.append(self.lam, self.nu)


@dataclass
class KKTReport:
    stationarity_residual: float
    primal_violation: float
    complementarity_violation: float
    tol: float
    passed: bool = field(init=False)

    def __post_init__(self):
        self.passed = max(
            self.stationarity_residual, self.primal_violation, self.complementarity_violation
        ) <= self.tol


class DualCheckError(ValueError):
    """The affine primal-dual reconstruction does not apply to this solution."""


def uniform_relaxation(p: BalanceProblem) -> float:
    """Smallest ``c >= 0`` such that tolerances ``delta + c`` admit uniform weights."""
    if p.K == 0:
        return 0.0
    gap = np.abs(p.B.mean(axis=0) - p.target) - p.deltas
    return float(max(0.0, gap.max()))


def _infeasible(p, iterations, message):
    m = p.m
    return WeightSolution(
        weights=np.full(m, np.nan),
        lam=np.full(p.K, np.nan),
        nu=float("nan"),
        imbalances=np.full(p.K, np.nan),
        objective=float("nan"),
        status=INFEASIBLE,
        iterations=iterations,
        relaxation_hint=uniform_relaxation(p),
        message=message,
    )


class _Constraints:
    """General (non-bound) constraints in scaled coordinates.

    Stored as ``normal @ w >= rhs`` (or ``==`` for equalities). Balance rows
    are centred on the group mean and scaled by the group spread, which is a
    valid reformulation because the normalization constraint is always active.
    """

    def __init__(self, p: BalanceProblem, feas_tol: float):
        m = p.m
        normals = [np.ones(m)]
        rhs = [1.0]
        is_eq = [True]
        owner = [-1]  # -1 normalization, k for balance row k
        side = [0]  # +1 lower (>=), -1 upper, 0 equality
        scale = [1.0]
        thresh = [0.01 * feas_tol]
        self.constant_ok = True
        self.mu = np.zeros(p.K)
        self.s = np.ones(p.K)
        self.dropped = np.zeros(p.K, dtype=bool)
        for k in range(p.K):
            b = p.B[:, k]
            mu = b.mean()
            s = np.sqrt(np.mean((b - mu) ** 2))
            bmax = np.abs(b).max()
            self.mu[k] = mu
            floor = 64 * _EPS * (bmax + abs(p.target[k]) + p.deltas[k])
            if s <= 1e3 * _EPS * max(bmax, 1.0):
                # the weighted mean of a constant column is that constant
                self.dropped[k] = True
                if abs(mu - p.target[k]) > p.deltas[k] + max(feas_tol, floor):
                    self.constant_ok = False
                continue
            self.s[k] = s
            c = (b - mu) / s
            th = max(0.01 * feas_tol, floor) / s
            lo = (p.target[k] - p.deltas[k] - mu) / s
            hi = (p.target[k] + p.deltas[k] - mu) / s
            if p.deltas[k] == 0:
                normals.append(c)
                rhs.append(lo)
                is_eq.append(True)
                owner.append(k)
                side.append(0)
                scale.append(s)
                thresh.append(th)
            else:
                normals += [c, -c]
                rhs += [lo, -hi]
                is_eq += [False, False]
                owner += [k, k]
                side += [1, -1]
                scale += [s, s]
                thresh += [th, th]
        self.N = np.column_stack(normals)
        self.rhs = np.array(rhs)
        self.is_eq = np.array(is_eq)
        self.owner = np.array(owner)
        self.side = np.array(side)
        self.thresh = np.array(thresh)
        self.norms = np.sqrt((self.N ** 2).sum(axis=0))


def solve_weights(p: BalanceProblem, s: SolverSettings | None = None) -> WeightSolution:
    """Solve the balancing problem for one treatment group.

    Returns a :class:`WeightSolution` whose ``status`` is ``"optimal"``,
    ``"infeasible"`` (with ``relaxation_hint`` set to the uniform tolerance
    inflation that would make uniform weights feasible) or
    ``"max-iterations"``.
    """
    s = s or SolverSettings()
    m = p.m
    cons = _Constraints(p, s.feasibility_tol)
    if not cons.constant_ok:
        return _infeasible(p, 0, "a constant basis column cannot reach its target")

    N, rhs = cons.N, cons.rhs
    ng = N.shape[1]
    bound_thresh = 0.01 * s.feasibility_tol

    w = np.zeros(m)
    active: list[int] = []  # general constraints in the active set
    u_gen = np.zeros(ng)  # multipliers of general constraints
    flip = np.ones(ng)  # equality constraints may be added with flipped sign
    zero = np.zeros(m, dtype=bool)  # weights pinned at the bound
    u_bnd = np.zeros(m)
    iters = 0

    def direction(v):
        """Primal step and dual change for adding normal ``v``."""
        F = ~zero
        if active:
            Na = N[:, active] * flip[active]
            Q, R = np.linalg.qr(Na[F])
            qv = Q.T @ v[F]
            rA = np.linalg.solve(R, qv)
            pv = v[F] - Q @ qv
            pv -= Q @ (Q.T @ pv)  # second pass keeps the projection orthogonal
            rZ = v[zero] - Na[zero] @ rA
        else:
            rA = np.zeros(0)
            pv = v[F].copy()
            rZ = v[zero].copy()
        z = np.zeros(m)
        z[F] = 0.5 * pv
        return z, rA, rZ

    def add(kind, idx):
        """Run the add step for one violated constraint; False if infeasible."""
        nonlocal iters, w
        if kind == "g":
            v = N[:, idx] * flip[idx]
            b = rhs[idx] * flip[idx]
            eq = cons.is_eq[idx]
        else:
            v = np.zeros(m)
            v[idx] = 1.0
            b = 0.0
            eq = False
        u_p = 0.0
        while True:
            iters += 1
            if iters > s.max_iterations:
                return "maxit"
            z, rA, rZ = direction(v)
            slack = v @ w - b
            zn = z @ v
            # ratio test over droppable active constraints
            t1, drop = np.inf, None
            for pos, j in enumerate(active):
                if not cons.is_eq[j] and rA[pos] > 0:
                    t = u_gen[j] / rA[pos]
                    if t < t1:
                        t1, drop = t, ("g", j, pos)
            if rZ.size:
                zidx = np.flatnonzero(zero)
                pos_r = rZ > 0
                if pos_r.any():
                    cand = u_bnd[zidx[pos_r]] / rZ[pos_r]
                    j = int(np.argmin(cand))
                    if cand[j] < t1:
                        t1, drop = cand[j], ("b", int(zidx[pos_r][j]), None)
            # v lies in the span of the active normals; any new row is
            # dependent once no more free weights than active rows remain
            degenerate = zn <= 0.5 * (1e-8 * np.sqrt(v @ v)) ** 2 or m - zero.sum() <= len(active)
            if degenerate:
                if drop is None:
                    if eq and abs(slack) <= 1e-12 * max(1.0, abs(b)):
                        return "redundant"
                    return "infeasible"
                t = t1
            else:
                t2 = max(-slack, 0.0) / zn
                t = min(t1, t2)
            if not degenerate:
                w = w + t * z
            for pos, j in enumerate(active):
                u_gen[j] -= t * rA[pos]
            if rZ.size:
                u_bnd[zero] -= t * rZ
            u_p += t
            if not degenerate and t == t2:
                if kind == "g":
                    active.append(idx)
                    u_gen[idx] = u_p
                else:
                    zero[idx] = True
                    w[idx] = 0.0
                    u_bnd[idx] = u_p
                return "added"
            # partial step: drop the blocking constraint and retry
            if drop[0] == "g":
                u_gen[drop[1]] = 0.0
                active.remove(drop[1])
            else:
                zero[drop[1]] = False
                u_bnd[drop[1]] = 0.0

    # equalities first; they are never dropped
    for j in np.flatnonzero(cons.is_eq):
        if N[:, j] @ w - rhs[j] > 0:
            flip[j] = -1.0
        res = add("g", j)
        if res == "infeasible":
            return _infeasible(p, iters, "equality constraints are inconsistent")
        if res == "maxit":
            break

    status = OPTIMAL
    ineq = np.flatnonzero(~cons.is_eq)
    while iters <= s.max_iterations:
        best, pick = 0.0, None
        if ineq.size:
            act = np.zeros(ng, dtype=bool)
            act[active] = True
            cand = ineq[~act[ineq]]
            if cand.size:
                slack = N[:, cand].T @ w - rhs[cand]
                viol = slack < -cons.thresh[cand]
                if viol.any():
                    score = slack[viol] / cons.norms[cand[viol]]
                    j = int(np.argmin(score))
                    best, pick = score[j], ("g", int(cand[viol][j]))
        if p.nonnegative:
            free = np.flatnonzero(~zero)
            if free.size:
                j = int(np.argmin(w[free]))
                if w[free[j]] < -bound_thresh and w[free[j]] < best:
                    best, pick = w[free[j]], ("b", int(free[j]))
        if pick is None:
            break
        res = add(*pick)
        if res == "infeasible":
            return _infeasible(p, iters, "balance constraints cannot be met")
        if res == "maxit":
            break
    else:
        status = MAX_ITERATIONS
    if iters > s.max_iterations:
        status = MAX_ITERATIONS

    w, u_gen, u_bnd = _polish(N, rhs, flip, active, zero, w, u_gen, u_bnd, cons, p.nonnegative)
    if p.nonnegative:
        w[zero] = 0.0

    lam_s = np.zeros(p.K)
    nu_s = 0.0
    for j in range(ng):
        if u_gen[j] == 0.0:
            continue
        k = cons.owner[j]
        u = u_gen[j] * flip[j]
        if k < 0:
            nu_s += u
        elif cons.side[j] == -1:
            lam_s[k] += u
        else:
            lam_s[k] -= u
    lam = np.where(cons.dropped, 0.0, lam_s / cons.s)
    nu = nu_s + float(np.sum(lam_s * cons.mu / cons.s))

    imb = p.B.T @ w - p.target
    return WeightSolution(
        weights=w,
        lam=lam,
        nu=nu,
        imbalances=imb,
        objective=float(w @ w),
        status=status,
        iterations=iters,
        message="" if status == OPTIMAL else "iteration limit reached",
    )


def _polish(N, rhs, flip, active, zero, w, u_gen, u_bnd, cons, nonnegative):
    """Re-solve the final active set directly to remove accumulated drift."""
    if not active:
        return w, u_gen, u_bnd
    F = ~zero
    Na = N[:, active] * flip[active]
    b = rhs[active] * flip[active]
    NF = Na[F]
    try:
        uA = 2.0 * np.linalg.solve(NF.T @ NF, b)
    except np.linalg.LinAlgError:
        return w, u_gen, u_bnd
    w2 = np.zeros_like(w)
    w2[F] = 0.5 * NF @ uA
    uZ = -Na[zero] @ uA
    ineq = ~cons.is_eq[active]
    bad_dual = (uA[ineq] < -1e-10).any() or (uZ < -1e-10).any()
    if bad_dual or not np.isfinite(w2).all() or (nonnegative and (w2[F] < -1e-12).any()):
        return w, u_gen, u_bnd
    u_gen = u_gen.copy()
    u_gen[active] = uA
    u_bnd = np.zeros_like(u_bnd)
    u_bnd[zero] = uZ
    return w2, u_gen, u_bnd


def equality_oracle(B: np.ndarray, target: np.ndarray) -> np.ndarray:
    """Exact minimizer of ``sum w**2`` under ``sum w = 1`` and ``B.T @ w = target``.

    Solves the dense KKT system directly. Only meaningful without
    nonnegativity and with all tolerances zero; intended as a test oracle.
    """
    B = np.asarray(B, dtype=float)
    if B.ndim == 1:
        B = B[:, None]
    m, K = B.shape
    A = np.vstack([np.ones(m), B.T])
    if np.linalg.matrix_rank(A) < K + 1:
        raise np.linalg.LinAlgError("balance constraints are rank deficient")
    kkt = np.block([[2.0 * np.eye(m), A.T], [A, np.zeros((K + 1, K + 1))]])
    rhs = np.concatenate([np.zeros(m), [1.0], np.atleast_1d(target)])
    return np.linalg.solve(kkt, rhs)[:m]


def verify_kkt(p: BalanceProblem, sol: WeightSolution, tol: float = 1e-8) -> KKTReport:
    """Check stationarity, primal feasibility and complementary slackness."""
    if sol.status != OPTIMAL:
        raise ValueError("KKT verification needs an optimal solution")
    w, lam = sol.weights, sol.lam
    g = 2.0 * w - sol.nu + p.B @ lam  # equals the bound multipliers s
    if p.nonnegative:
        stat = float(np.max(np.maximum(-g, 0.0), initial=0.0))
        comp_b = float(np.max(np.abs(np.maximum(g, 0.0) * w), initial=0.0))
    else:
        stat = float(np.max(np.abs(g), initial=0.0))
        comp_b = 0.0
    imb = p.B.T @ w - p.target
    primal = abs(w.sum() - 1.0)
    if p.K:
        primal = max(primal, float(np.max(np.abs(imb) - p.deltas, initial=0.0)))
    if p.nonnegative:
        primal = max(primal, float(np.max(-w, initial=0.0)))
    upper_slack = p.deltas - imb
    lower_slack = imb + p.deltas
    comp_l = np.where(lam > 0, lam * upper_slack, np.where(lam < 0, -lam * lower_slack, 0.0))
    # a zero tolerance makes the row an equality: its multiplier is sign-free
    # and its slack is already covered by the primal residual
    comp_l = np.where(p.deltas > 0, comp_l, 0.0)
    comp = max(comp_b, float(np.max(np.abs(comp_l), initial=0.0)))
    return KKTReport(stat, max(primal, 0.0), comp, tol)


def rho_prime(t):
    """Derivative of the dual link for the sum-of-squares dispersion.

    With ``psi(w) = w**2`` and ``h(t) = psi(c - t)``, ``rho'(t) = c - (h')^{-1}(t)``
    reduces to ``-t / 2`` for every shift ``c``.
    """
    return -0.5 * np.asarray(t, dtype=float)


def dual_weights_check(p: BalanceProblem, sol: WeightSolution, tol: float = 1e-12) -> float:
    """Largest gap between the weights and their reconstruction from the duals.

    Each weight should equal ``rho'(B[i] @ lam - nu)``. Raises
    :class:`DualCheckError` when a weight sits on its zero bound, where the
    affine reconstruction does not hold.
    """
    if sol.status != OPTIMAL:
        raise ValueError("dual check needs an optimal solution")
    if p.nonnegative and (sol.weights <= tol).any():
        n0 = int((sol.weights <= tol).sum())
        raise DualCheckError(
            f"{n0} weight(s) pinned at zero; the dual reconstruction only holds "
            "when the nonnegativity bound is inactive"
        )
    recon = rho_prime(p.B @ sol.lam - sol.nu)
    return float(np.max(np.abs(sol.weights - recon)))
