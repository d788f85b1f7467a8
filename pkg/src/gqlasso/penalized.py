"""Penalized solvers.

``fit_ag_lasso_q`` minimizes

    (1/n) sum_i rho_tau(y_i - x_i' beta) + lam * sum_j w_j ||beta_j||

by ADMM on the splitting ``z = y - X beta``, ``v = beta``.  Both proximal maps
are closed form and the beta-update solves ``(X'X + I) beta = rhs`` with a
matrix that does not depend on the ADMM penalty, so it is factored once.

Reported coefficients come from the group-thresholded copy ``v``, hence
inactive groups are exactly zero.  A final polish step solves the optimality
system restricted to the active groups and the interpolated observations
(those with ``z_i == 0``); it is kept only if it is at least as good.

``fit_ag_lasso_ls`` is the least-squares comparator, solved by cyclic block
coordinate descent with exact block minimization.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .kkt import kkt_check
from .model import (
    GroupedCoefficients,
    GroupedDesign,
    PenaltySpec,
    _check_tau,
    active_set,
    default_zero_tol,
    penalized_objective,
)


@dataclass(frozen=True)
class AdmmOptions:
    """ADMM settings.

    ``rho`` is the penalty for the unscaled problem (check-loss sum); the
    scaled objective uses ``rho / n``.  The residual tolerances decide
    ``converged``.  After that, the tolerance is tightened tenfold at a time
    (down to ``min_tol``) until the polished iterate satisfies the optimality
    conditions to ``certify_tol`` or the iteration budget runs out.  With
    ``polish`` on, a polish is also tried every ``polish_every`` iterations; a
    certified polish ends the fit and counts as converged.
    """

    rho: float = 1.0
    max_iter: int = 20000
    primal_tol: float = 1e-4
    dual_tol: float = 1e-4
    over_relaxation: float = 1.5
    adapt_rho: bool = True
    adapt_every: int = 50
    polish: bool = True
    certify_tol: float = 1e-9
    min_tol: float = 1e-8
    polish_every: int = 200

    def __post_init__(self):
        if self.rho <= 0:
            raise ValueError("rho must be > 0")
        if self.primal_tol <= 0 or self.dual_tol <= 0:
            raise ValueError("tolerances must be > 0")
        if not 1.0 <= self.over_relaxation <= 1.8:
            raise ValueError("over_relaxation must lie in [1, 1.8]")
        if self.polish_every < 1:
            raise ValueError("polish_every must be >= 1")


@dataclass(frozen=True)
class PenalizedFit:
    coefficients: GroupedCoefficients
    active_set: frozenset[int]
    objective: float
    kkt_residual: float
    iterations: int
    converged: bool
    lam: float
    method: str = "ag_LASSO_Q"
    warnings: tuple[str, ...] = field(default_factory=tuple)


def prox_check(v, tau: float, sigma: float):
    """argmin_z rho_tau(z) + sigma/2 (z - v)^2, elementwise."""
    if sigma <= 0:
        raise ValueError("sigma must be > 0")
    v = np.asarray(v, dtype=float)
    hi, lo = tau / sigma, (1.0 - tau) / sigma
    out = np.where(v > hi, v - hi, np.where(v < -lo, v + lo, 0.0))
    return float(out) if out.ndim == 0 else out


def prox_group(v, t: float) -> np.ndarray:
    """Block soft-thresholding: argmin_z t ||z|| + 1/2 ||z - v||^2."""
    if t < 0:
        raise ValueError("t must be >= 0")
    v = np.asarray(v, dtype=float)
    nv = float(np.linalg.norm(v))
    if nv <= t:
        return np.zeros_like(v)
    return (1.0 - t / nv) * v


class QuantileSystem:
    """Design-dependent pieces of the ADMM iteration, reusable across a lambda path."""

    def __init__(self, design: GroupedDesign):
        self.design = design
        X = design.values
        self.X = X
        self.XT = np.ascontiguousarray(X.T)
        chol = linalg.cho_factor(X.T @ X + np.eye(design.r))
        self.inverse = linalg.cho_solve(chol, np.eye(design.r))
        self.slices = design.slices
        self.sizes = np.array(design.group_sizes)
        self.starts = np.concatenate([[0], np.cumsum(self.sizes)[:-1]])


def _group_prox_all(v: np.ndarray, thresholds: np.ndarray, starts, sizes) -> np.ndarray:
    norms = np.sqrt(np.add.reduceat(v * v, starts))
    with np.errstate(divide="ignore", invalid="ignore"):
        factor = np.where(norms > thresholds, 1.0 - thresholds / norms, 0.0)
    return v * np.repeat(factor, sizes)


def _admm(system: QuantileSystem, y, tau, lam, weights, opts: AdmmOptions, state, tol, budget):
    X, XT, M = system.X, system.XT, system.inverse
    n, r = X.shape
    alpha = opts.over_relaxation
    if state is not None:
        z, w, u1, u2, rho = state["z"], state["w"], state["u1"], state["u2"], state["rho"]
        z, w, u1, u2 = z.copy(), w.copy(), u1.copy(), u2.copy()
    else:
        w = np.zeros(r)
        z = y.copy()
        u1 = np.zeros(n)
        u2 = np.zeros(r)
        rho = opts.rho / n
    beta = w
    thresholds = lam * np.asarray(weights, dtype=float)
    starts, sizes = system.starts, system.sizes
    ynorm = math.sqrt(float(y @ y))
    sqrt_pri = math.sqrt(n + r)
    sqrt_dual = math.sqrt(r)
    ptol, dtol = tol
    converged = False
    it = 0
    for it in range(1, budget + 1):
        beta = M @ (XT @ (y - z - u1) + w - u2)
        Xb = X @ beta
        h1 = alpha * Xb + (1.0 - alpha) * (y - z)
        h2 = alpha * beta + (1.0 - alpha) * w
        z_old, w_old = z, w
        v = y - h1 - u1
        sig = n * rho
        z = np.where(v > tau / sig, v - tau / sig, np.where(v < (tau - 1.0) / sig, v + (1.0 - tau) / sig, 0.0))
        w = _group_prox_all(h2 + u2, thresholds / rho, starts, sizes)
        u1 += h1 + z - y
        u2 += h2 - w

        rp1 = Xb + z - y
        rp2 = beta - w
        r_pri = math.sqrt(float(rp1 @ rp1 + rp2 @ rp2))
        eps_pri = ptol * (sqrt_pri + max(
            math.sqrt(float(Xb @ Xb + beta @ beta)), math.sqrt(float(z @ z + w @ w)), ynorm))
        adapt = opts.adapt_rho and it % opts.adapt_every == 0
        if r_pri > eps_pri and not adapt:
            continue
        # the dual residual costs a product with X', so only form it when needed
        dd = XT @ (z - z_old) - (w - w_old)
        s_dual = rho * math.sqrt(float(dd @ dd))
        if r_pri <= eps_pri:
            aa = XT @ u1 + u2
            eps_dual = dtol * (sqrt_dual + rho * math.sqrt(float(aa @ aa)))
            if s_dual <= eps_dual:
                converged = True
                break
        if adapt:
            if r_pri > 10.0 * s_dual:
                rho *= 2.0
                u1 /= 2.0
                u2 /= 2.0
            elif s_dual > 10.0 * r_pri:
                rho /= 2.0
                u1 *= 2.0
                u2 *= 2.0
    state = {"z": z, "w": w, "u1": u1, "u2": u2, "rho": rho}
    return it, converged, state


def _solve_restricted(XA, y, tau, lam, local, sign, b0, n):
    """Damped Newton solve of stationarity + interpolation for a fixed sign pattern."""
    tie = sign == 0
    free = ~tie
    psi = np.where(sign[free] < 0, tau - 1.0, tau)
    c = -(XA[free].T @ psi) / n
    XI = XA[tie]
    yI = y[tie]
    m, k = XI.shape
    ftol = 1e-13 * (1.0 + float(np.max(np.abs(y))))

    def residual(b, nu):
        g = np.empty(k)
        for s, wj in local:
            nb = math.sqrt(float(b[s] @ b[s]))
            if nb == 0:
                return None
            g[s] = wj * b[s] / nb
        return np.concatenate([c + lam * g + XI.T @ nu, XI @ b - yI])

    b = b0.copy()
    F = residual(b, np.zeros(m))
    if F is None:
        return None
    # least-squares multipliers for the starting point
    nu = np.linalg.lstsq(XI.T, -F[:k], rcond=None)[0] if m else np.zeros(0)
    F = residual(b, nu)
    fn = math.sqrt(float(F @ F))
    for _ in range(100):
        if np.max(np.abs(F), initial=0.0) <= ftol:
            return b, -n * nu
        H = np.zeros((k, k))
        for s, wj in local:
            bj = b[s]
            nb = math.sqrt(float(bj @ bj))
            u = bj / nb
            H[s, s] = wj * (np.eye(u.size) - np.outer(u, u)) / nb
        J = np.block([[lam * H, XI.T], [XI, np.zeros((m, m))]])
        try:
            step = np.linalg.solve(J, -F)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(J, -F, rcond=None)[0]
        t = 1.0
        for _ in range(40):
            cand_b, cand_nu = b + t * step[:k], nu + t * step[k:]
            Fc = residual(cand_b, cand_nu)
            if Fc is not None:
                fc = math.sqrt(float(Fc @ Fc))
                if fc <= (1.0 - 1e-4 * t) * fn:
                    break
            t *= 0.5
        else:
            return None
        b, nu, F, fn = cand_b, cand_nu, Fc, fc
    return None


def _polish(design, y, tau, lam, weights, beta0, sign, max_swaps=None):
    """Solve the optimality system on the current active groups and fitted points.

    Unknowns are the active coefficients and one multiplier per interpolated
    observation; equations are stationarity on the active coordinates and
    exact interpolation.  The interpolated set starts at ``sign == 0`` and is
    corrected one observation at a time: a point whose multiplier leaves
    ``[tau - 1, tau]`` is released to the matching side, a point whose
    residual changes sign is added.  Returns ``(beta, psi, sign)`` where
    ``psi`` is the check-loss subgradient per observation, or ``None``.
    """
    X = design.values
    n = design.n
    slices = design.slices
    act = [j for j, s in enumerate(slices) if np.any(beta0[s] != 0)]
    if not act:
        return None
    cols = np.concatenate([np.arange(design.r)[slices[j]] for j in act])
    XA = X[:, cols]
    local = []
    pos = 0
    for j in act:
        d = slices[j].stop - slices[j].start
        local.append((slice(pos, pos + d), weights[j]))
        pos += d

    sign = np.array(sign, dtype=int)
    b = beta0[cols].copy()
    slack = 1e-9
    for _ in range(max_swaps or n):
        sol = _solve_restricted(XA, y, tau, lam, local, sign, b, n)
        if sol is None:
            return None
        b, a = sol
        ties = np.flatnonzero(sign == 0)
        over = a - tau
        under = (tau - 1.0) - a
        viol = np.maximum(over, under)
        if ties.size and viol.max() > slack:
            k = int(np.argmax(viol))
            sign[ties[k]] = 1 if over[k] > under[k] else -1
            continue
        r = y - XA @ b
        flip = (sign != 0) & (r * sign < 0)
        if np.any(flip):
            k = int(np.argmax(np.where(flip, np.abs(r), -1.0)))
            sign[k] = 0
            continue
        beta = np.zeros(design.r)
        beta[cols] = b
        psi = np.where(sign < 0, tau - 1.0, tau)
        psi[ties] = a
        return beta, psi, sign
    return None


def fit_ag_lasso_q(
    design: GroupedDesign,
    y,
    tau: float,
    penalty: PenaltySpec,
    opts: AdmmOptions | None = None,
    system: QuantileSystem | None = None,
    warm: dict | None = None,
    return_state: bool = False,
):
    """Adaptive group LASSO quantile fit at a single lambda.

    ``system`` and ``warm`` let a path driver reuse the factorization and the
    previous ADMM state.  With ``return_state=True`` the ADMM state is
    returned alongside the fit.
    """
    tau = _check_tau(tau)
    opts = opts or AdmmOptions()
    y = np.asarray(y, dtype=float).reshape(-1)
    if y.size != design.n:
        raise ValueError(f"response has {y.size} entries, design has {design.n} rows")
    if penalty.weights.size != design.p:
        raise ValueError("penalty weights do not match the number of groups")
    system = system or QuantileSystem(design)

    zero = np.zeros(design.r)
    report = kkt_check(design, y, zero, tau, penalty, active=set(), group_norm=True)
    if report.overall <= opts.certify_tol:
        # lambda is at or above the level where the zero vector is optimal
        fit = PenalizedFit(
            coefficients=GroupedCoefficients(zero, design.group_sizes),
            active_set=frozenset(),
            objective=penalized_objective(design, y, zero, tau, penalty),
            kkt_residual=kkt_check(design, y, zero, tau, penalty, active=set()).overall,
            iterations=0,
            converged=True,
            lam=penalty.lam,
        )
        return (fit, warm) if return_state else fit

    # predictor: the previous solution's sign pattern, re-solved at this lambda
    if opts.polish and warm is not None and "sign" in warm:
        pred = _polish(design, y, tau, penalty.lam, penalty.weights, warm["w"], warm["sign"])
        if pred is not None:
            p_rep = _certify(design, y, tau, penalty, pred[0])
            if p_rep.overall <= opts.certify_tol:
                fit = _make_fit(design, y, tau, penalty, pred[0], p_rep, 0, True)
                state = _exact_state(system, y, pred, warm["rho"])
                return (fit, state) if return_state else fit

    state = warm
    iters = 0
    converged = False
    tol = (opts.primal_tol, opts.dual_tol)
    beta, obj, exact = None, math.inf, None
    while True:
        budget = opts.max_iter - iters
        chunk = min(budget, opts.polish_every) if opts.polish else budget
        it, ok, state = _admm(system, y, tau, penalty.lam, penalty.weights, opts, state, tol, chunk)
        iters += it
        converged = converged or ok
        w = state["w"]
        w_obj = penalized_objective(design, y, w, tau, penalty)
        if beta is None or w_obj <= obj:
            beta, obj, report = w.copy(), w_obj, _certify(design, y, tau, penalty, w)
        if opts.polish:
            # short swap budget while ADMM is still far from its tolerance
            cand = _polish(design, y, tau, penalty.lam, penalty.weights, w, np.sign(state["z"]).astype(int),
                           max_swaps=None if ok else 50)
            if cand is not None:
                c_obj = penalized_objective(design, y, cand[0], tau, penalty)
                c_rep = _certify(design, y, tau, penalty, cand[0])
                if c_obj <= obj + 1e-10 * (1.0 + abs(obj)) and c_rep.overall <= report.overall:
                    beta, obj, report, exact = cand[0], c_obj, c_rep, cand
        if report.overall <= opts.certify_tol:
            converged = True
            break
        if iters >= opts.max_iter:
            break
        if not ok:
            continue
        if max(tol) <= opts.min_tol:
            break
        tol = (max(tol[0] / 10, opts.min_tol), max(tol[1] / 10, opts.min_tol))

    if exact is not None and report.overall <= opts.certify_tol:
        state = _exact_state(system, y, exact, state["rho"])
    fit = _make_fit(design, y, tau, penalty, beta, report, iters, converged)
    if return_state:
        return fit, state
    return fit


def _certify(design, y, tau, penalty, beta):
    # group-norm form of the inactive bound, which is sufficient for optimality
    return kkt_check(design, y, beta, tau, penalty, active=_nonzero_groups(beta, design), group_norm=True)


def _make_fit(design, y, tau, penalty, beta, report, iters, converged) -> PenalizedFit:
    return PenalizedFit(
        coefficients=GroupedCoefficients(beta, design.group_sizes),
        active_set=frozenset(_nonzero_groups(beta, design)),
        objective=penalized_objective(design, y, beta, tau, penalty),
        kkt_residual=kkt_check(design, y, beta, tau, penalty, active=_nonzero_groups(beta, design)).overall,
        iterations=iters,
        converged=converged,
        lam=penalty.lam,
    )


def _exact_state(system: QuantileSystem, y, solution, rho) -> dict:
    """ADMM state (scaled duals included) that is a fixed point at a certified solution."""
    beta, psi, sign = solution
    n = y.size
    z = y - system.X @ beta
    z[sign == 0] = 0.0
    u1 = -psi / (n * rho)
    return {"z": z, "w": beta.copy(), "u1": u1, "u2": -(system.XT @ u1), "rho": rho, "sign": sign.copy()}


def _nonzero_groups(beta: np.ndarray, design: GroupedDesign) -> set[int]:
    return active_set(beta, default_zero_tol(beta), design.group_sizes)


# --- least-squares comparator ----------------------------------------------

def _secular_block(lam_eig: np.ndarray, c_rot: np.ndarray, t: float, guess: float | None = None) -> np.ndarray:
    """Minimize 1/2 b'Ab - c'b + t||b|| in the eigenbasis of A (already known ||c|| > t).

    The minimizer is b = (A + kappa I)^{-1} c with kappa = t / ||b||, i.e. the
    root of h(kappa) = kappa * ||(A + kappa I)^{-1} c|| - t, which is increasing.
    """
    if t == 0:
        return c_rot / lam_eig
    cn = math.sqrt(float(c_rot @ c_rot))
    if cn <= t:
        # rounding put the rotated vector on the zero side of the threshold
        return np.zeros_like(c_rot)
    lo, hi = 0.0, t * float(lam_eig[-1]) / (cn - t) * 2.0 + 1e-300
    kappa = guess if guess is not None and 0.0 < guess < hi else 0.5 * hi
    for _ in range(100):
        d = lam_eig + kappa
        q = c_rot / d
        nq2 = float(q @ q)
        nq = math.sqrt(nq2)
        h = kappa * nq - t
        if abs(h) <= 1e-14 * t:
            break
        if h > 0:
            hi = kappa
        else:
            lo = kappa
        # d/dkappa (kappa ||q||) = ||q|| - kappa * q'(q / d) / ||q||
        dh = nq - kappa * float(q @ (q / d)) / nq
        nxt = kappa - h / dh if dh > 0 else -1.0
        kappa = nxt if lo < nxt < hi else 0.5 * (lo + hi)
        if hi - lo <= 1e-16 * hi:
            break
    return c_rot / (lam_eig + kappa)


class LeastSquaresSystem:
    """Gram matrix and per-group eigendecompositions of X_j'X_j / n for the block updates."""

    def __init__(self, design: GroupedDesign):
        X = design.values
        n = design.n
        self.design = design
        self.gram = X.T @ X / n
        self.blocks = []
        self.dropped = set()
        for j, s in enumerate(design.slices):
            Xj = X[:, s]
            # thin QR of the block flags rank deficiency before eigen-solving
            R = np.linalg.qr(Xj, mode="r")
            diag = np.abs(np.diag(R)) if R.size else np.zeros(0)
            evals, evecs = np.linalg.eigh(self.gram[s, s])
            if diag.size < Xj.shape[1] or diag.min() <= 1e-10 * diag.max():
                self.dropped.add(j)
            self.blocks.append((s, evals, evecs))


def lambda_max_ls(design: GroupedDesign, y, weights) -> float:
    y = np.asarray(y, dtype=float)
    n = design.n
    return max(
        float(np.linalg.norm(design.values[:, s].T @ y)) / (n * weights[j])
        for j, s in enumerate(design.slices)
    )


def ls_objective(design: GroupedDesign, y, beta, penalty: PenaltySpec) -> float:
    r = np.asarray(y, dtype=float) - design.values @ np.asarray(beta, dtype=float)
    norms = [np.linalg.norm(beta[s]) for s in design.slices]
    return float(r @ r) / (2 * design.n) + penalty.lam * math.fsum(
        (penalty.weights * np.array(norms)).tolist())


def fit_ag_lasso_ls(
    design: GroupedDesign,
    y,
    penalty: PenaltySpec,
    max_iter: int = 10000,
    tol: float = 1e-10,
    system: LeastSquaresSystem | None = None,
    warm: np.ndarray | None = None,
) -> PenalizedFit:
    """Adaptive group LASSO least squares by cyclic block coordinate descent.

    Minimizes (1/2n)||y - X beta||^2 + lam * sum_j w_j ||beta_j||; each block is
    minimized exactly. Groups whose columns are rank deficient are held at 0.
    """
    y = np.asarray(y, dtype=float).reshape(-1)
    if y.size != design.n:
        raise ValueError(f"response has {y.size} entries, design has {design.n} rows")
    if penalty.weights.size != design.p:
        raise ValueError("penalty weights do not match the number of groups")
    system = system or LeastSquaresSystem(design)
    n = design.n
    G = system.gram
    beta = np.zeros(design.r) if warm is None else np.array(warm, dtype=float)
    for j in system.dropped:
        beta[system.blocks[j][0]] = 0.0
    # grad = X'(y - X beta) / n, kept up to date after each block move
    grad = design.values.T @ y / n - G @ beta
    thresholds = penalty.lam * penalty.weights
    blocks = [(j, blk) for j, blk in enumerate(system.blocks) if j not in system.dropped]
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        max_change = 0.0
        for j, (s, evals, evecs) in blocks:
            old = beta[s]
            c = grad[s] + G[s, s] @ old
            t = thresholds[j]
            if float(c @ c) <= t * t:
                if not old.any():
                    continue
                new = np.zeros_like(old)
            else:
                on = math.sqrt(float(old @ old))
                new = evecs @ _secular_block(evals, evecs.T @ c, t, t / on if on > 0 else None)
            delta = new - old
            change = float(np.abs(delta).max())
            if change > 0:
                grad -= G[:, s] @ delta
                beta[s] = new
                max_change = max(max_change, change)
        if max_change <= tol:
            converged = True
            break

    warnings = tuple(f"group {j} is rank deficient and was set to zero" for j in sorted(system.dropped))
    return PenalizedFit(
        coefficients=GroupedCoefficients(beta, design.group_sizes),
        active_set=frozenset(_nonzero_groups(beta, design)),
        objective=ls_objective(design, y, beta, penalty),
        kkt_residual=float("nan"),
        iterations=it,
        converged=converged,
        lam=penalty.lam,
        method="ag_LASSO_LS",
        warnings=warnings,
    )
