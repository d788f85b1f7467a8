"""Unpenalized quantile regression (pilot fits) and adaptive weights.

Two routes to the same minimizer:

* :func:`fit_quantile_lp` solves the linear-programming form exactly and is
  the reference for small problems.
* :func:`fit_quantile` minimizes a quadratically smoothed check loss with a
  damped Newton method while the smoothing width shrinks, then snaps to the
  vertex spanned by the ``r`` observations closest to being interpolated.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from .model import (
    GroupedCoefficients,
    GroupedDesign,
    _check_tau,
    _coef_values,
    design_diagnostics,
    quantile_objective,
)

LP_ROW_CAP = 500


class CapacityError(RuntimeError):
    """Problem exceeds the size the exact LP route accepts."""


@dataclass(frozen=True)
class PilotFit:
    coefficients: GroupedCoefficients
    objective: float
    method: str
    iterations: int
    converged: bool
    degenerate: bool = False


def _default_schedule() -> tuple[float, ...]:
    eps, out = 0.1, []
    while eps > 1e-6:
        out.append(eps)
        eps /= 2
    out.append(1e-6)
    return tuple(out)


@dataclass(frozen=True)
class SmoothOptions:
    epsilon_schedule: tuple[float, ...] = field(default_factory=_default_schedule)
    max_iter: int = 500
    tol: float = 1e-8


def fit_quantile_lp(design: GroupedDesign, y, tau: float, row_cap: int = LP_ROW_CAP) -> PilotFit:
    """Exact quantile regression through the LP reformulation.

    min tau * sum(u) + (1 - tau) * sum(v)  s.t.  X b + u - v = y,  u, v >= 0.
    A dual simplex is used so the answer is a vertex of the optimal face.
    """
    tau = _check_tau(tau)
    n, r = design.n, design.r
    if n > row_cap:
        raise CapacityError(f"LP oracle accepts at most {row_cap} rows, got {n}")
    y = np.asarray(y, dtype=float).reshape(-1)
    if y.size != n:
        raise ValueError(f"response has {y.size} entries, design has {n} rows")

    c = np.concatenate([np.zeros(r), np.full(n, tau), np.full(n, 1.0 - tau)])
    A_eq = np.hstack([design.values, np.eye(n), -np.eye(n)])
    bounds = [(None, None)] * r + [(0, None)] * (2 * n)
    res = optimize.linprog(c, A_eq=A_eq, b_eq=y, bounds=bounds, method="highs-ds")
    if res.status != 0:
        raise RuntimeError(f"LP solver failed: {res.message}")
    beta = res.x[:r]
    coef = GroupedCoefficients(beta, design.group_sizes)
    degenerate = design_diagnostics(design).lambda_min <= 1e-10
    return PilotFit(
        coefficients=coef,
        objective=quantile_objective(design, y, beta, tau),
        method="exact-LP",
        iterations=int(getattr(res, "nit", 0)),
        converged=True,
        degenerate=degenerate,
    )


def _smoothed(r: np.ndarray, tau: float, eps: float) -> tuple[float, np.ndarray, np.ndarray]:
    """Value, derivative and curvature mask of the smoothed check loss at residuals ``r``."""
    a = np.abs(r)
    inside = a <= eps
    h = np.where(inside, r * r / (2 * eps), a - eps / 2)
    value = float(np.sum(0.5 * h + (tau - 0.5) * r))
    psi = 0.5 * np.clip(r / eps, -1.0, 1.0) + (tau - 0.5)
    return value, psi, inside


def _line_search(Xd: np.ndarray, r: np.ndarray, tau: float, eps: float) -> float:
    """Exact minimizer on [0, 1] of t -> S(beta + t d) via its monotone derivative."""

    def dphi(t):
        return -float(Xd @ (0.5 * np.clip((r - t * Xd) / eps, -1.0, 1.0) + (tau - 0.5)))

    if dphi(0.0) >= 0.0:
        return 0.0
    if dphi(1.0) <= 0.0:
        return 1.0
    lo, hi = 0.0, 1.0
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if dphi(mid) <= 0.0:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-15:
            break
    return lo if lo > 0 else hi


def _vertex_snap(X: np.ndarray, y: np.ndarray, r: np.ndarray) -> np.ndarray | None:
    """Interpolate the ``k`` observations with the smallest absolute residuals."""
    k = X.shape[1]
    idx = np.argsort(np.abs(r), kind="stable")[:k]
    XB = X[idx]
    if np.linalg.cond(XB) > 1e12:
        return None
    return np.linalg.solve(XB, y[idx])


def fit_quantile(design: GroupedDesign, y, tau: float, opts: SmoothOptions | None = None) -> PilotFit:
    """Quantile regression by smoothing continuation with Newton steps."""
    tau = _check_tau(tau)
    opts = opts or SmoothOptions()
    if opts.tol <= 0:
        raise ValueError("tol must be > 0")
    X = design.values
    n, k = X.shape
    y = np.asarray(y, dtype=float).reshape(-1)
    if y.size != n:
        raise ValueError(f"response has {y.size} entries, design has {n} rows")

    beta = np.linalg.lstsq(X, y, rcond=None)[0]
    ridge = 1e-10 * max(1.0, float(np.mean(np.sum(X * X, axis=0))))

    def true_obj(b):
        return quantile_objective(design, y, b, tau)

    best_beta, best_obj = beta.copy(), true_obj(beta)
    iters = 0
    grad_norm = math.inf
    budget_hit = False
    for eps in opts.epsilon_schedule:
        while True:
            r = y - X @ beta
            val, psi, inside = _smoothed(r, tau, eps)
            grad = -(X.T @ psi)
            grad_norm = float(np.linalg.norm(grad)) / n
            if grad_norm <= opts.tol:
                break
            if iters >= opts.max_iter:
                budget_hit = True
                break
            iters += 1
            Xi = X[inside]
            H = Xi.T @ Xi / (2 * eps) + ridge * np.eye(k)
            try:
                step = np.linalg.solve(H, -grad)
            except np.linalg.LinAlgError:
                step = -grad
            t = _line_search(X @ step, r, tau, eps)
            if t <= 0.0:
                break
            beta = beta + t * step
        obj = true_obj(beta)
        if obj < best_obj:
            best_beta, best_obj = beta.copy(), obj
        snapped = _vertex_snap(X, y, y - X @ beta)
        if snapped is not None:
            s_obj = true_obj(snapped)
            if s_obj < best_obj:
                best_beta, best_obj = snapped, s_obj
        if budget_hit:
            break

    converged = (not budget_hit) and grad_norm <= opts.tol
    return PilotFit(
        coefficients=GroupedCoefficients(best_beta, design.group_sizes),
        objective=best_obj,
        method="smoothed",
        iterations=iters,
        converged=converged,
    )


def fit_pilot(design: GroupedDesign, y, tau: float, row_cap: int = LP_ROW_CAP) -> PilotFit:
    """Exact LP when the problem is small enough, smoothed Newton otherwise."""
    if design.n <= row_cap:
        return fit_quantile_lp(design, y, tau, row_cap=row_cap)
    return fit_quantile(design, y, tau)


def default_floor(pilot) -> float:
    return 1e-6 * (1.0 + float(np.linalg.norm(_coef_values(pilot))))


def compute_weights(pilot: GroupedCoefficients, gamma: float = 1.0, floor: float | None = None) -> np.ndarray:
    """Adaptive weights ``max(||pilot_j||, floor) ** -gamma``."""
    if gamma <= 0:
        raise ValueError("gamma must be > 0")
    if floor is None:
        floor = default_floor(pilot)
    if floor <= 0:
        raise ValueError("floor must be > 0")
    norms = pilot.group_norms()
    return np.maximum(norms, floor) ** (-gamma)


def fit_least_squares(design: GroupedDesign, y) -> GroupedCoefficients:
    """Ordinary least-squares pilot used for the least-squares comparator's weights."""
    beta = np.linalg.lstsq(design.values, np.asarray(y, dtype=float), rcond=None)[0]
    return GroupedCoefficients(beta, design.group_sizes)
