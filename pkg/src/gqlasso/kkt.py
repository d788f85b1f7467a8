"""First-order optimality check for the adaptive group LASSO quantile fit.

With ``mu = n * lam`` and residuals ``r = y - X beta`` the conditions are

* active group j:   sum_i X_ij (tau - 1{r_i < 0}) = mu * w_j * beta_j / ||beta_j||
* inactive group j: |sum_i X_ij,k (tau - 1{r_i < 0})| <= mu * w_j   for every k

Observations fitted exactly (``|r_i| <= 1e-10 * (1 + |y_i|)``) may carry any
subgradient in ``[tau - 1, tau]``; the checker reports the smallest residual
achievable over that slack. Active groups optimize the slack jointly within
the group (bounded least squares); inactive groups coordinate by coordinate.
Residuals are divided by ``n * max(1, max_i ||x_i||)``.

The coordinate-wise bound on inactive groups is necessary but not sufficient
for optimality when a group has more than one column.  ``group_norm=True``
checks the sufficient form ``||sum_i X_ij (tau - 1{r_i < 0})|| <= mu * w_j``
instead; the solver certifies its fits with it.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy.optimize import lsq_linear

from .model import GroupedDesign, PenaltySpec, _check_tau, _coef_values, active_set

TIE_RTOL = 1e-10


@dataclass(frozen=True)
class GroupResidual:
    group: int
    active: bool
    residual: float


@dataclass(frozen=True)
class KktReport:
    groups: tuple[GroupResidual, ...]
    overall: float
    n_interpolated: int
    tol: float

    @property
    def passed(self) -> bool:
        return self.overall <= self.tol

    def to_dict(self) -> dict:
        return {
            "overall": self.overall,
            "n_interpolated": self.n_interpolated,
            "tol": self.tol,
            "passed": self.passed,
            "groups": [asdict(g) for g in self.groups],
        }


def _active_residual(base, T, target, lo, hi) -> float:
    gap = target - base
    if T.shape[0] == 0:
        return float(np.linalg.norm(gap))
    # minimize || T'a - gap || over a in [lo, hi]^m
    sol = lsq_linear(T.T, gap, bounds=(lo, hi), method="bvls")
    return float(np.linalg.norm(T.T @ sol.x - gap))


def _inactive_residual(base, T, bound, lo, hi) -> float:
    low = base + np.sum(np.minimum(lo * T, hi * T), axis=0)
    high = base + np.sum(np.maximum(lo * T, hi * T), axis=0)
    closest = np.where((low <= 0) & (high >= 0), 0.0, np.minimum(np.abs(low), np.abs(high)))
    return float(np.max(np.maximum(closest - bound, 0.0)))


def kkt_check(
    design: GroupedDesign,
    y,
    fit,
    tau: float,
    penalty: PenaltySpec,
    tol: float = 1e-4,
    active: set[int] | None = None,
    group_norm: bool = False,
) -> KktReport:
    """Check the optimality conditions at ``fit`` (a fit object or coefficients)."""
    tau = _check_tau(tau)
    if tol <= 0:
        raise ValueError("tol must be > 0")
    beta = _coef_values(getattr(fit, "coefficients", fit))
    y = np.asarray(y, dtype=float).reshape(-1)
    X = design.values
    n = design.n
    if y.size != n or beta.size != design.r:
        raise ValueError("dimension mismatch between design, response and coefficients")
    if penalty.weights.size != design.p:
        raise ValueError("penalty weights do not match the number of groups")
    if active is None:
        fit_active = getattr(fit, "active_set", None)
        active = set(fit_active) if fit_active is not None else active_set(beta, None, design.group_sizes)

    r = y - X @ beta
    tie = np.abs(r) <= TIE_RTOL * (1.0 + np.abs(y))
    psi = np.where(r < 0, tau - 1.0, tau)
    free = ~tie
    Xt = X[tie]
    mu = n * penalty.lam
    scale = 1.0 / (n * max(1.0, float(np.max(np.linalg.norm(X, axis=1)))))

    out = []
    for j, s in enumerate(design.slices):
        base = X[free, s].T @ psi[free]
        T = Xt[:, s]
        bound = mu * penalty.weights[j]
        if j in active:
            bj = beta[s]
            target = bound * bj / np.linalg.norm(bj)
            res = _active_residual(base, T, target, tau - 1.0, tau)
        elif group_norm:
            res = max(_active_residual(base, T, np.zeros_like(base), tau - 1.0, tau) - bound, 0.0)
        else:
            res = _inactive_residual(base, T, bound, tau - 1.0, tau)
        out.append(GroupResidual(j, j in active, res * scale))
    overall = max(g.residual for g in out)
    return KktReport(tuple(out), overall, int(np.count_nonzero(tie)), float(tol))
