"""Lambda grids and information-criterion selection along a warm-started path."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .model import GroupedDesign, PenaltySpec, _check_tau, quantile_objective
from .penalized import (
    AdmmOptions,
    LeastSquaresSystem,
    PenalizedFit,
    QuantileSystem,
    fit_ag_lasso_ls,
    fit_ag_lasso_q,
    lambda_max_ls,
)

DEFAULT_GRID_COUNT = 50
DEFAULT_MIN_RATIO = 1e-3


class SelectionError(RuntimeError):
    """No fit on the grid converged."""


@dataclass(frozen=True)
class LambdaGrid:
    values: np.ndarray
    lambda_max: float

    @property
    def count(self) -> int:
        return int(self.values.size)

    @property
    def log_ratio(self) -> float:
        """Natural log of the ratio between consecutive grid values (0 for a single point)."""
        if self.values.size < 2:
            return 0.0
        return float(math.log(self.values[1] / self.values[0]))


@dataclass(frozen=True)
class Selection:
    lam: float
    index: int
    criteria: np.ndarray
    df: np.ndarray
    fits: tuple[PenalizedFit, ...]
    grid: LambdaGrid
    method: str

    @property
    def fit(self) -> PenalizedFit:
        return self.fits[self.index]


def lambda_max(design: GroupedDesign, y, tau: float, weights) -> float:
    """Smallest lambda at which the zero vector satisfies the inactive-group bound."""
    tau = _check_tau(tau)
    y = np.asarray(y, dtype=float)
    weights = np.asarray(weights, dtype=float)
    if np.any(weights <= 0):
        raise ValueError("weights must be > 0")
    psi = tau - (y < 0)
    X = design.values
    return max(
        float(np.linalg.norm(X[:, s].T @ psi)) / (design.n * weights[j])
        for j, s in enumerate(design.slices)
    )


def build_grid(lmax: float, count: int = DEFAULT_GRID_COUNT, min_ratio: float = DEFAULT_MIN_RATIO) -> LambdaGrid:
    """Geometric grid from ``lmax`` down to ``lmax * min_ratio``, both included."""
    if not (lmax > 0 and math.isfinite(lmax)):
        raise ValueError(f"lmax must be positive and finite, got {lmax}")
    if int(count) != count or count < 2:
        raise ValueError(f"count must be an integer >= 2, got {count}")
    if not 0 < min_ratio < 1:
        raise ValueError(f"min_ratio must lie in (0, 1), got {min_ratio}")
    values = lmax * min_ratio ** (np.arange(count) / (count - 1))
    values[0], values[-1] = lmax, lmax * min_ratio
    return LambdaGrid(values, float(lmax))


def single_grid(lam: float) -> LambdaGrid:
    return LambdaGrid(np.array([float(lam)]), float(lam))


def df_of(fit: PenalizedFit) -> int:
    return int(np.count_nonzero(fit.coefficients.values))


def quantile_criterion(design: GroupedDesign, y, fit: PenalizedFit, tau: float) -> float:
    """n log(check loss / n) + log(n) df / 2."""
    n = design.n
    loss = quantile_objective(design, y, fit.coefficients, tau)
    return n * math.log(max(loss / n, np.finfo(float).tiny)) + math.log(n) * df_of(fit) / 2.0


def aic_criterion(design: GroupedDesign, y, fit: PenalizedFit) -> float:
    """n log(RSS / n) + 2 df."""
    n = design.n
    r = np.asarray(y, dtype=float) - design.values @ fit.coefficients.values
    rss = math.fsum((r * r).tolist())
    return n * math.log(max(rss / n, np.finfo(float).tiny)) + 2.0 * df_of(fit)


def fit_path(
    design: GroupedDesign,
    y,
    tau: float,
    grid: LambdaGrid,
    weights,
    method: str = "quantile",
    opts: AdmmOptions | None = None,
) -> list[PenalizedFit]:
    """Fits along ``grid`` in its (decreasing) order, each warm-started from the last."""
    y = np.asarray(y, dtype=float)
    template = PenaltySpec(float(grid.values[0]), weights)
    fits = []
    if method == "quantile":
        system = QuantileSystem(design)
        state = None
        for lam in grid.values:
            fit, state = fit_ag_lasso_q(
                design, y, tau, template.with_lambda(float(lam)), opts, system=system, warm=state,
                return_state=True,
            )
            fits.append(fit)
    elif method == "least-squares":
        system = LeastSquaresSystem(design)
        beta = None
        for lam in grid.values:
            fit = fit_ag_lasso_ls(design, y, template.with_lambda(float(lam)), system=system, warm=beta)
            beta = fit.coefficients.values
            fits.append(fit)
    else:
        raise ValueError(f"unknown method {method!r}")
    return fits


def select_lambda(
    design: GroupedDesign,
    y,
    tau: float,
    grid: LambdaGrid,
    weights,
    method: str = "quantile",
    opts: AdmmOptions | None = None,
) -> Selection:
    """Fit every grid value and return the one minimizing the information criterion.

    Ties go to the larger lambda. Unconverged fits are not eligible unless
    none converged, in which case :class:`SelectionError` is raised.
    """
    fits = fit_path(design, y, tau, grid, weights, method, opts)
    if method == "quantile":
        crit = np.array([quantile_criterion(design, y, f, tau) for f in fits])
    else:
        crit = np.array([aic_criterion(design, y, f) for f in fits])
    ok = np.array([f.converged for f in fits])
    if not ok.any():
        raise SelectionError("no fit on the lambda grid converged")
    masked = np.where(ok, crit, np.inf)
    # grid is decreasing, so the first minimum is the largest lambda
    best = int(np.argmin(masked))
    df = np.array([df_of(f) for f in fits])
    return Selection(float(grid.values[best]), best, crit, df, tuple(fits), grid, method)


def write_trace(path, selection: Selection) -> None:
    """Write lambda, criterion, df and active groups, one row per grid value."""
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["lambda", "criterion", "df", "active_groups", "converged", "selected"])
        for i, (lam, fit) in enumerate(zip(selection.grid.values, selection.fits)):
            w.writerow([
                repr(float(lam)),
                repr(float(selection.criteria[i])),
                int(selection.df[i]),
                " ".join(str(j) for j in sorted(fit.active_set)),
                int(fit.converged),
                int(i == selection.index),
            ])


def auto_grid(design: GroupedDesign, y, tau: float, weights, method: str = "quantile",
              count: int = DEFAULT_GRID_COUNT, min_ratio: float = DEFAULT_MIN_RATIO) -> LambdaGrid:
    if method == "quantile":
        lmax = lambda_max(design, y, tau, weights)
    else:
        lmax = lambda_max_ls(design, y, weights)
    return build_grid(lmax, count, min_ratio)
