"""Grouped designs, coefficient blocks, check loss and objectives.

The penalized objective is always the scaled form

    (1/n) * sum_i rho_tau(y_i - x_i' beta) + lam * sum_j w_j * ||beta_j||

An unscaled multiplier ``mu`` on the raw check-loss sum corresponds to
``lam = mu / n``.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np


class InputError(ValueError):
    """Malformed or inconsistent input data."""


def _check_tau(tau: float) -> float:
    tau = float(tau)
    if not 0.0 < tau < 1.0:
        raise ValueError(f"quantile level must lie in (0, 1), got {tau}")
    return tau


def _as_sizes(group_sizes: Sequence[int]) -> tuple[int, ...]:
    sizes = tuple(int(d) for d in group_sizes)
    if len(sizes) == 0:
        raise ValueError("at least one group is required")
    if any(d < 1 for d in sizes):
        raise ValueError(f"every group size must be >= 1, got {sizes}")
    return sizes


def group_slices(group_sizes: Sequence[int]) -> list[slice]:
    """Contiguous column ranges, one per group, in declaration order."""
    out, start = [], 0
    for d in group_sizes:
        out.append(slice(start, start + d))
        start += d
    return out


@dataclass(frozen=True)
class GroupedDesign:
    """An ``n x r`` design whose columns are partitioned into contiguous groups."""

    values: np.ndarray
    group_sizes: tuple[int, ...]

    def __post_init__(self):
        X = np.array(self.values, dtype=float)
        if X.ndim != 2:
            raise ValueError("design must be a 2-d array")
        sizes = _as_sizes(self.group_sizes)
        if X.shape[0] < 1:
            raise ValueError("design needs at least one row")
        if sum(sizes) != X.shape[1]:
            raise ValueError(
                f"group sizes sum to {sum(sizes)} but design has {X.shape[1]} columns"
            )
        if not np.all(np.isfinite(X)):
            raise ValueError("design contains non-finite entries")
        X.setflags(write=False)
        object.__setattr__(self, "values", X)
        object.__setattr__(self, "group_sizes", sizes)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def r(self) -> int:
        return self.values.shape[1]

    @property
    def p(self) -> int:
        return len(self.group_sizes)

    @property
    def slices(self) -> list[slice]:
        return group_slices(self.group_sizes)

    @property
    def column_groups(self) -> np.ndarray:
        """Group index of every column."""
        return np.repeat(np.arange(self.p), self.group_sizes)

    def block(self, j: int) -> np.ndarray:
        return self.values[:, self.slices[j]]


@dataclass(frozen=True)
class GroupedCoefficients:
    values: np.ndarray
    group_sizes: tuple[int, ...]

    def __post_init__(self):
        b = np.array(self.values, dtype=float).reshape(-1)
        sizes = _as_sizes(self.group_sizes)
        if b.size != sum(sizes):
            raise ValueError(f"coefficient length {b.size} does not match group sizes {sizes}")
        b.setflags(write=False)
        object.__setattr__(self, "values", b)
        object.__setattr__(self, "group_sizes", sizes)

    @classmethod
    def zeros(cls, group_sizes: Sequence[int]) -> "GroupedCoefficients":
        return cls(np.zeros(sum(group_sizes)), tuple(group_sizes))

    @property
    def p(self) -> int:
        return len(self.group_sizes)

    def blocks(self) -> list[np.ndarray]:
        return [self.values[s] for s in group_slices(self.group_sizes)]

    def group_norm(self, j: int) -> float:
        return float(np.linalg.norm(self.values[group_slices(self.group_sizes)[j]]))

    def group_norms(self) -> np.ndarray:
        return group_norms(self.values, self.group_sizes)


@dataclass(frozen=True)
class PenaltySpec:
    """Scaled tuning parameter, adaptive exponent and per-group weights."""

    lam: float
    weights: np.ndarray
    gamma: float = 1.0

    def __post_init__(self):
        w = np.array(self.weights, dtype=float).reshape(-1)
        if self.lam < 0 or not math.isfinite(self.lam):
            raise ValueError(f"lambda must be finite and >= 0, got {self.lam}")
        if self.gamma <= 0:
            raise ValueError(f"gamma must be > 0, got {self.gamma}")
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise ValueError("weights must be finite and nonnegative")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "lam", float(self.lam))

    def mu_for(self, n: int) -> float:
        """Multiplier on the unscaled check-loss sum."""
        return n * self.lam

    def with_lambda(self, lam: float) -> "PenaltySpec":
        return PenaltySpec(lam, self.weights, self.gamma)


@dataclass(frozen=True)
class DesignDiagnostics:
    lambda_min: float
    lambda_max: float
    max_row_norm: float
    ratio: float


def _coef_values(beta) -> np.ndarray:
    if isinstance(beta, GroupedCoefficients):
        return beta.values
    return np.asarray(beta, dtype=float).reshape(-1)


def group_norms(beta, group_sizes: Sequence[int]) -> np.ndarray:
    b = _coef_values(beta)
    return np.array([np.linalg.norm(b[s]) for s in group_slices(group_sizes)])


def check_loss(u, tau: float):
    """rho_tau(u) = u * (tau - 1{u < 0}); works elementwise on arrays."""
    tau = _check_tau(tau)
    u_arr = np.asarray(u, dtype=float)
    out = np.where(u_arr < 0, u_arr * (tau - 1.0), u_arr * tau)
    if out.ndim == 0:
        return float(out)
    return out


def residuals(design: GroupedDesign, y, beta) -> np.ndarray:
    b = _coef_values(beta)
    y = np.asarray(y, dtype=float).reshape(-1)
    if y.size != design.n:
        raise ValueError(f"response has {y.size} entries, design has {design.n} rows")
    if b.size != design.r:
        raise ValueError(f"coefficients have {b.size} entries, design has {design.r} columns")
    return y - design.values @ b


def quantile_objective(design: GroupedDesign, y, beta, tau: float) -> float:
    """Sum of check losses of the residuals, accumulated left to right."""
    losses = check_loss(residuals(design, y, beta), tau)
    return math.fsum(np.atleast_1d(losses).tolist())


def penalized_objective(design: GroupedDesign, y, beta, tau: float, penalty: PenaltySpec) -> float:
    if penalty.weights.size != design.p:
        raise ValueError(
            f"penalty has {penalty.weights.size} weights, design has {design.p} groups"
        )
    loss = quantile_objective(design, y, beta, tau) / design.n
    if penalty.lam == 0:
        return loss
    norms = group_norms(beta, design.group_sizes)
    return loss + penalty.lam * math.fsum((penalty.weights * norms).tolist())


def default_zero_tol(beta) -> float:
    return 1e-8 * (1.0 + float(np.linalg.norm(_coef_values(beta))))


def active_set(beta, tol: float | None = None, group_sizes: Sequence[int] | None = None) -> set[int]:
    """Indices (0-based) of groups whose Euclidean norm exceeds ``tol``.

    ``tol`` defaults to ``1e-8 * (1 + ||beta||)``.
    """
    if group_sizes is None:
        if not isinstance(beta, GroupedCoefficients):
            raise ValueError("group_sizes required for a plain coefficient array")
        group_sizes = beta.group_sizes
    if tol is None:
        tol = default_zero_tol(beta)
    if tol < 0:
        raise ValueError("tol must be >= 0")
    norms = group_norms(beta, group_sizes)
    return {int(j) for j in np.flatnonzero(norms > tol)}


def gram(design: GroupedDesign, groups: Sequence[int] | None = None) -> np.ndarray:
    """(1/n) X'X, optionally restricted to the columns of ``groups``."""
    X = design.values
    if groups is not None:
        cols = np.concatenate([np.arange(design.r)[design.slices[j]] for j in sorted(groups)])
        X = X[:, cols]
    return X.T @ X / design.n


def design_diagnostics(design: GroupedDesign) -> DesignDiagnostics:
    eig = np.linalg.eigvalsh(gram(design))
    row_norm = float(np.max(np.linalg.norm(design.values, axis=1)))
    lo = max(float(eig[0]), 0.0)
    return DesignDiagnostics(
        lambda_min=lo,
        lambda_max=float(eig[-1]),
        max_row_norm=row_norm,
        ratio=math.sqrt(design.p / design.n) * row_norm,
    )


# --- dataset files ----------------------------------------------------------

def _parse_float(text: str, where: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise InputError(f"{where}: cannot parse {text!r} as a number") from None
    if not math.isfinite(v):
        raise InputError(f"{where}: non-finite value {text!r}")
    return v


def read_groups(path) -> tuple[int, ...]:
    path = Path(path)
    if not path.exists():
        raise InputError(f"{path}: file not found")
    try:
        spec = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    sizes = spec.get("group_sizes") if isinstance(spec, dict) else None
    if not isinstance(sizes, list) or not all(isinstance(d, int) and d >= 1 for d in sizes) or not sizes:
        raise InputError(f"{path}: expected {{\"group_sizes\": [d1, ..., dp]}} with positive integers")
    return tuple(sizes)


def read_dataset(csv_path, groups_path) -> tuple[GroupedDesign, np.ndarray]:
    """Load ``y`` plus design columns from CSV and the partition from JSON."""
    csv_path = Path(csv_path)
    sizes = read_groups(groups_path)
    if not csv_path.exists():
        raise InputError(f"{csv_path}: file not found")
    with csv_path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise InputError(f"{csv_path}: empty file")
    header = [h.strip() for h in rows[0]]
    if not header or header[0] != "y":
        raise InputError(f"{csv_path}:1:1: first column must be named 'y'")
    ncol = len(header)
    if ncol - 1 != sum(sizes):
        raise InputError(
            f"{csv_path}: {ncol - 1} design columns but group sizes sum to {sum(sizes)}"
        )
    data = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != ncol:
            raise InputError(f"{csv_path}:{lineno}: expected {ncol} fields, found {len(row)}")
        data.append([_parse_float(v, f"{csv_path}:{lineno}:{k + 1}") for k, v in enumerate(row)])
    if not data:
        raise InputError(f"{csv_path}: no data rows")
    arr = np.array(data)
    return GroupedDesign(arr[:, 1:], sizes), arr[:, 0].copy()


def write_dataset(csv_path, groups_path, design: GroupedDesign, y) -> None:
    y = np.asarray(y, dtype=float).reshape(-1)
    header = ["y"] + [f"x{k + 1}" for k in range(design.r)]
    with Path(csv_path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for yi, row in zip(y, design.values):
            w.writerow([repr(float(yi))] + [repr(float(v)) for v in row])
    Path(groups_path).write_text(json.dumps({"group_sizes": list(design.group_sizes)}) + "\n")
