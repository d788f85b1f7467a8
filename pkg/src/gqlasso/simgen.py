"""Synthetic grouped-regression scenarios.

Designs have groups of five columns built from a latent AR(1)-correlated
factor per group plus independent noise:

    X[:, 5j + k] = (Z_j + R_{5j+k}) / sqrt(2),   Cov(Z_a, Z_b) = 0.9 ** |a - b|

so every column has unit variance, columns in the same group have covariance
0.5 and columns in groups a != b have covariance 0.9 ** |a - b| / 2.

Randomness comes from Philox (a counter-based generator). Each replication
gets its own stream keyed by ``(seed, scenario id, replication, purpose)``,
so replications can be generated in any order or in parallel.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from scipy.special import ndtri

from .model import GroupedCoefficients, GroupedDesign

GROUP_SIZE = 5
FACTOR_CORRELATION = 0.9
GROWTH_EXPONENT = 0.43
STANDARD_SIZES = ((30, 5), (60, 5), (60, 10), (100, 10), (200, 10), (400, 15), (1000, 25), (1000, 100))
SIGNAL_BLOCKS = (
    (0.5, 1.0, 1.5, 1.0, 0.5),
    (1.0, 1.0, 1.0, 1.0, 1.0),
    (-1.0, 0.0, 1.0, 2.0, 1.5),
    (-1.5, 1.0, 0.5, 0.5, 0.5),
)
N_SIGNAL = len(SIGNAL_BLOCKS)

STREAM_DESIGN = 0
STREAM_ERRORS = 1


@dataclass(frozen=True)
class ErrorLaw:
    family: str = "normal"
    scale: float = 3.0

    def __post_init__(self):
        if self.family not in ("normal", "cauchy"):
            raise ValueError(f"unsupported error family {self.family!r}")
        if not self.scale > 0:
            raise ValueError("scale must be > 0")

    @property
    def density_at_zero(self) -> float:
        if self.family == "normal":
            return 1.0 / (self.scale * math.sqrt(2.0 * math.pi))
        return 1.0 / (self.scale * math.pi)

    def quantile(self, tau: float) -> float:
        if self.family == "normal":
            return self.scale * float(ndtri(tau))
        return self.scale * math.tan(math.pi * (tau - 0.5))

    def transform(self, u: np.ndarray) -> np.ndarray:
        """Map uniforms on (0, 1) to draws by the inverse distribution function."""
        if self.family == "normal":
            return self.scale * ndtri(u)
        return self.scale * np.tan(np.pi * (u - 0.5))


@dataclass(frozen=True)
class ScenarioSpec:
    n: int
    p: int
    error: ErrorLaw = field(default_factory=ErrorLaw)
    tau: float = 0.5
    seed: int = 0
    c: float = GROWTH_EXPONENT
    noiseless: bool = False

    def __post_init__(self):
        if self.p < N_SIGNAL:
            raise ValueError(f"p must be >= {N_SIGNAL}, got {self.p}")
        if self.n < 1:
            raise ValueError("n must be >= 1")
        if not 0 < self.tau < 1:
            raise ValueError("tau must lie in (0, 1)")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")

    @property
    def group_sizes(self) -> tuple[int, ...]:
        return (GROUP_SIZE,) * self.p

    @property
    def label(self) -> str:
        return f"n={self.n} p={self.p} {self.error.family}({self.error.scale:g})"

    @property
    def scenario_id(self) -> int:
        """Stable 32-bit identifier of everything that shapes the data except the seed."""
        key = json.dumps(
            [self.n, self.p, self.error.family, self.error.scale, self.tau, self.noiseless],
            separators=(",", ":"),
        )
        return int.from_bytes(hashlib.blake2b(key.encode(), digest_size=4).digest(), "little")

    def to_dict(self) -> dict:
        d = asdict(self)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioSpec":
        err = d.get("error", {})
        if isinstance(err, dict):
            err = ErrorLaw(err.get("family", "normal"), float(err.get("scale", 3.0)))
        return cls(
            n=int(d["n"]),
            p=int(d["p"]),
            error=err,
            tau=float(d.get("tau", 0.5)),
            seed=int(d.get("seed", 0)),
            c=float(d.get("c", GROWTH_EXPONENT)),
            noiseless=bool(d.get("noiseless", False)),
        )


def standard_scenarios(seed: int = 0, scale: float = 3.0) -> list[ScenarioSpec]:
    """The eight (n, p) pairs, each with Cauchy then Normal errors."""
    out = []
    for n, p in STANDARD_SIZES:
        for fam in ("cauchy", "normal"):
            out.append(ScenarioSpec(n, p, ErrorLaw(fam, scale), seed=seed))
    return out


def stream(seed: int, *key: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=tuple(key))))


def replication_stream(scenario: ScenarioSpec, rep: int, purpose: int) -> np.random.Generator:
    return stream(scenario.seed, scenario.scenario_id, rep, purpose)


def _rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return stream(int(seed))


def uniforms(rng: np.random.Generator, size) -> np.ndarray:
    """Uniforms on the open interval (0, 1) with 53 random bits each."""
    k = rng.integers(0, 2**53, size=size, dtype=np.int64)
    return (k + 0.5) / 2.0**53


def standard_normals(rng: np.random.Generator, size) -> np.ndarray:
    return ndtri(uniforms(rng, size))


def true_beta(p: int) -> GroupedCoefficients:
    if p < N_SIGNAL:
        raise ValueError(f"p must be >= {N_SIGNAL}, got {p}")
    vals = np.zeros(GROUP_SIZE * p)
    vals[: GROUP_SIZE * N_SIGNAL] = np.concatenate(SIGNAL_BLOCKS)
    return GroupedCoefficients(vals, (GROUP_SIZE,) * p)


def factor_cholesky(p: int) -> np.ndarray:
    idx = np.arange(p)
    cov = FACTOR_CORRELATION ** np.abs(idx[:, None] - idx[None, :])
    return np.linalg.cholesky(cov)


def analytic_covariance(p: int) -> np.ndarray:
    groups = np.repeat(np.arange(p), GROUP_SIZE)
    cov = FACTOR_CORRELATION ** np.abs(groups[:, None] - groups[None, :]) / 2.0
    np.fill_diagonal(cov, 1.0)
    return cov


def gen_design(n: int, p: int, seed=0) -> GroupedDesign:
    rng = _rng(seed)
    L = factor_cholesky(p)
    Z = standard_normals(rng, (n, p)) @ L.T
    R = standard_normals(rng, (n, GROUP_SIZE * p))
    X = (np.repeat(Z, GROUP_SIZE, axis=1) + R) / math.sqrt(2.0)
    return GroupedDesign(X, (GROUP_SIZE,) * p)


def gen_errors(law: ErrorLaw, n: int, seed=0, tau: float = 0.5) -> np.ndarray:
    """i.i.d. errors; for tau != 0.5 they are shifted so their tau-quantile is 0."""
    rng = _rng(seed)
    e = law.transform(uniforms(rng, n))
    if tau != 0.5:
        e = e - law.quantile(tau)
    return e


def gen_response(design: GroupedDesign, beta0, errors) -> np.ndarray:
    b = beta0.values if isinstance(beta0, GroupedCoefficients) else np.asarray(beta0, dtype=float)
    e = np.asarray(errors, dtype=float).reshape(-1)
    if b.size != design.r or e.size != design.n:
        raise ValueError("dimension mismatch between design, coefficients and errors")
    return design.values @ b + e


def generate(scenario: ScenarioSpec, rep: int = 0) -> tuple[GroupedDesign, np.ndarray]:
    """Design and response for one replication of ``scenario``."""
    design = gen_design(scenario.n, scenario.p, replication_stream(scenario, rep, STREAM_DESIGN))
    if scenario.noiseless:
        errors = np.zeros(scenario.n)
    else:
        errors = gen_errors(scenario.error, scenario.n, replication_stream(scenario, rep, STREAM_ERRORS),
                            tau=scenario.tau)
    return design, gen_response(design, true_beta(scenario.p), errors)


def with_seed(scenario: ScenarioSpec, seed: int) -> ScenarioSpec:
    return replace(scenario, seed=seed)
