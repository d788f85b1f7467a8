"""Replicated selection experiments and their summary tables.

Each replication draws its data from its own random stream, so results do
not depend on the order or the process in which replications run.  Counts
are summarized with nearest-rank (type 1) quartiles: the q-quartile of k
sorted values is the value at rank ceil(q * k).
"""
from __future__ import annotations

import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from fractions import Fraction

import numpy as np

from .pilot import compute_weights, fit_least_squares, fit_pilot
from .simgen import N_SIGNAL, ScenarioSpec, generate
from .tuning import DEFAULT_GRID_COUNT, DEFAULT_MIN_RATIO, SelectionError, auto_grid, select_lambda

METHOD_Q = "ag_LASSO_Q"
METHOD_LS = "ag_LASSO_LS"
METHODS = (METHOD_LS, METHOD_Q)
QUARTILE_RULE = "nearest-rank (type 1): value at sorted rank ceil(q*k)"
STATS = ("min", "q1", "median", "mean", "q3", "max")


@dataclass(frozen=True)
class Settings:
    gamma: float = 1.0
    grid_count: int = DEFAULT_GRID_COUNT
    grid_min_ratio: float = DEFAULT_MIN_RATIO


@dataclass(frozen=True)
class ReplicationOutcome:
    method: str
    rep: int
    nonzero_identified: int
    zero_identified: int
    selected: tuple[int, ...]
    lam: float
    converged: bool

    def to_row(self) -> dict:
        return {
            "method": self.method,
            "rep": self.rep,
            "nonzero_identified": self.nonzero_identified,
            "zero_identified": self.zero_identified,
            "selected": " ".join(map(str, self.selected)),
            "lambda": repr(self.lam),
            "converged": int(self.converged),
        }


@dataclass(frozen=True)
class CountStats:
    min: int
    q1: int
    median: int
    mean: float
    q3: int
    max: int

    @classmethod
    def of(cls, values) -> "CountStats":
        v = np.sort(np.asarray(values, dtype=np.int64))
        if v.size == 0:
            raise ValueError("no values to summarize")
        q1, q2, q3 = (int(x) for x in np.percentile(v, [25, 50, 75], method="inverted_cdf"))
        mean = Fraction(int(v.sum()), int(v.size))
        return cls(int(v[0]), q1, q2, float(mean), q3, int(v[-1]))


@dataclass(frozen=True)
class SelectionSummary:
    scenario: ScenarioSpec
    method: str
    reps: int
    unconverged: int
    nonzero: CountStats | None
    zero: CountStats | None

    @property
    def true_zero(self) -> int:
        return self.scenario.p - N_SIGNAL

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario.to_dict(),
            "method": self.method,
            "reps": self.reps,
            "unconverged": self.unconverged,
            "true_nonzero": N_SIGNAL,
            "true_zero": self.true_zero,
            "nonzero": asdict(self.nonzero) if self.nonzero else None,
            "zero": asdict(self.zero) if self.zero else None,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SelectionSummary":
        return cls(
            scenario=ScenarioSpec.from_dict(d["scenario"]),
            method=d["method"],
            reps=int(d["reps"]),
            unconverged=int(d["unconverged"]),
            nonzero=CountStats(**d["nonzero"]) if d.get("nonzero") else None,
            zero=CountStats(**d["zero"]) if d.get("zero") else None,
        )


@dataclass(frozen=True)
class ScenarioReport:
    scenario: ScenarioSpec
    summaries: tuple[SelectionSummary, ...]
    outcomes: tuple[ReplicationOutcome, ...] = field(default=(), compare=False)

    def summary(self, method: str) -> SelectionSummary:
        for s in self.summaries:
            if s.method == method:
                return s
        raise KeyError(method)


def identification_counts(selected, p: int) -> tuple[int, int]:
    """(truly nonzero groups selected, truly zero groups left out)."""
    sel = set(selected)
    if any(not 0 <= j < p for j in sel):
        raise ValueError("selected group index out of range")
    signal = set(range(N_SIGNAL))
    return len(sel & signal), (p - N_SIGNAL) - len(sel - signal)


def run_replication(scenario: ScenarioSpec, method: str, rep: int,
                    settings: Settings | None = None) -> ReplicationOutcome:
    """Generate one replication, fit the pilot, tune lambda and count identifications."""
    settings = settings or Settings()
    design, y = generate(scenario, rep)
    tau = scenario.tau
    if method == METHOD_Q:
        pilot = fit_pilot(design, y, tau).coefficients
        kind = "quantile"
    elif method == METHOD_LS:
        pilot = fit_least_squares(design, y)
        kind = "least-squares"
    else:
        raise ValueError(f"unknown method {method!r}")
    weights = compute_weights(pilot, settings.gamma)
    grid = auto_grid(design, y, tau, weights, kind, settings.grid_count, settings.grid_min_ratio)
    try:
        sel = select_lambda(design, y, tau, grid, weights, kind)
    except SelectionError:
        return ReplicationOutcome(method, rep, 0, 0, (), float("nan"), False)
    chosen = tuple(sorted(sel.fit.active_set))
    nz, z = identification_counts(chosen, scenario.p)
    return ReplicationOutcome(method, rep, nz, z, chosen, sel.lam, sel.fit.converged)


def summarize(scenario: ScenarioSpec, method: str, outcomes) -> SelectionSummary:
    """Fold outcomes (in replication order) into a summary; unconverged ones are counted apart."""
    mine = sorted((o for o in outcomes if o.method == method), key=lambda o: o.rep)
    ok = [o for o in mine if o.converged]
    return SelectionSummary(
        scenario=scenario,
        method=method,
        reps=len(mine),
        unconverged=len(mine) - len(ok),
        nonzero=CountStats.of([o.nonzero_identified for o in ok]) if ok else None,
        zero=CountStats.of([o.zero_identified for o in ok]) if ok else None,
    )


def resolve_workers(workers: int | None = None) -> int:
    """Explicit value, else the GQL_THREADS variable, else the CPU count."""
    if workers is None:
        env = os.environ.get("GQL_THREADS")
        if env:
            try:
                workers = int(env)
            except ValueError:
                raise ValueError(f"GQL_THREADS must be an integer, got {env!r}") from None
        else:
            workers = os.cpu_count() or 1
    if workers < 1:
        raise ValueError("worker count must be >= 1")
    return workers


def _task(args):
    scenario_dict, method, rep, settings = args
    return run_replication(ScenarioSpec.from_dict(scenario_dict), method, rep, settings)


def run_scenario(scenario: ScenarioSpec, methods=METHODS, reps: int = 200,
                 workers: int | None = None, settings: Settings | None = None) -> ScenarioReport:
    """Run ``reps`` replications per method and summarize each method."""
    if reps < 1:
        raise ValueError("reps must be >= 1")
    for m in methods:
        if m not in METHODS:
            raise ValueError(f"unknown method {m!r}")
    settings = settings or Settings()
    methods = [m for m in METHODS if m in methods]
    tasks = [(scenario.to_dict(), m, rep, settings) for m in methods for rep in range(reps)]
    workers = resolve_workers(workers)
    if workers == 1 or len(tasks) == 1:
        outcomes = [_task(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(_task, tasks, chunksize=max(1, len(tasks) // (4 * workers))))
    summaries = tuple(summarize(scenario, m, outcomes) for m in methods)
    return ScenarioReport(scenario, summaries, tuple(outcomes))


# --- reporting ----------------------------------------------------------------

def report_dict(reports) -> dict:
    return {
        "quartile_rule": QUARTILE_RULE,
        "scenarios": [
            {"scenario": r.scenario.to_dict(), "summaries": [s.to_dict() for s in r.summaries]}
            for r in reports
        ],
    }


def reports_from_dict(d: dict) -> list[ScenarioReport]:
    out = []
    for item in d["scenarios"]:
        summaries = tuple(SelectionSummary.from_dict(s) for s in item["summaries"])
        out.append(ScenarioReport(ScenarioSpec.from_dict(item["scenario"]), summaries))
    return out


def _cell(stats: CountStats | None, key: str) -> str:
    if stats is None:
        return "-"
    v = getattr(stats, key)
    return f"{v:.1f}" if key == "mean" else str(v)


def table1_report(reports) -> tuple[str, str]:
    """JSON text and a markdown table of the selection counts, LS and Q side by side.

    Every statistic has an LS and a Q column; ``true`` is the number of truly
    zero groups, p - 4.
    """
    reports = list(reports)
    if not reports:
        raise ValueError("at least one scenario report is required")
    text = json.dumps(report_dict(reports), indent=2) + "\n"

    head = ["n", "p", "errors"]
    for block in ("nonzero", "zero"):
        if block == "zero":
            head.append("true")
        for stat in STATS:
            head += [f"{block} {stat} LS", f"{block} {stat} Q"]
    head += ["unconverged LS", "unconverged Q"]
    lines = [
        f"Quartiles: {QUARTILE_RULE}. Means rounded to 1 decimal.",
        "",
        "| " + " | ".join(head) + " |",
        "|" + "---|" * len(head),
    ]
    for r in reports:
        by = {s.method: s for s in r.summaries}
        ls, q = by.get(METHOD_LS), by.get(METHOD_Q)
        sc = r.scenario
        row = [str(sc.n), str(sc.p), f"{sc.error.family}({sc.error.scale:g})"]
        for block in ("nonzero", "zero"):
            if block == "zero":
                row.append(str(sc.p - N_SIGNAL))
            for stat in STATS:
                for s in (ls, q):
                    row.append(_cell(getattr(s, block) if s else None, stat))
        row += [str(ls.unconverged) if ls else "-", str(q.unconverged) if q else "-"]
        lines.append("| " + " | ".join(row) + " |")
    return text, "\n".join(lines) + "\n"
