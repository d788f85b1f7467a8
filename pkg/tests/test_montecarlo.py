import json
import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gqlasso.montecarlo import (
    METHOD_LS,
    METHOD_Q,
    CountStats,
    ReplicationOutcome,
    Settings,
    identification_counts,
    reports_from_dict,
    report_dict,
    resolve_workers,
    run_replication,
    run_scenario,
    summarize,
    table1_report,
)
from gqlasso.simgen import ErrorLaw, ScenarioSpec

FAST = Settings(grid_count=15)


def nearest_rank(values, q):
    # independent restatement: smallest value whose empirical cdf reaches q
    v = sorted(values)
    k = len(v)
    for i, x in enumerate(v, start=1):
        if i / k >= q - 1e-12:
            return x


class TestCountStats:
    def test_small_example(self):
        s = CountStats.of([4, 1, 3, 2])
        assert (s.min, s.q1, s.median, s.q3, s.max) == (1, 1, 2, 3, 4)
        assert s.mean == 2.5

    @given(st.lists(st.integers(0, 100), min_size=1, max_size=60))
    def test_against_nearest_rank(self, values):
        s = CountStats.of(values)
        assert s.q1 == nearest_rank(values, 0.25)
        assert s.median == nearest_rank(values, 0.5)
        assert s.q3 == nearest_rank(values, 0.75)
        assert s.mean == float(Fraction(sum(values), len(values)))
        assert s.min <= s.q1 <= s.median <= s.q3 <= s.max
        assert s.min <= s.mean <= s.max

    def test_constant(self):
        s = CountStats.of([4] * 7)
        assert {s.min, s.q1, s.median, s.mean, s.q3, s.max} == {4}

    def test_empty(self):
        with pytest.raises(ValueError):
            CountStats.of([])


def test_identification_counts():
    assert identification_counts({0, 1, 2, 3}, 10) == (4, 6)
    assert identification_counts({0, 5, 6}, 10) == (1, 4)
    assert identification_counts(set(), 4) == (0, 0)
    with pytest.raises(ValueError):
        identification_counts({10}, 10)


@pytest.mark.parametrize("method", [METHOD_Q, METHOD_LS])
def test_noiseless_recovery(method):
    sc = ScenarioSpec(60, 6, noiseless=True, seed=3)
    for rep in range(2):
        o = run_replication(sc, method, rep, FAST)
        assert o.converged
        assert o.nonzero_identified == 4
        assert o.zero_identified == 2


def test_p4_has_no_zero_groups():
    o = run_replication(ScenarioSpec(40, 4, ErrorLaw("normal", 3.0), seed=1), METHOD_Q, 0, FAST)
    assert o.zero_identified == 0
    assert 0 <= o.nonzero_identified <= 4


def test_replication_deterministic():
    sc = ScenarioSpec(100, 10, ErrorLaw("normal", 3.0), seed=11)
    assert run_replication(sc, METHOD_Q, 2, FAST) == run_replication(sc, METHOD_Q, 2, FAST)


def test_unknown_method():
    with pytest.raises(ValueError):
        run_replication(ScenarioSpec(40, 4), "lasso", 0)


@pytest.fixture(scope="module")
def small_report():
    sc = ScenarioSpec(50, 5, ErrorLaw("cauchy", 3.0), seed=2)
    return run_scenario(sc, reps=4, workers=1, settings=FAST)


def test_serial_equals_parallel(small_report):
    par = run_scenario(small_report.scenario, reps=4, workers=2, settings=FAST)
    assert par.summaries == small_report.summaries
    assert par.outcomes == small_report.outcomes


def test_summary_consistency(small_report):
    for s in small_report.summaries:
        assert s.reps == 4
        mine = [o for o in small_report.outcomes if o.method == s.method and o.converged]
        assert s.unconverged == 4 - len(mine)
        # every truly nonzero group is counted once, as found or missed
        assert s.nonzero.mean * len(mine) == sum(o.nonzero_identified for o in mine)
        for o in mine:
            assert 0 <= o.nonzero_identified <= 4 and 0 <= o.zero_identified <= 1


def test_unconverged_counted_separately():
    sc = ScenarioSpec(50, 5)
    outs = [
        ReplicationOutcome(METHOD_Q, 0, 4, 1, (0, 1, 2, 3), 0.1, True),
        ReplicationOutcome(METHOD_Q, 1, 0, 0, (), math.nan, False),
        ReplicationOutcome(METHOD_Q, 2, 2, 0, (0, 1, 4), 0.2, True),
    ]
    s = summarize(sc, METHOD_Q, outs)
    assert s.reps == 3 and s.unconverged == 1
    assert s.nonzero.min == 2 and s.nonzero.max == 4 and s.nonzero.mean == 3.0
    none = summarize(sc, METHOD_Q, outs[1:2])
    assert none.nonzero is None and none.unconverged == 1


def test_json_round_trip(small_report):
    d = json.loads(json.dumps(report_dict([small_report])))
    back = reports_from_dict(d)
    assert back[0].summaries == small_report.summaries
    assert back[0].scenario == small_report.scenario


def test_table_layout():
    sc = ScenarioSpec(100, 10, ErrorLaw("normal", 3.0))
    outs = [ReplicationOutcome(m, r, 4, 6 - r, (0, 1, 2, 3), 0.1, True)
            for m in (METHOD_LS, METHOD_Q) for r in range(3)]
    from gqlasso.montecarlo import ScenarioReport
    rep = ScenarioReport(sc, (summarize(sc, METHOD_LS, outs), summarize(sc, METHOD_Q, outs)))
    text, md = table1_report([rep])
    assert json.loads(text)["scenarios"][0]["summaries"][1]["true_zero"] == 6
    lines = md.strip().splitlines()
    head = [c.strip() for c in lines[2].strip("|").split("|")]
    row = [c.strip() for c in lines[4].strip("|").split("|")]
    assert head[:5] == ["n", "p", "errors", "nonzero min LS", "nonzero min Q"]
    assert row[head.index("true")] == "6"
    assert row[head.index("zero mean Q")] == "5.0"
    assert row[head.index("zero min LS")] == "4"
    assert table1_report([rep]) == (text, md)
    with pytest.raises(ValueError):
        table1_report([])


def test_resolve_workers(monkeypatch):
    assert resolve_workers(3) == 3
    monkeypatch.setenv("GQL_THREADS", "2")
    assert resolve_workers() == 2
    monkeypatch.setenv("GQL_THREADS", "x")
    with pytest.raises(ValueError):
        resolve_workers()
    with pytest.raises(ValueError):
        resolve_workers(0)


def test_outcome_row():
    row = ReplicationOutcome(METHOD_Q, 1, 3, 5, (0, 2, 3), 0.25, True).to_row()
    assert row["selected"] == "0 2 3" and row["converged"] == 1 and float(row["lambda"]) == 0.25
