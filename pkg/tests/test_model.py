import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gqlasso.model import (
    GroupedCoefficients,
    GroupedDesign,
    InputError,
    PenaltySpec,
    active_set,
    check_loss,
    design_diagnostics,
    gram,
    penalized_objective,
    quantile_objective,
    read_dataset,
    read_groups,
    write_dataset,
)

finite = st.floats(-1e6, 1e6, allow_nan=False)
levels = st.floats(0.01, 0.99)


class TestCheckLoss:
    @pytest.mark.parametrize("u,tau,expected", [(0.0, 0.5, 0.0), (-2.0, 0.3, 1.4), (2.0, 0.3, 0.6)])
    def test_values(self, u, tau, expected):
        assert check_loss(u, tau) == pytest.approx(expected, abs=1e-15)

    @pytest.mark.parametrize("tau", [0.0, 1.0, -0.1, 1.5])
    def test_rejects_level_outside_unit_interval(self, tau):
        with pytest.raises(ValueError):
            check_loss(1.0, tau)

    def test_elementwise(self):
        out = check_loss(np.array([-1.0, 0.0, 3.0]), 0.25)
        np.testing.assert_allclose(out, [0.75, 0.0, 0.75])

    @given(u=finite, v=finite, t=st.floats(0, 1), tau=levels)
    def test_convex(self, u, v, t, tau):
        lhs = check_loss(t * u + (1 - t) * v, tau)
        rhs = t * check_loss(u, tau) + (1 - t) * check_loss(v, tau)
        assert lhs <= rhs + 1e-9 * (1 + abs(u) + abs(v))

    @given(u=finite, tau=levels)
    def test_reflection(self, u, tau):
        assert check_loss(u, tau) == pytest.approx(check_loss(-u, 1 - tau), rel=1e-12, abs=1e-12)

    @given(u=finite, tau=levels)
    def test_complementary_levels_sum_to_absolute_value(self, u, tau):
        assert check_loss(u, tau) + check_loss(u, 1 - tau) == pytest.approx(abs(u), rel=1e-12, abs=1e-12)

    @given(u=finite, tau=levels)
    def test_nonnegative(self, u, tau):
        assert check_loss(u, tau) >= 0


class TestObjectives:
    def test_exact_fit_is_zero(self):
        rng = np.random.default_rng(0)
        X = rng.standard_normal((10, 3))
        b = rng.standard_normal(3)
        d = GroupedDesign(X, (1, 2))
        y = X @ b
        for tau in (0.1, 0.5, 0.9):
            assert quantile_objective(d, y, b, tau) == pytest.approx(0.0, abs=1e-12)

    def test_intercept_hand_sums(self, intercept_data):
        d, y = intercept_data
        assert quantile_objective(d, y, [2.0], 0.5) == 5.0
        assert quantile_objective(d, y, [3.0], 0.5) == 5.0

    def test_penalized_hand_sum(self, intercept_data):
        d, y = intercept_data
        pen = PenaltySpec(1.0, [1.0])
        assert penalized_objective(d, y, [2.0], 0.5, pen) == pytest.approx(3.25, abs=1e-15)

    def test_zero_lambda_reduces_to_scaled_loss(self, intercept_data):
        d, y = intercept_data
        pen = PenaltySpec(0.0, [1.0])
        assert penalized_objective(d, y, [2.5], 0.3, pen) == quantile_objective(d, y, [2.5], 0.3) / 4

    def test_zero_coefficients(self):
        rng = np.random.default_rng(1)
        d = GroupedDesign(rng.standard_normal((7, 4)), (2, 2))
        y = rng.standard_normal(7)
        pen = PenaltySpec(3.0, [1.0, 2.0])
        expected = sum(check_loss(v, 0.4) for v in y) / 7
        assert penalized_objective(d, y, np.zeros(4), 0.4, pen) == pytest.approx(expected, rel=1e-14)

    def test_dimension_mismatch(self, intercept_data):
        d, y = intercept_data
        with pytest.raises(ValueError):
            quantile_objective(d, y[:3], [1.0], 0.5)
        with pytest.raises(ValueError):
            penalized_objective(d, y, [1.0], 0.5, PenaltySpec(1.0, [1.0, 1.0]))

    @settings(max_examples=50, deadline=None)
    @given(seed=st.integers(0, 10_000), tau=levels, lam=st.floats(0, 5))
    def test_penalized_objective_midpoint_convex(self, seed, tau, lam):
        rng = np.random.default_rng(seed)
        d = GroupedDesign(rng.standard_normal((12, 5)), (2, 3))
        y = rng.standard_normal(12)
        pen = PenaltySpec(lam, rng.uniform(0.1, 3, 2))
        a, b = rng.standard_normal(5), rng.standard_normal(5)
        mid = penalized_objective(d, y, (a + b) / 2, tau, pen)
        avg = (penalized_objective(d, y, a, tau, pen) + penalized_objective(d, y, b, tau, pen)) / 2
        assert mid <= avg + 1e-10


class TestActiveSet:
    beta = GroupedCoefficients([1.0, 0.0, 0.0, 0.0, 0.5], (2, 2, 1))

    def test_all_zero(self):
        assert active_set(GroupedCoefficients.zeros((2, 3)), 0.0) == set()

    def test_blocks(self):
        # groups are numbered from 0
        assert active_set(self.beta, 1e-8) == {0, 2}
        assert active_set(self.beta, 0.6) == {0}

    def test_negative_tol(self):
        with pytest.raises(ValueError):
            active_set(self.beta, -1.0)

    @given(t=st.floats(0, 10))
    def test_monotone_in_tol(self, t):
        rng = np.random.default_rng(3)
        b = GroupedCoefficients(rng.standard_normal(6) * (rng.uniform(size=6) > 0.5), (1, 2, 3))
        assert active_set(b, 0.0) >= active_set(b, t)


class TestTypes:
    def test_partition_must_cover_columns(self):
        with pytest.raises(ValueError):
            GroupedDesign(np.zeros((3, 4)), (1, 2))
        with pytest.raises(ValueError):
            GroupedDesign(np.zeros((3, 2)), (2, 0))

    def test_non_finite_rejected(self):
        X = np.ones((3, 2))
        X[1, 1] = np.nan
        with pytest.raises(ValueError):
            GroupedDesign(X, (2,))

    def test_column_groups(self):
        d = GroupedDesign(np.zeros((2, 6)), (1, 3, 2))
        np.testing.assert_array_equal(d.column_groups, [0, 1, 1, 1, 2, 2])
        assert [s.stop - s.start for s in d.slices] == [1, 3, 2]

    def test_group_norm(self):
        b = GroupedCoefficients([3.0, 4.0, 1.0], (2, 1))
        assert b.group_norm(0) == 5.0
        assert b.group_norm(1) == 1.0

    def test_penalty_validation(self):
        with pytest.raises(ValueError):
            PenaltySpec(-1.0, [1.0])
        with pytest.raises(ValueError):
            PenaltySpec(1.0, [1.0], gamma=0.0)
        with pytest.raises(ValueError):
            PenaltySpec(1.0, [np.inf])
        assert PenaltySpec(0.5, [1.0]).mu_for(10) == 5.0


class TestDiagnostics:
    def test_identity(self):
        dg = design_diagnostics(GroupedDesign(np.eye(2), (1, 1)))
        assert dg.lambda_min == pytest.approx(0.5)
        assert dg.lambda_max == pytest.approx(0.5)
        assert dg.max_row_norm == 1.0

    def test_ones_column(self):
        dg = design_diagnostics(GroupedDesign(np.ones((4, 1)), (1,)))
        assert dg.lambda_min == pytest.approx(1.0) and dg.lambda_max == pytest.approx(1.0)
        assert dg.max_row_norm == 1.0
        assert dg.ratio == pytest.approx(math.sqrt(1 / 4))

    def test_random_positive_and_trace(self):
        rng = np.random.default_rng(5)
        d = GroupedDesign(rng.standard_normal((200, 10)), (5, 5))
        dg = design_diagnostics(d)
        assert dg.lambda_min > 0
        eig = np.linalg.eigvalsh(gram(d))
        assert np.trace(gram(d)) == pytest.approx(eig.sum(), rel=1e-8)
        assert dg.lambda_min <= dg.lambda_max

    def test_wide_design_reports_zero(self):
        rng = np.random.default_rng(6)
        dg = design_diagnostics(GroupedDesign(rng.standard_normal((3, 6)), (3, 3)))
        assert dg.lambda_min == pytest.approx(0.0, abs=1e-10)


class TestDatasetFiles:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(7)
        d = GroupedDesign(rng.standard_normal((5, 3)), (1, 2))
        y = rng.standard_normal(5)
        write_dataset(tmp_path / "d.csv", tmp_path / "g.json", d, y)
        d2, y2 = read_dataset(tmp_path / "d.csv", tmp_path / "g.json")
        np.testing.assert_array_equal(d2.values, d.values)
        np.testing.assert_array_equal(y2, y)
        assert d2.group_sizes == (1, 2)

    def test_missing_groups_file_named(self, tmp_path):
        (tmp_path / "d.csv").write_text("y,x1\n1,2\n")
        with pytest.raises(InputError, match="nope.json"):
            read_dataset(tmp_path / "d.csv", tmp_path / "nope.json")

    def test_bad_cell_has_line_and_column(self, tmp_path):
        (tmp_path / "g.json").write_text(json.dumps({"group_sizes": [2]}))
        (tmp_path / "d.csv").write_text("y,x1,x2\n1,2,3\n1,abc,3\n")
        with pytest.raises(InputError, match=r"d.csv:3:2"):
            read_dataset(tmp_path / "d.csv", tmp_path / "g.json")

    @pytest.mark.parametrize("bad", ["nan", "inf", "-Infinity"])
    def test_non_finite_rejected(self, tmp_path, bad):
        (tmp_path / "g.json").write_text(json.dumps({"group_sizes": [1]}))
        (tmp_path / "d.csv").write_text(f"y,x1\n1,{bad}\n")
        with pytest.raises(InputError):
            read_dataset(tmp_path / "d.csv", tmp_path / "g.json")

    def test_partition_mismatch(self, tmp_path):
        (tmp_path / "g.json").write_text(json.dumps({"group_sizes": [1, 1]}))
        (tmp_path / "d.csv").write_text("y,x1\n1,2\n")
        with pytest.raises(InputError, match="group sizes"):
            read_dataset(tmp_path / "d.csv", tmp_path / "g.json")

    def test_bad_json_position(self, tmp_path):
        (tmp_path / "g.json").write_text('{"group_sizes": [1,\n}')
        with pytest.raises(InputError, match=r"g.json:2:1"):
            read_groups(tmp_path / "g.json")
