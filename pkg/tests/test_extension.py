"""Tests for two-scale extensions.

Hand-evaluated values of a(x, y) and a(x, x/eps) for the linear field
a_M(z) = z, the exactness identity at eps = eps_bar, periodicity in y,
REV windows and partitions, and linearity of the extension map.
"""

import numpy as np
import pytest

from homog.errors import ConsistencyError, DomainError, ParameterError
from homog.extension import (
    CONTINUOUS,
    DISCRETE,
    TRIVIAL,
    Partition,
    RevGrid,
    build,
    eval_eps,
    eval_xy,
    rev_grid,
    rev_window,
    verify_identity,
)
from homog.field import DomainBox, FieldSpec, combine, power, synthesize
from tests.conftest import linear_field


# ---------------------------------------------------------------------------
# Construction
# ---------------------------------------------------------------------------

class TestBuild:

    def test_unknown_kind(self, constant_1d):
        with pytest.raises(ParameterError, match="unknown extension kind"):
            build("spline", constant_1d, 0.1)

    def test_eps_bar_below_shortest_side(self, constant_1d):
        with pytest.raises(ParameterError):
            build(CONTINUOUS, constant_1d, 1.0)

    def test_eps_bar_positive(self, constant_1d):
        with pytest.raises(ParameterError):
            build(CONTINUOUS, constant_1d, -0.1)

    def test_continuous_needs_half_window_margin(self):
        field = linear_field(margin=0.02)
        with pytest.raises(DomainError, match="margin"):
            build(CONTINUOUS, field, 0.1)

    def test_trivial_needs_no_margin(self):
        field = linear_field(margin=0.02)
        assert build(TRIVIAL, field, 0.1).kind == TRIVIAL

    def test_discrete_builds_uniform_partition(self, linear):
        ext = build(DISCRETE, linear, 0.1)
        assert ext.partition.n == 10
        for j, window in enumerate(ext.partition.windows):
            assert abs(window.lower[0] - j / 10) < 1e-12
            assert abs(window.upper[0] - (j + 1) / 10) < 1e-12

    def test_partition_ignored_for_continuous(self, linear):
        partition = Partition.uniform(linear.omega, linear.omega_tilde, 0.1)
        assert build(CONTINUOUS, linear, 0.1, partition).partition is None

    def test_kind_is_case_insensitive(self, constant_1d):
        assert build("Continuous", constant_1d, 0.1).kind == CONTINUOUS


class TestPartition:

    def test_last_window_shifted_into_omega_tilde(self):
        # side 0.95 leaves a short last cell whose window would overhang by 0.05
        field = linear_field(upper=0.95, margin=0.01)
        partition = Partition.uniform(field.omega, field.omega_tilde, 0.1)
        last = partition.windows[-1]
        assert abs(last.upper[0] - 0.96) < 1e-12
        assert abs(last.sides[0] - 0.1) < 1e-12
        # the cell itself is clipped to Omega, so cells stay disjoint
        assert abs(partition.cells[-1].lower[0] - 0.9) < 1e-12
        assert abs(partition.cells[-1].upper[0] - 0.95) < 1e-12
        assert all(a.upper[0] == b.lower[0] for a, b in zip(partition.cells, partition.cells[1:]))
        assert partition.locate(np.array([[0.899], [0.901], [0.95]]), field.omega).tolist() == [8, 9, 9]
        partition.validate(field.omega, field.omega_tilde, 0.1)

    def test_window_side_must_match(self, linear):
        cells = [DomainBox([0.0], [0.5]), DomainBox([0.5], [1.0])]
        windows = [DomainBox([0.0], [0.5]), DomainBox([0.5], [1.0])]
        with pytest.raises(ParameterError, match="side"):
            Partition(cells, windows).validate(linear.omega, linear.omega_tilde, 0.1)

    def test_window_leaving_omega_tilde(self):
        field = linear_field(margin=0.01)
        cells = [DomainBox([0.0], [0.05]), DomainBox([0.05], [1.0])]
        windows = [DomainBox([-0.05], [0.05]), DomainBox([0.05], [0.15])]
        with pytest.raises(DomainError):
            Partition(cells, windows).validate(field.omega, field.omega_tilde, 0.1)

    def test_cell_outside_its_window(self, linear):
        cells = [DomainBox([0.0], [0.5]), DomainBox([0.5], [1.0])]
        windows = [DomainBox([0.0], [0.1]), DomainBox([0.5], [0.6])]
        with pytest.raises(ParameterError, match="not inside its window"):
            Partition(cells, windows).validate(linear.omega, linear.omega_tilde, 0.1)

    def test_locate_half_open(self, linear):
        partition = Partition.uniform(linear.omega, linear.omega_tilde, 0.1)
        owners = partition.locate(np.array([[0.0], [0.1], [0.13], [0.99], [1.0]]), linear.omega)
        assert owners.tolist() == [0, 1, 1, 9, 9]

    def test_locate_two_dimensional_strides(self):
        field = synthesize(FieldSpec("constant", d=2))
        partition = Partition.uniform(field.omega, field.omega_tilde, 0.25)
        owners = partition.locate(np.array([[0.1, 0.1], [0.1, 0.6], [0.6, 0.1]]), field.omega)
        assert owners.tolist() == [0, 2, 8]


# ---------------------------------------------------------------------------
# a(x, y)
# ---------------------------------------------------------------------------

class TestEvalXY:

    def test_continuous_window_centre(self):
        field = linear_field(lower=0.3, upper=0.7, margin=0.3)
        ext = build(CONTINUOUS, field, 0.1)
        assert abs(eval_xy(ext, 0.5, 0.0)[0, 0] - 0.5) < 1e-12

    def test_continuous_sweeps_the_window(self, linear):
        ext = build(CONTINUOUS, linear, 0.1)
        y = np.linspace(0.0, 0.999, 200).reshape(-1, 1)
        z = ext.profile(0.5, y)
        assert z.min() >= 0.45 - 1e-12
        assert z.max() < 0.55

    def test_trivial_is_frozen_in_y(self, linear):
        ext = build(TRIVIAL, linear, 0.1)
        for y in (0.0, 0.3, 17.25):
            assert eval_xy(ext, 0.42, y)[0, 0] == 0.42

    def test_continuous_constant(self, constant_1d):
        ext = build(CONTINUOUS, constant_1d, 0.1)
        assert eval_xy(ext, 0.61, 0.77)[0, 0] == 3.0

    @pytest.mark.parametrize("kind", [TRIVIAL, CONTINUOUS, DISCRETE])
    def test_periodic_in_y(self, random_1d, kind):
        ext = build(kind, random_1d, 0.1)
        x = np.full((5, 1), 0.37)
        y = np.array([[0.0], [0.125], [0.375], [0.5], [0.875]])
        assert np.array_equal(ext.scalar_xy(x, y), ext.scalar_xy(x, y + 1.0))

    def test_discrete_piecewise_constant_in_x(self, random_1d):
        ext = build(DISCRETE, random_1d, 0.1)
        y = np.array([[0.3]])
        assert np.array_equal(ext.scalar_xy(np.array([[0.12]]), y), ext.scalar_xy(np.array([[0.18]]), y))

    def test_diagonal_matches_micro(self, linear):
        ext = build(CONTINUOUS, linear, 0.1)
        x = np.linspace(0.05, 0.95, 37).reshape(-1, 1)
        assert np.max(np.abs(ext.scalar_xy(x, x / 0.1) - x[:, 0])) < 1e-12

    def test_outside_omega(self, linear):
        ext = build(CONTINUOUS, linear, 0.1)
        with pytest.raises(DomainError):
            eval_xy(ext, 1.05, 0.0)

    def test_two_dimensional_matrix(self):
        field = synthesize(FieldSpec("checkerboard-2d", d=2))
        ext = build(CONTINUOUS, field, 0.1)
        m = eval_xy(ext, [0.5, 0.5], [0.2, 0.7])
        assert m.shape == (2, 2)
        assert m[0, 1] == 0.0


# ---------------------------------------------------------------------------
# a(x, x/eps)
# ---------------------------------------------------------------------------

class TestEvalEps:

    def test_continuous_hand_value(self, linear):
        ext = build(CONTINUOUS, linear, 0.1)
        # delta = 0.1, cube centred at 0.1, stretched by eps_bar/eps = 2
        assert abs(eval_eps(ext, 0.12, 0.05)[0, 0] - 0.14) < 1e-12

    def test_discrete_hand_value(self, linear):
        ext = build(DISCRETE, linear, 0.1)
        # x-hat = 0.05, cube centre 0.025
        assert abs(eval_eps(ext, 0.04, 0.05)[0, 0] - 0.08) < 1e-12

    @pytest.mark.parametrize("kind", [TRIVIAL, CONTINUOUS, DISCRETE])
    def test_exact_at_eps_bar(self, linear, kind):
        ext = build(kind, linear, 0.1)
        assert eval_eps(ext, 0.37, 0.1)[0, 0] == 0.37

    def test_trivial_ignores_eps(self, linear):
        ext = build(TRIVIAL, linear, 0.1)
        assert eval_eps(ext, 0.42, 0.003)[0, 0] == 0.42

    def test_continuous_micro_point_stays_in_window(self, linear):
        ext = build(CONTINUOUS, linear, 0.1)
        x = np.linspace(0.0, 1.0, 501).reshape(-1, 1)
        z = ext.scalar_eps(x, 0.025)
        assert np.all(np.abs(z - x[:, 0]) <= 0.05 + 1e-12)

    def test_rejects_non_positive_eps(self, linear):
        ext = build(CONTINUOUS, linear, 0.1)
        with pytest.raises(ParameterError):
            eval_eps(ext, 0.5, 0.0)


class TestRevGrid:

    def test_continuous_delta(self, linear):
        ext = build(CONTINUOUS, linear, 0.1)
        assert abs(rev_grid(ext, 0.05).delta - 0.1) < 1e-12
        assert abs(rev_grid(ext, 0.025).delta - 0.1 / 3) < 1e-12

    def test_discrete_delta_is_eps(self, linear):
        ext = build(DISCRETE, linear, 0.1)
        assert rev_grid(ext, 0.05).delta == 0.05

    def test_degenerate_cases(self, linear):
        with pytest.raises(ParameterError):
            rev_grid(build(TRIVIAL, linear, 0.1), 0.05)
        with pytest.raises(ParameterError):
            rev_grid(build(CONTINUOUS, linear, 0.1), 0.1)

    def test_boundary_point_joins_upper_cube(self):
        grid = RevGrid(DISCRETE, 0.25, 0.5)
        centers = grid.centers(np.array([[0.125]]), np.array([[0.0]]))
        assert centers[0, 0] == 0.25


# ---------------------------------------------------------------------------
# Windows and identity
# ---------------------------------------------------------------------------

class TestRevWindow:

    def test_continuous_centred(self, linear):
        w = rev_window(build(CONTINUOUS, linear, 0.1), 0.5)
        assert abs(w.lower[0] - 0.45) < 1e-12
        assert abs(w.upper[0] - 0.55) < 1e-12

    def test_discrete_lookup(self, linear):
        ext = build(DISCRETE, linear, 0.1)
        w = rev_window(ext, 0.13)
        assert abs(w.lower[0] - 0.1) < 1e-12
        assert abs(w.upper[0] - 0.2) < 1e-12

    def test_discrete_boundary_tie_goes_up(self, linear):
        ext = build(DISCRETE, linear, 0.1)
        assert rev_window(ext, 0.1) == ext.partition.windows[1]

    def test_outside_omega(self, linear):
        with pytest.raises(DomainError):
            rev_window(build(CONTINUOUS, linear, 0.1), -0.1)


class TestVerifyIdentity:

    def test_trivial(self, sinusoid_1d):
        assert verify_identity(build(TRIVIAL, sinusoid_1d, 0.1), n_points=1000) == 0.0

    def test_continuous_random(self, random_1d):
        assert verify_identity(build(CONTINUOUS, random_1d, 0.1), n_points=1000) == 0.0

    def test_discrete_checkerboard(self):
        field = synthesize(FieldSpec("checkerboard-2d", d=2))
        assert verify_identity(build(DISCRETE, field, 0.1), n_points=1000) == 0.0

    def test_discrete_random(self, random_1d):
        assert verify_identity(build(DISCRETE, random_1d, 0.1), n_points=1000) == 0.0

    @pytest.mark.parametrize("kind", [CONTINUOUS, DISCRETE])
    def test_smooth_field(self, sinusoid_1d, kind):
        assert verify_identity(build(kind, sinusoid_1d, 0.1), n_points=1000) == 0.0

    @pytest.mark.parametrize("kind", [TRIVIAL, CONTINUOUS, DISCRETE])
    def test_construction_on_the_diagonal(self, sinusoid_1d, kind):
        ext = build(kind, sinusoid_1d, 0.1)
        x = np.random.default_rng(2).uniform(0.0, 1.0, size=(500, 1))
        for p in x[:20]:
            assert abs(eval_xy(ext, p, p / 0.1)[0, 0] - sinusoid_1d.scalar_at(p[None])[0]) <= 1e-12
        assert np.max(np.abs(ext.scalar_xy(x, x / 0.1) - sinusoid_1d.scalar_at(x))) <= 1e-12

    def test_checks_the_construction_itself(self, sinusoid_1d, monkeypatch):
        ext = build(CONTINUOUS, sinusoid_1d, 0.1)
        shifted = ext.matrix_xy
        monkeypatch.setattr(ext, "matrix_xy", lambda x, y: shifted(x, y + 0.25))
        with pytest.raises(ConsistencyError, match="continuous construction"):
            verify_identity(ext, n_points=200)

    def test_needs_points(self, constant_1d):
        with pytest.raises(ParameterError):
            verify_identity(build(TRIVIAL, constant_1d, 0.1), n_points=0)


# ---------------------------------------------------------------------------
# Bounds inherited from a_M
# ---------------------------------------------------------------------------

class TestInheritedBounds:

    @pytest.fixture
    def random_2d(self):
        return synthesize(FieldSpec("seeded-random", d=2, seed=11))

    @staticmethod
    def _assert_within(field, values):
        diag = np.diagonal(values, axis1=-2, axis2=-1)
        assert np.all(diag >= field.alpha - 1e-12)
        assert np.all(diag <= field.beta + 1e-12)

    @pytest.mark.parametrize("kind", [TRIVIAL, CONTINUOUS, DISCRETE])
    @pytest.mark.parametrize("d", [1, 2])
    def test_eval_xy(self, random_1d, random_2d, kind, d):
        field = random_1d if d == 1 else random_2d
        ext = build(kind, field, 0.1)
        rng = np.random.default_rng(d)
        for _ in range(100):
            x = rng.uniform(0.0, 1.0, size=d)
            y = rng.uniform(-3.0, 3.0, size=d)
            self._assert_within(field, eval_xy(ext, x, y))

    @pytest.mark.parametrize("kind", [TRIVIAL, CONTINUOUS, DISCRETE])
    @pytest.mark.parametrize("eps", [0.1, 0.037, 0.3])
    def test_eval_eps(self, random_1d, kind, eps):
        ext = build(kind, random_1d, 0.1)
        rng = np.random.default_rng(7)
        for x in rng.uniform(0.0, 1.0, size=(100, 1)):
            self._assert_within(random_1d, eval_eps(ext, x, eps))

    @pytest.mark.parametrize("kind", [TRIVIAL, CONTINUOUS, DISCRETE])
    def test_eval_eps_two_dimensional(self, random_2d, kind):
        ext = build(kind, random_2d, 0.1)
        x = np.random.default_rng(3).uniform(0.0, 1.0, size=(200, 2))
        self._assert_within(random_2d, ext.matrix_eps(x, 0.023))


# ---------------------------------------------------------------------------
# Linearity of the extension map
# ---------------------------------------------------------------------------

class TestExtensionMap:

    @pytest.mark.parametrize("kind", [CONTINUOUS, DISCRETE])
    def test_linear(self, sinusoid_1d, constant_1d, kind):
        rng = np.random.default_rng(0)
        x = rng.uniform(0.0, 1.0, size=(50, 1))
        y = rng.uniform(-2.0, 2.0, size=(50, 1))
        mixed = build(kind, combine([sinusoid_1d, constant_1d], [0.5, 2.0]), 0.1)
        a1 = build(kind, sinusoid_1d, 0.1)
        a2 = build(kind, constant_1d, 0.1)
        want = 0.5 * a1.scalar_xy(x, y) + 2.0 * a2.scalar_xy(x, y)
        assert np.max(np.abs(mixed.scalar_xy(x, y) - want)) < 1e-12

    def test_commutes_with_powers(self, sinusoid_1d):
        rng = np.random.default_rng(1)
        x = rng.uniform(0.0, 1.0, size=(50, 1))
        squared = build(CONTINUOUS, power(sinusoid_1d, 2), 0.1)
        plain = build(CONTINUOUS, sinusoid_1d, 0.1)
        assert np.max(np.abs(squared.scalar_eps(x, 0.03) - plain.scalar_eps(x, 0.03) ** 2)) < 1e-12
