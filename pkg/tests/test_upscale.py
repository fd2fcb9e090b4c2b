"""Tests for averaged coefficient fields.

Sampled and interpolated A(x) for the continuous extension, piecewise
constant A(x) for the discrete extension, the periodic shortcut and its
mismatch check, the continuity probe and the windowed-mean baselines.
"""

import math

import numpy as np
import pytest

from homog.cell import UnitCellMesh
from homog.errors import DomainError, MismatchError, ParameterError, StageError
from homog.extension import CONTINUOUS, DISCRETE, TRIVIAL, build
from homog.field import DomainBox, FieldSpec, MicroCoefficient, synthesize
from homog.upscale import (
    CONSTANT,
    INTERPOLATED,
    PIECEWISE,
    POINTWISE,
    assemble_A_discrete,
    build_A,
    constant_A,
    continuity_modulus,
    mean_field,
    periodic_shortcut,
    sample_A_continuous,
    sample_lattice,
)

SQRT3 = math.sqrt(3.0)


# ---------------------------------------------------------------------------
# Continuous extension
# ---------------------------------------------------------------------------

class TestSampleContinuous:

    def test_constant(self, constant_1d):
        A = sample_A_continuous(build(CONTINUOUS, constant_1d, 0.1), mesh=UnitCellMesh(32))
        assert A.mode == INTERPOLATED
        assert all(abs(t.A[0, 0] - 3.0) < 1e-12 for t in A.tensors)
        assert abs(A.tensor_at(0.333)[0, 0] - 3.0) < 1e-12

    def test_default_lattice_is_half_eps_bar(self, constant_1d):
        A = sample_A_continuous(build(CONTINUOUS, constant_1d, 0.1), mesh=UnitCellMesh(8))
        assert len(A.points) == 21
        assert A.warnings == []

    def test_periodic_field_gives_identical_tensors(self, sinusoid_1d):
        A = sample_A_continuous(build(CONTINUOUS, sinusoid_1d, 0.1))
        values = np.array([t.A[0, 0] for t in A.tensors])
        assert np.max(np.abs(values - values[0])) < 1e-8
        assert abs(values[0] - SQRT3) < 1e-6

    def test_sample_points_returned_exactly(self, random_1d):
        A = sample_A_continuous(build(CONTINUOUS, random_1d, 0.1), np.linspace(0.0, 1.0, 11))
        for p, t in zip(A.points, A.tensors):
            assert abs(A.tensor_at(p)[0, 0] - t.A[0, 0]) <= 1e-14

    def test_random_field_curve(self, random_1d):
        A = sample_A_continuous(build(CONTINUOUS, random_1d, 0.1), np.linspace(0.0, 1.0, 101))
        assert len(A.tensors) == 101
        for t in A.tensors:
            assert np.all(np.isfinite(t.A))
            assert t.within_bounds()
            assert random_1d.alpha - 1e-8 <= t.A[0, 0] <= random_1d.beta + 1e-8

    def test_coarse_lattice_warns(self, random_1d):
        ext = build(CONTINUOUS, random_1d, 0.1)
        A = sample_A_continuous(ext, sample_lattice(ext.omega, 0.2), UnitCellMesh(32))
        assert len(A.warnings) == 1
        assert "oscillate" in A.warnings[0]

    def test_two_dimensional_constant(self):
        field = synthesize(FieldSpec("constant", d=2, c=3.0))
        A = sample_A_continuous(build(CONTINUOUS, field, 0.1),
                                [np.array([0.0, 0.5, 1.0]), np.array([0.0, 1.0])], UnitCellMesh(16, d=2))
        assert len(A.tensors) == 6
        assert np.max(np.abs(A.tensor_at([0.3, 0.7]) - 3.0 * np.eye(2))) < 1e-12

    def test_cell_failure_names_the_point(self):
        box = DomainBox.unit(1)
        field = MicroCoefficient(box, box.expand(0.1), 1.0, 2.0,
                                 scalar_fn=lambda z: np.where(z[:, 0] < 0.6, 1.0, -1.0))
        with pytest.raises(StageError, match="cell problem at x="):
            sample_A_continuous(build(CONTINUOUS, field, 0.1), np.array([0.0, 0.5, 1.0]), UnitCellMesh(16))

    def test_rejects_discrete(self, constant_1d):
        with pytest.raises(ParameterError):
            sample_A_continuous(build(DISCRETE, constant_1d, 0.1))


class TestSampleGrid:

    def test_lattice_covers_omega(self):
        axes = sample_lattice(DomainBox([0.0, 0.0], [1.0, 0.5]), 0.3)
        assert len(axes[0]) == 5 and len(axes[1]) == 3
        assert axes[0][-1] == 1.0 and axes[1][-1] == 0.5

    def test_non_increasing_axis(self, constant_1d):
        with pytest.raises(ParameterError):
            sample_A_continuous(build(CONTINUOUS, constant_1d, 0.1), np.array([0.0, 0.5, 0.5]))

    def test_axis_outside_omega(self, constant_1d):
        with pytest.raises(DomainError):
            sample_A_continuous(build(CONTINUOUS, constant_1d, 0.1), np.array([0.0, 1.5]))

    def test_spacing_must_be_positive(self):
        with pytest.raises(ParameterError):
            sample_lattice(DomainBox.unit(1), 0.0)


# ---------------------------------------------------------------------------
# Discrete extension
# ---------------------------------------------------------------------------

class TestAssembleDiscrete:

    def test_constant(self, constant_1d):
        A = assemble_A_discrete(build(DISCRETE, constant_1d, 0.1), UnitCellMesh(32))
        assert A.mode == PIECEWISE
        assert len(A.tensors) == 10
        assert all(abs(t.A[0, 0] - 3.0) < 1e-12 for t in A.tensors)

    def test_two_regime(self):
        field = synthesize(FieldSpec("two-regime", c=3.0, split=0.5))
        A = assemble_A_discrete(build(DISCRETE, field, 0.1))
        values = [t.A[0, 0] for t in A.tensors]
        for v in values[:5]:
            assert abs(v - SQRT3) < 1e-6
        for v in values[5:]:
            assert abs(v - 3.0) < 1e-12

    def test_piecewise_constant_evaluation(self, random_1d):
        A = assemble_A_discrete(build(DISCRETE, random_1d, 0.1), UnitCellMesh(64))
        assert np.array_equal(A.tensor_at(0.12), A.tensor_at(0.18))
        assert np.array_equal(A.tensor_at(1.0), A.tensors[-1].A)

    def test_tensors_tagged_with_window_centres(self, random_1d):
        A = assemble_A_discrete(build(DISCRETE, random_1d, 0.1), UnitCellMesh(16))
        assert abs(A.tensors[0].x[0] - 0.05) < 1e-12
        assert A.header() == ["x1", "A11"]
        assert len(A.rows()) == 10

    def test_rejects_continuous(self, constant_1d):
        with pytest.raises(ParameterError):
            assemble_A_discrete(build(CONTINUOUS, constant_1d, 0.1))


class TestBuildA:

    def test_dispatch(self, sinusoid_1d):
        mesh = UnitCellMesh(32)
        assert build_A(build(CONTINUOUS, sinusoid_1d, 0.1), mesh=mesh).mode == INTERPOLATED
        assert build_A(build(DISCRETE, sinusoid_1d, 0.1), mesh=mesh).mode == PIECEWISE
        assert build_A(build(TRIVIAL, sinusoid_1d, 0.1), mesh=mesh).mode == POINTWISE

    def test_trivial_is_the_micro_field(self, sinusoid_1d):
        A = build_A(build(TRIVIAL, sinusoid_1d, 0.1), mesh=UnitCellMesh(16))
        x = np.linspace(0.0, 1.0, 17).reshape(-1, 1)
        assert np.array_equal(A.matrix_at(x), sinusoid_1d.matrix_at(x))

    def test_constant_field_from_one_tensor(self):
        A = build_A(build(CONTINUOUS, synthesize(FieldSpec("constant", c=2.0)), 0.1), mesh=UnitCellMesh(8))
        C = constant_A(A.omega, A.tensors[0])
        assert C.mode == CONSTANT
        assert C.tensor_at(0.77)[0, 0] == A.tensors[0].A[0, 0]


# ---------------------------------------------------------------------------
# Periodic shortcut
# ---------------------------------------------------------------------------

class TestPeriodicShortcut:

    def test_constant(self, constant_1d):
        t = periodic_shortcut(constant_1d, 0.1, DomainBox([0.2], [0.8]), UnitCellMesh(32))
        assert abs(t.A[0, 0] - 3.0) < 1e-12

    def test_sinusoid(self, sinusoid_1d):
        t = periodic_shortcut(sinusoid_1d, 0.1, DomainBox([0.2], [0.8]))
        assert abs(t.A[0, 0] - SQRT3) < 1e-4

    def test_incommensurate_period_mismatch(self):
        field = synthesize(FieldSpec("periodic-sinusoid", mean=2.0, amplitude=1.0, period=0.13))
        with pytest.raises(MismatchError):
            periodic_shortcut(field, 0.1, DomainBox([0.2], [0.8]))

    def test_subdomain_smaller_than_window(self, constant_1d):
        with pytest.raises(ParameterError):
            periodic_shortcut(constant_1d, 0.1, DomainBox([0.2], [0.25]))

    def test_subdomain_leaves_omega_tilde(self, constant_1d):
        with pytest.raises(DomainError):
            periodic_shortcut(constant_1d, 0.1, DomainBox([0.5], [1.5]))


# ---------------------------------------------------------------------------
# Continuity
# ---------------------------------------------------------------------------

class TestContinuityModulus:

    def test_constant(self, constant_1d):
        report = continuity_modulus(build(CONTINUOUS, constant_1d, 0.1), 0.5, [1e-2, 1e-3], UnitCellMesh(32))
        assert np.all(report.omega == 0.0)

    def test_decreasing_for_smooth_field(self):
        field = synthesize(FieldSpec("periodic-sinusoid", mean=2.0, amplitude=1.0, period=0.13))
        report = continuity_modulus(build(CONTINUOUS, field, 0.1), 0.5, [1e-2, 1e-3, 1e-4])
        worst = report.worst()
        assert np.all(np.isfinite(worst)) and np.all(worst >= 0.0)
        assert worst[0] > worst[1] > worst[2]
        assert worst[-1] <= 0.1 * worst[0]

    def test_shape_two_dimensional(self):
        field = synthesize(FieldSpec("constant", d=2))
        report = continuity_modulus(build(CONTINUOUS, field, 0.1), [0.5, 0.5], [1e-2], UnitCellMesh(8, d=2))
        assert report.omega.shape == (1, 2)
        assert report.to_dict()["hs"] == [1e-2]

    def test_step_leaves_omega(self, sinusoid_1d):
        with pytest.raises(DomainError):
            continuity_modulus(build(CONTINUOUS, sinusoid_1d, 0.1), 0.995, [1e-2], UnitCellMesh(16))

    def test_needs_continuous(self, sinusoid_1d):
        with pytest.raises(ParameterError):
            continuity_modulus(build(DISCRETE, sinusoid_1d, 0.1), 0.5, [1e-2])


# ---------------------------------------------------------------------------
# Baselines
# ---------------------------------------------------------------------------

class TestMeanField:

    def test_harmonic_matches_cell_problem_in_1d(self, sinusoid_1d):
        A = mean_field(sinusoid_1d, 0.1, kind="harmonic")
        assert all(abs(t.A[0, 0] - SQRT3) < 1e-6 for t in A.tensors)

    def test_arithmetic(self, sinusoid_1d):
        A = mean_field(sinusoid_1d, 0.1, kind="arithmetic")
        assert abs(A.tensor_at(0.42)[0, 0] - 2.0) < 1e-6

    def test_unknown_kind(self, sinusoid_1d):
        with pytest.raises(ParameterError):
            mean_field(sinusoid_1d, 0.1, kind="median")
