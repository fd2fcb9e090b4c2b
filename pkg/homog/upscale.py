"""Averaged coefficient fields A(x) over Omega.

* Continuous extension: one cell problem per lattice sample point, then
  componentwise multilinear interpolation.
* Discrete extension: one cell problem per partition window, A constant on
  each Omega_k.
* Periodic shortcut: one window problem for an eps_bar-periodic subdomain,
  cross-checked on a few random windows.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from homog.cell import (
    AveragedTensor,
    UnitCellMesh,
    averaged_tensor_from_window,
    cell_tensor,
    window_means,
)
from homog.config.loader import setting
from homog.errors import (
    DomainError,
    EllipticityError,
    HomogError,
    MismatchError,
    ParameterError,
    StageError,
)
from homog.extension import CONTINUOUS, DISCRETE, TRIVIAL, TwoScaleCoefficient
from homog.field import DomainBox, MicroCoefficient, as_point, as_points
from homog.jobs import run_jobs
from homog.log import logger

INTERPOLATED = "interpolated"
PIECEWISE = "piecewise-constant"
CONSTANT = "constant"
POINTWISE = "pointwise"


class AveragedCoefficientField:
    """A(x) on closed Omega, stored as sampled tensors.

    ``axes`` is the sample lattice (interpolated mode); ``partition`` the
    Discrete partition (piecewise mode).  ``points`` and ``tensors`` list
    every stored sample in assembly order.  In pointwise mode (trivial
    extension) A is a_M itself and the samples are kept for export only.
    """

    def __init__(self, mode: str, omega: DomainBox, points: np.ndarray, tensors: list[AveragedTensor],
                 axes: Sequence[np.ndarray] | None = None, partition=None,
                 warnings: list[str] | None = None, field: MicroCoefficient | None = None) -> None:
        self.mode = mode
        self.field = field
        self.omega = omega
        self.points = np.asarray(points, dtype=float)
        self.tensors = list(tensors)
        self.axes = [np.asarray(a, dtype=float) for a in axes] if axes is not None else None
        self.partition = partition
        self.warnings = list(warnings or [])
        self._stack = np.stack([t.A for t in self.tensors])
        self._interp = None
        if mode == INTERPOLATED:
            shape = tuple(len(a) for a in self.axes)
            grid = self._stack.reshape(shape + self._stack.shape[1:])
            self._interp = RegularGridInterpolator(tuple(self.axes), grid, method="linear")

    @property
    def d(self) -> int:
        return self.omega.d

    def matrix_at(self, x) -> np.ndarray:
        """A at ``(m, d)`` points, shape ``(m, d, d)``."""
        pts = as_points(x, self.d)
        self.omega.check(pts, "omega")
        if self.mode == POINTWISE:
            return self.field.matrix_at(pts)
        if self.mode == CONSTANT:
            return np.repeat(self._stack[:1], len(pts), axis=0)
        if self.mode == PIECEWISE:
            return self._stack[self.partition.locate(pts, self.omega)]
        lo = np.array([a[0] for a in self.axes])
        hi = np.array([a[-1] for a in self.axes])
        values = self._interp(np.clip(pts, lo, hi))
        eig = np.linalg.eigvalsh(0.5 * (values + np.transpose(values, (0, 2, 1))))[:, 0]
        if np.any(eig <= 0):
            raise EllipticityError("interpolated averaged tensor lost positive definiteness")
        return values

    def tensor_at(self, x) -> np.ndarray:
        return self.matrix_at(as_point(x, self.d).reshape(1, -1))[0]

    def rows(self) -> list[list[float]]:
        """Export rows: the d coordinates followed by A row-major."""
        return [list(p) + list(t.A.ravel()) for p, t in zip(self.points, self.tensors)]

    def header(self) -> list[str]:
        coords = [f"x{k + 1}" for k in range(self.d)]
        entries = [f"A{i + 1}{j + 1}" for i in range(self.d) for j in range(self.d)]
        return coords + entries


class ContinuityReport:
    """omega[i, k] = ||A(x + hs[i] e_k) - A(x)||_F."""

    def __init__(self, x: np.ndarray, hs: list[float], omega: np.ndarray) -> None:
        self.x = x
        self.hs = list(hs)
        self.omega = omega

    def worst(self) -> np.ndarray:
        """Largest modulus over directions, one value per step."""
        return self.omega.max(axis=1)

    def to_dict(self) -> dict:
        return {"x": self.x.tolist(), "hs": self.hs, "omega": self.omega.tolist()}


# ---------------------------------------------------------------------------
# Sample lattices
# ---------------------------------------------------------------------------

def sample_lattice(omega: DomainBox, spacing: float) -> list[np.ndarray]:
    """Per-axis sample coordinates covering closed Omega with at most ``spacing`` gaps."""
    if not spacing > 0:
        raise ParameterError(f"sample spacing must be positive, got {spacing}")
    axes = []
    for k in range(omega.d):
        count = max(1, int(np.ceil(omega.sides[k] / spacing - 1e-9)))
        axes.append(np.linspace(omega.lower[k], omega.upper[k], count + 1))
    return axes


def _lattice_axes(omega: DomainBox, eps_bar: float, sample_grid) -> list[np.ndarray]:
    if sample_grid is None:
        factor = setting("upscale", "sample_spacing_factor", 0.5)
        return sample_lattice(omega, factor * eps_bar)
    if len(sample_grid) and np.isscalar(sample_grid[0]):
        axes = [np.asarray(sample_grid, dtype=float)]
    else:
        axes = [np.asarray(a, dtype=float) for a in sample_grid]
    if len(axes) != omega.d:
        raise ParameterError(f"sample grid needs {omega.d} axes, got {len(axes)}")
    for k, a in enumerate(axes):
        if a.ndim != 1 or a.size < 2 or np.any(np.diff(a) <= 0):
            raise ParameterError(f"sample axis {k} needs at least 2 strictly increasing values")
        if a[0] < omega.lower[k] or a[-1] > omega.upper[k]:
            raise DomainError(f"sample axis {k} leaves omega [{omega.lower[k]}, {omega.upper[k]}]")
    return axes


def _lattice_points(axes: list[np.ndarray]) -> np.ndarray:
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


def _oscillation_warnings(axes: list[np.ndarray], eps_bar: float) -> list[str]:
    ratio = setting("upscale", "oscillation_warning_ratio", 1.0)
    spacing = max((float(np.max(np.diff(a))) for a in axes if a.size > 1), default=0.0)
    if spacing > ratio * eps_bar:
        msg = (f"sample spacing {spacing:g} exceeds eps_bar={eps_bar:g}: A(x) may oscillate "
               f"as fast as a_M and interpolation can miss it")
        logger.warning(msg)
        return [msg]
    return []


def _solve_at(points: np.ndarray, solver) -> list[AveragedTensor]:
    def job(p: np.ndarray) -> AveragedTensor:
        try:
            return solver(p)
        except HomogError as exc:
            raise StageError(f"cell problem at x={p.tolist()}", exc) from exc

    return run_jobs(job, list(points))


# ---------------------------------------------------------------------------
# Operations
# ---------------------------------------------------------------------------

def sample_A_continuous(ext: TwoScaleCoefficient, sample_grid=None, mesh: UnitCellMesh | None = None,
                        tol: float | None = None) -> AveragedCoefficientField:
    """Cell problems on a sample lattice, interpolated multilinearly."""
    if ext.kind == DISCRETE:
        raise ParameterError("sample_A_continuous needs a continuous or trivial extension")
    mesh = mesh or UnitCellMesh(d=ext.d)
    axes = _lattice_axes(ext.omega, ext.eps_bar, sample_grid)
    points = _lattice_points(axes)
    warnings = _oscillation_warnings(axes, ext.eps_bar) if ext.kind == CONTINUOUS else []
    logger.info("Sampling A at %d points (%s extension, n=%d)", len(points), ext.kind, mesh.n)
    tensors = _solve_at(points, lambda p: cell_tensor(ext, p, mesh, tol))
    if ext.kind == TRIVIAL:
        return AveragedCoefficientField(POINTWISE, ext.omega, points, tensors, axes=axes, field=ext.field)
    return AveragedCoefficientField(INTERPOLATED, ext.omega, points, tensors, axes=axes, warnings=warnings)


def assemble_A_discrete(ext: TwoScaleCoefficient, mesh: UnitCellMesh | None = None,
                        tol: float | None = None) -> AveragedCoefficientField:
    """One cell problem per partition window; A is constant on every Omega_k."""
    if ext.kind != DISCRETE or ext.partition is None:
        raise ParameterError("assemble_A_discrete needs a discrete extension with a partition")
    mesh = mesh or UnitCellMesh(d=ext.d)
    partition = ext.partition
    # any point of Omega_k selects window W_k; the cell centre is always inside Omega
    representatives = np.stack([c.center for c in partition.cells])
    logger.info("Assembling A on %d partition cells (n=%d)", partition.n, mesh.n)
    tensors = _solve_at(representatives, lambda p: cell_tensor(ext, p, mesh, tol))
    centers = partition.centers
    for t, c in zip(tensors, centers):
        t.x = c
    return AveragedCoefficientField(PIECEWISE, ext.omega, centers, tensors, partition=partition)


def constant_A(omega: DomainBox, tensor: AveragedTensor) -> AveragedCoefficientField:
    """A field that is the same tensor everywhere (periodic shortcut result)."""
    point = tensor.x if tensor.x is not None else omega.center
    return AveragedCoefficientField(CONSTANT, omega, point.reshape(1, -1), [tensor])


def mean_field(field: MicroCoefficient, eps_bar: float, sample_grid=None, kind: str = "arithmetic",
               quad_n: int | None = None) -> AveragedCoefficientField:
    """Baseline A(x) from windowed harmonic, geometric or arithmetic means of a_M."""
    if kind not in ("arithmetic", "harmonic", "geometric"):
        raise ParameterError(f"unknown mean kind '{kind}'")
    axes = _lattice_axes(field.omega, eps_bar, sample_grid)
    points = _lattice_points(axes)
    eye = np.eye(field.d)
    tensors = []
    for p in points:
        window = DomainBox(p - 0.5 * eps_bar, p + 0.5 * eps_bar)
        means = window_means(field, window, quad_n)
        tensors.append(AveragedTensor(means[kind] * eye, p, f"{kind}-mean",
                                      reuss=means["harmonic"], voigt=means["arithmetic"]))
    return AveragedCoefficientField(INTERPOLATED, field.omega, points, tensors, axes=axes)


def periodic_shortcut(field: MicroCoefficient, eps_bar: float, subdomain: DomainBox,
                      mesh: UnitCellMesh | None = None, tol: float | None = None,
                      seed: int = 0) -> AveragedTensor:
    """A for an eps_bar-periodic subdomain from a single window problem.

    Three random windows are solved as a check; disagreement beyond the
    configured tolerance raises MismatchError.
    """
    if subdomain.d != field.d:
        raise ParameterError("subdomain dimension does not match the field")
    if np.any(subdomain.sides < eps_bar):
        raise ParameterError(f"subdomain {subdomain!r} is smaller than one eps_bar window")
    if not field.omega_tilde.contains_box(subdomain, slack=1e-12):
        raise DomainError(f"subdomain {subdomain!r} leaves omega_tilde")
    mesh = mesh or UnitCellMesh(d=field.d)
    lo = subdomain.lower + 0.5 * eps_bar
    hi = subdomain.upper - 0.5 * eps_bar

    first = averaged_tensor_from_window(field, lo, eps_bar, mesh, tol)
    rng = np.random.default_rng(seed)
    n_check = int(setting("upscale", "periodic_check_windows", 3))
    check_tol = setting("upscale", "periodic_check_tol", 1e-6)
    probes = lo + rng.uniform(0.0, 1.0, size=(n_check, field.d)) * (hi - lo)
    others = run_jobs(lambda p: averaged_tensor_from_window(field, p, eps_bar, mesh, tol), list(probes))
    for t in others:
        diff = float(np.max(np.abs(t.A - first.A)))
        if diff > check_tol:
            raise MismatchError(
                f"windows at {first.x.tolist()} and {t.x.tolist()} give tensors differing by {diff:.3e}; "
                f"the field is not eps_bar-periodic on {subdomain!r}"
            )
    logger.info("Periodic shortcut on %r: %d windows agree", subdomain, n_check + 1)
    return first


def continuity_modulus(ext: TwoScaleCoefficient, x, hs: Sequence[float],
                       mesh: UnitCellMesh | None = None, tol: float | None = None) -> ContinuityReport:
    """||A(x + h e_k) - A(x)||_F for every step h and axis k.

    Tensors come from the window problem with window-aligned cells, so the
    discrete A inherits the x-regularity of a_M.
    """
    if ext.kind != CONTINUOUS:
        raise ParameterError("continuity_modulus needs a continuous extension")
    mesh = mesh or UnitCellMesh(d=ext.d)
    p = as_point(x, ext.d)
    ext.omega.check(p.reshape(1, -1), "omega")
    hs = [float(h) for h in hs]
    if any(not h > 0 for h in hs):
        raise ParameterError("steps must be positive")
    probes = []
    for h in hs:
        for k in range(ext.d):
            q = p.copy()
            q[k] += h
            if not ext.omega.contains(q):
                raise DomainError(f"step h={h} along axis {k} leaves omega from x={p.tolist()}")
            probes.append(q)

    def tensor(q: np.ndarray) -> np.ndarray:
        return averaged_tensor_from_window(ext.field, q, ext.eps_bar, mesh, tol, align="window").A

    base, *shifted = run_jobs(tensor, [p] + probes)
    omega = np.array([np.linalg.norm(a - base) for a in shifted]).reshape(len(hs), ext.d)
    return ContinuityReport(p, hs, omega)


def build_A(ext: TwoScaleCoefficient, sample_grid=None, mesh: UnitCellMesh | None = None,
            tol: float | None = None) -> AveragedCoefficientField:
    """Dispatch on the extension kind."""
    if ext.kind == DISCRETE:
        return assemble_A_discrete(ext, mesh, tol)
    if ext.kind not in (CONTINUOUS, TRIVIAL):
        raise ParameterError(f"unknown extension kind {ext.kind}")
    return sample_A_continuous(ext, sample_grid, mesh, tol)
