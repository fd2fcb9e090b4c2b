"""Periodic cell problems and averaged (effective) tensors.

For each direction e_j the corrector w_j solves

    -div_y( a(x, y) (grad_y w_j + e_j) ) = 0   in Y,  w_j Y-periodic, mean zero,

and A_ij(x) = int_Y e_i^T a(x, y) (grad_y w_j + e_j) dy.

Discretisation: cell-centred finite volumes on an n^d periodic grid, face
coefficients by harmonic averaging of the two adjacent cells, one pinned
unknown and a mean subtraction afterwards.  The tensor is assembled from the
same face fluxes the solver balances.

Only isotropic or diagonal coefficient samples are accepted by the
two-point flux scheme.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp
from scipy.interpolate import RegularGridInterpolator

from homog.config.loader import setting
from homog.errors import (
    ConsistencyError,
    DomainError,
    EllipticityError,
    ParameterError,
    UnsupportedError,
)
from homog.extension import TwoScaleCoefficient
from homog.field import DomainBox, MicroCoefficient, as_point
from homog.linalg import backward_error, cg_solve, default_tol, iteration_cap
from homog.log import logger

Y_FORM = "Y-form"
W_FORM = "W-form"
HARMONIC_1D = "harmonic-1d"


# ---------------------------------------------------------------------------
# Types
# ---------------------------------------------------------------------------

class UnitCellMesh:
    """Uniform periodic grid with ``n`` cells per axis on Y = (0, 1)^d."""

    __slots__ = ("n", "d")

    def __init__(self, n: int | None = None, d: int = 1) -> None:
        if n is None:
            n = setting("cell", "mesh_n", 128)
        if int(n) != n or n < 2:
            raise ParameterError(f"unit cell mesh needs n >= 2 cells per axis, got {n}")
        if d < 1:
            raise ParameterError(f"dimension must be positive, got {d}")
        self.n = int(n)
        self.d = int(d)

    @property
    def h(self) -> float:
        return 1.0 / self.n

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.n,) * self.d

    @property
    def size(self) -> int:
        return self.n ** self.d

    def midpoints(self) -> np.ndarray:
        """Cell centres y_k = (k + 1/2)/n, shape ``(n^d, d)``, last axis fastest."""
        return DomainBox.unit(self.d).midpoints(self.n)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, UnitCellMesh):
            return NotImplemented
        return self.n == other.n and self.d == other.d

    def __hash__(self) -> int:
        return hash((self.n, self.d))

    def __repr__(self) -> str:
        return f"UnitCellMesh(n={self.n}, d={self.d})"


class AveragedTensor:
    """An averaged tensor A at a macroscopic point.

    ``reuss`` and ``voigt`` hold the harmonic and arithmetic means of the
    coefficient samples the tensor was computed from (scalar fields only).
    """

    def __init__(self, A: np.ndarray, x, method: str,
                 reuss: float | None = None, voigt: float | None = None,
                 corrector_slope: np.ndarray | None = None) -> None:
        self.A = np.atleast_2d(np.asarray(A, dtype=float))
        self.x = None if x is None else np.atleast_1d(np.asarray(x, dtype=float))
        self.method = method
        self.reuss = reuss
        self.voigt = voigt
        self.corrector_slope = corrector_slope

    @property
    def d(self) -> int:
        return self.A.shape[0]

    @property
    def min_eigenvalue(self) -> float:
        sym = 0.5 * (self.A + self.A.T)
        return float(np.linalg.eigvalsh(sym)[0])

    @property
    def asymmetry(self) -> float:
        norm = float(np.linalg.norm(self.A))
        return float(np.linalg.norm(self.A - self.A.T)) / norm if norm > 0 else 0.0

    def within_bounds(self, slack: float = 1e-8) -> bool:
        """Reuss-Voigt sandwich on every canonical direction."""
        if self.reuss is None or self.voigt is None:
            return True
        diag = np.diag(self.A)
        return bool(np.all(diag >= self.reuss - slack) and np.all(diag <= self.voigt + slack))

    def to_dict(self) -> dict:
        return {
            "x": None if self.x is None else self.x.tolist(),
            "method": self.method,
            "A": self.A.tolist(),
            "reuss": self.reuss,
            "voigt": self.voigt,
        }

    def __repr__(self) -> str:
        return f"AveragedTensor({self.method}, A={self.A.tolist()})"


class CellSolution:
    """The d periodic correctors at one macroscopic point."""

    def __init__(self, w: list[np.ndarray], face_grad: list[list[np.ndarray]],
                 point_x: np.ndarray, mesh: UnitCellMesh, residual: float,
                 energy: list[tuple[float, float]]) -> None:
        self.w = w
        self.face_grad = face_grad
        self.point_x = point_x
        self.mesh = mesh
        self.residual = residual
        self.energy = energy
        self._interpolators: list[RegularGridInterpolator] | None = None

    @property
    def grad_w(self) -> list[np.ndarray]:
        """Cellwise gradients grad_y w_j, each of shape ``mesh.shape + (d,)``."""
        grads = []
        for j in range(self.mesh.d):
            comps = [0.5 * (g + np.roll(g, 1, axis=k)) for k, g in enumerate(self.face_grad[j])]
            grads.append(np.stack(comps, axis=-1))
        return grads

    def _build_interpolators(self) -> list[RegularGridInterpolator]:
        h = self.mesh.h
        centers = (np.arange(-1, self.mesh.n + 1) + 0.5) * h
        axes = (centers,) * self.mesh.d
        return [
            RegularGridInterpolator(axes, np.pad(wj, 1, mode="wrap"), method="linear")
            for wj in self.w
        ]

    def values_at(self, y: np.ndarray) -> np.ndarray:
        """Periodic multilinear interpolation of every w_j; returns ``(m, d)``."""
        if self._interpolators is None:
            self._interpolators = self._build_interpolators()
        pts = np.mod(np.asarray(y, dtype=float).reshape(-1, self.mesh.d), 1.0)
        return np.stack([interp(pts) for interp in self._interpolators], axis=1)


# ---------------------------------------------------------------------------
# Discrete periodic operator
# ---------------------------------------------------------------------------

def _harmonic_faces(values: np.ndarray, axis: int) -> np.ndarray:
    """Face coefficient between cell c and c + e_axis (periodic)."""
    nb = np.roll(values, -1, axis=axis)
    return 2.0 * values * nb / (values + nb)


def _periodic_operator(axis_coeffs: list[np.ndarray], trans_scale: float) -> tuple[sp.csr_matrix, list[np.ndarray]]:
    """Assemble the periodic two-point flux matrix.

    ``axis_coeffs[k]`` holds the cell coefficient used for fluxes along
    axis k.  Returns the matrix and the face coefficients per axis.
    """
    shape = axis_coeffs[0].shape
    size = int(np.prod(shape))
    index = np.arange(size).reshape(shape)
    rows, cols, vals = [], [], []
    faces = []
    for k, coeff in enumerate(axis_coeffs):
        af = _harmonic_faces(coeff, k)
        faces.append(af)
        t = (af * trans_scale).ravel()
        c = index.ravel()
        nb = np.roll(index, -1, axis=k).ravel()
        rows += [c, nb, c, nb]
        cols += [c, nb, nb, c]
        vals += [t, t, -t, -t]
    K = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(size, size)
    ).tocsr()
    return K, faces


def _axis_coefficients(samples: np.ndarray, shape: tuple[int, ...]) -> list[np.ndarray]:
    """Split ``(m, d, d)`` samples into per-axis diagonal coefficients."""
    d = samples.shape[1]
    diag = np.einsum("mkk->mk", samples)
    off = samples - diag[:, :, None] * np.eye(d)[None]
    if np.any(np.abs(off) > 1e-14 * np.max(np.abs(diag))):
        raise UnsupportedError("cell problems accept isotropic or diagonal coefficients only")
    if not np.all(diag > 0) or not np.all(np.isfinite(diag)):
        bad = diag[~(diag > 0)]
        raise EllipticityError(f"non-elliptic coefficient sample {bad[0] if bad.size else 'nan'}")
    return [diag[:, k].reshape(shape) for k in range(d)]


def _solve_correctors(axis_coeffs: list[np.ndarray], mesh: UnitCellMesh, tol: float,
                      trans_scale: float, rhs_scale: float, label: str):
    """Solve for every direction; returns (w list, faces, residual, energies)."""
    K, faces = _periodic_operator(axis_coeffs, trans_scale)
    K_red = K[1:, 1:]
    cap = iteration_cap(mesh.size)
    w_all, energies = [], []
    worst = 0.0
    for j in range(mesh.d):
        b = (rhs_scale * (faces[j] - np.roll(faces[j], 1, axis=j))).ravel()
        w = np.zeros(mesh.size)
        if np.any(b) and mesh.d == 1:
            # constant flux A: w' = A / a_f - 1 on every face, solved exactly
            af = faces[0]
            flux = 1.0 / np.mean(1.0 / af)
            steps = (rhs_scale / trans_scale) * (flux / af - 1.0)
            w[1:] = np.cumsum(steps[:-1])
            worst = max(worst, backward_error(K_red, w[1:], b[1:]))
        elif np.any(b):
            w_red, residual = cg_solve(K_red.tocsr(), b[1:], tol, maxiter=cap, label=f"{label} e_{j}")
            w[1:] = w_red
            worst = max(worst, residual)
        w = w - w.mean()
        energies.append((float(w @ (K @ w)), float(b @ w)))
        w_all.append(w.reshape(mesh.shape))
    return w_all, faces, worst, energies


def _face_gradients(w_all: list[np.ndarray], h: float) -> list[list[np.ndarray]]:
    return [[(np.roll(w, -1, axis=k) - w) / h for k in range(w.ndim)] for w in w_all]


def _flux_tensor(faces: list[np.ndarray], face_grad: list[list[np.ndarray]]) -> np.ndarray:
    """A_ij = mean over faces normal to i of a_f (D_i w_j + delta_ij)."""
    d = len(faces)
    A = np.empty((d, d))
    for i in range(d):
        for j in range(d):
            flux = faces[i] * (face_grad[j][i] + (1.0 if i == j else 0.0))
            A[i, j] = float(flux.mean())
    return A


def _sample_means(axis_coeffs: list[np.ndarray]) -> tuple[float | None, float | None]:
    if all(np.array_equal(axis_coeffs[0], c) for c in axis_coeffs[1:]):
        v = axis_coeffs[0]
        return float(1.0 / np.mean(1.0 / v)), float(np.mean(v))
    return None, None


# ---------------------------------------------------------------------------
# Operations
# ---------------------------------------------------------------------------

def solve_cell_1d(profile, quad_n: int | None = None) -> AveragedTensor:
    """Closed-form 1D cell problem: A is the harmonic mean of a over the window.

    ``profile`` is either an array of samples or a callable on [0, 1)
    sampled at ``quad_n`` midpoints.  The corrector slope w' = A/a - 1 is
    returned on the tensor.
    """
    if callable(profile):
        if quad_n is None:
            quad_n = setting("cell", "quad_n", 4096)
        if quad_n < 2:
            raise ParameterError(f"quad_n must be at least 2, got {quad_n}")
        t = (np.arange(quad_n) + 0.5) / quad_n
        samples = np.asarray(profile(t), dtype=float).ravel()
    else:
        samples = np.asarray(profile, dtype=float).ravel()
        if samples.size < 2:
            raise ParameterError("need at least 2 samples")
    if not np.all(samples > 0):
        raise EllipticityError(f"non-positive coefficient sample {samples[~(samples > 0)][0]}")
    A = 1.0 / np.mean(1.0 / samples)
    return AveragedTensor(
        np.array([[A]]), None, HARMONIC_1D,
        reuss=float(A), voigt=float(np.mean(samples)),
        corrector_slope=A / samples - 1.0,
    )


def solve_cell(ext: TwoScaleCoefficient, x, mesh: UnitCellMesh | None = None,
               tol: float | None = None) -> CellSolution:
    """Solve the d periodic cell problems for a(x, .)."""
    tol = default_tol() if tol is None else tol
    if not tol > 0:
        raise ParameterError(f"tol must be positive, got {tol}")
    mesh = mesh or UnitCellMesh(d=ext.d)
    if mesh.d != ext.d:
        raise ConsistencyError(f"mesh dimension {mesh.d} != extension dimension {ext.d}")
    p = as_point(x, ext.d)
    samples = ext.matrix_profile(p, mesh.midpoints())
    coeffs = _axis_coefficients(samples, mesh.shape)
    h = mesh.h
    w, faces, residual, energy = _solve_correctors(
        coeffs, mesh, tol,
        trans_scale=h ** (mesh.d - 2), rhs_scale=h ** (mesh.d - 1),
        label=f"cell x={p.tolist()}",
    )
    logger.debug("Cell problem at x=%s solved, residual %.2e", p.tolist(), residual)
    return CellSolution(w, _face_gradients(w, h), p, mesh, residual, energy)


def averaged_tensor(cellsol: CellSolution, ext: TwoScaleCoefficient, x) -> AveragedTensor:
    """Y-form tensor from a solved cell problem."""
    p = as_point(x, ext.d)
    if cellsol.mesh.d != ext.d:
        raise ConsistencyError("cell solution dimension does not match the extension")
    if not np.array_equal(cellsol.point_x, p):
        raise ConsistencyError(f"cell solution was computed at {cellsol.point_x.tolist()}, not {p.tolist()}")
    if any(wj.shape != cellsol.mesh.shape for wj in cellsol.w):
        raise ConsistencyError("corrector arrays do not match the cell mesh")
    samples = ext.matrix_profile(p, cellsol.mesh.midpoints())
    coeffs = _axis_coefficients(samples, cellsol.mesh.shape)
    faces = [_harmonic_faces(c, k) for k, c in enumerate(coeffs)]
    A = _flux_tensor(faces, cellsol.face_grad)
    reuss, voigt = _sample_means(coeffs)
    return AveragedTensor(A, p, Y_FORM, reuss=reuss, voigt=voigt)


def cell_tensor(ext: TwoScaleCoefficient, x, mesh: UnitCellMesh | None = None,
                tol: float | None = None) -> AveragedTensor:
    """solve_cell followed by averaged_tensor."""
    sol = solve_cell(ext, x, mesh, tol)
    return averaged_tensor(sol, ext, x)


def cell_energy(cellsol: CellSolution) -> list[tuple[float, float]]:
    """(B(w_j, w_j), L_j(w_j)) per direction."""
    return list(cellsol.energy)


def window_points(window: DomainBox, mesh: UnitCellMesh, eps_bar: float) -> np.ndarray:
    """Cell centres of the eps_bar-periodic torus on ``window``.

    The torus grid is anchored at the lattice eps_bar*(k + 1/2)/n (mod eps_bar)
    and listed in unit-cell order, so cell k sits at the micro point the
    sliding-window extension assigns to y_k.
    """
    y = mesh.midpoints()
    start = window.lower
    t = np.mod(y - start / eps_bar, 1.0)
    return start + eps_bar * t


def averaged_tensor_from_window(field: MicroCoefficient, x, eps_bar: float,
                                mesh: UnitCellMesh | None = None,
                                tol: float | None = None,
                                align: str = "lattice") -> AveragedTensor:
    """W-form: solve the eps_bar-periodic problem on W(x) and average over it.

    ``align="lattice"`` places the torus cells where the sliding-window
    extension puts the unit-cell mesh, so this route reproduces the Y-form
    system exactly.  ``align="window"`` uses the cells of W(x) itself, which
    makes the discrete tensor depend smoothly on x.

    B(w, phi) = int_W grad(phi)^T a_M grad(w),  L_j(phi) = -(1/eps_bar) int_W grad(phi)^T a_M e_j,
    A_ij = eps_bar^-d int_W e_i^T a_M (eps_bar grad(w_j) + e_j).
    """
    tol = default_tol() if tol is None else tol
    if not eps_bar > 0:
        raise ParameterError(f"eps_bar must be positive, got {eps_bar}")
    mesh = mesh or UnitCellMesh(d=field.d)
    if mesh.d != field.d:
        raise ConsistencyError(f"mesh dimension {mesh.d} != field dimension {field.d}")
    p = as_point(x, field.d)
    window = DomainBox(p - 0.5 * eps_bar, p + 0.5 * eps_bar)
    if not field.omega_tilde.contains_box(window, slack=1e-12):
        raise DomainError(f"window {window!r} escapes omega_tilde {field.omega_tilde!r}")

    if align == "lattice":
        z = window_points(window, mesh, eps_bar)
    elif align == "window":
        z = window.midpoints(mesh.n)
    else:
        raise ParameterError(f"align must be 'lattice' or 'window', got {align!r}")
    z = field.omega_tilde.clamp(z)
    samples = field.matrix_at(z, check=False)
    coeffs = _axis_coefficients(samples, mesh.shape)
    H = eps_bar * mesh.h
    w, faces, residual, _ = _solve_correctors(
        coeffs, mesh, tol,
        trans_scale=H ** (mesh.d - 2), rhs_scale=H ** (mesh.d - 1) / eps_bar,
        label=f"window x={p.tolist()}",
    )
    grads = _face_gradients(w, H)
    d = mesh.d
    A = np.empty((d, d))
    for i in range(d):
        for j in range(d):
            flux = faces[i] * (eps_bar * grads[j][i] + (1.0 if i == j else 0.0))
            A[i, j] = float(np.sum(flux) * H ** d) / eps_bar ** d
    reuss, voigt = _sample_means(coeffs)
    logger.debug("Window problem at x=%s solved, residual %.2e", p.tolist(), residual)
    return AveragedTensor(A, p, W_FORM, reuss=reuss, voigt=voigt)


def window_means(field: MicroCoefficient, window: DomainBox, quad_n: int | None = None) -> dict:
    """Harmonic, geometric and arithmetic means of a scalar field over ``window``."""
    if not field.is_scalar:
        raise UnsupportedError("window means need a scalar isotropic field")
    if quad_n is None:
        quad_n = setting("cell", "quad_n", 4096) if field.d == 1 else setting("cell", "mesh_n", 128)
    if quad_n < 1:
        raise ParameterError(f"quad_n must be positive, got {quad_n}")
    if not field.omega_tilde.contains_box(window, slack=1e-12):
        raise DomainError(f"window {window!r} escapes omega_tilde {field.omega_tilde!r}")
    v = field.scalar_at(field.omega_tilde.clamp(window.midpoints(quad_n)), check=False)
    if not np.all(v > 0):
        raise EllipticityError("non-positive coefficient sample in window")
    return {
        "harmonic": float(1.0 / np.mean(1.0 / v)),
        "geometric": float(np.exp(np.mean(np.log(v)))),
        "arithmetic": float(np.mean(v)),
    }


def voigt_reuss(field: MicroCoefficient, window: DomainBox,
                quad_n: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """(harmonic-mean * I, arithmetic-mean * I) of a scalar field over ``window``."""
    means = window_means(field, window, quad_n)
    eye = np.eye(field.d)
    return means["harmonic"] * eye, means["arithmetic"] * eye
