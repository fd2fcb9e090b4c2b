"""Two-scale extensions a(x, y) of a micro coefficient a_M.

Three constructions are supported:

* ``trivial``     a(x, y) = a_M(x), frozen in y.
* ``continuous``  a(x, .) periodises the sliding window W(x) of side eps_bar
                  centred at x.
* ``discrete``    a(x, .) periodises a fixed window W_j for every x in the
                  partition cell Omega_j.

Every kind satisfies a(x, x/eps_bar) = a_M(x).  All memberships (windows,
partition cells, REV grid cubes) are half-open ``[lo, hi)``; micro points
that round just outside Omega-tilde are clamped back into it.
"""

from __future__ import annotations

import itertools
import math
from typing import Sequence

import numpy as np
from scipy.stats import qmc

from homog.errors import ConsistencyError, DomainError, ParameterError
from homog.field import DomainBox, MicroCoefficient, as_point, as_points
from homog.log import logger

TRIVIAL = "trivial"
CONTINUOUS = "continuous"
DISCRETE = "discrete"
KINDS = (TRIVIAL, CONTINUOUS, DISCRETE)

# Relative slack for side-length and containment checks on float boxes
_SIDE_RTOL = 1e-9


def _canonical_kind(kind: str) -> str:
    k = str(kind).strip().lower()
    if k not in KINDS:
        raise ParameterError(f"unknown extension kind '{kind}' (choose from {', '.join(KINDS)})")
    return k


# ---------------------------------------------------------------------------
# Partition
# ---------------------------------------------------------------------------

class Partition:
    """Disjoint half-open boxes Omega_j covering Omega, each inside an eps_bar window W_j.

    ``breaks`` holds per-axis breakpoints when the partition is a tensor
    grid; lookup then uses ``searchsorted`` instead of scanning every cell.
    """

    def __init__(self, cells: Sequence[DomainBox], windows: Sequence[DomainBox],
                 breaks: Sequence[np.ndarray] | None = None) -> None:
        if not cells or len(cells) != len(windows):
            raise ParameterError("partition needs one window per cell")
        self.cells = list(cells)
        self.windows = list(windows)
        self.breaks = [np.asarray(b, dtype=float) for b in breaks] if breaks is not None else None
        self._lower = np.stack([c.lower for c in self.cells])
        self._upper = np.stack([c.upper for c in self.cells])

    @property
    def n(self) -> int:
        return len(self.cells)

    @property
    def centers(self) -> np.ndarray:
        """Window centres x-hat^j, shape ``(N, d)``."""
        return np.stack([w.center for w in self.windows])

    @classmethod
    def uniform(cls, omega: DomainBox, omega_tilde: DomainBox, eps_bar: float) -> Partition:
        """Boxes of side eps_bar aligned to Omega's lower corner.

        The last box per axis is clipped to Omega; when its window would leave
        Omega-tilde it is shifted inward.
        """
        breaks = []
        for k in range(omega.d):
            count = max(1, int(math.ceil(omega.sides[k] / eps_bar - _SIDE_RTOL)))
            b = omega.lower[k] + eps_bar * np.arange(count + 1, dtype=float)
            b[-1] = omega.upper[k]
            breaks.append(b)

        cells: list[DomainBox] = []
        windows: list[DomainBox] = []
        for idx in itertools.product(*(range(len(b) - 1) for b in breaks)):
            lo = np.array([breaks[k][i] for k, i in enumerate(idx)])
            hi = np.array([breaks[k][i + 1] for k, i in enumerate(idx)])
            w_lo = lo.copy()
            w_hi = lo + eps_bar
            over = w_hi > omega_tilde.upper
            w_hi[over] = omega_tilde.upper[over]
            w_lo[over] = w_hi[over] - eps_bar
            cells.append(DomainBox(lo, hi))
            windows.append(DomainBox(w_lo, w_hi))
        return cls(cells, windows, breaks=breaks)

    def locate(self, points: np.ndarray, omega: DomainBox) -> np.ndarray:
        """Index j of the cell owning each point (points on Omega's upper face go to the last cell)."""
        if self.breaks is not None:
            strides = np.cumprod([1] + [len(b) - 1 for b in self.breaks[:0:-1]])[::-1]
            flat = np.zeros(len(points), dtype=np.int64)
            for k, b in enumerate(self.breaks):
                i = np.searchsorted(b, points[:, k], side="right") - 1
                i = np.clip(i, 0, len(b) - 2)
                flat += i * strides[k]
            return flat

        owner = np.full(len(points), -1, dtype=np.int64)
        for j in range(self.n):
            lo, hi = self._lower[j], self._upper[j]
            upper_ok = (points < hi) | ((hi >= omega.upper) & (points <= hi))
            inside = np.all((points >= lo) & upper_ok, axis=1) & (owner < 0)
            owner[inside] = j
        if np.any(owner < 0):
            bad = points[np.argmax(owner < 0)]
            raise DomainError(f"point {bad.tolist()} is not covered by the partition")
        return owner

    def validate(self, omega: DomainBox, omega_tilde: DomainBox, eps_bar: float) -> None:
        """Check windows, containment, disjointness and coverage."""
        tol = _SIDE_RTOL * max(1.0, eps_bar)
        total = 0.0
        for j, (cell, window) in enumerate(zip(self.cells, self.windows)):
            if cell.d != omega.d or window.d != omega.d:
                raise ParameterError(f"partition cell {j} has the wrong dimension")
            if np.any(np.abs(window.sides - eps_bar) > tol):
                raise ParameterError(
                    f"window {j} has side {window.sides.tolist()}, expected eps_bar={eps_bar}"
                )
            if not window.contains_box(cell, slack=tol):
                raise ParameterError(f"partition cell {j} is not inside its window")
            if not omega_tilde.contains_box(window, slack=tol):
                raise DomainError(f"window {j} {window!r} leaves omega_tilde {omega_tilde!r}")
            if not omega.contains_box(cell, slack=tol):
                raise ParameterError(f"partition cell {j} leaves omega")
            total += cell.volume

        overlap_lo = np.maximum(self._lower[:, None, :], self._lower[None, :, :])
        overlap_hi = np.minimum(self._upper[:, None, :], self._upper[None, :, :])
        overlap = np.prod(np.clip(overlap_hi - overlap_lo, 0.0, None), axis=2)
        np.fill_diagonal(overlap, 0.0)
        if np.any(overlap > tol * omega.volume):
            i, j = np.argwhere(overlap > tol * omega.volume)[0]
            raise ParameterError(f"partition cells {i} and {j} overlap")
        if abs(total - omega.volume) > 1e-9 * omega.volume:
            raise ParameterError(f"partition covers volume {total}, omega has {omega.volume}")


# ---------------------------------------------------------------------------
# REV grid
# ---------------------------------------------------------------------------

class RevGrid:
    """Cubes on which a(x, x/eps) is a rescaled copy of a_M.

    Continuous: cubes of side delta = eps*eps_bar/|eps_bar - eps| centred on
    the lattice delta*Z^d.  Discrete: inside Omega_j, cubes of side eps
    centred at x-hat^j*eps/eps_bar + I*eps.
    """

    def __init__(self, kind: str, eps: float, eps_bar: float) -> None:
        self.kind = kind
        self.eps = float(eps)
        self.eps_bar = float(eps_bar)
        if kind == CONTINUOUS:
            self.delta = self.eps * self.eps_bar / abs(self.eps_bar - self.eps)
        else:
            self.delta = self.eps

    @staticmethod
    def _half_open_index(x: np.ndarray, origin: np.ndarray, side: float) -> np.ndarray:
        """Multi-index I with x in [origin + I*side - side/2, origin + I*side + side/2)."""
        idx = np.floor((x - origin) / side + 0.5)
        center = origin + idx * side
        idx = np.where(x < center - 0.5 * side, idx - 1, idx)
        center = origin + idx * side
        idx = np.where(x >= center + 0.5 * side, idx + 1, idx)
        return idx

    def centers(self, x: np.ndarray, x_hat: np.ndarray | None = None) -> np.ndarray:
        """Centre of the cube containing each point of ``x``."""
        if self.kind == CONTINUOUS:
            origin = np.zeros_like(x)
        else:
            origin = x_hat * (self.eps / self.eps_bar)
        idx = self._half_open_index(x, origin, self.delta)
        return origin + idx * self.delta


# ---------------------------------------------------------------------------
# Extension
# ---------------------------------------------------------------------------

class TwoScaleCoefficient:
    """A two-scale extension a(x, y), Y-periodic in y. Build with :func:`build`."""

    def __init__(self, kind: str, field: MicroCoefficient, eps_bar: float,
                 partition: Partition | None = None) -> None:
        self.kind = kind
        self.field = field
        self.eps_bar = float(eps_bar)
        self.partition = partition
        self._window_lower = (
            np.stack([w.lower for w in partition.windows]) if partition is not None else None
        )

    @property
    def d(self) -> int:
        return self.field.d

    @property
    def omega(self) -> DomainBox:
        return self.field.omega

    # -- micro points ------------------------------------------------------

    def _xy_points(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        """Micro point z with a(x, y) = a_M(z)."""
        if self.kind == TRIVIAL:
            return x
        y_red = np.mod(y, 1.0)
        if self.kind == CONTINUOUS:
            start = x - 0.5 * self.eps_bar
        else:
            start = self._window_lower[self.partition.locate(x, self.omega)]
        t = np.mod(y_red - start / self.eps_bar, 1.0)
        return start + self.eps_bar * t

    def _eps_points(self, x: np.ndarray, eps: float) -> np.ndarray:
        """Micro point z with a(x, x/eps) = a_M(z)."""
        if self.kind == TRIVIAL or eps == self.eps_bar:
            return x
        scale = self.eps_bar / eps
        if self.kind == CONTINUOUS:
            grid = RevGrid(CONTINUOUS, eps, self.eps_bar)
            centers = grid.centers(x)
            return centers + scale * (x - centers)
        j = self.partition.locate(x, self.omega)
        x_hat = self.partition.centers[j]
        centers = RevGrid(DISCRETE, eps, self.eps_bar).centers(x, x_hat)
        return x_hat + scale * (x - centers)

    def _check_x(self, x) -> np.ndarray:
        pts = as_points(x, self.d)
        self.omega.check(pts, "omega")
        return pts

    # -- vectorised evaluation ----------------------------------------------

    def scalar_xy(self, x, y) -> np.ndarray:
        xs = self._check_x(x)
        ys = np.broadcast_to(as_points(y, self.d), xs.shape)
        return self.field.clamped_scalar_at(self._xy_points(xs, ys))

    def matrix_xy(self, x, y) -> np.ndarray:
        xs = self._check_x(x)
        ys = np.broadcast_to(as_points(y, self.d), xs.shape)
        return self.field.clamped_matrix_at(self._xy_points(xs, ys))

    def scalar_eps(self, x, eps: float) -> np.ndarray:
        _check_eps(eps)
        xs = self._check_x(x)
        if eps == self.eps_bar:
            return self.field.scalar_at(xs)
        return self.field.clamped_scalar_at(self._eps_points(xs, eps))

    def matrix_eps(self, x, eps: float) -> np.ndarray:
        _check_eps(eps)
        xs = self._check_x(x)
        if eps == self.eps_bar:
            return self.field.matrix_at(xs)
        return self.field.clamped_matrix_at(self._eps_points(xs, eps))

    def profile(self, x, y_points: np.ndarray) -> np.ndarray:
        """Scalar samples of a(x, .) at many y for one macroscopic point x."""
        p = as_point(x, self.d).reshape(1, self.d)
        xs = np.repeat(p, len(y_points), axis=0)
        return self.scalar_xy(xs, y_points)

    def matrix_profile(self, x, y_points: np.ndarray) -> np.ndarray:
        p = as_point(x, self.d).reshape(1, self.d)
        xs = np.repeat(p, len(y_points), axis=0)
        return self.matrix_xy(xs, y_points)

    def window_index(self, x) -> int | None:
        if self.partition is None:
            return None
        return int(self.partition.locate(self._check_x(x), self.omega)[0])

    def __repr__(self) -> str:
        n = self.partition.n if self.partition is not None else 0
        return f"TwoScaleCoefficient({self.kind!r}, field={self.field.name!r}, eps_bar={self.eps_bar}, cells={n})"


def _check_eps(eps: float) -> None:
    if not eps > 0 or not math.isfinite(eps):
        raise ParameterError(f"eps must be positive, got {eps}")


def build(kind: str, field: MicroCoefficient, eps_bar: float,
          partition: Partition | None = None) -> TwoScaleCoefficient:
    """Construct a Trivial, Continuous or Discrete two-scale extension."""
    kind = _canonical_kind(kind)
    if not eps_bar > 0 or not math.isfinite(eps_bar):
        raise ParameterError(f"eps_bar must be positive, got {eps_bar}")
    min_side = float(np.min(field.omega.sides))
    if not eps_bar < min_side:
        raise ParameterError(f"eps_bar={eps_bar} must be smaller than the shortest side of omega ({min_side})")

    if kind == CONTINUOUS:
        if field.margin < 0.5 * eps_bar * (1.0 - _SIDE_RTOL):
            raise DomainError(
                f"omega_tilde margin {field.margin} is below eps_bar/2 = {eps_bar / 2}; extend the field first"
            )
    elif kind == DISCRETE:
        if partition is None:
            partition = Partition.uniform(field.omega, field.omega_tilde, eps_bar)
            logger.debug("Auto-built uniform partition with %d cells", partition.n)
        partition.validate(field.omega, field.omega_tilde, eps_bar)
    if kind != DISCRETE and partition is not None:
        logger.warning("Partition ignored for %s extension", kind)
        partition = None
    return TwoScaleCoefficient(kind, field, eps_bar, partition)


# ---------------------------------------------------------------------------
# Single-point API
# ---------------------------------------------------------------------------

def eval_xy(ext: TwoScaleCoefficient, x, y) -> np.ndarray:
    """a(x, y) as a ``d x d`` matrix."""
    return ext.matrix_xy(as_point(x, ext.d).reshape(1, -1), as_point(y, ext.d).reshape(1, -1))[0]


def eval_eps(ext: TwoScaleCoefficient, x, eps: float) -> np.ndarray:
    """a(x, x/eps) from the closed-form REV-grid representation."""
    return ext.matrix_eps(as_point(x, ext.d).reshape(1, -1), eps)[0]


def rev_grid(ext: TwoScaleCoefficient, eps: float) -> RevGrid:
    _check_eps(eps)
    if ext.kind == TRIVIAL:
        raise ParameterError("the trivial extension has no REV grid")
    if ext.kind == CONTINUOUS and eps == ext.eps_bar:
        raise ParameterError("the REV grid degenerates at eps = eps_bar")
    return RevGrid(ext.kind, eps, ext.eps_bar)


def rev_window(ext: TwoScaleCoefficient, x) -> DomainBox:
    """The eps_bar window whose periodisation gives a(x, .)."""
    p = as_point(x, ext.d)
    ext.omega.check(p.reshape(1, -1), "omega")
    if ext.kind == DISCRETE:
        return ext.partition.windows[ext.window_index(p)]
    half = 0.5 * ext.eps_bar
    return DomainBox(p - half, p + half)


def verify_identity(ext: TwoScaleCoefficient, n_points: int = 10000, seed: int = 0) -> float:
    """Max deviation of a(x, x/eps_bar) from a_M(x) over quasi-random x in Omega.

    The returned value comes from the closed-form evaluation at eps = eps_bar.
    The construction a(x, y) is evaluated at y = x/eps_bar on the same points;
    reducing y mod 1 may cost a few ulps, anything beyond rounding raises
    ConsistencyError.
    """
    if n_points < 1:
        raise ParameterError(f"n_points must be at least 1, got {n_points}")
    sampler = qmc.Halton(d=ext.d, scramble=True, seed=seed)
    x = qmc.scale(sampler.random(n_points), ext.omega.lower, ext.omega.upper)
    want = ext.field.matrix_at(x)
    drift = float(np.max(np.abs(ext.matrix_xy(x, x / ext.eps_bar) - want)))
    if drift > 1e-12 * max(1.0, ext.field.beta):
        raise ConsistencyError(f"a(x, x/eps_bar) from the {ext.kind} construction differs from a_M(x) by {drift:.3e}")
    return float(np.max(np.abs(ext.matrix_eps(x, ext.eps_bar) - want)))
