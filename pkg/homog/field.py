"""Micro-scale coefficient fields a_M.

A MicroCoefficient is a symmetric positive definite matrix field known on an
extended box Omega-tilde that contains the physical domain Omega.  Fields
are immutable once built and every evaluator is vectorised: it takes an
``(m, d)`` array of points and returns ``(m,)`` scalars (isotropic fields)
or ``(m, d, d)`` matrices.
"""

from __future__ import annotations

import math
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.ndimage import uniform_filter
from scipy.stats import qmc

from homog.config.loader import setting
from homog.errors import (
    DomainError,
    EllipticityError,
    ParameterError,
    ParseError,
    UnsupportedError,
)
from homog.log import logger

ScalarFn = Callable[[np.ndarray], np.ndarray]
MatrixFn = Callable[[np.ndarray], np.ndarray]


def as_point(z, d: int) -> np.ndarray:
    """Coerce a scalar or sequence into a length-``d`` float vector."""
    p = np.atleast_1d(np.asarray(z, dtype=float)).ravel()
    if p.size != d:
        raise DomainError(f"expected a point in R^{d}, got {p.size} coordinate(s)")
    return p


def as_points(z, d: int) -> np.ndarray:
    """Coerce input into an ``(m, d)`` array of points."""
    arr = np.asarray(z, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(-1, 1) if d == 1 else arr.reshape(1, -1)
    if arr.shape[1] != d:
        raise DomainError(f"expected points in R^{d}, got shape {arr.shape}")
    return arr


# ---------------------------------------------------------------------------
# Boxes
# ---------------------------------------------------------------------------

class DomainBox:
    """Axis-aligned box ``[lower, upper]`` in R^d."""

    __slots__ = ("lower", "upper")

    def __init__(self, lower, upper) -> None:
        lo = np.atleast_1d(np.asarray(lower, dtype=float)).copy()
        hi = np.atleast_1d(np.asarray(upper, dtype=float)).copy()
        if lo.shape != hi.shape or lo.ndim != 1 or lo.size == 0:
            raise ParameterError("box corners must be points of the same dimension")
        if not np.all(np.isfinite(lo)) or not np.all(np.isfinite(hi)):
            raise ParameterError("box corners must be finite")
        if np.any(lo >= hi):
            raise ParameterError(f"box lower {lo.tolist()} must be below upper {hi.tolist()} on every axis")
        lo.setflags(write=False)
        hi.setflags(write=False)
        self.lower = lo
        self.upper = hi

    @classmethod
    def unit(cls, d: int = 1) -> DomainBox:
        return cls(np.zeros(d), np.ones(d))

    @property
    def d(self) -> int:
        return int(self.lower.size)

    @property
    def sides(self) -> np.ndarray:
        return self.upper - self.lower

    @property
    def volume(self) -> float:
        return float(np.prod(self.sides))

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lower + self.upper)

    def contains(self, z, closed: bool = True) -> bool:
        p = as_point(z, self.d)
        if closed:
            return bool(np.all(p >= self.lower) and np.all(p <= self.upper))
        return bool(np.all(p >= self.lower) and np.all(p < self.upper))

    def contains_box(self, other: DomainBox, slack: float = 1e-12) -> bool:
        return bool(
            np.all(other.lower >= self.lower - slack) and np.all(other.upper <= self.upper + slack)
        )

    def expand(self, margin: float) -> DomainBox:
        return DomainBox(self.lower - margin, self.upper + margin)

    def clamp(self, points: np.ndarray) -> np.ndarray:
        return np.clip(points, self.lower, self.upper)

    def check(self, points: np.ndarray, label: str = "domain") -> None:
        """Raise DomainError naming the first coordinate outside the closed box."""
        bad = (points < self.lower) | (points > self.upper)
        if np.any(bad):
            row, axis = np.argwhere(bad)[0]
            value = points[row, axis]
            raise DomainError(
                f"point {points[row].tolist()} outside {label}: coordinate {axis} = {value!r} "
                f"not in [{self.lower[axis]!r}, {self.upper[axis]!r}]"
            )

    def midpoints(self, n: int | Sequence[int]) -> np.ndarray:
        """Cell midpoints of a uniform ``n``-per-axis grid, as ``(prod n, d)``."""
        counts = [int(n)] * self.d if np.isscalar(n) else [int(k) for k in n]
        axes = [
            self.lower[k] + (np.arange(counts[k]) + 0.5) * (self.sides[k] / counts[k])
            for k in range(self.d)
        ]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, DomainBox):
            return NotImplemented
        return bool(np.array_equal(self.lower, other.lower) and np.array_equal(self.upper, other.upper))

    def __hash__(self) -> int:
        return hash((tuple(self.lower), tuple(self.upper)))

    def __repr__(self) -> str:
        return f"DomainBox({self.lower.tolist()}, {self.upper.tolist()})"

    def to_dict(self) -> dict:
        return {"lower": self.lower.tolist(), "upper": self.upper.tolist()}


# ---------------------------------------------------------------------------
# Micro coefficient
# ---------------------------------------------------------------------------

class MicroCoefficient:
    """The given oscillatory coefficient a_M on Omega-tilde.

    Exactly one of ``scalar_fn`` (isotropic a = s(z) I) or ``matrix_fn``
    must be supplied.  ``alpha`` and ``beta`` are the ellipticity and
    boundedness constants.
    """

    def __init__(
        self,
        omega: DomainBox,
        omega_tilde: DomainBox,
        alpha: float,
        beta: float,
        scalar_fn: ScalarFn | None = None,
        matrix_fn: MatrixFn | None = None,
        name: str = "field",
    ) -> None:
        if (scalar_fn is None) == (matrix_fn is None):
            raise ParameterError("exactly one of scalar_fn or matrix_fn is required")
        if omega.d != omega_tilde.d:
            raise ParameterError("omega and omega_tilde must have the same dimension")
        if not omega_tilde.contains_box(omega):
            raise ParameterError("omega_tilde must contain omega")
        if not alpha > 0:
            raise EllipticityError(f"ellipticity bound alpha must be positive, got {alpha}")
        if beta < alpha:
            raise ParameterError(f"bound beta={beta} is below alpha={alpha}")
        self.omega = omega
        self.omega_tilde = omega_tilde
        self.alpha = float(alpha)
        self.beta = float(beta)
        self.name = name
        self._scalar_fn = scalar_fn
        self._matrix_fn = matrix_fn

    @property
    def d(self) -> int:
        return self.omega.d

    @property
    def is_scalar(self) -> bool:
        return self._scalar_fn is not None

    @property
    def margin(self) -> float:
        """Smallest distance between the faces of Omega and Omega-tilde."""
        return float(min(np.min(self.omega.lower - self.omega_tilde.lower),
                         np.min(self.omega_tilde.upper - self.omega.upper)))

    def scalar_at(self, points, check: bool = True) -> np.ndarray:
        """Scalar values s(z) of an isotropic field at ``(m, d)`` points."""
        if self._scalar_fn is None:
            raise UnsupportedError(f"field '{self.name}' is anisotropic; no scalar representation")
        z = as_points(points, self.d)
        if check:
            self.omega_tilde.check(z, "omega_tilde")
        return np.asarray(self._scalar_fn(z), dtype=float).reshape(len(z))

    def matrix_at(self, points, check: bool = True) -> np.ndarray:
        """Matrix values ``(m, d, d)`` at ``(m, d)`` points."""
        z = as_points(points, self.d)
        if check:
            self.omega_tilde.check(z, "omega_tilde")
        if self._scalar_fn is not None:
            s = np.asarray(self._scalar_fn(z), dtype=float).reshape(len(z))
            return s[:, None, None] * np.eye(self.d)[None, :, :]
        return np.asarray(self._matrix_fn(z), dtype=float).reshape(len(z), self.d, self.d)

    def clamped_scalar_at(self, points) -> np.ndarray:
        """Scalar values after clamping points into Omega-tilde."""
        z = self.omega_tilde.clamp(as_points(points, self.d))
        return self.scalar_at(z, check=False)

    def clamped_matrix_at(self, points) -> np.ndarray:
        z = self.omega_tilde.clamp(as_points(points, self.d))
        return self.matrix_at(z, check=False)

    def with_domains(self, omega: DomainBox, omega_tilde: DomainBox, name: str | None = None) -> MicroCoefficient:
        return MicroCoefficient(
            omega, omega_tilde, self.alpha, self.beta,
            scalar_fn=self._scalar_fn, matrix_fn=self._matrix_fn,
            name=name or self.name,
        )

    def __repr__(self) -> str:
        return (f"MicroCoefficient({self.name!r}, d={self.d}, omega={self.omega!r}, "
                f"alpha={self.alpha}, beta={self.beta})")


def eval_micro(field: MicroCoefficient, z) -> np.ndarray:
    """Value a_M(z) as a ``d x d`` matrix; ``z`` must lie in closed Omega-tilde."""
    p = as_point(z, field.d).reshape(1, field.d)
    return field.matrix_at(p)[0]


def extend_domain(field: MicroCoefficient, margin: float) -> MicroCoefficient:
    """Extend a field from Omega to Omega grown by ``margin`` per axis.

    Outside Omega the value at the nearest point of closed Omega is used
    (componentwise clamp).  Bounds are unchanged.
    """
    if not margin > 0:
        raise ParameterError(f"margin must be positive, got {margin}")
    omega = field.omega
    inner_scalar = field._scalar_fn
    inner_matrix = field._matrix_fn

    if inner_scalar is not None:
        def scalar_fn(z: np.ndarray) -> np.ndarray:
            return inner_scalar(omega.clamp(z))
        matrix_fn = None
    else:
        def matrix_fn(z: np.ndarray) -> np.ndarray:
            return inner_matrix(omega.clamp(z))
        scalar_fn = None

    return MicroCoefficient(
        omega, omega.expand(margin), field.alpha, field.beta,
        scalar_fn=scalar_fn, matrix_fn=matrix_fn, name=field.name,
    )


def check_bounds(field: MicroCoefficient, n_points: int | None = None, seed: int = 0,
                 n_directions: int = 10) -> dict:
    """Sample ellipticity, boundedness and symmetry on quasi-random points of Omega-tilde.

    Raises EllipticityError if any sample violates the declared bounds.
    """
    if n_points is None:
        n_points = setting("field", "sample_points", 10000)
    sampler = qmc.Halton(d=field.d, scramble=True, seed=seed)
    z = qmc.scale(sampler.random(n_points), field.omega_tilde.lower, field.omega_tilde.upper)
    mats = field.matrix_at(z)
    asym = float(np.max(np.abs(mats - np.transpose(mats, (0, 2, 1)))))

    rng = np.random.default_rng(seed)
    xi = rng.standard_normal((n_directions, field.d))
    xi /= np.linalg.norm(xi, axis=1, keepdims=True)
    quad = np.einsum("ki,mij,kj->mk", xi, mats, xi)
    image = np.linalg.norm(np.einsum("mij,kj->mki", mats, xi), axis=2)

    result = {
        "points": int(n_points),
        "min_quadratic": float(quad.min()),
        "max_image": float(image.max()),
        "max_asymmetry": asym,
        "alpha": field.alpha,
        "beta": field.beta,
    }
    slack = 1e-12 * max(1.0, field.beta)
    if result["min_quadratic"] < field.alpha - slack:
        raise EllipticityError(
            f"field '{field.name}' violates ellipticity: min xi^T a xi = {result['min_quadratic']} < alpha = {field.alpha}"
        )
    if result["max_image"] > field.beta + slack:
        raise EllipticityError(
            f"field '{field.name}' violates boundedness: max |a xi| = {result['max_image']} > beta = {field.beta}"
        )
    return result


# ---------------------------------------------------------------------------
# Field algebra
# ---------------------------------------------------------------------------

def combine(fields: Sequence[MicroCoefficient], coeffs: Sequence[float]) -> MicroCoefficient:
    """Positive linear combination of scalar fields on identical boxes."""
    if not fields or len(fields) != len(coeffs):
        raise ParameterError("combine needs one coefficient per field")
    if any(not c > 0 for c in coeffs):
        raise ParameterError("combination coefficients must be positive")
    first = fields[0]
    for f in fields[1:]:
        if f.omega != first.omega or f.omega_tilde != first.omega_tilde:
            raise ParameterError("combined fields must share omega and omega_tilde")
    fns = [f._scalar_fn for f in fields]
    if any(fn is None for fn in fns):
        raise UnsupportedError("combine supports scalar fields only")
    weights = [float(c) for c in coeffs]

    def scalar_fn(z: np.ndarray) -> np.ndarray:
        total = np.zeros(len(z))
        for w, fn in zip(weights, fns):
            total = total + w * np.asarray(fn(z), dtype=float)
        return total

    alpha = sum(w * f.alpha for w, f in zip(weights, fields))
    beta = sum(w * f.beta for w, f in zip(weights, fields))
    return MicroCoefficient(first.omega, first.omega_tilde, alpha, beta,
                            scalar_fn=scalar_fn, name="combination")


def power(field: MicroCoefficient, p: float) -> MicroCoefficient:
    """Pointwise power a_M^p of a scalar field (p > 0)."""
    if not p > 0:
        raise ParameterError(f"exponent must be positive, got {p}")
    inner = field._scalar_fn
    if inner is None:
        raise UnsupportedError("power supports scalar fields only")

    def scalar_fn(z: np.ndarray) -> np.ndarray:
        return np.asarray(inner(z), dtype=float) ** p

    return MicroCoefficient(field.omega, field.omega_tilde, field.alpha ** p, field.beta ** p,
                            scalar_fn=scalar_fn, name=f"{field.name}^{p:g}")


# ---------------------------------------------------------------------------
# Synthesis
# ---------------------------------------------------------------------------

KIND_ALIASES = {
    "constant": "constant",
    "layered-1d": "layered-1d",
    "layered": "layered-1d",
    "periodic-sinusoid": "periodic-sinusoid",
    "sinusoid": "periodic-sinusoid",
    "checkerboard-2d": "checkerboard-2d",
    "checkerboard": "checkerboard-2d",
    "laminate-2d": "laminate-2d",
    "laminate": "laminate-2d",
    "seeded-random": "seeded-random",
    "random": "seeded-random",
    "two-regime": "two-regime",
}


class FieldSpec:
    """Recipe for a reproducible synthetic field.

    Common parameters: ``d`` (default 1), ``lower``/``upper`` of Omega
    (default the unit box), ``margin`` of Omega-tilde (default 0.1).
    """

    def __init__(self, kind: str, **params) -> None:
        canonical = KIND_ALIASES.get(str(kind).strip().lower())
        if canonical is None:
            raise ParameterError(f"unknown field kind '{kind}' (choose from {sorted(set(KIND_ALIASES.values()))})")
        self.kind = canonical
        self.params = dict(params)

    def get(self, key: str, default=None):
        return self.params.get(key, default)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, FieldSpec):
            return NotImplemented
        return self.kind == other.kind and self.params == other.params

    def __repr__(self) -> str:
        return f"FieldSpec({self.kind!r}, {self.params!r})"


def _positive(spec: FieldSpec, key: str, default: float) -> float:
    value = float(spec.get(key, default))
    if not value > 0 or not math.isfinite(value):
        raise ParameterError(f"{spec.kind}: {key} must be positive, got {value}")
    return value


def _spec_boxes(spec: FieldSpec) -> tuple[DomainBox, DomainBox]:
    d = int(spec.get("d", 1))
    if d < 1:
        raise ParameterError(f"dimension must be at least 1, got {d}")
    lower = np.broadcast_to(np.asarray(spec.get("lower", 0.0), dtype=float), (d,))
    upper = np.broadcast_to(np.asarray(spec.get("upper", 1.0), dtype=float), (d,))
    omega = DomainBox(lower, upper)
    margin = _positive(spec, "margin", 0.1)
    return omega, omega.expand(margin)


def _parity_index(z: np.ndarray, origin: np.ndarray, width: float) -> np.ndarray:
    return np.floor((z - origin) / width).astype(np.int64)


def synthesize(spec: FieldSpec) -> MicroCoefficient:
    """Build the MicroCoefficient described by ``spec`` with exact bounds."""
    omega, omega_tilde = _spec_boxes(spec)
    d = omega.d
    kind = spec.kind
    origin = omega.lower.copy()

    if kind == "constant":
        c = _positive(spec, "c", 1.0)

        def scalar_fn(z: np.ndarray) -> np.ndarray:
            return np.full(len(z), c)

        alpha = beta = c

    elif kind in ("layered-1d", "periodic-sinusoid"):
        mean = float(spec.get("mean", 2.0))
        amplitude = abs(float(spec.get("amplitude", 1.0)))
        period = _positive(spec, "period", 0.1)
        phase = float(spec.get("phase", 0.0))
        if not mean - amplitude > 0:
            raise ParameterError(f"{kind}: mean - amplitude must be positive (contrast), got {mean - amplitude}")
        axes = 1 if kind == "layered-1d" else d

        def scalar_fn(z: np.ndarray) -> np.ndarray:
            wave = np.ones(len(z))
            for k in range(axes):
                wave = wave * np.sin(2.0 * np.pi * z[:, k] / period + phase)
            return mean + amplitude * wave

        alpha, beta = mean - amplitude, mean + amplitude

    elif kind in ("checkerboard-2d", "laminate-2d"):
        a1 = _positive(spec, "a1", 1.0)
        a2 = _positive(spec, "a2", 4.0)
        if kind == "checkerboard-2d":
            width = _positive(spec, "tile", 0.05)
            axes = list(range(d))
        else:
            width = _positive(spec, "thickness", 0.05)
            axis = int(spec.get("axis", 0))
            if not 0 <= axis < d:
                raise ParameterError(f"laminate axis {axis} out of range for d={d}")
            axes = [axis]

        def scalar_fn(z: np.ndarray) -> np.ndarray:
            idx = _parity_index(z[:, axes], origin[axes], width)
            even = (idx.sum(axis=1) % 2) == 0
            return np.where(even, a1, a2)

        alpha, beta = min(a1, a2), max(a1, a2)

    elif kind == "two-regime":
        mean = float(spec.get("mean", 2.0))
        amplitude = abs(float(spec.get("amplitude", 1.0)))
        period = _positive(spec, "period", 0.1)
        c = _positive(spec, "c", 3.0)
        split = float(spec.get("split", float(omega.center[0])))
        if not mean - amplitude > 0:
            raise ParameterError(f"two-regime: mean - amplitude must be positive, got {mean - amplitude}")

        def scalar_fn(z: np.ndarray) -> np.ndarray:
            wave = mean + amplitude * np.sin(2.0 * np.pi * z[:, 0] / period)
            return np.where(z[:, 0] < split, wave, c)

        alpha, beta = min(mean - amplitude, c), max(mean + amplitude, c)

    elif kind == "seeded-random":
        scalar_fn, alpha, beta = _random_field(spec, omega_tilde)

    else:  # pragma: no cover - guarded by KIND_ALIASES
        raise ParameterError(f"unknown field kind '{kind}'")

    logger.debug("Synthesized %s field d=%d alpha=%g beta=%g", kind, d, alpha, beta)
    return MicroCoefficient(omega, omega_tilde, alpha, beta, scalar_fn=scalar_fn, name=kind)


def _random_field(spec: FieldSpec, box: DomainBox) -> tuple[ScalarFn, float, float]:
    """Log-uniform cell values on a grid at scale eps_bar/8, one box-filter pass."""
    seed = int(spec.get("seed", 0))
    low = _positive(spec, "low", 1.0)
    max_contrast = setting("field", "random_max_contrast", 100.0)
    contrast = _positive(spec, "contrast", 10.0)
    if contrast > max_contrast:
        logger.warning("Random field contrast %g capped at %g", contrast, max_contrast)
        contrast = max_contrast
    eps_bar = _positive(spec, "eps_bar", 0.1)
    cell = _positive(spec, "cell", eps_bar / setting("field", "random_cells_per_eps", 8))

    counts = np.maximum(1, np.ceil(box.sides / cell - 1e-9).astype(np.int64))
    rng = np.random.default_rng(seed)
    exponents = rng.uniform(0.0, 1.0, size=tuple(int(c) for c in counts))
    values = low * contrast ** exponents
    values = uniform_filter(values, size=3, mode="nearest")
    values.setflags(write=False)
    lower = box.lower.copy()
    upper_index = counts - 1

    def scalar_fn(z: np.ndarray) -> np.ndarray:
        idx = np.floor((z - lower) / cell).astype(np.int64)
        idx = np.clip(idx, 0, upper_index)
        return values[tuple(idx.T)]

    return scalar_fn, float(values.min()), float(values.max())


# ---------------------------------------------------------------------------
# Grid files
# ---------------------------------------------------------------------------

def _tokens(path: Path):
    """Yield (line_number, [tokens]) for non-empty, comment-stripped lines."""
    with open(path, "r", encoding="utf-8") as f:
        for number, raw in enumerate(f, start=1):
            text = raw.split("#", 1)[0].strip()
            if text:
                yield number, text.split()


def _number(token: str, line: int, what: str, integer: bool = False):
    try:
        value = int(token) if integer else float(token)
    except ValueError:
        raise ParseError(f"malformed {what} '{token}'", line=line) from None
    if not integer and not math.isfinite(value):
        raise ParseError(f"non-finite {what} '{token}'", line=line)
    return value


def load_grid_field(path: str | Path) -> MicroCoefficient:
    """Read an isotropic piecewise-constant field from a plain-text grid file.

    Format: ``d n1 [n2]`` then ``lower... upper...`` then the cell values
    row-major (last axis fastest).  ``#`` starts a comment.  Cells are
    half-open; the last cell on each axis also owns the upper face.
    """
    path = Path(path)
    try:
        lines = list(_tokens(path))
    except OSError as exc:
        raise ParseError(f"cannot read grid file {path}: {exc}") from exc
    if len(lines) < 2:
        raise ParseError("missing header", line=lines[0][0] if lines else 1)

    head_line, head = lines[0]
    d = _number(head[0], head_line, "dimension", integer=True)
    if d < 1:
        raise ParseError(f"dimension must be positive, got {d}", line=head_line)
    if len(head) != d + 1:
        raise ParseError(f"header declares d={d} but lists {len(head) - 1} cell count(s)", line=head_line)
    counts = [_number(t, head_line, "cell count", integer=True) for t in head[1:]]
    if any(c < 1 for c in counts):
        raise ParseError("cell counts must be positive", line=head_line)

    box_line, box_tokens = lines[1]
    if len(box_tokens) != 2 * d:
        raise ParseError(f"box line needs {2 * d} numbers for d={d}, got {len(box_tokens)}", line=box_line)
    corners = [_number(t, box_line, "box coordinate") for t in box_tokens]
    try:
        omega = DomainBox(corners[:d], corners[d:])
    except ParameterError as exc:
        raise ParseError(str(exc), line=box_line) from None

    expected = int(np.prod(counts))
    values: list[float] = []
    for number, tokens in lines[2:]:
        for t in tokens:
            v = _number(t, number, "value")
            if not v > 0:
                raise ParseError(f"non-elliptic value {t}", line=number)
            values.append(v)
            if len(values) > expected:
                raise ParseError(f"dimension mismatch: more than {expected} values", line=number)
    if len(values) != expected:
        last = lines[-1][0]
        raise ParseError(f"dimension mismatch: expected {expected} values, got {len(values)}", line=last)

    grid = np.asarray(values, dtype=float).reshape(counts)
    grid.setflags(write=False)
    widths = omega.sides / np.asarray(counts, dtype=float)
    lower = omega.lower.copy()
    upper_index = np.asarray(counts, dtype=np.int64) - 1

    def scalar_fn(z: np.ndarray) -> np.ndarray:
        idx = np.floor((z - lower) / widths).astype(np.int64)
        idx = np.clip(idx, 0, upper_index)
        return grid[tuple(idx.T)]

    logger.info("Loaded grid field %s: d=%d cells=%s", path, d, counts)
    return MicroCoefficient(omega, omega, float(grid.min()), float(grid.max()),
                            scalar_fn=scalar_fn, name=path.stem)
