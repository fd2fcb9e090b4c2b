"""Experiment harness: eps-sequence studies and the end-to-end pipeline.

The studies check the two limits the construction rests on:

- the admissible-test-function limit: for a two-scale extension a(x, y),
  int_Omega a(x, x/eps)^p phi(x, x/eps) dx tends to
  int_Omega int_Y a(x, y)^p phi(x, y) dy dx as eps -> 0;
- the homogenization limit: u_eps tends to u_0 in L2 as eps -> 0.

``run_pipeline`` chains field, extension, averaged coefficient, the fine
problem at eps_bar, the upscaled problem and the corrector, and writes
CSV curves plus a gnuplot script.
"""

from __future__ import annotations

import math
from pathlib import Path
from typing import Callable, Iterator

import numpy as np

from homog.cell import UnitCellMesh
from homog.config.loader import setting
from homog.config.pipeline import GRID, PipelineConfig
from homog.errors import HomogError, ParameterError, ResolutionError, StageError, UnsupportedError
from homog.export import StagedOutput, write_csv, write_plot_script
from homog.extension import CONTINUOUS, TwoScaleCoefficient, build
from homog.field import DomainBox, MicroCoefficient, extend_domain, load_grid_field, synthesize
from homog.jobs import run_jobs
from homog.log import logger
from homog.solve import CellProvider, DirichletProblem, Mesh, Solution, corrector, error_norms, make_source, norms, solve_fd
from homog.upscale import AveragedCoefficientField, build_A, mean_field, sample_lattice

STUDY_COLUMNS = ["eps", "value", "reference", "deviation"]


# ---------------------------------------------------------------------------
# Sequences and test functions
# ---------------------------------------------------------------------------

class EpsSequence:
    """eps_n = eps_bar * ratio**n for n = 0 .. count-1."""

    def __init__(self, eps_bar: float, ratio: float | None = None, count: int | None = None) -> None:
        ratio = setting("lab", "ratio", 0.5) if ratio is None else float(ratio)
        count = setting("lab", "count", 7) if count is None else int(count)
        if not eps_bar > 0:
            raise ParameterError(f"eps_bar must be positive, got {eps_bar}")
        if not 0 < ratio < 1:
            raise ParameterError(f"ratio must lie in (0, 1), got {ratio}")
        if count < 1:
            raise ParameterError(f"count must be at least 1, got {count}")
        self.eps_bar = float(eps_bar)
        self.ratio = ratio
        self.count = count

    @property
    def values(self) -> list[float]:
        return [self.eps_bar * self.ratio ** n for n in range(self.count)]

    def __iter__(self) -> Iterator[float]:
        return iter(self.values)

    def __len__(self) -> int:
        return self.count

    def __repr__(self) -> str:
        return f"EpsSequence(eps_bar={self.eps_bar}, ratio={self.ratio}, count={self.count})"


class TestFunction:
    """phi(x, y): a sum of terms c * prod_k x_k^p_k * trig(2 pi m . y).

    ``terms`` holds ``(coef, powers, freqs, trig)`` with ``trig`` either
    ``"cos"`` or ``"sin"``.  Every term is Y-periodic in y.
    """

    __test__ = False

    def __init__(self, terms: list[tuple[float, tuple[int, ...], tuple[int, ...], str]], name: str = "phi") -> None:
        if not terms:
            raise ParameterError("a test function needs at least one term")
        for _, powers, freqs, trig in terms:
            if trig not in ("cos", "sin"):
                raise ParameterError(f"unknown trigonometric factor '{trig}'")
            if len(powers) != len(freqs):
                raise ParameterError("powers and frequencies must have one entry per axis")
        self.terms = terms
        self.name = name

    @property
    def d(self) -> int:
        return len(self.terms[0][1])

    @classmethod
    def one(cls, d: int = 1) -> TestFunction:
        return cls([(1.0, (0,) * d, (0,) * d, "cos")], name="one")

    @classmethod
    def x_cos(cls, d: int = 1) -> TestFunction:
        """phi(x, y) = x_1 cos(2 pi y_1)."""
        powers = (1,) + (0,) * (d - 1)
        freqs = (1,) + (0,) * (d - 1)
        return cls([(1.0, powers, freqs, "cos")], name="x-cos")

    @classmethod
    def named(cls, name: str, d: int = 1) -> TestFunction:
        factories = {"one": cls.one, "x-cos": cls.x_cos}
        if name not in factories:
            raise ParameterError(f"unknown test function '{name}' (choose from {', '.join(factories)})")
        return factories[name](d)

    def __call__(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        total = np.zeros(len(x))
        for coef, powers, freqs, trig in self.terms:
            envelope = np.prod(x ** np.asarray(powers), axis=1)
            phase = 2.0 * np.pi * (y @ np.asarray(freqs, dtype=float))
            total += coef * envelope * (np.cos(phase) if trig == "cos" else np.sin(phase))
        return total

    def __repr__(self) -> str:
        return f"TestFunction({self.name!r})"


class StudyReport:
    """Rows of ``eps, value, reference, deviation`` plus metadata and warnings."""

    def __init__(self, name: str, rows: list[dict] | None = None, metadata: dict | None = None,
                 warnings: list[str] | None = None, columns: list[str] | None = None) -> None:
        self.name = name
        self.rows = list(rows or [])
        self.metadata = dict(metadata or {})
        self.warnings = list(warnings or [])
        self.columns = list(columns or STUDY_COLUMNS)

    def column(self, key: str) -> list:
        return [row[key] for row in self.rows]

    def to_rows(self) -> list[list]:
        return [[row[c] for c in self.columns] for row in self.rows]

    def to_csv(self, path: str | Path) -> Path:
        return write_csv(path, self.columns, self.to_rows())

    def summary(self) -> str:
        lines = [f"{self.name}:"]
        for key, value in self.metadata.items():
            lines.append(f"  {key}: {value}")
        for row in self.rows:
            lines.append("  " + "  ".join(
                f"{c}={row[c]:.6g}" if isinstance(row[c], float) else f"{c}={row[c]}" for c in self.columns
            ))
        for w in self.warnings:
            lines.append(f"  warning: {w}")
        return "\n".join(lines)


# ---------------------------------------------------------------------------
# Quadrature
# ---------------------------------------------------------------------------

def _chunk_points() -> int:
    return setting("lab", "chunk_points", 1 << 20)


def _midpoint_chunks(box: DomainBox, n: int, max_points: int) -> Iterator[np.ndarray]:
    """Midpoints of an n^d grid on ``box``, yielded in blocks of axis-0 slabs."""
    d = box.d
    h = box.sides / n
    axes = [box.lower[k] + (np.arange(n) + 0.5) * h[k] for k in range(d)]
    slab = n ** (d - 1)
    rows = max(1, max_points // slab)
    for start in range(0, n, rows):
        grid = np.meshgrid(axes[0][start:start + rows], *axes[1:], indexing="ij")
        yield np.stack([g.ravel() for g in grid], axis=1)


def rev_spacing(ext: TwoScaleCoefficient, eps: float) -> float:
    """Smallest length scale of a(x, x/eps): min(eps, REV cube side)."""
    if ext.kind == CONTINUOUS and eps != ext.eps_bar:
        return min(eps, eps * ext.eps_bar / abs(ext.eps_bar - eps))
    return eps


def default_atf_quad(d: int) -> int:
    return setting("lab", "atf_quad_1d", 1 << 20) if d == 1 else setting("lab", "atf_quad_2d", 2048)


def _check_quadrature(ext: TwoScaleCoefficient, eps_values: list[float], quad_n: int) -> None:
    cells = setting("lab", "quad_cells_per_eps", 8)
    spacing = float(np.max(ext.omega.sides)) / quad_n
    for eps in eps_values:
        limit = rev_spacing(ext, eps) / cells
        if spacing > limit * (1.0 + 1e-12):
            raise ResolutionError(
                f"quadrature spacing {spacing:g} exceeds {limit:g} (1/{cells} of the REV scale at eps={eps:g}); "
                f"raise quad_n to at least {math.ceil(float(np.max(ext.omega.sides)) / limit)}"
            )


def oscillating_integral(ext: TwoScaleCoefficient, phi: TestFunction, eps: float, p: int = 1,
                         quad_n: int | None = None) -> float:
    """Midpoint rule for int_Omega a(x, x/eps)^p phi(x, x/eps) dx."""
    quad_n = default_atf_quad(ext.d) if quad_n is None else int(quad_n)
    box = ext.omega
    weight = float(np.prod(box.sides / quad_n))
    total = 0.0
    for x in _midpoint_chunks(box, quad_n, _chunk_points()):
        a = ext.scalar_eps(x, eps)
        total += float(np.sum(a ** p * phi(x, x / eps)))
    return total * weight


def two_scale_integral(ext: TwoScaleCoefficient, phi: TestFunction, p: int = 1,
                       ref_n: int | None = None) -> float:
    """Tensor-product midpoint rule for int_Omega int_Y a(x, y)^p phi(x, y) dy dx.

    For discrete extensions the x-rule runs cell by cell over the partition,
    so no x-panel straddles a jump of a(., y).
    """
    if ref_n is None:
        ref_n = setting("lab", "reference_quad_1d", 512) if ext.d == 1 else setting("lab", "reference_quad_2d", 128)
    d = ext.d
    y = DomainBox.unit(d).midpoints(ref_n)
    ny = len(y)
    boxes = ext.partition.cells if ext.partition is not None else [ext.omega]
    total = 0.0
    for box in boxes:
        n = max(1, math.ceil(ref_n * float(np.max(box.sides / ext.omega.sides)) - 1e-9))
        weight = float(np.prod(box.sides / n)) / ny
        part = 0.0
        for x in _midpoint_chunks(box, n, max(1, _chunk_points() // ny)):
            xs = np.repeat(x, ny, axis=0)
            ys = np.tile(y, (len(x), 1))
            a = ext.scalar_xy(xs, ys)
            part += float(np.sum(a ** p * phi(xs, ys)))
        total += part * weight
    return total


# ---------------------------------------------------------------------------
# Studies
# ---------------------------------------------------------------------------

def atf_power_study(ext: TwoScaleCoefficient, phi: TestFunction, seq: EpsSequence, p: int = 1,
                    quad_n: int | None = None) -> StudyReport:
    """Oscillating integrals of a^p phi against their two-scale limit over an eps sequence."""
    if p not in (1, 2):
        raise ParameterError(f"p must be 1 or 2, got {p}")
    if not ext.field.is_scalar:
        raise UnsupportedError("the test-function study needs a scalar coefficient")
    if phi.d != ext.d:
        raise ParameterError(f"test function dimension {phi.d} does not match the field ({ext.d})")
    quad_n = default_atf_quad(ext.d) if quad_n is None else int(quad_n)
    eps_values = seq.values
    _check_quadrature(ext, eps_values, quad_n)

    logger.info("ATF study: %s extension, phi=%s, p=%d, %d eps values, quad_n=%d",
                ext.kind, phi.name, p, len(eps_values), quad_n)
    reference = two_scale_integral(ext, phi, p)
    values = run_jobs(lambda eps: oscillating_integral(ext, phi, eps, p, quad_n), eps_values)
    rows = [
        {"eps": eps, "value": v, "reference": reference, "deviation": abs(v - reference)}
        for eps, v in zip(eps_values, values)
    ]
    metadata = {
        "extension": ext.kind,
        "field": ext.field.name,
        "eps_bar": ext.eps_bar,
        "phi": phi.name,
        "p": p,
        "quad_n": quad_n,
    }
    return StudyReport("atf-study", rows, metadata)


def atf_integral_study(ext: TwoScaleCoefficient, phi: TestFunction, seq: EpsSequence,
                       quad_n: int | None = None) -> StudyReport:
    return atf_power_study(ext, phi, seq, 1, quad_n)


def shared_mesh_n(omega: DomainBox, seq: EpsSequence, mesh_rule=None) -> int:
    """Cells per axis resolving every eps of the sequence.

    ``mesh_rule`` is either cells per eps (int) or a callable eps -> n.
    """
    eps_min = min(seq.values)
    side = float(np.max(omega.sides))
    if mesh_rule is None:
        mesh_rule = setting("solve", "fine_cells_per_eps", 8)
    n = int(mesh_rule(eps_min)) if callable(mesh_rule) else math.ceil(int(mesh_rule) * side / eps_min - 1e-9)
    per_eps = eps_min * n / side
    if per_eps < 8 - 1e-9:
        raise ResolutionError(f"mesh with n={n} gives {per_eps:.3g} cells per eps={eps_min:g}; need at least 8")
    return n


def u_eps_study(ext: TwoScaleCoefficient, A_field: AveragedCoefficientField, f: Callable,
                seq: EpsSequence, mesh_rule=None, tol: float | None = None) -> StudyReport:
    """L2 distance between u_eps and u_0 on one shared fine mesh."""
    if A_field.omega != ext.omega:
        raise ParameterError("A field and extension live on different domains")
    mesh = Mesh(ext.omega, shared_mesh_n(ext.omega, seq, mesh_rule))
    logger.info("u_eps study: %s extension, %d eps values, mesh n=%d", ext.kind, len(seq), mesh.n)

    u0 = solve_fd(DirichletProblem.averaged(A_field, f), mesh, tol)
    reference = norms(u0)["l2"]
    sols = run_jobs(lambda eps: solve_fd(DirichletProblem.fine(ext, eps, f), mesh, tol), seq.values)
    rows = []
    for eps, u in zip(seq.values, sols):
        err = error_norms(u, u0)
        rows.append({
            "eps": eps,
            "value": err["l2"],
            "reference": reference,
            "deviation": err["l2"] / reference if reference > 0 else err["l2"],
            "h1_semi": err["h1_semi"],
        })
    metadata = {"extension": ext.kind, "field": ext.field.name, "eps_bar": ext.eps_bar, "mesh_n": mesh.n}
    return StudyReport("ueps-study", rows, metadata, warnings=A_field.warnings)


# ---------------------------------------------------------------------------
# Pipeline
# ---------------------------------------------------------------------------

def _stage(name: str, fn: Callable, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except StageError:
        raise
    except HomogError as exc:
        raise StageError(name, exc) from exc


def field_from_config(config: PipelineConfig) -> MicroCoefficient:
    """Synthesize the configured field, or load a grid file and give it a margin."""
    if config["field.kind"] == GRID:
        field = load_grid_field(config["field.path"])
        if config["extension"] == CONTINUOUS and field.margin < 0.5 * config["eps_bar"]:
            field = extend_domain(field, config["field.margin"])
        return field
    return synthesize(config.field_spec())


def extension_from_config(config: PipelineConfig, field: MicroCoefficient) -> TwoScaleCoefficient:
    return build(config["extension"], field, config["eps_bar"])


def source_from_config(config: PipelineConfig) -> Callable:
    return make_source(config["source.kind"], amplitude=config["source.amplitude"],
                       frequency=config["source.frequency"], value=config["source.value"])


def sample_grid_from_config(config: PipelineConfig, omega: DomainBox):
    spacing = config["sample.spacing"]
    return sample_lattice(omega, spacing) if spacing is not None else None


def _field_rows(field: MicroCoefficient, mesh: Mesh) -> tuple[list[str], list[list[float]]]:
    nodes = mesh.nodes()
    values = field.scalar_at(nodes) if field.is_scalar else field.matrix_at(nodes)[:, 0, 0]
    header = [f"x{k + 1}" for k in range(mesh.d)] + ["a"]
    return header, [list(p) + [float(v)] for p, v in zip(nodes, values)]


def _error_rows(eps_bar: float, label: str, u: Solution, ref: Solution, ref_norms: dict) -> list[dict]:
    err = error_norms(u, ref)
    return [
        {"quantity": f"{label}-l2", "eps": eps_bar, "value": err["l2"], "reference": ref_norms["l2"],
         "deviation": err["l2"] / ref_norms["l2"] if ref_norms["l2"] > 0 else err["l2"]},
        {"quantity": f"{label}-h1", "eps": eps_bar, "value": err["h1_semi"], "reference": ref_norms["h1_semi"],
         "deviation": err["h1_semi"] / ref_norms["h1_semi"] if ref_norms["h1_semi"] > 0 else err["h1_semi"]},
    ]


def run_pipeline(config: PipelineConfig, output: str | Path | None = None) -> StudyReport:
    """Field -> extension -> A -> P at eps_bar -> P^0 -> corrector -> errors -> artifacts.

    Artifacts are published only when every stage succeeds; a failed run
    leaves the ``FAILED`` marker and the run log.
    """
    output = Path(output if output is not None else config["output"])
    eps_bar = config["eps_bar"]
    tol = config["solver.tol"]

    with StagedOutput(output) as stage:
        logger.info("Pipeline start: %r -> %s", config, output)
        field = _stage("field", field_from_config, config)
        ext = _stage("extension", extension_from_config, config, field)
        cell_mesh = UnitCellMesh(config["cell.n"], d=field.d)
        sample_grid = sample_grid_from_config(config, field.omega)
        A_field = _stage("averaged coefficient", build_A, ext, sample_grid, cell_mesh, tol)

        f = source_from_config(config)
        mesh = Mesh(field.omega, config["mesh.n"])
        u = _stage("fine problem", solve_fd, DirichletProblem.fine(ext, eps_bar, f), mesh, tol)
        u0 = _stage("upscaled problem", solve_fd, DirichletProblem.averaged(A_field, f), mesh, tol)
        if config["corrector"]:
            if ext.partition is not None:
                provider = _stage("cell problems for the corrector", CellProvider.solve,
                                  ext, np.stack([c.center for c in ext.partition.cells]), cell_mesh, tol)
            else:
                provider = _stage("cell problems for the corrector", CellProvider.on_lattice,
                                  ext, A_field.axes, cell_mesh, tol)
            u1 = _stage("corrector", corrector, u0, ext, provider)
        else:
            u1 = u0

        ref = norms(u)
        rows = _error_rows(eps_bar, "u0", u0, u, ref) + _error_rows(eps_bar, "u1", u1, u, ref)
        warnings = list(A_field.warnings)
        baseline = config["baseline"]
        if baseline != "none":
            B_field = _stage("baseline coefficient", mean_field, field, eps_bar, sample_grid, baseline)
            ub = _stage("baseline problem", solve_fd, DirichletProblem.averaged(B_field, f), mesh, tol)
            rows += _error_rows(eps_bar, f"{baseline}-mean", ub, u, ref)

        report = StudyReport(
            "pipeline", rows,
            metadata={
                "field": field.name,
                "extension": ext.kind,
                "eps_bar": eps_bar,
                "mesh_n": mesh.n,
                "cell_n": cell_mesh.n,
                "samples": len(A_field.points),
            },
            warnings=warnings,
            columns=["quantity"] + STUDY_COLUMNS,
        )

        write_csv(stage.path("field.csv"), *_field_rows(field, mesh))
        write_csv(stage.path("averaged.csv"), A_field.header(), A_field.rows())
        write_csv(stage.path("u_fine.csv"), u.header(), u.rows())
        write_csv(stage.path("u0.csv"), u0.header(), u0.rows())
        write_csv(stage.path("u0_corrected.csv"), u1.header(), u1.rows())
        report.to_csv(stage.path("report.csv"))
        write_plot_script(stage.staging, field.d)
        for w in warnings:
            logger.warning(w)
        logger.info("Pipeline done: %s", "; ".join(
            f"{r['quantity']}={r['deviation']:.3e}" for r in rows
        ))
    return report
