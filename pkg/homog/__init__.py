from __future__ import annotations

__version__ = "0.1.0"

from homog.cell import AveragedTensor, UnitCellMesh, averaged_tensor, averaged_tensor_from_window, solve_cell
from homog.extension import build, eval_eps, eval_xy, rev_grid, rev_window
from homog.field import DomainBox, FieldSpec, MicroCoefficient, load_grid_field, synthesize
from homog.solve import DirichletProblem, Mesh, corrector, error_norms, solve_fd
from homog.upscale import assemble_A_discrete, build_A, continuity_modulus, periodic_shortcut, sample_A_continuous

__all__ = [
    "__version__",
    "AveragedTensor",
    "DirichletProblem",
    "DomainBox",
    "FieldSpec",
    "Mesh",
    "MicroCoefficient",
    "UnitCellMesh",
    "assemble_A_discrete",
    "averaged_tensor",
    "averaged_tensor_from_window",
    "build",
    "build_A",
    "continuity_modulus",
    "corrector",
    "error_norms",
    "eval_eps",
    "eval_xy",
    "load_grid_field",
    "periodic_shortcut",
    "rev_grid",
    "rev_window",
    "sample_A_continuous",
    "solve_cell",
    "solve_fd",
    "synthesize",
]
