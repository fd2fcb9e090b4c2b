from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from homog import __version__
from homog.config.pipeline import PipelineConfig, apply_overrides, parse_config, write_config
from homog.errors import ConfigError, ConsistencyError, HomogError

__all__ = ["main", "parse_config", "write_config", "apply_overrides"]


def _valid_point(value: str) -> list[float]:
    """Parse ``x`` or ``x1,x2`` into a list of floats."""
    try:
        coords = [float(part) for part in value.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"point must be comma-separated numbers, got '{value}'") from None
    if not coords or len(coords) > 3:
        raise argparse.ArgumentTypeError(f"point must have 1 to 3 coordinates, got '{value}'")
    return coords


def _valid_override(value: str) -> str:
    if "=" not in value:
        raise argparse.ArgumentTypeError(f"override must look like key=value, got '{value}'")
    return value


def _add_run_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("config", help="Run configuration file (see 'homog init-config')")
    p.add_argument("--set", dest="overrides", action="append", default=[], type=_valid_override,
                   metavar="KEY=VALUE", help="Override a config key (repeatable)")


def _add_out_arg(p: argparse.ArgumentParser) -> None:
    p.add_argument("--out", default=None, help="Output directory (default: the config's 'output')")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="homog",
        description="homog -- numerical homogenization of non-periodic coefficient fields",
    )
    parser.add_argument("--version", action="version", version=f"homog {__version__}")
    subparsers = parser.add_subparsers(dest="command")

    p = subparsers.add_parser("extend-check", help="Check bounds and the a(x, x/eps_bar) = a_M(x) identity")
    _add_run_args(p)

    p = subparsers.add_parser("cell", help="Solve the cell problem at one point and print A(x)")
    _add_run_args(p)
    p.add_argument("--at", type=_valid_point, required=True, metavar="X[,Y]", help="Macroscopic point x")
    p.add_argument("--json", dest="output_json", action="store_true", help="Output raw JSON")

    p = subparsers.add_parser("average", help="Compute the averaged coefficient A and write averaged.csv")
    _add_run_args(p)
    _add_out_arg(p)

    p = subparsers.add_parser("solve", help="Solve P at eps_bar and P^0; write u_fine.csv and u0.csv")
    _add_run_args(p)
    _add_out_arg(p)

    p = subparsers.add_parser("atf-study", help="Oscillating-integral limit over the eps sequence")
    _add_run_args(p)
    _add_out_arg(p)

    p = subparsers.add_parser("ueps-study", help="||u_eps - u_0|| over the eps sequence")
    _add_run_args(p)
    _add_out_arg(p)

    p = subparsers.add_parser("pipeline", help="Run the full pipeline and write CSV curves and plot.gp")
    _add_run_args(p)
    _add_out_arg(p)

    p = subparsers.add_parser("init-config", help="Write a configuration file with every default")
    p.add_argument("path", help="Where to write the config")
    p.add_argument("--set", dest="overrides", action="append", default=[], type=_valid_override,
                   metavar="KEY=VALUE", help="Override a default (repeatable)")
    return parser


def main(argv: list[str] | None = None) -> None:
    parser = build_parser()
    args = parser.parse_args(argv)

    if args.command is None:
        parser.print_help()
        sys.exit(1)

    handlers = {
        "extend-check": _extend_check,
        "cell": _cell,
        "average": _average,
        "solve": _solve,
        "atf-study": _atf_study,
        "ueps-study": _ueps_study,
        "pipeline": _pipeline,
    }
    try:
        if args.command == "init-config":
            _init_config(args)
        else:
            config = _load_config(parser, args)
            handlers[args.command](config, args)
    except HomogError as exc:
        print(f"Error: {exc}", file=sys.stderr)
        sys.exit(exc.exit_code)
    except OSError as exc:
        print(f"Error: {exc}", file=sys.stderr)
        sys.exit(1)


def _load_config(parser: argparse.ArgumentParser, args: argparse.Namespace) -> PipelineConfig:
    path = Path(args.config)
    if not path.is_file():
        parser.print_usage(sys.stderr)
        raise ConfigError("", f"config file not found: {path}")
    return parse_config(path, args.overrides)


def _out_dir(config: PipelineConfig, args: argparse.Namespace) -> Path:
    return Path(args.out if args.out is not None else config["output"])


def _setup(config: PipelineConfig):
    from homog import lab

    field = lab.field_from_config(config)
    ext = lab.extension_from_config(config, field)
    return field, ext


def _extend_check(config: PipelineConfig, args: argparse.Namespace) -> None:
    from homog.extension import verify_identity
    from homog.field import check_bounds

    field, ext = _setup(config)
    bounds = check_bounds(field, seed=config["seed"])
    deviation = verify_identity(ext, seed=config["seed"])

    print()
    print(f"  Field:      {field.name} (d={field.d})")
    print(f"  Extension:  {ext.kind}, eps_bar={ext.eps_bar:g}")
    print(f"  Bounds:     alpha={field.alpha:g}  beta={field.beta:g}  "
          f"observed [{bounds['min_quadratic']:.6g}, {bounds['max_image']:.6g}]")
    print(f"  Identity:   max |a(x, x/eps_bar) - a_M(x)| = {deviation:.3e}")
    print()
    if deviation != 0.0:
        raise ConsistencyError(f"a(x, x/eps_bar) differs from a_M(x) by {deviation:.3e}")


def _cell(config: PipelineConfig, args: argparse.Namespace) -> None:
    from homog.cell import UnitCellMesh, averaged_tensor, cell_energy, solve_cell

    field, ext = _setup(config)
    if len(args.at) != field.d:
        raise ConfigError("--at", f"--at needs {field.d} coordinate(s), got {len(args.at)}")
    mesh = UnitCellMesh(config["cell.n"], d=field.d)
    sol = solve_cell(ext, args.at, mesh, config["solver.tol"])
    tensor = averaged_tensor(sol, ext, args.at)

    if args.output_json:
        out = tensor.to_dict()
        out["residual"] = sol.residual
        out["energy"] = cell_energy(sol)
        print(json.dumps(out, indent=2))
        return

    print()
    print(f"  Cell problem at x={args.at}  ({ext.kind}, n={mesh.n})")
    for row in tensor.A:
        print("  A = [" + "  ".join(f"{v:.10g}" for v in row) + "]")
    if tensor.reuss is not None:
        print(f"  Reuss/Voigt bounds: [{tensor.reuss:.10g}, {tensor.voigt:.10g}]")
    print(f"  Residual:   {sol.residual:.3e}")
    print()


def _staged(config: PipelineConfig, args: argparse.Namespace, write) -> None:
    from homog.export import StagedOutput

    out = _out_dir(config, args)
    with StagedOutput(out) as stage:
        write(stage)
    for path in stage.published:
        print(f"  wrote {path}")


def _average(config: PipelineConfig, args: argparse.Namespace) -> None:
    from homog import lab
    from homog.cell import UnitCellMesh
    from homog.export import write_csv
    from homog.upscale import build_A

    def write(stage) -> None:
        field, ext = _setup(config)
        mesh = UnitCellMesh(config["cell.n"], d=field.d)
        A = build_A(ext, lab.sample_grid_from_config(config, field.omega), mesh, config["solver.tol"])
        write_csv(stage.path("averaged.csv"), A.header(), A.rows())
        diag = [float(v) for t in A.tensors for v in t.A.diagonal()]
        bounded = [t for t in A.tensors if t.reuss is not None]
        print()
        print(f"  Averaged:   {ext.kind}, {len(A.tensors)} samples, cell n={mesh.n}")
        print(f"  A range:    [{min(diag):.10g}, {max(diag):.10g}]  (diagonal entries)")
        print(f"  Min eig:    {min(t.min_eigenvalue for t in A.tensors):.10g}  (alpha={field.alpha:g})")
        if bounded:
            inside = sum(t.within_bounds() for t in bounded)
            print(f"  Reuss/Voigt: {inside}/{len(bounded)} samples within bounds")
        for w in A.warnings:
            print(f"  Warning: {w}")

    _staged(config, args, write)


def _solve(config: PipelineConfig, args: argparse.Namespace) -> None:
    from homog import lab
    from homog.cell import UnitCellMesh
    from homog.export import write_csv
    from homog.solve import DirichletProblem, Mesh, error_norms, norms, solve_fd
    from homog.upscale import build_A

    def write(stage) -> None:
        field, ext = _setup(config)
        tol = config["solver.tol"]
        f = lab.source_from_config(config)
        mesh = Mesh(field.omega, config["mesh.n"])
        cell_mesh = UnitCellMesh(config["cell.n"], d=field.d)
        A = build_A(ext, lab.sample_grid_from_config(config, field.omega), cell_mesh, tol)
        u = solve_fd(DirichletProblem.fine(ext, ext.eps_bar, f), mesh, tol)
        u0 = solve_fd(DirichletProblem.averaged(A, f), mesh, tol)
        write_csv(stage.path("u_fine.csv"), u.header(), u.rows())
        write_csv(stage.path("u0.csv"), u0.header(), u0.rows())
        err = error_norms(u0, u)
        ref = norms(u)
        print()
        print(f"  Mesh:       n={mesh.n}, eps_bar={ext.eps_bar:g}")
        print(f"  Residuals:  fine {u.residual:.3e}  upscaled {u0.residual:.3e}")
        print(f"  u0 - u:     L2 {err['l2']:.6e}  H1 {err['h1_semi']:.6e}")
        if ref["l2"] > 0:
            print(f"  Relative:   L2 {err['l2'] / ref['l2']:.6e}")

    _staged(config, args, write)


def _atf_study(config: PipelineConfig, args: argparse.Namespace) -> None:
    from homog import lab

    def write(stage) -> None:
        field, ext = _setup(config)
        seq = lab.EpsSequence(config["eps_bar"], config["seq.ratio"], config["seq.count"])
        phi = lab.TestFunction.named(config["study.phi"], field.d)
        report = lab.atf_power_study(ext, phi, seq, config["study.p"])
        report.to_csv(stage.path("atf.csv"))
        print(report.summary())

    _staged(config, args, write)


def _ueps_study(config: PipelineConfig, args: argparse.Namespace) -> None:
    from homog import lab
    from homog.cell import UnitCellMesh
    from homog.upscale import build_A

    def write(stage) -> None:
        field, ext = _setup(config)
        tol = config["solver.tol"]
        seq = lab.EpsSequence(config["eps_bar"], config["seq.ratio"], config["seq.count"])
        mesh = UnitCellMesh(config["cell.n"], d=field.d)
        A = build_A(ext, lab.sample_grid_from_config(config, field.omega), mesh, tol)
        report = lab.u_eps_study(ext, A, lab.source_from_config(config), seq,
                                 config["study.cells_per_eps"], tol)
        report.to_csv(stage.path("ueps.csv"))
        print(report.summary())

    _staged(config, args, write)


def _pipeline(config: PipelineConfig, args: argparse.Namespace) -> None:
    from homog.lab import run_pipeline

    out = _out_dir(config, args)
    report = run_pipeline(config, out)
    print(report.summary())
    print(f"  Artifacts in {out}")


def _init_config(args: argparse.Namespace) -> None:
    config = PipelineConfig(apply_overrides({}, args.overrides))
    path = write_config(config, args.path)
    print(f"  Wrote {path}")


if __name__ == "__main__":
    main()
