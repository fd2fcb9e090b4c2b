"""Artifact writing: CSV tables, the gnuplot script and staged output directories."""

from __future__ import annotations

import csv
import shutil
from pathlib import Path
from types import TracebackType
from typing import Iterable, Sequence

from homog.log import RUN_LOG_NAME, attach_run_log, detach_run_log, logger

FAILED_MARKER = "FAILED"
_STAGING = ".staging"

# every file name a homog command publishes
ARTIFACT_NAMES = (
    "field.csv", "averaged.csv", "u_fine.csv", "u0.csv", "u0_corrected.csv",
    "report.csv", "plot.gp", "atf.csv", "ueps.csv",
)


def _cell(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_csv(path: str | Path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    """Write a header row and data rows; floats use their shortest exact repr."""
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_cell(float(v)) if hasattr(v, "dtype") else _cell(v) for v in row])
    return path


def read_csv(path: str | Path) -> tuple[list[str], list[list[str]]]:
    with open(path, "r", newline="", encoding="utf-8") as f:
        rows = list(csv.reader(f))
    return rows[0], rows[1:]


PLOT_1D = """\
# gnuplot script: micro coefficient, averaged coefficient, solutions
set datafile separator ","
set key autotitle columnhead
set terminal pngcairo size 1500,450
set output "curves.png"
set multiplot layout 1,3
set title "a_M(x)"
plot "field.csv" using 1:2 with lines lw 1 title "a_M"
set title "A(x)"
plot "averaged.csv" using 1:2 with linespoints pt 7 ps 0.5 title "A"
set title "solutions"
plot "u_fine.csv" using 1:2 with lines title "u", \\
     "u0.csv" using 1:2 with lines dt 2 title "u_0", \\
     "u0_corrected.csv" using 1:2 with lines dt 3 title "u_1"
unset multiplot
"""

PLOT_2D = """\
# gnuplot script: micro coefficient, averaged coefficient, solutions
set datafile separator ","
set key autotitle columnhead
set terminal pngcairo size 1500,450
set output "curves.png"
set view map
set multiplot layout 1,3
set title "a_M(x)"
splot "field.csv" using 1:2:3 with points pt 5 ps 0.3 palette notitle
set title "A_{11}(x)"
splot "averaged.csv" using 1:2:3 with points pt 5 ps 0.8 palette notitle
set title "u_0(x)"
splot "u0.csv" using 1:2:3 with points pt 5 ps 0.3 palette notitle
unset multiplot
"""


def write_plot_script(directory: str | Path, d: int) -> Path:
    path = Path(directory) / "plot.gp"
    path.write_text(PLOT_1D if d == 1 else PLOT_2D, encoding="utf-8")
    return path


class StagedOutput:
    """Collect artifacts in a staging folder and publish them only on success.

    On failure homog's own artifacts are removed and the directory gets
    a ``FAILED`` marker naming the cause next to the run log. Files homog
    did not write are never touched.

    Usage:
        with StagedOutput(out_dir) as stage:
            write_csv(stage.path("u0.csv"), header, rows)
    """

    def __init__(self, directory: str | Path) -> None:
        self.directory = Path(directory)
        self.staging = self.directory / _STAGING
        self._handler = None
        self.published: list[Path] = []

    def path(self, name: str) -> Path:
        return self.staging / name

    def __enter__(self) -> StagedOutput:
        self.directory.mkdir(parents=True, exist_ok=True)
        for stale in (self.directory / FAILED_MARKER, self.staging):
            if stale.is_dir():
                shutil.rmtree(stale)
            elif stale.exists():
                stale.unlink()
        self.staging.mkdir()
        self._handler = attach_run_log(self.directory)
        return self

    def __exit__(self, exc_type: type[BaseException] | None, exc_val: BaseException | None,
                 exc_tb: TracebackType | None) -> bool:
        try:
            if exc_val is None:
                for item in sorted(self.staging.iterdir()):
                    target = self.directory / item.name
                    item.replace(target)
                    self.published.append(target)
                logger.info("Published %d artifacts to %s", len(self.published), self.directory)
            else:
                logger.error("Run failed: %s", exc_val)
                self._clear_outputs()
                (self.directory / FAILED_MARKER).write_text(f"{exc_val}\n", encoding="utf-8")
        finally:
            shutil.rmtree(self.staging, ignore_errors=True)
            if self._handler is not None:
                detach_run_log(self._handler)
        return False

    def _clear_outputs(self) -> None:
        """Remove homog's own artifacts (stale or partial); other files stay."""
        for name in ARTIFACT_NAMES:
            target = self.directory / name
            if target.is_file():
                target.unlink()
