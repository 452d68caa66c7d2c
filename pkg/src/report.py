# src/report.py

"""CSV writers and the plain-text run report."""

from typing import Dict, List, Optional, Sequence
import io
import logging
import os
import numpy as np
from .records import TransitionTable, Trajectory
from .systems import state_names

logger = logging.getLogger(__name__)

CSV_FORMAT = "%.16e"

RUN = "Run"
ROUTE = "Route"
SERIES = "Series diagnostics"
PICARD = "Picard iterations"
CERTIFICATES = "Certificates"
SEMIGROUP = "Semigroup residuals"
ORACLE = "Oracle deviation"
STATUS = "Status"
SECTION_ORDER = (RUN, ROUTE, SERIES, PICARD, CERTIFICATES, SEMIGROUP, ORACLE, STATUS)


def _csv_text(header: Sequence[str], rows: np.ndarray) -> str:
    buffer = io.StringIO()
    np.savetxt(buffer, rows, fmt=CSV_FORMAT, delimiter=",", header=",".join(header), comments="")
    return buffer.getvalue()


def trajectory_csv(trajectory: Trajectory) -> str:
    """Header t,x1..xn then one row per grid time."""
    rows = np.column_stack([trajectory.times, trajectory.states])
    return _csv_text(("t",) + state_names(trajectory.n), rows)


def stm_csv(table: TransitionTable) -> str:
    """Header t,phi11..phinn (row-major) then one row per grid time."""
    n = table.n
    header = ["t"] + [f"phi{i + 1}{j + 1}" for i in range(n) for j in range(n)]
    rows = np.column_stack([table.grid.points, table.matrices.reshape(len(table.grid), n * n)])
    return _csv_text(header, rows)


def write_text(path: str, text: str) -> str:
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(text)
    logger.info(f"Wrote {path}")
    return path


class RunReport:
    """Plain-text report with a fixed section order.

    Only one of the series and Picard sections appears; every other section
    is always printed, with "(none)" when nothing was recorded.
    """

    def __init__(self):
        self.sections: Dict[str, List[str]] = {name: [] for name in SECTION_ORDER}

    def add(self, section: str, line: str) -> None:
        self.sections[section].append(line)

    def field(self, section: str, label: str, value) -> None:
        if isinstance(value, float):
            value = f"{value:.6e}"
        self.add(section, f"{label}: {value}")

    def table(self, section: str, headers: Sequence[str], rows: Sequence[Sequence]) -> None:
        cells = [[f"{v:.6e}" if isinstance(v, float) else str(v) for v in row] for row in rows]
        widths = [max([len(h)] + [len(r[k]) for r in cells]) for k, h in enumerate(headers)]
        self.add(section, "  ".join(h.rjust(w) for h, w in zip(headers, widths)))
        for row in cells:
            self.add(section, "  ".join(c.rjust(w) for c, w in zip(row, widths)))

    def render(self) -> str:
        use_picard = bool(self.sections[PICARD])
        parts = []
        for name in SECTION_ORDER:
            if name == (SERIES if use_picard else PICARD):
                continue
            lines = self.sections[name] or ["(none)"]
            parts.append(f"== {name} ==\n" + "\n".join(lines))
        return "\n\n".join(parts) + "\n"

    def write(self, path: str) -> str:
        return write_text(path, self.render())


def write_outputs(out_dir: str, trajectory_name: Optional[str], trajectory: Optional[Trajectory],
                  stm_name: Optional[str], table: Optional[TransitionTable]) -> List[str]:
    """Write the requested CSV files and return their paths."""
    written = []
    if trajectory_name and trajectory is not None:
        written.append(write_text(os.path.join(out_dir, trajectory_name), trajectory_csv(trajectory)))
    if stm_name and table is not None:
        written.append(write_text(os.path.join(out_dir, stm_name), stm_csv(table)))
    return written
