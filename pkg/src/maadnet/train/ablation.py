"""Component toggle grid and adversarial-weight sweep."""

from __future__ import annotations

import csv
import dataclasses
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional, Sequence, Union

from .config import TrainConfig
from .loop import METRIC_FIELDS, RunReport, TrainingData, Trainer

GRIDS = ("components", "weights")


@dataclass(frozen=True)
class Cell:
    name: str
    had: bool
    lad: bool
    grl: bool
    attention: bool
    lambda_had: Optional[float] = None  # None keeps the base config's weight
    lambda_lad: Optional[float] = None

    def apply(self, base: TrainConfig) -> TrainConfig:
        obj = dataclasses.replace(
            base.objective,
            enable_had=self.had,
            enable_lad=self.lad,
            enable_grl=self.grl,
            enable_attention=self.attention,
            lambda_had=base.objective.lambda_had if self.lambda_had is None else self.lambda_had,
            lambda_lad=base.objective.lambda_lad if self.lambda_lad is None else self.lambda_lad,
        )
        return dataclasses.replace(base, method="maad", objective=obj)


COMPONENT_CELLS = (
    Cell("A", had=True, lad=False, grl=False, attention=False),
    Cell("B", had=True, lad=False, grl=True, attention=False),
    Cell("C", had=False, lad=True, grl=False, attention=False),
    Cell("D", had=False, lad=True, grl=True, attention=False),
    Cell("E", had=True, lad=True, grl=True, attention=False),
    Cell("F", had=True, lad=True, grl=True, attention=True),
)

WEIGHT_CELLS = tuple(
    [Cell(f"HAD_{w:g}", had=True, lad=False, grl=True, attention=False, lambda_had=w) for w in (1.0, 0.1, 0.01, 0.001)]
    + [Cell(f"LAD_{w:g}", had=False, lad=True, grl=True, attention=False, lambda_lad=w) for w in (0.01, 0.001, 0.0001)]
)


def grid_cells(grid: str) -> tuple[Cell, ...]:
    if grid == "components":
        return COMPONENT_CELLS
    if grid == "weights":
        return WEIGHT_CELLS
    raise ValueError(f"unknown grid {grid!r}; expected one of {GRIDS}")


CSV_FIELDS = ("cell", "seed", "HAD", "LAD", "GRL", "A", "lambda_had", "lambda_lad") + METRIC_FIELDS


def comparison_row(cell: Cell, cfg: TrainConfig, report: RunReport) -> dict:
    row = {
        "cell": cell.name,
        "seed": cfg.seed,
        "HAD": int(cell.had),
        "LAD": int(cell.lad),
        "GRL": int(cell.grl),
        "A": int(cell.attention),
        "lambda_had": cfg.objective.lambda_had if cell.had else "",
        "lambda_lad": cfg.objective.lambda_lad if cell.lad else "",
    }
    row.update({k: report.metrics.get(k, "") for k in METRIC_FIELDS})
    return row


def run_grid(
    grid: str,
    base: TrainConfig,
    data: TrainingData,
    out_dir: Union[str, Path],
    seeds: Sequence[int] = (0,),
    runner: Optional[Callable[[TrainConfig, Path], RunReport]] = None,
) -> Path:
    """Train every cell of ``grid`` for every seed and write ``comparison.csv``.

    Each run lands in ``<out_dir>/<cell>/seed<k>/``; ``runner`` replaces the
    default trainer (used to exercise the harness cheaply).
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if runner is None:
        def runner(cfg: TrainConfig, run_dir: Path) -> RunReport:
            return Trainer(cfg, data).fit(run_dir)
    rows = []
    for cell in grid_cells(grid):
        for seed in seeds:
            cfg = dataclasses.replace(cell.apply(base), seed=seed)
            report = runner(cfg, out / cell.name / f"seed{seed}")
            rows.append(comparison_row(cell, cfg, report))
    path = out / "comparison.csv"
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=CSV_FIELDS, lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
    return path
