import logging
from pathlib import Path
from typing import List, Optional

import numpy as np
import polars as pl
from pydantic import BaseModel

from projsplit.solver import SolveResult, SolveTrace

trace_logger = logging.getLogger('Trace Writer')


class BlockStepStats(BaseModel):
    block: int
    rho_mean: float
    rho_min: float
    rho_max: float


class RunSummary(BaseModel):
    """Summary document written next to the trace of a run."""

    problem: str
    status: str
    iterations: int
    res_primal: float
    res_dual: float
    residual: float
    objective: Optional[float] = None
    reference_objective: Optional[float] = None
    relative_error: Optional[float] = None
    criterion: Optional[float] = None
    forward_evals: int
    initial_forward_evals: int
    stepsizes: List[BlockStepStats]


def stepsize_stats(trace: SolveTrace) -> List[BlockStepStats]:
    frame = trace.to_frame()
    stats = []
    for block in range(1, trace.n_blocks + 1):
        column = frame[f'rho_{block}']
        stats.append(
            BlockStepStats(
                block=block,
                rho_mean=float(column.mean()) if len(column) else float('nan'),
                rho_min=float(column.min()) if len(column) else float('nan'),
                rho_max=float(column.max()) if len(column) else float('nan'),
            )
        )
    return stats


def summarize(
    problem: str,
    result: SolveResult,
    objective: Optional[float] = None,
    reference_objective: Optional[float] = None,
    relative_error: Optional[float] = None,
    criterion: Optional[float] = None,
) -> RunSummary:
    records = result.trace.records
    last = records[-1] if records else None
    return RunSummary(
        problem=problem,
        status=result.status.value,
        iterations=result.iterations,
        res_primal=last.res_primal if last else float('nan'),
        res_dual=last.res_dual if last else float('nan'),
        residual=result.residual,
        objective=objective,
        reference_objective=reference_objective,
        relative_error=relative_error,
        criterion=criterion,
        forward_evals=result.forward_evals,
        initial_forward_evals=result.initial_forward_evals,
        stepsizes=stepsize_stats(result.trace),
    )


def write_frame(frame: pl.DataFrame, path: Path, fmt: str = 'csv') -> Path:
    """Write a DataFrame as CSV or row-oriented JSON, creating parent directories."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if fmt == 'csv':
        frame.write_csv(path)
    elif fmt == 'json':
        frame.write_json(path)
    else:
        raise ValueError(f'Unknown trace format {fmt!r}.')
    trace_logger.info(f'Wrote {frame.height} rows to {path}.')
    return path


def write_trace(trace: SolveTrace, path: Path, fmt: str = 'csv') -> Path:
    return write_frame(trace.to_frame(), path, fmt)


def write_summary(summary: RunSummary, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(summary.model_dump_json(indent=2))
    return path


def step_comparison_frame(
    one_step: SolveTrace, two_step: SolveTrace, block: int = 1
) -> pl.DataFrame:
    """Discovered stepsizes of block `block` under both schemes, side by side."""
    rows = min(len(one_step), len(two_step))
    column = f'rho_{block}'
    return pl.DataFrame(
        {
            'iter': np.arange(1, rows + 1),
            'rho_one_step': one_step.to_frame()[column][:rows],
            'rho_two_step': two_step.to_frame()[column][:rows],
        }
    )
