"""Desk-scale experiments: the cost-estimator correlation study.

Architecture parameters are drawn i.i.d. standard normal per sample;
sample i always uses the seed stream (master_seed, i), so results are
order-stable no matter how work is scheduled across processes.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .cost import CostTable, chained_cost, exact_cost, local_cost
from .derive import derive
from .search import random_params
from .space import SuperNetworkSpec


class ExperimentError(RuntimeError):
    """Degenerate or otherwise unusable experiment output."""


@dataclass
class CorrelationResult:
    rows: np.ndarray  # (n, 3): chained, local, exact
    rho_chained: float
    rho_local: float
    n_models: int
    seed: int


def _sample_row(spec: SuperNetworkSpec, table: CostTable, seed: int, index: int) -> tuple[float, float, float]:
    rng = np.random.default_rng(np.random.SeedSequence(entropy=(seed, index)))
    params = random_params(spec, rng)
    ch, _ = chained_cost(spec, params, table)
    lo = local_cost(spec, params, table)
    ex = exact_cost(derive(spec, params), table)
    return ch, lo, ex


def _chunk_rows(spec_json: dict, unit: str, entries: dict, seed: int, indices: list[int]):
    spec = SuperNetworkSpec.from_json(spec_json)
    table = CostTable(unit, entries)
    return [(i, _sample_row(spec, table, seed, i)) for i in indices]


def correlate(
    spec: SuperNetworkSpec,
    table: CostTable,
    n_models: int,
    seed: int,
    workers: int = 1,
) -> CorrelationResult:
    """Sample n_models random parameterizations and compare the chained
    and local estimates against the exact cost of the derived
    architecture (Pearson correlation)."""
    if n_models < 2:
        raise ExperimentError("need at least 2 models for a correlation")

    rows = np.zeros((n_models, 3))
    if workers <= 1:
        for i in range(n_models):
            rows[i] = _sample_row(spec, table, seed, i)
    else:
        chunks = [list(c) for c in np.array_split(np.arange(n_models), workers * 4) if len(c)]
        spec_json = spec.to_json()
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [
                pool.submit(_chunk_rows, spec_json, table.unit, table.entries, seed, [int(i) for i in c])
                for c in chunks
            ]
            for fut in futures:
                for i, row in fut.result():
                    rows[i] = row

    if np.any(rows.std(axis=0) == 0.0):
        raise ExperimentError("degenerate variance: a cost column is constant")
    rho_chained = float(np.corrcoef(rows[:, 0], rows[:, 2])[0, 1])
    rho_local = float(np.corrcoef(rows[:, 1], rows[:, 2])[0, 1])
    return CorrelationResult(rows, rho_chained, rho_local, n_models, seed)


def write_correlation_csv(path: str, result: CorrelationResult) -> None:
    with open(path, "w") as f:
        f.write("index,chained,local,exact\n")
        for i, (ch, lo, ex) in enumerate(result.rows):
            f.write(f"{i},{float(ch)!r},{float(lo)!r},{float(ex)!r}\n")
