"""Convergence sweeps, hedge-comparison tables, and CSV/JSON emission.

A sweep runs the full pipeline (tree build + backward solve) over a grid of
(quantizer count, step count) pairs and collects the start values u0, wall
clock per cell, and any per-cell failure without aborting the rest. The
hedge table compares the quantized control against the closed-form control
of the call model node by node.
"""

from __future__ import annotations

import csv
import json
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import bsde_solver, rmq
from .model import BlackScholesParams, FbsdeProblem, bs_control

__all__ = [
    "SweepSpec",
    "SweepResult",
    "HedgeRow",
    "run_sweep",
    "hedge_compare",
    "emit_csv",
    "emit_json",
    "thread_budget",
]


@dataclass(frozen=True)
class SweepSpec:
    """A model plus the sorted lists of quantizer and step counts to cross."""

    problem: FbsdeProblem
    quantizer_counts: tuple
    step_counts: tuple

    def __post_init__(self) -> None:
        qs = tuple(int(q) for q in self.quantizer_counts)
        ss = tuple(int(s) for s in self.step_counts)
        object.__setattr__(self, "quantizer_counts", qs)
        object.__setattr__(self, "step_counts", ss)
        if any(q < 1 for q in qs) or any(s < 1 for s in ss):
            raise ValueError("quantizer and step counts must be at least 1")


@dataclass(frozen=True)
class SweepResult:
    """u0 per cell (NaN where a cell failed), timings, and failure messages."""

    spec: SweepSpec
    values: np.ndarray
    timings: np.ndarray
    errors: dict

    @property
    def failed(self) -> bool:
        return bool(self.errors)


@dataclass(frozen=True)
class HedgeRow:
    step: int
    codeword: float
    v_hat: float
    v_exact: float
    abs_err: float


def thread_budget() -> int:
    """Worker count for data-parallel sections, from QUANTBSDE_THREADS.

    Unset or 0 means auto (one per CPU); anything else caps the width.
    """
    raw = os.environ.get("QUANTBSDE_THREADS", "0").strip()
    try:
        n = int(raw)
    except ValueError:
        n = 0
    if n <= 0:
        n = os.cpu_count() or 1
    return max(1, n)


def _run_cell(problem, N, n, settings):
    t0 = time.perf_counter()
    tree = rmq.build_tree(problem, rmq.TimeGrid(n, problem.T), N, settings)
    sol = bsde_solver.solve(tree, problem)
    return sol.u0, time.perf_counter() - t0


def run_sweep(
    spec: SweepSpec,
    settings: rmq.OptimizerSettings | None = None,
    max_workers: int | None = None,
) -> SweepResult:
    """Solve every (N, n) cell of the sweep; failures are recorded in place.

    Cells are independent and deterministic, and run on a thread pool whose
    width comes from ``max_workers`` or the QUANTBSDE_THREADS budget.
    """
    qs, ss = spec.quantizer_counts, spec.step_counts
    values = np.full((len(qs), len(ss)), np.nan)
    timings = np.zeros((len(qs), len(ss)))
    errors: dict = {}
    cells = [(i, j) for i in range(len(qs)) for j in range(len(ss))]
    workers = max_workers if max_workers else thread_budget()

    def work(ij):
        i, j = ij
        return _run_cell(spec.problem, qs[i], ss[j], settings)

    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = {pool.submit(work, ij): ij for ij in cells}
        for fut, (i, j) in futures.items():
            try:
                u0, elapsed = fut.result()
                values[i, j] = u0
                timings[i, j] = elapsed
            except Exception as exc:  # noqa: BLE001 - recorded per cell
                errors[(qs[i], ss[j])] = f"{type(exc).__name__}: {exc}"
    return SweepResult(spec, values, timings, errors)


def hedge_compare(
    solution: bsde_solver.BackwardSolution,
    problem: FbsdeProblem,
    steps,
) -> list[HedgeRow]:
    """Node-level comparison of the quantized control with the closed form.

    Only the call model has an exact control; any other problem is rejected.
    Steps must lie in [0, n-1] — there is no control on the terminal layer.
    """
    if problem.label != "black-scholes":
        raise ValueError("hedge comparison needs the black-scholes model (closed-form control)")
    p = BlackScholesParams(
        problem.params["rate"], problem.params["sigma"], problem.params["strike"]
    )
    n = solution.tree.time_grid.n
    dt = solution.tree.time_grid.dt
    rows: list[HedgeRow] = []
    for k in steps:
        k = int(k)
        if not 0 <= k <= n - 1:
            raise ValueError(f"hedge step {k} out of range [0, {n - 1}]")
        layer = solution.tree.layers[k]
        v_hat = solution.control_layers[k].controls
        for cw, vh in zip(layer.codewords, v_hat):
            v_ex = bs_control(p, k * dt, problem.T, float(cw))
            rows.append(HedgeRow(k, float(cw), float(vh), v_ex, abs(float(vh) - v_ex)))
    return rows


def emit_csv(result, path) -> None:
    """Write a sweep matrix or a hedge table as CSV.

    Sweep layout: header row of step counts, first column the quantizer
    count, cells with 4 decimals, failed cells as "ERR". Hedge layout:
    columns step, codeword, v_hat, v_exact, abs_err.
    """
    try:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            if isinstance(result, SweepResult):
                writer.writerow(["N"] + [str(s) for s in result.spec.step_counts])
                for i, N in enumerate(result.spec.quantizer_counts):
                    row = [str(N)]
                    for j in range(len(result.spec.step_counts)):
                        u0 = result.values[i, j]
                        row.append("ERR" if np.isnan(u0) else f"{u0:.4f}")
                    writer.writerow(row)
            else:
                writer.writerow(["step", "codeword", "v_hat", "v_exact", "abs_err"])
                for r in result:
                    writer.writerow(
                        [
                            r.step,
                            f"{r.codeword:.6f}",
                            f"{r.v_hat:.6f}",
                            f"{r.v_exact:.6f}",
                            f"{r.abs_err:.6f}",
                        ]
                    )
    except OSError as exc:
        raise OSError(f"cannot write CSV to {path}: {exc}") from exc


def emit_json(result: SweepResult, path) -> None:
    """Full-precision JSON sidecar for a sweep: values, timings, errors."""
    doc = {
        "model": result.spec.problem.label,
        "params": result.spec.problem.params,
        "quantizer_counts": list(result.spec.quantizer_counts),
        "step_counts": list(result.spec.step_counts),
        "values": [
            [None if np.isnan(v) else v for v in row] for row in result.values
        ],
        "timings_seconds": result.timings.tolist(),
        "errors": {f"N={N},n={n}": msg for (N, n), msg in result.errors.items()},
    }
    try:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=2)
    except OSError as exc:
        raise OSError(f"cannot write JSON to {path}: {exc}") from exc
