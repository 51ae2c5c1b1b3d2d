"""Explicit backward recursion for the value and control on a quantized tree.

Starting from the terminal payoff on the last codebook, each step computes
two conditional moments against the transition matrix,

    E1_i = sum_j u_{k+1}(y_j) P_ij
    E2_i = sum_j u_{k+1}(y_j) (y_j - y_i) P_ij,

and from them the control and value at node i:

    v_k(y_i) = E2_i / (dt * sigma(y_i)) - E1_i * b(y_i) / sigma(y_i)
    u_k(y_i) = E1_i + dt * f(t_k, y_i, E1_i, v_k(y_i)).

The driver is evaluated at the conditional mean E1, keeping every step a
closed-form pass over the matrix rows — no regression, no simulation. A
Monte Carlo Brownian-weight estimator of the same control is included purely
as a benchmark.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .model import FbsdeProblem
from .rmq import DegenerateDiffusionWarning, QuantizationTree, euler_operator

__all__ = [
    "ValueLayer",
    "ControlLayer",
    "BackwardSolution",
    "SolverConfig",
    "terminal_layer",
    "backward_step",
    "solve",
    "ps_control_benchmark",
]


@dataclass(frozen=True)
class ValueLayer:
    step: int
    values: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "values", np.asarray(self.values, dtype=float))


@dataclass(frozen=True)
class ControlLayer:
    step: int
    controls: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "controls", np.asarray(self.controls, dtype=float))


@dataclass(frozen=True)
class BackwardSolution:
    """Value layers 0..n, control layers 0..n-1, and the start value u0."""

    tree: QuantizationTree
    value_layers: tuple
    control_layers: tuple
    u0: float


@dataclass(frozen=True)
class SolverConfig:
    """Scheme options; this release ships the fully explicit variant only."""

    theta1: float = 1.0
    theta2: float = 1.0
    mc_control_paths: int | None = None

    def __post_init__(self) -> None:
        if self.theta1 != 1.0 or self.theta2 != 1.0:
            raise ValueError("only the explicit scheme (theta1 = theta2 = 1) is supported")
        if self.mc_control_paths is not None and self.mc_control_paths < 1:
            raise ValueError("mc_control_paths must be positive when given")


def terminal_layer(tree: QuantizationTree, problem: FbsdeProblem) -> ValueLayer:
    """Payoff evaluated on the last codebook."""
    last = tree.layers[-1]
    return ValueLayer(last.step, problem.terminal(last.codewords))


def _floored_sigma(problem: FbsdeProblem, y: np.ndarray) -> np.ndarray:
    """Sign-preserving floor of sigma(y); exact zeros floor to +eps."""
    s = np.asarray(problem.diffusion(y), dtype=float)
    eps = problem.diffusion_floor
    below = np.abs(s) < eps
    if np.any(below):
        warnings.warn(
            f"|sigma| below {eps:g} at {int(below.sum())} node(s); "
            "flooring before inversion",
            DegenerateDiffusionWarning,
            stacklevel=3,
        )
        s = np.where(below, np.where(s < 0.0, -eps, eps), s)
    return s


def backward_step(
    tree: QuantizationTree,
    k: int,
    next_values: ValueLayer,
    problem: FbsdeProblem,
    config: SolverConfig | None = None,
) -> tuple[ValueLayer, ControlLayer]:
    """One explicit backward step from layer k+1 to layer k."""
    if next_values.step != k + 1:
        raise ValueError(f"next_values is for step {next_values.step}, expected {k + 1}")
    dt = tree.time_grid.dt
    y = tree.layers[k].codewords
    y_next = tree.layers[k + 1].codewords
    P = tree.transitions[k].entries
    u_next = next_values.values

    E1 = P @ u_next
    E2 = P @ (u_next * y_next) - y * E1
    s = _floored_sigma(problem, y)
    v = E2 / (dt * s) - E1 * np.asarray(problem.drift(y), dtype=float) / s
    f_val = np.asarray(problem.driver(k * dt, y, E1, v), dtype=float)
    if np.any(np.isnan(f_val)):
        i = int(np.nonzero(np.isnan(f_val))[0][0])
        raise RuntimeError(
            f"driver returned NaN at step {k}, node {i} (codeword {y[i]:g})"
        )
    u = E1 + dt * f_val
    return ValueLayer(k, u), ControlLayer(k, v)


def solve(
    tree: QuantizationTree,
    problem: FbsdeProblem,
    config: SolverConfig | None = None,
) -> BackwardSolution:
    """Run the backward recursion over the whole tree."""
    n = tree.time_grid.n
    values = [None] * (n + 1)
    controls = [None] * n
    values[n] = terminal_layer(tree, problem)
    for k in range(n - 1, -1, -1):
        values[k], controls[k] = backward_step(tree, k, values[k + 1], problem, config)
    return BackwardSolution(
        tree=tree,
        value_layers=tuple(values),
        control_layers=tuple(controls),
        u0=float(values[0].values[0]),
    )


def ps_control_benchmark(
    tree: QuantizationTree,
    problem: FbsdeProblem,
    k: int,
    next_values: ValueLayer,
    paths: int,
    seed: int,
) -> ControlLayer:
    """Monte Carlo Brownian-weight control estimate at step k (benchmark only).

    For each source node the one-step Euler image of ``paths`` Gaussian draws
    is projected onto the next codebook, and the control is estimated as
    E[u_{k+1}(projection) * Z] / sqrt(dt). Deterministic for a fixed seed.
    Source nodes with zero marginal mass have no defined estimate; they are
    reported with a warning and filled with NaN.
    """
    if paths < 1:
        raise ValueError("paths must be positive")
    if next_values.step != k + 1:
        raise ValueError(f"next_values is for step {next_values.step}, expected {k + 1}")
    dt = tree.time_grid.dt
    src = tree.layers[k]
    y_next = tree.layers[k + 1].codewords
    u_next = next_values.values
    mids = 0.5 * (y_next[1:] + y_next[:-1])
    rng = np.random.default_rng(seed)
    sq = math.sqrt(dt)

    out = np.empty(src.size)
    dead = src.weights == 0.0
    if np.any(dead):
        warnings.warn(
            f"{int(dead.sum())} source node(s) at step {k} carry zero mass; "
            "control estimate undefined there (NaN)",
            stacklevel=2,
        )
    for i in range(src.size):
        if dead[i]:
            out[i] = np.nan
            continue
        z = rng.standard_normal(paths)
        image = euler_operator(src.codewords[i], z, dt, problem)
        cells = np.searchsorted(mids, image, side="right")
        out[i] = float(np.mean(u_next[cells] * z)) / sq
    return ControlLayer(k, out)
