"""Recursive marginal quantization of the one-dimensional Euler scheme.

Each time layer of the Euler chain, conditionally on the previous layer's
codebook, is a finite Gaussian mixture. This module optimizes an N-point
quantizer of that mixture (damped Newton on the distortion gradient with an
exact tridiagonal Hessian, Lloyd fixed-point steps as fallback), records the
marginal weights and the companion transition matrices, and chains the layers
into a tree. All cell integrals are closed-form Gaussian partial moments, so
building a tree involves no sampling of any kind.

Voronoi cells are the midpoint intervals of the sorted codewords, with
infinite outer edges; a point exactly on a midpoint belongs to the cell on
the right.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solveh_banded
from scipy.special import ndtr, ndtri

from .gaussian import normal_pdf
from .model import FbsdeProblem

__all__ = [
    "TimeGrid",
    "QuantizedLayer",
    "TransitionMatrix",
    "QuantizationTree",
    "OptimizerSettings",
    "ConvergenceError",
    "DegenerateDiffusionWarning",
    "euler_operator",
    "conditional_law",
    "mixture_distortion",
    "distortion_gradient",
    "optimize_grid",
    "transition_matrix",
    "build_tree",
    "save_tree",
    "load_tree",
]


class ConvergenceError(RuntimeError):
    """Grid optimization did not meet the fixed-point tolerance.

    Carries the last iterate and its gradient norm so callers can inspect
    (or resume from) the failure point.
    """

    def __init__(self, message: str, last_grid: np.ndarray, gradient_norm: float):
        super().__init__(message)
        self.last_grid = last_grid
        self.gradient_norm = gradient_norm


class DegenerateDiffusionWarning(UserWarning):
    """The diffusion coefficient fell below the floor somewhere on a grid."""


@dataclass(frozen=True)
class TimeGrid:
    """Uniform mesh t_k = k T / n, k = 0..n."""

    n: int
    T: float

    def __post_init__(self) -> None:
        if self.n < 1:
            raise ValueError("need at least one time step")
        if not self.T > 0.0:
            raise ValueError("horizon must be positive")

    @property
    def dt(self) -> float:
        return self.T / self.n

    @property
    def nodes(self) -> np.ndarray:
        return np.arange(self.n + 1) * (self.T / self.n)


@dataclass(frozen=True)
class QuantizedLayer:
    """One layer's codebook: sorted codewords, marginal weights, distortion."""

    step: int
    codewords: np.ndarray
    weights: np.ndarray
    distortion: float

    def __post_init__(self) -> None:
        cw = np.asarray(self.codewords, dtype=float)
        w = np.asarray(self.weights, dtype=float)
        object.__setattr__(self, "codewords", cw)
        object.__setattr__(self, "weights", w)
        if cw.ndim != 1 or cw.size < 1:
            raise ValueError("codewords must be a nonempty 1-d array")
        if cw.size > 1 and not np.all(np.diff(cw) > 0):
            raise ValueError("codewords must be strictly increasing")
        if w.shape != cw.shape:
            raise ValueError("weights and codewords must have matching shape")
        if np.any(w < 0) or abs(float(w.sum()) - 1.0) > 1e-12:
            raise ValueError("weights must be nonnegative and sum to 1")
        if self.distortion < 0:
            raise ValueError("distortion must be nonnegative")

    @property
    def size(self) -> int:
        return int(self.codewords.size)


@dataclass(frozen=True)
class TransitionMatrix:
    """Row-stochastic one-step transition probabilities between codebooks."""

    step: int
    entries: np.ndarray

    def __post_init__(self) -> None:
        e = np.asarray(self.entries, dtype=float)
        object.__setattr__(self, "entries", e)
        if e.ndim != 2:
            raise ValueError("entries must be a matrix")
        if np.any(e < 0) or np.any(e > 1):
            raise ValueError("entries must lie in [0, 1]")
        if np.max(np.abs(e.sum(axis=1) - 1.0)) > 1e-10:
            raise ValueError("every row must sum to 1 within 1e-10")


@dataclass(frozen=True)
class QuantizationTree:
    """Layers 0..n plus the n transition matrices linking them."""

    time_grid: TimeGrid
    layers: tuple
    transitions: tuple

    def __post_init__(self) -> None:
        object.__setattr__(self, "layers", tuple(self.layers))
        object.__setattr__(self, "transitions", tuple(self.transitions))
        n = self.time_grid.n
        if len(self.layers) != n + 1 or len(self.transitions) != n:
            raise ValueError("layer/transition counts must match the time grid")
        for k, tr in enumerate(self.transitions):
            a, b = self.layers[k], self.layers[k + 1]
            if tr.entries.shape != (a.size, b.size):
                raise ValueError(f"transition {k} shape does not match its layers")
            pushed = a.weights @ tr.entries
            if np.max(np.abs(pushed - b.weights)) > 1e-10:
                raise ValueError(f"weight propagation violated at step {k}")


@dataclass(frozen=True)
class OptimizerSettings:
    max_iterations: int = 200
    fixed_point_tol: float = 1e-9
    newton_enabled: bool = True
    newton_damping: float = 1.0

    def __post_init__(self) -> None:
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")
        if not self.fixed_point_tol > 0.0:
            raise ValueError("fixed_point_tol must be positive")
        if not 0.0 < self.newton_damping <= 1.0:
            raise ValueError("newton_damping must lie in (0, 1]")


def euler_operator(y, z, dt: float, problem: FbsdeProblem):
    """One Euler step: y + dt b(y) + sqrt(dt) sigma(y) z."""
    if not dt > 0.0:
        raise ValueError("dt must be positive")
    y = np.asarray(y, dtype=float)
    z = np.asarray(z, dtype=float)
    out = y + dt * problem.drift(y) + math.sqrt(dt) * problem.diffusion(y) * z
    return float(out) if out.ndim == 0 else out


def conditional_law(
    source: QuantizedLayer, dt: float, problem: FbsdeProblem
) -> tuple[np.ndarray, np.ndarray]:
    """Gaussian mixture components of the next Euler layer given ``source``.

    Component i is N(m_i, v_i^2) with m_i = y_i + dt b(y_i) and
    v_i = sqrt(dt) max(|sigma(y_i)|, floor). Falling back to the floor is
    reported through a DegenerateDiffusionWarning (with the count of floored
    nodes), never silently.
    """
    y = source.codewords
    means = y + dt * np.asarray(problem.drift(y), dtype=float)
    sig = np.abs(np.asarray(problem.diffusion(y), dtype=float))
    floored = int(np.sum(sig < problem.diffusion_floor))
    if floored:
        warnings.warn(
            f"diffusion below floor {problem.diffusion_floor:g} at {floored} "
            f"node(s) of step {source.step}; flooring",
            DegenerateDiffusionWarning,
            stacklevel=2,
        )
        sig = np.maximum(sig, problem.diffusion_floor)
    stds = math.sqrt(dt) * sig
    return means, stds


def _mixture_stats(grid, means, stds, probs):
    """Aggregated cell statistics of a Gaussian mixture over Voronoi cells.

    Returns (M0, M1, distortion, F, raw) where, for cell j,
    M0_j / M1_j are the mixture's zeroth/first partial moments, F holds the
    mixture density at the interior cell boundaries (padded with zeros at the
    infinite ends), and raw is the per-component cell-mass matrix used for
    transition probabilities. Infinite boundaries contribute cdf values of
    exactly 0/1 and pdf values of exactly 0.
    """
    x = np.asarray(grid, dtype=float)
    n = x.size
    bounds = np.empty(n + 1)
    bounds[0] = -np.inf
    bounds[-1] = np.inf
    if n > 1:
        bounds[1:-1] = 0.5 * (x[:-1] + x[1:])

    m = np.asarray(means, dtype=float)[:, None]
    v = np.asarray(stds, dtype=float)[:, None]
    p = np.asarray(probs, dtype=float)

    a = (bounds[None, :] - m) / v  # standardized boundaries, comps x (n+1)
    C = np.empty_like(a)
    C[:, 0] = 0.0
    C[:, -1] = 1.0
    C[:, 1:-1] = ndtr(a[:, 1:-1])
    P = np.zeros_like(a)
    P[:, 1:-1] = normal_pdf(a[:, 1:-1])

    raw = np.diff(C, axis=1)  # per-component cell masses
    M0 = p @ raw
    dP = P[:, :-1] - P[:, 1:]
    M1 = p @ (m * raw + v * dP)

    # second partial moment: (m^2+v^2) m0 + v [(lo+m) phi(lo~) - (hi+m) phi(hi~)]
    t = np.zeros_like(a)
    finite = np.isfinite(bounds)
    t[:, finite] = (bounds[None, finite] + m) * P[:, finite]
    M2 = p @ ((m * m + v * v) * raw + v * (t[:, :-1] - t[:, 1:]))
    dist = float(np.sum(M2 - 2.0 * x * M1 + x * x * M0))

    F = np.zeros(n + 1)
    if n > 1:
        F[1:-1] = (p / v[:, 0]) @ P[:, 1:-1]
    return M0, M1, dist, F, raw


def mixture_distortion(grid, means, stds, probs) -> float:
    """Quadratic distortion of ``grid`` as a quantizer of a Gaussian mixture.

    The mixture has components N(means[i], stds[i]^2) with probabilities
    ``probs``; cells are the Voronoi midpoint intervals of the sorted grid
    with infinite outer edges. Computed in closed form from partial moments
    up to order two.
    """
    x = np.asarray(grid, dtype=float)
    if x.size > 1 and not np.all(np.diff(x) > 0):
        raise ValueError("grid must be strictly increasing")
    return _mixture_stats(x, means, stds, probs)[2]


def distortion_gradient(grid, means, stds, probs) -> np.ndarray:
    """Analytic gradient of mixture_distortion: g_j = 2 (x_j M0_j - M1_j)."""
    x = np.asarray(grid, dtype=float)
    if x.size > 1 and not np.all(np.diff(x) > 0):
        raise ValueError("grid must be strictly increasing")
    M0, M1, _, _, _ = _mixture_stats(x, means, stds, probs)
    return 2.0 * (x * M0 - M1)


def _newton_direction(x, M0, F, g):
    """Solve H delta = -g for the tridiagonal distortion Hessian.

    H_jj = 2 M0_j - (dx_{j-1}/2) F_j - (dx_j/2) F_{j+1},
    H_{j,j+1} = -(dx_j/2) F_{j+1}, with F the mixture density at the interior
    boundaries. The Hessian can lose definiteness in near-empty tail cells;
    a Levenberg shift escalates until the Cholesky factorization succeeds.
    """
    dx = np.diff(x)
    off = -0.5 * dx * F[1:-1]
    diag = 2.0 * M0.copy()
    diag[:-1] += off
    diag[1:] += off
    scale = max(float(np.max(np.abs(diag))), 1e-300)
    ab = np.empty((2, x.size))
    shift = 0.0
    for _ in range(12):
        ab[0, 0] = 0.0
        ab[0, 1:] = off
        ab[1, :] = diag + shift
        try:
            return solveh_banded(ab, -g, lower=False)
        except np.linalg.LinAlgError:
            shift = scale * 1e-12 if shift == 0.0 else shift * 100.0
    return None


def _optimize_codewords(means, stds, probs, x0, settings: OptimizerSettings):
    """Damped-Newton / Lloyd iteration to a stationary grid.

    Newton candidates are accepted only if they keep the grid strictly
    increasing and do not increase the distortion (backtracking halves the
    step up to 9 times); otherwise a Lloyd step (codeword <- cell conditional
    mean) is taken. Terminates when the max codeword displacement drops
    below the fixed-point tolerance.
    """
    x = np.asarray(x0, dtype=float).copy()
    M0, M1, dist, F, _ = _mixture_stats(x, means, stds, probs)
    disp = math.inf
    for _ in range(settings.max_iterations):
        g = 2.0 * (x * M0 - M1)
        x_new = stats_new = None
        if settings.newton_enabled:
            delta = _newton_direction(x, M0, F, g)
            if delta is not None and np.all(np.isfinite(delta)):
                lam = settings.newton_damping
                for _h in range(9):
                    cand = x + lam * delta
                    if np.all(np.isfinite(cand)) and np.all(np.diff(cand) > 0):
                        st = _mixture_stats(cand, means, stds, probs)
                        if st[2] <= dist + 1e-12 * (abs(dist) + 1.0):
                            x_new, stats_new = cand, st
                            break
                    lam *= 0.5
        if x_new is None:
            # Lloyd step; empty cells keep their codeword. Exact Lloyd maps
            # preserve ordering, so only float noise can produce ties.
            cand = np.where(M0 > 0.0, M1 / np.maximum(M0, 1e-300), x)
            bad = np.diff(cand) <= 0
            while np.any(bad):
                idx = np.nonzero(bad)[0]
                cand[idx + 1] = np.nextafter(cand[idx], np.inf)
                bad = np.diff(cand) <= 0
            x_new = cand
            stats_new = _mixture_stats(cand, means, stds, probs)
        disp = float(np.max(np.abs(x_new - x)))
        x = x_new
        M0, M1, dist, F, _ = stats_new
        if disp < settings.fixed_point_tol:
            return x, M0, dist
    g = 2.0 * (x * M0 - M1)
    raise ConvergenceError(
        f"grid optimization stalled: displacement {disp:.3e} after "
        f"{settings.max_iterations} iterations (tol {settings.fixed_point_tol:g})",
        last_grid=x,
        gradient_norm=float(np.max(np.abs(g))),
    )


def _quantile_start(means, stds, probs, N: int) -> np.ndarray:
    """Moment-matched Gaussian quantile points for a mixture."""
    mu = float(probs @ means)
    var = float(probs @ (stds**2 + means**2)) - mu * mu
    sd = math.sqrt(max(var, 1e-300))
    q = (2.0 * np.arange(1, N + 1) - 1.0) / (2.0 * N)
    return mu + sd * ndtri(q)


def optimize_grid(
    prev: QuantizedLayer,
    dt: float,
    problem: FbsdeProblem,
    N: int,
    settings: OptimizerSettings | None = None,
    warm_start=None,
) -> QuantizedLayer:
    """Optimize the next layer's N-point codebook given the previous layer.

    The target law is the Gaussian mixture from ``conditional_law(prev)``.
    The returned layer is stationary: each codeword equals the conditional
    mean of its own cell within the fixed-point tolerance. Weights are the
    aggregated cell masses. Raises ConvergenceError when the iteration
    budget runs out.
    """
    if N < 1:
        raise ValueError("need at least one codeword")
    settings = settings or OptimizerSettings()
    means, stds = conditional_law(prev, dt, problem)
    probs = prev.weights
    if warm_start is not None:
        x0 = np.asarray(warm_start, dtype=float)
        if x0.size != N or (N > 1 and not np.all(np.diff(x0) > 0)):
            raise ValueError("warm_start must be strictly increasing of length N")
    else:
        x0 = _quantile_start(means, stds, probs, N)
    if N == 1:
        # centroid in closed form; no iteration needed
        mu = float(probs @ means)
        var = float(probs @ (stds**2 + (means - mu) ** 2))
        return QuantizedLayer(prev.step + 1, np.array([mu]), np.array([1.0]), var)
    x, M0, dist = _optimize_codewords(means, stds, probs, x0, settings)
    w = M0 / M0.sum()
    return QuantizedLayer(prev.step + 1, x, w, dist)


def transition_matrix(
    prev: QuantizedLayer, next_layer: QuantizedLayer, dt: float, problem: FbsdeProblem
) -> TransitionMatrix:
    """One-step transition probabilities between adjacent codebooks.

    P_ij is the mass that component i of the conditional mixture assigns to
    cell j of the next layer: a difference of Gaussian cdf values at the
    cell midpoints. Rows telescope to 1 up to roundoff; they are
    renormalized if off by at most 1e-10 and rejected otherwise, since a
    larger defect means the grid or cdf is broken upstream.
    """
    means, stds = conditional_law(prev, dt, problem)
    _, _, _, _, raw = _mixture_stats(next_layer.codewords, means, stds, prev.weights)
    sums = raw.sum(axis=1)
    if np.max(np.abs(sums - 1.0)) > 1e-10:
        raise RuntimeError(
            f"transition row sums off by {np.max(np.abs(sums - 1.0)):.3e} "
            f"at step {prev.step}; upstream grid or cdf bug"
        )
    return TransitionMatrix(prev.step, raw / sums[:, None])


def _warm_start_from(prev: QuantizedLayer, means, stds) -> np.ndarray | None:
    """Shift-and-dilate start: previous codewords moved by the drift and
    spread about the mixture mean to account for one more convolution."""
    w = prev.weights
    mu = float(w @ means)
    mean_prev = float(w @ prev.codewords)
    s2 = float(w @ (prev.codewords - mean_prev) ** 2)
    if s2 <= 0.0:
        return None
    vbar = float(w @ stds)
    dilation = math.sqrt(1.0 + (vbar * vbar) / s2)
    x0 = mu + (means - mu) * dilation
    if np.any(np.diff(x0) <= 0):
        return None
    return x0


def build_tree(
    problem: FbsdeProblem,
    grid: TimeGrid,
    N: int,
    settings: OptimizerSettings | None = None,
) -> QuantizationTree:
    """Quantize all Euler layers of ``problem`` on ``grid`` with N codewords.

    Layer 0 is a Dirac at ``y0``; layers 1..n carry N codewords each. Each
    layer is optimized against the mixture induced by its predecessor and
    linked to it by a transition matrix, so marginal weights propagate
    exactly. Layers after the first are warm-started from the previous
    codebook (shifted by the drift and dilated about the mixture mean);
    the first layer starts at moment-matched Gaussian quantiles.
    """
    if N < 1:
        raise ValueError("need at least one codeword per layer")
    settings = settings or OptimizerSettings()
    dt = grid.dt
    layers = [QuantizedLayer(0, np.array([problem.y0]), np.array([1.0]), 0.0)]
    transitions = []
    for k in range(grid.n):
        prev = layers[-1]
        means, stds = conditional_law(prev, dt, problem)
        warm = _warm_start_from(prev, means, stds) if prev.size == N else None
        layer = optimize_grid(prev, dt, problem, N, settings, warm_start=warm)
        tr = transition_matrix(prev, layer, dt, problem)
        # marginal weights pushed through the normalized transitions, so the
        # propagation invariant holds exactly
        w = prev.weights @ tr.entries
        layer = QuantizedLayer(layer.step, layer.codewords, w, layer.distortion)
        layers.append(layer)
        transitions.append(tr)
    return QuantizationTree(grid, tuple(layers), tuple(transitions))


_FORMAT = "quantbsde-tree"
_VERSION = 1


def save_tree(tree: QuantizationTree, path, solution=None) -> None:
    """Serialize a tree (optionally with a backward solution) as JSON.

    The conventional file extension is ``.rmq.json``. Floats are written
    with full round-trip precision.
    """
    doc = {
        "format": _FORMAT,
        "version": _VERSION,
        "time_grid": {"n": tree.time_grid.n, "T": tree.time_grid.T},
        "layers": [
            {
                "step": la.step,
                "codewords": la.codewords.tolist(),
                "weights": la.weights.tolist(),
                "distortion": la.distortion,
            }
            for la in tree.layers
        ],
        "transitions": [
            {
                "step": tr.step,
                "shape": list(tr.entries.shape),
                "entries": tr.entries.ravel().tolist(),
            }
            for tr in tree.transitions
        ],
    }
    if solution is not None:
        doc["solution"] = {
            "u0": solution.u0,
            "values": [vl.values.tolist() for vl in solution.value_layers],
            "controls": [cl.controls.tolist() for cl in solution.control_layers],
        }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)


def load_tree(path) -> tuple[QuantizationTree, dict | None]:
    """Load a serialized tree; returns (tree, solution-dict-or-None)."""
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format") != _FORMAT:
        raise ValueError(f"not a quantization-tree file: {path}")
    if doc.get("version") != _VERSION:
        raise ValueError(f"unsupported tree format version {doc.get('version')}")
    tg = TimeGrid(doc["time_grid"]["n"], doc["time_grid"]["T"])
    layers = tuple(
        QuantizedLayer(
            la["step"],
            np.array(la["codewords"]),
            np.array(la["weights"]),
            la["distortion"],
        )
        for la in doc["layers"]
    )
    transitions = tuple(
        TransitionMatrix(
            tr["step"], np.array(tr["entries"]).reshape(tr["shape"])
        )
        for tr in doc["transitions"]
    )
    return QuantizationTree(tg, layers, transitions), doc.get("solution")
