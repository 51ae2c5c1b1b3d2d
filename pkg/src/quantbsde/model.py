"""Problem definitions: forward coefficients, driver, terminal payoff.

A decoupled FBSDE here is: a scalar forward diffusion
``dY = b(Y) dt + sigma(Y) dW`` started at ``y0``, and a backward pair
``(U, V)`` with terminal condition ``U_T = h(Y_T)`` and generator
``f(t, y, u, v)``. The two built-in models are geometric Brownian motion
with a discounting driver (vanilla call pricing/hedging) and a
two-rate borrowing/lending model with a bull-spread payoff, whose driver
is genuinely nonlinear in ``(u, v)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .gaussian import normal_cdf

__all__ = [
    "FbsdeProblem",
    "BlackScholesParams",
    "BergmanParams",
    "make_black_scholes",
    "make_bergman",
    "bs_price",
    "bs_control",
]


@dataclass(frozen=True)
class FbsdeProblem:
    """A decoupled Markovian FBSDE in one dimension.

    ``drift``/``diffusion``/``terminal`` are vectorized maps on the state;
    ``driver`` takes ``(t, y, u, v)``. ``diffusion_floor`` is the epsilon
    used wherever ``1/sigma`` or a conditional standard deviation would
    degenerate. ``label``/``params`` identify built-in models so reports
    can locate a closed-form oracle.
    """

    drift: Callable
    diffusion: Callable
    driver: Callable
    terminal: Callable
    T: float
    y0: float
    diffusion_floor: float
    label: str = "custom"
    params: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not self.T > 0.0:
            raise ValueError(f"horizon T must be positive, got {self.T}")
        if not self.diffusion_floor > 0.0:
            raise ValueError("diffusion_floor must be positive")
        s0 = float(self.diffusion(self.y0))
        if not abs(s0) > 0.0:
            raise ValueError("diffusion must be nonzero at the start point y0")


def _default_floor(sigma_at_y0: float, y0: float) -> float:
    return 1e-8 * abs(y0) * abs(sigma_at_y0)


@dataclass(frozen=True)
class BlackScholesParams:
    rate: float
    sigma: float
    strike: float

    def __post_init__(self) -> None:
        if not self.sigma > 0.0:
            raise ValueError("sigma must be positive")
        if not self.strike > 0.0:
            raise ValueError("strike must be positive")


@dataclass(frozen=True)
class BergmanParams:
    mu: float
    sigma: float
    lend_rate: float
    borrow_rate: float
    strike_low: float
    strike_high: float

    def __post_init__(self) -> None:
        if not self.sigma > 0.0:
            raise ValueError("sigma must be positive")
        if self.lend_rate > self.borrow_rate:
            raise ValueError("lend_rate must not exceed borrow_rate")
        if not (0.0 < self.strike_low < self.strike_high):
            raise ValueError("strikes must satisfy 0 < strike_low < strike_high")


def make_black_scholes(p: BlackScholesParams, T: float, y0: float) -> FbsdeProblem:
    """Call option under geometric Brownian motion with rate-``r`` drift.

    Forward part ``b(y) = r y``, ``sigma(y) = sigma y``; payoff
    ``h(y) = (y - K)+``; driver ``f(t, y, u, v) = -r u``, i.e. plain
    discounting of the value, so the value process is the discounted
    conditional expectation of the payoff and the control is the
    delta-hedge scaled by ``sigma y``.
    """
    r, s, K = p.rate, p.sigma, p.strike

    def drift(y):
        return r * np.asarray(y, dtype=float)

    def diffusion(y):
        return s * np.asarray(y, dtype=float)

    def driver(t, y, u, v):
        return -r * np.asarray(u, dtype=float)

    def terminal(y):
        return np.maximum(np.asarray(y, dtype=float) - K, 0.0)

    return FbsdeProblem(
        drift=drift,
        diffusion=diffusion,
        driver=driver,
        terminal=terminal,
        T=T,
        y0=y0,
        diffusion_floor=_default_floor(s * y0, y0),
        label="black-scholes",
        params={"rate": r, "sigma": s, "strike": K},
    )


def make_bergman(p: BergmanParams, T: float, y0: float) -> FbsdeProblem:
    """Bull-spread claim under distinct borrowing and lending rates.

    Forward part ``b(y) = mu y``, ``sigma(y) = sigma y``; payoff
    ``h(y) = (y - K1)+ - 2 (y - K2)+``; driver

        f(t, y, u, v) = -r u - ((mu - r)/sigma) v
                        - (R - r) min(u - v/sigma, 0)

    with lending rate ``r`` and borrowing rate ``R``. The ``min`` term
    switches the financing rate whenever the replicating portfolio
    borrows, which makes the generator nonlinear in ``(u, v)``.
    """
    mu, s = p.mu, p.sigma
    r, R = p.lend_rate, p.borrow_rate
    K1, K2 = p.strike_low, p.strike_high

    def drift(y):
        return mu * np.asarray(y, dtype=float)

    def diffusion(y):
        return s * np.asarray(y, dtype=float)

    def driver(t, y, u, v):
        u = np.asarray(u, dtype=float)
        v = np.asarray(v, dtype=float)
        return -r * u - ((mu - r) / s) * v - (R - r) * np.minimum(u - v / s, 0.0)

    def terminal(y):
        y = np.asarray(y, dtype=float)
        return np.maximum(y - K1, 0.0) - 2.0 * np.maximum(y - K2, 0.0)

    return FbsdeProblem(
        drift=drift,
        diffusion=diffusion,
        driver=driver,
        terminal=terminal,
        T=T,
        y0=y0,
        diffusion_floor=_default_floor(s * y0, y0),
        label="bergman",
        params={
            "mu": mu,
            "sigma": s,
            "lend_rate": r,
            "borrow_rate": R,
            "strike_low": K1,
            "strike_high": K2,
        },
    )


def _d1(p: BlackScholesParams, tau: float, y: float) -> float:
    return (math.log(y / p.strike) + (p.rate + 0.5 * p.sigma**2) * tau) / (
        p.sigma * math.sqrt(tau)
    )


def bs_price(p: BlackScholesParams, t: float, T: float, y: float) -> float:
    """Closed-form call price at time ``t`` and spot ``y``."""
    if t >= T:
        raise ValueError("bs_price requires t < T; use the payoff at maturity")
    if y <= 0.0:
        raise ValueError("bs_price requires a positive spot")
    tau = T - t
    d1 = _d1(p, tau, y)
    d2 = d1 - p.sigma * math.sqrt(tau)
    return y * normal_cdf(d1) - p.strike * math.exp(-p.rate * tau) * normal_cdf(d2)


def bs_control(p: BlackScholesParams, t: float, T: float, y: float) -> float:
    """Closed-form control ``Phi(d1) sigma y`` (delta times ``sigma y``)."""
    if t >= T:
        raise ValueError("bs_control requires t < T")
    if y <= 0.0:
        raise ValueError("bs_control requires a positive spot")
    return normal_cdf(_d1(p, T - t, y)) * p.sigma * y
