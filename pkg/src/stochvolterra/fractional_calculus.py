"""Generalized Riemann-Liouville integrals with a resolvent weight.

    I_alpha f(t) = 1/Gamma(alpha) int_0^t R(t-s) (t-s)^(alpha-1) f(s) ds

discretized with exactly integrated singular weights and left-endpoint values
of R f.  The same product-integration weights are reused by the stochastic
evaluators, so the discrete convolution helpers live here as well.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import fft as sfft

from .resolvent import ResolventTable, TimeGrid
from .special_functions import c_alpha, gamma_fn

__all__ = [
    "FracParams",
    "power_cell_weights",
    "causal_convolve",
    "singular_integral",
    "frac_integral",
    "uniform_error_piecewise_constant",
    "check_semigroup_property",
    "beta_identity_check",
]


@dataclass(frozen=True)
class FracParams:
    alpha: float = 0.3
    p: float = 4.0
    alpha0: float = 0.25
    p0: float = 1.2

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha}")
        if not self.p > 2.0:
            raise ValueError(f"p must exceed 2, got {self.p}")
        if not 0.0 < self.alpha0 < 0.5:
            raise ValueError(f"alpha0 must lie in (0, 1/2), got {self.alpha0}")
        if not self.p0 > 1.0:
            raise ValueError(f"p0 must exceed 1, got {self.p0}")

    @property
    def beta(self) -> float:
        return 1.0 - self.alpha

    @property
    def q(self) -> float:
        return self.p / (self.p - 1.0)

    @property
    def q0(self) -> float:
        return self.p0 / (self.p0 - 1.0)

    def theorem1_admissible(self) -> bool:
        return 1.0 / self.p < self.alpha < 0.5


def power_cell_weights(exponent: float, n: int, dt: float) -> np.ndarray:
    """w_m = int_{(m-1)dt}^{m dt} u^exponent du for m = 0..n (w_0 = 0).

    Requires exponent > -1.
    """
    if not exponent > -1.0:
        raise ValueError(f"u^{exponent} is not integrable at 0")
    m = np.arange(n + 1, dtype=float)
    e1 = exponent + 1.0
    P = (m * dt) ** e1 / e1
    w = np.zeros(n + 1)
    w[1:] = np.diff(P)
    return w


def causal_convolve(kernel: np.ndarray, x: np.ndarray, method: str = "auto") -> np.ndarray:
    """y_j = sum_{i<j} kernel[..., j-i] * x[..., i] for j = 0..n.

    ``kernel`` has length n+1 in its last axis (kernel[..., 0] is ignored),
    ``x`` has length n.  Leading axes broadcast.  The FFT route is used for
    batched inputs; ``direct`` sums exactly in index order.
    """
    kernel = np.asarray(kernel, dtype=float)
    x = np.asarray(x, dtype=float)
    n = x.shape[-1]
    if kernel.shape[-1] != n + 1:
        raise ValueError(f"kernel length {kernel.shape[-1]} must be n+1 = {n + 1}")
    k = kernel[..., 1:]
    shape = np.broadcast_shapes(k.shape[:-1], x.shape[:-1]) + (n + 1,)
    if method == "auto":
        method = "fft" if n > 64 else "direct"
    out = np.zeros(shape)
    if method == "direct":
        kb = np.broadcast_to(k, shape[:-1] + (n,))
        xb = np.broadcast_to(x, shape[:-1] + (n,))
        for idx in np.ndindex(*shape[:-1]):
            out[idx + (slice(1, None),)] = np.convolve(kb[idx], xb[idx])[:n]
        return out
    if method != "fft":
        raise ValueError(f"unknown convolution method {method!r}")
    L = sfft.next_fast_len(2 * n, real=True)
    y = sfft.irfft(sfft.rfft(k, L, axis=-1) * sfft.rfft(x, L, axis=-1), L, axis=-1)
    out[..., 1:] = y[..., :n]
    return out


def singular_integral(values: np.ndarray, exponent: float, dt: float) -> float:
    """int_0^T u^exponent g(u) du with g frozen at the left end of each cell."""
    values = np.asarray(values, dtype=float)
    n = values.size - 1
    w = power_cell_weights(exponent, n, dt)
    return float(w[1:] @ values[:-1])


def _weight_rows(weight: ResolventTable | None, grid: TimeGrid) -> np.ndarray:
    if weight is None:
        return np.ones((1, grid.n + 1))
    if weight.grid != grid:
        raise ValueError("weight table and path live on different grids")
    return weight.values


def frac_integral(alpha: float, weight: ResolventTable | None, f: np.ndarray,
                  grid: TimeGrid, method: str = "auto") -> np.ndarray:
    """Discrete I_alpha f on the grid, one row per mode.

    ``weight=None`` means R = identity.  ``f`` has shape (n+1,) or (N, n+1).
    """
    if not 0.0 < alpha <= 1.0:
        raise ValueError(f"alpha must lie in (0, 1], got {alpha}")
    f = np.asarray(f, dtype=float)
    if f.shape[-1] != grid.n + 1:
        raise ValueError("path length does not match the grid")
    R = _weight_rows(weight, grid)
    w = power_cell_weights(alpha - 1.0, grid.n, grid.dt)
    out = causal_convolve(w * R, f[..., :-1], method=method) / gamma_fn(alpha)
    if weight is None and f.ndim == 1:
        return out[0]
    return out


def uniform_error_piecewise_constant(values: np.ndarray, exact, grid: TimeGrid) -> float:
    """sup over [0, T] of |g_j - F(t)| for the step reconstruction g(t) = g_j on [t_j, t_{j+1}).

    ``exact`` must be monotone on each cell, so the sup sits at a cell end.
    """
    t = grid.nodes
    F = np.asarray(exact(t), dtype=float)
    g = np.asarray(values, dtype=float)
    left = np.abs(g[:-1] - F[:-1])
    right = np.abs(g[:-1] - F[1:])
    return float(max(left.max(), right.max(), abs(g[-1] - F[-1])))


def check_semigroup_property(alpha: float, beta2: float, f: np.ndarray,
                             weight: ResolventTable | None, grid: TimeGrid) -> float:
    """max_j |I_{alpha+beta2} f - I_alpha(I_beta2 f)|, semigroup weights only."""
    if weight is not None and weight.kernel.variant != "constant":
        raise ValueError("the composition law holds for semigroup (constant-kernel) weights only")
    if alpha + beta2 > 1.0:
        raise ValueError("alpha + beta2 must not exceed 1")
    lhs = frac_integral(alpha + beta2, weight, f, grid)
    rhs = frac_integral(alpha, weight, frac_integral(beta2, weight, f, grid), grid)
    return float(np.abs(lhs - rhs).max())


def _product_trapezoid(exponent: float, g, length: float, n: int) -> float:
    """int_0^length u^exponent g(u) du with g linearly interpolated per cell."""
    h = length / n
    a = h * np.arange(n)
    b = a + h
    e1, e2 = exponent + 1.0, exponent + 2.0
    m0 = (b**e1 - a**e1) / e1
    m1 = (b**e2 - a**e2) / e2 - a * m0
    ga, gb = g(a), g(b)
    return math.fsum(ga * m0 + (gb - ga) * m1 / h)


def beta_identity_check(alpha: float, n: int, r: float = 0.0, v: float = 1.0) -> float:
    """|int_r^v (v-s)^(alpha-1) (s-r)^(-alpha) ds - C_alpha| by product integration.

    The interval is split at its midpoint so each half carries one endpoint
    singularity, integrated exactly against the linearly interpolated other factor.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    if not v > r:
        raise ValueError("need v > r")
    half = 0.5 * (v - r)
    m = max(1, n // 2)
    near_r = _product_trapezoid(-alpha, lambda u: (v - r - u) ** (alpha - 1.0), half, m)
    near_v = _product_trapezoid(alpha - 1.0, lambda u: (v - r - u) ** (-alpha), half, m)
    return abs(near_r + near_v - c_alpha(alpha))
