"""Seeded noise and the coupled processes Y, Y_alpha, Z1, Z2 and X.

Every increment dW_{k,j} comes from its own Philox stream keyed by
(master_seed, path_index, mode), so a path is a pure function of its index
no matter how paths are batched or scheduled.  All stochastic sums are
left-point (Ito) sums with deterministic diagonal coefficients psi_k(t_j).
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .fractional_calculus import causal_convolve, power_cell_weights
from .resolvent import ResolventTable, TimeGrid
from .special_functions import c_alpha, gamma_fn

__all__ = [
    "NoiseModel",
    "PathBundle",
    "ProcessPath",
    "increments",
    "generate_paths",
    "coarsen_bundle",
    "eval_Z2",
    "eval_Y",
    "eval_Y_alpha",
    "eval_Z1",
    "eval_mild_solution",
    "stochastic_convolution",
    "y_kernel",
]

PROCESS_LABELS = ("Y", "Y_alpha", "Z1", "Z2", "X", "WBpsi")


@dataclass(frozen=True)
class NoiseModel:
    """Covariance eigenvalues q_k and coefficients psi_k(t_j); sigma = psi sqrt(q)."""

    q: np.ndarray
    psi: np.ndarray
    grid: TimeGrid

    def __post_init__(self):
        q = np.array(self.q, dtype=float).ravel()
        psi = np.array(self.psi, dtype=float)
        if np.any(q < 0) or not np.all(np.isfinite(q)):
            raise ValueError("covariance eigenvalues must be nonnegative and finite")
        if psi.shape != (q.size, self.grid.n + 1):
            raise ValueError(f"psi must have shape {(q.size, self.grid.n + 1)}, got {psi.shape}")
        if not np.all(np.isfinite(psi)):
            raise ValueError("psi must be finite")
        q.setflags(write=False)
        psi.setflags(write=False)
        sigma = psi * np.sqrt(q)[:, None]
        sigma.setflags(write=False)
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "psi", psi)
        object.__setattr__(self, "_sigma", sigma)

    @classmethod
    def build(cls, grid: TimeGrid, N: int, q=1.0, psi=1.0) -> "NoiseModel":
        """Scalars or per-mode sequences; ``psi`` may also be an (N, n+1) array."""
        q = np.broadcast_to(np.asarray(q, dtype=float), (N,)).copy()
        psi = np.asarray(psi, dtype=float)
        if psi.ndim <= 1:
            psi = np.broadcast_to(psi.reshape(-1, 1) if psi.ndim == 1 else psi, (N, grid.n + 1)).copy()
        return cls(q, psi, grid)

    @property
    def N(self) -> int:
        return self.q.size

    @property
    def sigma(self) -> np.ndarray:
        return self._sigma

    def hs2(self) -> np.ndarray:
        """||psi(t_j)||_2^2 per node."""
        return (self.sigma**2).sum(axis=0)

    def scaled(self, factor: float) -> "NoiseModel":
        return NoiseModel(self.q, self.psi * factor, self.grid)


def _checksum(dW: np.ndarray, seed: int, index) -> str:
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(dW).tobytes())
    h.update(repr((int(seed), index)).encode())
    return h.hexdigest()[:16]


@dataclass(frozen=True)
class PathBundle:
    """Brownian increments for one path (shape (N, n)) or a batch (shape (B, N, n))."""

    master_seed: int
    path_index: int | tuple
    dW: np.ndarray = field(repr=False)
    checksum: str = ""

    def __post_init__(self):
        dW = np.array(self.dW, dtype=float)
        dW.setflags(write=False)
        object.__setattr__(self, "dW", dW)
        if not self.checksum:
            object.__setattr__(self, "checksum", _checksum(dW, self.master_seed, self.path_index))

    @property
    def batched(self) -> bool:
        return self.dW.ndim == 3


@dataclass(frozen=True)
class ProcessPath:
    label: str
    values: np.ndarray = field(repr=False)
    grid: TimeGrid
    source: str

    def __post_init__(self):
        if self.label not in PROCESS_LABELS:
            raise ValueError(f"unknown process label {self.label!r}")
        if self.values.shape[-1] != self.grid.n + 1:
            raise ValueError("process values do not match the grid")


def _stream(master_seed: int, path_index: int, mode: int) -> np.random.Generator:
    ss = np.random.SeedSequence(int(master_seed), spawn_key=(int(path_index), int(mode)))
    return np.random.Generator(np.random.Philox(ss))


def increments(q: Sequence[float], grid: TimeGrid, master_seed: int,
               indices: Sequence[int]) -> np.ndarray:
    """dW of shape (len(indices), N, n), variance q_k * dt per entry."""
    q = np.asarray(q, dtype=float)
    N, n = q.size, grid.n
    out = np.empty((len(indices), N, n))
    scale = np.sqrt(q * grid.dt)
    for b, m in enumerate(indices):
        for k in range(N):
            out[b, k] = _stream(master_seed, m, k).standard_normal(n)
    out *= scale[None, :, None]
    return out


def generate_paths(noise: NoiseModel, grid: TimeGrid, master_seed: int, M: int,
                   start: int = 0, stacked: bool = False):
    """M bundles with indices start..start+M-1; bundle m depends on (master_seed, m) only."""
    if M < 1:
        raise ValueError("need at least one path")
    idx = list(range(start, start + M))
    dW = increments(noise.q, grid, master_seed, idx)
    if stacked:
        return PathBundle(master_seed, tuple(idx), dW)
    return [PathBundle(master_seed, m, dW[b]) for b, m in enumerate(idx)]


def coarsen_bundle(bundle: PathBundle, factor: int) -> PathBundle:
    """Sum consecutive increments so a coarse path shares the fine Brownian path."""
    dW = bundle.dW
    n = dW.shape[-1]
    if n % factor:
        raise ValueError(f"cannot coarsen {n} increments by {factor}")
    coarse = dW.reshape(dW.shape[:-1] + (n // factor, factor)).sum(axis=-1)
    return PathBundle(bundle.master_seed, bundle.path_index, coarse)


def _check_shapes(table: ResolventTable, noise: NoiseModel, bundle: PathBundle):
    if noise.grid != table.grid:
        raise ValueError("noise model and resolvent table use different grids")
    if noise.N != table.N:
        raise ValueError("noise model and resolvent table have different mode counts")
    if bundle.dW.shape[-2:] != (table.N, table.grid.n):
        raise ValueError(f"increments of shape {bundle.dW.shape} do not match the grid/modes")


def _ito_sum(kernel: np.ndarray, noise: NoiseModel, bundle: PathBundle) -> np.ndarray:
    # sum_{i<j} kernel_{k, j-i} psi_k(t_i) dW_{k,i}
    x = noise.psi[:, :-1] * bundle.dW
    return causal_convolve(kernel, x)


def eval_Z2(table: ResolventTable, noise: NoiseModel, bundle: PathBundle, alpha: float) -> ProcessPath:
    """Z2(t_j) = C_alpha sum_{i<j} s(t_j - t_i) psi(t_i) dW_i."""
    _check_shapes(table, noise, bundle)
    vals = c_alpha(alpha) * _ito_sum(table.values, noise, bundle)
    return ProcessPath("Z2", vals, table.grid, bundle.checksum)


def stochastic_convolution(table: ResolventTable, noise: NoiseModel, bundle: PathBundle) -> ProcessPath:
    """int_0^t S(t - tau) psi(tau) dW(tau) without the C_alpha factor."""
    _check_shapes(table, noise, bundle)
    return ProcessPath("WBpsi", _ito_sum(table.values, noise, bundle), table.grid, bundle.checksum)


def y_kernel(table: ResolventTable, alpha: float) -> np.ndarray:
    m = np.arange(table.grid.n + 1, dtype=float)
    lag = np.zeros_like(m)
    lag[1:] = (m[1:] * table.grid.dt) ** (-alpha)
    return lag[None, :] * table.values


def eval_Y(table: ResolventTable, noise: NoiseModel, bundle: PathBundle, alpha: float) -> ProcessPath:
    """Y(t_j) = sum_{i<j} (t_j - t_i)^(-alpha) s(t_j - t_i) psi(t_i) dW_i."""
    if not 0.0 < alpha < 0.5:
        raise ValueError(f"Y needs 0 < alpha < 1/2, got {alpha}")
    _check_shapes(table, noise, bundle)
    vals = _ito_sum(y_kernel(table, alpha), noise, bundle)
    return ProcessPath("Y", vals, table.grid, bundle.checksum)


def eval_Y_alpha(y: ProcessPath, alpha: float) -> ProcessPath:
    if y.label != "Y":
        raise ValueError(f"expected a Y path, got {y.label}")
    return ProcessPath("Y_alpha", y.values / gamma_fn(1.0 - alpha), y.grid, y.source)


def z1_kernel(table: ResolventTable, alpha: float) -> np.ndarray:
    w = power_cell_weights(alpha - 1.0, table.grid.n, table.grid.dt)
    return w[None, :] * table.values


def eval_Z1(table: ResolventTable, y: ProcessPath, alpha: float, rule: str = "right") -> ProcessPath:
    """Z1(t_j) = int_0^t_j (t_j - s)^(alpha-1) S(t_j - s) Y(s) ds, no 1/Gamma(alpha).

    Cell [t_i, t_{i+1}] carries the exact weight w_{j-i} of (t_j - s)^(alpha-1).
    ``rule="right"`` freezes S(t_j - s) Y(s) at s = t_{i+1}; ``"left"`` at
    s = t_i.  The left rule never sees the last increment before t_j, which
    leaves an O(sqrt(dt)) white-noise defect in Z1 - Z2.
    """
    if y.label != "Y":
        raise ValueError(f"Z1 convolves Y itself, got {y.label}")
    if y.grid != table.grid:
        raise ValueError("Y and the resolvent table use different grids")
    w = power_cell_weights(alpha - 1.0, table.grid.n, table.grid.dt)
    if rule == "left":
        vals = causal_convolve(w[None, :] * table.values, y.values[..., :-1])
    elif rule == "right":
        # sum_{i<j} w_{j-i} s_{j-i-1} Y_{i+1} = sum_{l=1}^{j} w_{j-l+1} s_{j-l} Y_l
        kern = np.zeros((table.N, table.grid.n + 1))
        kern[:, 1:] = w[None, 1:] * table.values[:, :-1]
        vals = causal_convolve(kern, y.values[..., 1:])
    else:
        raise ValueError(f"unknown Z1 rule {rule!r}")
    return ProcessPath("Z1", vals, table.grid, y.source)


def eval_mild_solution(table: ResolventTable, x0: Sequence[float], noise: NoiseModel,
                       bundle: PathBundle) -> ProcessPath:
    """X(t_j) = s(t_j) x0 + sum_{i<j} s(t_j - t_i) psi(t_i) dW_i, per mode."""
    x0 = np.asarray(x0, dtype=float).ravel()
    if x0.size != table.N:
        raise ValueError(f"x0 has {x0.size} coefficients, expected {table.N}")
    _check_shapes(table, noise, bundle)
    vals = table.values * x0[:, None] + _ito_sum(table.values, noise, bundle)
    return ProcessPath("X", vals, table.grid, bundle.checksum)
