"""Path ensembles, sup-moment and tail estimates, convergence studies.

Paths are processed in fixed-size chunks of consecutive indices.  The chunk
layout depends on the configuration only, never on the worker count, and
results are concatenated in chunk order, so estimates are bit-identical for
any number of workers.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
from scipy.stats import binomtest

from . import inequalities as ineq
from .fractional_calculus import (
    FracParams,
    check_semigroup_property,
    frac_integral,
    uniform_error_piecewise_constant,
)
from .resolvent import (
    Kernel,
    Norms,
    ResolventTable,
    Spectrum,
    TimeGrid,
    analytic_resolvent,
    assemble_resolvent,
    operator_norms,
)
from .special_functions import gamma_fn
from .stochastics import (
    NoiseModel,
    PathBundle,
    coarsen_bundle,
    eval_Y,
    eval_Z1,
    eval_Z2,
    generate_paths,
    increments,
)

__all__ = [
    "ExperimentConfig",
    "Experiment",
    "Estimate",
    "TailData",
    "OrderReport",
    "map_paths",
    "estimate_from_samples",
    "sup_samples",
    "estimate_sup_moment",
    "empirical_tail",
    "tail_from_samples",
    "default_delta_grid",
    "layer_cake_check",
    "eq22_estimate",
    "convergence_study",
]

CHUNK = 256


@dataclass(frozen=True)
class ExperimentConfig:
    kernel: Kernel = field(default_factory=Kernel.constant)
    spectrum: Spectrum = field(default_factory=lambda: Spectrum.explicit([1.0]))
    x0: tuple | None = None
    q: tuple | float = 1.0
    psi: tuple | float = 1.0
    T: float = 1.0
    n: int = 1024
    M: int = 2000
    seed: int = 0
    params: FracParams = field(default_factory=FracParams)
    h: tuple | None = None
    delta_grid: tuple | None = None
    workers: int = 1
    chunk: int = CHUNK
    method: str = "quadrature"

    def __post_init__(self):
        if self.M < 1:
            raise ValueError("need at least one path")
        if self.workers < 1 or self.chunk < 1:
            raise ValueError("workers and chunk must be positive")
        TimeGrid(self.T, self.n)

    @property
    def grid(self) -> TimeGrid:
        return TimeGrid(self.T, self.n)

    def with_(self, **kw) -> "ExperimentConfig":
        return replace(self, **kw)


@dataclass(frozen=True)
class Experiment:
    """Everything derived from a config that paths share (immutable)."""

    config: ExperimentConfig
    grid: TimeGrid
    table: ResolventTable
    noise: NoiseModel
    norms: Norms
    phi: "ineq.Functional"

    @classmethod
    def build(cls, config: ExperimentConfig) -> "Experiment":
        grid = config.grid
        N = config.spectrum.N
        table = assemble_resolvent(config.spectrum, config.kernel, grid, config.method)
        noise = NoiseModel.build(grid, N, q=config.q, psi=config.psi)
        h = np.eye(N)[0] if config.h is None else np.asarray(config.h, dtype=float)
        phi = ineq.Functional(h)
        if phi.h.size != N:
            raise ValueError(f"functional has {phi.h.size} coefficients, expected {N}")
        return cls(config, grid, table, noise, operator_norms(table, noise), phi)


@dataclass(frozen=True)
class Estimate:
    value: float
    stderr: float
    M: int

    def __post_init__(self):
        if self.stderr < 0:
            raise ValueError("stderr must be nonnegative")


@dataclass(frozen=True)
class TailData:
    delta: np.ndarray
    counts: np.ndarray
    M: int
    p_emp: np.ndarray
    wilson_lo: np.ndarray
    wilson_hi: np.ndarray


@dataclass(frozen=True)
class OrderReport:
    quantity: str
    levels: list
    errors: list
    slope: float
    reference: str

    def strictly_decreasing(self) -> bool:
        e = self.errors
        return all(b < a for a, b in zip(e, e[1:]))

    def to_dict(self) -> dict:
        return {"quantity": self.quantity, "levels": self.levels, "errors": self.errors,
                "slope": self.slope, "reference": self.reference,
                "strictly_decreasing": self.strictly_decreasing()}


def map_paths(exp: Experiment, fn: Callable[[PathBundle], dict], M: int | None = None,
              start: int = 0, workers: int | None = None) -> dict:
    """Apply ``fn`` to chunks of paths and concatenate its per-path arrays in index order."""
    cfg = exp.config
    M = cfg.M if M is None else M
    workers = cfg.workers if workers is None else workers
    bounds = [(a, min(a + cfg.chunk, start + M)) for a in range(start, start + M, cfg.chunk)]

    def run(b):
        idx = list(range(*b))
        dW = increments(exp.noise.q, exp.grid, cfg.seed, idx)
        return fn(PathBundle(cfg.seed, tuple(idx), dW))

    if workers == 1:
        parts = [run(b) for b in bounds]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(run, bounds))
    return {k: np.concatenate([p[k] for p in parts]) for k in parts[0]}


def estimate_from_samples(x: np.ndarray) -> Estimate:
    x = np.asarray(x, dtype=float)
    M = x.size
    se = float(x.std(ddof=1) / math.sqrt(M)) if M > 1 else math.inf
    return Estimate(float(x.mean()), se, M)


def sup_samples(exp: Experiment, M: int | None = None, start: int = 0,
                workers: int | None = None) -> dict:
    """Per-path grid maxima of phi(Z2) and |phi(Z2)|, plus Z2(T) per mode."""
    alpha = exp.config.params.alpha

    def fn(bundle):
        z2 = eval_Z2(exp.table, exp.noise, bundle, alpha)
        f = ineq.eval_functional(exp.phi, z2)
        return {"sup_signed": f.max(axis=-1), "sup_abs": np.abs(f).max(axis=-1),
                "z2_T": z2.values[..., -1]}

    return map_paths(exp, fn, M, start, workers)


def estimate_sup_moment(exp: Experiment, p: float, samples: dict | None = None) -> dict:
    """E (max_j phi(Z2(t_j)))_+^p and E (max_j |phi(Z2(t_j))|)^p."""
    if not p > 0:
        raise ValueError("p must be positive")
    samples = samples if samples is not None else sup_samples(exp)
    pos = np.maximum(samples["sup_signed"], 0.0) ** p
    return {"pos": estimate_from_samples(pos), "abs": estimate_from_samples(samples["sup_abs"] ** p)}


def tail_from_samples(sups: np.ndarray, delta_grid: Sequence[float]) -> TailData:
    d = np.asarray(delta_grid, dtype=float)
    if np.any(d < 0) or np.any(np.diff(d) < 0):
        raise ValueError("delta grid must be ascending and nonnegative")
    sups = np.asarray(sups)
    M = sups.size
    counts = np.array([int(np.count_nonzero(sups >= x)) for x in d])
    lo, hi = [], []
    for c in counts:
        ci = binomtest(int(c), M).proportion_ci(confidence_level=0.95, method="wilson")
        lo.append(ci.low)
        hi.append(ci.high)
    return TailData(d, counts, M, counts / M, np.array(lo), np.array(hi))


def empirical_tail(exp: Experiment, delta_grid: Sequence[float], samples: dict | None = None) -> TailData:
    """P(max_j |phi(Z2(t_j))| >= delta) with Wilson 95% intervals."""
    samples = samples if samples is not None else sup_samples(exp)
    return tail_from_samples(samples["sup_abs"], delta_grid)


def default_delta_grid(exp: Experiment, alpha: float, points: int = 10) -> np.ndarray:
    """Seed-independent grid: multiples of the largest grid std of phi(Z2)."""
    from .special_functions import c_alpha
    var = (exp.phi.h[:, None] ** 2 * _z2_unit_variance(exp)).sum(axis=0)
    sd = c_alpha(alpha) * math.sqrt(var.max())
    return sd * np.linspace(0.5, 3.5, points)


def _z2_unit_variance(exp: Experiment) -> np.ndarray:
    n = exp.grid.n
    v = np.zeros((exp.table.N, n + 1))
    for k in range(exp.table.N):
        v[k, 1:] = np.convolve(exp.table.values[k, 1:] ** 2, exp.noise.sigma[k, :-1] ** 2)[:n] * exp.grid.dt
    return v


def layer_cake_check(sups: np.ndarray, p: float, points: int = 4001) -> dict:
    """Direct E S^p against int_0^inf p d^(p-1) P(S >= d) dd on the same sample."""
    sups = np.asarray(sups, dtype=float)
    direct = estimate_from_samples(sups**p)
    d = np.linspace(0.0, sups.max(), points)
    srt = np.sort(sups)
    tail = 1.0 - np.searchsorted(srt, d, side="left") / sups.size
    recon = float(np.trapezoid(p * d ** (p - 1.0) * tail, d))
    combined = math.sqrt(2.0) * direct.stderr
    return {"direct": direct.value, "direct_stderr": direct.stderr, "reconstructed": recon,
            "combined_stderr": combined, "agree": abs(direct.value - recon) <= 3.0 * combined}


def eq22_estimate(exp: Experiment, eta: float, M: int | None = None, start: int = 0) -> Estimate:
    """Monte Carlo of int_0^T E exp(|Y(t)|^2 / (9 eta)) dt, alpha0-singular Y."""
    a0 = exp.config.params.alpha0
    T = exp.grid.T

    def fn(bundle):
        y = eval_Y(exp.table, exp.noise, bundle, a0)
        sq = (y.values**2).sum(axis=-2)
        return {"g": np.exp(sq[..., 1:] / (9.0 * eta)).mean(axis=-1) * T}

    return estimate_from_samples(map_paths(exp, fn, M, start)["g"])


def _slope(levels, errors) -> float:
    x = np.log2(np.asarray(levels, dtype=float))
    y = np.log2(np.asarray(errors, dtype=float))
    return float(-np.polyfit(x, y, 1)[0])


def convergence_study(config: ExperimentConfig, quantity: str, levels: Sequence[int]) -> OrderReport:
    """Errors over dyadic grid levels and the fitted order (negative log2 slope).

    quantity: ``resolvent`` (max error vs closed form), ``frac_integral``
    (uniform error of I_alpha 1 with the step reconstruction), ``z1z2``
    (sup|Z1-Z2| / sup|Z2| on path 0, coupled across levels), ``semigroup``
    (I_a I_b sin vs I_{a+b} sin with the first mode's resolvent weight,
    a = alpha, b = 0.7 - alpha), ``kappa`` (kappa_T vs the finest level).
    """
    levels = [int(v) for v in levels]
    if len(levels) < 3 or any(b != 2 * a for a, b in zip(levels, levels[1:])):
        raise ValueError("need at least three levels, each doubling the previous")
    T = config.T
    alpha = config.params.alpha
    errors: list[float] = []
    reference = "closed form"
    if quantity == "resolvent":
        for n in levels:
            g = TimeGrid(T, n)
            tab = assemble_resolvent(config.spectrum, config.kernel, g, "quadrature")
            exact = np.vstack([analytic_resolvent(config.kernel, mu, g) for mu in config.spectrum.mu])
            errors.append(float(np.abs(tab.values - exact).max()))
    elif quantity == "frac_integral":
        F = lambda t: t**alpha / gamma_fn(alpha + 1.0)
        for n in levels:
            g = TimeGrid(T, n)
            errors.append(uniform_error_piecewise_constant(frac_integral(alpha, None, np.ones(n + 1), g), F, g))
    elif quantity == "semigroup":
        sp = Spectrum.explicit(config.spectrum.mu[:1])
        for n in levels:
            g = TimeGrid(T, n)
            w = assemble_resolvent(sp, Kernel.constant(), g)
            errors.append(check_semigroup_property(alpha, 0.7 - alpha, np.sin(g.nodes), w, g))
        reference = "composition law"
    elif quantity == "z1z2":
        fine_cfg = config.with_(n=levels[-1])
        fine_exp = Experiment.build(fine_cfg)
        fine = generate_paths(fine_exp.noise, fine_exp.grid, config.seed, 1)[0]
        for n in levels:
            exp = Experiment.build(config.with_(n=n))
            b = coarsen_bundle(fine, levels[-1] // n)
            y = eval_Y(exp.table, exp.noise, b, alpha)
            z1 = eval_Z1(exp.table, y, alpha).values
            z2 = eval_Z2(exp.table, exp.noise, b, alpha).values
            errors.append(float(np.abs(z1 - z2).max() / np.abs(z2).max()))
        reference = "Z2 on the coupled path"
    elif quantity == "kappa":
        p = config.params
        vals = []
        for n in levels:
            exp = Experiment.build(config.with_(n=n))
            vals.append(ineq.kappa_T(exp.norms, p.alpha0, p.p0, exp.grid).value)
        errors = [abs(v - vals[-1]) for v in vals[:-1]]
        levels = levels[:-1]
        reference = "finest level"
    else:
        raise ValueError(f"unknown convergence quantity {quantity!r}")
    slope = _slope(levels, errors) if all(e > 0 for e in errors) else math.inf
    return OrderReport(quantity, levels, errors, slope, reference)
