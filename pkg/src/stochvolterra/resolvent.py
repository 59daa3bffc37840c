"""Scalar resolvents s(t; gamma) and the diagonal resolvent family S(t).

The scalar equation is

    s(t) + gamma * int_0^t a(t - tau) s(tau) dtau = 1,

solved by product integration: on every cell [t_i, t_{i+1}] the kernel is
integrated exactly and s is frozen at the right endpoint, which gives an
implicit update with diagonal weight 1 + gamma * b_1 > 0.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .special_functions import MLParams, gamma_fn, mittag_leffler

__all__ = [
    "TimeGrid",
    "Kernel",
    "Spectrum",
    "ResolventTable",
    "Norms",
    "kernel_cell_weights",
    "solve_scalar_resolvent",
    "analytic_resolvent",
    "assemble_resolvent",
    "resolvent_from_gammas",
    "operator_norms",
    "check_resolvent_equation",
    "check_submultiplicative",
    "check_corollary1",
    "write_resolvent_csv",
]


@dataclass(frozen=True)
class TimeGrid:
    T: float
    n: int

    def __post_init__(self):
        if not (self.T > 0 and math.isfinite(self.T)):
            raise ValueError(f"time horizon must be positive, got {self.T}")
        if int(self.n) != self.n or self.n < 2:
            raise ValueError(f"grid needs n >= 2 steps, got {self.n}")

    @property
    def dt(self) -> float:
        return self.T / self.n

    @property
    def nodes(self) -> np.ndarray:
        t = np.arange(self.n + 1) * self.dt
        t[-1] = self.T
        return t

    def coarsen(self, factor: int) -> "TimeGrid":
        if self.n % factor:
            raise ValueError(f"cannot coarsen n={self.n} by {factor}")
        return TimeGrid(self.T, self.n // factor)


@dataclass(frozen=True)
class Kernel:
    """The scalar kernel a(t): ``constant``, ``exponential`` or ``fractional``."""

    variant: str
    lam: float = 0.0
    beta: float = 1.0

    def __post_init__(self):
        if self.variant not in ("constant", "exponential", "fractional"):
            raise ValueError(f"unknown kernel variant {self.variant!r}")
        if self.variant == "exponential" and not self.lam > 0:
            raise ValueError("exponential kernel needs lambda > 0")
        if self.variant == "fractional" and not 0.0 < self.beta < 2.0:
            raise ValueError("fractional kernel needs beta in (0, 2)")

    @classmethod
    def constant(cls) -> "Kernel":
        return cls("constant")

    @classmethod
    def exponential(cls, lam: float) -> "Kernel":
        return cls("exponential", lam=float(lam))

    @classmethod
    def fractional(cls, beta: float) -> "Kernel":
        return cls("fractional", beta=float(beta))

    @classmethod
    def parse(cls, text: str) -> "Kernel":
        """``constant``, ``exp:<lambda>`` or ``frac:<beta>``."""
        text = text.strip().lower()
        if text == "constant":
            return cls.constant()
        name, _, arg = text.partition(":")
        if name in ("exp", "exponential") and arg:
            return cls.exponential(float(arg))
        if name in ("frac", "fractional") and arg:
            return cls.fractional(float(arg))
        raise ValueError(f"cannot parse kernel spec {text!r}")

    def spec(self) -> str:
        if self.variant == "constant":
            return "constant"
        if self.variant == "exponential":
            return f"exp:{self.lam!r}"
        return f"frac:{self.beta!r}"

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        if self.variant == "constant":
            return np.ones_like(t)
        if self.variant == "exponential":
            return np.exp(-self.lam * t)
        with np.errstate(divide="ignore"):
            return t ** (self.beta - 1.0) / gamma_fn(self.beta)

    def antiderivative(self, t):
        """int_0^t a(u) du, closed form for every variant."""
        t = np.asarray(t, dtype=float)
        if self.variant == "constant":
            return t.copy()
        if self.variant == "exponential":
            return -np.expm1(-self.lam * t) / self.lam
        return t**self.beta / gamma_fn(self.beta + 1.0)

    def integral_abs(self, T: float) -> float:
        # a >= 0 for all three variants
        return float(self.antiderivative(T))


@dataclass(frozen=True)
class Spectrum:
    mu: np.ndarray
    generator: str = "explicit-list"

    def __post_init__(self):
        mu = np.asarray(self.mu, dtype=float).ravel()
        if mu.size < 1:
            raise ValueError("spectrum needs at least one mode")
        if np.any(mu <= 0) or not np.all(np.isfinite(mu)):
            raise ValueError("spectrum eigenvalues must be positive and finite")
        if np.any(np.diff(mu) <= 0):
            raise ValueError("spectrum must be strictly ascending")
        mu.setflags(write=False)
        object.__setattr__(self, "mu", mu)

    @property
    def N(self) -> int:
        return self.mu.size

    @classmethod
    def explicit(cls, values: Iterable[float]) -> "Spectrum":
        return cls(np.asarray(list(values), dtype=float), "explicit-list")

    @classmethod
    def dirichlet_laplacian_1d(cls, L: float, N: int) -> "Spectrum":
        k = np.arange(1, N + 1, dtype=float)
        return cls((k * math.pi / L) ** 2, f"dirichlet-laplacian-1d(L={L!r})")

    @classmethod
    def parse(cls, text: str, N: int | None = None) -> "Spectrum":
        """``list:1,4,9`` or ``laplace1d:<L>`` (the latter needs ``N``)."""
        name, _, arg = text.strip().partition(":")
        if name == "list":
            spec = cls.explicit(float(v) for v in arg.split(","))
            if N is not None and N != spec.N:
                raise ValueError(f"--modes {N} contradicts a {spec.N}-entry spectrum list")
            return spec
        if name in ("laplace1d", "dirichlet-laplacian-1d"):
            return cls.dirichlet_laplacian_1d(float(arg), 1 if N is None else int(N))
        raise ValueError(f"cannot parse spectrum spec {text!r}")


@dataclass(frozen=True)
class ResolventTable:
    """Rows s_{k,j} = s(t_j; gamma_k), immutable once built."""

    values: np.ndarray
    gammas: np.ndarray
    kernel: Kernel
    grid: TimeGrid
    method: str

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        g = np.array(self.gammas, dtype=float).ravel()
        if v.ndim != 2 or v.shape != (g.size, self.grid.n + 1):
            raise ValueError("resolvent table shape does not match modes x grid")
        v.setflags(write=False)
        g.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "gammas", g)

    @property
    def N(self) -> int:
        return self.gammas.size

    def coarsen(self, factor: int) -> "ResolventTable":
        return ResolventTable(self.values[:, ::factor], self.gammas, self.kernel,
                              self.grid.coarsen(factor), self.method)


def kernel_cell_weights(kernel: Kernel, grid: TimeGrid) -> np.ndarray:
    """b_m = int_{(m-1)dt}^{m dt} a(u) du for m = 0..n (b_0 = 0)."""
    A = kernel.antiderivative(np.arange(grid.n + 1) * grid.dt)
    b = np.zeros(grid.n + 1)
    b[1:] = np.diff(A)
    return b


def _solve_rows(kernel: Kernel, gammas: np.ndarray, grid: TimeGrid) -> np.ndarray:
    gammas = np.asarray(gammas, dtype=float).ravel()
    if np.any(gammas < 0):
        raise ValueError("resolvent parameter gamma must be nonnegative")
    b = kernel_cell_weights(kernel, grid)
    n = grid.n
    diag = 1.0 + gammas * b[1]
    if np.any(diag <= 0):
        raise ZeroDivisionError("singular implicit step in resolvent solve")
    s = np.empty((gammas.size, n + 1))
    s[:, 0] = 1.0
    for j in range(1, n + 1):
        # history: sum_{l=1}^{j-1} b_{j-l+1} s_l
        hist = s[:, 1:j] @ b[j:1:-1] if j > 1 else 0.0
        s[:, j] = (1.0 - gammas * hist) / diag
    return s


def solve_scalar_resolvent(kernel: Kernel, gamma: float, grid: TimeGrid) -> np.ndarray:
    """Values s_j ~ s(t_j; gamma) on the grid via implicit product integration."""
    return _solve_rows(kernel, np.array([gamma]), grid)[0]


def analytic_resolvent(kernel: Kernel, gamma: float, grid: TimeGrid,
                       ml: MLParams | None = None) -> np.ndarray:
    """Closed-form s(t_j; gamma) for the three kernel variants."""
    if gamma < 0:
        raise ValueError("resolvent parameter gamma must be nonnegative")
    t = grid.nodes
    if kernel.variant == "constant":
        return np.exp(-gamma * t)
    if kernel.variant == "exponential":
        lam = kernel.lam
        return (lam + gamma * np.exp(-(lam + gamma) * t)) / (lam + gamma)
    ml = ml or MLParams(kernel.beta)
    if ml.beta != kernel.beta:
        raise ValueError("Mittag-Leffler order differs from kernel order")
    return np.asarray(mittag_leffler(ml, -gamma * t**kernel.beta))


def resolvent_from_gammas(kernel: Kernel, gammas: Sequence[float], grid: TimeGrid,
                          method: str = "quadrature") -> ResolventTable:
    """Table for arbitrary nonnegative gammas (e.g. to include a gamma = 0 row)."""
    gammas = np.asarray(gammas, dtype=float).ravel()
    if method == "quadrature":
        vals = _solve_rows(kernel, gammas, grid)
    elif method == "analytic":
        vals = np.vstack([analytic_resolvent(kernel, g, grid) for g in gammas])
    else:
        raise ValueError(f"unknown resolvent method {method!r}")
    return ResolventTable(vals, gammas, kernel, grid, method)


def assemble_resolvent(spectrum: Spectrum, kernel: Kernel, grid: TimeGrid,
                       method: str = "quadrature") -> ResolventTable:
    """S(t) e_k = s(t; mu_k) e_k, one row per mode."""
    return resolvent_from_gammas(kernel, spectrum.mu, grid, method)


@dataclass(frozen=True)
class Norms:
    """Grid tables of the norms used by the inequality module.

    ``hs_norm`` is the truncated Hilbert-Schmidt norm over the retained modes.
    """

    op_norm: np.ndarray
    hs_norm: np.ndarray
    psi_hs2: np.ndarray
    psi_op: np.ndarray
    s2: np.ndarray = field(repr=False)
    sigma2: np.ndarray = field(repr=False)

    def composite(self, j: int, i: int) -> float:
        """||S(t_j) psi(t_i)||_2^2 = sum_k s_{k,j}^2 sigma_k(t_i)^2."""
        return float(self.s2[:, j] @ self.sigma2[:, i])

    def composite_matrix(self) -> np.ndarray:
        return self.s2.T @ self.sigma2


def operator_norms(table: ResolventTable, noise) -> Norms:
    """Operator, truncated Hilbert-Schmidt and noise norms per grid node.

    ``noise`` is anything with a ``sigma`` array of shape (N, n+1).
    """
    sigma = np.asarray(noise.sigma, dtype=float)
    if sigma.shape != table.values.shape:
        raise ValueError(f"noise shape {sigma.shape} does not match table {table.values.shape}")
    s = table.values
    s2 = s**2
    sigma2 = sigma**2
    return Norms(
        op_norm=np.abs(s).max(axis=0),
        hs_norm=np.sqrt(s2.sum(axis=0)),
        psi_hs2=sigma2.sum(axis=0),
        psi_op=np.abs(sigma).max(axis=0),
        s2=s2,
        sigma2=sigma2,
    )


def _history_quadrature(b: np.ndarray, s: np.ndarray) -> np.ndarray:
    """Q_j = sum_{l=1}^{j} b_{j-l+1} s_l for every row, with Q_0 = 0 (direct sums)."""
    n = s.shape[1] - 1
    Q = np.zeros_like(s)
    for k in range(s.shape[0]):
        Q[k, 1:] = np.convolve(b[1:], s[k, 1:])[:n]
    return Q


def check_resolvent_equation(table: ResolventTable, kernel: Kernel | None = None) -> np.ndarray:
    """Max |s_j + gamma Q_j[a, s] - 1| per mode under the solver's own rule."""
    kernel = kernel or table.kernel
    b = kernel_cell_weights(kernel, table.grid)
    Q = _history_quadrature(b, table.values)
    r = table.values + table.gammas[:, None] * Q - 1.0
    return np.abs(r).max(axis=1)


def check_submultiplicative(table: ResolventTable, tol: float = 0.0) -> list[dict]:
    """Scan all grid pairs t_i + t_j <= T for s(t_i + t_j) > s(t_i) s(t_j) + tol.

    Returns one dict per mode with signed and absolute-value violation counts,
    the maximal excess, and the largest |s(t_i+t_j) - s(t_i)s(t_j)| seen.
    """
    n = table.grid.n
    reports = []
    for k, row in enumerate(table.values):
        pairs = 0
        cnt_s = cnt_a = cnt_s0 = cnt_a0 = 0
        max_s = max_a = max_dev = 0.0
        for i in range(n + 1):
            js = np.arange(n - i + 1)
            lhs = row[i + js]
            rhs = row[i] * row[js]
            ex_s = lhs - rhs
            ex_a = np.abs(lhs) - np.abs(rhs)
            pairs += js.size
            cnt_s += int(np.count_nonzero(ex_s > tol))
            cnt_a += int(np.count_nonzero(ex_a > tol))
            cnt_s0 += int(np.count_nonzero(ex_s > 0))
            cnt_a0 += int(np.count_nonzero(ex_a > 0))
            max_s = max(max_s, float(ex_s.max()))
            max_a = max(max_a, float(ex_a.max()))
            max_dev = max(max_dev, float(np.abs(ex_s).max()))
        reports.append({
            "mode": k,
            "gamma": float(table.gammas[k]),
            "pairs": pairs,
            "tol": float(tol),
            "violations": cnt_s,
            "violations_abs": cnt_a,
            "violations_untolerated": cnt_s0,
            "violations_abs_untolerated": cnt_a0,
            "max_excess": max_s,
            "max_excess_abs": max_a,
            "max_deviation": max_dev,
        })
    return reports


def check_corollary1(table: ResolventTable, x: Sequence[float], tol: float = 0.0,
                     functionals: np.ndarray | None = None) -> dict:
    """Check |S(t+tau)x| <= |S(t)S(tau)x| over all grid pairs.

    Optional ``functionals`` (rows h) are checked in the signed form
    (h, S(t+tau)x) <= (h, S(t)S(tau)x) + tol; only a violation rate is
    reported for those since the signed form is not implied by submultiplicativity.
    """
    x = np.asarray(x, dtype=float).ravel()
    if x.size != table.N:
        raise ValueError(f"x has {x.size} coefficients, table has {table.N} modes")
    s = table.values
    n = table.grid.n
    H = None if functionals is None else np.atleast_2d(np.asarray(functionals, dtype=float))
    pairs = viol = 0
    max_excess = 0.0
    f_pairs = f_viol = 0
    for i in range(n + 1):
        js = np.arange(n - i + 1)
        a = s[:, i + js] * x[:, None]
        b = s[:, [i]] * s[:, js] * x[:, None]
        ex = np.sqrt((a**2).sum(axis=0)) - np.sqrt((b**2).sum(axis=0))
        pairs += js.size
        viol += int(np.count_nonzero(ex > tol))
        max_excess = max(max_excess, float(ex.max()))
        if H is not None:
            fex = H @ a - H @ b
            f_pairs += fex.size
            f_viol += int(np.count_nonzero(fex > tol))
    out = {"pairs": pairs, "tol": float(tol), "violations": viol, "max_excess": max_excess}
    if H is not None:
        out["functional_pairs"] = f_pairs
        out["functional_violations"] = f_viol
        out["functional_violation_rate"] = f_viol / f_pairs if f_pairs else 0.0
    return out


def write_resolvent_csv(table: ResolventTable, path) -> None:
    t = table.grid.nodes
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["mode", "mu", "t", "s"])
        for k in range(table.N):
            mu = repr(float(table.gammas[k]))
            for j in range(t.size):
                w.writerow([k + 1, mu, repr(float(t[j])), repr(float(table.values[k, j]))])
