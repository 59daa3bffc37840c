"""Right-hand sides of the maximal inequalities, conditions (kappa) and eta, and
pathwise comparisons of Z1 against Z2.

Two right-hand sides are produced for each maximal inequality.  ``literal``
uses the stated constant unchanged; ``corrected`` keeps the Hoelder and
Young factors of the proof chain and restores the C_alpha^p factor coming from
Z1 = C_alpha * I_alpha Y_alpha.  Only the corrected chain is a valid bound,
and only it decides pass/fail.

The moment constant of the stochastic integral is c = (p-1)^(p/2): with a
deterministic psi the integrals are Gaussian, and hypercontractivity gives
E|G|^p <= (p-1)^(p/2) (E|G|^2)^(p/2).
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import TYPE_CHECKING, NamedTuple, Sequence

import numpy as np

from .fractional_calculus import FracParams, power_cell_weights, singular_integral
from .resolvent import Norms, ResolventTable, TimeGrid
from .special_functions import c_alpha, gamma_fn
from .stochastics import NoiseModel, ProcessPath, y_kernel

if TYPE_CHECKING:
    from .montecarlo import Estimate, TailData

__all__ = [
    "Functional",
    "BoundReport",
    "TailReport",
    "QuadResult",
    "eval_functional",
    "lemma1_compare",
    "lemma1_kernel",
    "lemma1_kernel_quadrature",
    "lemma1_variance_oracle",
    "moment_constant",
    "thm1_rhs",
    "thm2_rhs",
    "kappa_T",
    "eta_sup",
    "y_variance",
    "eq22_closed_form",
    "thm3_tail",
]


@dataclass(frozen=True)
class Functional:
    """phi(x) = (h, x) through its Riesz representer h."""

    h: np.ndarray

    def __post_init__(self):
        h = np.array(self.h, dtype=float).ravel()
        h.setflags(write=False)
        object.__setattr__(self, "h", h)

    @property
    def norm(self) -> float:
        return float(np.sqrt(self.h @ self.h))

    @classmethod
    def coordinate(cls, k: int, N: int) -> "Functional":
        h = np.zeros(N)
        h[k] = 1.0
        return cls(h)

    @classmethod
    def parse(cls, text: str, N: int) -> "Functional":
        """``e1`` .. ``eN``, ``ones`` or a comma-separated list."""
        text = text.strip().lower()
        if text == "ones":
            return cls(np.ones(N))
        if text.startswith("e") and text[1:].isdigit():
            k = int(text[1:])
            if not 1 <= k <= N:
                raise ValueError(f"functional {text} out of range for {N} modes")
            return cls.coordinate(k - 1, N)
        vals = [float(v) for v in text.split(",")]
        if len(vals) != N:
            raise ValueError(f"functional has {len(vals)} coefficients, expected {N}")
        return cls(np.array(vals))


def eval_functional(phi: Functional, path: ProcessPath, t_index=None):
    """sum_k h_k v_{k,j}; all nodes when ``t_index`` is None.  Batched paths allowed."""
    v = path.values
    if v.shape[-2] != phi.h.size:
        raise ValueError(f"functional has {phi.h.size} coefficients, path has {v.shape[-2]} modes")
    if t_index is None:
        return np.einsum("k,...kj->...j", phi.h, v)
    if not -v.shape[-1] <= t_index < v.shape[-1]:
        raise IndexError("time index out of range")
    return np.einsum("k,...k->...", phi.h, v[..., t_index])


# --- factorization comparison ---------------------------------------------

def lemma1_compare(z1: ProcessPath, z2: ProcessPath, phi: Functional, tol: float = 0.0) -> dict:
    """Statistics of phi(Z2(t_j)) - phi(Z1(t_j)) over the grid (and over paths if batched)."""
    if z1.label != "Z1" or z2.label != "Z2":
        raise ValueError("expected a Z1 path and a Z2 path")
    if z1.source != z2.source:
        raise ValueError("Z1 and Z2 were built from different path bundles")

    def stats(h: Functional) -> dict:
        d = eval_functional(h, z2) - eval_functional(h, z1)
        d = d[..., 1:]
        return {
            "max_excess": float(max(0.0, d.max())),
            "violation_fraction": float(np.count_nonzero(d > tol) / d.size),
            "points": int(d.size),
        }

    N = phi.h.size
    return {
        "tol": float(tol),
        "functional": stats(phi),
        "coordinates": [stats(Functional.coordinate(k, N)) for k in range(N)],
    }


def lemma1_kernel(table: ResolventTable, alpha: float, rule: str = "right") -> np.ndarray:
    """Discrete kernel K(T, t_r), r = 0..n-1, with Z1(T) - Z2(T) = sum_r K_r psi_r dW_r.

    Explicit double sums matched to the evaluators in ``stochastics``; one row per mode.
    """
    n, dt = table.grid.n, table.grid.dt
    s = table.values
    w = power_cell_weights(alpha - 1.0, n, dt)
    C = c_alpha(alpha)
    K = np.zeros((table.N, n))
    for r in range(n):
        if rule == "right":
            l = np.arange(r + 1, n + 1)
            outer = w[n - l + 1] * s[:, n - l]
        elif rule == "left":
            l = np.arange(r + 1, n)
            outer = w[n - l] * s[:, n - l]
        else:
            raise ValueError(f"unknown Z1 rule {rule!r}")
        inner = ((l - r) * dt) ** (-alpha) * s[:, l - r]
        K[:, r] = (outer * inner).sum(axis=1) - C * s[:, n - r]
    return K


def _split_singular(alpha: float, g, length: float, m: int) -> float:
    """int_0^L u^-alpha (L-u)^(alpha-1) g(u) du, product-trapezoid on each half."""
    def half(exponent, other, flip):
        h = 0.5 * length / m
        a = h * np.arange(m)
        b = a + h
        e1, e2 = exponent + 1.0, exponent + 2.0
        m0 = (b**e1 - a**e1) / e1
        m1 = (b**e2 - a**e2) / e2 - a * m0
        ua, ub = (length - a, length - b) if flip else (a, b)
        fa, fb = other(ua) * g(ua), other(ub) * g(ub)
        return math.fsum(fa * m0 + (fb - fa) * m1 / h)

    near0 = half(-alpha, lambda u: (length - u) ** (alpha - 1.0), False)
    nearL = half(alpha - 1.0, lambda u: u ** (-alpha), True)
    return near0 + nearL


def lemma1_kernel_quadrature(resolvent, alpha: float, t: float, r: float, m: int = 2000) -> float:
    """Continuum K(t, r) = int_r^t (t-s)^(alpha-1) (s-r)^(-alpha) [s(t-s) s(s-r) - s(t-r)] ds.

    ``resolvent`` is a callable s(.) (e.g. a closed form).  Independent of the grid code.
    """
    L = t - r
    if L <= 0:
        return 0.0
    base = float(resolvent(L))
    g = lambda u: np.asarray(resolvent(L - u)) * np.asarray(resolvent(u)) - base
    return _split_singular(alpha, g, L, m)


def lemma1_variance_oracle(table: ResolventTable, noise: NoiseModel, phi: Functional,
                           alpha: float, rule: str = "right") -> float:
    """Var phi(Z1 - Z2)(T) = sum_k h_k^2 sum_r K_{k,r}^2 sigma_k(t_r)^2 dt."""
    K = lemma1_kernel(table, alpha, rule)
    per_mode = (K**2 * noise.sigma[:, :-1] ** 2).sum(axis=1) * table.grid.dt
    return float(phi.h**2 @ per_mode)


# --- maximal inequalities ------------------------------------------------

def moment_constant(p: float) -> float:
    """Gaussian moment constant c with E|G|^p <= c (E|G|^2)^(p/2)."""
    return (p - 1.0) ** (p / 2.0)


@dataclass
class BoundReport:
    theorem: str
    rhs_literal: float
    rhs_corrected: float
    constants: dict
    stated_range_admissible: bool = True
    lhs_abs: "Estimate | None" = None
    lhs_pos: "Estimate | None" = None
    sup_note: str = "sup over t <= T is the grid maximum"

    def attach_lhs(self, lhs_abs, lhs_pos) -> "BoundReport":
        self.lhs_abs = lhs_abs
        self.lhs_pos = lhs_pos
        return self

    @property
    def lhs_estimate(self) -> float:
        return self.lhs_abs.value

    @property
    def ratio_literal(self) -> float:
        return _ratio(self.lhs_abs.value, self.rhs_literal)

    @property
    def ratio_corrected(self) -> float:
        return _ratio(self.lhs_abs.value, self.rhs_corrected)

    @property
    def passed(self) -> bool:
        lhs = self.lhs_abs.value + 2.0 * self.lhs_abs.stderr
        return lhs <= self.rhs_corrected

    def to_dict(self) -> dict:
        out = {"theorem": self.theorem, "sup_note": self.sup_note,
               "stated_range_admissible": self.stated_range_admissible,
               "rhs_literal": self.rhs_literal, "rhs_corrected": self.rhs_corrected}
        out.update({f"const_{k}": v for k, v in self.constants.items()})
        if self.lhs_abs is not None:
            out.update({
                "lhs_estimate": self.lhs_abs.value, "lhs_stderr": self.lhs_abs.stderr,
                "lhs_paths": self.lhs_abs.M,
                "lhs_pos_estimate": self.lhs_pos.value, "lhs_pos_stderr": self.lhs_pos.stderr,
                "ratio_literal": self.ratio_literal, "ratio_corrected": self.ratio_corrected,
                "pass": self.passed,
            })
        return out


def _ratio(a: float, b: float) -> float:
    if b == 0.0:
        return 0.0 if a == 0.0 else math.inf
    return a / b


def _check_chain_admissible(params: FracParams):
    if not params.theorem1_admissible():
        raise ValueError(
            f"need 1/p < alpha < 1/2 for a finite Hoelder factor (p={params.p}, alpha={params.alpha})"
        )


def _chain(params: FracParams, norms: Norms, phi: Functional, grid: TimeGrid,
           young_norm2: np.ndarray, psi_norm: np.ndarray) -> dict:
    p, q, a = params.p, params.q, params.alpha
    T, dt = grid.T, grid.dt
    C = c_alpha(a)
    c = moment_constant(p)
    c_p = phi.norm**p / gamma_fn(a) ** p
    c_tilde = c * c_p / gamma_fn(1.0 - a) ** p
    opq = norms.op_norm**q
    # sup_t int_0^t u^{(a-1)q} ||S(u)||^q du is attained at t = T (nonnegative integrand)
    holder_int = singular_integral(opq, (a - 1.0) * q, dt)
    # literal form: (t-s)^{(a-1)q} replaced by T^{(a-1)q}
    holder_lit_int = T ** ((a - 1.0) * q) * singular_integral(opq, 0.0, dt)
    young_int = singular_integral(young_norm2, -2.0 * a, dt)
    psi_int = singular_integral(psi_norm**p, 0.0, dt)
    return {
        "alpha": a, "p": p, "q": q, "T": T,
        "C_alpha": C,
        "C_alpha_p": C**p,
        "c": c,
        "h_norm": phi.norm,
        "c_p": c_p,
        "c_tilde_p": c_tilde,
        "holder_integral": holder_int,
        "holder_factor": holder_int ** (p / q),
        "holder_integral_literal": holder_lit_int,
        "holder_factor_literal": holder_lit_int ** (p / q),
        "young_integral": young_int,
        "young_factor": young_int ** (p / 2.0),
        "psi_integral": psi_int,
        "T_power": T ** (p / 2.0 - 1.0),
        "sup_S_p": float(norms.op_norm.max() ** p),
    }


def thm1_rhs(params: FracParams, norms: Norms, phi: Functional, grid: TimeGrid) -> BoundReport:
    """Both right-hand sides of the first maximal inequality (op norm of S, HS norm of psi)."""
    _check_chain_admissible(params)
    k = _chain(params, norms, phi, grid, norms.op_norm**2, np.sqrt(norms.psi_hs2))
    literal = k["c_tilde_p"] * k["sup_S_p"] * k["T_power"] * k["psi_integral"]
    corrected = (k["c_tilde_p"] * k["C_alpha_p"] * k["holder_factor"]
                 * k["young_factor"] * k["psi_integral"])
    return BoundReport("thm1", literal, corrected, k)


def thm2_rhs(params: FracParams, norms: Norms, phi: Functional, grid: TimeGrid) -> BoundReport:
    """Both right-hand sides of the HS-resolvent variant (HS norm of S, op norm of psi).

    c_hat_p is the first inequality's constant times the literal Hoelder
    factor.  The corrected chain needs alpha > 1/p; the stated range
    p < 1/alpha is recorded in ``stated_range_admissible`` only.
    """
    _check_chain_admissible(params)
    k = _chain(params, norms, phi, grid, norms.hs_norm**2, norms.psi_op)
    k["c_hat_p"] = k["c_tilde_p"] * k["holder_factor_literal"]
    k["hs_truncated_modes"] = int(norms.s2.shape[0])
    literal = k["c_hat_p"] * k["young_factor"] * k["psi_integral"]
    corrected = (k["c_tilde_p"] * k["C_alpha_p"] * k["holder_factor"]
                 * k["young_factor"] * k["psi_integral"])
    rep = BoundReport("thm2", literal, corrected, k)
    rep.stated_range_admissible = params.p < 1.0 / params.alpha
    return rep


# --- tail bound ---------------------------------------------------------

class QuadResult(NamedTuple):
    value: float
    error: float


def kappa_T(norms: Norms, alpha0: float, p0: float, grid: TimeGrid) -> QuadResult:
    """(int_0^T t^{(alpha0-1)p0} ||S(t)||^{p0} dt)^{1/p0}, error from one halving."""
    e = (alpha0 - 1.0) * p0
    if not e > -1.0:
        raise ValueError(f"kappa_T diverges: exponent (alpha0-1)p0 = {e} <= -1")
    g = norms.op_norm**p0
    fine = singular_integral(g, e, grid.dt) ** (1.0 / p0)
    if grid.n % 2 == 0 and grid.n >= 4:
        coarse = singular_integral(g[::2], e, 2.0 * grid.dt) ** (1.0 / p0)
        err = abs(fine - coarse)
    else:
        err = math.nan
    return QuadResult(fine, err)


def eta_sup(table: ResolventTable, noise: NoiseModel, alpha0: float, grid: TimeGrid | None = None) -> float:
    """Grid max of sum_k int_0^t (t-s)^{-2 alpha0} s_k(t-s)^2 sigma_k(s)^2 ds.

    Cell [t_i, t_{i+1}] gets the exact weight of (t_j - s)^{-2 alpha0} with
    s_k and sigma_k frozen at t_i, the same point the Ito sums use.
    """
    if not 0.0 < alpha0 < 0.5:
        raise ValueError("alpha0 must lie in (0, 1/2)")
    grid = grid or table.grid
    if grid != table.grid or noise.grid != grid:
        raise ValueError("grid mismatch")
    return float(_eta_profile(table, noise, alpha0).max())


def _eta_profile(table: ResolventTable, noise: NoiseModel, alpha0: float) -> np.ndarray:
    n = table.grid.n
    W = power_cell_weights(-2.0 * alpha0, n, table.grid.dt)
    prof = np.zeros(n + 1)
    for k in range(table.N):
        ker = W * table.values[k] ** 2
        prof[1:] += np.convolve(ker[1:], noise.sigma[k, :-1] ** 2)[:n]
    return prof


def y_variance(table: ResolventTable, noise: NoiseModel, alpha: float) -> np.ndarray:
    """Per-mode variance of the discrete Y(t_j): sum_{i<j} weight^2 sigma^2 dt (N x n+1)."""
    n = table.grid.n
    ker2 = y_kernel(table, alpha) ** 2
    v = np.zeros((table.N, n + 1))
    for k in range(table.N):
        v[k, 1:] = np.convolve(ker2[k, 1:], noise.sigma[k, :-1] ** 2)[:n] * table.grid.dt
    return v


def eq22_closed_form(table: ResolventTable, noise: NoiseModel, alpha0: float, eta: float) -> float:
    """int_0^T E exp(|Y(t)|^2 / (9 eta)) dt on the grid, from the Gaussian mgf.

    Right-endpoint rule over t_1..t_n, matching the Monte Carlo estimator.
    """
    v = y_variance(table, noise, alpha0)
    x = 2.0 * v / (9.0 * eta)
    if np.any(x >= 1.0):
        return math.inf
    per_t = np.prod(1.0 / np.sqrt(1.0 - x), axis=0)
    return float(per_t[1:].mean() * table.grid.T)


@dataclass
class TailReport:
    kappa_T: float
    eta: float
    delta_grid: list
    empirical_tail: list
    wilson_lo: list
    wilson_hi: list
    counts: list
    paths: int
    bound_values: list
    fitted_C: float
    alpha0: float
    p0: float
    T: float
    kappa_T_error: float = math.nan
    eq22_estimate: float = math.nan
    eq22_stderr: float = math.nan
    eq22_closed_form: float = math.nan
    eq22_bound: float = math.nan
    sup_note: str = "sup over t <= T is the grid maximum"
    extras: dict = field(default_factory=dict)

    @property
    def eq22_ok(self) -> bool:
        return self.eq22_estimate <= self.eq22_bound + 3.0 * self.eq22_stderr

    @property
    def eq22_agrees(self) -> bool:
        return abs(self.eq22_estimate - self.eq22_closed_form) <= 3.0 * self.eq22_stderr

    def dominated(self) -> bool:
        emp = np.asarray(self.empirical_tail)
        return bool(np.all(emp <= self.fitted_C * np.asarray(self.bound_values) * (1 + 1e-12)))

    def to_dict(self) -> dict:
        d = asdict(self)
        extras = d.pop("extras")
        d.update(extras)
        d["eq22_ok"] = self.eq22_ok
        d["eq22_agrees"] = self.eq22_agrees
        return d


def thm3_tail(kappa: float, eta: float, delta_grid: Sequence[float], empirical: "TailData",
              alpha0: float, p0: float, T: float, kappa_error: float = math.nan,
              eq22: "Estimate | None" = None, eq22_closed: float = math.nan) -> TailReport:
    """Tail bound exp(-delta^2 / (kappa^2 eta)) against the empirical tail.

    fitted_C is the smallest C with C * bound >= the Wilson upper limit at
    every delta where the tail was observed; it is 0 for an all-zero tail.
    """
    if not (kappa > 0 and eta > 0):
        raise ValueError("kappa_T and eta must be positive")
    d = np.asarray(delta_grid, dtype=float)
    bound = np.exp(-(d**2) / (kappa**2 * eta))
    emp = np.asarray(empirical.p_emp)
    seen = emp > 0
    fitted = float((np.asarray(empirical.wilson_hi)[seen] / bound[seen]).max()) if seen.any() else 0.0
    rep = TailReport(
        kappa_T=float(kappa), eta=float(eta), delta_grid=d.tolist(),
        empirical_tail=emp.tolist(), wilson_lo=list(map(float, empirical.wilson_lo)),
        wilson_hi=list(map(float, empirical.wilson_hi)), counts=list(map(int, empirical.counts)),
        paths=int(empirical.M), bound_values=bound.tolist(), fitted_C=fitted,
        alpha0=float(alpha0), p0=float(p0), T=float(T), kappa_T_error=float(kappa_error),
        eq22_bound=4.0 * T, eq22_closed_form=float(eq22_closed),
    )
    if eq22 is not None:
        rep.eq22_estimate = float(eq22.value)
        rep.eq22_stderr = float(eq22.stderr)
    rep.extras["C_alpha0"] = c_alpha(alpha0)
    rep.extras["sin_factor"] = math.sin(alpha0 * math.pi) / math.pi
    return rep
