"""Gamma, Mittag-Leffler and the reflection constant C_alpha.

Everything here works in 64-bit floats.  The Mittag-Leffler series falls back
to mpmath element-wise when float cancellation would break the requested
absolute tolerance (large negative arguments).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import mpmath
import numpy as np
from scipy.special import gamma as _gamma_vec
from scipy.special import gammaln

__all__ = [
    "MLParams",
    "NonConvergenceError",
    "gamma_fn",
    "mittag_leffler",
    "c_alpha",
]

_EPS = np.finfo(float).eps
ML_ZMIN = -50.0


class NonConvergenceError(ArithmeticError):
    """Series tail bound not reached within the allowed number of terms."""


@dataclass(frozen=True)
class MLParams:
    beta: float
    max_terms: int = 2000
    tol: float = 1e-13

    def __post_init__(self):
        if not 0.0 < self.beta <= 2.0:
            raise ValueError(f"Mittag-Leffler order must lie in (0, 2], got {self.beta}")
        if self.max_terms < 16:
            raise ValueError("max_terms must be at least 16")
        if not self.tol > 0.0:
            raise ValueError("tol must be positive")


def gamma_fn(x: float) -> float:
    """Gamma function for positive real arguments."""
    x = float(x)
    if not x > 0.0 or math.isnan(x):
        raise ValueError(f"gamma_fn is defined here for x > 0 only, got {x}")
    # libm tgamma: correctly rounded to within a few ulp on (0, 171)
    return math.gamma(x)


def c_alpha(alpha: float) -> float:
    """Reflection constant Gamma(alpha) * Gamma(1 - alpha) = pi / sin(pi alpha)."""
    alpha = float(alpha)
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"c_alpha requires 0 < alpha < 1, got {alpha}")
    return gamma_fn(alpha) * gamma_fn(1.0 - alpha)


def _ml_mpmath(beta: float, z: float, tol: float, max_terms: int) -> float:
    # Digits: enough to absorb the largest term of the alternating series.
    n_star = max(1.0, abs(z) ** (1.0 / beta) / beta)
    log10_peak = max(0.0, (n_star * math.log(max(abs(z), 1e-300)) - gammaln(beta * n_star + 1.0)) / math.log(10))
    dps = int(log10_peak) + 25 + int(-math.log10(tol))
    with mpmath.workdps(dps):
        zz = mpmath.mpf(z)
        b = mpmath.mpf(beta)
        total = mpmath.mpf(0)
        term_abs_prev = None
        for n in range(max_terms):
            term = zz**n / mpmath.gamma(b * n + 1)
            total += term
            a = abs(term)
            if n > 0 and term_abs_prev is not None and a < term_abs_prev:
                ratio = a / term_abs_prev
                if ratio < 1 and a * ratio / (1 - ratio) < 1e-3 * tol:
                    return float(total)
            term_abs_prev = a
    raise NonConvergenceError(f"E_{beta}({z}) did not converge in {max_terms} terms (mpmath path)")


def mittag_leffler(params: MLParams, z):
    """E_beta(z) = sum_n z^n / Gamma(beta n + 1) for real z >= -50.

    Accepts a scalar or an array and returns the same shape.  The series is
    truncated once the remainder bound |t_N| / (1 - r_N) drops below
    ``params.tol``; the term ratios r_n decrease in n (log-convexity of Gamma),
    so this bound is rigorous.
    """
    beta, tol, max_terms = params.beta, params.tol, params.max_terms
    za = np.asarray(z, dtype=float)
    scalar = za.ndim == 0
    zf = np.atleast_1d(za).ravel()
    if np.any(np.isnan(zf)):
        raise ValueError("mittag_leffler: NaN argument")
    if np.any(zf < ML_ZMIN):
        raise ValueError(f"mittag_leffler: argument below {ML_ZMIN} is out of range")

    out = np.ones_like(zf)
    nz = zf != 0.0
    if np.any(nz):
        zz = zf[nz]
        logz = np.log(np.abs(zz))
        neg = zz < 0.0
        total = np.zeros_like(zz)
        err_sum = np.zeros_like(zz)
        done = np.zeros(zz.shape, dtype=bool)
        block = 64
        n0 = 0
        while not done.all():
            if n0 >= max_terms:
                raise NonConvergenceError(
                    f"E_{beta} series: tail bound {tol} not met within {max_terms} terms"
                )
            n = np.arange(n0, min(n0 + block, max_terms) + 1, dtype=float)
            logt = n[None, :] * logz[:, None] - gammaln(beta * n + 1.0)[None, :]
            sign = np.where(neg[:, None] & (n[None, :] % 2 == 1), -1.0, 1.0)
            # direct z^n / Gamma(.) is accurate to a few ulp; log space only past overflow
            direct = (beta * n + 1.0 < 170.0)[None, :] & (logt < 700.0) & (n[None, :] * logz[:, None] < 700.0)
            with np.errstate(over="ignore", invalid="ignore"):
                dval = np.power(np.abs(zz)[:, None], n[None, :]) / _gamma_vec(beta * n + 1.0)[None, :]
            terms = sign * np.where(direct, dval, np.exp(logt))
            relerr = np.where(direct, 4.0, 4.0 + np.abs(logt))
            mags = np.abs(terms)
            ratio = mags[:, 1:] / np.where(mags[:, :-1] > 0, mags[:, :-1], np.inf)
            tail = np.where(ratio < 1.0, mags[:, 1:] / (1.0 - np.minimum(ratio, 1.0 - 1e-16)), np.inf)
            # first index in the block where the remainder after it is below tol
            ok = tail < 0.5 * tol
            hit = ok.any(axis=1) & ~done
            stop = np.where(ok.any(axis=1), ok.argmax(axis=1), terms.shape[1] - 1)
            cols = np.arange(terms.shape[1] - 1)[None, :]
            keep = (cols <= stop[:, None]) | ~ok.any(axis=1)[:, None]
            keep &= ~done[:, None]
            block_terms = np.where(keep, terms[:, :-1], 0.0)
            total += block_terms.sum(axis=1)
            err_sum += (np.abs(block_terms) * relerr[:, :-1]).sum(axis=1)
            done |= hit
            n0 += block
        # rounding: term-wise relative error from exp(log) plus summation
        round_err = err_sum * _EPS
        result = total
        bad = np.flatnonzero(round_err > 0.5 * tol)
        for i in bad:
            result[i] = _ml_mpmath(beta, float(zz[i]), tol, max_terms)
        out[nz] = result
    out = out.reshape(np.shape(za)) if not scalar else out.reshape(())
    return float(out) if scalar else out
