"""Small-scale invariant suite behind the ``selftest`` subcommand.

Every check is deterministic given the seed; worker count only changes
scheduling, never results.
"""
from __future__ import annotations

import math

import numpy as np

from . import montecarlo as mc
from .fractional_calculus import FracParams
from .resolvent import (
    Kernel,
    Spectrum,
    TimeGrid,
    analytic_resolvent,
    assemble_resolvent,
    check_resolvent_equation,
    solve_scalar_resolvent,
)
from .special_functions import MLParams, c_alpha, mittag_leffler
from .stochastics import NoiseModel, eval_Y, eval_Z1, eval_Z2, eval_mild_solution, generate_paths


def _check(name: str, passed, **detail) -> dict:
    return {"name": name, "pass": bool(passed), **detail}


def check_special_functions() -> dict:
    a = np.linspace(0.01, 0.99, 99)
    refl = max(abs(c_alpha(x) - math.pi / math.sin(math.pi * x)) / c_alpha(x) for x in a)
    e1 = abs(float(mittag_leffler(MLParams(1.0), -1.0)) - math.exp(-1.0))
    e2 = abs(float(mittag_leffler(MLParams(2.0), -(math.pi / 2) ** 2)))
    return _check("special_functions", refl <= 1e-12 and e1 <= 1e-10 and e2 <= 1e-10,
                  reflection_rel_error=refl, E1_error=e1, E2_error=e2)


def check_resolvent(n: int = 1024) -> dict:
    cases = [("constant", 0.5, 1.0, 1e-3), ("constant", 2.0, 1.0, 1e-3),
             ("exp:1", 1.0, 1.0, 1e-3), ("frac:1.5", 1.0, 2.0, 5e-3)]
    errs, residuals = {}, {}
    ok = True
    for spec, g, T, tol in cases:
        k, grid = Kernel.parse(spec), TimeGrid(T, n)
        s = solve_scalar_resolvent(k, g, grid)
        e = float(np.abs(s - analytic_resolvent(k, g, grid)).max())
        tab = assemble_resolvent(Spectrum.explicit([g]), k, grid)
        r = float(check_resolvent_equation(tab).max())
        errs[f"{spec}/{g}"] = e
        residuals[f"{spec}/{g}"] = r
        ok &= e <= tol and r <= 1e-8
    return _check("resolvent_accuracy_and_residual", ok, n=n, errors=errs, residuals=residuals)


def check_submultiplicative() -> dict:
    from .cli import submult_report

    const = submult_report(Kernel.constant(), [1.0, 4.0], TimeGrid(1.0, 256))
    frac = submult_report(Kernel.fractional(1.5), [1.0, 4.0, 9.0], TimeGrid(2.0, 256))
    counts = [r["violations"] for r in frac["scan_solver_tol"]]
    return _check("submultiplicativity_scan", const["pass"] and frac["checks"]["gamma0_row_equality"],
                  constant_violations=[r["violations"] for r in const["scan_equality_tol"]],
                  fractional_violations_at_solver_tol=counts)


def check_factorization(seed: int) -> dict:
    cfg = mc.ExperimentConfig(n=1024, seed=seed, params=FracParams(alpha=0.3))
    rep = mc.convergence_study(cfg, "z1z2", [128, 256, 512, 1024])
    return _check("factorization_coupling", rep.strictly_decreasing(), **rep.to_dict())


def check_ito_isometry(seed: int, workers: int) -> dict:
    mu = [1.0, 4.0]
    cfg = mc.ExperimentConfig(spectrum=Spectrum.explicit(mu), n=256, M=3000, seed=seed,
                              workers=workers, params=FracParams(alpha=0.3))
    exp = mc.Experiment.build(cfg)
    zT = mc.sup_samples(exp)["z2_T"]
    C = c_alpha(0.3)
    out = []
    ok = True
    for k, m in enumerate(mu):
        x = zT[:, k]
        var = float(np.mean(x**2))
        se = float(np.std(x**2, ddof=1) / math.sqrt(x.size))
        target = C**2 * (1.0 - math.exp(-2.0 * m)) / (2.0 * m)
        # discrete isometry of the left-point sum is the matched reference
        disc = C**2 * float((exp.table.values[k, 1:] ** 2).sum() * exp.grid.dt)
        out.append({"mu": m, "variance": var, "stderr": se, "continuum": target, "discrete": disc})
        ok &= abs(var - disc) <= 3.0 * se
    return _check("ito_isometry", ok, modes=out)


def check_lemma1(seed: int, workers: int) -> dict:
    from .cli import lemma1_study

    cfg = mc.ExperimentConfig(kernel=Kernel.fractional(1.5), n=256, M=3000, seed=seed,
                              workers=workers, params=FracParams(alpha=0.3))
    st = lemma1_study(mc.Experiment.build(cfg))
    return _check("lemma1_variance_oracle", st["within_3se"], **st)


def check_bounds(seed: int, workers: int) -> dict:
    from .cli import bound_report

    out = {}
    ok = True
    for thm, mu in ((1, [1.0]), (2, [1.0, 4.0, 9.0])):
        cfg = mc.ExperimentConfig(spectrum=Spectrum.explicit(mu), n=256, M=1000, seed=seed,
                                  workers=workers, params=FracParams(alpha=0.3, p=4.0))
        rep, cake = bound_report(mc.Experiment.build(cfg), thm)
        out[f"thm{thm}"] = {"ratio_corrected": rep.ratio_corrected,
                            "ratio_literal": rep.ratio_literal, "pass": rep.passed,
                            "layer_cake_agree": cake["agree"]}
        ok &= rep.passed and cake["agree"]
    return _check("corrected_bounds_and_layer_cake", ok, **out)


def check_tail(seed: int, workers: int) -> dict:
    from .cli import tail_passed, tail_report

    cfg = mc.ExperimentConfig(n=128, M=8000, seed=seed, workers=workers)
    rep = tail_report(cfg)
    return _check("tail_and_exponential_moment", tail_passed(rep), fitted_C=rep.fitted_C,
                  fitted_C_halves=rep.extras["fitted_C_halves"], eq22_estimate=rep.eq22_estimate,
                  eq22_stderr=rep.eq22_stderr, eq22_closed_form=rep.eq22_closed_form,
                  kappa_T=rep.kappa_T, eta=rep.eta)


def check_fractional_calculus() -> dict:
    cfg = mc.ExperimentConfig(params=FracParams(alpha=0.3))
    levels = [128, 256, 512, 1024]
    order = mc.convergence_study(cfg, "frac_integral", levels)
    semi = mc.convergence_study(cfg, "semigroup", levels)
    ok = abs(order.slope - 0.3) <= 0.15 and semi.strictly_decreasing()
    return _check("fractional_calculus", ok, frac_integral=order.to_dict(), semigroup=semi.to_dict())


def check_zero_noise(seed: int) -> dict:
    grid = TimeGrid(1.0, 64)
    tab = assemble_resolvent(Spectrum.explicit([1.0, 4.0]), Kernel.constant(), grid)
    noise = NoiseModel.build(grid, 2, q=1.0, psi=0.0)
    b = generate_paths(noise, grid, seed, 1)[0]
    y = eval_Y(tab, noise, b, 0.3)
    paths = [y, eval_Z1(tab, y, 0.3), eval_Z2(tab, noise, b, 0.3),
             eval_mild_solution(tab, [0.0, 0.0], noise, b)]
    return _check("zero_noise_degeneration", all(not np.any(p.values) for p in paths))


def run_suite(seed: int = 0, workers: int = 1) -> dict:
    checks = [
        check_special_functions(),
        check_resolvent(),
        check_submultiplicative(),
        check_fractional_calculus(),
        check_factorization(seed),
        check_ito_isometry(seed, workers),
        check_lemma1(seed, workers),
        check_bounds(seed, workers),
        check_tail(seed, workers),
        check_zero_noise(seed),
    ]
    return {"seed": seed, "checks": checks, "pass": all(c["pass"] for c in checks)}
