"""Command-line front end.

Exit codes: 0 when every checked invariant or corrected bound holds, 1 when
one fails (reports are still written), 2 for an invalid configuration.
"""
from __future__ import annotations

import argparse
import math
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import inequalities as ineq
from . import montecarlo as mc
from .fractional_calculus import FracParams
from .reporting import RunWriter, format_config, read_config
from .resolvent import (
    Kernel,
    ResolventTable,
    Spectrum,
    TimeGrid,
    analytic_resolvent,
    assemble_resolvent,
    check_corollary1,
    check_resolvent_equation,
    check_submultiplicative,
    resolvent_from_gammas,
    write_resolvent_csv,
)
from .stochastics import (
    eval_mild_solution,
    eval_Y,
    eval_Y_alpha,
    eval_Z1,
    eval_Z2,
    generate_paths,
)

COMMANDS = ("resolvent", "submult-check", "factorize-check", "bound-check",
            "tail-check", "converge", "selftest")
SEED_REQUIRED = ("bound-check", "tail-check")

DEFAULTS = {
    "kernel": "constant",
    "modes": "1",
    "spectrum": f"laplace1d:{math.pi!r}",
    "grid": "1024",
    "T": "1",
    "alpha": "0.3",
    "alpha0": "0.25",
    "p": "4",
    "p0": "1.2",
    "paths": "2000",
    "seed": None,
    "psi": "1",
    "q": "1",
    "h": "e1",
    "x0": "0",
    "workers": "1",
    "theorem": None,
    "dump_paths": None,
}
OPTION_KEYS = tuple(DEFAULTS)


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Settings:
    command: str
    raw: dict
    kernel: Kernel
    spectrum: Spectrum
    grid: TimeGrid
    params: FracParams
    M: int
    seed: int | None
    q: tuple
    psi: tuple
    h: tuple
    x0: tuple
    workers: int
    theorem: int | None
    dump_paths: int | None

    def experiment_config(self, **kw) -> mc.ExperimentConfig:
        base = dict(kernel=self.kernel, spectrum=self.spectrum, x0=self.x0, q=self.q,
                    psi=self.psi, T=self.grid.T, n=self.grid.n, M=self.M,
                    seed=0 if self.seed is None else self.seed, params=self.params,
                    h=self.h, workers=self.workers)
        base.update(kw)
        return mc.ExperimentConfig(**base)


def _per_mode(text: str, N: int, name: str) -> tuple:
    vals = [float(v) for v in str(text).split(",") if v.strip()]
    if len(vals) == 1:
        vals = vals * N
    if len(vals) != N:
        raise ConfigError(f"--{name} has {len(vals)} entries, expected 1 or {N}")
    return tuple(vals)


def _functional(text: str, N: int) -> tuple:
    return tuple(ineq.Functional.parse(text, N).h.tolist())


def resolve_settings(command: str, raw: dict) -> Settings:
    try:
        N = int(raw["modes"])
        if N < 1:
            raise ConfigError("--modes must be positive")
        spectrum = Spectrum.parse(raw["spectrum"], N)
        N = spectrum.N
        kernel = Kernel.parse(raw["kernel"])
        grid = TimeGrid(float(raw["T"]), int(raw["grid"]))
        params = FracParams(float(raw["alpha"]), float(raw["p"]),
                            float(raw["alpha0"]), float(raw["p0"]))
        M = int(raw["paths"])
        if M < 2:
            raise ConfigError("--paths must be at least 2")
        seed = None if raw["seed"] is None else int(raw["seed"])
        if seed is not None and not 0 <= seed < 2**64:
            raise ConfigError("--seed must be an unsigned 64-bit integer")
        workers = int(raw["workers"])
        if workers < 1:
            raise ConfigError("--workers must be positive")
        theorem = None if raw["theorem"] is None else int(raw["theorem"])
        dump = raw["dump_paths"]
        dump_paths = None if dump is None else (M if dump == "all" else int(dump))
        if dump_paths is not None and dump_paths < 1:
            raise ConfigError("--dump-paths needs a positive path count or 'all'")
        s = Settings(command, dict(raw), kernel, spectrum, grid, params, M, seed,
                     _per_mode(raw["q"], N, "q"), _per_mode(raw["psi"], N, "psi"),
                     _functional(raw["h"], N), _per_mode(raw["x0"], N, "x0"),
                     workers, theorem, dump_paths)
    except ConfigError:
        raise
    except (ValueError, KeyError, TypeError) as exc:
        raise ConfigError(str(exc)) from exc
    if any(v < 0 for v in s.q):
        raise ConfigError("--q entries must be nonnegative")
    if command in SEED_REQUIRED and s.seed is None:
        raise ConfigError(f"{command} requires --seed")
    if command == "bound-check" and s.theorem not in (1, 2):
        raise ConfigError("bound-check requires --theorem 1 or 2")
    return s


# --- subcommands ------------------------------------------------------------

def run_resolvent(s: Settings, w: RunWriter) -> bool:
    table = assemble_resolvent(s.spectrum, s.kernel, s.grid)
    residual = check_resolvent_equation(table)
    modes = []
    for k, mu in enumerate(s.spectrum.mu):
        exact = analytic_resolvent(s.kernel, float(mu), s.grid)
        modes.append({"mode": k + 1, "mu": float(mu),
                      "max_error_vs_closed_form": float(np.abs(table.values[k] - exact).max()),
                      "residual": float(residual[k])})
    passed = bool(residual.max() <= 1e-8)
    write_resolvent_csv(table, w.path("resolvent.csv"))
    w.json("resolvent.json", {"kernel": s.kernel.spec(), "T": s.grid.T, "n": s.grid.n,
                              "spectrum": s.spectrum.generator, "modes": modes,
                              "residual_tol": 1e-8, "pass": passed})
    return passed


SUBMULT_EQUALITY_TOL = 1e-12


def submult_report(kernel: Kernel, mu, grid: TimeGrid) -> dict:
    gammas = np.concatenate([[0.0], np.asarray(mu, dtype=float)])
    table = resolvent_from_gammas(kernel, gammas, grid)
    exact = np.vstack([analytic_resolvent(kernel, g, grid) for g in gammas])
    solver_error = float(np.abs(table.values - exact).max())
    tol = max(10.0 * solver_error, SUBMULT_EQUALITY_TOL)
    strict = check_submultiplicative(table, SUBMULT_EQUALITY_TOL)
    tolerant = check_submultiplicative(table, tol)
    closed = check_submultiplicative(ResolventTable(exact, gammas, kernel, grid, "analytic"),
                                     SUBMULT_EQUALITY_TOL)
    N = len(gammas)
    H = np.vstack([np.eye(N), -np.eye(N), np.ones((1, N))])
    cor = check_corollary1(table, np.ones(N), tol, H)
    gamma0_equal = strict[0]["max_deviation"] <= SUBMULT_EQUALITY_TOL
    checks = {"gamma0_row_equality": gamma0_equal}
    if kernel.variant == "constant":
        checks["constant_kernel_no_violations"] = all(r["violations"] == 0 for r in strict)
    return {"kernel": kernel.spec(), "T": grid.T, "n": grid.n, "solver_error": solver_error,
            "equality_tol": SUBMULT_EQUALITY_TOL, "solver_tol": tol,
            "scan_equality_tol": strict, "scan_solver_tol": tolerant, "scan_closed_form": closed,
            "corollary1": cor, "checks": checks, "pass": all(checks.values())}


def run_submult(s: Settings, w: RunWriter) -> bool:
    rep = submult_report(s.kernel, s.spectrum.mu, s.grid)
    w.json("submult.json", rep)
    w.csv("submult.csv",
          ["gamma", "pairs", "violations_at_equality_tol", "violations_at_solver_tol",
           "violations_abs_at_solver_tol", "violations_closed_form", "max_excess",
           "max_excess_closed_form", "max_deviation"],
          [(a["gamma"], a["pairs"], a["violations"], b["violations"], b["violations_abs"],
            c["violations"], a["max_excess"], c["max_excess"], a["max_deviation"])
           for a, b, c in zip(rep["scan_equality_tol"], rep["scan_solver_tol"],
                              rep["scan_closed_form"])])
    return rep["pass"]


def _dyadic_levels(n: int, count: int = 4) -> list[int] | None:
    f = 2 ** (count - 1)
    if n % f or n // f < 4:
        return None
    return [n // f * 2**i for i in range(count)]


def lemma1_study(exp: mc.Experiment, M: int | None = None) -> dict:
    """Monte Carlo variance of phi(Z1 - Z2)(T) against the discrete kernel oracle."""
    alpha = exp.config.params.alpha
    if not alpha < 0.5:
        raise ConfigError("factorization needs alpha < 1/2")

    def fn(bundle):
        y = eval_Y(exp.table, exp.noise, bundle, alpha)
        z1 = eval_Z1(exp.table, y, alpha)
        z2 = eval_Z2(exp.table, exp.noise, bundle, alpha)
        d = ineq.eval_functional(exp.phi, z1) - ineq.eval_functional(exp.phi, z2)
        st = ineq.lemma1_compare(z1, z2, exp.phi)["functional"]
        return {"dT": d[..., -1], "sup_d": np.abs(d).max(axis=-1),
                "excess": np.array([st["max_excess"]]),
                "viol": np.array([st["violation_fraction"] * st["points"]]),
                "pts": np.array([st["points"]])}

    r = mc.map_paths(exp, fn, M)
    dT = r["dT"]
    var = float(np.mean(dT**2))
    se = float(np.std(dT**2, ddof=1) / math.sqrt(dT.size))
    oracle = ineq.lemma1_variance_oracle(exp.table, exp.noise, exp.phi, alpha)
    return {"paths": int(dT.size), "variance_mc": var, "variance_stderr": se,
            "variance_oracle": oracle, "z_score": (var - oracle) / se if se > 0 else math.inf,
            "within_3se": abs(var - oracle) <= 3.0 * se,
            "mean_sup_abs_difference": float(r["sup_d"].mean()),
            "max_excess_phi_z2_over_phi_z1": float(r["excess"].max()),
            "violation_fraction_phi_z2_gt_phi_z1": float(r["viol"].sum() / r["pts"].sum())}


def run_factorize(s: Settings, w: RunWriter) -> bool:
    cfg = s.experiment_config()
    exp = mc.Experiment.build(cfg)
    rep = {"kernel": s.kernel.spec(), "alpha": s.params.alpha, "T": s.grid.T, "n": s.grid.n,
           "seed": cfg.seed, "z1_rule": "right"}
    checks = {}
    levels = _dyadic_levels(s.grid.n)
    if levels is not None:
        study = mc.convergence_study(cfg, "z1z2", levels)
        rep["coupling"] = study.to_dict()
        if s.kernel.variant == "constant":
            checks["coupling_strictly_decreasing"] = study.strictly_decreasing()
    else:
        rep["coupling"] = None
        rep["coupling_note"] = "grid not divisible into four dyadic levels"
    rep["lemma1"] = lemma1_study(exp)
    checks["lemma1_variance_within_3se"] = rep["lemma1"]["within_3se"]
    rep["checks"] = checks
    rep["pass"] = all(checks.values())
    w.json("factorize.json", rep)
    if rep["coupling"] is not None:
        c = rep["coupling"]
        w.csv("factorize.csv", ["n", "relative_sup_error"], zip(c["levels"], c["errors"]))
    _maybe_dump(s, exp, w)
    return rep["pass"]


def bound_report(exp: mc.Experiment, theorem: int) -> tuple[ineq.BoundReport, dict]:
    p = exp.config.params
    rhs = (ineq.thm1_rhs if theorem == 1 else ineq.thm2_rhs)(p, exp.norms, exp.phi, exp.grid)
    samples = mc.sup_samples(exp)
    est = mc.estimate_sup_moment(exp, p.p, samples)
    rhs.attach_lhs(est["abs"], est["pos"])
    return rhs, mc.layer_cake_check(samples["sup_abs"], p.p)


def run_bound(s: Settings, w: RunWriter) -> bool:
    try:
        exp = mc.Experiment.build(s.experiment_config())
        rep, cake = bound_report(exp, s.theorem)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    d = rep.to_dict()
    d.update({"kernel": s.kernel.spec(), "modes": s.spectrum.N, "n": s.grid.n,
              "seed": s.seed, "layer_cake": cake})
    name = f"thm{s.theorem}"
    w.json(f"bound_{name}.json", d)
    w.csv("bound_summary.csv",
          ["theorem", "lhs_estimate", "lhs_stderr", "rhs_literal", "rhs_corrected",
           "ratio_literal", "ratio_corrected", "pass"],
          [(name, d["lhs_estimate"], d["lhs_stderr"], d["rhs_literal"], d["rhs_corrected"],
            d["ratio_literal"], d["ratio_corrected"], d["pass"])])
    _maybe_dump(s, exp, w)
    return bool(rep.passed and cake["agree"])


TAIL_STABILITY = 0.2


def tail_report(cfg: mc.ExperimentConfig) -> ineq.TailReport:
    """Everything the tail subcommand reports; Z2 carries C_{alpha0}."""
    p = cfg.params
    cfg = cfg.with_(params=FracParams(p.alpha0, p.p, p.alpha0, p.p0))
    exp = mc.Experiment.build(cfg)
    a0, p0, T = p.alpha0, p.p0, cfg.T
    kap = ineq.kappa_T(exp.norms, a0, p0, exp.grid)
    eta = ineq.eta_sup(exp.table, exp.noise, a0)
    delta = mc.default_delta_grid(exp, a0)
    samples = mc.sup_samples(exp)
    emp = mc.tail_from_samples(samples["sup_abs"], delta)
    eq22 = mc.eq22_estimate(exp, eta)
    closed = ineq.eq22_closed_form(exp.table, exp.noise, a0, eta)
    rep = ineq.thm3_tail(kap.value, eta, delta, emp, a0, p0, T, kap.error, eq22, closed)
    half = cfg.M // 2
    halves = [ineq.thm3_tail(kap.value, eta, delta, mc.tail_from_samples(part, delta),
                             a0, p0, T).fitted_C
              for part in (samples["sup_abs"][:half], samples["sup_abs"][half:])]
    spread = abs(halves[0] - halves[1]) / max(halves) if max(halves) > 0 else 0.0
    rep.extras.update({"fitted_C_halves": halves, "fitted_C_relative_spread": spread,
                       "fitted_C_stable": spread <= TAIL_STABILITY,
                       "stability_tol": TAIL_STABILITY, "seed": cfg.seed})
    return rep


def tail_passed(rep: ineq.TailReport) -> bool:
    return bool(rep.eq22_ok and rep.eq22_agrees and math.isfinite(rep.fitted_C)
                and rep.extras["fitted_C_stable"] and rep.dominated())


def run_tail(s: Settings, w: RunWriter) -> bool:
    try:
        rep = tail_report(s.experiment_config())
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    passed = tail_passed(rep)
    d = rep.to_dict()
    d.update({"dominated": rep.dominated(), "pass": passed})
    w.json("tail.json", d)
    w.csv("tail.csv", ["delta", "p_emp", "wilson_lo", "wilson_hi", "bound"],
          zip(rep.delta_grid, rep.empirical_tail, rep.wilson_lo, rep.wilson_hi,
              rep.bound_values))
    if s.dump_paths:
        _maybe_dump(s, mc.Experiment.build(s.experiment_config()), w)
    return passed


def converge_report(cfg: mc.ExperimentConfig, levels: list[int]) -> dict:
    quantities = ["resolvent", "frac_integral", "semigroup", "kappa"]
    if cfg.kernel.variant == "constant":
        quantities.append("z1z2")
    studies = {q: mc.convergence_study(cfg, q, levels) for q in quantities}
    alpha = cfg.params.alpha
    checks = {
        "semigroup_strictly_decreasing": studies["semigroup"].strictly_decreasing(),
        "frac_integral_order_near_alpha": abs(studies["frac_integral"].slope - alpha) <= 0.15,
    }
    if cfg.kernel.variant != "fractional":
        checks["resolvent_order_at_least_0.9"] = studies["resolvent"].slope >= 0.9
    if "z1z2" in studies:
        checks["z1z2_strictly_decreasing"] = studies["z1z2"].strictly_decreasing()
    return {"kernel": cfg.kernel.spec(), "T": cfg.T, "levels": levels,
            "studies": {q: r.to_dict() for q, r in studies.items()},
            "checks": checks, "pass": all(checks.values())}


def run_converge(s: Settings, w: RunWriter) -> bool:
    levels = _dyadic_levels(s.grid.n)
    if levels is None:
        raise ConfigError("converge needs --grid divisible by 8 with at least 4 cells per level")
    rep = converge_report(s.experiment_config(), levels)
    w.json("converge.json", rep)
    rows = [(q, lv, e) for q, r in rep["studies"].items() for lv, e in zip(r["levels"], r["errors"])]
    w.csv("converge.csv", ["quantity", "n", "error"], rows)
    return rep["pass"]


def run_selftest(s: Settings, w: RunWriter) -> bool:
    from .selftest import run_suite

    rep = run_suite(0 if s.seed is None else s.seed, s.workers)
    w.json("selftest.json", rep)
    w.csv("selftest.csv", ["check", "pass"], [(c["name"], c["pass"]) for c in rep["checks"]])
    return rep["pass"]


RUNNERS = {
    "resolvent": run_resolvent,
    "submult-check": run_submult,
    "factorize-check": run_factorize,
    "bound-check": run_bound,
    "tail-check": run_tail,
    "converge": run_converge,
    "selftest": run_selftest,
}


# --- path dump ----------------------------------------------------------------

def _maybe_dump(s: Settings, exp: mc.Experiment, w: RunWriter) -> None:
    if not s.dump_paths:
        return
    alpha = exp.config.params.alpha
    t = exp.grid.nodes
    rows = []
    for b in generate_paths(exp.noise, exp.grid, exp.config.seed, min(s.dump_paths, exp.config.M)):
        y = eval_Y(exp.table, exp.noise, b, alpha)
        ya = eval_Y_alpha(y, alpha)
        z1 = eval_Z1(exp.table, y, alpha)
        z2 = eval_Z2(exp.table, exp.noise, b, alpha)
        x = eval_mild_solution(exp.table, s.x0, exp.noise, b)
        for k in range(exp.table.N):
            for j in range(t.size):
                rows.append((b.path_index, k + 1, t[j], y.values[k, j], ya.values[k, j],
                             z1.values[k, j], z2.values[k, j], x.values[k, j]))
    w.csv("paths.csv", ["path", "mode", "t", "Y", "Y_alpha", "Z1", "Z2", "X"], rows)


# --- argument handling --------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    g = common.add_argument_group("model and run options")
    g.add_argument("--kernel", help="constant | exp:<lambda> | frac:<beta>")
    g.add_argument("--modes", help="number of spectral modes N")
    g.add_argument("--spectrum", help="list:<mu1,mu2,...> | laplace1d:<L>")
    g.add_argument("--grid", help="number of time steps n")
    g.add_argument("--T", help="time horizon")
    g.add_argument("--alpha")
    g.add_argument("--alpha0")
    g.add_argument("--p")
    g.add_argument("--p0")
    g.add_argument("--paths", help="Monte Carlo path count M")
    g.add_argument("--seed", help="master seed (unsigned 64-bit)")
    g.add_argument("--psi", help="constant or per-mode list")
    g.add_argument("--q", help="covariance eigenvalues, constant or per-mode list")
    g.add_argument("--h", help="functional: e1 | ones | per-mode list")
    g.add_argument("--x0", help="initial condition, constant or per-mode list")
    g.add_argument("--workers", help="threads for path evaluation (results do not depend on it)")
    g.add_argument("--out", help="output directory")
    g.add_argument("--config", help="key=value file; flags override its values")
    g.add_argument("--dump-paths", nargs="?", const="all", dest="dump_paths",
                   help="write paths.csv for the first K paths (default all)")
    parser = argparse.ArgumentParser(prog="stochvolterra", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name, parents=[common])
        if name == "bound-check":
            sp.add_argument("--theorem", choices=["1", "2"])
    return parser


def run_cli(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 2
    flags = {k: v for k, v in vars(args).items() if k not in ("command", "config", "out")}
    raw = dict(DEFAULTS)
    out = None
    if args.config:
        try:
            file_vals = read_config(args.config)
        except (OSError, ValueError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 2
        unknown = set(file_vals) - set(OPTION_KEYS) - {"out", "command"}
        if unknown:
            print(f"error: unknown config keys: {', '.join(sorted(unknown))}", file=sys.stderr)
            return 2
        out = file_vals.pop("out", None)
        file_vals.pop("command", None)
        raw.update(file_vals)
    raw.update({k: v for k, v in flags.items() if v is not None})
    out = args.out or out or f"out-{args.command}"
    try:
        settings = resolve_settings(args.command, raw)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    writer = RunWriter(out)
    echo = {k: raw[k] for k in OPTION_KEYS}
    writer.text("config.txt", f"# command: {args.command}\n" + format_config(echo))
    try:
        passed = RUNNERS[args.command](settings, writer)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    writer.manifest(args.command, {k: v for k, v in echo.items() if v is not None}, settings.seed)
    print(f"{args.command}: {'pass' if passed else 'FAIL'} ({Path(out)})")
    return 0 if passed else 1


def main() -> None:
    sys.exit(run_cli())
