"""Command-line orchestration: configuration, seeding, parallel runs and artifacts.

Every subcommand writes ``<out>/<command>.json`` (config echo, payload,
version, pass/fail where applicable), its tables as ``<out>/<command>*.csv``
(or ``.rows.json`` with ``--format json``) and the wall-clock time in a
separate ``<out>/<command>.timing.json`` so that the other files are
byte-identical across runs and thread counts.

Exit codes: 0 success, 2 invalid configuration, 3 numerical failure (the
report is still written, with an ``error`` entry).
"""

from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path
from typing import Callable

import numpy as np

from . import __version__, io, rng
from .environment import Environment, EnvironmentLaw, LawError, LAW_KINDS
from .experiments import (corrector_cauchy, homogenization_error, rate_fit, semigroup_decay)
from .invariant import ConvergenceError, effective_matrix, q_mean, torus_invariant_measure
from .kernels import heat_kernel_continuous
from .lattice import box_sites
from .montecarlo import fclt_sample
from .observables import by_name
from .operators import SolverConfig, SolverError, green_ball
from .parallel import ENV_VAR, ordered_map, resolve_threads
from . import testfn

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3

# options that affect wall-clock or file placement only; never echoed
_NOT_ECHOED = {"threads", "out", "command", "func", "format"}


class ConfigError(ValueError):
    pass


# argument parsing ---------------------------------------------------------------

def _floats(text: str) -> list[float]:
    try:
        vals = [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc
    if not vals:
        raise argparse.ArgumentTypeError("empty list")
    return vals


def _ints(text: str) -> list[int]:
    vals = _floats(text)
    if any(v != int(v) for v in vals):
        raise argparse.ArgumentTypeError(f"expected integers, got {text!r}")
    return [int(v) for v in vals]


def _param(text: str) -> tuple[str, float]:
    if "=" not in text:
        raise argparse.ArgumentTypeError("law parameters look like key=value")
    k, v = text.split("=", 1)
    return k.strip(), float(v)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--dim", type=int, required=True)
    common.add_argument("--kappa", type=float, required=True)
    common.add_argument("--law", choices=LAW_KINDS, default="clipped-simplex")
    common.add_argument("--law-param", type=_param, action="append", default=[],
                        metavar="KEY=VALUE")
    common.add_argument("--seed", type=int, default=0, help="master seed")
    common.add_argument("--threads", type=int, default=1,
                        help=f"worker threads (overridden by ${ENV_VAR})")
    common.add_argument("--out", default=".", help="output directory")
    common.add_argument("--format", choices=("csv", "json"), default="csv")
    common.add_argument("--tol", type=float, default=1e-12, help="solver tolerance")

    p = argparse.ArgumentParser(prog="rwre", description="Balanced random walks in random environments.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("env-sample", parents=[common], help="weights on a box")
    s.add_argument("--half-width", type=int, required=True)

    s = sub.add_parser("green", parents=[common], help="Green function of a ball")
    s.add_argument("--R", type=float, required=True)
    s.add_argument("--source", type=_ints, default=None, help="source site, e.g. 1,0")

    s = sub.add_parser("kernel", parents=[common], help="continuous-time heat kernel")
    s.add_argument("--t", type=float, required=True)
    s.add_argument("--x0", type=_ints, default=None)

    s = sub.add_parser("rho", parents=[common], help="torus invariant measure")
    s.add_argument("--L", type=int, required=True)

    s = sub.add_parser("homog", parents=[common], help="homogenization errors and rate")
    s.add_argument("--case", choices=("A", "B", "C"), required=True)
    s.add_argument("--R", type=_floats, required=True)
    s.add_argument("--n-env", type=int, required=True)

    s = sub.add_parser("testfn", parents=[common], help="test-function lemma verifiers")
    s.add_argument("--lemma", choices=("radial", "exponential", "eta", "comparison"), required=True)
    s.add_argument("--delta", type=float)
    s.add_argument("--r-grid", type=_floats)
    s.add_argument("--R", type=float)
    s.add_argument("--R0", type=float)
    s.add_argument("--alpha", type=float)
    s.add_argument("--gamma", type=float)
    s.add_argument("--C0", type=float)
    s.add_argument("--n-env", type=int, default=1)

    s = sub.add_parser("decay", parents=[common], help="semigroup decay curve")
    s.add_argument("--L", type=int, required=True)
    s.add_argument("--n-env", type=int, required=True)
    s.add_argument("--t", type=_floats, required=True)
    s.add_argument("--zeta", default="w1")

    s = sub.add_parser("fclt", parents=[common], help="standardized additive functionals")
    s.add_argument("--t", type=float, required=True)
    s.add_argument("--reps", type=int, required=True)
    s.add_argument("--zeta", default="w1")
    s.add_argument("--zeta-mean", type=float, default=None)
    s.add_argument("--L", type=int, default=None, help="torus side used to estimate E_Q zeta")

    s = sub.add_parser("corrector", parents=[common], help="finite-time stationary corrector")
    s.add_argument("--L", type=int, required=True)
    s.add_argument("--T", type=_floats, required=True)
    s.add_argument("--quad-tol", type=float, default=1e-8)
    s.add_argument("--zeta", default="w1")

    s = sub.add_parser("envelope", parents=[common], help="Green envelope statistics")
    s.add_argument("--R", type=_floats, required=True)
    s.add_argument("--n-env", type=int, required=True)

    s = sub.add_parser("plot", help="emit a gnuplot script for a CSV curve")
    s.add_argument("csv")
    s.add_argument("--kind", required=True)
    s.add_argument("--dim", type=int, default=None)
    s.add_argument("--out", default=None)

    s = sub.add_parser("rerun", help="rerun the configuration echoed in a report")
    s.add_argument("report")
    s.add_argument("--out", default=".")
    s.add_argument("--threads", type=int, default=1)
    s.add_argument("--format", choices=("csv", "json"), default="csv")
    return p


# run context ----------------------------------------------------------------------

class Run:
    """Collects tables, fields and the payload of one subcommand."""

    def __init__(self, command: str, config: dict, out: Path, threads: int, fmt: str):
        self.command = command
        self.config = config
        self.out = out
        self.threads = threads
        self.fmt = fmt
        self.payload: dict = {}
        self.passed: bool | None = None
        self.files: list[str] = []

    # shared builders
    def law(self) -> EnvironmentLaw:
        c = self.config
        return EnvironmentLaw(c["dim"], c["kappa"], c["law"], dict(c["law_param"]), c["seed"])

    def env(self, index: int | None = None) -> Environment:
        law = self.law()
        if index is not None:
            law = law.with_seed(rng.replicate_seed_int(self.config["seed"], index))
        return Environment(law)

    def solver(self) -> SolverConfig:
        return SolverConfig(tol=self.config["tol"])

    def table(self, name: str, header: list[str], rows: list) -> None:
        stem = self.command if not name else f"{self.command}_{name}"
        if self.fmt == "csv":
            path = io.write_csv(self.out / f"{stem}.csv", header, rows)
        else:
            path = io.write_json(self.out / f"{stem}.rows.json",
                                 [dict(zip(header, r)) for r in rows])
        self.files.append(path.name)

    def field(self, name: str, u, kernel: bool = False) -> None:
        stem = self.command if not name else f"{self.command}_{name}"
        path = self.out / f"{stem}_field.csv"
        (io.write_kernel if kernel else io.write_field)(path, u)
        self.files += [path.name, path.with_suffix(".json").name]

    def report(self, error: str | None = None) -> dict:
        rep = {"command": self.command, "config": self.config, "payload": self.payload,
               "version": __version__, "files": sorted(self.files)}
        if self.passed is not None:
            rep["passed"] = self.passed
        if error is not None:
            rep["error"] = error
        return rep


# subcommands ------------------------------------------------------------------------

def cmd_env_sample(run: Run) -> None:
    env = run.env()
    d = env.dim
    dom = box_sites((0,) * d, run.config["half_width"])
    W = env.weights(dom.sites)
    rows = [[*map(int, s), *map(float, w)] for s, w in zip(dom.sites, W)]
    run.table("", [f"x{i + 1}" for i in range(d)] + [f"w{i + 1}" for i in range(d)], rows)
    run.payload = {"n_sites": dom.n_sites, "min_weight": float(W.min()), "max_weight": float(W.max()),
                   "mean_weights": W.mean(axis=0).tolist()}


def cmd_green(run: Run) -> None:
    env = run.env()
    src = run.config.get("source")
    G = green_ball(env, run.config["R"], source=None if src is None else [src], cfg=run.solver())
    run.field("", G)
    run.payload = {"residual": G.meta["residual"], "origin_value": float(G.get(np.zeros(env.dim, dtype=np.int64))),
                   "n_sites": G.domain.n_sites, "sup": G.sup_norm()}
    run.passed = G.meta["residual"] <= 1e-10


def cmd_kernel(run: Run) -> None:
    env = run.env()
    x0 = run.config.get("x0") or [0] * env.dim
    k = heat_kernel_continuous(env, tuple(x0), run.config["t"], run.config["tol"])
    run.field("", k, kernel=True)
    run.payload = {"deficit": k.deficit, "total_mass": k.total_mass, "half_width": k.meta.get("half_width")}
    run.passed = k.deficit <= run.config["tol"]


def cmd_rho(run: Run) -> None:
    env = run.env()
    L = run.config["L"]
    rho = torus_invariant_measure(env, L, tol=run.config["tol"])
    eff = effective_matrix(env, L, rho=rho)
    run.field("", rho.field)
    run.payload = {"residual": rho.residual, "iterations": rho.iterations, "a_bar": list(eff.a_bar),
                   "min": float(rho.values.min()), "max": float(rho.values.max()),
                   "mean": float(rho.values.mean())}
    run.passed = rho.residual <= run.config["tol"] and float(rho.values.min()) > 0


def cmd_homog(run: Run) -> None:
    c = run.config
    cfg = run.solver()
    jobs = [(i, R) for R in c["R"] for i in range(c["n_env"])]
    errs = ordered_map(lambda job: homogenization_error(run.env(job[0]), job[1], c["case"], cfg), jobs,
                       run.threads)
    rows = [[R, i, e] for (i, R), e in zip(jobs, errs)]
    run.table("", ["R", "env", "error"], rows)
    means = {R: float(np.mean([e for (i, r), e in zip(jobs, errs) if r == R])) for R in c["R"]}
    run.payload = {"mean_error": {str(R): v for R, v in means.items()}}
    if len(c["R"]) >= 2 and all(v > 0 for v in means.values()):
        slope, intercept, rms = rate_fit(list(means.items()))
        run.payload["rate_fit"] = {"slope": slope, "intercept": intercept, "rms": rms}
    if c["case"] == "B":
        run.passed = all(e <= 3.0 / R for (i, R), e in zip(jobs, errs))


def _need(c: dict, *names: str) -> None:
    missing = [n for n in names if c.get(n) is None]
    if missing:
        raise ConfigError("missing " + ", ".join("--" + m.replace("_", "-") for m in missing))


def cmd_testfn(run: Run) -> None:
    c = run.config
    lemma = c["lemma"]
    envs = lambda: [run.env(i) for i in range(c["n_env"])]  # noqa: E731
    if lemma == "radial":
        _need(c, "delta", "r_grid")
        rep = testfn.verify_radial_lemma(c["delta"], c["dim"], c["r_grid"])
    elif lemma == "exponential":
        _need(c, "R")
        rep = testfn.verify_exponential_lemma(envs(), c["R"])
    elif lemma == "eta":
        rep = testfn.verify_eta_lemma(envs(), c["kappa"])
    else:
        _need(c, "R", "R0", "alpha", "gamma", "delta", "C0")
        rep = testfn.verify_comparison(run.env(0), c["R"], c["R0"], c["alpha"], c["gamma"], c["delta"],
                                       c["kappa"], c["C0"], run.solver())
        rep.pop("G", None)
        rep["passed"] = bool(rep["G_le_h"] and rep["H_ge_c_ell"])
    run.payload = rep
    run.passed = bool(rep.get("passed"))


def cmd_decay(run: Run) -> None:
    c = run.config
    curve = semigroup_decay(run.law(), by_name(c["zeta"], c["dim"]), c["t"], c["n_env"], c["L"], c["seed"],
                            threads=run.threads)
    run.table("", ["t", "var_q", "var_q_stderr", "l1", "l1_stderr", "n"], curve.rows())
    run.payload = {"slope_var": curve.slope_var, "slope_l1": curve.slope_l1,
                   "nonincreasing": curve.nonincreasing(), "meta": curve.meta,
                   "reference_slope_var": -c["dim"] / 2, "reference_slope_l1": -c["dim"] / 4}


def cmd_fclt(run: Run) -> None:
    c = run.config
    zeta = by_name(c["zeta"], c["dim"])
    mean = c.get("zeta_mean")
    if mean is None:
        _need(c, "L")
        env = run.env()
        mean = q_mean(torus_invariant_measure(env, c["L"]), zeta)
    res = fclt_sample(run.law(), zeta, c["t"], c["reps"], c["seed"], mean)
    run.table("", ["replicate", "sample"], [[i, float(v)] for i, v in enumerate(res["samples"])])
    run.payload = {k: v for k, v in res.items() if k != "samples"}
    run.payload["zeta_mean"] = mean
    run.passed = res["ks_pvalue"] >= 0.01


def cmd_corrector(run: Run) -> None:
    c = run.config
    rep = corrector_cauchy(run.env(), by_name(c["zeta"], c["dim"]), c["T"], c["quad_tol"], c["L"])
    rows = [[r["T"], r["cauchy"], r["residual_T"], r["residual_2T"]] for r in rep["rows"]]
    run.table("", ["T", "cauchy", "residual_T", "residual_2T"], rows)
    worst = max(max(r["residual_T"], r["residual_2T"]) for r in rep["rows"])
    run.payload = {"decreasing": rep["decreasing"], "e_q_zeta": rep["e_q_zeta"], "max_residual": worst}
    run.passed = rep["decreasing"] and worst <= 10 * c["quad_tol"]


def cmd_envelope(run: Run) -> None:
    c = run.config
    cfg = run.solver()
    jobs = [(i, R) for R in c["R"] for i in range(c["n_env"])]

    def one(job):
        i, R = job
        env = run.env(i)
        G = green_ball(env, R, cfg=cfg)
        return testfn.green_envelope_stats(env, R, G, c["kappa"])

    stats = ordered_map(one, jobs, run.threads)
    rows = [[R, i, s["H_up"], s["H_low"], s["ratio_min"], s["ratio_max"]] for (i, R), s in zip(jobs, stats)]
    run.table("", ["R", "env", "H_up", "H_low", "ratio_min", "ratio_max"], rows)
    run.payload = {"s": testfn.envelope_exponent(c["dim"], c["kappa"]),
                   "all_positive_finite": all(s["positive_finite"] for s in stats)}
    run.passed = run.payload["all_positive_finite"]


COMMANDS: dict[str, Callable[[Run], None]] = {
    "env-sample": cmd_env_sample, "green": cmd_green, "kernel": cmd_kernel, "rho": cmd_rho,
    "homog": cmd_homog, "testfn": cmd_testfn, "decay": cmd_decay, "fclt": cmd_fclt,
    "corrector": cmd_corrector, "envelope": cmd_envelope,
}


# plot scripts -------------------------------------------------------------------------

PLOT_KINDS = ("decay", "rate", "envelope")


def emit_plot_script(curve_file, kind: str, out=None, dim: int | None = None) -> Path:
    """Write a gnuplot script for a curve CSV; log-log axes for decay and rate plots."""
    if kind not in PLOT_KINDS:
        raise ValueError(f"unknown plot kind {kind!r}; expected one of {PLOT_KINDS}")
    src = Path(curve_file)
    if not src.exists():
        raise FileNotFoundError(src)
    out = Path(out) if out is not None else src.with_suffix(".gp")
    lines = ["set datafile separator ','", "set key top right", f"set output '{src.stem}.png'",
             "set terminal pngcairo size 800,600"]
    if kind == "decay":
        slope = -(dim or 2) / 2
        lines += ["set logscale xy", "set xlabel 't'", "set ylabel 'Var_Q(P_t zeta)'",
                  "stats '{0}' using 1:2 every ::1::1 nooutput".format(src.name),
                  "t0 = STATS_min_x; v0 = STATS_min_y",
                  f"guide(t) = v0 * (t / t0) ** ({slope:g})",
                  f"plot '{src.name}' every ::1 using 1:2:3 with yerrorbars title 'Var_Q', \\",
                  f"     guide(x) with lines dashtype 2 title 'slope {slope:g}'"]
    elif kind == "rate":
        lines += ["set logscale xy", "set xlabel 'R'", "set ylabel 'error'",
                  f"plot '{src.name}' every ::1 using 1:3 with points title 'error'"]
    else:
        lines += ["set xlabel 'H'", "set ylabel 'count'", "binwidth = 0.05",
                  "bin(x, w) = w * floor(x / w)", "set style fill solid 0.5",
                  f"plot '{src.name}' every ::1 using (bin($3, binwidth)):(1.0) smooth freq with boxes title 'H_up', \\",
                  f"     '{src.name}' every ::1 using (bin($4, binwidth)):(1.0) smooth freq with boxes title 'H_low'"]
    out.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return out


# entry points -------------------------------------------------------------------------------

def _validate(config: dict) -> None:
    EnvironmentLaw(config["dim"], config["kappa"], config["law"], dict(config["law_param"]), config["seed"])
    SolverConfig(tol=config["tol"])
    for key in ("R", "L", "t", "reps", "n_env", "half_width", "T", "quad_tol"):
        v = config.get(key)
        vals = v if isinstance(v, list) else [v]
        if v is not None and any(x is None or x < 0 for x in vals):
            raise ConfigError(f"--{key.replace('_', '-')} must be nonnegative")
    for key in ("n_env", "reps"):
        if config.get(key) is not None and config[key] < 1:
            raise ConfigError(f"--{key.replace('_', '-')} must be positive")


def run(command: str, config: dict, out=".", threads: int | None = None, fmt: str = "csv") -> tuple[int, dict]:
    """Validate, execute and persist one subcommand; returns ``(exit code, report)``."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    r = Run(command, config, out, resolve_threads(threads), fmt)
    try:
        _validate(config)
    except (ConfigError, LawError, ValueError) as exc:
        print(f"rwre: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_CONFIG, {"error": str(exc)}
    start = time.perf_counter()
    code, err = EXIT_OK, None
    try:
        COMMANDS[command](r)
    except (ConfigError, LawError) as exc:
        print(f"rwre: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_CONFIG, {"error": str(exc)}
    except (SolverError, ConvergenceError, RuntimeError, FloatingPointError, np.linalg.LinAlgError) as exc:
        code, err = EXIT_NUMERIC, f"{type(exc).__name__}: {exc}"
        print(f"rwre: numerical failure: {err}", file=sys.stderr)
    rep = r.report(err)
    io.write_json(out / f"{command}.json", rep)
    io.write_json(out / f"{command}.timing.json", {"wall_clock_s": time.perf_counter() - start,
                                                   "threads": r.threads})
    return code, rep


def _config_from_args(args: argparse.Namespace) -> dict:
    cfg = {k: v for k, v in vars(args).items() if k not in _NOT_ECHOED}
    cfg["law_param"] = sorted([list(p) for p in cfg.get("law_param", [])])
    return cfg


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "plot":
        try:
            path = emit_plot_script(args.csv, args.kind, args.out, args.dim)
        except (ValueError, FileNotFoundError) as exc:
            print(f"rwre: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        print(path)
        return EXIT_OK
    if args.command == "rerun":
        try:
            rep = io.read_json(args.report)
            command, config = rep["command"], rep["config"]
        except (OSError, ValueError, KeyError) as exc:
            print(f"rwre: cannot read report: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        code, _ = run(command, config, args.out, args.threads, args.format)
        return code
    try:
        threads = resolve_threads(args.threads)
    except ValueError as exc:
        print(f"rwre: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    code, _ = run(args.command, _config_from_args(args), args.out, threads, args.format)
    return code


if __name__ == "__main__":
    sys.exit(main())
