"""Command-line front end: config loading, experiment dispatch and artifact emission.

Exit status: 0 when every check of the run passes, 1 when a check fails,
2 on usage errors and 3 when the configuration is invalid or infeasible.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import json
import math
import os
import sys
import tempfile
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import stats as sps

from . import abelian
from .occupancy import NonSummableError, OverflowBudgetError
from .regvar import (
    DomainError,
    GrowthFunction,
    InfeasibleThresholdError,
    RegVarTail,
    SlowlyVaryingSpec,
    naive_threshold,
    solve_threshold,
    stable_tail,
)
from .stats import (
    TARGETS,
    ConfigError,
    ExperimentConfig,
    convergence_report,
    dispersion_test,
    exp_functional_samples,
    load_config_dict,
    mixed_poisson_reference,
    run_replications,
    stream,
    two_sample_test,
)
from .subordinator import TruncationRequiredError, regvar_subordinator, simulate_path

EXIT_OK, EXIT_CHECK, EXIT_USAGE, EXIT_INVALID = 0, 1, 2, 3
REF_TAG = 0x5EED  # stream key for reference samples, disjoint from replication keys
DEFAULT_OUT = "runs"
_INVALID = (ConfigError, DomainError, InfeasibleThresholdError, OverflowBudgetError, NonSummableError,
            TruncationRequiredError, abelian.WindowError)


# -- artifacts ---------------------------------------------------------------

def write_atomic(path: str, text: str) -> None:
    """Write via a temporary file in the same directory and rename into place."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


@dataclass
class Check:
    name: str
    passed: bool
    value: float | None = None
    detail: str = ""


@dataclass
class RunManifest:
    command: str
    argv: list
    config: dict | None = None
    seed: int | None = None
    started: str = ""
    finished: str = ""
    artifacts: list = field(default_factory=list)
    checks: list = field(default_factory=list)
    status: str = "running"
    exit_code: int | None = None
    error: str | None = None

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True, default=float)


class Run:
    """Collects artifacts and checks; the manifest is written on every exit path."""

    def __init__(self, command, argv, out_dir):
        self.out_dir = out_dir
        self.manifest = RunManifest(command=command, argv=list(argv), started=_now())

    def emit(self, name: str, text: str) -> str | None:
        if self.out_dir is None:
            return None
        path = os.path.join(self.out_dir, name)
        write_atomic(path, text)
        self.manifest.artifacts.append(path)
        return path

    def check(self, name, passed, value=None, detail=""):
        c = Check(name, bool(passed), None if value is None else float(value), detail)
        self.manifest.checks.append(c)
        print(f"{'PASS' if c.passed else 'FAIL'} {name}" + (f": {detail}" if detail else ""))
        return c

    def finish(self, code: int, error: str | None = None) -> int:
        m = self.manifest
        m.finished = _now()
        m.exit_code = code
        m.error = error
        m.status = {EXIT_OK: "pass", EXIT_CHECK: "fail"}.get(code, "error")
        if self.out_dir is not None:
            path = os.path.join(self.out_dir, "manifest.json")
            write_atomic(path, m.to_json())
        return code


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


# -- configuration -------------------------------------------------------------

def load_config(path: str | None, overrides: dict | None = None) -> ExperimentConfig:
    """Read a JSON config, apply non-None ``overrides`` and validate.

    Precedence is flag > file > default. Raises :class:`ConfigError` listing
    every offending field.
    """
    raw = {}
    if path is not None:
        try:
            with open(path) as fh:
                raw = json.load(fh)
        except FileNotFoundError as exc:
            raise ConfigError([("config", f"file not found: {path}")]) from exc
        except json.JSONDecodeError as exc:
            raise ConfigError([("config", f"invalid JSON: {exc}")]) from exc
        if not isinstance(raw, dict):
            raise ConfigError([("config", "top level must be a JSON object")])
    return load_config_dict(raw, overrides)


def _overrides(args) -> dict:
    out = {
        "model": args.model,
        "alpha": args.alpha,
        "beta": args.beta,
        "ell": args.ell,
        "epsilon": args.epsilon,
        "kappa": args.kappa,
        "stop_tol": args.stop_tol,
        "tail_tol": args.tail_tol,
        "replications": args.replications,
        "master_seed": args.seed,
        "strict": args.strict,
        "overflow_budget": args.overflow_budget,
        "threads": args.threads,
        "records": args.record,
    }
    sizes = [(k, v) for k, v in (("fixed", args.n), ("poissonized", args.poissonized),
                                 ("poissonized", getattr(args, "t", None))) if v is not None]
    if sizes:
        kind, value = sizes[0]
        out["allocation"] = kind
        out["size"] = int(value) if kind == "fixed" and float(value).is_integer() else value
    return out


# -- commands ----------------------------------------------------------------

def cmd_threshold(args, run: Run) -> int:
    if args.alpha is None or args.t is None:
        raise ConfigError([(k, "required") for k, v in (("alpha", args.alpha), ("t", args.t)) if v is None])
    ell = SlowlyVaryingSpec.parse(args.ell) if args.ell else stable_tail(args.alpha).ell
    RegVarTail(args.alpha, ell)  # validates alpha and ell
    r = solve_threshold(args.alpha, ell, args.t)
    out = {"alpha": args.alpha, "ell": ell.to_string(), "t": args.t, "r": r,
           "r_naive": naive_threshold(args.alpha, ell, args.t)}
    print(f"{r:.{args.digits}f}")
    if run.out_dir is not None:
        run.emit("threshold.json", json.dumps(out, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_verify_abelian(args, run: Run) -> int:
    lemmas = abelian.LEMMAS if args.lemma == "all" else (args.lemma,)
    ell = SlowlyVaryingSpec.parse(args.ell or "const:1")
    grid = tuple(sorted(args.t_grid or (1e4, 1e6, 1e8)))
    q = GrowthFunction.parse(args.q or "pow:0.4")
    results = []
    ok = True
    for lemma in lemmas:
        case = abelian.AbelianCase(lemma, ell, q, t_grid=grid, beta=args.beta, gamma=args.gamma)
        res = abelian.run_case(case)
        results += res
        for r in res:
            print(f"{lemma} t={r.t:g} q={r.q} ratio={r.ratio:.12g} tail_bound={r.tail_bound:.3g}")
            ok &= run.check(f"{lemma} tail bound t={r.t:g}", r.tail_bound <= 1e-6, r.tail_bound,
                            f"{r.tail_bound:.3g} <= 1e-6").passed
            if ell.kind == "const":
                exact = abelian.closed_form_ratio(lemma, r.q, args.beta, args.gamma)
                err = abs(r.ratio - exact) / exact
                ok &= run.check(f"{lemma} closed form t={r.t:g}", err <= args.closed_tol, err,
                                f"relative error {err:.3g} <= {args.closed_tol:g}").passed
        dev = [abs(r.ratio - 1.0) for r in res]
        ok &= run.check(f"{lemma} |ratio-1| at t={grid[-1]:g}", dev[-1] < args.tol, dev[-1],
                        f"{dev[-1]:.3g} < {args.tol:g}").passed
        if len(dev) > 1:
            mono = all(b <= a + args.mono_slack for a, b in zip(dev, dev[1:]))
            ok &= run.check(f"{lemma} |ratio-1| nonincreasing", mono, None,
                            " -> ".join(f"{d:.3g}" for d in dev)).passed
    meta = {"ell": ell.to_string(), "q": q.to_string(), "t_grid": list(grid), "beta": args.beta, "gamma": args.gamma}
    run.emit("abelian.csv", "# " + json.dumps(meta, sort_keys=True) + "\n" + abelian.report_csv(results))
    return EXIT_OK if ok else EXIT_CHECK


def _records_u(cfg: ExperimentConfig, table) -> dict:
    """Scale ``u`` of each record relative to the real-valued threshold at ``cfg.size``."""
    alpha, ell = cfg.index_params()
    r_real = solve_threshold(alpha, ell, cfg.size)
    out = {}
    for rec in cfg.parsed_records():
        g = rec.growth
        if g is not None and g.kind == "threshold-r":
            out[rec.label] = g.scale
        else:
            out[rec.label] = table.indices[rec.label] / r_real
    return out


def cmd_simulate(args, run: Run) -> int:
    cfg = load_config(args.config, _overrides(args))
    run.manifest.config = cfg.to_dict()
    run.manifest.seed = cfg.master_seed
    table = run_replications(cfg)
    run.emit("replications.csv", table.to_csv())
    for j, rec in enumerate(cfg.records):
        k = table.counts(rec)
        print(f"{rec}: r={table.indices[rec]} mean={k.mean():.6g} var={k.var(ddof=1) if len(k) > 1 else 0:.6g}")
        if len(k) >= 500:
            rep = dispersion_test(k)
            rep.diagnostics["record"] = rec
            run.emit(f"dispersion_{j}.json", rep.to_json())
    return EXIT_OK


def cmd_verify_poisson_limit(args, run: Run) -> int:
    cfg = load_config(args.config, _overrides(args)).replace(conditional_means=True)
    run.manifest.config = cfg.to_dict()
    run.manifest.seed = cfg.master_seed
    table = run_replications(cfg)
    run.emit("replications.csv", table.to_csv())
    m = len(table)
    alpha, _ = cfg.index_params()
    us = _records_u(cfg, table)
    ok = True
    i_ref = None
    if cfg.model != "powerlaw":
        i_ref = exp_functional_samples(cfg, m, cfg.master_seed + 1)
    for j, rec in enumerate(cfg.records):
        k = table.counts(rec).astype(float)
        u = us[rec]
        rng = stream(cfg.master_seed, REF_TAG, j)
        if cfg.model == "powerlaw":
            lam = u ** (-alpha - 1.0)
            ref = rng.poisson(lam, m)
            mean, se = k.mean(), k.std(ddof=1) / math.sqrt(m)
            ok &= run.check(f"{rec} mean within 3 s.e. of {lam:.6g}", abs(mean - lam) <= 3 * se, mean,
                            f"mean {mean:.5g}, s.e. {se:.3g}").passed
            disp = dispersion_test(k)
            run.emit(f"dispersion_{j}.json", disp.to_json())
            ok &= run.check(f"{rec} dispersion in [0.9, 1.1]", 0.9 <= disp.statistic <= 1.1, disp.statistic,
                            f"D = {disp.statistic:.4f}").passed
        else:
            mean_i = alpha ** (-alpha) if cfg.model == "stable" else float(i_ref.mean())
            lam = u ** (-alpha - 1.0) * mean_i
            mean = k.mean()
            ok &= run.check(f"{rec} mean within 10% of {lam:.6g}", abs(mean / lam - 1) <= 0.10, mean,
                            f"mean {mean:.5g}").passed
            ref = mixed_poisson_reference(alpha, u, i_ref, rng)
        rep = two_sample_test(k.astype(np.int64), ref)
        rep.diagnostics.update(record=rec, u=u)
        run.emit(f"two_sample_{j}.json", rep.to_json())
        ok &= run.check(f"{rec} two-sample p > 0.01", rep.p_value > 0.01, rep.p_value,
                        f"p = {rep.p_value:.4g}").passed
    if len(cfg.records) >= 2:
        a, b = (table.counts(r).astype(float) for r in cfg.records[:2])
        corr = float(np.corrcoef(a, b)[0, 1])
        se = 1.0 / math.sqrt(m)
        ok &= run.check("cross-replication correlation within 3 s.e. of 0", abs(corr) <= 3 * se, corr,
                        f"corr {corr:.4f}, s.e. {se:.4f}").passed
        ea, eb = (table[f"E[{r}]"] for r in cfg.records[:2])
        resid = float(np.corrcoef(a - ea, b - eb)[0, 1])
        print(f"info conditional residual correlation {resid:.4f} (s.e. {se:.4f})")
    return EXIT_OK if ok else EXIT_CHECK


_LLN_DEFAULT_TOL = {"lln-kn": 0.05}


def cmd_verify_lln(args, run: Run) -> int:
    grid = sorted(args.grid or (1e5, 1e6, 1e7))
    allocation = args.allocation or ("poissonized" if args.target in ("lln-kn", "lln-knr", "rho-pathwise") else "fixed")
    over = _overrides(args)
    over.update(allocation=allocation, size=int(grid[-1]) if allocation == "fixed" else grid[-1])
    cfg = load_config(args.config, over)
    run.manifest.config = cfg.to_dict()
    run.manifest.seed = cfg.master_seed
    grid = [int(n) for n in grid] if allocation == "fixed" else grid
    report = convergence_report(args.target, cfg, grid, growth=args.q, r_values=tuple(args.r_values))
    run.emit("ratios.csv", report.to_csv())
    final = report.final_rows()
    flagged = sum(row.flagged for row in report.rows)
    if flagged:
        print(f"info {flagged} grid rows flagged (truncation or overflow constraint)")
    if args.target == "to-zero":
        frac = float(np.mean([row.ratio for row in final]))
        ok = run.check(f"P(K=0) >= {args.min_fraction:g}", frac >= args.min_fraction, frac, f"{frac:.4f}").passed
        return EXIT_OK if ok else EXIT_CHECK
    tol = args.tol if args.tol is not None else _LLN_DEFAULT_TOL.get(args.target, 0.10)
    ok = True
    for r in sorted({row.r for row in final}) if args.target == "lln-knr" else [None]:
        frac = report.fraction_within(tol, r)
        label = f"r={r} " if r is not None else ""
        ok &= run.check(f"{args.target} {label}within {tol:g} on >= {args.min_fraction:g} of paths",
                        frac >= args.min_fraction, frac, f"fraction {frac:.3f}").passed
    return EXIT_OK if ok else EXIT_CHECK


def cmd_verify_tail(args, run: Run) -> int:
    model = args.model or "stable"
    if model == "powerlaw" or args.alpha is None or (model == "regvar" and not args.ell):
        raise ConfigError([("model/alpha/ell", "verify-tail needs a stable or regvar tail with alpha (and ell)")])
    tail = stable_tail(args.alpha) if model == "stable" else RegVarTail(args.alpha, SlowlyVaryingSpec.parse(args.ell))
    spec = regvar_subordinator(tail)
    eps = args.epsilon if args.epsilon is not None else 1e-6
    seed = args.seed if args.seed is not None else 0
    run.manifest.seed = seed
    run.manifest.config = {"model": model, "alpha": args.alpha, "ell": tail.ell.to_string(), "epsilon": eps,
                           "samples": args.samples}
    # inverse round trip on a log grid above epsilon
    ys = np.logspace(math.log10(eps), math.log10(eps) + 12, 241)
    back = spec.inverse_tail(spec.nu_bar(ys))
    rt = float(np.max(np.abs(back / ys - 1.0)))
    ok = run.check("inverse tail round trip <= 1e-10", rt <= 1e-10, rt, f"max relative error {rt:.3g}").passed
    nb = spec.nu_bar(ys)
    ok &= run.check("tail nonincreasing on grid", bool(np.all(np.diff(nb) <= 0)), None).passed
    # jump sizes of a truncated path follow nu_bar(y) / nu_bar(eps) above eps
    rng = stream(seed, REF_TAG)
    rate = float(spec.nu_bar(eps))
    u = 1.0 - rng.random(args.samples)
    jumps = np.maximum(spec.inverse_tail(rate * u), eps)
    ks = sps.kstest(jumps, lambda y: 1.0 - spec.nu_bar(np.maximum(y, eps)) / rate)
    ok &= run.check("jump sizes match truncated tail (KS p > 0.01)", ks.pvalue > 0.01, ks.pvalue,
                    f"D = {ks.statistic:.4g}, p = {ks.pvalue:.4g}").passed
    path = simulate_path(spec, eps, 1e-6, stream(seed, REF_TAG, 1))
    gaps = np.diff(np.concatenate(([0.0], path.epochs)))
    gap_mean = float(gaps.mean() * rate)
    se = 1.0 / math.sqrt(len(gaps))
    ok &= run.check("epoch gaps have mean 1/nu_bar(eps) within 4 s.e.", abs(gap_mean - 1) <= 4 * se, gap_mean,
                    f"scaled mean {gap_mean:.4f}, s.e. {se:.3g}").passed
    out = {"round_trip": rt, "ks_statistic": float(ks.statistic), "ks_p_value": float(ks.pvalue),
           "scaled_gap_mean": gap_mean, "n_gaps": int(len(gaps))}
    run.emit("tail.json", json.dumps(out, indent=2, sort_keys=True))
    return EXIT_OK if ok else EXIT_CHECK


# -- parser --------------------------------------------------------------------

def _float_list(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


def _common(p: argparse.ArgumentParser, out_default: str | None) -> None:
    p.add_argument("--model", choices=("stable", "regvar", "powerlaw"))
    p.add_argument("--alpha", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--ell", help="const:c | logpow:p[,offset]")
    p.add_argument("--epsilon", type=float)
    p.add_argument("--kappa", type=float)
    p.add_argument("--stop-tol", type=float)
    p.add_argument("--tail-tol", type=float)
    p.add_argument("--overflow-budget", type=float)
    p.add_argument("--n", type=float, help="fixed number of balls")
    p.add_argument("--poissonized", type=float, metavar="T", help="Poissonized allocation at intensity T")
    p.add_argument("--record", action="append", help="r-star[*u] | exact:G | atleast:G | total (repeatable)")
    p.add_argument("--replications", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int, help="worker threads, 0 = auto")
    p.add_argument("--config", help="JSON file mirroring the experiment config")
    p.add_argument("--out-dir", default=out_default)
    p.add_argument("--strict", action=argparse.BooleanOptionalAction, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="regcomp", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("threshold", help="solve for the moderate-count threshold r(t)")
    _common(p, None)
    p.add_argument("--t", type=float)
    p.add_argument("--digits", type=int, default=2)
    p.set_defaults(func=cmd_threshold)

    p = sub.add_parser("verify-abelian", help="Abelian ratios on a t grid")
    _common(p, None)
    p.add_argument("--lemma", choices=abelian.LEMMAS + ("all",), default="karamata")
    p.add_argument("--q", help="growth function, e.g. pow:0.4")
    p.add_argument("--t", dest="t_grid", type=float, action="append", help="grid point (repeatable)")
    p.add_argument("--gamma", type=float, default=0.5)
    p.add_argument("--tol", type=float, default=0.02)
    p.add_argument("--closed-tol", type=float, default=1e-8)
    p.add_argument("--mono-slack", type=float, default=1e-10)
    p.set_defaults(func=cmd_verify_abelian, beta_default=-0.5)

    p = sub.add_parser("simulate", help="replicate an occupancy experiment and write the counts")
    _common(p, DEFAULT_OUT)
    p.add_argument("--t", type=float, help="alias of --poissonized")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("verify-poisson-limit", help="Poisson / mixed Poisson limit at the threshold")
    _common(p, DEFAULT_OUT)
    p.add_argument("--t", type=float, help="alias of --poissonized")
    p.set_defaults(func=cmd_verify_poisson_limit)

    p = sub.add_parser("verify-lln", help="pathwise convergence reports")
    _common(p, DEFAULT_OUT)
    p.add_argument("--target", choices=TARGETS, required=True)
    p.add_argument("--grid", type=_float_list, help="comma-separated n (or t) values")
    p.add_argument("--allocation", choices=("fixed", "poissonized"))
    p.add_argument("--q", help="growth function for thm-main2, thm-main3 and to-zero")
    p.add_argument("--r-values", type=lambda s: [int(v) for v in s.split(",")], default=[1, 2, 3])
    p.add_argument("--tol", type=float)
    p.add_argument("--min-fraction", type=float, default=0.9)
    p.set_defaults(func=cmd_verify_lln)

    p = sub.add_parser("verify-tail", help="truncated jump-size law against the Levy tail")
    _common(p, None)
    p.add_argument("--samples", type=int, default=100_000)
    p.set_defaults(func=cmd_verify_tail)
    return parser


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    if args.command == "verify-abelian" and args.beta is None:
        args.beta = args.beta_default
    if args.command == "verify-lln" and args.target == "to-zero" and "--min-fraction" not in argv:
        args.min_fraction = 0.95
    run = Run(args.command, argv, args.out_dir)
    try:
        code = args.func(args, run)
    except _INVALID as exc:
        print(f"error: {exc}", file=sys.stderr)
        return run.finish(EXIT_INVALID, str(exc))
    except Exception as exc:
        run.finish(EXIT_INVALID if isinstance(exc, ValueError) else EXIT_CHECK, f"{type(exc).__name__}: {exc}")
        raise
    return run.finish(code)


if __name__ == "__main__":
    sys.exit(main())
