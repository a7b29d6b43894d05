"""Command-line front end.

Sub-commands::

    coda-subspace test CSV --k K            test one or several subspace sizes
    coda-subspace simulate --scenario s1    Monte Carlo rejection rates
    coda-subspace transform CSV             pivot coordinates of both blocks
    coda-subspace cdf --scenario s1         empirical vs fitted null cdf

Exit codes: 0 on success, 1 when the data or the statistics cannot be
processed (the error class is printed on stderr), 2 on usage errors.

Environment: ``CODA_SEED`` and ``CODA_JOBS`` supply defaults for ``--seed``
and ``--jobs``. When ``CODA_CI`` is set to a non-empty value other than
``0``, randomized commands refuse to run without an explicit seed.
"""

import argparse
import contextlib
import csv
import io
import json
import math
import os
import sys
from importlib import resources

import jsonschema
import numpy as np

from . import simplex
from .dataset import load_csv, split_table, to_csv_text, ilr_transform_split
from .errors import CodaError, ConfigError, ParseError
from .simulation import (
    FAMILIES,
    SIM_METHODS,
    DistributionSpec,
    ExperimentConfig,
    ScenarioSpec,
    null_statistic_cdf,
    rows_to_csv,
    run_rejection_experiment,
)
from .subspace import SubspaceTestConfig, run_test_ilr

PROG = "coda-subspace"
REDUCED_N_SIM = 200
REDUCED_N_BOOT = 200
FITTED_GRID = 200


class UsageError(Exception):
    """Raised for invalid flag combinations; maps to exit code 2."""


# ---------------------------------------------------------------- schemas

def _schema(kind):
    name = {"test": "test_record.schema.json", "rejection_rate": "rejection_row.schema.json"}[kind]
    return json.loads(resources.files(__package__).joinpath("schemas", name).read_text("utf-8"))


def validate_record(record, kind=None):
    """Validate one JSON record emitted by ``--json``.

    ``kind`` defaults to the record's own ``"record"`` field.

    Raises
    ------
    jsonschema.ValidationError
    """
    kind = kind or record.get("record")
    jsonschema.validate(record, _schema(kind), cls=jsonschema.Draft202012Validator)


def _json_line(record):
    return json.dumps(record, sort_keys=True, allow_nan=False)


# ---------------------------------------------------------------- flag parsing

def _positive_int(text):
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text!r}") from None
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text!r}")
    return value


def _seed(text):
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"seed must be a non-negative integer, got {text!r}") from None
    if value < 0:
        raise argparse.ArgumentTypeError(f"seed must be a non-negative integer, got {text!r}")
    return value


def _level(text):
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"level must be a number, got {text!r}") from None
    if not 0 < value < 1:
        raise argparse.ArgumentTypeError("level must lie strictly between 0 and 1")
    return value


def _k_range(text):
    parts = text.split("..")
    try:
        lo, hi = (int(p) for p in parts)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a..b, got {text!r}") from None
    if lo < 1 or hi < lo:
        raise argparse.ArgumentTypeError(f"empty or non-positive range {text!r}")
    return list(range(lo, hi + 1))


def _sizes(text):
    out = []
    for item in text.split(","):
        try:
            a, b = item.lower().split("x")
            out.append((int(a), int(b)))
        except ValueError:
            raise argparse.ArgumentTypeError(f"sizes must look like 100x100[,20x20], got {text!r}") from None
    if any(a < 2 or b < 2 for a, b in out):
        raise argparse.ArgumentTypeError("every sample size must be at least 2")
    return tuple(out)


def _methods(text):
    items = tuple(m.strip() for m in text.split(",") if m.strip())
    bad = [m for m in items if m not in SIM_METHODS]
    if bad or not items:
        raise argparse.ArgumentTypeError(f"methods must be a comma list from {','.join(SIM_METHODS)}")
    return items


def _names(text):
    return [s.strip() for s in next(csv.reader([text])) if s.strip()]


def _add_seed_jobs(p, jobs=True):
    p.add_argument("--seed", type=_seed, help="root random seed (default: $CODA_SEED)")
    if jobs:
        p.add_argument("--jobs", type=_positive_int, help="worker processes (default: $CODA_JOBS or 1)")


def _add_dist(p):
    p.add_argument("--scenario", default="s1", type=str.lower, choices=["s1", "s2", "s3"])
    p.add_argument("--dist", default="gaussian", choices=FAMILIES)
    p.add_argument("--dof", type=_positive_int, help="Student t degrees of freedom (> 2)")


def build_parser():
    parser = argparse.ArgumentParser(prog=PROG, allow_abbrev=False,
                                     description="Common principal-component subspace test for "
                                                 "compositional data with structural zeros.")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")

    p = sub.add_parser("test", allow_abbrev=False, help="test a CSV dataset")
    p.add_argument("csv")
    kk = p.add_mutually_exclusive_group(required=True)
    kk.add_argument("--k", type=_positive_int, help="subspace size")
    kk.add_argument("--k-range", type=_k_range, metavar="A..B", help="loop over subspace sizes A..B")
    p.add_argument("--method", default="both", choices=["schott", "bootstrap", "both"])
    p.add_argument("--n-boot", type=_positive_int, default=1000)
    p.add_argument("--level", type=_level, default=0.05)
    p.add_argument("--json", action="store_true", help="line-delimited JSON records")
    p.add_argument("--out", help="write the report here instead of stdout")
    p.add_argument("--allow-no-zeros", action="store_true",
                   help="accept a dataset without structural zeros (q = 0)")
    p.add_argument("--zero-parts", type=_names, help="comma list of structural-zero parts")
    _add_seed_jobs(p, jobs=False)

    p = sub.add_parser("simulate", allow_abbrev=False, help="simulated rejection rates")
    _add_dist(p)
    p.add_argument("--sizes", type=_sizes, default=((100, 100),), metavar="AxB[,CxD...]")
    p.add_argument("--methods", type=_methods, default=SIM_METHODS)
    p.add_argument("--k", type=_positive_int, default=2)
    p.add_argument("--n-sim", type=_positive_int)
    p.add_argument("--n-boot", type=_positive_int)
    p.add_argument("--level", type=_level, default=0.05)
    p.add_argument("--reduced", action="store_true",
                   help=f"default to --n-sim {REDUCED_N_SIM} --n-boot {REDUCED_N_BOOT}")
    p.add_argument("--json", action="store_true")
    p.add_argument("--out")
    _add_seed_jobs(p)

    p = sub.add_parser("transform", allow_abbrev=False, help="pivot logratio coordinates")
    p.add_argument("csv")
    p.add_argument("--inverse", action="store_true", help="turn transform output back into compositions")
    p.add_argument("--out")
    p.add_argument("--zero-parts", type=_names)

    p = sub.add_parser("cdf", allow_abbrev=False, help="empirical and fitted null cdf of the statistic")
    _add_dist(p)
    p.add_argument("--sizes", type=_sizes, default=((100, 100),), metavar="AxB")
    p.add_argument("--n-sim", type=_positive_int, default=1000)
    p.add_argument("--out", metavar="PREFIX",
                   help="write PREFIX_empirical.csv and PREFIX_fitted.csv")
    _add_seed_jobs(p)
    return parser


# ---------------------------------------------------------------- environment

def _ci_mode(env):
    return env.get("CODA_CI", "") not in ("", "0")


def resolve_seed(args, env):
    if args.seed is not None:
        return args.seed
    if env.get("CODA_SEED"):
        try:
            return _seed(env["CODA_SEED"])
        except argparse.ArgumentTypeError as exc:
            raise UsageError(f"CODA_SEED: {exc}") from None
    if _ci_mode(env):
        raise UsageError("CODA_CI is set: randomized commands need --seed or CODA_SEED")
    # fresh entropy, reported in the output so the run can be repeated
    return int(np.random.SeedSequence().entropy % (2 ** 63))


def resolve_jobs(args, env):
    if getattr(args, "jobs", None) is not None:
        return args.jobs
    if env.get("CODA_JOBS"):
        try:
            return _positive_int(env["CODA_JOBS"])
        except argparse.ArgumentTypeError as exc:
            raise UsageError(f"CODA_JOBS: {exc}") from None
    return 1


def _distribution(args):
    if args.dist == "student" and args.dof is None:
        raise UsageError("--dist student requires --dof")
    if args.dist != "student" and args.dof is not None:
        raise UsageError("--dof only applies to --dist student")
    try:
        return DistributionSpec(args.dist, args.dof)
    except ConfigError as exc:
        raise UsageError(str(exc)) from None


def _emit(text, path, stdout):
    if path:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    else:
        stdout.write(text)


# ---------------------------------------------------------------- commands

def _fmt(x):
    return f"{x:.6g}"


def _test_records(ds, ilr, k, args, seed):
    base = {
        "record": "test", "source": ds.provenance, "d": ds.d, "q": ds.q,
        "n_y": ds.n_y, "n_z": ds.n_z, "k": k, "level": args.level, "seed": seed,
    }
    methods = ["schott", "bootstrap"] if args.method == "both" else [args.method]
    records, first_exc = [], None
    for method in methods:
        # one generator per k so that a range run repeats the single-k results;
        # each method runs on its own so a failed approximation keeps the bootstrap
        rng = None if seed is None else np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(k,)))
        cfg = SubspaceTestConfig(k=k, method=method, n_boot=args.n_boot, seed=seed)
        try:
            res = run_test_ilr(ilr, cfg, rng)
        except CodaError as exc:
            records.append(dict(base, method=method, statistic=None, p_value=None, reject=None,
                                warnings=[], error=type(exc).__name__, message=str(exc)))
            first_exc = first_exc or exc
            continue
        rec = dict(base, method=res.method, statistic=res.statistic, p_value=res.p_value,
                   reject=bool(res.p_value <= args.level),
                   warnings=list(ds.warnings) + res.warnings, error=None)
        if res.null_params is not None:
            np_ = res.null_params
            rec.update(df=np_.df, scale=np_.scale, mu_t=np_.mu_t, sigma2_t=np_.sigma2_t)
        if res.n_boot_used is not None:
            rec["n_boot"] = res.n_boot_used
        records.append(rec)
    return records, first_exc


def _format_test_report(ds, records):
    lines = [f"source: {ds.provenance}",
             f"D={ds.d} Q={ds.q} n_y={ds.n_y} n_z={ds.n_z}"]
    seen_warn = set()
    for rec in records:
        head = f"k={rec['k']} {rec['method']:<9}"
        if rec["error"]:
            lines.append(f"{head} error: {rec['error']}: {rec['message']}")
            continue
        line = f"{head} T={_fmt(rec['statistic'])} p={_fmt(rec['p_value'])}"
        if rec["method"] == "schott":
            line += f" df={rec['df']} scale={_fmt(rec['scale'])}"
        else:
            line += f" n_boot={rec['n_boot']} seed={rec['seed']}"
        line += f" {'reject' if rec['reject'] else 'retain'} at {rec['level']:g}"
        lines.append(line)
        for w in rec["warnings"]:
            if (rec["k"], w) not in seen_warn:
                seen_warn.add((rec["k"], w))
                lines.append(f"  warning: {w}")
    return "\n".join(lines) + "\n"


def cmd_test(args, env, stdout, stderr):
    ds = load_csv(args.csv, zero_parts=args.zero_parts)
    if ds.q == 0 and not args.allow_no_zeros:
        raise UsageError(f"{args.csv}: no structural zeros found; pass --allow-no-zeros "
                         "(the first block must then be marked with '# q=0' and '# n_y=N' lines)")
    seed = resolve_seed(args, env) if args.method in ("bootstrap", "both") else args.seed
    ks = [args.k] if args.k is not None else args.k_range
    ilr = ilr_transform_split(ds)
    records = []
    failed = False
    for k in ks:
        recs, exc = _test_records(ds, ilr, k, args, seed)
        if exc is not None:
            failed = True
            stderr.write(f"error: {type(exc).__name__}: k={k}: {exc}\n")
        records.extend(recs)
    if args.json:
        text = "".join(_json_line(r) + "\n" for r in records)
    else:
        text = _format_test_report(ds, records)
    _emit(text, args.out, stdout)
    return 1 if failed else 0


def _rejection_record(row, cfg):
    rate = row.rejection_rate
    return {
        "record": "rejection_rate", "scenario": row.scenario, "dist": row.dist, "dof": row.dof,
        "n_y": row.n_y, "n_z": row.n_z, "method": row.method,
        "rejection_rate": None if math.isnan(rate) else rate,
        "n_sim": row.n_sim, "n_failed": row.n_failed, "level": cfg.level, "seed": cfg.seed,
    }


def _scenario(args):
    try:
        return ScenarioSpec(scenario=args.scenario.upper(), k=getattr(args, "k", 2))
    except ConfigError as exc:
        raise UsageError(str(exc)) from None


def cmd_simulate(args, env, stdout, stderr):
    dist = _distribution(args)
    n_sim = args.n_sim or (REDUCED_N_SIM if args.reduced else 1000)
    n_boot = args.n_boot or (REDUCED_N_BOOT if args.reduced else 1000)
    cfg = ExperimentConfig(scenario=_scenario(args), dist=dist, sizes=args.sizes, n_sim=n_sim,
                           level=args.level, methods=args.methods, n_boot=n_boot,
                           seed=resolve_seed(args, env), jobs=resolve_jobs(args, env))
    rows = run_rejection_experiment(cfg)
    if args.json:
        text = "".join(_json_line(_rejection_record(r, cfg)) + "\n" for r in rows)
    else:
        text = f"# seed={cfg.seed} level={cfg.level:g} n_boot={cfg.n_boot}\n" + rows_to_csv(rows)
    _emit(text, args.out, stdout)
    return 0


def _transform_text(ds):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    buf.write(f"# q={ds.q}\n")
    buf.write("# parts=")
    writer.writerow(ds.part_names)
    p = ds.d - 1
    writer.writerow(["block"] + [f"ilr{i}" for i in range(1, p + 1)])
    ilr = ilr_transform_split(ds)
    # the structural-zero block has fewer coordinates; the rest stay empty
    for row in ilr.y_tilde:
        writer.writerow(["Y"] + [repr(float(v)) for v in row] + [""] * ilr.q)
    for row in ilr.z_tilde:
        writer.writerow(["Z"] + [repr(float(v)) for v in row])
    return buf.getvalue()


def _inverse_transform_text(path):
    try:
        text = open(path, encoding="utf-8").read()
    except (OSError, UnicodeDecodeError) as exc:
        raise ParseError(f"{path}: {exc}") from exc
    q = parts = None
    body = []
    for ln in text.splitlines():
        if ln.startswith("# q="):
            q = int(ln[4:])
        elif ln.startswith("# parts="):
            parts = next(csv.reader([ln[8:]]))
        elif ln.strip() and not ln.startswith("#"):
            body.append(ln)
    if q is None or parts is None or not body:
        raise ParseError(f"{path}: not a transform output (missing '# q=' or '# parts=' lines)")
    d = len(parts)
    y_rows, z_rows = [], []
    for lineno, row in enumerate(csv.reader(body[1:]), start=2):
        if len(row) != d or row[0] not in ("Y", "Z"):
            raise ParseError(f"{path}: malformed row {lineno}")
        try:
            if row[0] == "Y":
                y_rows.append([float(v) for v in row[1:d - q]])
            else:
                z_rows.append([float(v) for v in row[1:]])
        except ValueError as exc:
            raise ParseError(f"{path}: row {lineno}: {exc}") from exc
    z = simplex.ilr_inv(np.array(z_rows, dtype=float).reshape(-1, d - 1))
    full = z
    if y_rows:
        y = simplex.ilr_inv(np.array(y_rows, dtype=float))
        full = np.vstack([np.hstack([y, np.zeros((y.shape[0], q))]), z])
    zero = list(parts[d - q:]) if q else None
    ds = split_table(parts, full, zero_parts=zero, provenance=path,
                     n_y_without_zeros=len(y_rows) if q == 0 else 0)
    return to_csv_text(ds)


def cmd_transform(args, env, stdout, stderr):
    if args.inverse:
        if args.zero_parts:
            raise UsageError("--zero-parts has no effect with --inverse")
        text = _inverse_transform_text(args.csv)
    else:
        text = _transform_text(load_csv(args.csv, zero_parts=args.zero_parts))
    _emit(text, args.out, stdout)
    return 0


def _cdf_tables(res):
    emp = io.StringIO()
    writer = csv.writer(emp, lineterminator="\n")
    writer.writerow(["statistic", "empirical_cdf"])
    for v, c in zip(res.values, res.cdf):
        writer.writerow([repr(float(v)), repr(float(c))])
    fit = io.StringIO()
    writer = csv.writer(fit, lineterminator="\n")
    writer.writerow(["statistic", "fitted_cdf"])
    top = max(float(res.values[-1]), res.params.scale * (res.params.df + 6 * math.sqrt(2 * res.params.df)))
    grid = np.linspace(0.0, 1.05 * top, FITTED_GRID)
    for v, c in zip(grid, res.fitted_cdf(grid)):
        writer.writerow([repr(float(v)), repr(float(c))])
    return emp.getvalue(), fit.getvalue()


def cmd_cdf(args, env, stdout, stderr):
    if args.scenario != "s1":
        raise UsageError("cdf is only defined for scenario s1 (null hypothesis true)")
    if len(args.sizes) != 1:
        raise UsageError("cdf takes a single AxB size pair")
    dist = _distribution(args)
    cfg = ExperimentConfig(scenario=_scenario(args), dist=dist, sizes=args.sizes, n_sim=args.n_sim,
                           methods=("schott_theo",), seed=resolve_seed(args, env),
                           jobs=resolve_jobs(args, env))
    res = null_statistic_cdf(cfg)
    emp, fit = _cdf_tables(res)
    if args.out:
        _emit(emp, f"{args.out}_empirical.csv", stdout)
        _emit(fit, f"{args.out}_fitted.csv", stdout)
    else:
        stdout.write("# empirical\n" + emp + "# fitted\n" + fit)
    q95 = res.fitted_at_empirical_quantile(0.95)
    side = "right" if q95 > 0.95 else "left"
    stderr.write(
        f"seed={cfg.seed} n_y={res.n_y} n_z={res.n_z} n_sim={cfg.n_sim} "
        f"df={res.params.df} scale={_fmt(res.params.scale)} mu_t={_fmt(res.params.mu_t)} "
        f"sigma2_t={_fmt(res.params.sigma2_t)}\n"
        f"ks_distance={res.ks_distance():.6f}\n"
        f"fitted_cdf_at_empirical_q95={q95:.6f} empirical_upper_tail={side}_of_fitted\n")
    return 0


COMMANDS = {"test": cmd_test, "simulate": cmd_simulate, "transform": cmd_transform, "cdf": cmd_cdf}


def main(argv=None, env=None, stdout=None, stderr=None):
    """Run the CLI and return its exit code."""
    env = os.environ if env is None else env
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    parser = build_parser()
    try:
        with contextlib.redirect_stdout(stdout), contextlib.redirect_stderr(stderr):
            args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2
    try:
        return COMMANDS[args.command](args, env, stdout, stderr)
    except UsageError as exc:
        stderr.write(f"{PROG} {args.command}: usage error: {exc}\n")
        return 2
    except ConfigError as exc:
        stderr.write(f"{PROG} {args.command}: usage error: ConfigError: {exc}\n")
        return 2
    except (CodaError, ValueError, ArithmeticError) as exc:
        stderr.write(f"error: {type(exc).__name__}: {exc}\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
