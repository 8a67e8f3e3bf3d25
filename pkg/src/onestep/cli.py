"""Command-line interface: ``onestep <command> [options]``.

Commands: ``weights``, ``tune``, ``twostep``, ``estimate``, ``simulate`` and
``casestudy``. Options may also come from an INI file given with
``--config``; its section named after the command supplies defaults, flags on
the command line win, and unknown keys are an error.

Exit codes: 0 success, 2 bad input or configuration, 3 infeasible balance
constraints, 4 solver or model-fit failure.
"""

from __future__ import annotations

import argparse
import configparser
import sys
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .basis import BasisSpec, ZeroSpreadWarning, expand, standardized_tolerances
from .data import (
    Schema,
    SchemaError,
    StudyDataset,
    TargetProfile,
    impute_missing,
    load_dataset,
    load_profile,
    read_table,
    read_weights,
    write_weights,
)
from .estimate import (
    BootstrapError,
    WeightingConfig,
    bootstrap_ci,
    ess,
    hajek,
    max_normalized_weight,
    tasmd,
    weighted_means,
)
from .propensity import ConvergenceError, two_step_weights
from .report import Report
from .solver import INFEASIBLE, BalanceProblem, solve_weights
from .tune import DEFAULT_GRID, TuningError, TuningGrid, tune_tolerance

EXIT_OK, EXIT_INPUT, EXIT_INFEASIBLE, EXIT_FAILURE = 0, 2, 3, 4
DESK_REPS, PAPER_REPS = 200, 800


class InputError(Exception):
    """Bad flags, configuration or input files (exit code 2)."""


class Infeasible(Exception):
    """Balance constraints cannot be met (exit code 3)."""


class Failure(Exception):
    """Solver or model fit did not finish (exit code 4)."""


def _csv_list(text):
    return [s.strip() for s in text.split(",") if s.strip()]


def _grid(text):
    try:
        return TuningGrid(tuple(float(x) for x in _csv_list(text))).multipliers
    except ValueError as e:
        raise argparse.ArgumentTypeError(str(e))


def _nonneg_float(text):
    x = float(text)
    if not np.isfinite(x) or x < 0:
        raise argparse.ArgumentTypeError("must be a finite nonnegative number")
    return x


def _count(text):
    n = int(text)
    if n < 0:
        raise argparse.ArgumentTypeError("must be nonnegative")
    return n


def _positive(text):
    n = int(text)
    if n < 1:
        raise argparse.ArgumentTypeError("must be at least 1")
    return n


# ---------------------------------------------------------------- data input


def _data_args(p, outcomes=False):
    p.add_argument("--data", required=True, help="CSV file with one row per unit")
    p.add_argument("--treatment", default="Z", help="0/1 treatment column (default Z)")
    p.add_argument("--selection", default=None, help="0/1 study-selection column, if nested")
    p.add_argument("--id", default=None, help="unit id column (default: 'id' if present)")
    p.add_argument("--covariates", type=_csv_list, default=None,
                   help="comma-separated covariate columns (default: all other columns)")
    p.add_argument("--categorical", action="append", default=[], metavar="VAR=COL;COL",
                   help="one-hot columns of a categorical covariate (repeatable)")
    if outcomes:
        p.add_argument("--outcomes", type=_csv_list, required=True, help="comma-separated outcomes")


def _load(args, outcomes=()) -> StudyDataset:
    header, _ = read_table(args.data)
    id_col = args.id if args.id is not None else ("id" if "id" in header else None)
    cat = {}
    for spec in args.categorical:
        var, sep, cols = spec.partition("=")
        if not sep or not cols:
            raise InputError(f"--categorical expects VAR=COL;COL, got {spec!r}")
        cat[var.strip()] = tuple(c.strip() for c in cols.split(";"))
    roles = {args.treatment, *outcomes, args.selection, id_col} - {None}
    covs = tuple(args.covariates) if args.covariates else tuple(h for h in header if h not in roles)
    ds = load_dataset(args.data, Schema(args.treatment, tuple(outcomes), args.selection, id_col, covs, cat))
    return impute_missing(ds) if ds.has_missing() else ds


def _profile_basis(args, ds):
    prof = load_profile(args.profile)
    text = args.basis if args.basis else [t for t in prof.names if _parses(t, ds.names)]
    try:
        basis = BasisSpec.parse(text, ds.names)
        prof = prof.select(basis.labels(ds.names))
    except KeyError as e:
        raise InputError(str(e).strip('"'))
    if len(basis) == 0:
        raise InputError("no profile terms match the data columns")
    if prof.spreads is None:
        raise InputError("profile file needs an 'sd' column to scale tolerances")
    return prof, basis


def _parses(term, names):
    try:
        BasisSpec.parse([term], names)
        return True
    except (KeyError, ValueError):
        return False


def _tolerances(mult, prof):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ZeroSpreadWarning)
        return standardized_tolerances(mult, prof)


def _out(args) -> Path:
    d = Path(args.out_dir)
    d.mkdir(parents=True, exist_ok=True)
    return d


# ------------------------------------------------------------------- weights


def _balance_table(rep, name, prof, deltas, B1, B0, s1, s0):
    m1, m0 = weighted_means(B1, s1.weights), weighted_means(B0, s0.weights)
    t1, t0 = tasmd(m1, prof), tasmd(m0, prof)
    rep.add_table(name, ["term", "target", "sd", "delta", "mean_treated", "mean_control",
                         "tasmd_treated", "tasmd_control", "dual_treated", "dual_control"],
                  [(prof.names[k], prof.means[k], prof.spreads[k], deltas[k], m1[k], m0[k],
                    t1[k], t0[k], s1.lam[k], s0.lam[k]) for k in range(len(prof.names))])
    return t1, t0


def cmd_weights(args, force_tune=False) -> int:
    ds = _load(args)
    prof, basis = _profile_basis(args, ds)
    r1, r0 = ds.group(1), ds.group(0)
    B1, B0 = expand(ds.covariates[r1], basis), expand(ds.covariates[r0], basis)
    rep = Report("tune" if force_tune else "weights")
    tuned = None
    if force_tune or args.tune:
        try:
            tuned = tune_tolerance([B1, B0], prof, args.grid, args.nonneg)
        except TuningError as e:
            _tuning_table(rep, e.per_candidate)
            rep.write(_out(args) / "report.txt")
            raise Infeasible(f"{e}; the smallest relaxation is reported per candidate")
        mult = tuned.chosen_multiplier
        s1, s0 = tuned.solutions
    else:
        mult = args.tol_multiplier
        d = _tolerances(mult, prof)
        s1, s0 = (solve_weights(BalanceProblem(B, prof.means, d, args.nonneg)) for B in (B1, B0))
    deltas = _tolerances(mult, prof)
    rep.add_values("run", {
        "data": Path(args.data).name, "profile": Path(args.profile).name,
        "basis": ",".join(prof.names), "multiplier": mult, "tuned": tuned is not None,
        "nonnegative": args.nonneg,
    })
    summary = {
        "status_treated": s1.status, "status_control": s0.status,
        "n_treated": len(r1), "n_control": len(r0),
        "iterations_treated": s1.iterations, "iterations_control": s0.iterations,
    }
    out = _out(args)
    if not (s1.optimal and s0.optimal):
        hints = [s.relaxation_hint for s in (s1, s0) if s.status == INFEASIBLE]
        summary["relaxation_hint"] = max(hints) if hints else None
        rep.add_values("summary", summary)
        rep.write(out / "report.txt")
        if hints:
            raise Infeasible(
                f"balance constraints are infeasible at multiplier {mult}; widening every "
                f"tolerance by {max(hints):.6g} (absolute) makes uniform weights feasible"
            )
        raise Failure("solver stopped at its iteration limit")
    summary.update({
        "ess_treated": ess(s1.weights), "ess_control": ess(s0.weights),
        "max_weight_treated": max_normalized_weight(s1.weights),
        "max_weight_control": max_normalized_weight(s0.weights),
        "nu_treated": s1.nu, "nu_control": s0.nu,
    })
    rep.add_values("summary", summary)
    t1, t0 = _balance_table(rep, "balance", prof, deltas, B1, B0, s1, s0)
    if tuned is not None:
        _tuning_table(rep, tuned.per_candidate)
    write_weights(out / "weights_treated.csv", [ds.ids[i] for i in r1], s1.weights)
    write_weights(out / "weights_control.csv", [ds.ids[i] for i in r0], s0.weights)
    rep.write(out / "report.txt")
    print(f"multiplier {mult}: ESS treated {summary['ess_treated']:.1f}, control "
          f"{summary['ess_control']:.1f}; max TASMD {max(t1.max(), t0.max()):.4g}")
    print(f"wrote {out / 'weights_treated.csv'}, {out / 'weights_control.csv'}, {out / 'report.txt'}")
    return EXIT_OK


def _tuning_table(rep, cands):
    rep.add_table("tuning", ["multiplier", "feasible", "score", "ess_treated", "ess_control", "max_tasmd"],
                  [(c.multiplier, c.feasible, c.score if c.feasible else None,
                    c.ess[0] if c.ess else None, c.ess[1] if c.ess else None,
                    c.max_tasmd) for c in cands])


# ------------------------------------------------------------------- twostep


def cmd_twostep(args) -> int:
    if not args.selection:
        raise InputError("two-step weights need a --selection column")
    ds = _load(args)

    def cols(text, default):
        if text is None:
            return default
        if text.strip().lower() == "none":
            return []
        missing = [c for c in _csv_list(text) if c not in ds.names]
        if missing:
            raise InputError(f"unknown covariates {missing}")
        return _csv_list(text)

    scov = cols(args.selection_covariates, list(ds.names))
    tcov = cols(args.treatment_covariates, scov)
    pos = {n: j for j, n in enumerate(ds.names)}
    Xs = ds.covariates[:, [pos[c] for c in scov]]
    Xt = ds.covariates[:, [pos[c] for c in tcov]]
    z = np.nan_to_num(ds.treatment, nan=0.0)
    try:
        tw = two_step_weights(
            ds.selection, z, Xs,
            treatment_covariates=None if args.known_e is not None else Xt,
            known_e=args.known_e, mode=args.mode,
        )
    except ConvergenceError as e:
        m = e.model
        raise Failure(f"{e} (iterations {m.iterations}, gradient norm {m.final_gradient_norm:.3g})")
    rep = Report("twostep")
    rep.add_values("run", {"data": Path(args.data).name, "mode": args.mode,
                           "known_e": args.known_e, "selection_covariates": ",".join(scov),
                           "treatment_covariates": "" if args.known_e is not None else ",".join(tcov)})
    w1, w0 = tw.treated_weights, tw.control_weights
    rep.add_values("summary", {
        "n_treated": w1.size, "n_control": w0.size,
        "ess_treated": ess(w1), "ess_control": ess(w0),
        "max_weight_treated": max_normalized_weight(w1),
        "max_weight_control": max_normalized_weight(w0),
    })
    for label, model, names in (("selection_model", tw.selection_model, scov),
                                ("treatment_model", tw.treatment_model, tcov)):
        if model is not None:
            rep.add_table(label, ["term", "coefficient"],
                          zip(["(intercept)", *names], model.coefficients))
    out = _out(args)
    write_weights(out / "weights_treated.csv", [ds.ids[i] for i in tw.treated_rows], w1)
    write_weights(out / "weights_control.csv", [ds.ids[i] for i in tw.control_rows], w0)
    rep.write(out / "report.txt")
    print(f"{args.mode} weights: ESS treated {ess(w1):.1f}, control {ess(w0):.1f}")
    return EXIT_OK


# ------------------------------------------------------------------ estimate


def _aligned(path, ds, rows, label):
    ids, w = read_weights(path)
    want = {ds.ids[i]: i for i in rows}
    if len(ids) != len(want) or set(ids) != set(want):
        raise InputError(f"{label} weight ids do not match the {label} units in the data")
    return np.array([want[i] for i in ids]), w


def cmd_estimate(args) -> int:
    ds = _load(args, args.outcomes)
    i1, w1 = _aligned(args.weights_treated, ds, ds.group(1), "treated")
    i0, w0 = _aligned(args.weights_control, ds, ds.group(0), "control")
    cis = {}
    if args.bootstrap > 0:
        if not args.profile:
            raise InputError("--bootstrap re-solves one-step weights and needs --profile")
        prof, basis = _profile_basis(args, ds)
        cfg = WeightingConfig(basis, prof, _tolerances(args.tol_multiplier, prof), args.nonneg)
        try:
            cis = bootstrap_ci(ds, cfg, args.bootstrap, args.level, args.seed, args.outcomes, args.threads)
        except BootstrapError as e:
            raise Infeasible(str(e))
    rep = Report("estimate")
    rep.add_values("run", {"data": Path(args.data).name, "bootstrap": args.bootstrap,
                           "level": args.level, "seed": args.seed})
    rows, notes = [], []
    for o in args.outcomes:
        y = ds.outcomes[o]
        r = hajek(w1, y[i1], w0, y[i0])
        notes += [f"{o}: {n}" for n in r.notes]
        lo, hi = cis.get(o, (None, None))
        rows.append((o, r.tau_hat, r.treated_mean, r.control_mean, lo, hi))
    rep.add_values("summary", {"ess_treated": ess(w1), "ess_control": ess(w0),
                               "max_weight_treated": max_normalized_weight(w1),
                               "max_weight_control": max_normalized_weight(w0)})
    rep.add_table("estimates", ["outcome", "tau_hat", "treated_mean", "control_mean",
                                "ci_lower", "ci_upper"], rows)
    if notes:
        rep.add_table("notes", ["note"], [(n,) for n in notes])
    out = _out(args)
    rep.write(out / "estimate.txt")
    for o, tau, *_, lo, hi in rows:
        ci = "" if lo is None else f"  [{lo:.4g}, {hi:.4g}]"
        print(f"{o}: {tau:.6g}{ci}")
    return EXIT_OK


# ------------------------------------------------------------------ simulate


def cmd_simulate(args) -> int:
    from .sim import METHODS, SimConfig, run_study

    reps = args.reps or (PAPER_REPS if args.paper_parity else DESK_REPS)
    bad = [m for m in args.methods if m not in METHODS]
    if bad:
        raise InputError(f"unknown methods {bad}; choose from {','.join(METHODS)}")
    try:
        models = tuple(int(m) for m in args.models)
    except ValueError:
        raise InputError("--models expects integers from 1,2,3")
    settings = ("randomized", "observational") if args.setting == "both" else (args.setting,)
    out = _out(args)
    for setting in settings:
        try:
            cfg = SimConfig(setting, models, args.cohort_size, reps, args.seed,
                            tuple(args.methods), args.grid, args.nonneg)
        except ValueError as e:
            raise InputError(str(e))
        res = run_study(cfg, threads=args.threads)
        text = "\n\n".join([res.table("rmse"), res.table("bias")]) + "\n"
        (out / f"sim_{setting}_table.txt").write_text(text, encoding="utf-8")
        rep = Report("simulate")
        rep.add_values("run", {"setting": setting, "replications": reps, "cohort_size": args.cohort_size,
                               "master_seed": args.seed, "methods": ",".join(cfg.methods),
                               "outcome_models": ",".join(map(str, models)), "grid": cfg.grid,
                               "nonnegative": args.nonneg})
        rep.add_table("cells", ["method", "outcome_model", "rmse", "bias", "n_ok", "n_failed"],
                      [(c.method, c.outcome_model, c.rmse, c.bias, c.n_ok, c.n_failed)
                       for c in res.cells.values()])
        rep.add_table("methods", ["method", "mean_ess", "mean_ess_treated", "mean_ess_control",
                                  "ess_q1", "ess_median", "ess_q3", "max_weight_q1",
                                  "max_weight_median", "max_weight_q3", "mean_multiplier", "n_failed"],
                      [(m.method, m.mean_ess, m.mean_ess_treated, m.mean_ess_control,
                        *m.ess_quartiles, *m.max_weight_quartiles, m.mean_multiplier, m.n_failed)
                       for m in res.methods.values()])
        rep.add_values("feasibility", {"solutions_checked": res.solutions_checked,
                                       "max_violation": res.max_violation})
        rep.write(out / f"sim_{setting}_report.txt")
        (out / f"sim_{setting}_replications.csv").write_text(res.replication_csv(), encoding="utf-8")
        print(text)
    return EXIT_OK


# ----------------------------------------------------------------- casestudy


def cmd_casestudy(args) -> int:
    from .casestudy import TARGETS, CaseStudyFixture, run_case_study, write_fixture

    if args.export_fixture:
        write_fixture(args.export_fixture)
        print(f"wrote fixture files to {args.export_fixture}")
        return EXIT_OK
    fx = CaseStudyFixture.load(args.fixture)
    targets = args.targets or list(TARGETS)
    bad = [t for t in targets if t not in fx.profiles]
    if bad:
        raise InputError(f"unknown targets {bad}")
    outcomes = args.outcomes or list(fx.trial.outcomes)
    bad = [o for o in outcomes if o not in fx.trial.outcomes]
    if bad:
        raise InputError(f"unknown outcomes {bad}")
    rule = "tuned" if args.tune else args.tol_multiplier
    res = run_case_study(fx, rule, outcomes, targets, args.bootstrap, args.level,
                         args.seed, args.threads, args.grid)
    out = _out(args)
    rep = Report("casestudy")
    rep.add_values("run", {"rule": rule, "targets": ",".join(targets), "outcomes": ",".join(outcomes),
                           "bootstrap": args.bootstrap, "level": args.level, "seed": args.seed})
    rows, failed = [], []
    for t, r in res.items():
        ok_w = bool(r.solutions) and all(s.optimal for s in r.solutions)
        rows.append((t, r.multiplier, r.ok,
                     ess(r.treated_weights) if ok_w else None, ess(r.control_weights) if ok_w else None,
                     max(r.tasmd_treated.max(), r.tasmd_control.max()) if ok_w else None, r.error))
        if not r.ok:
            failed.append(f"{t}: {r.error}")
    rep.add_table("targets", ["target", "multiplier", "ok", "ess_treated", "ess_control",
                              "max_tasmd", "error"], rows)
    est = []
    for t, r in res.items():
        for o, e in r.estimates.items():
            lo, hi = (e.ci[0], e.ci[1]) if e.ci else (None, None)
            est.append((t, o, e.tau_hat, e.treated_mean, e.control_mean, lo, hi))
        if r.tasmd_treated is not None:
            rep.add_table(f"balance_{t}", ["term", "target", "delta", "tasmd_treated", "tasmd_control"],
                          [(r.terms[k], fx.profiles[t].select(r.terms).means[k], r.deltas[k],
                            r.tasmd_treated[k], r.tasmd_control[k]) for k in range(len(r.terms))])
            write_weights(out / f"weights_{t}_treated.csv", r.treated_ids, r.treated_weights)
            write_weights(out / f"weights_{t}_control.csv", r.control_ids, r.control_weights)
    rep.add_table("estimates", ["target", "outcome", "tau_hat", "treated_mean", "control_mean",
                                "ci_lower", "ci_upper"], est)
    rep.write(out / "casestudy.txt")
    for t, mult, ok, e1, e0, mt, err in rows:
        print(f"{t}: multiplier {mult}, " + (f"ESS {e1:.1f}/{e0:.1f}, max TASMD {mt:.4f}" if e1 else err))
    if failed:
        print("\n".join(failed), file=sys.stderr)
        return EXIT_INFEASIBLE
    return EXIT_OK


# -------------------------------------------------------------------- parser


def _common(p, seed=0):
    p.add_argument("--out-dir", default=".", help="directory for output files (default .)")
    p.add_argument("--seed", type=int, default=seed, help=f"random seed (default {seed})")
    p.add_argument("--threads", type=_positive, default=1, help="worker processes (default 1)")
    p.add_argument("--config", default=None, help="INI file supplying defaults for this command")


def _tol_args(p, default=0.05):
    p.add_argument("--profile", help="target profile CSV (term,mean,sd)")
    p.add_argument("--basis", default=None,
                   help="comma-separated terms, e.g. x1,x2^2,x1*x3 (default: profile terms)")
    p.add_argument("--tol-multiplier", type=_nonneg_float, default=default,
                   help=f"tolerance as a multiple of each target SD (default {default})")
    p.add_argument("--nonneg", action=argparse.BooleanOptionalAction, default=True,
                   help="constrain weights to be nonnegative (default on)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="onestep", description=__doc__.split("\n")[0])
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("weights", help="one-step balancing weights toward a target profile")
    _data_args(p)
    _tol_args(p)
    p.add_argument("--tune", action="store_true", help="choose the multiplier from --grid")
    p.add_argument("--grid", type=_grid, default=DEFAULT_GRID, help="comma-separated multipliers")
    _common(p)

    p = sub.add_parser("tune", help="tolerance tuning report plus weights at the chosen value")
    _data_args(p)
    _tol_args(p)
    p.add_argument("--grid", type=_grid, default=DEFAULT_GRID, help="comma-separated multipliers")
    _common(p)

    p = sub.add_parser("twostep", help="inverse probability / inverse odds weights")
    _data_args(p)
    p.add_argument("--selection-covariates", default=None,
                   help="comma-separated columns, or 'none' for an intercept-only model")
    p.add_argument("--treatment-covariates", default=None,
                   help="comma-separated columns (default: selection covariates)")
    p.add_argument("--known-e", type=float, default=None, help="known treatment probability")
    p.add_argument("--mode", choices=("generalize", "transport"), default="generalize")
    _common(p)

    p = sub.add_parser("estimate", help="Hajek estimates from weight files")
    _data_args(p, outcomes=True)
    p.add_argument("--weights-treated", required=True)
    p.add_argument("--weights-control", required=True)
    p.add_argument("--bootstrap", type=_count, default=0, help="bootstrap replicates (0 = none)")
    p.add_argument("--level", type=float, default=0.95)
    _tol_args(p)
    _common(p)

    p = sub.add_parser("simulate", help="Monte Carlo comparison of one-step and two-step weights")
    p.add_argument("--setting", choices=("randomized", "observational", "both"), default="both")
    p.add_argument("--methods", type=_csv_list, default=["two1", "one1", "two2", "one2", "two3", "one3"])
    p.add_argument("--models", type=_csv_list, default=["1", "2", "3"])
    g = p.add_mutually_exclusive_group()
    g.add_argument("--reps", type=_positive, default=None, help="replications")
    g.add_argument("--desk", action="store_true", help=f"{DESK_REPS} replications (default)")
    g.add_argument("--paper-parity", action="store_true", help=f"{PAPER_REPS} replications")
    p.add_argument("--cohort-size", type=_positive, default=1000)
    p.add_argument("--grid", type=_grid, default=DEFAULT_GRID)
    p.add_argument("--nonneg", action=argparse.BooleanOptionalAction, default=True)
    _common(p, seed=20240501)

    p = sub.add_parser("casestudy", help="run the synthetic nested-trial case study")
    p.add_argument("--fixture", default=None, help="fixture directory (default: shipped fixture)")
    p.add_argument("--export-fixture", default=None, metavar="DIR",
                   help="write the fixture files to DIR and exit")
    p.add_argument("--targets", type=_csv_list, default=None)
    p.add_argument("--outcomes", type=_csv_list, default=None)
    p.add_argument("--tol-multiplier", type=_nonneg_float, default=0.05)
    p.add_argument("--tune", action="store_true")
    p.add_argument("--grid", type=_grid, default=DEFAULT_GRID)
    p.add_argument("--bootstrap", type=_count, default=200)
    p.add_argument("--level", type=float, default=0.95)
    _common(p)
    return ap


def _prescan(argv):
    """Find the command and any ``--config`` path without a full parse."""
    command = config = None
    it = iter(argv)
    for tok in it:
        if command is None and not tok.startswith("-"):
            command = tok
        elif tok == "--config":
            config = next(it, None)
        elif tok.startswith("--config="):
            config = tok.split("=", 1)[1]
    return command, config


def _apply_config(ap, argv):
    """Parse ``argv`` with defaults taken from the ``--config`` file, if any."""
    argv = list(sys.argv[1:] if argv is None else argv)
    command, config = _prescan(argv)
    if not config or command not in COMMANDS:
        return ap.parse_args(argv)
    args = argparse.Namespace(command=command, config=config)
    cp = configparser.ConfigParser(interpolation=None)
    try:
        with open(args.config, encoding="utf-8") as fh:
            cp.read_file(fh)
    except (OSError, configparser.Error) as e:
        raise InputError(f"cannot read config {args.config}: {e}")
    unknown_sections = [s for s in cp.sections() if s != args.command]
    if unknown_sections:
        raise InputError(f"config sections {unknown_sections} do not match command {args.command!r}")
    if not cp.has_section(args.command):
        return args
    sub = next(a for a in ap._actions if isinstance(a, argparse._SubParsersAction))
    sp = sub.choices[args.command]
    actions = {a.dest: a for a in sp._actions if a.dest not in ("help", "config")}
    values = {}
    for key, raw in cp.items(args.command):
        dest = key.replace("-", "_")
        act = actions.get(dest)
        if act is None:
            raise InputError(f"unknown config key {key!r} for {args.command!r}")
        if act.nargs == 0 or isinstance(act, argparse.BooleanOptionalAction):
            low = raw.strip().lower()
            if low not in ("true", "false", "yes", "no", "1", "0", "on", "off"):
                raise InputError(f"config key {key!r} expects true or false")
            values[dest] = low in ("true", "yes", "1", "on")
        elif isinstance(act, argparse._AppendAction):
            values[dest] = [v.strip() for v in raw.splitlines() if v.strip()]
        else:
            try:
                values[dest] = act.type(raw) if act.type else raw
            except (argparse.ArgumentTypeError, ValueError) as e:
                raise InputError(f"config key {key!r}: {e}")
            if act.choices is not None and values[dest] not in act.choices:
                raise InputError(f"config key {key!r} must be one of {sorted(act.choices)}")
    for a in sp._actions:
        if a.dest in values:
            a.required = False
    sp.set_defaults(**values)
    return ap.parse_args(argv)


COMMANDS = {
    "weights": cmd_weights,
    "tune": lambda a: cmd_weights(a, force_tune=True),
    "twostep": cmd_twostep,
    "estimate": cmd_estimate,
    "simulate": cmd_simulate,
    "casestudy": cmd_casestudy,
}


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = _apply_config(ap, argv)
        if getattr(args, "profile", "x") is None and args.command in ("weights", "tune"):
            raise InputError("--profile is required")
        return COMMANDS[args.command](args)
    except SystemExit as e:
        return int(e.code or 0)
    except (InputError, SchemaError, KeyError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT
    except Infeasible as e:
        print(f"infeasible: {e}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except Failure as e:
        print(f"failed: {e}", file=sys.stderr)
        return EXIT_FAILURE
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
