"""Monte Carlo comparison of one-step and two-step weights.

Data-generating process (per cohort of ``n`` units):

* latent covariates ``U1..U4 ~ N(0, 1)`` independently;
* observed covariates ``X1 = exp(U1/2)``, ``X2 = U2 / (1 + exp(U1)) + 10``,
  ``X3 = (U1*U3/25 + 0.6)**3``, ``X4 = (U2 + U4 + 20)**2``;
* selection ``pr(D=1|U) = expit(-U1 + 0.5 U2 - 0.25 U3 - 0.1 U4)``;
* treatment ``pr(Z=1|U) = 0.5`` (randomized) or
  ``expit(U1 + 2 U2 - 2 U3 - U4)`` (observational);
* ``Y(0) = 210 + 27.4 U1 + 13.7 (U2 + U3 + U4) + e0`` and three treated
  outcome models that add effect heterogeneity in ``U1`` (model 2) or
  ``U1, U2, U3`` (model 3); ``e0, e1 ~ N(0, 25)``.

The target is the whole cohort, and the true target effect is 0 for every
outcome model. Weighting methods ``one{1,2,3}`` / ``two{1,2,3}`` use covariate
set 1 (``X1``), 2 (``X1..X4``) or 3 (``U1..U4``).

All three outcome models share one cohort draw per replication, so each
replication solves every weighting problem once. Replication ``r`` uses
``SeedSequence(master_seed, spawn_key=(r,))``, which equals the ``r``-th child
of ``SeedSequence(master_seed).spawn``; serial and parallel runs agree.
"""

from __future__ import annotations

import csv
import io
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .basis import ZeroSpreadWarning, standardized_tolerances
from .data import TargetProfile
from .estimate import ess, max_normalized_weight
from .propensity import ConvergenceError, two_step_weights
from .tune import TuningError, TuningGrid, tune_tolerance

METHODS = ("two1", "one1", "two2", "one2", "two3", "one3")
SETTINGS = ("randomized", "observational")
OUTCOME_MODELS = (1, 2, 3)
NOISE_SD = 5.0


@dataclass(frozen=True)
class SimConfig:
    setting: str = "randomized"
    outcome_models: tuple[int, ...] = OUTCOME_MODELS
    cohort_size: int = 1000
    replications: int = 200
    master_seed: int = 20240501
    methods: tuple[str, ...] = METHODS
    grid: tuple[float, ...] = TuningGrid().multipliers
    nonnegative: bool = True

    def __post_init__(self):
        if self.setting not in SETTINGS:
            raise ValueError(f"unknown setting {self.setting!r}")
        object.__setattr__(self, "outcome_models", tuple(int(m) for m in self.outcome_models))
        object.__setattr__(self, "methods", tuple(self.methods))
        bad = [m for m in self.outcome_models if m not in OUTCOME_MODELS]
        if bad or not self.outcome_models:
            raise ValueError(f"outcome models must be drawn from {OUTCOME_MODELS}")
        bad = [m for m in self.methods if m not in METHODS]
        if bad or not self.methods:
            raise ValueError(f"unknown methods {bad}; choose from {METHODS}")
        if self.cohort_size < 10:
            raise ValueError("cohort_size must be at least 10")
        if self.replications < 1:
            raise ValueError("replications must be at least 1")
        TuningGrid(tuple(self.grid))


@dataclass
class Cohort:
    U: np.ndarray
    X: np.ndarray
    D: np.ndarray
    Z: np.ndarray  # drawn for every unit, observed only where D == 1
    Y0: np.ndarray
    Y1: dict[int, np.ndarray]
    pi: np.ndarray
    e: np.ndarray

    @property
    def selected(self) -> np.ndarray:
        return self.D == 1

    def observed_outcome(self, model: int) -> np.ndarray:
        y = np.where(self.Z == 1, self.Y1[model], self.Y0)
        return np.where(self.selected, y, np.nan)


def observed_covariates(U: np.ndarray) -> np.ndarray:
    U = np.atleast_2d(U)
    u1, u2, u3, u4 = U.T
    return np.column_stack([
        np.exp(u1 / 2.0),
        u2 / (1.0 + np.exp(u1)) + 10.0,
        (u1 * u3 / 25.0 + 0.6) ** 3,
        (u2 + u4 + 20.0) ** 2,
    ])


def selection_prob(U):
    return expit(-U[:, 0] + 0.5 * U[:, 1] - 0.25 * U[:, 2] - 0.1 * U[:, 3])


def treatment_prob(U, setting):
    if setting == "randomized":
        return np.full(U.shape[0], 0.5)
    return expit(U[:, 0] + 2.0 * U[:, 1] - 2.0 * U[:, 2] - U[:, 3])


def control_mean(U):
    return 210.0 + 27.4 * U[:, 0] + 13.7 * (U[:, 1] + U[:, 2] + U[:, 3])


def effect(U, model: int):
    """Conditional average treatment effect ``E{Y(1) - Y(0) | U}``."""
    if model == 1:
        return np.zeros(U.shape[0])
    if model == 2:
        return 13.7 * U[:, 0]
    if model == 3:
        return 13.7 * (U[:, 0] + U[:, 1] + U[:, 2])
    raise ValueError(f"unknown outcome model {model!r}")


def true_tate(outcome_model: int) -> float:
    """Target effect; every heterogeneity term has mean zero."""
    if outcome_model not in OUTCOME_MODELS:
        raise ValueError(f"unknown outcome model {outcome_model!r}")
    return 0.0


def replication_seed(master_seed: int, rep: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(master_seed, spawn_key=(rep,))


def generate_cohort(config: SimConfig, seed, latent: np.ndarray | None = None) -> Cohort:
    """Draw one cohort. ``latent`` overrides the draw of ``U`` (test hook)."""
    rng = np.random.default_rng(seed)
    n = config.cohort_size
    U = rng.standard_normal((n, 4))
    if latent is not None:
        U = np.broadcast_to(np.asarray(latent, dtype=float), (n, 4)).copy()
    pi = selection_prob(U)
    e = treatment_prob(U, config.setting)
    D = (rng.random(n) < pi).astype(int)
    Z = (rng.random(n) < e).astype(int)
    e0 = rng.normal(0.0, NOISE_SD, n)
    e1 = rng.normal(0.0, NOISE_SD, n)
    base = control_mean(U)
    Y0 = base + e0
    Y1 = {m: base + effect(U, m) + e1 for m in OUTCOME_MODELS}
    return Cohort(U, observed_covariates(U), D, Z, Y0, Y1, pi, e)


def method_covariates(cohort: Cohort, method: str) -> np.ndarray:
    k = method[-1]
    if k == "1":
        return cohort.X[:, :1]
    if k == "2":
        return cohort.X
    return cohort.U


@dataclass
class MethodResult:
    method: str
    tau: dict[int, float] = field(default_factory=dict)
    ess_treated: float = float("nan")
    ess_control: float = float("nan")
    max_weight_treated: float = float("nan")
    max_weight_control: float = float("nan")
    multiplier: float = float("nan")
    error: str = ""
    solutions_checked: int = 0
    max_violation: float = 0.0

    @property
    def ok(self) -> bool:
        return not self.error


@dataclass
class ReplicationResult:
    rep: int
    methods: dict[str, MethodResult]


def _cohort_profile(X):
    mean = X.mean(axis=0)
    sd = np.sqrt(np.mean((X - mean) ** 2, axis=0))
    return TargetProfile(tuple(f"v{j}" for j in range(X.shape[1])), mean, sd)


def _violation(sol, deltas):
    v = abs(sol.weights.sum() - 1.0)
    if deltas.size:
        v = max(v, float(np.max(np.abs(sol.imbalances) - deltas)))
    return max(v, 0.0)


def _one_step(cohort, method, config, res):
    X = method_covariates(cohort, method)
    profile = _cohort_profile(X)
    sel = cohort.selected
    rows = [np.flatnonzero(sel & (cohort.Z == z)) for z in (1, 0)]
    try:
        tuned = tune_tolerance([X[r] for r in rows], profile, config.grid, config.nonnegative)
    except TuningError as e:
        res.error = str(e)
        return None
    for cand in tuned.per_candidate:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", ZeroSpreadWarning)
            deltas = standardized_tolerances(cand.multiplier, profile)
        for s in cand.solutions:
            if s.optimal:
                res.solutions_checked += 1
                res.max_violation = max(res.max_violation, _violation(s, deltas))
    res.multiplier = tuned.chosen_multiplier
    w1, w0 = (s.weights for s in tuned.solutions)
    return rows[0], w1, rows[1], w0


def _two_step(cohort, method, config, res):
    X = method_covariates(cohort, method)
    try:
        if config.setting == "randomized":
            tw = two_step_weights(cohort.D, cohort.Z, X, known_e=0.5)
        else:
            tw = two_step_weights(cohort.D, cohort.Z, X, treatment_covariates=X)
    except (ConvergenceError, ValueError) as e:
        res.error = str(e)
        return None
    return tw.treated_rows, tw.treated_weights, tw.control_rows, tw.control_weights


def run_replication(config: SimConfig, rep: int) -> ReplicationResult:
    """Draw replication ``rep``'s cohort and apply every configured method."""
    cohort = generate_cohort(config, replication_seed(config.master_seed, rep))
    out = {}
    ys = {m: cohort.observed_outcome(m) for m in config.outcome_models}
    sizes = [int(np.sum(cohort.selected & (cohort.Z == z))) for z in (1, 0)]
    for method in config.methods:
        res = MethodResult(method)
        if min(sizes) == 0:
            res.error = f"empty treatment group among selected units (sizes {sizes})"
            out[method] = res
            continue
        fit = (_one_step if method.startswith("one") else _two_step)(cohort, method, config, res)
        if fit is not None:
            r1, w1, r0, w0 = fit
            for m, y in ys.items():
                res.tau[m] = float(w1 @ y[r1] - w0 @ y[r0])
            res.ess_treated, res.ess_control = ess(w1), ess(w0)
            res.max_weight_treated = max_normalized_weight(w1)
            res.max_weight_control = max_normalized_weight(w0)
        out[method] = res
    return ReplicationResult(rep, out)


def _replicate(args):
    config, rep = args
    return run_replication(config, rep)


@dataclass
class CellSummary:
    method: str
    outcome_model: int
    rmse: float
    bias: float
    n_ok: int
    n_failed: int


@dataclass
class MethodSummary:
    method: str
    mean_ess: float
    mean_ess_treated: float
    mean_ess_control: float
    ess_quartiles: tuple[float, float, float]
    max_weight_quartiles: tuple[float, float, float]
    mean_multiplier: float
    n_failed: int


@dataclass
class SimulationReport:
    config: SimConfig
    cells: dict[tuple[str, int], CellSummary]
    methods: dict[str, MethodSummary]
    replications: list[ReplicationResult]
    solutions_checked: int
    max_violation: float

    def cell(self, method, model) -> CellSummary:
        return self.cells[(method, model)]

    def table(self, stat: str = "rmse") -> str:
        """Human-readable table: methods by outcome model."""
        models = self.config.outcome_models
        head = f"{'Weighting method':<18}" + "".join(f"{'Model ' + str(m):>10}" for m in models)
        lines = [f"{stat.upper()} ({self.config.setting}, {self.config.replications} replications)", head]
        for meth in self.config.methods:
            label = ("Two-Step " if meth.startswith("two") else "One-Step ") + meth[-1]
            vals = "".join(f"{getattr(self.cells[(meth, m)], stat):>10.2f}" for m in models)
            lines.append(f"{label:<18}{vals}")
        return "\n".join(lines)

    def replication_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["rep", "method", "outcome_model", "tau_hat", "ess_treated", "ess_control",
                    "max_weight_treated", "max_weight_control", "multiplier", "error"])
        for r in self.replications:
            for meth in self.config.methods:
                mr = r.methods[meth]
                for m in self.config.outcome_models:
                    w.writerow([r.rep, meth, m, repr(mr.tau.get(m, float("nan"))),
                                repr(mr.ess_treated), repr(mr.ess_control),
                                repr(mr.max_weight_treated), repr(mr.max_weight_control),
                                repr(mr.multiplier), mr.error])
        return buf.getvalue()


def summarize(config: SimConfig, reps: list[ReplicationResult]) -> SimulationReport:
    reps = sorted(reps, key=lambda r: r.rep)
    cells = {}
    methods = {}
    for meth in config.methods:
        results = [r.methods[meth] for r in reps]
        ok = [mr for mr in results if mr.ok]
        for m in config.outcome_models:
            taus = np.array([mr.tau[m] for mr in ok])
            err = taus - true_tate(m)
            cells[(meth, m)] = CellSummary(
                meth, m,
                rmse=float(np.sqrt(np.mean(err ** 2))) if ok else float("nan"),
                bias=float(np.mean(err)) if ok else float("nan"),
                n_ok=len(ok), n_failed=len(results) - len(ok),
            )
        et = np.array([mr.ess_treated for mr in ok])
        ec = np.array([mr.ess_control for mr in ok])
        both = np.concatenate([et, ec])
        mw = np.concatenate([[mr.max_weight_treated for mr in ok], [mr.max_weight_control for mr in ok]])
        q = (lambda a: tuple(float(x) for x in np.quantile(a, [0.25, 0.5, 0.75])) if a.size
             else (float("nan"),) * 3)
        methods[meth] = MethodSummary(
            meth,
            mean_ess=float(both.mean()) if ok else float("nan"),
            mean_ess_treated=float(et.mean()) if ok else float("nan"),
            mean_ess_control=float(ec.mean()) if ok else float("nan"),
            ess_quartiles=q(both),
            max_weight_quartiles=q(mw),
            mean_multiplier=float(np.mean([mr.multiplier for mr in ok])) if ok else float("nan"),
            n_failed=len(results) - len(ok),
        )
    checked = sum(mr.solutions_checked for r in reps for mr in r.methods.values())
    worst = max((mr.max_violation for r in reps for mr in r.methods.values()), default=0.0)
    return SimulationReport(config, cells, methods, reps, checked, worst)


def run_study(config: SimConfig, threads: int = 1) -> SimulationReport:
    """Run all replications and summarize RMSE, bias, ESS and max weights."""
    jobs = [(config, r) for r in range(config.replications)]
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as ex:
            reps = list(ex.map(_replicate, jobs, chunksize=max(1, len(jobs) // (4 * threads))))
    else:
        reps = [_replicate(j) for j in jobs]
    return summarize(config, reps)


def oracle_efficiency_bound(
    setting: str, outcome_model: int, mc_draws: int = 1_000_000, seed: int = 0
) -> float:
    """Monte Carlo value of the semiparametric efficiency bound.

    ``E[s1/(pi e) + s0/(pi (1 - e)) + (m1 - m0 - tau)**2]`` over the target
    (whole cohort) distribution of ``U``, using the true selection and
    treatment probabilities and ``s0 = s1 = 25``.
    """
    if mc_draws < 10_000:
        raise ValueError("use at least 10_000 Monte Carlo draws")
    if setting not in SETTINGS:
        raise ValueError(f"unknown setting {setting!r}")
    U = np.random.default_rng(seed).standard_normal((mc_draws, 4))
    pi = selection_prob(U)
    e = treatment_prob(U, setting)
    var = NOISE_SD ** 2
    het = effect(U, outcome_model) - true_tate(outcome_model)
    return float(np.mean(var / (pi * e) + var / (pi * (1.0 - e)) + het ** 2))


@dataclass
class CoverageReport:
    """Bootstrap interval behaviour of one one-step method across replications."""

    method: str
    outcome_model: int
    level: float
    n_boot: int
    tau_hat: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    cohort_size: int
    n_failed: int

    @property
    def covered(self) -> np.ndarray:
        tau = true_tate(self.outcome_model)
        return (self.lower <= tau) & (tau <= self.upper)

    @property
    def coverage(self) -> float:
        return float(self.covered.mean())

    @property
    def scaled_variance(self) -> float:
        """Empirical ``Var(sqrt(n) * tau_hat)`` with ``n`` the cohort size."""
        return float(self.cohort_size * np.var(self.tau_hat, ddof=1))


def _coverage_one(args):
    from .basis import BasisSpec
    from .data import StudyDataset
    from .estimate import BootstrapError, WeightingConfig, bootstrap_ci

    config, rep, method, model, n_boot, level = args
    seq = replication_seed(config.master_seed, rep)
    cohort = generate_cohort(config, seq)
    res = MethodResult(method)
    fit = _one_step(cohort, method, config, res)
    if fit is None:
        return None
    r1, w1, r0, w0 = fit
    y = cohort.observed_outcome(model)
    tau = float(w1 @ y[r1] - w0 @ y[r0])
    X = method_covariates(cohort, method)
    profile = _cohort_profile(X)
    sel = np.flatnonzero(cohort.selected)
    ds = StudyDataset(X[sel], profile.names, cohort.Z[sel].astype(float), {"y": y[sel]})
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ZeroSpreadWarning)
        deltas = standardized_tolerances(res.multiplier, profile)
    cfg = WeightingConfig(BasisSpec.main_terms(X.shape[1]), profile, deltas, config.nonnegative)
    # bootstrap seed: a child of this replication's seed, distinct from the cohort stream
    boot_seed = int(seq.spawn(1)[0].generate_state(1)[0])
    try:
        lo, hi = bootstrap_ci(ds, cfg, n_boot, level, boot_seed)["y"]
    except BootstrapError:
        return None
    return tau, lo, hi


def bootstrap_coverage(
    config: SimConfig,
    method: str = "one3",
    outcome_model: int = 1,
    n_boot: int = 200,
    level: float = 0.95,
    threads: int = 1,
) -> CoverageReport:
    """Percentile-bootstrap coverage of the true effect for a one-step method.

    Each replication tunes the tolerances once; its bootstrap then holds the
    target profile and those tolerances fixed while resampling treated and
    control units.
    """
    if not method.startswith("one"):
        raise ValueError("bootstrap coverage is defined for one-step methods")
    jobs = [(config, r, method, outcome_model, n_boot, level) for r in range(config.replications)]
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as ex:
            out = list(ex.map(_coverage_one, jobs, chunksize=max(1, len(jobs) // (4 * threads))))
    else:
        out = [_coverage_one(j) for j in jobs]
    ok = np.array([o for o in out if o is not None]).reshape(-1, 3)
    return CoverageReport(method, outcome_model, level, n_boot, ok[:, 0], ok[:, 1], ok[:, 2],
                          config.cohort_size, len(out) - ok.shape[0])
