"""Synthetic case study: a randomized trial nested in a recruited cohort.

The fixture mimics a community trial: a recruited cohort of 1300 people, of
whom about 600 enrolled and were randomized, plus a small external sample of
people outside the cohort. Covariates have realistic missingness. Three
target profiles are built from it:

* ``mistrust``: trial participants with a high medical-mistrust score;
* ``cohort``: the whole recruited cohort;
* ``external``: the external sample, which lacks two covariates.

Participants differ from non-participants and the external sample differs
more, so weight dispersion increases (and ESS decreases) from ``mistrust``
to ``cohort`` to ``external``. The shipped CSV files are the output of
:func:`generate_fixture` with :data:`FIXTURE_SEED`.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.special import expit

from .basis import BasisSpec, ZeroSpreadWarning, expand, standardized_tolerances
from .data import (
    Schema,
    StudyDataset,
    TargetProfile,
    impute_missing,
    load_dataset,
    load_profile,
    profile_from_sample,
    save_dataset,
    save_profile,
)
from .estimate import (
    BootstrapError,
    EstimateReport,
    WeightingConfig,
    bootstrap_ci,
    hajek,
    tasmd,
    weighted_means,
)
from .solver import BalanceProblem, WeightSolution, solve_weights
from .tune import TuningError, TuningGrid, tune_tolerance

FIXTURE_SEED = 6021
COVARIATES = (
    "age", "married", "employed", "income_k", "education_yrs", "insured",
    "er_visits", "pcp_visit", "chronic", "bmi", "mistrust",
    "region_a", "region_b", "region_c",
)
REGION = ("region_a", "region_b", "region_c")
OUTCOMES = ("flu_shot", "screening", "pcp_followup")
TARGETS = ("mistrust", "cohort", "external")
EXTERNAL_ABSENT = ("er_visits", "pcp_visit")
MISTRUST_CUTOFF = 2.2
SCHEMA = Schema(
    treatment="Z", outcomes=OUTCOMES, selection="D", id="id",
    covariates=COVARIATES, categorical={"region": REGION},
)


def _people(rng, n, shift):
    """Covariates for ``n`` people; ``shift`` moves the latent profile."""
    a = rng.standard_normal(n) + shift  # older, more settled
    b = rng.standard_normal(n)  # mistrust factor
    age = np.round(np.clip(52 + 9 * a + 4 * rng.standard_normal(n), 18, 90))
    married = (rng.random(n) < expit(-0.3 + 0.6 * a)).astype(float)
    employed = (rng.random(n) < expit(0.4 - 0.5 * a + 0.2 * shift)).astype(float)
    income = np.round(np.exp(3.4 + 0.25 * a + 0.3 * employed + 0.35 * rng.standard_normal(n)), 1)
    educ = np.round(np.clip(12.5 + 1.2 * a - 0.6 * b + 2 * rng.standard_normal(n), 6, 20))
    insured = (rng.random(n) < expit(0.5 + 0.8 * a)).astype(float)
    er = rng.poisson(np.exp(0.1 - 0.2 * a + 0.3 * b))
    pcp = (rng.random(n) < expit(0.3 + 0.5 * insured - 0.6 * b)).astype(float)
    chronic = rng.poisson(np.exp(-0.2 + 0.35 * a))
    bmi = np.round(29 + 1.5 * a + 4.5 * rng.standard_normal(n), 1)
    mistrust = np.round(np.clip(2.6 + 0.7 * b + 0.3 * rng.standard_normal(n), 1, 5), 2)
    pr = np.column_stack([np.ones(n), np.exp(0.5 * a), np.exp(-0.4 * a)])
    pr /= pr.sum(axis=1, keepdims=True)
    reg = (rng.random(n)[:, None] > np.cumsum(pr, axis=1)).sum(axis=1)
    regions = np.eye(3)[reg]
    X = np.column_stack([age, married, employed, income, educ, insured, er, pcp,
                         chronic, bmi, mistrust, regions])
    return X, b


def _punch_holes(rng, X):
    """Make covariates missing at realistic rates."""
    X = X.copy()
    n = X.shape[0]
    col = {c: j for j, c in enumerate(COVARIATES)}
    for name, rate in (("income_k", 0.12), ("bmi", 0.06), ("er_visits", 0.04), ("mistrust", 0.03)):
        X[rng.random(n) < rate, col[name]] = np.nan
    reg = rng.random(n) < 0.05
    X[np.ix_(reg, [col[c] for c in REGION])] = np.nan
    return X


def generate_fixture(seed: int = FIXTURE_SEED, n_cohort: int = 1300, n_external: int = 160):
    """Build the cohort dataset and the external covariate sample.

    Returns ``(cohort, external)``: ``cohort`` is a :class:`StudyDataset`
    with ``D`` marking trial enrolment (about 600 of ``n_cohort``), and
    ``external`` an ``(n_external, 12)`` covariate array without the columns
    in :data:`EXTERNAL_ABSENT`.
    """
    rng = np.random.default_rng(seed)
    X, b = _people(rng, n_cohort, 0.0)
    col = {c: j for j, c in enumerate(COVARIATES)}
    # enrolment favours younger, employed, uninsured people
    lin = -0.1 - 0.9 * (X[:, col["age"]] - 52) / 9 + 0.9 * X[:, col["employed"]] \
        - 1.2 * X[:, col["insured"]] + 0.3 * b
    D = (rng.random(n_cohort) < expit(lin)).astype(int)
    Z = np.where(D == 1, (rng.random(n_cohort) < 0.5).astype(float), np.nan)
    # effects grow with mistrust, largest for flu shots
    base = {
        "flu_shot": -0.4 + 0.02 * (X[:, col["age"]] - 52) - 0.3 * b,
        "screening": -0.2 + 0.5 * X[:, col["insured"]] - 0.2 * b,
        "pcp_followup": 0.1 + 0.7 * X[:, col["pcp_visit"]] - 0.25 * b,
    }
    eff = {"flu_shot": 0.45 + 0.25 * b, "screening": 0.25 + 0.1 * b, "pcp_followup": 0.15}
    outcomes = {}
    for name in OUTCOMES:
        p = expit(base[name] + eff[name] * np.nan_to_num(Z))
        y = (rng.random(n_cohort) < p).astype(float)
        outcomes[name] = np.where(D == 1, y, np.nan)
    X = _punch_holes(rng, X)
    cohort = StudyDataset(
        X, COVARIATES, Z, outcomes, selection=D,
        ids=tuple(f"c{i:04d}" for i in range(n_cohort)),
        categorical={"region": REGION},
    )
    Xe, _ = _people(rng, n_external, 0.8)
    keep = [j for j, c in enumerate(COVARIATES) if c not in EXTERNAL_ABSENT]
    return cohort, Xe[:, keep]


def build_profiles(cohort: StudyDataset, external: np.ndarray) -> dict[str, TargetProfile]:
    """The three target profiles, on the imputed covariate scale."""
    imp = impute_missing(cohort)
    trial = imp.subset(imp.selected)
    raw_trial = cohort.subset(cohort.selected)
    mis = raw_trial.covariates[:, COVARIATES.index("mistrust")]
    high = np.flatnonzero(np.nan_to_num(mis, nan=-np.inf) >= MISTRUST_CUTOFF)
    ext_names = tuple(c for c in COVARIATES if c not in EXTERNAL_ABSENT)
    ext = profile_from_sample(external, names=ext_names)
    # the external sample is fully observed, so its missingness indicators are 0
    ind = [n for n in imp.names if n.endswith("_missing")
           and n[: -len("_missing")] not in EXTERNAL_ABSENT]
    ext = TargetProfile(
        ext.names + tuple(ind),
        np.concatenate([ext.means, np.zeros(len(ind))]),
        np.concatenate([ext.spreads, np.zeros(len(ind))]),
    )
    return {
        "mistrust": profile_from_sample(trial, rows=high),
        "cohort": profile_from_sample(imp),
        "external": ext,
    }


@dataclass
class CaseStudyFixture:
    trial: StudyDataset  # imputed, trial participants only
    profiles: dict[str, TargetProfile]

    @classmethod
    def load(cls, directory=None) -> "CaseStudyFixture":
        """Load the shipped fixture, or one written by :func:`write_fixture`."""
        if directory is None:
            ref = resources.files("onestep") / "fixtures"
            with resources.as_file(ref) as d:
                return cls.load(d)
        d = Path(directory)
        cohort = load_dataset(d / "cohort.csv", SCHEMA)
        imp = impute_missing(cohort)
        profiles = {t: load_profile(d / f"profile_{t}.csv") for t in TARGETS}
        return cls(imp.subset(imp.selected), profiles)

    @classmethod
    def generate(cls, seed: int = FIXTURE_SEED) -> "CaseStudyFixture":
        cohort, external = generate_fixture(seed)
        imp = impute_missing(cohort)
        return cls(imp.subset(imp.selected), build_profiles(cohort, external))


def write_fixture(directory, seed: int = FIXTURE_SEED) -> None:
    """Write ``cohort.csv``, ``external.csv`` and the three profile files."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    cohort, external = generate_fixture(seed)
    save_dataset(cohort, d / "cohort.csv")
    ext_names = [c for c in COVARIATES if c not in EXTERNAL_ABSENT]
    with open(d / "external.csv", "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(ext_names) + "\n")
        for row in external:
            fh.write(",".join(repr(float(x)) for x in row) + "\n")
    for name, prof in build_profiles(cohort, external).items():
        save_profile(prof, d / f"profile_{name}.csv")


@dataclass
class TargetResult:
    target: str
    terms: tuple[str, ...]
    multiplier: float
    deltas: np.ndarray
    treated_ids: tuple[str, ...] = ()
    control_ids: tuple[str, ...] = ()
    solutions: tuple[WeightSolution, ...] = ()
    tasmd_treated: np.ndarray | None = None
    tasmd_control: np.ndarray | None = None
    estimates: dict[str, EstimateReport] = field(default_factory=dict)
    error: str = ""

    @property
    def ok(self) -> bool:
        return not self.error

    @property
    def treated_weights(self) -> np.ndarray:
        return self.solutions[0].weights

    @property
    def control_weights(self) -> np.ndarray:
        return self.solutions[1].weights


def _tolerances(multiplier, profile):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ZeroSpreadWarning)
        return standardized_tolerances(multiplier, profile)


def run_target(
    trial: StudyDataset,
    profile: TargetProfile,
    target: str,
    rule: str | float = 0.05,
    outcomes: Sequence[str] | None = None,
    grid: Sequence[float] | None = None,
    n_boot: int = 0,
    level: float = 0.95,
    seed: int = 0,
    threads: int = 1,
) -> TargetResult:
    """Weight ``trial`` toward one profile and estimate every outcome.

    ``rule`` is a fixed multiplier of the target standard deviations or
    ``"tuned"``. Terms are the profile entries that name trial columns; the
    weights are non-negative and shared by all outcomes.
    """
    outcomes = list(outcomes) if outcomes is not None else list(trial.outcomes)
    terms = tuple(t for t in profile.names if t in trial.names)
    prof = profile.select(terms)
    basis = BasisSpec.parse(list(terms), trial.names)
    r1, r0 = trial.group(1), trial.group(0)
    B1 = expand(trial.covariates[r1], basis)
    B0 = expand(trial.covariates[r0], basis)
    if rule == "tuned":
        try:
            tuned = tune_tolerance([B1, B0], prof, TuningGrid(tuple(grid)) if grid else TuningGrid())
        except TuningError as e:
            return TargetResult(target, terms, float("nan"), np.full(len(terms), np.nan), error=str(e))
        mult = tuned.chosen_multiplier
        sols = tuple(tuned.solutions)
    else:
        mult = float(rule)
        deltas = _tolerances(mult, prof)
        sols = tuple(solve_weights(BalanceProblem(B, prof.means, deltas)) for B in (B1, B0))
    deltas = _tolerances(mult, prof)
    res = TargetResult(target, terms, mult, deltas,
                       tuple(trial.ids[i] for i in r1), tuple(trial.ids[i] for i in r0), sols)
    if not all(s.optimal for s in sols):
        hint = max(s.relaxation_hint or 0.0 for s in sols)
        res.error = f"infeasible at multiplier {mult}; loosen tolerances by at least {hint:.3g}"
        return res
    w1, w0 = sols[0].weights, sols[1].weights
    res.tasmd_treated = tasmd(weighted_means(B1, w1), prof)
    res.tasmd_control = tasmd(weighted_means(B0, w0), prof)
    cis = {}
    if n_boot > 0:
        cfg = WeightingConfig(basis, prof, deltas)
        try:
            cis = bootstrap_ci(trial, cfg, n_boot, level, seed, outcomes, threads)
        except BootstrapError as e:
            res.error = str(e)
    for o in outcomes:
        rep = hajek(w1, trial.outcomes[o][r1], w0, trial.outcomes[o][r0])
        rep.tasmd_treated, rep.tasmd_control = res.tasmd_treated, res.tasmd_control
        if o in cis:
            rep.ci = (*cis[o], level, n_boot)
        res.estimates[o] = rep
    return res


def run_case_study(
    fixture: CaseStudyFixture | None = None,
    rule: str | float = 0.05,
    outcomes: Sequence[str] | None = None,
    targets: Sequence[str] = TARGETS,
    n_boot: int = 0,
    level: float = 0.95,
    seed: int = 0,
    threads: int = 1,
    grid: Sequence[float] | None = None,
) -> dict[str, TargetResult]:
    """Run :func:`run_target` for each target profile of the fixture."""
    fixture = fixture or CaseStudyFixture.load()
    unknown = [t for t in targets if t not in fixture.profiles]
    if unknown:
        raise KeyError(f"unknown targets {unknown}")
    return {
        t: run_target(fixture.trial, fixture.profiles[t], t, rule, outcomes, grid,
                      n_boot, level, seed, threads)
        for t in targets
    }
