"""Hajek estimation, weight diagnostics and bootstrap intervals."""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .basis import BasisSpec, expand
from .data import StudyDataset, TargetProfile
from .solver import BalanceProblem, SolverSettings, solve_weights

NORMALIZATION_TOL = 1e-6


@dataclass
class EstimateReport:
    tau_hat: float
    treated_mean: float
    control_mean: float
    ess_treated: float
    ess_control: float
    max_weight_treated: float
    max_weight_control: float
    tasmd_treated: np.ndarray | None = None
    tasmd_control: np.ndarray | None = None
    ci: tuple[float, float, float, int] | None = None  # lower, upper, level, replicates
    notes: list[str] = field(default_factory=list)


def _check_weights(w, name, notes):
    w = np.asarray(w, dtype=float)
    if w.size == 0:
        raise ValueError(f"{name}: empty weight vector")
    total = w.sum()
    if abs(total - 1.0) > NORMALIZATION_TOL:
        notes.append(f"{name} weights summed to {total!r}; normalized")
        w = w / total
    return w


def hajek(w1, y1, w0, y0) -> EstimateReport:
    """Difference of weighted group means.

    Weights not summing to one are normalized first (and a note recorded),
    so the estimate is invariant to rescaling either group's weights.
    """
    notes: list[str] = []
    y1 = np.asarray(y1, dtype=float)
    y0 = np.asarray(y0, dtype=float)
    if np.shape(w1) != y1.shape or np.shape(w0) != y0.shape:
        raise ValueError("weights and outcomes differ in length")
    w1 = _check_weights(w1, "treated", notes)
    w0 = _check_weights(w0, "control", notes)
    m1, m0 = float(w1 @ y1), float(w0 @ y0)
    return EstimateReport(
        tau_hat=m1 - m0,
        treated_mean=m1,
        control_mean=m0,
        ess_treated=ess(w1),
        ess_control=ess(w0),
        max_weight_treated=max_normalized_weight(w1),
        max_weight_control=max_normalized_weight(w0),
        notes=notes,
    )


def ess(w) -> float:
    """Effective sample size ``(sum w)**2 / sum w**2``."""
    w = np.asarray(w, dtype=float)
    if w.size == 0:
        raise ValueError("effective sample size of an empty weight vector")
    return float(w.sum() ** 2 / (w @ w))


def max_normalized_weight(w) -> float:
    w = np.asarray(w, dtype=float)
    if w.size == 0:
        raise ValueError("maximum of an empty weight vector")
    return float(np.max(w / w.sum()))


def tasmd(weighted_means, profile: TargetProfile) -> np.ndarray:
    """Target absolute standardized mean differences.

    ``|weighted_mean - target| / spread``; entries whose spread is zero are
    left as plain absolute differences (see :func:`tasmd_standardized`).
    """
    wm = np.asarray(weighted_means, dtype=float)
    if profile.spreads is None:
        raise ValueError("profile has no spreads")
    if wm.shape != profile.means.shape:
        raise ValueError("weighted means and profile differ in length")
    diff = np.abs(wm - profile.means)
    sp = profile.spreads
    return np.where(sp > 0, diff / np.where(sp > 0, sp, 1.0), diff)


def tasmd_standardized(profile: TargetProfile) -> np.ndarray:
    """Flags telling which :func:`tasmd` entries were divided by a spread."""
    return profile.spreads > 0


@dataclass(frozen=True)
class WeightingConfig:
    """How to (re)compute one-step weights for a dataset.

    ``deltas`` fixes the tolerance vector; resampled fits reuse it as is.
    """

    basis: BasisSpec
    profile: TargetProfile
    deltas: np.ndarray
    nonnegative: bool = True
    settings: SolverSettings = SolverSettings()

    def solve_group(self, X: np.ndarray):
        return solve_weights(
            BalanceProblem(expand(X, self.basis), self.profile.means, self.deltas, self.nonnegative),
            self.settings,
        )


class BootstrapError(RuntimeError):
    pass


def _uniform_draw(rng: np.random.Generator, m: int) -> np.ndarray:
    return rng.integers(0, m, size=m)


def _one_resample(args):
    X1, Y1, X0, Y0, config, seed, sampler = args
    rng = np.random.default_rng(seed)
    i1 = sampler(rng, X1.shape[0])
    i0 = sampler(rng, X0.shape[0])
    s1 = config.solve_group(X1[i1])
    s0 = config.solve_group(X0[i0])
    if not (s1.optimal and s0.optimal):
        return None
    # centring on a fixed value makes constant outcomes give exactly zero
    c = Y1[0]
    return s1.weights @ (Y1[i1] - c) - s0.weights @ (Y0[i0] - c)


def bootstrap_replicates(
    ds: StudyDataset,
    config: WeightingConfig,
    n_boot: int,
    seed: int,
    outcomes: Sequence[str] | None = None,
    threads: int = 1,
    sampler: Callable[[np.random.Generator, int], np.ndarray] | None = None,
) -> tuple[np.ndarray, int]:
    """Stratified bootstrap draws of the estimate for each outcome.

    Each replicate resamples treated and control units separately with
    replacement (group sizes preserved), re-solves the weights against the
    fixed profile and recomputes the estimate. Replicate ``b`` draws from
    ``SeedSequence(seed).spawn(n_boot)[b]``, so results do not depend on
    ``threads``. Returns the ``(kept, n_outcomes)`` array of estimates and the
    number of skipped (infeasible) replicates.
    """
    if n_boot < 2:
        raise ValueError("need at least 2 bootstrap replicates")
    outcomes = list(outcomes) if outcomes is not None else list(ds.outcomes)
    r1, r0 = ds.group(1), ds.group(0)
    X1, X0 = ds.covariates[r1], ds.covariates[r0]
    Y1 = np.column_stack([ds.outcomes[o][r1] for o in outcomes])
    Y0 = np.column_stack([ds.outcomes[o][r0] for o in outcomes])
    seeds = np.random.SeedSequence(seed).spawn(n_boot)
    sampler = sampler or _uniform_draw
    jobs = [(X1, Y1, X0, Y0, config, sq, sampler) for sq in seeds]
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as ex:
            results = list(ex.map(_one_resample, jobs, chunksize=max(1, n_boot // (4 * threads))))
    else:
        results = [_one_resample(j) for j in jobs]
    kept = [r for r in results if r is not None]
    skipped = n_boot - len(kept)
    if skipped > 0.1 * n_boot:
        raise BootstrapError(
            f"{skipped} of {n_boot} bootstrap resamples were infeasible; "
            "loosen the tolerances"
        )
    return np.array(kept).reshape(len(kept), len(outcomes)), skipped


def percentile_interval(draws, level: float) -> tuple[float, float]:
    """Equal-tailed percentile interval with linear interpolation."""
    if not 0 < level < 1:
        raise ValueError("level must lie in (0, 1)")
    a = (1.0 - level) / 2.0
    lo, hi = np.quantile(np.asarray(draws, dtype=float), [a, 1.0 - a], method="linear")
    return float(lo), float(hi)


def bootstrap_ci(
    ds: StudyDataset,
    config: WeightingConfig,
    n_boot: int,
    level: float = 0.95,
    seed: int = 0,
    outcomes: Sequence[str] | None = None,
    threads: int = 1,
    sampler=None,
) -> dict[str, tuple[float, float]]:
    """Percentile bootstrap intervals, one per outcome."""
    if not 0 < level < 1:
        raise ValueError("level must lie in (0, 1)")
    outcomes = list(outcomes) if outcomes is not None else list(ds.outcomes)
    draws, _ = bootstrap_replicates(ds, config, n_boot, seed, outcomes, threads, sampler)
    return {o: percentile_interval(draws[:, j], level) for j, o in enumerate(outcomes)}


def weighted_means(B: np.ndarray, w: np.ndarray) -> np.ndarray:
    return np.asarray(B).T @ np.asarray(w)
