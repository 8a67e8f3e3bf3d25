"""Data-adaptive choice of the tolerance multiplier.

Every candidate multiplier ``sigma`` sets tolerances ``sigma * spread`` for all
terms, and both treatment groups are solved. A feasible candidate scores

    sum over groups of [ sum_k (imbalance_k / spread_k)**2 + 1 / ess ]

which adds a squared-bias proxy to a variance proxy. The lowest score wins;
ties go to the smaller multiplier.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .basis import ZeroSpreadWarning, standardized_tolerances
from .data import TargetProfile
from .estimate import ess
from .solver import BalanceProblem, SolverSettings, WeightSolution, solve_weights

DEFAULT_GRID = (0.0001, 0.001, 0.002, 0.005, 0.01, 0.02, 0.05, 0.1)


@dataclass(frozen=True)
class TuningGrid:
    multipliers: tuple[float, ...] = DEFAULT_GRID

    def __post_init__(self):
        g = tuple(float(x) for x in self.multipliers)
        if not g:
            raise ValueError("tuning grid is empty")
        if any(x < 0 for x in g) or any(b <= a for a, b in zip(g, g[1:])):
            raise ValueError("tuning grid must be strictly ascending and nonnegative")
        object.__setattr__(self, "multipliers", g)


@dataclass
class Candidate:
    multiplier: float
    feasible: bool
    score: float
    ess: tuple[float, ...]
    max_tasmd: float
    solutions: list[WeightSolution] = field(default_factory=list, repr=False)


@dataclass
class TuningResult:
    chosen_multiplier: float
    per_candidate: list[Candidate]

    @property
    def chosen(self) -> Candidate:
        return next(c for c in self.per_candidate if c.multiplier == self.chosen_multiplier)

    @property
    def solutions(self) -> list[WeightSolution]:
        return self.chosen.solutions


class TuningError(RuntimeError):
    def __init__(self, message, per_candidate):
        super().__init__(message)
        self.per_candidate = per_candidate


def score_solution(sol: WeightSolution, spreads: np.ndarray) -> float:
    sp = np.where(spreads > 0, spreads, 1.0)
    return float(np.sum((sol.imbalances / sp) ** 2) + 1.0 / ess(sol.weights))


def tune_tolerance(
    groups: Sequence[np.ndarray],
    profile: TargetProfile,
    grid: TuningGrid | Sequence[float] = TuningGrid(),
    nonnegative: bool = True,
    settings: SolverSettings | None = None,
) -> TuningResult:
    """Pick one multiplier for all groups from ``grid``.

    ``groups`` holds the expanded basis matrix of each treatment group, with
    columns in the order of ``profile``. Raises :class:`TuningError` carrying
    the per-candidate report if no candidate is feasible.
    """
    if not isinstance(grid, TuningGrid):
        grid = TuningGrid(tuple(grid))
    if profile.spreads is None:
        raise ValueError("tuning needs a profile with spreads")
    sp = profile.spreads
    sp_safe = np.where(sp > 0, sp, 1.0)
    cands = []
    best = None
    for sigma in grid.multipliers:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", ZeroSpreadWarning)
            deltas = standardized_tolerances(sigma, profile)
        sols = [
            solve_weights(BalanceProblem(B, profile.means, deltas, nonnegative), settings)
            for B in groups
        ]
        if all(s.optimal for s in sols):
            score = sum(score_solution(s, sp) for s in sols)
            c = Candidate(
                sigma, True, score,
                tuple(ess(s.weights) for s in sols),
                float(max((np.max(np.abs(s.imbalances) / sp_safe, initial=0.0) for s in sols))),
                sols,
            )
            if best is None or score < best.score:
                best = c
        else:
            c = Candidate(sigma, False, float("inf"), (), float("nan"), sols)
        cands.append(c)
    if best is None:
        raise TuningError("no candidate multiplier gives a feasible problem", cands)
    return TuningResult(best.multiplier, cands)
