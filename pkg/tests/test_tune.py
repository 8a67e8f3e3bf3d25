import numpy as np
import pytest
from numpy.testing import assert_allclose

from onestep.data import TargetProfile
from onestep.estimate import ess
from onestep.solver import equality_oracle
from onestep.tune import TuningError, TuningGrid, tune_tolerance

B = np.arange(5.0)[:, None]


def profile(spread):
    return TargetProfile(("x",), [2.5], [spread])


def expected_score(delta, spread):
    # the optimum moves the weighted mean from 2 toward 2.5 until the band is met
    reached = max(2.5 - delta, 2.0)
    w = equality_oracle(B, [reached])
    return ((2.5 - reached) / spread) ** 2 + 1 / ess(w)


def test_single_element_grid():
    res = tune_tolerance([B], profile(1.0), [0.1])
    assert res.chosen_multiplier == 0.1
    assert len(res.per_candidate) == 1


@pytest.mark.parametrize("spread,chosen", [(0.1, 0.0), (1.0, 0.05), (10.0, 0.05)])
def test_score_comparison(spread, chosen):
    grid = (0.0, 0.02, 0.05)
    res = tune_tolerance([B], profile(spread), grid)
    for c in res.per_candidate:
        assert c.feasible
        assert_allclose(c.score, expected_score(c.multiplier * spread, spread), rtol=1e-10)
    assert res.chosen_multiplier == chosen


def test_ties_go_to_smaller_multiplier():
    # uniform weights balance exactly, so every multiplier scores the same
    prof = TargetProfile(("x",), [2.0], [1.0])
    res = tune_tolerance([B], prof, (0.0, 0.1, 0.2))
    assert res.chosen_multiplier == 0.0


def test_all_infeasible():
    prof = TargetProfile(("x",), [9.0], [1.0])
    with pytest.raises(TuningError) as info:
        tune_tolerance([B], prof, (0.0, 0.1))
    assert [c.feasible for c in info.value.per_candidate] == [False, False]


def test_one_multiplier_for_all_groups():
    rng = np.random.default_rng(0)
    groups = [rng.normal(size=(40, 2)), rng.normal(size=(50, 2)) + 0.3]
    prof = TargetProfile(("a", "b"), [0.1, 0.1], [1.0, 1.0])
    res = tune_tolerance(groups, prof)
    assert len(res.solutions) == 2
    for sol in res.solutions:
        assert np.all(np.abs(sol.imbalances) <= res.chosen_multiplier + 1e-8)


def test_grid_validation():
    with pytest.raises(ValueError):
        TuningGrid((0.1, 0.05))
    with pytest.raises(ValueError):
        TuningGrid(())
    with pytest.raises(ValueError):
        TuningGrid((-0.1, 0.1))
