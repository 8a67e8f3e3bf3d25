import numpy as np
import pytest
from numpy.testing import assert_allclose

from onestep.basis import BasisSpec
from onestep.data import StudyDataset, TargetProfile, profile_from_sample
from onestep.estimate import (
    BootstrapError,
    WeightingConfig,
    bootstrap_ci,
    bootstrap_replicates,
    ess,
    hajek,
    max_normalized_weight,
    percentile_interval,
    tasmd,
)


def test_hajek_example():
    r = hajek([0.5, 0.5], [2, 4], [1.0], [1])
    assert r.tau_hat == 2.0
    assert r.notes == []


def test_hajek_uniform_is_difference_in_means():
    rng = np.random.default_rng(1)
    y1, y0 = rng.normal(size=7), rng.normal(size=5)
    r = hajek(np.full(7, 1 / 7), y1, np.full(5, 0.2), y0)
    assert_allclose(r.tau_hat, y1.mean() - y0.mean())


def test_hajek_scale_invariance():
    r = hajek([2, 2], [2, 4], [1.0], [1])
    assert r.tau_hat == 2.0
    assert r.notes


def test_ess_examples():
    assert_allclose(ess(np.full(10, 0.1)), 10)
    assert_allclose(ess([0.5, 0.25, 0.25]), 8 / 3)
    assert ess([1.0]) == 1.0


def test_max_weight_examples():
    assert max_normalized_weight(np.full(4, 0.25)) == 0.25
    assert max_normalized_weight([0.97, 0.01, 0.02]) == 0.97
    assert max_normalized_weight([1.0]) == 1.0


def test_tasmd_examples():
    prof = TargetProfile(("a", "b"), [1.0, 3.0], [2.0, 0.0])
    assert_allclose(tasmd([1.2, 3.5], prof), [0.1, 0.5])
    assert_allclose(tasmd([1.0, 3.0], prof), [0.0, 0.0])


def small_dataset(y=None, seed=0, n=60):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, 2))
    z = np.tile([1.0, 0.0], n // 2)
    y = rng.normal(size=n) if y is None else y
    return StudyDataset(X, ("a", "b"), z, {"y": y, "y2": 2 * y})


def config_for(ds, mult=0.1):
    prof = profile_from_sample(ds)
    return WeightingConfig(BasisSpec.main_terms(2), prof, mult * prof.spreads)


def test_bootstrap_constant_outcomes():
    ds = small_dataset(np.full(60, 3.0))
    ci = bootstrap_ci(ds, config_for(ds), 30, seed=4)
    assert ci["y"] == (0.0, 0.0)


def test_bootstrap_identity_sampler_collapses():
    ds = small_dataset()
    cfg = config_for(ds)
    draws, skipped = bootstrap_replicates(ds, cfg, 2, 0, sampler=lambda rng, m: np.arange(m))
    assert skipped == 0
    s1, s0 = cfg.solve_group(ds.covariates[ds.group(1)]), cfg.solve_group(ds.covariates[ds.group(0)])
    tau = s1.weights @ ds.outcomes["y"][ds.group(1)] - s0.weights @ ds.outcomes["y"][ds.group(0)]
    lo, hi = percentile_interval(draws[:, 0], 0.95)
    assert_allclose([lo, hi], [tau, tau], atol=1e-12)


def test_bootstrap_deterministic_and_thread_independent():
    ds = small_dataset()
    cfg = config_for(ds)
    a = bootstrap_ci(ds, cfg, 20, seed=9)
    b = bootstrap_ci(ds, cfg, 20, seed=9)
    c = bootstrap_ci(ds, cfg, 20, seed=9, threads=2)
    assert a == b == c
    assert bootstrap_ci(ds, cfg, 20, seed=10) != a


def test_bootstrap_outcome_permutation():
    ds = small_dataset()
    cfg = config_for(ds)
    a = bootstrap_ci(ds, cfg, 15, seed=1, outcomes=["y", "y2"])
    b = bootstrap_ci(ds, cfg, 15, seed=1, outcomes=["y2", "y"])
    assert a == b
    assert_allclose(a["y2"], 2 * np.array(a["y"]))


def test_bootstrap_too_many_infeasible():
    ds = small_dataset()
    prof = TargetProfile(("a", "b"), [5.0, 5.0], [1.0, 1.0])
    cfg = WeightingConfig(BasisSpec.main_terms(2), prof, np.zeros(2))
    with pytest.raises(BootstrapError):
        bootstrap_ci(ds, cfg, 10, seed=0)


def test_percentile_interval_linear():
    assert_allclose(percentile_interval(np.arange(101.0), 0.9), (5.0, 95.0), rtol=1e-14)
    assert percentile_interval([0.0, 1.0], 0.5) == (0.25, 0.75)
    with pytest.raises(ValueError):
        percentile_interval([1.0, 2.0], 1.0)
