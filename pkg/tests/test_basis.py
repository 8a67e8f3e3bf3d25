import warnings

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from onestep.basis import (
    BasisSpec,
    ZeroSpreadWarning,
    expand,
    interaction,
    parse_term,
    power,
    raw,
    standardized_tolerances,
)
from onestep.data import TargetProfile


def test_expand_raw_and_power():
    X = np.array([[2.0], [3.0]])
    B = expand(X, BasisSpec((raw(0), power(0, 2))))
    assert_array_equal(B, [[2, 4], [3, 9]])


def test_expand_empty_spec():
    B = expand(np.ones((5, 3)), BasisSpec(()))
    assert B.shape == (5, 0)


def test_expand_interaction():
    X = np.array([[1.0, 2.0], [3.0, 4.0]])
    assert_array_equal(expand(X, BasisSpec((interaction(0, 1),)))[:, 0], [2, 12])


def test_duplicates_rejected():
    with pytest.raises(ValueError):
        BasisSpec((raw(0), raw(0)))
    with pytest.raises(ValueError):
        BasisSpec((interaction(0, 1), interaction(1, 0)))


def test_out_of_range_column():
    with pytest.raises(IndexError):
        expand(np.ones((3, 2)), BasisSpec((raw(2),)))


def test_bad_terms():
    with pytest.raises(ValueError):
        power(0, 1)
    with pytest.raises(ValueError):
        interaction(1, 1)


def test_parse_round_trip():
    names = ("age", "bmi", "x3")
    spec = BasisSpec.parse("age, bmi^2, age*x3", names)
    assert spec.terms == (raw(0), power(1, 2), interaction(0, 2))
    assert spec.labels(names) == ["age", "bmi^2", "age*x3"]
    assert parse_term("bmi^1", names) == raw(1)
    with pytest.raises(KeyError):
        parse_term("weight", names)


def test_tolerances_scale_spreads():
    assert_allclose(standardized_tolerances(0.1, np.array([2.0, 4.0])), [0.2, 0.4])
    assert_array_equal(standardized_tolerances(0.0, np.array([2.0, 4.0])), [0, 0])


def test_tolerances_from_profile():
    prof = TargetProfile(("a", "b"), [1.0, 2.0], [0.5, 3.0])
    assert_allclose(standardized_tolerances(0.05, prof), [0.025, 0.15])


def test_zero_spread_falls_back_to_absolute():
    with pytest.warns(ZeroSpreadWarning):
        d = standardized_tolerances(0.05, np.array([0.0, 2.0]))
    assert_allclose(d, [0.05, 0.1])


def test_negative_multiplier():
    with pytest.raises(ValueError):
        standardized_tolerances(-0.1, np.ones(2))
