import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from hbsae.direct import direct_estimate, direct_table
from hbsae.errors import NoSample, NonpositiveWeight

from conftest import make_dataset

weights = st.lists(st.floats(0.01, 1e5), min_size=1, max_size=30)


def test_all_ones_gives_one_with_zero_se():
    d = direct_estimate([1, 1, 1, 1], [3.0, 1.0, 7.5, 2.0])
    assert (d.estimate, d.se) == (1.0, 0.0)


def test_two_records_equal_weights():
    # se = sqrt(2 * 0.25 * w**2) / (2 w) = sqrt(2) / 4
    d = direct_estimate([1, 0], [4.0, 4.0])
    assert d.estimate == 0.5
    assert d.se == pytest.approx(math.sqrt(2) / 4, rel=1e-15)


def test_unequal_weights_hand_values():
    d = direct_estimate([1, 1, 0], [2.0, 1.0, 1.0])
    assert d.estimate == pytest.approx(0.75)
    # sum w^2 (y-p)^2 = 4/16 + 1/16 + 9/16 = 14/16
    assert d.se == pytest.approx(math.sqrt(14 / 16) / 4, rel=1e-14)


def test_no_sample_and_bad_weight():
    with pytest.raises(NoSample):
        direct_estimate([], [])
    with pytest.raises(NonpositiveWeight):
        direct_estimate([1, 0], [1.0, 0.0])


def test_direct_table_flags_empty_area():
    ds = make_dataset([(1, 0, 1, 1.0), (1, 3, 0, 1.0)], m=2)
    rows = direct_table(ds)
    assert [r.area_id for r in rows] == [1, 2]
    assert not rows[0].no_sample and rows[1].no_sample
    assert rows[1].estimate is None and rows[1].se is None


def test_equal_weights_reduce_to_sample_mean():
    rng = np.random.default_rng(0)
    y = rng.integers(0, 2, 25)
    d = direct_estimate(y, np.full(25, 3.3))
    p = y.mean()
    assert d.estimate == pytest.approx(p, rel=1e-14)
    # with equal weights the stated formula is sqrt(p (1 - p) / n)
    assert d.se == pytest.approx(math.sqrt(p * (1 - p) / 25), rel=1e-12)


@given(st.data())
def test_scale_invariance(data):
    w = np.array(data.draw(weights))
    y = np.array(data.draw(st.lists(st.integers(0, 1), min_size=len(w), max_size=len(w))))
    c = data.draw(st.floats(1e-3, 1e3))
    a, b = direct_estimate(y, w), direct_estimate(y, c * w)
    assert b.estimate == pytest.approx(a.estimate, rel=1e-12, abs=1e-15)
    assert b.se == pytest.approx(a.se, rel=1e-9, abs=1e-15)


@given(st.data())
def test_bounds_and_boundary_iff_constant(data):
    w = np.array(data.draw(weights))
    y = np.array(data.draw(st.lists(st.integers(0, 1), min_size=len(w), max_size=len(w))))
    d = direct_estimate(y, w)
    assert 0.0 <= d.estimate <= 1.0 and d.se >= 0.0
    constant = len(set(y.tolist())) == 1
    assert (d.estimate in (0.0, 1.0)) == constant
    if constant:
        assert d.se == 0.0
