import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fpklab.cost import capped_concave, capped_power, custom, is_concave_metric_family, rescaled
from fpklab.errors import ArgumentError, ContractViolation


def test_capped_power_values():
    assert capped_power(2)(0.5) == 0.25
    assert capped_power(2)(3.0) == 1.0
    assert capped_power(1)(1.0) == 1.0


def test_negative_radius_rejected():
    with pytest.raises(ArgumentError):
        capped_power(2)(-0.1)


def test_rescaled_values():
    h = capped_power(2)
    r = np.linspace(0, 3, 31)
    assert np.array_equal(rescaled(h, 0.0)(r), h(r))
    assert capped_power(1).rescaled(math.log(2))(1.0) == pytest.approx(0.5, abs=1e-15)
    # h(0.6 * 2) = min(1.44, 1)
    assert h.rescaled(-math.log(2))(0.6) == 1.0
    assert h.rescaled(1.3).sup_bound == h.sup_bound


def test_concave_family_classification():
    assert is_concave_metric_family(capped_power(1))
    assert not is_concave_metric_family(capped_power(2))
    assert is_concave_metric_family(capped_concave(fn=lambda r: np.minimum(np.sqrt(r), 1.0), sup_bound=1.0))


def test_constructor_rejects_non_monotone_and_unbounded():
    with pytest.raises(ContractViolation):
        custom(lambda r: np.sin(r) ** 2, sup_bound=1.0)
    with pytest.raises(ContractViolation):
        custom(lambda r: r, sup_bound=1.0)
    with pytest.raises(ContractViolation):
        custom(lambda r: r + 0.1, sup_bound=2.0)
    with pytest.raises(ArgumentError):
        capped_power(0.5)


def test_table_cost_interpolates():
    h = capped_concave(table=[[0.0, 0.0], [1.0, 0.8], [2.0, 1.0]])
    assert h(0.5) == pytest.approx(0.4)
    assert h(5.0) == 1.0


@given(st.floats(-3, 3), st.floats(-3, 3), st.floats(0, 50))
def test_rescaling_composes(s1, s2, r):
    h = capped_power(1.5)
    a = rescaled(rescaled(h, s1), s2)(r)
    b = rescaled(h, s1 + s2)(r)
    assert abs(a - b) <= 1e-12


@given(st.floats(0, 20), st.floats(0, 20), st.sampled_from([1.0, 2.0, 3.5]))
def test_monotone(r1, r2, p):
    h = capped_power(p)
    lo, hi = sorted((r1, r2))
    assert h(lo) <= h(hi)


@given(st.floats(0, 10), st.floats(1, 4))
def test_capped_power_exact(r, p):
    assert capped_power(p)(r) == min(r**p, 1.0)
