"""Exhaustive fiber enumeration and exact p-values.

Small fibers have closed-form sizes: a 2x2 independence fiber is an
interval in its free cell, unit-margin permutation fibers count n!,
and diagonal structural zeros on a 3x3 unit-margin table leave the
two 3-cycles.  The exact conditional p-value is the rho-weighted
share of the fiber at or above the observed statistic, with
rho(u) proportional to 1/prod(u_ij!).
"""

import io
import math

import pytest
from hypothesis import given, settings, strategies as st

from fiberwalk.enumeration import (
    FiberTooLarge,
    enumerate_fiber,
    exact_p_from_enumeration,
    exact_p_value,
    fiber_size,
    log_rho_unnormalized,
    write_enumeration,
)
from fiberwalk.models import (
    Independence,
    QuasiIndependence,
    Table,
    fiber_spec_from_observation,
    margins,
)


def spec_of(model, cells, shape):
    return fiber_spec_from_observation(model, Table(tuple(cells), shape))


def test_two_by_two_interval():
    # margins (2,2),(2,2): the free cell ranges over {0,1,2}
    spec = spec_of(Independence((2, 2)), (1, 1, 1, 1), (2, 2))
    enum = enumerate_fiber(spec)
    assert enum.complete
    assert len(enum) == 3
    assert fiber_size(spec) == 3


def test_unit_margin_three_by_three_is_permutations():
    spec = spec_of(Independence((3, 3)), (1, 0, 0, 0, 1, 0, 0, 0, 1), (3, 3))
    assert fiber_size(spec) == 6


def test_diagonal_zeros_leave_two_cycles():
    model = QuasiIndependence((3, 3), ((0, 0), (1, 1), (2, 2)))
    spec = spec_of(model, (0, 1, 0, 0, 0, 1, 1, 0, 0), (3, 3))
    enum = enumerate_fiber(spec)
    got = sorted(t.cells for t in enum)
    assert got == [
        (0, 0, 1, 1, 0, 0, 0, 1, 0),
        (0, 1, 0, 0, 0, 1, 1, 0, 0),
    ]


def test_elements_satisfy_spec():
    spec = spec_of(Independence((3, 3)), (2, 1, 0, 0, 1, 2, 1, 1, 1), (3, 3))
    enum = enumerate_fiber(spec)
    assert len(enum) > 1
    for t in enum:
        assert margins(spec.matrix, t) == spec.margins
        assert all(c >= 0 for c in t.cells)
    # no duplicates
    assert len({t.cells for t in enum}) == len(enum)


def test_empty_fiber_when_margins_clash():
    from fiberwalk.models import FiberSpec, model_matrix

    spec = FiberSpec(model_matrix(Independence((2, 2))), (1, 1, 3, 3), (), (2, 2))
    enum = enumerate_fiber(spec)
    assert enum.complete and len(enum) == 0


def test_cap_truncates_and_require_complete_raises():
    spec = spec_of(Independence((3, 3)), (2, 1, 0, 0, 1, 2, 1, 1, 1), (3, 3))
    full = fiber_size(spec)
    assert full > 2
    enum = enumerate_fiber(spec, cap=2)
    assert not enum.complete
    assert len(enum) == 2
    with pytest.raises(FiberTooLarge, match="more than 2 elements"):
        enum.require_complete()


def test_log_rho_matches_lgamma():
    u = Table((3, 0, 1, 2), (2, 2))
    want = -sum(math.lgamma(c + 1) for c in u.cells)
    assert log_rho_unnormalized(u) == pytest.approx(want)


def test_exact_p_by_hand_on_interval_fiber():
    """Fiber [[a,2-a],[2-a,a]] for a in 0..2, rho = (1/4, 1, 1/4)/1.5.

    With the statistic a itself and threshold a_obs = 1, hits are
    a in {1, 2} so p = (1 + 1/4) / 1.5.
    """
    spec = spec_of(Independence((2, 2)), (1, 1, 1, 1), (2, 2))
    stat = lambda cells: float(cells[0])
    p = exact_p_value(spec, 1.0, stat)
    assert p == pytest.approx((1 + 0.25) / 1.5)
    # threshold above the fiber maximum: no hits
    assert exact_p_value(spec, 3.0, stat) == 0.0
    # threshold at the minimum: whole fiber
    assert exact_p_value(spec, 0.0, stat) == pytest.approx(1.0)


def test_exact_p_from_enumeration_refuses_incomplete():
    spec = spec_of(Independence((3, 3)), (2, 1, 0, 0, 1, 2, 1, 1, 1), (3, 3))
    enum = enumerate_fiber(spec, cap=2)
    with pytest.raises(FiberTooLarge):
        exact_p_from_enumeration(enum, 0.0, lambda c: 0.0)


def test_write_enumeration_mentions_completeness():
    spec = spec_of(Independence((2, 2)), (1, 1, 1, 1), (2, 2))
    buf = io.StringIO()
    write_enumeration(enumerate_fiber(spec), buf)
    text = buf.getvalue()
    assert "3 elements" in text
    assert "complete=True" in text


@settings(max_examples=25, deadline=None)
@given(
    st.tuples(
        st.integers(min_value=0, max_value=3),
        st.integers(min_value=0, max_value=3),
        st.integers(min_value=0, max_value=3),
        st.integers(min_value=0, max_value=3),
    )
)
def test_enumeration_complete_and_valid_on_random_two_by_two(cells):
    u = Table(cells, (2, 2))
    spec = fiber_spec_from_observation(Independence((2, 2)), u)
    enum = enumerate_fiber(spec)
    assert enum.complete
    assert u in enum.elements
    for t in enum:
        assert margins(spec.matrix, t) == spec.margins
