import pytest
from hypothesis import given, settings, strategies as st

from femgp.errors import InconclusiveError, ParameterError
from femgp.fem import TensorGrid
from femgp.matern import MaternParams
from femgp.scaling import check_condition, flip_h, nodes_for_h, rate_exponent, recommend_h


def test_examples():
    rec = recommend_h("regression", 2, 1, 10_000, 1.0, lengths=[5.0])
    assert rec.exponent == 0.5
    assert rec.h_N == pytest.approx(0.01)
    assert rec.n_h == 501
    assert recommend_h("regression", 4, 2, 123).exponent == 0.25
    rec = recommend_h("classification", 2, 2, 10_000, lengths=[1.0, 1.0])
    assert rec.exponent == 0.5
    # n_h grows like N^{D a} = N
    assert rec.n_h == nodes_for_h(rec.h_N, [1.0, 1.0]) == 101**2


def test_bounds_are_enforced():
    with pytest.raises(ParameterError, match="s > D"):
        recommend_h("regression", 1.5, 2, 100)
    with pytest.raises(ParameterError, match="s > D/2"):
        recommend_h("classification", 1.0, 2, 100)
    with pytest.raises(ParameterError):
        recommend_h("density", 2, 1, 100)
    with pytest.raises(ParameterError):
        recommend_h("regression", 2, 1, 0)


@settings(max_examples=60, deadline=None)
@given(D=st.integers(1, 3), extra=st.floats(0.01, 6), N=st.integers(1, 10**6), c=st.floats(0.1, 10))
def test_monotone_and_capped(D, extra, N, c):
    s = D + extra
    a = rate_exponent("regression", s, D)
    assert a == (0.25 if s >= D + 2 else 1 / (2 * s - 2 * D))
    assert recommend_h("regression", s, D, N + 1, c).h_N <= recommend_h("regression", s, D, N, c).h_N
    assert rate_exponent("classification", s, D) == 1 / min(2 * s - D, 4)


def test_condition_extremes():
    p = MaternParams(1, 2, 1.0)
    fine = check_condition(p, TensorGrid.uniform([1.0], 256), 10, "regression", 40, rng=0)
    assert fine.satisfied and fine.lhs < fine.rhs
    coarse = check_condition(p, TensorGrid.uniform([1.0], 2), 10**6, "classification", 40, rng=0)
    assert not coarse.satisfied
    assert coarse.norm == "L2"


def test_condition_inconclusive():
    p = MaternParams(1, 2, 1.0)
    with pytest.raises(InconclusiveError):
        check_condition(p, TensorGrid.uniform([1.0], 8), 100, "regression", 2, rng=0, max_rel_stderr=1e-6)


def test_verdict_monotone_in_h():
    p = MaternParams(1, 2, 1.0)
    verdicts = [check_condition(p, TensorGrid.uniform([5.0], K), 1000, "regression", 40, rng=3).satisfied for K in (8, 16, 32, 64, 128)]
    assert verdicts == sorted(verdicts)


def test_flip_h_brackets():
    p = MaternParams(1, 2, 1.0)
    h = flip_h(p, [5.0], 1000, [16, 32, 64, 128], mc_budget=40, rng=1)
    assert 5 / 128 < h < 5 / 16
    with pytest.raises(ParameterError):
        flip_h(p, [5.0], 10**9, [4, 8], mc_budget=40, rng=1)
    with pytest.raises(ParameterError):
        flip_h(p, [5.0], 2, [16, 32], mc_budget=40, rng=1)
