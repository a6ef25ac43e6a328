import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from projadapt.poly import Polynomial, long_division, normalize, poly_mul, zeros_in_z


def _conv_oracle(p, q):
    out = [0.0] * (len(p) + len(q) - 1)
    for i, a in enumerate(p):
        for j, b in enumerate(q):
            out[i + j] += a * b
    return out


def test_multiply_identity():
    assert poly_mul(Polynomial([1.0]), Polynomial([1.0, 0.5])) == Polynomial([1.0, 0.5])


def test_multiply_difference_of_squares():
    got = poly_mul(Polynomial([1.0, 0.5]), Polynomial([1.0, -0.5]))
    assert np.allclose(got.as_array(), _conv_oracle([1.0, 0.5], [1.0, -0.5]))
    assert np.allclose(got.as_array(), [1.0, 0.0, -0.25])


def test_multiply_shifts_compose():
    assert poly_mul(Polynomial([0.0, 1.0]), Polynomial([0.0, 1.0])) == Polynomial([0, 0, 1])


def test_normalize_strips_trailing_zeros():
    assert normalize(Polynomial([1.0, 2.0, 0.0, 0.0])) == Polynomial([1.0, 2.0])
    assert normalize(Polynomial([0.0])) == Polynomial([0.0])


def test_empty_polynomial_rejected():
    with pytest.raises(ValueError):
        Polynomial([])


def test_long_division_trivial_denominator():
    F, G = long_division(Polynomial([1.0]), 3)
    assert F == Polynomial([1.0, 0.0, 0.0])
    assert np.all(G.as_array() == 0.0)


@pytest.mark.parametrize("d, F_exp, G_exp", [(1, [1.0], [-0.5]), (2, [1.0, -0.5], [0.25])])
def test_long_division_first_order(d, F_exp, G_exp):
    A = Polynomial([1.0, 0.5])
    F, G = long_division(A, d)
    assert np.allclose(F.as_array(), F_exp)
    assert np.allclose(G.as_array(), G_exp)
    # F A + z^-d G = 1 by convolution
    lhs = np.zeros(d + 2)
    fa = _conv_oracle(F.coeffs, A.coeffs)
    lhs[: len(fa)] += fa
    lhs[d : d + len(G)] += G.as_array()
    assert np.allclose(lhs, np.eye(1, d + 2)[0])


@pytest.mark.parametrize("bad", [0, -1, 1.5])
def test_long_division_rejects_bad_delay(bad):
    with pytest.raises(ValueError):
        long_division(Polynomial([1.0, 0.3]), bad)


def test_long_division_rejects_non_monic():
    with pytest.raises(ValueError):
        long_division(Polynomial([2.0, 1.0]), 1)


@settings(max_examples=200, deadline=None)
@given(
    a=st.lists(st.floats(-3, 3, allow_nan=False), min_size=0, max_size=6),
    d=st.integers(1, 5),
)
def test_long_division_reconstructs_one(a, d):
    A = Polynomial([1.0] + a)
    F, G = long_division(A, d)
    assert len(F) == d and F[0] == 1.0
    n = len(a)
    out = np.zeros(n + d + 1)
    fa = np.convolve(F.as_array(), A.as_array())
    out[: fa.size] += fa
    g = G.as_array()
    out[d : d + g.size] += g
    target = np.zeros_like(out)
    target[0] = 1.0
    scale = max(1.0, float(np.max(np.abs(fa))))
    assert np.max(np.abs(out - target)) <= 1e-12 * scale


def test_zeros_first_order():
    z = zeros_in_z(Polynomial([3.25, -1.0]))
    assert z.shape == (1,)
    assert abs(z[0] - 1.0 / 3.25) < 1e-12
    assert abs(z[0] - 0.30769) < 1e-5


def test_zeros_constant_is_empty():
    assert zeros_in_z(Polynomial([2.0])).size == 0


def test_zeros_symmetric_pair():
    z = np.sort(zeros_in_z(Polynomial([1.0, 0.0, -0.25])).real)
    assert np.allclose(z, [-0.5, 0.5])


def test_zeros_reject_vanishing_leading_coefficient():
    with pytest.raises(ValueError):
        zeros_in_z(Polynomial([0.0, 1.0]))


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-2, 2, allow_nan=False), min_size=1, max_size=4),
       st.floats(0.5, 3.0))
def test_zeros_annihilate_polynomial(tail, b0):
    B = Polynomial([b0] + tail)
    for lam in zeros_in_z(B):
        if abs(lam) < 1e-6:
            continue
        val = sum(c * lam ** (-k) for k, c in enumerate(B.coeffs))
        size = sum(abs(c) * abs(lam) ** (-k) for k, c in enumerate(B.coeffs))
        assert abs(val) <= 1e-8 * size
