from math import comb

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from decoupled_feec.exterior import (AlternatingForm, alt_inner, hodge_star, index_sets,
                                     interior_product, inverse_hodge_star, sort_with_sign, wedge)


def random_form(draw, d, j):
    vals = draw(st.lists(st.floats(-3, 3), min_size=comb(d, j), max_size=comb(d, j)))
    return AlternatingForm(d, j, np.array(vals))


@st.composite
def form_pair(draw):
    d = draw(st.integers(1, 4))
    i = draw(st.integers(0, d))
    j = draw(st.integers(0, d - i))
    return random_form(draw, d, i), random_form(draw, d, j)


@pytest.mark.parametrize("seq, expected", [
    ((0, 1, 2), ((0, 1, 2), 1)),
    ((1, 0, 2), ((0, 1, 2), -1)),
    ((2, 0, 1), ((0, 1, 2), 1)),
    ((2, 1, 0), ((0, 1, 2), -1)),
    ((0, 0), ((0, 0), 0)),
    ((), ((), 1)),
])
def test_sort_with_sign(seq, expected):
    assert sort_with_sign(seq) == expected


def test_index_sets_order():
    assert index_sets(3, 2) == ((0, 1), (0, 2), (1, 2))
    assert index_sets(3, 4) == ()


def test_basis_evaluation_is_a_minor():
    dx12 = AlternatingForm.basis(3, (0, 1))
    assert dx12([1, 0, 0], [0, 1, 0]) == 1.0
    assert dx12([0, 1, 0], [1, 0, 0]) == -1.0
    assert dx12([0, 0, 1], [0, 1, 0]) == 0.0


def test_basis_from_unsorted_sequence_carries_sign():
    assert AlternatingForm.basis(3, (2, 0)).as_dict() == {(1, 3): -1.0}


def test_wedge_of_one_forms_is_determinant():
    rng = np.random.default_rng(1)
    a, b, c = (AlternatingForm(3, 1, rng.standard_normal(3)) for _ in range(3))
    vol = wedge(wedge(a, b), c)
    M = np.stack([a.coeffs, b.coeffs, c.coeffs])
    assert vol.coeffs[0] == pytest.approx(np.linalg.det(M))


@settings(max_examples=60, deadline=None)
@given(form_pair())
def test_wedge_graded_commutativity(pair):
    a, b = pair
    assert (a ^ b).allclose((b ^ a) * (-1) ** (a.j * b.j), atol=1e-9)


@settings(max_examples=40, deadline=None)
@given(st.data())
def test_wedge_associative(data):
    d = data.draw(st.integers(1, 4))
    i = data.draw(st.integers(0, d))
    j = data.draw(st.integers(0, d - i))
    m = data.draw(st.integers(0, d - i - j))
    a, b, c = (random_form(data.draw, d, deg) for deg in (i, j, m))
    assert ((a ^ b) ^ c).allclose(a ^ (b ^ c), atol=1e-8)


@settings(max_examples=60, deadline=None)
@given(st.data())
def test_star_star_sign_law(data):
    d = data.draw(st.integers(1, 4))
    j = data.draw(st.integers(0, d))
    a = random_form(data.draw, d, j)
    assert hodge_star(hodge_star(a)).allclose(a * (-1) ** (j * (d - j)))
    assert inverse_hodge_star(hodge_star(a)).allclose(a)


@settings(max_examples=60, deadline=None)
@given(st.data())
def test_star_defines_inner_product(data):
    d = data.draw(st.integers(1, 4))
    j = data.draw(st.integers(0, d))
    a, b = random_form(data.draw, d, j), random_form(data.draw, d, j)
    lhs = wedge(a, hodge_star(b))
    assert lhs.coeffs[0] == pytest.approx(alt_inner(a, b), abs=1e-9)


def test_star_in_three_dimensions():
    assert hodge_star(AlternatingForm.basis(3, (0,))).as_dict() == {(2, 3): 1.0}
    assert hodge_star(AlternatingForm.basis(3, (1,))).as_dict() == {(1, 3): -1.0}
    assert hodge_star(AlternatingForm.basis(3, (0, 1))).as_dict() == {(3,): 1.0}


@settings(max_examples=40, deadline=None)
@given(form_pair(), st.lists(st.floats(-2, 2), min_size=4, max_size=4))
def test_interior_product_is_antiderivation(pair, v):
    a, b = pair
    if a.j == 0 or b.j == 0:
        return
    vec = np.array(v[:a.d])
    lhs = interior_product(vec, a ^ b)
    rhs = (interior_product(vec, a) ^ b) + (a ^ interior_product(vec, b)) * (-1) ** a.j
    assert lhs.allclose(rhs, atol=1e-8)


def test_interior_product_matches_evaluation():
    rng = np.random.default_rng(4)
    a = AlternatingForm(4, 2, rng.standard_normal(6))
    v, w = rng.standard_normal(4), rng.standard_normal(4)
    assert interior_product(v, a)(w) == pytest.approx(a(v, w))


def test_errors():
    with pytest.raises(ValueError):
        wedge(AlternatingForm.volume(2), AlternatingForm.basis(2, (0,)))
    with pytest.raises(ValueError):
        wedge(AlternatingForm.volume(2), AlternatingForm.volume(3))
    with pytest.raises(ValueError):
        AlternatingForm(3, 1, [1.0, 2.0])
    with pytest.raises(ValueError):
        AlternatingForm(3, 4, [1.0])
    with pytest.raises(ValueError):
        AlternatingForm.basis(3, (0,))([1, 0, 0], [0, 1, 0])
