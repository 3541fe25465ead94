from math import factorial

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from decoupled_feec.quadrature import simplex_rule


def dirichlet_mean(alpha, d):
    """Mean of prod lambda_i^alpha_i over a d-simplex (Dirichlet integral)."""
    num = factorial(d) * np.prod([factorial(a) for a in alpha])
    return num / factorial(sum(alpha) + d)


@pytest.mark.parametrize("d", [1, 2, 3])
@pytest.mark.parametrize("degree", [0, 3, 10])
def test_weights_positive_and_normalized(d, degree):
    rule = simplex_rule(d, degree)
    assert np.all(rule.weights > 0)
    assert rule.weights.sum() == pytest.approx(1.0)
    assert np.allclose(rule.bary.sum(axis=1), 1.0)
    assert np.all(rule.bary >= 0)


def test_point_count_of_degree_ten_rule():
    assert simplex_rule(3, 10).num_points == 216


@settings(max_examples=60, deadline=None)
@given(st.data())
def test_exact_on_barycentric_monomials(data):
    d = data.draw(st.sampled_from([2, 3]))
    degree = data.draw(st.integers(0, 12))
    alpha = data.draw(st.lists(st.integers(0, degree), min_size=d + 1, max_size=d + 1)
                      .filter(lambda a: sum(a) <= degree))
    rule = simplex_rule(d, degree)
    vals = np.prod(rule.bary ** np.array(alpha), axis=1)
    assert rule.weights @ vals == pytest.approx(dirichlet_mean(alpha, d), rel=1e-11)


def test_not_exact_beyond_degree():
    rule = simplex_rule(2, 2)
    vals = rule.bary[:, 0] ** 6
    assert abs(rule.weights @ vals - dirichlet_mean((6, 0, 0), 2)) > 1e-6
