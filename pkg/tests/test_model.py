import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra import numpy as hnp

from portalchoice.errors import ConfigurationError, DataError, DomainError
from portalchoice.model import (
    ChoiceOccasion, ModelSpec, OccasionSet, Variable, choice_probabilities,
    log_likelihood, make_alternatives, probabilities, score_and_hessian, variant_spec,
    superset_spec, assemble_design,
)

from helpers import LABELS8, random_block, random_occasions


def naive_probs(beta, X):
    # direct evaluation of the softmax, no stabilization
    e = [math.exp(sum(b * x for b, x in zip(beta, row))) for row in X]
    return [v / sum(e) for v in e]


def occ(X, chosen=0, hh="h1", t=1):
    return ChoiceOccasion(hh, t, 0, chosen, np.asarray(X, dtype=float))


class TestChoiceProbabilities:
    def test_equal_utilities(self):
        X = np.full((8, 3), 0.7)
        p = choice_probabilities([1.0, -2.0, 0.5], occ(X))
        assert np.all(p == 0.125)

    def test_two_alternatives_closed_form(self):
        p = choice_probabilities([1.0], occ([[0.0], [math.log(3)]]))
        np.testing.assert_allclose(p, [0.25, 0.75], rtol=0, atol=1e-15)

    def test_matches_naive_evaluation(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            beta = rng.normal(size=4)
            X = rng.normal(size=(3, 4))
            np.testing.assert_allclose(choice_probabilities(beta, occ(X)), naive_probs(beta, X),
                                       rtol=0, atol=1e-14)

    def test_no_overflow_at_700(self):
        X = np.array([[700.0], [699.0], [-700.0]])
        p = choice_probabilities([1.0], occ(X))
        assert np.all(np.isfinite(p)) and abs(p.sum() - 1) < 1e-12

    def test_dimension_mismatch(self):
        with pytest.raises(ConfigurationError):
            choice_probabilities([1.0, 2.0], occ(np.zeros((3, 3))))

    def test_non_finite_feature_names_occasion(self):
        X = np.zeros((3, 2))
        X[1, 1] = np.nan
        with pytest.raises(DataError, match="household h9, occasion 4"):
            choice_probabilities([1.0, 1.0], occ(X, hh="h9", t=4))


class TestLogLikelihood:
    def test_single_equal_utility(self):
        assert log_likelihood([0.3], [occ(np.ones((8, 1)))]) == pytest.approx(-2.0794415, abs=1e-7)
        assert log_likelihood([0.3], [occ(np.ones((8, 1)))]) == pytest.approx(math.log(1 / 8), rel=1e-15)

    def test_additivity(self):
        occs = [occ(np.ones((8, 1)), t=i + 1) for i in range(37)]
        assert log_likelihood([0.3], occs) == pytest.approx(37 * math.log(1 / 8), rel=1e-14)

    def test_brute_force_reverse_order(self):
        rng = np.random.default_rng(11)
        data = random_occasions(rng, lambda a: variant_spec(2, a), n=50)
        beta = rng.normal(scale=0.3, size=len(data.spec))
        total = 0.0
        for o in reversed(list(data)):
            total += math.log(naive_probs(beta, o.features)[o.chosen])
        assert log_likelihood(beta, data) == pytest.approx(total, abs=1e-10)

    def test_empty(self):
        with pytest.raises(DomainError):
            log_likelihood([1.0], [])

    def test_deterministic_under_reordering(self):
        rng = np.random.default_rng(5)
        data = random_occasions(rng, lambda a: variant_spec(1, a), n=60)
        beta = rng.normal(scale=0.3, size=len(data.spec))
        perm = rng.permutation(data.n)
        shuffled = OccasionSet(data.alternatives, data.spec, data.household[perm], data.index[perm],
                               data.timestamp[perm], data.chosen[perm], data.X[perm])
        assert log_likelihood(beta, shuffled) == log_likelihood(beta, data)


def central_fd(f, beta):
    g = np.zeros_like(beta)
    for k in range(len(beta)):
        h = 1e-5 * max(1.0, abs(beta[k]))
        up, dn = beta.copy(), beta.copy()
        up[k] += h
        dn[k] -= h
        g[k] = (f(up) - f(dn)) / (2 * h)
    return g


@pytest.mark.parametrize("variant", range(1, 10))
def test_gradient_matches_finite_differences(variant):
    rng = np.random.default_rng(100 + variant)
    data = random_occasions(rng, lambda a: variant_spec(variant, a), n=80)
    beta = rng.normal(scale=0.3, size=len(data.spec))
    g, _ = score_and_hessian(beta, data)
    fd = central_fd(lambda b: log_likelihood(b, data), beta)
    assert np.all(np.abs(fd - g) <= 1e-6 * np.maximum(1.0, np.abs(g)))


@pytest.mark.parametrize("variant", range(1, 10))
def test_hessian_matches_gradient_differences(variant):
    rng = np.random.default_rng(200 + variant)
    data = random_occasions(rng, lambda a: variant_spec(variant, a), n=40)
    beta = rng.normal(scale=0.3, size=len(data.spec))
    _, H = score_and_hessian(beta, data)
    for k in range(len(beta)):
        h = 1e-5
        up, dn = beta.copy(), beta.copy()
        up[k] += h
        dn[k] -= h
        col = (score_and_hessian(up, data)[0] - score_and_hessian(dn, data)[0]) / (2 * h)
        np.testing.assert_allclose(H[:, k], col, rtol=1e-5, atol=1e-6)


def test_hessian_negative_semidefinite_at_random_points():
    rng = np.random.default_rng(7)
    data = random_occasions(rng, lambda a: variant_spec(6, a), n=100)
    for _ in range(20):
        beta = rng.normal(scale=1.0, size=len(data.spec))
        _, H = score_and_hessian(beta, data)
        assert np.allclose(H, H.T)
        assert np.linalg.eigvalsh(H).max() <= 1e-8


def test_identical_rows_give_zero_gradient():
    row = np.array([0.4, 2.0, -1.0])
    X = np.tile(row, (8, 1))
    g, H = score_and_hessian(np.array([0.5, -0.1, 2.0]), [occ(X, chosen=3)])
    assert np.all(g == 0.0)


finite = st.floats(-5, 5, allow_nan=False, allow_infinity=False)


@settings(max_examples=200, deadline=None)
@given(hnp.arrays(float, st.tuples(st.integers(2, 9), st.integers(1, 4)), elements=finite),
       st.data())
def test_simplex_and_translation_invariance(X, data):
    beta = np.array(data.draw(st.lists(finite, min_size=X.shape[1], max_size=X.shape[1])))
    p = probabilities(beta, X)
    assert np.all(p > 0)
    assert abs(p.sum() - 1) <= 1e-12
    shift = data.draw(st.floats(-50, 50))
    # Shifting every utility by a constant: add a column that is constant
    # across alternatives with coefficient 1.
    X2 = np.hstack([X, np.full((X.shape[0], 1), shift)])
    p2 = probabilities(np.append(beta, 1.0), X2)
    np.testing.assert_allclose(p2, p, rtol=0, atol=1e-12)


def test_probabilities_strictly_positive_in_range():
    rng = np.random.default_rng(1)
    for _ in range(200):
        X = rng.normal(scale=3, size=(8, 3))
        p = probabilities(rng.normal(size=3), X)
        assert np.all(p > 0) and abs(p.sum() - 1) <= 1e-12


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000))
def test_likelihood_concave_along_segments(seed):
    rng = np.random.default_rng(seed)
    data = random_occasions(rng, lambda a: variant_spec(2, a), n=30)
    a = rng.normal(scale=1.0, size=len(data.spec))
    b = rng.normal(scale=1.0, size=len(data.spec))
    mid = log_likelihood(0.5 * (a + b), data)
    assert mid >= 0.5 * (log_likelihood(a, data) + log_likelihood(b, data)) - 1e-9


class TestSpec:
    alts = make_alternatives(LABELS8)

    def test_variant_sizes(self):
        assert len(variant_spec(2, self.alts)) == 9 + 7
        assert "brand_yahoo" not in variant_spec(2, self.alts).names
        assert variant_spec(7, self.alts).names.count("last_search_failed_broad") == 1
        assert variant_spec(8, self.alts).names[:2] == ["portsame_lag_1", "portsame_lag_2"]
        assert "loyalty" not in variant_spec(9, self.alts).names

    def test_hierarchy_rule(self):
        with pytest.raises(ConfigurationError):
            ModelSpec((Variable("last_view_length_sq"),))
        with pytest.raises(ConfigurationError):
            ModelSpec((Variable("media_mentions"), Variable("media_x_loyalty")))

    def test_base_brand_rejected(self):
        spec = ModelSpec((Variable("brand_dummy", "yahoo"),))
        with pytest.raises(ConfigurationError):
            spec.validate_for(self.alts)

    def test_roundtrip_dict(self):
        spec = variant_spec(6, self.alts)
        assert ModelSpec.from_dict(spec.to_dict()) == spec

    def test_design_invariants(self):
        rng = np.random.default_rng(0)
        block = random_block(rng, 30)
        spec = superset_spec(self.alts)
        X = assemble_design(spec, block, self.alts)
        n = spec.names
        miss = X[..., n.index("missing_data")]
        for lag in ("last_view_length", "last_pages", "last_search_failed", "last_search_failed_broad"):
            assert np.all(X[..., n.index(lag)][miss == 1] == 0)
        np.testing.assert_array_equal(X[..., n.index("last_pages_sq")], X[..., n.index("last_pages")] ** 2)
        np.testing.assert_array_equal(X[..., n.index("media_x_loyalty")],
                                      X[..., n.index("media_mentions")] * X[..., n.index("loyalty")])
        for v in spec.variables:
            if v.tag in ("brand_dummy", "missing_data", "link", "same_email", "start_page", "media_mentions"):
                assert set(np.unique(X[..., n.index(v.name)])) <= {0.0, 1.0}
