import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from latentanon import metrics
from latentanon.errors import DataError, ShapeError
from latentanon.metrics import NormalizationStats, attribute_distance, ia_score, identity_distance, minmax_normalize


def test_identity_distance_examples():
    assert identity_distance([0, 0], [3, 4]) == 5.0
    assert identity_distance([1.5, 2], [1.5, 2]) == 0.0
    assert identity_distance([1, 0], [-1, 0]) == 2.0
    with pytest.raises(ShapeError):
        identity_distance([1, 2], [1, 2, 3])


def test_attribute_distance_examples(rng):
    assert attribute_distance([0.2, 0.8], [0.2, 0.8]) == 0.0
    assert math.isclose(attribute_distance([0.2, 0.8], [0.2, 0.2]), 0.6, rel_tol=1e-12)
    a, b = rng.random((2, 50, 8))
    assert np.array_equal(attribute_distance(a, b), attribute_distance(b, a))


def test_logit_flag():
    d = attribute_distance([0.5], [0.8], use_logit=True)
    assert math.isclose(d, math.log(4.0), rel_tol=1e-12)


def test_minmax_examples():
    s = NormalizationStats.from_values([1, 2, 3])
    assert minmax_normalize(2, s) == 0.5
    assert minmax_normalize(1, s) == 0.0 and minmax_normalize(3, s) == 1.0
    assert minmax_normalize(7, s) == 1.0 and minmax_normalize(-7, s) == 0.0
    c = NormalizationStats.from_values([4, 4])
    assert minmax_normalize(4, c) == 0.0 and minmax_normalize(9, c) == 0.0
    with pytest.raises(ValueError):
        NormalizationStats(2, 1)
    with pytest.raises(DataError):
        NormalizationStats.from_values([])


def test_ia_examples():
    id_s = NormalizationStats(0.0, 1.0)
    at_s = NormalizationStats(0.0, 1.0)
    r = ia_score(0.8, 0.2, metrics.ALPHA, metrics.BETA, id_s, at_s)
    assert math.isclose(r.ia, 0.55, rel_tol=1e-12)
    assert r.ia == r.alpha * r.h_id - r.beta * r.h_attr
    r = ia_score(0.7, 0.0, 1.0, 1.25, id_s, at_s)
    assert r.ia == 0.7
    r = ia_score(0.0, 0.0, 1.0, 1.25, id_s, at_s)
    assert r.ia == 0.0


def test_default_constants():
    assert (metrics.ALPHA, metrics.BETA) == (1.0, 1.25)
    assert (metrics.GAMMA_95, metrics.GAMMA_99) == (0.9, 1.25)
    assert metrics.THETA == 0.5


finite = st.floats(0, 10, allow_nan=False)


@settings(max_examples=100, deadline=None)
@given(finite, finite, finite, st.floats(0.01, 5))
def test_ia_monotone(x_min, a, b, span):
    s = NormalizationStats(x_min, x_min + span)
    lo, hi = sorted((x_min + (a / 10) * span, x_min + (b / 10) * span))
    if hi - lo < 1e-9 * span:
        return
    mid = NormalizationStats(0.0, 1.0)
    assert ia_score(hi, 0.5, 1.0, 1.25, s, mid).ia > ia_score(lo, 0.5, 1.0, 1.25, s, mid).ia
    assert ia_score(0.5, hi, 1.0, 1.25, mid, s).ia < ia_score(0.5, lo, 1.0, 1.25, mid, s).ia


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31), st.floats(0.1, 10), st.floats(-5, 5))
def test_ranking_affine_invariant(seed, scale, shift):
    r = np.random.default_rng(seed)
    d_id, d_attr = r.random(20), r.random(20)
    a_s = NormalizationStats.from_values(d_attr)

    def best(ids):
        s = NormalizationStats.from_values(ids)
        return int(np.argmax(metrics.ia_values(ids, d_attr, s, a_s)))

    assert best(d_id) == best(scale * d_id + shift)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=30), st.floats(-2e3, 2e3))
def test_normalized_in_unit_interval(pop, x):
    v = minmax_normalize(x, NormalizationStats.from_values(pop))
    assert 0.0 <= v <= 1.0


def test_privacy_examples():
    r = metrics.privacy_report_from_distances([1.0, 1.5], gamma=1.2)
    assert r.I == 1.25 and r.p_above == 0.5 and r.strict is False
    e = np.random.default_rng(0).standard_normal((5, 4))
    r = metrics.privacy_metric(list(zip(e, e)), gamma=0.01)
    assert r.I == 0.0 and r.strict is False
    r = metrics.privacy_metric([([0, 0], [3, 4])])
    assert r.gamma == 0.9 and r.strict and r.p_above == 1.0
    with pytest.raises(DataError):
        metrics.privacy_metric([])


def test_privacy_mean_oracle(rng):
    a, b = rng.standard_normal((2, 200, 16))
    r = metrics.privacy_metric(list(zip(a, b)))
    oracle = 0.0
    for x, y in zip(a.tolist(), b.tolist()):
        oracle += math.sqrt(math.fsum((p - q) ** 2 for p, q in zip(x, y)))
    assert abs(r.I - oracle / 200) <= 1e-9
    assert r.strict == (r.p_above == 1.0)


def test_utility_examples(rng):
    a = rng.random((10, 4))
    r = metrics.utility_metric(list(zip(a, a)))
    assert r.A == 0.0 and all(r.attribute_pass)
    r = metrics.utility_metric([([0.2, 0.8], [0.2, 0.2])])
    assert math.isclose(r.A, 0.6, rel_tol=1e-12)
    assert r.attribute_pass == (True, False)
    assert r.theta == 0.5
    with pytest.raises(ValueError):
        metrics.utility_metric([([0.2], [0.2])], theta=1.0)
    with pytest.raises(DataError):
        metrics.utility_metric([])


def test_report_serialization():
    r = metrics.privacy_report_from_distances([1.0, 1.5], gamma=1.2)
    d = json.loads(r.to_json())
    assert d["I"] == 1.25
    assert r.to_csv().splitlines() == ["pair,id_distance,above_gamma", "0,1.0,0", "1,1.5,1"]
