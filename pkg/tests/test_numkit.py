import numpy as np
import pytest

from fscilab.errors import (
    DegenerateVectorError,
    NumericError,
    ParameterError,
    ShapeError,
)
from fscilab.numkit import (
    ParamSet,
    SeededRng,
    cosine_similarity,
    gradcheck,
    sgd_step,
    softmax_with_temperature,
)

# frozen from the extended-precision oracle in tests/oracles.py
SOFTMAX_ORACLE = (0.15820502188102692, 0.058200375040107985, 0.7835946030788651)
COSINE_ORACLE = 0.5976143046671968  # 5 / sqrt(70)


def test_softmax_uniform_on_equal_scores():
    out = softmax_with_temperature((1.0, 1.0, 1.0), 1.0)
    assert np.allclose(out, [1 / 3] * 3, atol=1e-15)


def test_softmax_low_temperature_saturates_and_keeps_argmax():
    out = softmax_with_temperature((5.0, 0.0), 1e-6)
    assert out[0] == pytest.approx(1.0, abs=1e-12)
    assert out[1] == pytest.approx(0.0, abs=1e-12)
    assert np.argmax(out) == 0


def test_softmax_matches_extended_precision_oracle():
    out = softmax_with_temperature((0.3, -0.2, 1.1), 0.5)
    assert np.allclose(out, SOFTMAX_ORACLE, rtol=0, atol=1e-15)


def test_softmax_rejects_bad_inputs():
    with pytest.raises(ParameterError):
        softmax_with_temperature((1.0, 2.0), 0.0)
    with pytest.raises(ParameterError):
        softmax_with_temperature((1.0, 2.0), -1.0)
    with pytest.raises(ParameterError):
        softmax_with_temperature((), 1.0)
    with pytest.raises(NumericError):
        softmax_with_temperature((1.0, np.inf), 1.0)


def test_softmax_sums_to_one_and_is_shift_invariant():
    rng = SeededRng(11)
    for _ in range(50):
        scores = rng.normal(6) * 10
        tau = float(rng.uniform(0.05, 5.0))
        p = softmax_with_temperature(scores, tau)
        assert abs(p.sum() - 1.0) <= 1e-12
        assert np.all(p > 0)
        shifted = softmax_with_temperature(scores + 3.7, tau)
        assert np.allclose(p, shifted, atol=1e-12)
        assert np.argmax(p) == np.argmax(scores)


def test_cosine_identity_and_orthogonality():
    assert cosine_similarity((3.0, 4.0), (3.0, 4.0)) == 1.0
    assert cosine_similarity((1.0, 0.0), (0.0, 1.0)) == 0.0


def test_cosine_matches_oracle():
    got = cosine_similarity((1.0, 2.0, 3.0), (-1.0, 0.0, 2.0))
    assert got == pytest.approx(COSINE_ORACLE, abs=1e-15)


def test_cosine_errors():
    with pytest.raises(DegenerateVectorError):
        cosine_similarity((0.0, 0.0), (1.0, 0.0))
    with pytest.raises(ShapeError):
        cosine_similarity((1.0, 0.0), (1.0, 0.0, 0.0))


def test_cosine_symmetry_and_scale_invariance():
    rng = SeededRng(5)
    for _ in range(50):
        u, v = rng.normal(7), rng.normal(7)
        a, b = float(rng.uniform(0.1, 10)), float(rng.uniform(0.1, 10))
        assert cosine_similarity(u, v) == pytest.approx(
            cosine_similarity(v, u), abs=1e-15
        )
        assert cosine_similarity(a * u, b * v) == pytest.approx(
            cosine_similarity(u, v), abs=1e-12
        )


def _ps(**kwargs):
    return ParamSet(list(kwargs.items()))


def test_sgd_step_arithmetic():
    p = _ps(w=np.array([1.0]))
    assert sgd_step(p, _ps(w=np.array([0.0])), 0.1)["w"][0] == 1.0
    assert sgd_step(p, _ps(w=np.array([0.5])), 0.1)["w"][0] == pytest.approx(0.95)
    got = sgd_step(p, _ps(w=np.array([0.0])), 0.1, weight_decay=0.1)
    assert got["w"][0] == pytest.approx(0.99)


def test_sgd_step_lr_zero_is_identity():
    rng = SeededRng(2)
    p = _ps(a=rng.normal((3, 2)), b=rng.normal(4))
    g = _ps(a=rng.normal((3, 2)), b=rng.normal(4))
    out = sgd_step(p, g, 0.0)
    for name in p.names():
        assert np.array_equal(out[name], p[name])


def test_sgd_step_errors():
    p = _ps(w=np.ones(2))
    with pytest.raises(ShapeError):
        sgd_step(p, _ps(w=np.ones(3)), 0.1)
    with pytest.raises(ShapeError):
        sgd_step(p, _ps(v=np.ones(2)), 0.1)
    with pytest.raises(ParameterError):
        sgd_step(p, _ps(w=np.ones(2)), -0.1)
    bad = _ps(w=np.ones(2))
    bad._arrays["w"] = np.array([1.0, np.nan])  # bypass the setter's check
    with pytest.raises(NumericError):
        sgd_step(p, bad, 0.1)


def test_paramset_order_and_uniqueness():
    ps = ParamSet([("b", np.zeros(1)), ("a", np.zeros(2))])
    assert ps.names() == ["b", "a"]
    with pytest.raises(ParameterError):
        ParamSet([("x", np.zeros(1)), ("x", np.zeros(1))])


def test_seeded_rng_is_reproducible():
    a = SeededRng(123)
    b = SeededRng(123)
    assert np.array_equal(a.normal(10), b.normal(10))
    assert np.array_equal(a.permutation(20), b.permutation(20))
    assert a.integers(0, 1000) == b.integers(0, 1000)
    # derived substreams inherit the determinism and differ by label
    assert np.array_equal(a.derive("x").normal(4), b.derive("x").normal(4))
    assert not np.array_equal(
        SeededRng(1).derive("x").normal(4), SeededRng(1).derive("y").normal(4)
    )


def test_gradcheck_exact_quadratic():
    p = _ps(w=np.array([0.7, -1.3, 2.1]))

    def fn(ps):
        return float(np.sum(ps["w"] ** 2)), _ps(w=2.0 * ps["w"])

    assert gradcheck(fn, p) < 1e-8


def test_gradcheck_detects_doubled_gradient():
    p = _ps(w=np.array([0.7, -1.3]))

    def fn(ps):
        return float(np.sum(ps["w"] ** 2)), _ps(w=4.0 * ps["w"])

    assert gradcheck(fn, p) == pytest.approx(1.0 / 3.0, abs=1e-6)


def test_gradcheck_rejects_non_finite_loss():
    p = _ps(w=np.array([1.0]))

    def fn(ps):
        return float("nan"), _ps(w=np.zeros(1))

    with pytest.raises(NumericError):
        gradcheck(fn, p)
