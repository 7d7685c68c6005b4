import numpy as np
import pytest

from kooph2.observables import (
    dictionary_from_descriptor,
    identity_dictionary,
    monomial_dictionary,
    monomials_deg2,
    probe_dictionary,
)


def test_monomials_deg2_ordering():
    d = monomials_deg2()
    assert d.n_features == 5
    assert np.allclose(d([0.0, 0.0]), np.zeros(5))
    assert np.allclose(d([1.0, 2.0]), [1, 2, 1, 4, 2])
    assert np.allclose(d([-1.0, 1.0]), [-1, 1, 1, 1, -1])
    assert d.labels == ("x1", "x2", "x1^2", "x2^2", "x1*x2")


def test_monomials_sign_pattern():
    # g(-x) flips only the odd-degree features: (-, -, +, +, +)
    d = monomials_deg2()
    rng = np.random.default_rng(0)
    for _ in range(50):
        x = rng.standard_normal(2)
        flips = d(-x) / np.where(d(x) == 0, 1.0, d(x))
        assert np.allclose(np.sign(d(-x)), np.sign(d(x) * [-1, -1, 1, 1, 1]))


def test_monomials_batched():
    d = monomials_deg2()
    rng = np.random.default_rng(1)
    xs = rng.standard_normal((7, 3, 2))
    out = d(xs)
    assert out.shape == (7, 3, 5)
    assert np.allclose(out[2, 1], d(xs[2, 1]))


def test_monomials_deterministic_bitwise():
    d = monomials_deg2()
    x = np.array([0.123456789, -0.987654321])
    a = d(x)
    b = d(x)
    assert (a == b).all()


def test_custom_monomial_dictionary():
    d = monomial_dictionary([(1, 0, 0), (0, 2, 1)])
    assert d.n_features == 2
    assert np.allclose(d([2.0, 3.0, 4.0]), [2.0, 36.0])
    assert d.labels == ("x1", "x2^2*x3")


def test_monomial_rejects_bad_exponents():
    with pytest.raises(ValueError):
        monomial_dictionary([])
    with pytest.raises(ValueError):
        monomial_dictionary([(1, 0), (0, -1)])
    with pytest.raises(ValueError):
        monomial_dictionary([(1, 0), (0, 1, 1)])


def test_monomials_reject_nonfinite():
    d = monomials_deg2()
    with pytest.raises(ValueError):
        d([np.nan, 0.0])


def test_probe_dictionary_sampling():
    d = probe_dictionary([0, 3, 5], field_len=8)
    assert np.allclose(d(np.zeros(8)), np.zeros(3))
    assert np.allclose(d(np.ones(8)), np.ones(3))
    y = np.sin(np.arange(8))
    assert np.allclose(d(y), y[[0, 3, 5]])


def test_probe_dictionary_rejects_out_of_range():
    with pytest.raises(ValueError):
        probe_dictionary([0, 8], field_len=8)
    with pytest.raises(ValueError):
        probe_dictionary([-1], field_len=8)


def test_descriptor_round_trip():
    for d in (monomials_deg2(), probe_dictionary([1, 2], 4), identity_dictionary(3)):
        rebuilt = dictionary_from_descriptor(d.descriptor())
        x = np.linspace(-1, 1, rebuilt.params.get("field_len", rebuilt.params.get("dim", 2)))
        if d.name == "monomials":
            x = np.array([0.3, -0.7])
        assert rebuilt.n_features == d.n_features
        assert np.array_equal(rebuilt(x), d(x))


def test_unknown_descriptor():
    with pytest.raises(KeyError):
        dictionary_from_descriptor({"name": "nope", "params": {}})
