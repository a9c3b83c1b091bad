import numpy as np
import pytest

from src.distribution import DiscreteDistribution, check_simplex, normalize
from src.errors import InvalidDistribution


def test_rejects_bad_tables():
    with pytest.raises(InvalidDistribution):
        DiscreteDistribution(("a", "b"), [0.7, 0.7])
    with pytest.raises(InvalidDistribution):
        DiscreteDistribution(("a", "b"), [1.2, -0.2])
    with pytest.raises(InvalidDistribution):
        DiscreteDistribution(("a", "a"), [0.5, 0.5])
    with pytest.raises(InvalidDistribution):
        DiscreteDistribution((), [])
    with pytest.raises(InvalidDistribution):
        DiscreteDistribution(("a",), [0.5, 0.5])


def test_lookup_and_mean():
    d = DiscreteDistribution((0.0, 0.5, 1.0), [0.25, 0.25, 0.5])
    assert d.prob(0.5) == pytest.approx(0.25)
    assert d.prob(0.75) == 0.0
    assert d.mean() == pytest.approx(0.625)
    assert d.expectation(lambda x: x * x) == pytest.approx(0.5625)
    assert d.index_of(1.0) == 2


def test_positive_support_skips_zero_mass():
    d = DiscreteDistribution.from_dict({"x": 0.5, "y": 0.0, "z": 0.5})
    assert d.positive_support() == ("x", "z")


def test_probs_are_read_only():
    d = DiscreteDistribution.uniform(["a", "b"])
    with pytest.raises(ValueError):
        d.probs[0] = 1.0


def test_from_weights_normalizes():
    d = DiscreteDistribution.from_weights(["a", "b"], [1.0, 3.0])
    assert d.as_dict() == pytest.approx({"a": 0.25, "b": 0.75})
    with pytest.raises(InvalidDistribution):
        DiscreteDistribution.from_weights(["a"], [0.0])


def test_sample_frequencies(rng):
    d = DiscreteDistribution(("a", "b", "c"), [0.2, 0.3, 0.5])
    draws = [d.sample(rng) for _ in range(20_000)]
    freq = np.array([draws.count(x) for x in "abc"]) / len(draws)
    assert np.allclose(freq, [0.2, 0.3, 0.5], atol=0.02)


def test_point_mass_always_samples_its_outcome(rng):
    d = DiscreteDistribution.point_mass("only")
    assert all(d.sample(rng) == "only" for _ in range(10))


def test_simplex_helpers():
    assert np.allclose(normalize(np.array([2.0, 2.0])), [0.5, 0.5])
    check_simplex(np.array([0.3, 0.7]))
    with pytest.raises(InvalidDistribution):
        check_simplex(np.array([0.3, 0.6]))
    with pytest.raises(InvalidDistribution):
        normalize(np.zeros(3))
