import numpy as np
import pytest

from robust_hedge.errors import ConfigError
from robust_hedge.seeds import NOISE, PRICE_NOISE, SeedSpec, as_seed


def test_streams_are_reproducible():
    steps = np.full(100, 0.01)
    a = SeedSpec(42).increments(steps, 3, NOISE)
    b = SeedSpec(42).increments(steps, 3, NOISE)
    assert np.array_equal(a, b)


def test_streams_are_distinct():
    steps = np.full(100, 0.01)
    seed = SeedSpec(42)
    base = seed.increments(steps, 0, NOISE)
    assert not np.array_equal(base, seed.increments(steps, 1, NOISE))
    assert not np.array_equal(base, seed.increments(steps, 0, PRICE_NOISE))
    assert not np.array_equal(base, SeedSpec(43).increments(steps, 0, NOISE))


def test_batch_matches_single():
    steps = np.full(50, 0.02)
    seed = SeedSpec(7)
    batch = seed.increments_batch(steps, [4, 2, 9])
    assert batch.shape == (3, 50)
    assert np.array_equal(batch[1], seed.increments(steps, 2))
    assert np.array_equal(batch[2], seed.increments(steps, 9))


def test_increment_scale():
    steps = np.full(20000, 1e-4)
    dw = SeedSpec(1).increments(steps)
    assert np.var(dw) == pytest.approx(1e-4, rel=0.05)


def test_bad_seeds():
    with pytest.raises(ConfigError):
        SeedSpec(-1)
    with pytest.raises(ConfigError):
        SeedSpec(2 ** 64)
    with pytest.raises(ConfigError):
        SeedSpec(1.5)
    with pytest.raises(ConfigError):
        SeedSpec(True)
    assert SeedSpec(2 ** 64 - 1).master_seed == 2 ** 64 - 1


def test_as_seed():
    seed = SeedSpec(5)
    assert as_seed(seed) is seed
    assert as_seed(5) == seed
    assert hash(as_seed(5)) == hash(seed)
