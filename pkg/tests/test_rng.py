import numpy as np

from ikdp.rng import Rng, rand_uniform, randn


def test_same_seed_same_first_values():
    assert np.array_equal(Rng(7).normal(8), Rng(7).normal(8))
    assert not np.array_equal(Rng(7).normal(8), Rng(8).normal(8))


def test_normal_moments():
    z = randn(Rng(11), (100_000,)).data.astype(np.float64)
    assert abs(z.mean()) < 0.02
    assert abs(z.var() - 1) < 0.05


def test_uniform_range_and_integer_steps():
    u = rand_uniform(Rng(3), -2.0, 5.0, (10_000,)).data
    assert u.min() >= -2.0 and u.max() < 5.0
    steps = Rng(5).integers(1, 80, (100_000,))
    assert steps.min() == 1 and steps.max() == 80


def test_box_muller_matches_documented_transform():
    u = np.random.Generator(np.random.Philox(42)).random((2, 2))
    expected = np.sqrt(-2 * np.log1p(-u[:, 0]))[:, None] * np.stack(
        [np.cos(2 * np.pi * u[:, 1]), np.sin(2 * np.pi * u[:, 1])], axis=1)
    np.testing.assert_array_equal(Rng(42).normal(4), expected.reshape(-1))


def test_odd_shapes_and_scalars():
    assert Rng(0).normal((3, 5)).shape == (3, 5)
    assert np.ndim(Rng(0).normal(())) == 0


def test_permutation_and_derive():
    p = Rng(9).permutation(50)
    assert sorted(p.tolist()) == list(range(50))
    assert Rng(9).derive(3).seed == 9 ^ 3
