import numpy as np

from synth_eval.rng import gaussian, make_rng, split_seed, unit_vector


def test_same_seed_same_stream():
    np.testing.assert_array_equal(make_rng(42).random(16), make_rng(42).random(16))


def test_seed_reduced_mod_2_64():
    np.testing.assert_array_equal(make_rng(-1).random(4), make_rng(2 ** 64 - 1).random(4))


def test_split_seed_is_xor():
    assert split_seed(7, 3) == 4
    assert split_seed(0, 5) == 5
    assert split_seed(2 ** 64 - 1, 1) == 2 ** 64 - 2


def test_gaussian_follows_box_muller():
    rng = make_rng(9)
    u = make_rng(9).random(4)
    z = gaussian(rng, (4,))
    u1, u2 = 1.0 - u[:2], u[2:]
    r = np.sqrt(-2.0 * np.log(u1))
    expected = np.concatenate([r * np.cos(2 * np.pi * u2), r * np.sin(2 * np.pi * u2)])
    np.testing.assert_allclose(z, expected, rtol=0, atol=1e-15)


def test_gaussian_odd_count_and_shape():
    z = gaussian(make_rng(1), (3, 5))
    assert z.shape == (3, 5)


def test_gaussian_moments():
    z = gaussian(make_rng(2), (200_000,))
    assert abs(z.mean()) < 0.01
    assert abs(z.std() - 1.0) < 0.01


def test_unit_vector_norm():
    v = unit_vector(make_rng(3), 12)
    assert v.shape == (12,)
    assert abs(np.linalg.norm(v) - 1.0) < 1e-12
