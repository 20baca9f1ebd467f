import numpy as np
import pytest

from skycomp.channel import (path_gain, sample_isotropic, sample_los_random_phase,
                             sample_rayleigh, substream)

DRAWS = 100_000


@pytest.mark.parametrize("d, tau0, expected", [(1, 1e-4, 1e-4), (100, 1e-4, 1e-8), (10, 1, 1e-2)])
def test_path_gain(d, tau0, expected):
    assert path_gain(d, tau0) == pytest.approx(expected, rel=1e-12)


def test_path_gain_rejects_zero():
    with pytest.raises(ValueError):
        path_gain(0.0, 1e-4)


def test_los_amplitude_is_deterministic():
    d = np.array([[100.0, 150.0], [120.0, 300.0], [101.0, 99.0]])
    h = sample_los_random_phase(d, 1e-4, substream(0, 1), trials=50)
    np.testing.assert_allclose(np.abs(h) ** 2, np.broadcast_to(path_gain(d, 1e-4), h.shape), rtol=1e-13)


def test_los_phase_is_uniform():
    h = sample_los_random_phase(np.array([[1.0]]), 1.0, substream(0, 2), trials=DRAWS)
    assert abs(np.mean(h / np.abs(h))) < 0.02


def test_same_seed_same_matrix():
    d = np.full((4, 2), 120.0)
    a = sample_los_random_phase(d, 1e-4, substream(5, 1))
    b = sample_los_random_phase(d, 1e-4, substream(5, 1))
    np.testing.assert_array_equal(a, b)


def test_rayleigh_moments():
    d = np.array([[100.0], [200.0]])
    h = sample_rayleigh(d, 1e-4, substream(1, 1), trials=DRAWS)
    power = np.mean(np.abs(h) ** 2, axis=0)[:, 0]
    np.testing.assert_allclose(power, 1e-4 / d[:, 0] ** 2, rtol=0.02)
    assert power[1] / power[0] == pytest.approx(0.25, rel=0.03)
    for part in (h.real, h.imag):
        np.testing.assert_allclose(np.var(part, axis=0)[:, 0], 0.5e-4 / d[:, 0] ** 2, rtol=0.03)


def test_isotropic_preserves_column_power():
    d = np.array([[100.0, 400.0], [150.0, 120.0], [300.0, 110.0]])
    h = sample_isotropic(d, 1e-4, substream(2, 1), trials=DRAWS)
    col = np.mean(np.sum(np.abs(h) ** 2, axis=1), axis=0)
    np.testing.assert_allclose(col, 1e-4 * np.sum(d**-2.0, axis=0), rtol=0.02)
    per_entry = np.mean(np.abs(h) ** 2, axis=0)
    np.testing.assert_allclose(per_entry, np.broadcast_to(per_entry.mean(axis=0), per_entry.shape), rtol=0.03)


def test_isotropic_matches_rayleigh_for_equal_distances():
    d = np.full((3, 2), 130.0)
    a = sample_isotropic(d, 1e-4, substream(3, 1), trials=DRAWS)
    b = sample_rayleigh(d, 1e-4, substream(3, 2), trials=DRAWS)
    np.testing.assert_allclose(np.mean(np.abs(a) ** 2), np.mean(np.abs(b) ** 2), rtol=0.01)
    se = np.std(np.abs(a[:, 0, 0]) ** 2) / np.sqrt(DRAWS)
    assert abs(np.mean(np.abs(a[:, 0, 0]) ** 2) - np.mean(np.abs(b[:, 0, 0]) ** 2)) < 3 * np.sqrt(2) * se


def test_sampled_matrices_have_full_rank():
    rng = substream(4, 1)
    d = rng.uniform(100, 200, (10, 6))
    for sampler in (sample_los_random_phase, sample_rayleigh, sample_isotropic):
        sv = np.linalg.svd(sampler(d, 1e-4, rng, trials=10_000), compute_uv=False)
        assert np.all(sv[:, -1] > 1e-12 * sv[:, 0])
