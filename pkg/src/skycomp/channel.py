"""Channel samplers for the three statistical models.

Every sampler takes a distance array of shape (M, K) (UAV m, user k) and
returns complex gains of shape (M, K), or (trials, M, K) when ``trials`` is
given. Randomness comes only from the ``rng`` argument; use
:func:`substream` to derive independent generators for parallel work.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np


class ChannelModel(str, enum.Enum):
    LOS_RANDOM_PHASE = "los"
    RAYLEIGH = "rayleigh"
    ISOTROPIC = "isotropic"


@dataclass(frozen=True)
class ChannelMatrix:
    entries: np.ndarray
    model: ChannelModel

    @property
    def shape(self):
        return self.entries.shape


def substream(seed: int, *key: int) -> np.random.Generator:
    """Counter-based generator for the substream identified by ``key``.

    Streams with different keys are statistically independent, so Monte-Carlo
    work can be split over (purpose, episode, group, chunk) in any order.
    """
    seq = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(seq))


def path_gain(d, tau0):
    """LoS power gain ``tau0 / d**2``."""
    d = np.asarray(d, dtype=float)
    if np.any(d <= 0):
        raise ValueError("path_gain: distance must be > 0")
    return tau0 / d**2


def _check(distances):
    distances = np.asarray(distances, dtype=float)
    if np.any(distances <= 0) or not np.all(np.isfinite(distances)):
        raise ValueError("distances must be finite and > 0")
    return distances


def _shape(distances, trials):
    return distances.shape if trials is None else (int(trials),) + distances.shape


def _cscg(rng, shape):
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)


def sample_los_random_phase(distances, tau0, rng, trials=None):
    """Deterministic amplitude sqrt(tau0)/d with i.i.d. uniform phase."""
    distances = _check(distances)
    theta = rng.uniform(0.0, 2 * np.pi, _shape(distances, trials))
    return np.sqrt(tau0) / distances * np.exp(1j * theta)


def sample_rayleigh(distances, tau0, rng, trials=None):
    """Independent CN(0, tau0/d^2) entries."""
    distances = _check(distances)
    return np.sqrt(tau0) / distances * _cscg(rng, _shape(distances, trials))


def isotropic_variance(distances, tau0):
    """Per-entry variance of each user's isotropic channel, shape (K,)."""
    distances = _check(distances)
    return tau0 * np.sum(distances**-2.0, axis=-2) / distances.shape[-2]


def sample_isotropic(distances, tau0, rng, trials=None):
    """Column k i.i.d. CN(0, tau0 * sum_m d_mk^-2 / M); preserves column power."""
    distances = _check(distances)
    var = isotropic_variance(distances, tau0)
    return np.sqrt(var) * _cscg(rng, _shape(distances, trials))


_SAMPLERS = {
    ChannelModel.LOS_RANDOM_PHASE: sample_los_random_phase,
    ChannelModel.RAYLEIGH: sample_rayleigh,
    ChannelModel.ISOTROPIC: sample_isotropic,
}


def sample_channels(distances, tau0, model, rng, trials=None):
    return _SAMPLERS[ChannelModel(model)](distances, tau0, rng, trials)


def sample_channel(distances, tau0, model, rng) -> ChannelMatrix:
    model = ChannelModel(model)
    return ChannelMatrix(_SAMPLERS[model](distances, tau0, rng), model)
