"""Zero-forcing receive beamforming, SNR, ergodic rates and the bound pair.

Every rate in this module carries the 1/L scheduling pre-log, so closed-form
bounds, Monte-Carlo estimates and optimizer objectives compare directly.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channel import ChannelModel, sample_channels, substream
from .errors import NumericalDegeneracyError, NumericalError, SingularChannelError
from .scenario import EpisodeTracks, ScenarioConfig, distance_matrix

COND_LIMIT = 1e12
SNR_AGREEMENT = 1e-8
MAX_SINGULAR_FRACTION = 1e-3
MC_CHUNK = 500


def gram(H):
    """H^H H over the last two axes."""
    H = np.asarray(H)
    return np.conj(np.swapaxes(H, -1, -2)) @ H


def _gram_condition(G):
    return np.linalg.cond(G)


def inverse_gram(G):
    """(H^H H)^-1 through a Cholesky factor; G is Hermitian positive definite."""
    chol = np.linalg.cholesky(G)
    chol_inv = np.linalg.inv(chol)
    return np.conj(np.swapaxes(chol_inv, -1, -2)) @ chol_inv


def _guard(H):
    G = gram(H)
    cond = _gram_condition(G)
    if np.any(~np.isfinite(cond) | (cond > COND_LIMIT)):
        raise SingularChannelError(f"channel Gram condition number {np.max(cond):.3g} > {COND_LIMIT:g}")
    return G, cond


def zf_beamformers(H):
    """Unit-norm ZF combiners; column k of the result is w_k.

    w_k is the normalized k-th row of (H^H H)^-1 H^H (conjugated into a
    column), so ``w_k^H h_j = 0`` for ``j != k``. Works on (..., M, K).
    """
    H = np.asarray(H, dtype=complex)
    G, _ = _guard(H)
    W = H @ inverse_gram(G)
    return W / np.linalg.norm(W, axis=-2, keepdims=True)


def zf_snr(H, power, sigma2, check=True):
    """Per-user post-ZF SNR, shape (..., K).

    Evaluates both ``P |w_k^H h_k|^2 / sigma2`` and
    ``P / ([(H^H H)^-1]_kk sigma2)``; with ``check`` the two must agree to
    1e-8 relative on reasonably conditioned draws.
    """
    H = np.asarray(H, dtype=complex)
    G, cond = _guard(H)
    Ginv = inverse_gram(G)
    diag = np.real(np.diagonal(Ginv, axis1=-2, axis2=-1))
    snr_gram = power / (diag * sigma2)
    if check:
        W = H @ Ginv
        W = W / np.linalg.norm(W, axis=-2, keepdims=True)
        gain = np.abs(np.sum(np.conj(W) * H, axis=-2)) ** 2
        snr_beam = power * gain / sigma2
        rel = np.abs(snr_beam - snr_gram) / snr_gram
        ok = np.asarray(cond) < 1e6
        if np.any(rel[ok] > SNR_AGREEMENT):
            raise NumericalError(f"SNR forms disagree: max rel diff {np.max(rel[ok]):.3g}")
    return snr_gram


def monte_carlo_ergodic_rate(distances, config: ScenarioConfig, model=ChannelModel.LOS_RANDOM_PHASE,
                             trials=2000, rng=None, seed=None, stream=()):
    """Monte-Carlo ergodic rate of each user in one group.

    ``distances`` is (M, K). Returns ``(mean, std_error)`` in bps/Hz, both
    shape (K,). Draws are generated either from ``rng`` or, when ``seed`` is
    given, from fixed-size chunks on independent substreams keyed by
    ``stream + (chunk,)`` so the result does not depend on evaluation order.
    Singular draws are redrawn and must stay below 0.1% of trials.
    """
    if trials < 100:
        raise ValueError("monte_carlo_ergodic_rate needs trials >= 100")
    distances = np.asarray(distances, dtype=float)
    if rng is None and seed is None:
        seed = config.rng_seed
    chunks = []
    singular = 0
    n_chunks = -(-trials // MC_CHUNK)
    for c in range(n_chunks):
        size = min(MC_CHUNK, trials - c * MC_CHUNK)
        gen = rng if rng is not None else substream(seed, *stream, c)
        H = sample_channels(distances, config.ref_gain, model, gen, size)
        cond = _gram_condition(gram(H))
        bad = ~np.isfinite(cond) | (cond > COND_LIMIT)
        while np.any(bad):
            singular += int(bad.sum())
            if singular > MAX_SINGULAR_FRACTION * trials:
                raise NumericalDegeneracyError(f"{singular} singular channel draws out of {trials}")
            H[bad] = sample_channels(distances, config.ref_gain, model, gen, int(bad.sum()))
            cond = _gram_condition(gram(H))
            bad = ~np.isfinite(cond) | (cond > COND_LIMIT)
        snr = zf_snr(H, config.tx_power, config.noise_power)
        chunks.append(np.log2(1.0 + snr) / config.num_groups)
    rates = np.concatenate(chunks, axis=0)
    mean = rates.mean(axis=0)
    se = rates.std(axis=0, ddof=1) / np.sqrt(trials)
    return mean, se


# closed-form bounds ----------------------------------------------------------

def bound_snr(inv_sq_sum, power, tau0, sigma2, num_uavs, dof):
    """Effective SNR ``P tau0 sum(d^-2) / (M sigma2 / dof)``."""
    return power * tau0 * np.asarray(inv_sq_sum, dtype=float) * dof / (num_uavs * sigma2)


def upper_bound_from_sum(inv_sq_sum, config: ScenarioConfig):
    M, K = config.num_uavs, config.users_per_group
    snr = bound_snr(inv_sq_sum, config.tx_power, config.ref_gain, config.noise_power, M, M - K + 1)
    return np.log2(1.0 + snr) / config.num_groups


def lower_bound_from_sum(inv_sq_sum, config: ScenarioConfig):
    M, K = config.num_uavs, config.users_per_group
    if M - K <= 0:
        raise ValueError(f"lower bound undefined for M-K={M - K}: pole at M = K")
    snr = bound_snr(inv_sq_sum, config.tx_power, config.ref_gain, config.noise_power, M, M - K)
    return np.log2(1.0 + snr) / config.num_groups


def _inv_sq_sum(distances, axis):
    d = np.asarray(distances, dtype=float)
    if np.any(d <= 0):
        raise ValueError("distances must be > 0")
    return np.sum(d**-2.0, axis=axis)


def rate_upper_bound(distances, config: ScenarioConfig, axis=-1):
    """Isotropic-Rayleigh upper bound; ``axis`` indexes the M UAVs."""
    return upper_bound_from_sum(_inv_sq_sum(distances, axis), config)


def rate_lower_bound(distances, config: ScenarioConfig, axis=-1):
    """Isotropic-Rayleigh lower bound; ``axis`` indexes the M UAVs."""
    return lower_bound_from_sum(_inv_sq_sum(distances, axis), config)


def max_bound_gap(config: ScenarioConfig) -> float:
    """Analytical ceiling on upper - lower, ``log2((M-K+1)/(M-K)) / L``."""
    M, K = config.num_uavs, config.users_per_group
    return float(np.log2((M - K + 1) / (M - K)) / config.num_groups)


@dataclass
class RateReport:
    """Per-(n, l, k) rates plus the episode-averaged min-rate summary.

    Arrays indexed [n, l, k]; ``average`` is indexed [l, k].
    """

    lower: np.ndarray
    upper: np.ndarray
    mc: np.ndarray | None
    mc_se: np.ndarray | None
    bound: str
    average: np.ndarray
    min_rate: float
    argmin: tuple
    min_se: float = 0.0


def average_min_rate(tracks: EpisodeTracks, config: ScenarioConfig, bound="lower",
                     trials=2000, seed=None, model=ChannelModel.LOS_RANDOM_PHASE) -> RateReport:
    """Average each user's rate over episodes and take the min over users."""
    if tracks.uavs is None:
        raise ValueError("tracks carry no UAV positions")
    if bound not in ("lower", "upper", "mc"):
        raise ValueError(f"unknown bound {bound!r}")
    users = tracks.grouped_users()
    N, L, K, _ = users.shape
    d = distance_matrix(tracks.uavs[:, None], users, config.altitude)  # (N, L, M, K)
    s = _inv_sq_sum(d, axis=-2)
    lower = lower_bound_from_sum(s, config)
    upper = upper_bound_from_sum(s, config)
    mc = se = None
    if bound == "mc":
        seed = config.rng_seed if seed is None else seed
        mc = np.empty((N, L, K))
        se = np.empty((N, L, K))
        for n in range(N):
            for l in range(L):
                mc[n, l], se[n, l] = monte_carlo_ergodic_rate(
                    d[n, l], config, model, trials, seed=seed, stream=(7, n, l))
    chosen = {"lower": lower, "upper": upper, "mc": mc}[bound]
    average = chosen.mean(axis=0)
    idx = np.unravel_index(np.argmin(average), average.shape)
    min_se = 0.0
    if bound == "mc":
        min_se = float(np.sqrt(np.sum(se[(slice(None),) + idx] ** 2)) / N)
    return RateReport(lower, upper, mc, se, bound, average, float(average[idx]),
                      tuple(int(i) for i in idx), min_se)


def user_lower_rates(uavs, users, config: ScenarioConfig):
    """Lower-bound rate per (n, u) for UAVs (N, M, 2) and users (N, U, 2)."""
    d = distance_matrix(uavs, users, config.altitude)
    return lower_bound_from_sum(_inv_sq_sum(d, axis=-2), config)


def p2_objective(uavs, users, config: ScenarioConfig) -> float:
    """Min over users of the episode-averaged lower-bound rate."""
    return float(np.min(user_lower_rates(uavs, users, config).mean(axis=0)))
