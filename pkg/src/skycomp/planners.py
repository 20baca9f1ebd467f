"""UAV deployment strategies built on the SCA optimizer.

* full information: one joint problem over all episodes;
* current information: episode by episode, each anchored to the previous
  placement (receding horizon without look-ahead);
* static: one placement for the whole horizon.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .channel import ChannelModel, substream
from .errors import ConfigError
from .rates import average_min_rate, p2_objective
from .sca import MAX_JOINT_EPISODES, run_sca
from .scenario import EpisodeTracks, ScenarioConfig, random_uav_tracks

INIT_JITTER = 10.0


@dataclass
class PlanResult:
    uav_tracks: np.ndarray                  # (N, M, 2)
    bound_min_rate: float
    mode: str
    trace: list = field(default_factory=list)      # outer-loop rates (one list per SCA run in current mode)
    mc_min_rate: float | None = None
    mc_se: float | None = None
    mc_trace: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def tracks(self, users: EpisodeTracks) -> EpisodeTracks:
        return users.with_uavs(self.uav_tracks)


def centroid_placement(tracks: EpisodeTracks, config: ScenarioConfig, rng=None) -> np.ndarray:
    """Episode-1 user centroid plus uniform jitter of +-10 m per UAV, shape (M, 2)."""
    if rng is None:
        rng = substream(config.rng_seed, 4)
    center = tracks.users[0].mean(axis=0)
    return center + rng.uniform(-INIT_JITTER, INIT_JITTER, (config.num_uavs, 2))


def random_placement(config: ScenarioConfig, rng=None) -> np.ndarray:
    """Random feasible trajectories (N, M, 2): uniform start, random walk within budget."""
    if rng is None:
        rng = substream(config.rng_seed, 5)
    return random_uav_tracks(config, rng)


def _as_tracks(init, tracks, config):
    if init is None:
        init = centroid_placement(tracks, config)
    init = np.asarray(init, dtype=float)
    if init.ndim == 2:
        init = np.broadcast_to(init, (tracks.num_episodes,) + init.shape)
    if init.shape != (tracks.num_episodes, config.num_uavs, 2):
        raise ConfigError(f"initial placement shape {init.shape} does not match the scenario")
    return np.array(init)


def plan_static(tracks: EpisodeTracks, config: ScenarioConfig, init=None, eps=1e-3,
                max_outer=50, dump=None) -> PlanResult:
    """One placement shared by all episodes; ``init`` is (M, 2) or (N, M, 2)."""
    start = _as_tracks(init, tracks, config)[:1]
    trace = run_sca(tracks, config, "static", start, eps=eps, max_outer=max_outer, dump=dump)
    uavs = np.broadcast_to(trace.final.positions, (tracks.num_episodes, config.num_uavs, 2)).copy()
    return PlanResult(uavs, p2_objective(uavs, tracks.users, config), "static", trace.rates,
                      metadata={"outer_iterations": len(trace.solutions), "converged": trace.converged,
                                "sca_traces": [trace]})


def plan_full_information(tracks: EpisodeTracks, config: ScenarioConfig, init=None, eps=1e-3,
                          max_outer=50, max_joint_episodes=MAX_JOINT_EPISODES, dump=None) -> PlanResult:
    """Joint optimization over all episodes with consecutive-episode displacement limits.

    With a zero displacement budget the UAVs cannot move, so the problem is
    the static one and is solved as such.
    """
    if config.displacement == 0:
        res = plan_static(tracks, config, init, eps, max_outer, dump)
        res.mode = "full"
        res.metadata["routed_to_static"] = True
        return res
    start = _as_tracks(init, tracks, config)
    trace = run_sca(tracks, config, "joint", start, eps=eps, max_outer=max_outer,
                    max_joint_episodes=max_joint_episodes, dump=dump)
    uavs = trace.final.positions
    return PlanResult(uavs, p2_objective(uavs, tracks.users, config), "full", trace.rates,
                      metadata={"outer_iterations": len(trace.solutions), "converged": trace.converged,
                                "sca_traces": [trace]})


def plan_current_information(tracks: EpisodeTracks, config: ScenarioConfig, init=None, eps=1e-3,
                             max_outer=50, dump=None) -> PlanResult:
    """Episode-by-episode planning using only the current user positions.

    Episode 1 is unconstrained; each later episode is anchored to the
    previous placement with the displacement budget. With a zero budget the
    episode-1 placement is kept.
    """
    start = _as_tracks(init, tracks, config)
    N, M = tracks.num_episodes, config.num_uavs
    uavs = np.empty((N, M, 2))
    traces = []
    first = run_sca(tracks, config, "single_episode", start[0], eps=eps, max_outer=max_outer,
                    episode=0, dump=dump)
    uavs[0] = first.final.positions[0]
    traces.append(first)
    budget = config.displacement
    for n in range(1, N):
        if budget == 0:
            uavs[n] = uavs[n - 1]
            continue
        tr = run_sca(tracks, config, "single_episode", uavs[n - 1], eps=eps, max_outer=max_outer,
                     episode=n, anchor=uavs[n - 1], budgets=np.full(M, budget), dump=dump)
        uavs[n] = tr.final.positions[0]
        traces.append(tr)
    return PlanResult(uavs, p2_objective(uavs, tracks.users, config), "current",
                      [t.rates for t in traces],
                      metadata={"episodes_optimized": len(traces), "sca_traces": traces})


PLANNERS = {
    "full": plan_full_information,
    "current": plan_current_information,
    "static": plan_static,
}


def plan(mode, tracks, config, **kwargs) -> PlanResult:
    try:
        planner = PLANNERS[mode]
    except KeyError:
        raise ConfigError(f"unknown mode {mode!r}; expected one of {sorted(PLANNERS)}") from None
    return planner(tracks, config, **kwargs)


def evaluate_plan(result: PlanResult, tracks: EpisodeTracks, config: ScenarioConfig, trials=2000,
                  seed=None, model=ChannelModel.LOS_RANDOM_PHASE) -> PlanResult:
    """Fill in the Monte-Carlo min rate (episode-averaged, min over users)."""
    report = average_min_rate(result.tracks(tracks), config, bound="mc", trials=trials,
                              seed=seed, model=model)
    result.mc_min_rate = report.min_rate
    result.mc_se = report.min_se
    result.metadata["mc_argmin"] = report.argmin
    return result
