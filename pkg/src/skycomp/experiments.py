"""Experiment runners behind the command line verbs.

Each ``run_*`` function takes an :class:`ExperimentSpec`, writes one CSV
into ``spec.out_dir`` and returns its path. Output depends only on the
spec (config, seed, trials), so repeated runs are byte-identical.
"""
from __future__ import annotations

import io
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .channel import ChannelModel, sample_isotropic, substream
from .errors import ConfigError
from .planners import (PlanResult, centroid_placement, evaluate_plan, plan_current_information,
                       plan_full_information, plan_static, random_placement)
from .rates import (average_min_rate, gram, inverse_gram, monte_carlo_ergodic_rate, p2_objective,
                    rate_lower_bound, rate_upper_bound, zf_beamformers)
from .sca import dump_subproblems, run_sca
from .scenario import (ScenarioConfig, distance_matrix, generate_user_tracks,
                       uniform_uav_positions)

KINDS = ("bounds_tightness", "convergence", "speed_sweep", "grouping_sweep",
         "trajectory_snapshot", "appendix_stats")
MODES = ("full", "current", "static")


def default_config(kind) -> ScenarioConfig:
    """Desk-scale scenario used when no config file is given."""
    if kind == "bounds_tightness" or kind == "appendix_stats":
        return ScenarioConfig(num_uavs=10, users_per_group=6, num_groups=1, num_episodes=1,
                              arena=(0.0, 100.0, 0.0, 100.0))
    if kind == "grouping_sweep":
        return ScenarioConfig(num_uavs=10, users_per_group=6, num_groups=3, num_episodes=5)
    return ScenarioConfig()


@dataclass
class ExperimentSpec:
    kind: str
    config: ScenarioConfig
    out_dir: Path = Path(".")
    trials: int | None = None
    seed: int | None = None
    modes: tuple = MODES
    speeds: tuple = (0.0, 5.0, 10.0, 15.0, 20.0)
    group_counts: tuple = (2, 3, 6, 9)
    stride: int = 1
    dump_subproblems: bool = False
    records: list = field(default_factory=list, repr=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown experiment {self.kind!r}")
        self.out_dir = Path(self.out_dir)
        if self.seed is not None:
            self.config = self.config.replace(rng_seed=int(self.seed))
        self.seed = self.config.rng_seed
        bad = [m for m in self.modes if m not in MODES]
        if bad:
            raise ConfigError(f"unknown planner modes {bad}")
        if self.kind == "grouping_sweep":
            total = self.config.total_users
            if any(total % g for g in self.group_counts):
                raise ConfigError(f"group counts {self.group_counts} must divide {total} users")
        if self.stride < 1:
            raise ConfigError("stride must be >= 1")
        if self.trials is not None and self.trials < 100:
            raise ConfigError("trials must be >= 100")

    def trials_or(self, default) -> int:
        return default if self.trials is None else int(self.trials)

    @property
    def dump(self):
        return self.records if self.dump_subproblems else None


# output ------------------------------------------------------------------------

def _fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return str(bool(value)).lower()
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return "%.9g" % value
    return str(value)


def write_csv(path, header, rows, provenance: str) -> Path:
    """Atomically write ``rows`` under a '#' provenance line and a header."""
    buf = io.StringIO()
    buf.write(f"# {provenance}\n")
    buf.write(",".join(header) + "\n")
    for row in rows:
        buf.write(",".join(_fmt(v) for v in row) + "\n")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(buf.getvalue())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def _provenance(spec: ExperimentSpec, trials) -> str:
    return (f"skycomp {spec.kind} config={spec.config.digest()} seed={spec.seed} "
            f"trials={trials}")


def _finish(spec: ExperimentSpec, name, header, rows, trials) -> Path:
    if spec.dump_subproblems:
        dump_subproblems(spec.records, spec.out_dir / f"{name}_subproblems.json")
    return write_csv(spec.out_dir / f"{name}.csv", header, rows, _provenance(spec, trials))


# experiments -------------------------------------------------------------------

def _drop(config: ScenarioConfig):
    users = generate_user_tracks(config).users[0]
    uavs = uniform_uav_positions(config, substream(config.rng_seed, 2))
    return users, uavs


def run_bounds_tightness(spec: ExperimentSpec) -> Path:
    """Per-user bounds and Monte-Carlo ergodic rates for one random drop."""
    cfg = spec.config
    trials = spec.trials_or(5000)
    users, uavs = _drop(cfg)
    d = distance_matrix(uavs, users, cfg.altitude)          # (M, U)
    lower = rate_lower_bound(d, cfg, axis=0)
    upper = rate_upper_bound(d, cfg, axis=0)
    rows = []
    K = cfg.users_per_group
    for group in range(cfg.num_groups):
        cols = slice(group * K, (group + 1) * K)
        los, se = monte_carlo_ergodic_rate(d[:, cols], cfg, ChannelModel.LOS_RANDOM_PHASE, trials,
                                           seed=cfg.rng_seed, stream=(8, group, 0))
        ray, se_r = monte_carlo_ergodic_rate(d[:, cols], cfg, ChannelModel.RAYLEIGH, trials,
                                             seed=cfg.rng_seed, stream=(8, group, 1))
        for k in range(K):
            u = group * K + k
            rows.append((u, lower[u], upper[u], los[k], ray[k], se[k], se_r[k]))
    header = ("user_id", "lower", "upper", "mc_los", "mc_rayleigh", "se", "se_rayleigh")
    return _finish(spec, "bounds", header, rows, trials)


def convergence_trace(tracks, cfg, init, trials, seed, dump=None):
    """SCA trace from ``init`` with the Monte-Carlo rate of every iterate."""
    trace = run_sca(tracks, cfg, "joint", init, dump=dump)
    iterates = [np.asarray(init)] + [s.positions for s in trace.solutions]
    rows = []
    for q, (rate, pos) in enumerate(zip(trace.rates, iterates)):
        rep = average_min_rate(tracks.with_uavs(pos), cfg, bound="mc", trials=trials, seed=seed)
        rows.append((q, rate, rep.min_rate, rep.min_se))
    return trace, rows


def run_convergence(spec: ExperimentSpec) -> Path:
    """SCA outer iterations from a random feasible placement (full information)."""
    cfg = spec.config
    trials = spec.trials_or(2000)
    tracks = generate_user_tracks(cfg)
    init = random_placement(cfg)
    _, rows = convergence_trace(tracks, cfg, init, trials, cfg.rng_seed, spec.dump)
    return _finish(spec, "convergence", ("iteration", "R_bound", "R_mc", "se"), rows, trials)


def speed_sweep(tracks, cfg, speeds, modes, trials=None, dump=None):
    """Min rate per (mode, speed); each speed warm-starts from the previous one.

    Returns a dict mode -> list of :class:`PlanResult` ordered like ``speeds``.
    """
    speeds = sorted(float(v) for v in speeds)
    base = centroid_placement(tracks, cfg)
    static = plan_static(tracks, cfg, base, dump=dump)
    out = {}
    for mode in modes:
        results = []
        prev = static.uav_tracks
        for v in speeds:
            c = cfg.replace(uav_speed_max=v)
            if mode == "static":
                res = static
            elif mode == "full":
                res = plan_full_information(tracks, c, prev, dump=dump)
            else:
                res = _current_warm(tracks, c, prev if results else base, dump)
            prev = res.uav_tracks
            res.metadata["speed"] = v
            if trials is not None:
                res = evaluate_plan(_copy(res), tracks, c, trials=trials)
            results.append(res)
        out[mode] = results
    return out


def _copy(res: PlanResult) -> PlanResult:
    return PlanResult(res.uav_tracks.copy(), res.bound_min_rate, res.mode, list(res.trace),
                      metadata=dict(res.metadata))


def _current_warm(tracks, cfg, warm, dump):
    """Receding-horizon plan whose per-episode start is the previous plan,
    pulled back inside the reachable disc when needed."""
    warm = np.asarray(warm, dtype=float)
    if warm.ndim == 2:
        return plan_current_information(tracks, cfg, warm, dump=dump)
    res = plan_current_information(tracks, cfg, warm[0], dump=dump)
    budget = cfg.displacement
    if budget == 0:
        return res
    uavs = res.uav_tracks
    greedy = float(res.bound_min_rate)
    # second pass: start each episode from the slower plan where reachable
    alt = np.empty_like(uavs)
    alt[0] = uavs[0]
    for n in range(1, tracks.num_episodes):
        off = warm[n] - alt[n - 1]
        norm = np.linalg.norm(off, axis=-1, keepdims=True)
        start = alt[n - 1] + off * np.minimum(1.0, 0.999 * budget / np.maximum(norm, 1e-300))
        tr = run_sca(tracks, cfg, "single_episode", start, episode=n, anchor=alt[n - 1],
                     budgets=np.full(cfg.num_uavs, budget), dump=dump)
        alt[n] = tr.final.positions[0]
    alt_rate = p2_objective(alt, tracks.users, cfg)
    if alt_rate > greedy:
        res = PlanResult(alt, alt_rate, "current", res.trace, metadata=dict(res.metadata, warm=True))
    return res


def run_speed_sweep(spec: ExperimentSpec) -> Path:
    cfg = spec.config
    trials = spec.trials_or(2000)
    tracks = generate_user_tracks(cfg)
    sweep = speed_sweep(tracks, cfg, spec.speeds, spec.modes, trials, spec.dump)
    rows = []
    for mode in spec.modes:
        for res in sweep[mode]:
            rows.append((mode, res.metadata["speed"], res.bound_min_rate, res.mc_min_rate, res.mc_se))
    return _finish(spec, "speed_sweep", ("mode", "v_uav", "min_rate_bound", "min_rate_mc", "se"),
                   rows, trials)


def grouping_sweep(cfg: ScenarioConfig, group_counts, dump=None):
    """Static-mode min rate for each number of groups over the same users.

    Returns rows ``(L, K, status, min_rate)``; configurations with
    K >= M are reported as skipped.
    """
    total = cfg.total_users
    rows = []
    for L in group_counts:
        K = total // L
        if K >= cfg.num_uavs:
            rows.append((L, K, "skipped", float("nan")))
            continue
        c = cfg.replace(num_groups=L, users_per_group=K)
        tracks = generate_user_tracks(c)
        res = plan_static(tracks, c, centroid_placement(tracks, c), dump=dump)
        rows.append((L, K, "ok", res.bound_min_rate))
    if all(r[2] == "skipped" for r in rows):
        raise ConfigError("no group count leaves K < M")
    return rows


def run_grouping_sweep(spec: ExperimentSpec) -> Path:
    rows = [(L, K, "static", status, rate)
            for L, K, status, rate in grouping_sweep(spec.config, spec.group_counts, spec.dump)]
    return _finish(spec, "grouping_sweep", ("L", "K", "mode", "status", "min_rate"), rows, 0)


def appendix_stats(cfg: ScenarioConfig, trials, seed):
    """Wishart inverse-trace and projected-power checks, as CSV rows."""
    M, K = cfg.num_uavs, cfg.users_per_group
    rng = substream(seed, 9, 0)
    G = (rng.standard_normal((trials, M, K)) + 1j * rng.standard_normal((trials, M, K))) / np.sqrt(2)
    tr_emp = float(np.mean(np.real(np.trace(inverse_gram(gram(G)), axis1=-2, axis2=-1))))
    tr_theory = K / (M - K)
    users, uavs = _drop(cfg.replace(num_episodes=1))
    d = distance_matrix(uavs, users[:K], cfg.altitude)
    H = sample_isotropic(d, cfg.ref_gain, substream(seed, 9, 1), trials)
    W = zf_beamformers(H)
    power = np.abs(np.sum(np.conj(W) * H, axis=-2)) ** 2          # (T, K)
    pp_emp = float(np.mean(power[:, 0]))
    pp_theory = float((M - K + 1) * cfg.ref_gain * np.sum(d[:, 0] ** -2.0) / M)
    return [
        ("wishart_inverse_trace", tr_theory, tr_emp, abs(tr_emp - tr_theory) / tr_theory, trials),
        ("projected_power_mean", pp_theory, pp_emp, abs(pp_emp - pp_theory) / pp_theory, trials),
    ]


def run_appendix_stats(spec: ExperimentSpec) -> Path:
    trials = spec.trials_or(10000)
    rows = appendix_stats(spec.config, trials, spec.seed)
    return _finish(spec, "appendix_stats", ("statistic", "theoretical", "empirical", "rel_error", "trials"),
                   rows, trials)


def run_trajectory_snapshot(spec: ExperimentSpec) -> Path:
    """User and UAV positions every ``stride`` episodes for each planner."""
    cfg = spec.config
    tracks = generate_user_tracks(cfg)
    base = centroid_placement(tracks, cfg)
    planners = {"full": plan_full_information, "current": plan_current_information, "static": plan_static}
    rows = []
    for mode in spec.modes:
        res = planners[mode](tracks, cfg, base, dump=spec.dump)
        for n in range(0, tracks.num_episodes, spec.stride):
            for u, (x, y) in enumerate(tracks.users[n]):
                rows.append((mode, n + 1, "user", u, x, y))
            for m, (x, y) in enumerate(res.uav_tracks[n]):
                rows.append((mode, n + 1, "uav", m, x, y))
    return _finish(spec, "trajectory_snapshot", ("mode", "episode", "kind", "index", "x", "y"), rows, 0)


RUNNERS = {
    "bounds_tightness": run_bounds_tightness,
    "convergence": run_convergence,
    "speed_sweep": run_speed_sweep,
    "grouping_sweep": run_grouping_sweep,
    "appendix_stats": run_appendix_stats,
    "trajectory_snapshot": run_trajectory_snapshot,
}


def run_experiment(spec: ExperimentSpec) -> Path:
    return RUNNERS[spec.kind](spec)
