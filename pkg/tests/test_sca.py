import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from skycomp import ConfigError, EpisodeTracks, ScenarioConfig
from skycomp.planners import centroid_placement, random_placement
from skycomp.rates import p2_objective
from skycomp.sca import (SubproblemSpec, build_subproblem, dump_subproblems, linearize_inverse,
                         run_sca, snr_coefficient, solve_convex_subproblem, tightness,
                         verify_weighted_average)
from skycomp.scenario import generate_user_tracks

H = 100.0
DESK = ScenarioConfig(num_uavs=5, users_per_group=3, num_groups=2, num_episodes=5)
GAMMA = snr_coefficient(ScenarioConfig(num_uavs=2, users_per_group=1))


# tangent under-estimator -------------------------------------------------------

@pytest.mark.parametrize("c, ct, g", [(1, 1, 1), (0.5, 1, 1.5), (2, 1, 0)])
def test_linearize_examples(c, ct, g):
    assert linearize_inverse(c, ct) == pytest.approx(g)
    assert linearize_inverse(c, ct) <= 1 / c


def test_linearize_rejects_nonpositive_point():
    with pytest.raises(ValueError):
        linearize_inverse(1.0, 0.0)


def test_linearize_underestimates_on_many_pairs():
    rng = np.random.default_rng(0)
    c = rng.uniform(1e-12, 1 / H**2, 100_000)
    ct = rng.uniform(1e-12, 1 / H**2, 100_000)
    assert np.all(linearize_inverse(c, ct) <= 1 / c * (1 + 1e-12))
    assert np.all(linearize_inverse(ct, ct) == 1 / ct)


@settings(max_examples=300, deadline=None)
@given(st.floats(1e-10, 1e-4), st.floats(1e-10, 1e-4))
def test_linearize_property(c, ct):
    assert linearize_inverse(c, ct) <= 1 / c * (1 + 1e-12)


# subproblem assembly ---------------------------------------------------------------

def _c_tilde(users, positions):
    d2 = np.sum((positions[None, None] - users[:, :, None]) ** 2, axis=-1) + H**2
    return 1 / d2


def test_static_variable_count_and_box():
    tracks = generate_user_tracks(DESK)
    start = centroid_placement(tracks, DESK)
    spec = build_subproblem(tracks, DESK, _c_tilde(tracks.users, start), "static", start)
    M, N, Kt = DESK.num_uavs, DESK.num_episodes, DESK.total_users
    assert spec.num_variables == 2 * M + Kt * M * N + 1
    assert spec.c_max == pytest.approx(1e-4)


def test_build_rejects_bad_inputs():
    tracks = generate_user_tracks(DESK)
    start = centroid_placement(tracks, DESK)
    ct = _c_tilde(tracks.users, start)
    with pytest.raises(ConfigError):
        build_subproblem(tracks, DESK, ct, "hover", start)
    with pytest.raises(ConfigError):
        build_subproblem(tracks, DESK, ct[:2], "static", start)
    with pytest.raises(ValueError):
        build_subproblem(tracks, DESK, -ct, "static", start)


def test_joint_single_episode_equals_unanchored_single():
    cfg = DESK.replace(num_episodes=1, uav_speed_max=1e6)
    tracks = generate_user_tracks(cfg)
    start = centroid_placement(tracks, cfg)
    ct = _c_tilde(tracks.users, start)
    a = solve_convex_subproblem(build_subproblem(tracks, cfg, ct, "joint", start[None]))
    b = solve_convex_subproblem(build_subproblem(tracks, cfg, ct, "single_episode", start, episode=0))
    assert a.rate == pytest.approx(b.rate, abs=1e-8)
    np.testing.assert_allclose(a.positions, b.positions, atol=1e-5)


# small problems with known optima ----------------------------------------------------

def _spec_one_uav(users, start, c_tilde):
    users = np.asarray(users, float)[None]
    return SubproblemSpec(mode="static", users=users, c_tilde=np.asarray(c_tilde, float),
                          altitude=H, gamma=GAMMA, prefactor=1.0, num_uavs=1,
                          start=np.asarray(start, float).reshape(1, 1, 2), c_max=1 / H**2,
                          arena_diagonal=500.0)


def _sca_one_uav(users, start, rounds=200):
    pos = np.asarray(start, float).reshape(1, 2)
    for _ in range(rounds):
        spec = _spec_one_uav(users, pos, _c_tilde(np.asarray(users, float)[None], pos))
        sol = solve_convex_subproblem(spec)
        step = np.max(np.abs(sol.positions[0] - pos))
        pos = sol.positions[0]
        if step < 1e-7:
            break
    return sol, spec


def _min_rate(xy, users):
    d2 = np.sum((xy[..., None, :] - np.asarray(users)) ** 2, axis=-1) + H**2
    return np.min(np.log2(1 + GAMMA / d2), axis=-1)


def test_single_user_goes_overhead():
    sol, spec = _sca_one_uav([[30.0, 40.0]], [0.0, 0.0])
    np.testing.assert_allclose(sol.positions[0, 0], [30, 40], atol=1e-3)
    assert sol.rate == pytest.approx(np.log2(1 + GAMMA / H**2), abs=1e-6)
    report = verify_weighted_average(sol, spec)
    np.testing.assert_allclose(report["rhs"][0], [30, 40], atol=1e-3)
    assert report["passed"]


def test_symmetric_pair_gives_midpoint():
    sol, _ = _sca_one_uav([[-50.0, 20.0], [50.0, -20.0]], [13.0, -7.0])
    np.testing.assert_allclose(sol.positions[0, 0], [0, 0], atol=1e-3)


def test_two_variable_toy_matches_grid_search():
    users = [[0.0, 0.0], [120.0, 10.0], [40.0, 90.0]]
    sol, _ = _sca_one_uav(users, [100.0, 100.0])
    # coarse-to-fine exhaustive search down to 1e-3 m spacing
    center, half = np.array([60.0, 50.0]), 100.0
    for spacing in (1.0, 0.1, 0.01, 0.001):
        axis = np.arange(-half, half + spacing / 2, spacing)
        gx, gy = np.meshgrid(center[0] + axis, center[1] + axis, indexing="ij")
        vals = _min_rate(np.stack([gx, gy], -1), users)
        i = np.unravel_index(np.argmax(vals), vals.shape)
        center, half = np.array([gx[i], gy[i]]), 20 * spacing
    assert sol.rate == pytest.approx(vals[i], abs=1e-3)
    assert sol.rate >= vals[i] - 1e-6


# outer loop ----------------------------------------------------------------------------

@pytest.fixture(scope="module")
def joint_run():
    tracks = generate_user_tracks(DESK)
    return tracks, run_sca(tracks, DESK, "joint", random_placement(DESK))


def test_joint_trace_monotone_tight_and_stationary(joint_run):
    tracks, trace = joint_run
    assert trace.converged
    assert np.all(np.diff(trace.rates) >= -1e-9)
    assert tightness(trace.final, trace.final_spec) <= 1e-4
    for sol in trace.solutions:
        kkt = sol.kkt
        assert max(kkt["stationarity"], kkt["primal"], kkt["dual"]) <= 1e-6
    assert verify_weighted_average(trace.final, trace.final_spec)["passed"]


def test_displacement_respected(joint_run):
    _, trace = joint_run
    step = np.linalg.norm(np.diff(trace.final.positions, axis=0), axis=-1)
    assert np.all(step <= DESK.displacement + 1e-6)


def test_objective_matches_recomputed_bound(joint_run):
    tracks, trace = joint_run
    assert trace.final.rate == pytest.approx(p2_objective(trace.final.positions, tracks.users, DESK),
                                             abs=1e-6)


def test_fixed_point_start_stops_after_one_round(joint_run):
    tracks, trace = joint_run
    again = run_sca(tracks, DESK, "joint", trace.final.positions)
    assert len(again.solutions) == 1
    assert again.rates[1] - again.rates[0] <= 1e-3


def test_joint_dominates_static_when_warm_started():
    tracks = generate_user_tracks(DESK)
    static = run_sca(tracks, DESK, "static", centroid_placement(tracks, DESK))
    warm = np.broadcast_to(static.final.positions, (DESK.num_episodes, DESK.num_uavs, 2))
    joint = run_sca(tracks, DESK, "joint", warm)
    assert static.final.rate <= joint.final.rate + 1e-6


def test_huge_budget_leaves_pure_user_average():
    cfg = DESK.replace(uav_speed_max=1e5, num_episodes=3)
    tracks = generate_user_tracks(cfg)
    start = np.broadcast_to(centroid_placement(tracks, cfg), (3, cfg.num_uavs, 2))
    trace = run_sca(tracks, cfg, "joint", start)
    sol = trace.final
    assert np.max(sol.beta) < 1e-8 * np.max(sol.lam)
    assert verify_weighted_average(sol, trace.final_spec)["passed"]


def test_joint_episode_limit():
    cfg = DESK.replace(num_episodes=21)
    tracks = generate_user_tracks(cfg)
    with pytest.raises(ConfigError):
        run_sca(tracks, cfg, "joint", random_placement(cfg))


def test_ground_deployment_on_top_of_a_user():
    cfg = ScenarioConfig(num_uavs=3, users_per_group=2, num_groups=1, num_episodes=1,
                         altitude=0.0, arena=(0.0, 100.0, 0.0, 100.0))
    users = np.array([[[10.0, 10.0], [80.0, 60.0]]])
    tracks = EpisodeTracks(users, None, 2)
    init = np.array([[10.0, 10.0], [50.0, 50.0], [80.0, 20.0]])
    trace = run_sca(tracks, cfg, "static", init)
    d = np.linalg.norm(trace.final.positions[0][:, None] - users[0][None], axis=-1)
    assert np.all(d > 0)
    assert np.all(np.diff(trace.rates) >= -1e-9)


def test_dump_is_json(tmp_path):
    cfg = DESK.replace(num_episodes=1)
    tracks = generate_user_tracks(cfg)
    records = []
    run_sca(tracks, cfg, "static", centroid_placement(tracks, cfg), dump=records)
    path = tmp_path / "dump.json"
    dump_subproblems(records, path)
    back = json.loads(path.read_text())
    assert len(back) == len(records)
    assert set(back[0]) == {"spec", "solution"}
