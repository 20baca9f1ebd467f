import csv
import json

import numpy as np
import pytest

from skycomp import ConfigError, EpisodeTracks, NumericalError, ScenarioConfig
from skycomp import cli, experiments
from skycomp.experiments import ExperimentSpec, grouping_sweep, write_csv
from skycomp.planners import plan_static
from skycomp.sca import snr_coefficient

TINY = ScenarioConfig(num_uavs=4, users_per_group=2, num_groups=2, num_episodes=3,
                      arena=(0.0, 200.0, 0.0, 200.0), uav_speed_max=20.0, rng_seed=2)


@pytest.fixture
def tiny_config(tmp_path):
    path = tmp_path / "tiny.json"
    path.write_text(json.dumps(TINY.to_dict()))
    return path


def _read(path):
    lines = path.read_text().splitlines()
    assert lines[0].startswith("# skycomp ") and "config=" in lines[0] and "seed=" in lines[0]
    return list(csv.DictReader(lines[1:]))


def test_bounds_rows_and_sandwich(tmp_path):
    assert cli.main(["bounds", "--out", str(tmp_path), "--trials", "2000"]) == 0
    rows = _read(tmp_path / "bounds.csv")
    assert len(rows) == 6
    assert list(rows[0])[:6] == ["user_id", "lower", "upper", "mc_los", "mc_rayleigh", "se"]
    for r in rows:
        lo, hi, mc, se = (float(r[k]) for k in ("lower", "upper", "mc_los", "se"))
        assert lo - 3 * se - 0.05 <= mc <= hi + 3 * se + 0.05
        assert hi - lo <= np.log2(1.25)


def test_stats_rows(tmp_path):
    assert cli.main(["stats", "--out", str(tmp_path)]) == 0
    rows = {r["statistic"]: r for r in _read(tmp_path / "appendix_stats.csv")}
    assert float(rows["wishart_inverse_trace"]["theoretical"]) == 1.5
    for r in rows.values():
        assert float(r["rel_error"]) <= 0.02
        assert int(r["trials"]) == 10000


def test_convergence_trace(tmp_path, tiny_config):
    assert cli.main(["converge", "--config", str(tiny_config), "--out", str(tmp_path),
                     "--trials", "200"]) == 0
    rows = _read(tmp_path / "convergence.csv")
    bound = np.array([float(r["R_bound"]) for r in rows])
    mc = np.array([float(r["R_mc"]) for r in rows])
    se = np.array([float(r["se"]) for r in rows])
    assert rows[0]["iteration"] == "0"
    assert np.all(np.diff(bound) >= -1e-9)
    assert np.all(mc >= bound - 3 * se - 0.05)


def test_speed_sweep_structure(tmp_path, tiny_config):
    assert cli.main(["sweep-speed", "--config", str(tiny_config), "--out", str(tmp_path),
                     "--trials", "200", "--speeds", "0,10,20"]) == 0
    rows = _read(tmp_path / "speed_sweep.csv")
    rate = {(r["mode"], float(r["v_uav"])): float(r["min_rate_bound"]) for r in rows}
    assert len(rows) == 9
    assert rate["full", 0.0] == pytest.approx(rate["static", 0.0], abs=1e-4)
    assert rate["full", 0.0] <= rate["full", 10.0] + 1e-9 <= rate["full", 20.0] + 2e-9
    assert rate["static", 20.0] <= rate["full", 20.0] + 1e-6


def test_grouping_sweep_rows(tmp_path):
    cfg = TINY.replace(num_uavs=5, users_per_group=3, num_groups=2, num_episodes=2)
    rows = grouping_sweep(cfg, (1, 2, 3, 6))
    status = {L: (K, s) for L, K, s, _ in rows}
    assert status[1] == (6, "skipped")
    assert status[6] == (1, "ok")                 # one user per group
    assert all(np.isfinite(r) for _, _, s, r in rows if s == "ok")


def test_grouping_sweep_prelog_is_one_over_l():
    cfg = TINY.replace(num_uavs=3, users_per_group=1, num_groups=4, num_episodes=1)
    (L, K, status, rate), = grouping_sweep(cfg, (4,))
    tracks = experiments.generate_user_tracks(cfg)
    res = plan_static(tracks, cfg, experiments.centroid_placement(tracks, cfg))
    d2 = np.sum((res.uav_tracks[0][:, None] - tracks.users[0][None]) ** 2, -1) + cfg.altitude**2
    snr = cfg.tx_power * cfg.ref_gain * (3 - 1) / (3 * cfg.noise_power) * np.sum(1 / d2, axis=0)
    assert L == 4
    assert rate == pytest.approx(np.min(np.log2(1 + snr)) / 4, abs=1e-9)


def test_grouping_sweep_errors(tmp_path, tiny_config):
    with pytest.raises(ConfigError):
        grouping_sweep(TINY.replace(num_uavs=3), (1,))
    assert cli.main(["sweep-groups", "--config", str(tiny_config), "--out", str(tmp_path),
                     "--groups", "3"]) == 2


def test_snapshot_static_constant_and_budget(tmp_path, tiny_config):
    assert cli.main(["snapshot", "--config", str(tiny_config), "--out", str(tmp_path),
                     "--stride", "2"]) == 0
    rows = [r for r in _read(tmp_path / "trajectory_snapshot.csv") if r["kind"] == "uav"]
    episodes = sorted({int(r["episode"]) for r in rows})
    assert episodes == [1, 3]
    for mode in ("full", "current", "static"):
        xy = np.array([[float(r["x"]), float(r["y"])] for r in rows if r["mode"] == mode])
        xy = xy.reshape(len(episodes), TINY.num_uavs, 2)
        step = np.linalg.norm(np.diff(xy, axis=0), axis=-1)
        assert np.all(step <= TINY.displacement * 2 + 1e-6)
        if mode == "static":
            assert np.all(step == 0)


def test_isolated_user_gets_its_own_uav():
    cfg = ScenarioConfig(num_uavs=2, users_per_group=1, num_groups=3, num_episodes=1,
                         arena=(0.0, 400.0, 0.0, 400.0))
    users = np.array([[[40.0, 50.0], [60.0, 40.0], [350.0, 330.0]]])
    tracks = EpisodeTracks(users, None, 1)
    res = plan_static(tracks, cfg, np.array([[150.0, 150.0], [250.0, 250.0]]))
    nearest = np.min(np.linalg.norm(res.uav_tracks[0] - users[0, 2], axis=-1))
    assert nearest <= 10.0
    # brute force over both UAVs on a 10 m lattice
    g = np.arange(0.0, 401.0, 10.0)
    xy = np.stack(np.meshgrid(g, g, indexing="ij"), -1).reshape(-1, 2)
    inv = 1.0 / (np.sum((xy[:, None] - users[0][None]) ** 2, -1) + cfg.altitude**2)   # (G, 3)
    gam = snr_coefficient(cfg)
    best = 0.0
    for row in inv:
        best = max(best, np.max(np.min(np.log2(1 + gam * (row + inv)), axis=1)) / 3)
    assert res.bound_min_rate >= best - 1e-6


def test_exit_codes(tmp_path, tiny_config, monkeypatch):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"m": 4}))
    assert cli.main(["bounds", "--config", str(bad), "--out", str(tmp_path)]) == 2
    blocker = tmp_path / "file"
    blocker.write_text("")
    assert cli.main(["stats", "--out", str(blocker / "sub"), "--trials", "100"]) == 4

    def boom(spec):
        raise NumericalError("forced")
    monkeypatch.setattr(cli, "run_experiment", boom)
    assert cli.main(["stats", "--out", str(tmp_path)]) == 3


def test_spec_validation():
    with pytest.raises(ConfigError):
        ExperimentSpec("movies", TINY)
    with pytest.raises(ConfigError):
        ExperimentSpec("speed_sweep", TINY, modes=("hover",))
    with pytest.raises(ConfigError):
        ExperimentSpec("trajectory_snapshot", TINY, stride=0)


def test_csv_format(tmp_path):
    path = write_csv(tmp_path / "x.csv", ("a", "b", "c"), [(1, 0.1234567891234, True)], "prov")
    assert path.read_text() == "# prov\na,b,c\n1,0.123456789,true\n"


def test_dump_flag_writes_json(tmp_path, tiny_config):
    assert cli.main(["sweep-groups", "--config", str(tiny_config), "--out", str(tmp_path),
                     "--groups", "2", "--dump-subproblems"]) == 0
    records = json.loads((tmp_path / "grouping_sweep_subproblems.json").read_text())
    assert records and "kkt" in records[0]["solution"]
