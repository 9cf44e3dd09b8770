import csv
import json
import warnings

import numpy as np
import pytest

from cnfp.agents import SacConfig
from cnfp.env import NavigationEnv
from cnfp.harness.cli import main
from cnfp.harness.compare import aggregate, compare, load_metrics, write_tables
from cnfp.harness.config import ExperimentConfig, dump_config, load_config
from cnfp.harness.density import export_density
from cnfp.harness.runner import METRICS_HEADER, evaluate, rollout, run_seed, summarize
from cnfp.regions import InvalidStateError


def tiny_config(variant="cnfp", episodes=3, **kw):
    sac = SacConfig(hidden=(16, 16), batch_size=32, warmup_steps=100)
    return ExperimentConfig(variant=variant, seeds=[0], episodes=episodes, max_steps=50, sac=sac, **kw)


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    metrics = run_seed(tiny_config(), 0, out)
    return out, metrics


def test_metrics_file_layout(trained):
    out, metrics = trained
    with open(out / "metrics.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == METRICS_HEADER
    assert len(rows) == 1 + 3
    assert [int(r[0]) for r in rows[1:]] == [0, 1, 2]
    assert (out / "checkpoint.npz").exists() and (out / "summary.json").exists()


def test_violation_columns_match_environment_counters(trained):
    out, metrics = trained
    data = load_metrics(out / "metrics.csv")
    total = [int(data["violations_obstacle"].sum()), int(data["violations_battery"].sum())]
    assert total == metrics.env_violations == [0, 0]


def test_same_seed_gives_identical_metrics(tmp_path, trained):
    out, _ = trained
    run_seed(tiny_config(), 0, tmp_path)
    assert (tmp_path / "metrics.csv").read_bytes() == (out / "metrics.csv").read_bytes()


def test_cnfp_checkpoint_evaluates_without_violations(trained):
    out, _ = trained
    summary = evaluate(out / "checkpoint.npz", 3, max_steps=50)
    assert summary["episodes"] == 3
    assert summary["violations_obstacle_mean"] == 0 and summary["violations_battery_mean"] == 0
    assert evaluate(out / "checkpoint.npz", 0) == {"episodes": 0}


class ScriptedEnv(NavigationEnv):
    """Resets to a fixed start and goal."""

    def __init__(self, start, goal, **kw):
        super().__init__(**kw)
        self.points = [np.array(start), np.array(goal)]

    def reset(self, seed=None):
        queue = iter(self.points)
        self.sample_free_point = lambda: next(queue)
        obs = super().reset(seed)
        del self.sample_free_point
        return obs


def test_greedy_controller_matches_path_length_oracle():
    env = ScriptedEnv((-4.0, -4.0), (4.0, -4.0), max_steps=8)

    def greedy(o):
        d = o[3:] - o[:2]
        return d / max(1.0, np.linalg.norm(d))

    results = rollout(greedy, env, 2, seed=0)
    # Unit steps along an unobstructed line of length 8: distances 7..1, then
    # the goal is reached on step 8 for the bonus.
    oracle = -sum(range(1, 8)) + 10.0
    for ret, vo, vb in results:
        assert ret == pytest.approx(oracle, rel=0.05)
        assert (vo, vb) == (0, 0)


def test_summary_statistics():
    s = summarize([(1.0, 0, 0), (3.0, 2, 0)])
    assert s["return_mean"] == 2.0
    assert s["return_std"] == pytest.approx(np.sqrt(2.0))
    assert s["violations_obstacle_mean"] == 1.0


def test_density_export_far_from_obstacles(trained, tmp_path):
    out, _ = trained
    doc = export_density(out / "checkpoint.npz", [3.0, 3.0, 100.0, 0.0, 4.0], 200, tmp_path / "d.json")
    assert json.loads((tmp_path / "d.json").read_text())["resolution"] == 200
    assert doc["bounds"] == [[-1.0, 1.0], [-1.0, 1.0]]
    assert doc["mass"] == pytest.approx(1.0, abs=0.02)
    density = np.array(doc["density"])
    assert density.min() >= 0.0
    assert set(doc["stages"]) == {"pre_flow", "after_battery", "after_obstacle"}
    final = np.array(doc["stages"]["after_obstacle"])
    assert np.all(np.abs(final) < 1.0)


def test_density_is_zero_outside_the_final_region(trained):
    out, _ = trained
    doc = export_density(out / "checkpoint.npz", [-1.3, 0.2, 40.0, 3.0, 0.0], 120)
    box = doc["regions"][-1]
    xs, ys = np.array(doc["x"]), np.array(doc["y"])
    gx, gy = np.meshgrid(xs, ys)
    outside = (gx <= box["low"][0]) | (gx >= box["high"][0]) | (gy <= box["low"][1]) | (gy >= box["high"][1])
    assert np.all(np.array(doc["density"])[outside] == 0.0)


def test_low_battery_support_shrinks_to_the_station_disc(trained):
    out, _ = trained
    doc = export_density(out / "checkpoint.npz", [4.0, 0.3, 21.0, -3.0, 3.0], 200)
    xs, ys = np.array(doc["x"]), np.array(doc["y"])
    rows, cols = np.nonzero(np.array(doc["density"]))
    assert xs[cols].max() - xs[cols].min() < 0.6 and ys[rows].max() - ys[rows].min() < 0.6
    assert xs[cols].min() > 0  # the whole support heads toward the station at (5, 0)
    assert doc["mass"] == pytest.approx(1.0, abs=0.02)


def test_density_rejects_invalid_states(trained):
    out, _ = trained
    with pytest.raises(InvalidStateError):
        export_density(out / "checkpoint.npz", [0.0, 0.0, 50.0, 1.0, 1.0], 10)
    with pytest.raises(InvalidStateError):
        export_density(out / "checkpoint.npz", [3.0, 3.0, 150.0, 1.0, 1.0], 10)


def _write_metrics(path, returns):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        fh.write(",".join(METRICS_HEADER) + "\n")
        for i, r in enumerate(returns):
            fh.write(f"{i},{r},0,{i % 2},0.000\n")
    return path


def test_compare_identical_runs_have_zero_std(tmp_path):
    paths = [_write_metrics(tmp_path / f"s{i}" / "metrics.csv", [1.0, 2.0, 3.0]) for i in range(2)]
    tables, _ = compare(paths)
    assert np.all(tables["runs"]["return_std"] == 0.0)


def test_compare_std_is_sample_std(tmp_path):
    runs = [[1.0, 5.0], [2.0, 6.0], [4.0, 10.0]]
    paths = [_write_metrics(tmp_path / f"s{i}" / "metrics.csv", r) for i, r in enumerate(runs)]
    tables, _ = compare(paths)
    np.testing.assert_allclose(tables["runs"]["return_std"], np.std(runs, axis=0, ddof=1))
    np.testing.assert_allclose(tables["runs"]["return_mean"], np.mean(runs, axis=0))


def test_compare_truncates_to_shortest_with_warning(tmp_path):
    a = _write_metrics(tmp_path / "a" / "metrics.csv", [1.0, 2.0, 3.0])
    b = _write_metrics(tmp_path / "b" / "metrics.csv", [1.0, 2.0])
    with pytest.warns(UserWarning, match="truncating"):
        tables, _ = compare([a, b])
    assert len(tables["runs"]["episode"]) == 2


def test_compare_reports_final_return_gap(tmp_path):
    paths = []
    for variant, base in (("cnfp", -90.0), ("unconstrained", -100.0)):
        for seed in range(2):
            d = tmp_path / variant / f"seed_{seed}"
            paths.append(_write_metrics(d / "metrics.csv", [base] * 20))
            (d / "summary.json").write_text(json.dumps({"variant": variant}))
    _, summary = compare(paths)
    assert summary["gap"]["absolute"] == pytest.approx(10.0)
    assert summary["gap"]["relative"] == pytest.approx(0.1)


def test_aggregate_and_table_writer(tmp_path):
    runs = [load_metrics(_write_metrics(tmp_path / f"{i}.csv", [float(i)] * 4)) for i in range(3)]
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        table = aggregate(runs)
    with open(tmp_path / "table.csv", "w") as fh:
        write_tables({"x": table}, fh)
    rows = list(csv.DictReader(open(tmp_path / "table.csv")))
    assert len(rows) == 4 and rows[0]["variant"] == "x" and float(rows[0]["return_mean"]) == 1.0


def test_config_yaml_round_trip(tmp_path):
    cfg = tiny_config("lagrangian", episodes=7)
    dump_config(cfg, tmp_path / "c.yaml")
    assert load_config(tmp_path / "c.yaml").to_dict() == cfg.to_dict()
    (tmp_path / "bad.yaml").write_text("variant: cnfp\nbogus: 1\n")
    with pytest.raises(ValueError):
        load_config(tmp_path / "bad.yaml")
    with pytest.raises(ValueError):
        ExperimentConfig(seeds=[])
    with pytest.raises(ValueError):
        ExperimentConfig(episodes=0)


def test_cli_end_to_end(tmp_path, capsys):
    cfg = tiny_config("penalty", episodes=2)
    dump_config(cfg, tmp_path / "c.yaml")
    out = tmp_path / "run"
    assert main(["train", "--config", str(tmp_path / "c.yaml"), "--seed", "0", "--out", str(out)]) == 0
    assert (out / "metrics.csv").exists()
    capsys.readouterr()
    assert main(["evaluate", "--checkpoint", str(out / "checkpoint.npz"), "--episodes", "1"]) == 0
    assert json.loads(capsys.readouterr().out)["episodes"] == 1
    assert main(["export-density", "--checkpoint", str(out / "checkpoint.npz"),
                 "--state", "3,3,100,0,4", "--resolution", "20", "--out", str(tmp_path / "d.json")]) == 0
    assert json.loads((tmp_path / "d.json").read_text())["resolution"] == 20
    assert main(["compare", str(out / "metrics.csv"), str(out / "metrics.csv"),
                 "--out", str(tmp_path / "t.csv")]) == 0
    assert (tmp_path / "t.csv").read_text().startswith("variant,episode")


def test_cli_failures_are_json_records(tmp_path, capsys):
    assert main(["evaluate", "--checkpoint", str(tmp_path / "missing.npz")]) != 0
    record = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert record["command"] == "evaluate" and record["error"]
    with pytest.raises(SystemExit) as exc:
        main(["export-density", "--checkpoint", "x", "--state", "1,2"])
    assert exc.value.code != 0
