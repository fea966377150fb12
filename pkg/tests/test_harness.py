import numpy as np
import pytest

from conftest import random_map
from vesselnav import harness, neural
from vesselnav.agents import DdpgAgent, DqnAgent
from vesselnav.harness import (METRICS_HEADER, TOY_HEADER, MetricsRow,
                               TrainConfig, ToyRow, agent_action_setup,
                               best_batch, build_agent, density_map, evaluate,
                               load_agent_from_checkpoint, ratd, rng_stream,
                               run_plan, toy_experiment, train, write_metrics_csv,
                               write_pgm, write_toy_csv)
from vesselnav.planner import build_apsp
from vesselnav.simenv import Outcome


def tiny_config(**overrides):
    cfg = dict(agent="a1", seed=1, batches=2, train_plans=2, test_plans=2,
               max_dist=0.004, n_obstacles=2, goal_radius=0.001, view_cells=7,
               step_cap=12, max_episodes=6, explore_horizon=50)
    cfg.update(overrides)
    return TrainConfig(**cfg)


@pytest.fixture(scope="module")
def water_map():
    return random_map(np.random.default_rng(40), 14, 14, p_land=0.1)


# -- streams and metrics -----------------------------------------------------

def test_rng_stream_reproducible_and_independent():
    a = rng_stream(7, "train.batch1").random(4)
    b = rng_stream(7, "train.batch1").random(4)
    c = rng_stream(7, "train.batch2").random(4)
    d = rng_stream(8, "train.batch1").random(4)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)
    assert not np.array_equal(a, d)


def test_ratd_values_and_errors():
    assert ratd(85, 100) == 85.0
    assert ratd(0, 7) == 0.0
    assert ratd(3, 4) == 75.0
    with pytest.raises(ValueError):
        ratd(1, 0)
    with pytest.raises(ValueError):
        ratd(5, 4)


def test_metrics_row_format(tmp_path):
    row = MetricsRow(3, 82.5, 140.25, {
        Outcome.HIT_LAND: 1, Outcome.HIT_OBSTACLE: 2,
        Outcome.ARRIVE_AT_TARGET: 90, Outcome.VANISH_TARGET: 3,
        Outcome.NORMAL_MOVEMENT: 4})
    assert row.csv_line() == "3,82.500000,140.250000,1,2,90,3,4"
    path = tmp_path / "metrics.csv"
    write_metrics_csv([row], path)
    lines = path.read_text().splitlines()
    assert lines[0] == METRICS_HEADER
    assert lines[1] == row.csv_line()
    assert METRICS_HEADER.split(",")[:3] == ["batch", "ratd", "mean_plan_steps"]


def test_agent_action_setup_table():
    assert agent_action_setup("a1") == ("discrete", 0.001, False)
    assert agent_action_setup("a2") == ("discrete", 0.001, True)
    assert agent_action_setup("b1") == ("discrete", 0.0005, False)
    assert agent_action_setup("b2") == ("discrete", 0.0005, True)
    assert agent_action_setup("c1") == ("continuous", 0.001, False)
    assert agent_action_setup("c2") == ("continuous", 0.001, True)


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(agent="z9")
    with pytest.raises(ValueError):
        TrainConfig(planner_mode="fancy")


def test_build_agent_kinds():
    cfg = tiny_config()
    dqn = build_agent("b2", cfg, np.random.default_rng(0))
    assert isinstance(dqn, DqnAgent)
    assert dqn.config.n_actions == 8
    assert dqn.config.sar is True
    ddpg = build_agent("c1", cfg, np.random.default_rng(0))
    assert isinstance(ddpg, DdpgAgent)
    assert ddpg.config.sar is False
    assert ddpg.config.max_velocity == 0.001


def test_best_batch_prefers_earliest_tie():
    rows = [MetricsRow(1, 50.0, 1.0, {}), MetricsRow(2, 75.0, 1.0, {}),
            MetricsRow(3, 75.0, 1.0, {}), MetricsRow(4, 60.0, 1.0, {})]
    assert best_batch(rows) == 2
    with pytest.raises(ValueError):
        best_batch([])


# -- density and images --------------------------------------------------------

def test_density_map_deterministic_and_on_water(water_map):
    apsp = build_apsp(water_map)
    a = density_map(water_map, apsp, n_pairs=6, max_dist=0.003, seed=5)
    b = density_map(water_map, apsp, n_pairs=6, max_dist=0.003, seed=5)
    assert np.array_equal(a, b)
    assert a.shape == (water_map.height, water_map.width)
    assert a.sum() > 0
    land = water_map.cells == 1
    assert a[land].sum() == 0


def test_write_pgm_normalizes_and_flips(tmp_path):
    counts = np.zeros((4, 3), dtype=np.int64)
    counts[3, 1] = 10            # northernmost row
    counts[0, 2] = 5             # southernmost row
    path = tmp_path / "density.pgm"
    write_pgm(counts, path)
    blob = path.read_bytes()
    header, pixels = blob.split(b"255\n", 1)
    assert header == b"P5\n3 4\n"
    img = np.frombuffer(pixels, dtype=np.uint8).reshape(4, 3)
    assert img[0, 1] == 255      # north ends up on top
    assert img[3, 2] == 128
    assert img.sum() == 255 + 128


def test_write_pgm_all_zero(tmp_path):
    path = tmp_path / "zero.pgm"
    write_pgm(np.zeros((2, 2), dtype=np.int64), path)
    assert path.read_bytes().endswith(b"\x00\x00\x00\x00")


# -- train / evaluate ------------------------------------------------------------

def test_train_returns_rows_and_writes_outputs(water_map, tmp_path):
    out = tmp_path / "run"
    result = train(tiny_config(out_dir=str(out)), geomap=water_map)
    assert [row.batch for row in result.rows] == [1, 2]
    assert result.best_batch in (1, 2)
    assert (out / "metrics.csv").exists()
    assert (out / "best.txt").read_text().strip() == str(result.best_batch)
    assert len(result.checkpoint_paths) == 2
    for path in result.checkpoint_paths:
        meta, nets = neural.load_checkpoint(path)
        assert meta["agent"] == "a1"
        assert "q" in nets


def test_train_metrics_are_byte_identical(water_map, tmp_path):
    out_a, out_b = tmp_path / "a", tmp_path / "b"
    train(tiny_config(out_dir=str(out_a)), geomap=water_map)
    train(tiny_config(out_dir=str(out_b)), geomap=water_map)
    assert (out_a / "metrics.csv").read_bytes() == (out_b / "metrics.csv").read_bytes()


def test_evaluate_from_checkpoint_and_in_memory(water_map, tmp_path):
    out = tmp_path / "run"
    result = train(tiny_config(out_dir=str(out)), geomap=water_map)
    ckpt = result.checkpoint_paths[result.best_batch - 1]

    kind, agent = load_agent_from_checkpoint(ckpt, tiny_config())
    assert kind == "a1"
    _, nets = neural.load_checkpoint(ckpt)
    digest, arrays = nets["q"]
    assert np.array_equal(agent.q.params[0], arrays[0])

    eval_out = tmp_path / "eval"
    row, outcomes = evaluate(ckpt, tiny_config(out_dir=str(eval_out)),
                             geomap=water_map)
    assert len(outcomes) == 2
    assert 0.0 <= row.ratd <= 100.0
    assert (eval_out / "eval_metrics.csv").exists()
    plans = (eval_out / "eval_plans.csv").read_text().splitlines()
    assert plans[0] == "plan,outcome,steps,success"
    assert len(plans) == 3

    row2, _ = evaluate(None, tiny_config(), geomap=water_map, agent=agent)
    assert row2.ratd == row.ratd


def test_evaluate_requires_source(water_map):
    with pytest.raises(ValueError):
        evaluate(None, tiny_config(map_path=None))


def test_run_plan_greedy_outcome(water_map):
    cfg = tiny_config()
    apsp = build_apsp(water_map)
    env = harness.build_env(water_map, apsp, cfg)
    agent = build_agent("a1", cfg, rng_stream(cfg.seed, "init"))
    po = run_plan(env, agent, rng_stream(cfg.seed, "probe"), train=False)
    assert po.steps >= 1
    assert isinstance(po.final, Outcome)
    assert po.success == (po.final == Outcome.ARRIVE_AT_TARGET and env.plan_succeeded)


# -- toy experiment ---------------------------------------------------------------

def test_toy_experiment_rows_and_determinism():
    rows = toy_experiment(epochs=1, train_eps=2, test_eps=2, seed=3)
    assert len(rows) == 6        # 1 epoch x 2 variants x 3 kinds
    kinds = [(r.epoch, r.variant, r.kind) for r in rows]
    assert kinds == [(1, "plain", "horizontal"), (1, "plain", "vertical"),
                     (1, "plain", "diagonal"), (1, "sar", "horizontal"),
                     (1, "sar", "vertical"), (1, "sar", "diagonal")]
    again = toy_experiment(epochs=1, train_eps=2, test_eps=2, seed=3)
    assert [(r.epoch, r.variant, r.kind, r.ratd) for r in rows] == \
           [(r.epoch, r.variant, r.kind, r.ratd) for r in again]


def test_toy_experiment_rejects_unknown_variant():
    with pytest.raises(ValueError):
        toy_experiment(epochs=1, train_eps=1, test_eps=1, variants=("fancy",))


def test_toy_csv_format(tmp_path):
    rows = [ToyRow(1, "plain", "horizontal", 50.0)]
    path = tmp_path / "toy_results.csv"
    write_toy_csv(rows, path)
    lines = path.read_text().splitlines()
    assert lines[0] == TOY_HEADER
    assert lines[1] == "1,plain,horizontal,50.000000"
