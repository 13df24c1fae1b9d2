import pytest

from mindstores.agent import CSV_COLUMNS, EpisodeConfig, run_episode, run_trial, run_trials
from mindstores.errors import PlanningError
from mindstores.planner import ScriptedPlanner
from mindstores.store import ExperienceStore
from mindstores.world import World

P = ScriptedPlanner()


def test_craft_planks_first_try(world, tasks):
    store = ExperienceStore()
    rec = run_episode(store, world, P, tasks["craft_planks"], EpisodeConfig())
    assert rec.final_success and rec.revisions == 0 and len(rec.attempts) == 1
    assert len(store) == 1 and rec.recorded_tuple_id == 1


def test_iron_fails_then_learns_without_hunger(table, tasks):
    world = World(table, hunger_limit=None)
    store = ExperienceStore()
    first = run_episode(store, world, P, tasks["mine_iron"], EpisodeConfig())
    assert not first.final_success
    assert first.attempts[-1].outcome.failure_reason == "missing_tool"
    second = run_episode(store, world, P, tasks["mine_iron"], EpisodeConfig())
    assert second.final_success
    assert "craft stone_pickaxe x1" in second.final_plan.raw_text
    assert len(store) == 2


class Broken(ScriptedPlanner):
    def generate_plan(self, *a, **kw):
        raise PlanningError("no idea\nat all")


def test_planner_error_is_recorded(world, tasks):
    store = ExperienceStore()
    rec = run_episode(store, world, Broken(), tasks["craft_planks"], EpisodeConfig())
    assert not rec.final_success
    assert rec.outcome_text == "failed: planner_error|false|no idea at all"
    assert len(store) == 1 and not store.get(1).success


def test_ablation_identity(world, tasks):
    store = ExperienceStore()
    task = tasks["mine_iron"]
    for _ in range(3):
        run_episode(store, world, P, task, EpisodeConfig())
    cfg = EpisodeConfig(memory_enabled=False, prediction_enabled=False)
    rec = run_episode(store, world, P, task, cfg)
    zero = P.generate_plan(world.describe(world.reset(task)), task, [], [], world.visible_table)
    assert rec.final_plan.raw_text == zero.raw_text
    assert rec.predictions == 0


def test_config_defaults_and_validation():
    cfg = EpisodeConfig()
    assert (cfg.k, cfg.max_revisions, cfg.seed) == (5, 3, 42)
    assert (cfg.weights.lambda_state, cfg.weights.lambda_task, cfg.weights.lambda_plan) == (0.4, 0.4, 0.2)
    for bad in ({"k": 0}, {"max_revisions": 0}, {"planner_kind": "oracle"}, {"threshold": 2.0}):
        with pytest.raises(ValueError):
            EpisodeConfig(**bad)


def test_run_trial_persists_state(world, tasks):
    store = ExperienceStore()
    res = run_trial(store, world, P, tasks["mine_iron"], EpisodeConfig())
    assert res.success
    assert len(store) == len(res.episodes) == res.episodes_to_success
    assert res.steps == sum(e.steps_used for e in res.episodes)


def test_trials_success_rates(world, tasks):
    report = run_trials([tasks["craft_planks"]], 30, EpisodeConfig(), world=world)
    assert report.success_rate("craft_planks") == 1.0
    off = run_trials([tasks["mine_iron"]], 10, EpisodeConfig(memory_enabled=False, max_episodes=10), world=world)
    assert off.success_rate("mine_iron") == 0.0


def test_csv_is_deterministic_and_parallel_safe(world, tasks):
    chosen = [tasks["craft_furnace"], tasks["mine_iron"]]
    a = run_trials(chosen, 3, EpisodeConfig(), world=world).to_csv()
    b = run_trials(chosen, 3, EpisodeConfig(), world=world, jobs=3).to_csv()
    assert a == b
    assert a.splitlines()[0].split(",") == list(CSV_COLUMNS)


def test_continuous_timeline(world, tasks):
    chosen = [tasks[n] for n in ("craft_planks", "craft_furnace", "mine_iron")]
    report = run_trials(chosen, 1, EpisodeConfig(), continuous=True, world=world)
    tl = report.db_size_timeline
    assert all(a < b for a, b in zip(tl, tl[1:]))
    assert report.rows[-1].db_size_final == tl[-1]
    assert "mine_iron" in report.to_table()
