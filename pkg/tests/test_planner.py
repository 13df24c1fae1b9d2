import pytest
from hypothesis import given, settings, strategies as st

from mindstores.errors import PlanningError
from mindstores.grammar import ActionStep, Plan
from mindstores.planner import (DYNAMICS, FAILURE_MODE, STRATEGY, Insight, OutcomePrediction,
                                ScriptedPlanner, analyze_outcomes, expand_goal, parse_state_text,
                                plan_cost, predict_outcome, schedule_food)
from mindstores.store import ExperienceStore, RetrievalResult, RetrievalWeights
from mindstores.world import TaskSpec

P = ScriptedPlanner()
W = RetrievalWeights()
NAIVE_IRON = ["mine wood x3", "craft planks x12", "craft stick x4", "craft crafting_table x1",
              "craft wooden_pickaxe x1", "mine iron_ore x1"]


def lines(plan):
    return plan.raw_text.splitlines()


def result(tid, score, success, outcome=None, task="mine iron_ore x1", plan="mine iron_ore x1"):
    store = ExperienceStore(8)
    text = outcome or ("success|true|ok" if success else "failed: requires stone_pickaxe|false|x")
    t = store.make_tuple("Inventory: empty. Hunger: 0 steps since last meal.", task, plan, text, success)
    return RetrievalResult(tid, score, {}, t.__class__(**{**t.__dict__, "id": tid}))


def test_parse_state_text(world, tasks):
    inv, hunger = parse_state_text(world.describe(world.reset(tasks["mine_iron"])))
    assert inv == {"wooden_axe": 1} and hunger == 0
    assert parse_state_text("Inventory: wood x3, planks x2. Hunger: 17 steps") == ({"wood": 3, "planks": 2}, 17)


def test_craft_planks_plan(world, tasks):
    task = tasks["craft_planks"]
    plan = P.generate_plan(world.describe(world.reset(task)), task, [], [], world.visible_table)
    assert lines(plan) == ["mine wood x1", "craft planks x4"]


def test_naive_iron_plan(world, tasks):
    task = tasks["mine_iron"]
    plan = P.generate_plan(world.describe(world.reset(task)), task, [], [], world.visible_table)
    assert lines(plan) == NAIVE_IRON


def test_iron_plan_with_lessons(world, tasks):
    task = tasks["mine_iron"]
    insights = [Insight("failed: requires stone_pickaxe when attempting mine iron_ore", FAILURE_MODE),
                Insight("failed: hunger when attempting mine iron_ore (hunger limit 120)", FAILURE_MODE)]
    got = lines(P.generate_plan(world.describe(world.reset(task)), task, [], insights, world.visible_table))
    assert got.index("craft stone_pickaxe x1") < got.index("mine iron_ore x1")
    assert got[-3:] == ["hunt beef x1", "eat beef x1", "mine iron_ore x1"]


def test_unknown_goal_raises(world):
    task = TaskSpec("x", "unobtainium")
    with pytest.raises(PlanningError):
        P.generate_plan("Inventory: empty.", task, [], [], world.visible_table)


def test_goal_already_held(world, tasks):
    with pytest.raises(PlanningError):
        P.generate_plan("Inventory: planks x9.", tasks["craft_planks"], [], [], world.visible_table)


def test_expansion_uses_inventory(world):
    steps = expand_goal("planks", 1, {"wood": 1}, world.visible_table)
    assert steps == [ActionStep("craft", "planks", 4)]
    steps = expand_goal("stone_pickaxe", 1, {"iron_pickaxe": 1}, world.visible_table)
    assert ActionStep("craft", "wooden_pickaxe", 1) not in steps


def test_schedule_food_keeps_stretches_under_limit(world):
    steps = [ActionStep("mine", "cobblestone", 20)]
    fed = schedule_food(steps, world.visible_table, 0, 120)
    acc = worst = 0
    for s in fed:
        for _ in range(s.quantity):
            if s.verb == "eat":
                acc = 0
            else:
                acc += world.visible_table.recipes[s.item].steps_cost
                worst = max(worst, acc)
    assert worst <= 120
    assert sum(s.quantity for s in fed if s.item == "cobblestone") == 20
    assert schedule_food([ActionStep("mine", "wood", 2)], world.visible_table, 0, 120) == [
        ActionStep("mine", "wood", 2)]


def test_analyze_experiences():
    assert P.analyze_experiences([]) == []
    one = P.analyze_experiences([result(1, 0.9, False)])
    assert len(one) == 1 and one[0].kind == FAILURE_MODE and "stone_pickaxe" in one[0].text
    two = P.analyze_experiences([result(1, 0.9, False), result(2, 0.8, False)])
    assert len(two) == 1 and two[0].source_tuple_ids == (1, 2)
    mixed = P.analyze_experiences([result(1, 0.9, True), result(2, 0.8, True, task="craft planks x4")],
                                  "mine iron_ore x1")
    assert [i.kind for i in mixed] == [STRATEGY, DYNAMICS]


def test_analyze_outcomes_weighted_vote():
    pred = analyze_outcomes([result(1, 0.9, False), result(2, 0.8, False), result(3, 0.5, True)],
                            threshold=0.5)
    assert not pred.predicted_success
    assert pred.confidence == pytest.approx(1.7 / 2.2, abs=1e-12)
    assert round(pred.confidence, 3) == 0.773
    assert pred.dominant_failure_text == "failed: requires stone_pickaxe"
    assert [s[0] for s in pred.supporting] == [1, 2, 3]


def test_analyze_outcomes_edges():
    assert analyze_outcomes([]) == OutcomePrediction(True, 0.0)
    assert analyze_outcomes([result(1, 0.1, False)], min_sim=0.25).confidence == 0.0
    solo = analyze_outcomes([result(1, 0.6, True)])
    assert solo.predicted_success and solo.confidence == 1.0


scores = st.lists(st.tuples(st.floats(0.26, 1.0), st.booleans()), min_size=1, max_size=8)


@settings(max_examples=200, deadline=None)
@given(scores, st.floats(0.05, 0.95))
def test_confidence_is_agreeing_mass(rows, threshold):
    pred = analyze_outcomes([result(i, s, ok) for i, (s, ok) in enumerate(rows, 1)], threshold=threshold)
    total = sum(s for s, _ in rows)
    agree = sum(s for s, ok in rows if ok == pred.predicted_success)
    assert pred.confidence == pytest.approx(agree / total, abs=1e-9)
    assert 0.0 <= pred.confidence <= 1.0


@settings(max_examples=100, deadline=None)
@given(scores)
def test_flip_at_default_threshold(rows):
    total = sum(s for s, _ in rows)
    share = sum(s for s, ok in rows if not ok) / total
    if abs(share - 0.5) < 1e-9:
        return
    a = analyze_outcomes([result(i, s, ok) for i, (s, ok) in enumerate(rows, 1)])
    b = analyze_outcomes([result(i, s, not ok) for i, (s, ok) in enumerate(rows, 1)])
    assert a.predicted_success != b.predicted_success


def test_predict_cold_start(small_store):
    pred = predict_outcome(small_store, "s", "t", Plan.parse("mine wood"), 5, W)
    assert pred.predicted_success and pred.confidence == 0.0
    with pytest.raises(ValueError):
        predict_outcome(small_store, "s", "t", Plan.parse("mine wood"), 0, W)


def test_revise_adds_stone_pickaxe(world, tasks):
    task = tasks["mine_iron"]
    state_text = world.describe(world.reset(task))
    naive = P.generate_plan(state_text, task, [], [], world.visible_table)
    pred = OutcomePrediction(False, 1.0, ((1, 0.9, False),), "failed: requires stone_pickaxe",
                             "failed: requires stone_pickaxe|false|step 6 (mine iron_ore x1) failed: ...")
    revised = P.revise_plan(naive, pred, world.visible_table, state_text=state_text, task=task)
    assert "craft stone_pickaxe x1" in lines(revised)
    assert set(revised.steps) - set(naive.steps)


def test_revise_hunger_inserts_food(world, tasks):
    task = tasks["mine_iron"]
    state_text = world.describe(world.reset(task))
    insights = [Insight("failed: requires stone_pickaxe when attempting mine iron_ore", FAILURE_MODE)]
    plan = P.generate_plan(state_text, task, [], insights, world.visible_table)
    pred = OutcomePrediction(False, 1.0, (), "failed: hunger")
    revised = P.revise_plan(plan, pred, world.visible_table, state_text=state_text, task=task, insights=insights)
    got = lines(revised)
    assert "hunt beef x1" in got and got.index("eat beef x1") == got.index("hunt beef x1") + 1
    # without a known limit the stop goes where it best splits the work
    before = plan_cost(Plan.parse("\n".join(got[:got.index("hunt beef x1")])).steps, world.visible_table)
    after = plan_cost(Plan.parse("\n".join(got[got.index("eat beef x1") + 1:])).steps, world.visible_table)
    assert abs(before - after) <= 60


def test_revise_fixed_point(world, tasks):
    task = tasks["craft_planks"]
    plan = Plan.parse("mine wood x1\ncraft planks x4")
    same = P.revise_plan(plan, OutcomePrediction(False, 1.0), world.visible_table, state_text="Inventory: empty.",
                         task=task)
    assert same is plan


def test_generate_is_pure(world, tasks):
    task = tasks["craft_iron_pickaxe"]
    state_text = world.describe(world.reset(task))
    ins = [Insight("failed: hunger when attempting mine iron_ore (hunger limit 120)", FAILURE_MODE)]
    a = P.generate_plan(state_text, task, [], ins, world.visible_table)
    b = P.generate_plan(state_text, task, [], list(ins), world.visible_table)
    assert a.raw_text == b.raw_text


def test_next_subtask(world, tasks):
    iron = tasks["mine_iron"]
    assert P.next_subtask("Inventory: empty.", iron, world.visible_table).text == "mine wood"
    planks = tasks["craft_planks"]
    assert P.next_subtask("Inventory: wood x1.", planks, world.visible_table).text == "craft planks"
    done = P.next_subtask("Inventory: iron_ore x1.", iron, world.visible_table)
    assert done.complete and done.task == iron


def test_success_plan_teaches_tool_and_food(world, tasks):
    task = tasks["mine_iron"]
    good = ("succeeded at mine iron_ore x1 from hunger 0 with plan: mine wood x3; craft planks x12; "
            "craft stick x4; craft crafting_table x1; craft wooden_pickaxe x1; mine cobblestone x3; "
            "craft stone_pickaxe x1; hunt beef x1; eat beef x1; mine iron_ore x1")
    plan = P.generate_plan(world.describe(world.reset(task)), task, [], [Insight(good, STRATEGY)],
                           world.visible_table)
    assert lines(plan) == good.split("plan: ")[1].split("; ")
