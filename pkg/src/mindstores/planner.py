"""Experience analysis, plan generation, outcome prediction and revision.

``ScriptedPlanner`` is the deterministic planner. It sees only the
planner-facing recipe view, so its first plan for a task is the naive
expansion of that view. Lessons come from failure outcomes of retrieved
experiences: ``failed: requires X`` (with the step it happened at) adds X as a
prerequisite of that step, and ``failed: hunger`` makes the planner schedule
hunt/eat stops so no stretch without food exceeds the limit reported by the
world.
"""

from __future__ import annotations

import logging
import re
from collections import defaultdict
from dataclasses import dataclass, replace
from typing import Iterable, Mapping, Sequence

from .errors import PlanError, PlanningError
from .grammar import ActionStep, Plan, parse_outcome, parse_step
from .store import ExperienceStore, RetrievalResult, RetrievalWeights
from .world import EAT_COST, RecipeTable, TaskSpec, has_tool, tool_parts

logger = logging.getLogger(__name__)

FAILURE_MODE = "failure_mode"
STRATEGY = "strategy"
DYNAMICS = "dynamics"
INSIGHT_KINDS = (FAILURE_MODE, STRATEGY, DYNAMICS)

DEFAULT_MIN_SIM = 0.25
DEFAULT_THRESHOLD = 0.5

_REQUIRES_RE = re.compile(r"failed: requires (?P<req>[a-z_]+)")
_ATTEMPT_RE = re.compile(r"when attempting (?P<verb>[a-z]+) (?P<item>[a-z_]+)")
_STEP_CTX_RE = re.compile(r"\((?P<verb>[a-z]+) (?P<item>[a-z_]+) x\d+\)")
_LIMIT_RE = re.compile(r"limit (?P<limit>\d+)")
_INV_RE = re.compile(r"Inventory: (?P<inv>[^.]*)\.")
_INV_ITEM_RE = re.compile(r"(?P<item>[a-z_]+) x(?P<count>\d+)")
_HUNGER_RE = re.compile(r"Hunger: (?P<hunger>\d+)")
_PLAN_RE = re.compile(r"with plan: (?P<plan>.+)$")
_FROM_HUNGER_RE = re.compile(r"from hunger (?P<hunger>\d+)")


@dataclass(frozen=True)
class Insight:
    text: str
    kind: str
    source_tuple_ids: tuple[int, ...] = ()

    def __post_init__(self):
        if self.kind not in INSIGHT_KINDS:
            raise ValueError(f"unknown insight kind {self.kind!r}")


@dataclass(frozen=True)
class OutcomePrediction:
    predicted_success: bool
    confidence: float
    supporting: tuple[tuple[int, float, bool], ...] = ()
    dominant_failure_text: str | None = None
    dominant_outcome: str | None = None


@dataclass(frozen=True)
class Subtask:
    text: str
    task: TaskSpec
    complete: bool = False


def parse_state_text(text: str) -> tuple[dict[str, int], int]:
    """Recover (inventory, hunger) from a state description."""
    inv: dict[str, int] = {}
    m = _INV_RE.search(text)
    if m:
        for item in _INV_ITEM_RE.finditer(m.group("inv")):
            inv[item.group("item")] = inv.get(item.group("item"), 0) + int(item.group("count"))
    h = _HUNGER_RE.search(text)
    return inv, int(h.group("hunger")) if h else 0


def failure_insight_text(failure_text: str, explanation: str = "") -> str:
    """Render a failure as an insight line the planner can act on."""
    text = failure_text
    ctx = _STEP_CTX_RE.search(explanation)
    if ctx:
        text += f" when attempting {ctx.group('verb')} {ctx.group('item')}"
    limit = _LIMIT_RE.search(explanation)
    if "hunger" in failure_text and limit:
        text += f" (hunger limit {limit.group('limit')})"
    return text


# -- lessons ------------------------------------------------------------


@dataclass
class Lessons:
    requirements: dict[str, list[str]]
    hunger: bool = False
    hunger_limit: int | None = None
    # longest food-free stretch seen in a plan that worked; a safe lower bound
    safe_stretch: int | None = None

    def food_limit(self) -> int | None:
        return self.hunger_limit if self.hunger_limit is not None else self.safe_stretch


def _adapt_success(steps: Sequence[ActionStep], hunger0: int, table: RecipeTable, lessons: Lessons) -> None:
    """Read the lessons a successful plan encodes.

    A step whose visible tool requirement is below the best tool of that
    family already made earlier in the plan is taken to need that tool, and a
    plan that ate along the way shows how long a stretch without food was
    survivable.
    """
    best: dict[str, tuple[int, str]] = {}
    acc, longest, ate = hunger0, 0, False
    for step in steps:
        if step.verb == "eat":
            ate = True
            longest, acc = max(longest, acc), 0
            continue
        r = table.recipe_for(step.item)
        if r is None:
            continue
        if r.required_tool and tool_parts(r.required_tool):
            tier, family = tool_parts(r.required_tool)
            have = best.get(family)
            if have and have[0] > tier and have[1] not in lessons.requirements[step.item]:
                lessons.requirements[step.item].append(have[1])
        acc += r.steps_cost * r.applications(step.quantity)
        parts = tool_parts(step.item)
        if parts and (parts[1] not in best or parts[0] > best[parts[1]][0]):
            best[parts[1]] = (parts[0], step.item)
    if ate:
        longest = max(longest, acc)
        lessons.hunger = True
        lessons.safe_stretch = longest if lessons.safe_stretch is None else min(lessons.safe_stretch, longest)


def lessons_from(insights: Iterable[Insight], goal_item: str, table: RecipeTable | None = None) -> Lessons:
    reqs: dict[str, list[str]] = defaultdict(list)
    lessons = Lessons(reqs)
    for ins in insights:
        m = _PLAN_RE.search(ins.text)
        if ins.kind == STRATEGY or (ins.kind == DYNAMICS and m):
            if table is None or not m:
                continue
            try:
                steps = [parse_step(part) for part in m.group("plan").split(";")]
            except PlanError:
                continue
            h = _FROM_HUNGER_RE.search(ins.text)
            _adapt_success([st for st in steps if st], int(h.group("hunger")) if h else 0, table, lessons)
            continue
        text = ins.text.lower()
        m = _REQUIRES_RE.search(text)
        if m:
            at = _ATTEMPT_RE.search(text)
            target = at.group("item") if at else goal_item
            req = m.group("req")
            if req != target and req not in reqs[target]:
                reqs[target].append(req)
        if "hunger" in text or "starv" in text:
            lessons.hunger = True
            limit = _LIMIT_RE.search(text)
            if limit:
                value = int(limit.group("limit"))
                lessons.hunger_limit = value if lessons.hunger_limit is None else min(lessons.hunger_limit, value)
    return lessons


# -- plan construction ----------------------------------------------------


def expand_goal(goal: str, count: int, inventory: Mapping[str, int], table: RecipeTable,
                extra: Mapping[str, Sequence[str]] | None = None) -> list[ActionStep]:
    """Aggregated bill-of-materials expansion of ``count`` x ``goal``.

    Steps come out in dependency post-order (ingredients, then tools, then
    stations, then learned prerequisites), each with its total quantity.
    """
    extra = extra or {}
    if goal not in table:
        raise PlanningError(f"no known way to obtain {goal}")

    def deps(item):
        if item not in table:
            return []
        out = table.dependencies(item)
        out += [e for e in extra.get(item, ()) if e not in out]
        return out

    order: list[str] = []
    state: dict[str, int] = {}

    def visit(item):
        state[item] = 1
        for d in deps(item):
            if state.get(d) is None:
                visit(d)
            # learned edges that would close a cycle are dropped
        state[item] = 2
        order.append(item)

    visit(goal)

    consumed: dict[str, int] = defaultdict(int)
    consumed[goal] = count
    presence: set[str] = set()
    produce: dict[str, int] = {}
    for item in reversed(order):
        need = consumed[item]
        if item in presence and need < 1 and not has_tool(inventory, item):
            need = 1
        deficit = need - inventory.get(item, 0)
        if deficit <= 0:
            continue
        r = table.recipe_for(item)
        if r is None:
            raise PlanningError(f"no known way to obtain {item}")
        apps = r.applications(deficit)
        produce[item] = apps * r.quantity
        for ing, c in r.ingredients.items():
            consumed[ing] += c * apps
        for p in [r.required_tool, r.station, *extra.get(item, ())]:
            if p is not None and state.get(p) == 2 and order.index(p) < order.index(item):
                presence.add(p)
    return [ActionStep(table.recipes[i].verb, i, produce[i]) for i in order if i in produce]


def _food_source(table: RecipeTable) -> str:
    candidates = [r for r in table.recipes.values() if r.verb == "hunt" and table.is_food(r.output)]
    if not candidates:
        raise PlanningError("no huntable food in the recipe table")
    return min(candidates, key=lambda r: (r.steps_cost, r.output)).output


def _applications(steps, table):
    """Yield (step, application cost, units) for every application in the plan."""
    for step in steps:
        if step.verb == "eat":
            yield step, None, step.quantity
            continue
        r = table.recipes[step.item]
        n = r.applications(step.quantity)
        for a in range(n):
            units = r.quantity if a < n - 1 else step.quantity - r.quantity * (n - 1)
            yield step, r.steps_cost, units


def _regroup(chunks):
    out: list[ActionStep] = []
    last_src = None
    for src, units in chunks:
        if src is not None and src is last_src and out:
            prev = out[-1]
            out[-1] = replace(prev, quantity=prev.quantity + units)
        else:
            out.append(ActionStep(src.verb, src.item, units) if src is not None else units)
        last_src = src
    return out


def schedule_food(steps: Sequence[ActionStep], table: RecipeTable, hunger0: int, limit: int) -> list[ActionStep]:
    """Insert hunt+eat stops so no stretch without food exceeds ``limit``.

    Food goes in only when the rest of the plan would otherwise leave no
    room for a later hunt, and always early enough that the hunt itself is
    survivable. Multi-application steps are split where needed.
    """
    food = _food_source(table)
    hunt_cost = table.recipes[food].steps_cost
    apps = list(_applications(steps, table))
    remaining = sum(c for _, c, _ in apps if c is not None)
    acc = hunger0
    chunks = []
    for step, cost, units in apps:
        if cost is None:
            chunks.append((step, units))
            acc = 0
            continue
        if acc + remaining + hunt_cost > limit and acc + cost + hunt_cost > limit:
            chunks.append((None, ActionStep("hunt", food, 1)))
            chunks.append((None, ActionStep("eat", food, 1)))
            acc = 0
        chunks.append((step, units))
        acc += cost
        remaining -= cost
    return _regroup(chunks)


def insert_food_at_longest_stretch(steps: Sequence[ActionStep], table: RecipeTable, hunger0: int = 0) -> list[ActionStep]:
    """One hunt+eat stop at the application boundary that best balances the two stretches."""
    food = _food_source(table)
    apps = list(_applications(steps, table))
    costs = [c or 0 for _, c, _ in apps]
    total = sum(costs)
    best, best_at, prefix = None, 0, hunger0
    for i in range(len(apps) + 1):
        worst = max(prefix, total - (prefix - hunger0))
        if best is None or worst < best:
            best, best_at = worst, i
        if i < len(apps):
            prefix += costs[i]
    chunks = [(s, u) for s, _, u in apps]
    chunks[best_at:best_at] = [(None, ActionStep("hunt", food, 1)), (None, ActionStep("eat", food, 1))]
    return _regroup(chunks)


def plan_cost(steps: Iterable[ActionStep], table: RecipeTable) -> int:
    return sum(EAT_COST if c is None else c for _, c, _ in _applications(steps, table))


# -- prediction -----------------------------------------------------------


def analyze_outcomes(similar_plans: Sequence[RetrievalResult], min_sim: float = DEFAULT_MIN_SIM,
                     threshold: float = DEFAULT_THRESHOLD) -> OutcomePrediction:
    """Score-weighted vote of retrieved outcomes.

    Neighbors under ``min_sim`` are dropped. With none left the prediction is
    an optimistic success with confidence 0. Otherwise failure is predicted
    when the failing share of the score mass exceeds ``threshold``.
    """
    kept = [r for r in similar_plans if r.score >= min_sim and r.score > 0]
    if not kept:
        return OutcomePrediction(True, 0.0)
    total = sum(r.score for r in kept)
    failed = [r for r in kept if not r.experience.success]
    fail_mass = sum(r.score for r in failed)
    predicted_success = fail_mass / total <= threshold
    agree = total - fail_mass if predicted_success else fail_mass
    supporting = tuple((r.tuple_id, r.score, r.experience.success) for r in kept)
    dominant = dominant_outcome = None
    if failed:
        top = min(failed, key=lambda r: (-r.score, r.tuple_id))
        dominant = top.experience.failure_text()
        dominant_outcome = top.experience.outcome_text
    return OutcomePrediction(predicted_success, agree / total, supporting, dominant, dominant_outcome)


def predict_outcome(store: ExperienceStore, state_text: str, task_text: str, plan: Plan, k: int,
                    weights: RetrievalWeights, min_sim: float = DEFAULT_MIN_SIM,
                    threshold: float = DEFAULT_THRESHOLD) -> OutcomePrediction:
    if k < 1:
        raise ValueError("k must be >= 1")
    similar = store.retrieve_by_state_task_plan(state_text, task_text, plan.raw_text, k, weights)
    return analyze_outcomes(similar, min_sim, threshold)


def prediction_insight(prediction: OutcomePrediction) -> Insight | None:
    """The predicted failure as a failure-mode insight, or None."""
    if not prediction.dominant_failure_text:
        return None
    explanation = ""
    if prediction.dominant_outcome:
        try:
            explanation = parse_outcome(prediction.dominant_outcome)[2]
        except ValueError:
            pass
    ids = tuple(i for i, _, ok in prediction.supporting if not ok)
    return Insight(failure_insight_text(prediction.dominant_failure_text, explanation), FAILURE_MODE, ids)


# -- planners ---------------------------------------------------------------


class ScriptedPlanner:
    """Deterministic rule-based planner; a pure function of its inputs."""

    kind = "scripted"

    def analyze_experiences(self, neighbors: Sequence[RetrievalResult], task_text: str = "") -> list[Insight]:
        """Failure modes (deduplicated), same-task strategies, and other-task dynamics.

        Successful neighbors for a different task become one ``dynamics``
        insight per distinct plan; they still show which tools and food stops
        worked.
        """
        failures: dict[str, tuple[str, list[int]]] = {}
        strategies = []
        dynamics: dict[str, list[int]] = {}
        for r in neighbors:
            t = r.experience
            outcome, success, explanation = parse_outcome(t.outcome_text)
            if not success:
                if outcome not in failures:
                    failures[outcome] = (failure_insight_text(outcome, explanation), [])
                failures[outcome][1].append(r.tuple_id)
                continue
            steps = "; ".join(line.strip() for line in t.plan_text.splitlines() if line.strip())
            _, hunger = parse_state_text(t.state_text)
            text = f"succeeded at {t.task_text} from hunger {hunger} with plan: {steps}"
            if task_text and t.task_text == task_text:
                strategies.append(Insight(text, STRATEGY, (r.tuple_id,)))
            else:
                dynamics.setdefault(text, []).append(r.tuple_id)
        out = [Insight(text, FAILURE_MODE, tuple(ids)) for text, ids in failures.values()]
        return out + strategies + [Insight(text, DYNAMICS, tuple(ids)) for text, ids in dynamics.items()]

    def generate_plan(self, state_text: str, task: TaskSpec, neighbors: Sequence[RetrievalResult],
                      insights: Sequence[Insight], table: RecipeTable) -> Plan:
        inventory, hunger = parse_state_text(state_text)
        lessons = lessons_from(insights, task.goal_item, table)
        steps = expand_goal(task.goal_item, task.goal_count, inventory, table, lessons.requirements)
        if not steps:
            raise PlanningError(f"{task.goal_item} x{task.goal_count} is already in the inventory")
        if lessons.hunger:
            if lessons.food_limit() is not None:
                steps = schedule_food(steps, table, hunger, lessons.food_limit())
            else:
                steps = insert_food_at_longest_stretch(steps, table, hunger)
        return Plan.from_steps(steps)

    def revise_plan(self, plan: Plan, prediction: OutcomePrediction, table: RecipeTable, *,
                    state_text: str, task: TaskSpec, insights: Sequence[Insight] = ()) -> Plan:
        """Regenerate with the predicted failure as an extra insight.

        Returns ``plan`` itself (a fixed point) when there is nothing to act
        on or the regenerated plan adds no new step.
        """
        extra = prediction_insight(prediction)
        if extra is None:
            return plan
        try:
            revised = self.generate_plan(state_text, task, (), [*insights, extra], table)
        except PlanningError:
            return plan
        if not set(revised.steps) - set(plan.steps):
            return plan
        return revised

    def next_subtask(self, state_text: str, goal: TaskSpec, table: RecipeTable) -> Subtask:
        """Earliest unmet prerequisite of ``goal`` given the inventory in ``state_text``."""
        inventory, _ = parse_state_text(state_text)
        if inventory.get(goal.goal_item, 0) >= goal.goal_count:
            return Subtask(goal.text, goal, complete=True)
        first = expand_goal(goal.goal_item, goal.goal_count, inventory, table)[0]
        return Subtask(f"{first.verb} {first.item}", subtask_spec(goal, first, inventory))


def subtask_spec(goal: TaskSpec, step: ActionStep, inventory: Mapping[str, int]) -> TaskSpec:
    return replace(goal, name=f"{goal.name}:{step.verb}_{step.item}", goal_item=step.item,
                   goal_count=inventory.get(step.item, 0) + step.quantity, verb=step.verb)


def is_tool(item: str) -> bool:
    return tool_parts(item) is not None
