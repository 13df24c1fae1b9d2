"""Deterministic crafting tech-tree world.

Plans are executed at sub-goal granularity (mine/craft/smelt/hunt/eat). The
world enforces two rules that the planner-facing recipe view does not show:

* tool tiers: the view lists only the base (wooden) tool of each family, while
  the world requires the true tier (iron ore needs a stone pickaxe, ...);
* hunger: every application adds its step cost to a hunger counter, eating
  resets it, and exceeding the hunger limit kills the agent (it respawns with
  only its given tools).
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from types import MappingProxyType
from typing import Mapping

import yaml

from .errors import PlanError, RecipeError
from .grammar import VERBS, ActionStep, Plan, format_outcome

TOOL_MATERIALS = ("wooden", "stone", "iron", "diamond")
RECIPE_VERBS = ("mine", "craft", "smelt", "hunt")
DEFAULT_HUNGER_LIMIT = 120
HUNGER_WARNING_FRACTION = 0.8
EAT_COST = 1
DEFAULT_JITTER = 2

MISSING_TOOL = "missing_tool"
MISSING_INGREDIENT = "missing_ingredient"
MISSING_STATION = "missing_station"
HUNGER_DEATH = "hunger_death"
BUDGET_EXHAUSTED = "budget_exhausted"
FAILURE_REASONS = (MISSING_TOOL, MISSING_INGREDIENT, MISSING_STATION, HUNGER_DEATH, BUDGET_EXHAUSTED)


def tool_parts(name: str) -> tuple[int, str] | None:
    """``stone_pickaxe`` -> ``(1, "pickaxe")``; None for non-tools."""
    material, _, kind = name.partition("_")
    if material in TOOL_MATERIALS and kind:
        return TOOL_MATERIALS.index(material), kind
    return None


@dataclass(frozen=True)
class Item:
    name: str
    tier: int


@dataclass(frozen=True)
class Recipe:
    output: str
    quantity: int
    ingredients: Mapping[str, int]
    verb: str
    required_tool: str | None
    station: str | None
    steps_cost: int
    tier: int

    def applications(self, wanted: int) -> int:
        return math.ceil(wanted / self.quantity)


class RecipeTable:
    """Validated, acyclic recipe table (one recipe per output item)."""

    def __init__(self, recipes, food=(), visible_only=False):
        self.recipes: dict[str, Recipe] = {}
        for r in recipes:
            if r.output in self.recipes:
                raise RecipeError(f"duplicate recipe for {r.output}")
            self.recipes[r.output] = r
        self.food = frozenset(food)
        self.visible_only = visible_only
        self._validate()
        self.items = {name: Item(name, r.tier) for name, r in self.recipes.items()}

    def _validate(self):
        for r in self.recipes.values():
            if r.verb not in RECIPE_VERBS:
                raise RecipeError(f"{r.output}: unknown verb {r.verb!r}")
            if r.quantity < 1 or r.steps_cost < 1:
                raise RecipeError(f"{r.output}: quantity and steps_cost must be positive")
            if not 0 <= r.tier <= 8:
                raise RecipeError(f"{r.output}: tier must be in 0..8")
            for dep in [*r.ingredients, r.required_tool, r.station]:
                if dep is not None and dep not in self.recipes:
                    raise RecipeError(f"{r.output}: unknown item {dep!r}")
            if any(c < 1 for c in r.ingredients.values()):
                raise RecipeError(f"{r.output}: ingredient counts must be positive")
        for f in self.food:
            if f not in self.recipes:
                raise RecipeError(f"unknown food item {f!r}")
        state: dict[str, int] = {}

        def visit(name, path):
            mark = state.get(name)
            if mark == 2:
                return
            if mark == 1:
                raise RecipeError(f"recipe cycle through {name}: {' -> '.join(path + [name])}")
            state[name] = 1
            for dep in self.dependencies(name):
                visit(dep, path + [name])
            state[name] = 2

        for name in sorted(self.recipes):
            visit(name, [])

    def __contains__(self, item):
        return item in self.recipes

    def recipe_for(self, item: str) -> Recipe | None:
        return self.recipes.get(item)

    def dependencies(self, item: str) -> list[str]:
        r = self.recipes[item]
        deps = list(r.ingredients)
        for extra in (r.required_tool, r.station):
            if extra is not None and extra not in deps:
                deps.append(extra)
        return deps

    def is_food(self, item: str) -> bool:
        return item in self.food

    def visible(self) -> "RecipeTable":
        """The planner-facing view: every tool requirement drops to its family's base tier."""
        lowered = []
        for r in self.recipes.values():
            tool = r.required_tool
            parts = tool_parts(tool) if tool else None
            if parts is not None:
                tool = f"{TOOL_MATERIALS[0]}_{parts[1]}"
            lowered.append(replace(r, required_tool=tool))
        return RecipeTable(lowered, self.food, visible_only=True)


def has_tool(inventory: Mapping[str, int], required: str) -> bool:
    if inventory.get(required, 0) > 0:
        return True
    parts = tool_parts(required)
    if parts is None:
        return False
    tier, kind = parts
    return any(
        count > 0 and (p := tool_parts(name)) is not None and p[1] == kind and p[0] >= tier
        for name, count in inventory.items()
    )


def _data_path(name: str):
    return resources.files("mindstores").joinpath("data", name)


def load_recipes(path: str | Path | None = None) -> RecipeTable:
    """Load and validate a recipe table (the packaged default when ``path`` is None)."""
    try:
        text = Path(path).read_text(encoding="utf-8") if path else _data_path("recipes.yaml").read_text(encoding="utf-8")
        doc = yaml.safe_load(text)
    except (OSError, yaml.YAMLError) as exc:
        raise RecipeError(f"could not read recipe file {path}: {exc}") from exc
    if not isinstance(doc, dict) or not isinstance(doc.get("recipes"), list):
        raise RecipeError("recipe file needs a top-level 'recipes' list")
    recipes = []
    for i, rec in enumerate(doc["recipes"]):
        try:
            recipes.append(Recipe(
                output=str(rec["output"]),
                quantity=int(rec.get("quantity", 1)),
                ingredients=MappingProxyType({str(k): int(v) for k, v in (rec.get("ingredients") or {}).items()}),
                verb=str(rec["verb"]),
                required_tool=rec.get("required_tool"),
                station=rec.get("station"),
                steps_cost=int(rec["steps_cost"]),
                tier=int(rec.get("tier", 0)),
            ))
        except (KeyError, TypeError, ValueError, AttributeError) as exc:
            raise RecipeError(f"recipe record {i}: {exc!r}") from exc
    return RecipeTable(recipes, doc.get("food") or ())


@dataclass(frozen=True)
class TaskSpec:
    name: str
    goal_item: str
    goal_count: int = 1
    tier: int = 1
    step_budget: int = 3000
    given_tools: tuple[str, ...] = ("wooden_axe",)
    suite: str = "benchmark"
    verb: str = "obtain"

    @property
    def text(self) -> str:
        return task_text(self.goal_item, self.goal_count, self.verb)

    @property
    def tier_label(self) -> str:
        return f"MT{self.tier}"


def task_text(item: str, count: int, verb: str | None = None) -> str:
    return f"{verb or 'obtain'} {item} x{count}"


def _parse_tier(label) -> int:
    s = str(label).upper()
    return int(s[2:]) if s.startswith("MT") else int(s)


def load_tasks(path: str | Path | None = None, table: RecipeTable | None = None) -> dict[str, TaskSpec]:
    try:
        text = Path(path).read_text(encoding="utf-8") if path else _data_path("tasks.yaml").read_text(encoding="utf-8")
        doc = yaml.safe_load(text)
    except (OSError, yaml.YAMLError) as exc:
        raise RecipeError(f"could not read task file {path}: {exc}") from exc
    table = table or load_recipes()
    budgets = {_parse_tier(k): int(v) for k, v in (doc.get("step_budgets") or {}).items()}
    given = tuple(doc.get("given_tools") or ())
    tasks = {}
    for rec in doc.get("tasks") or []:
        tier = _parse_tier(rec["tier"])
        task = TaskSpec(
            name=rec["name"], goal_item=rec["goal"], goal_count=int(rec.get("count", 1)), tier=tier,
            step_budget=int(rec.get("step_budget", budgets.get(tier, 3000))),
            given_tools=tuple(rec.get("given_tools", given)), suite=rec.get("suite", "benchmark"),
        )
        if task.goal_item not in table:
            raise RecipeError(f"task {task.name}: goal {task.goal_item!r} is not in the recipe table")
        task = replace(task, verb=table.recipes[task.goal_item].verb)
        if task.name in tasks:
            raise RecipeError(f"duplicate task name {task.name}")
        tasks[task.name] = task
    return tasks


@dataclass(frozen=True)
class WorldState:
    inventory: Mapping[str, int]
    hunger: int
    steps_used: int
    step_budget: int
    rng_seed: int
    goal_item: str
    goal_count: int
    given_tools: tuple[str, ...] = ()
    hunger_limit: int | None = DEFAULT_HUNGER_LIMIT
    placement: Mapping[str, int] = field(default_factory=lambda: MappingProxyType({}))

    @property
    def steps_remaining(self) -> int:
        return self.step_budget - self.steps_used

    def goal_met(self) -> bool:
        return self.inventory.get(self.goal_item, 0) >= self.goal_count


@dataclass(frozen=True)
class Outcome:
    success: bool
    summary: str
    failure_reason: str | None = None
    failure_text: str = ""
    failed_step: ActionStep | None = None
    step_index: int | None = None

    def __post_init__(self):
        if (self.failure_reason is None) != self.success:
            raise ValueError("failure_reason must be set exactly when success is false")
        if self.failure_reason is not None and self.failure_reason not in FAILURE_REASONS:
            raise ValueError(f"unknown failure reason {self.failure_reason!r}")

    def serialize(self) -> str:
        return format_outcome("success" if self.success else self.failure_text, self.success, self.summary)


def _inventory(d: Mapping[str, int]) -> MappingProxyType:
    return MappingProxyType({k: v for k, v in sorted(d.items()) if v > 0})


def describe_state(state: WorldState, table: RecipeTable) -> str:
    """One deterministic paragraph: inventory, hunger, budget, satisfiable actions."""
    inv = ", ".join(f"{k} x{v}" for k, v in sorted(state.inventory.items())) or "empty"
    parts = [f"Inventory: {inv}.", f"Hunger: {state.hunger} steps since last meal."]
    if state.hunger_limit and state.hunger >= HUNGER_WARNING_FRACTION * state.hunger_limit:
        parts.append("Warning: you are very hungry and should eat soon.")
    parts.append(f"Steps used: {state.steps_used} of {state.step_budget} ({state.steps_remaining} remaining).")
    parts.append(f"You can currently: {', '.join(affordances(state.inventory, table)) or 'nothing'}.")
    return " ".join(parts)


def affordances(inventory: Mapping[str, int], table: RecipeTable) -> list[str]:
    out = []
    for name in sorted(table.recipes):
        r = table.recipes[name]
        if r.station and inventory.get(r.station, 0) < 1:
            continue
        if r.required_tool and not has_tool(inventory, r.required_tool):
            continue
        if all(inventory.get(i, 0) >= c for i, c in r.ingredients.items()):
            out.append(f"{r.verb} {name}")
    out.extend(f"eat {name}" for name in sorted(inventory) if table.is_food(name) and inventory[name] > 0)
    return out


class World:
    """Executes plans against the true recipe rules.

    ``hunger_limit=None`` disables the hunger mechanic. ``jitter`` bounds the
    seeded extra travel steps charged per mine/hunt application (budget only,
    not hunger).
    """

    def __init__(self, table: RecipeTable | None = None, hunger_limit: int | None = DEFAULT_HUNGER_LIMIT,
                 jitter: int = DEFAULT_JITTER):
        self.table = table or load_recipes()
        self.visible_table = self.table.visible()
        self.hunger_limit = hunger_limit
        self.jitter = jitter

    def reset(self, task: TaskSpec, seed: int = 42) -> WorldState:
        if task.goal_item not in self.table:
            raise RecipeError(f"task goal {task.goal_item!r} is not in the recipe table")
        rng = random.Random(seed)
        placement = {
            name: rng.randint(0, self.jitter)
            for name in sorted(self.table.recipes)
            if self.table.recipes[name].verb in ("mine", "hunt")
        }
        inv: dict[str, int] = {}
        for tool in task.given_tools:
            inv[tool] = inv.get(tool, 0) + 1
        return WorldState(
            inventory=_inventory(inv), hunger=0, steps_used=0, step_budget=task.step_budget, rng_seed=seed,
            goal_item=task.goal_item, goal_count=task.goal_count, given_tools=tuple(task.given_tools),
            hunger_limit=self.hunger_limit, placement=MappingProxyType(placement),
        )

    def describe(self, state: WorldState) -> str:
        return describe_state(state, self.visible_table)

    def validate_plan(self, plan: Plan) -> None:
        for i, step in enumerate(plan.steps, start=1):
            if step.verb not in VERBS:
                raise PlanError(f"step {i}: unknown verb {step.verb!r}")
            if step.item not in self.table:
                raise PlanError(f"step {i}: unknown item {step.item!r}")
            if step.verb == "eat":
                if not self.table.is_food(step.item):
                    raise PlanError(f"step {i}: {step.item} is not edible")
            elif self.table.recipes[step.item].verb != step.verb:
                raise PlanError(f"step {i}: {step.item} is obtained with "
                                f"{self.table.recipes[step.item].verb!r}, not {step.verb!r}")

    def execute_plan(self, state: WorldState, plan: Plan) -> tuple[Outcome, WorldState]:
        """Apply the plan step by step, halting at the first failure."""
        self.validate_plan(plan)
        inv = dict(state.inventory)
        hunger, steps = state.hunger, state.steps_used
        limit = state.hunger_limit

        def fail(i, step, reason, text, detail):
            nonlocal inv, hunger
            if reason == HUNGER_DEATH:
                inv = {t: 1 for t in state.given_tools}
                hunger = 0
            summary = f"step {i} ({step.render()}) failed: {detail}"
            out = Outcome(False, summary, reason, text, step, i)
            return out, replace(state, inventory=_inventory(inv), hunger=hunger, steps_used=steps)

        for i, step in enumerate(plan.steps, start=1):
            if step.verb == "eat":
                for _ in range(step.quantity):
                    if inv.get(step.item, 0) < 1:
                        return fail(i, step, MISSING_INGREDIENT, f"failed: requires {step.item}",
                                    f"no {step.item} to eat")
                    if steps + EAT_COST > state.step_budget:
                        return fail(i, step, BUDGET_EXHAUSTED, "failed: budget",
                                    f"step budget {state.step_budget} exhausted")
                    inv[step.item] -= 1
                    steps += EAT_COST
                    hunger = 0
                continue
            r = self.table.recipes[step.item]
            for _ in range(r.applications(step.quantity)):
                if r.station and inv.get(r.station, 0) < 1:
                    return fail(i, step, MISSING_STATION, f"failed: requires {r.station}",
                                f"{step.verb} {step.item} needs a {r.station}")
                if r.required_tool and not has_tool(inv, r.required_tool):
                    return fail(i, step, MISSING_TOOL, f"failed: requires {r.required_tool}",
                                f"{step.verb} {step.item} needs a {r.required_tool} or better")
                for ing, c in r.ingredients.items():
                    if inv.get(ing, 0) < c:
                        return fail(i, step, MISSING_INGREDIENT, f"failed: requires {ing}",
                                    f"{step.verb} {step.item} needs {c} {ing}, has {inv.get(ing, 0)}")
                cost = r.steps_cost + state.placement.get(step.item, 0)
                if steps + cost > state.step_budget:
                    return fail(i, step, BUDGET_EXHAUSTED, "failed: budget",
                                f"step budget {state.step_budget} exhausted")
                steps += cost
                hunger += r.steps_cost
                if limit is not None and hunger > limit:
                    return fail(i, step, HUNGER_DEATH, "failed: hunger",
                                f"starved, hunger {hunger} exceeded limit {limit} without food")
                for ing, c in r.ingredients.items():
                    inv[ing] -= c
                inv[step.item] = inv.get(step.item, 0) + r.quantity

        final = replace(state, inventory=_inventory(inv), hunger=hunger, steps_used=steps)
        have = inv.get(state.goal_item, 0)
        if have >= state.goal_count:
            summary = (f"obtained {state.goal_item} x{have} after {len(plan.steps)} plan steps "
                       f"using {steps - state.steps_used} steps")
            return Outcome(True, summary), final
        summary = f"plan ended without {state.goal_item} x{state.goal_count} (have {have})"
        return Outcome(False, summary, MISSING_INGREDIENT, f"failed: requires {state.goal_item}"), final


def load_ladders(path: str | Path | None = None, tasks: Mapping[str, TaskSpec] | None = None) -> dict[str, list[str]]:
    """Named task sequences from the task file, checked against the task names."""
    try:
        text = Path(path).read_text(encoding="utf-8") if path else _data_path("tasks.yaml").read_text(encoding="utf-8")
        doc = yaml.safe_load(text)
    except (OSError, yaml.YAMLError) as exc:
        raise RecipeError(f"could not read task file {path}: {exc}") from exc
    ladders = {name: list(seq) for name, seq in (doc.get("ladders") or {}).items()}
    if tasks is not None:
        for name, seq in ladders.items():
            unknown = [t for t in seq if t not in tasks]
            if unknown:
                raise RecipeError(f"ladder {name} names unknown tasks {unknown}")
    return ladders
