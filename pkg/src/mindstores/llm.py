"""LLM-backed planner over an OpenAI-compatible chat-completions endpoint.

The five prompt templates ship as resource files and are used verbatim;
only their ``${...}`` markers are filled in. State, retrieved experiences and
insights travel inside the ``state_json_str`` slot as JSON.
"""

from __future__ import annotations

import json
import logging
import os
import string
from functools import lru_cache
from importlib import resources
from typing import Sequence

import httpx

from .errors import PlanError, PlanningError, ServiceError
from .grammar import ActionStep, Plan, VERBS, parse_outcome, parse_step
from .planner import (DYNAMICS, FAILURE_MODE, STRATEGY, Insight, OutcomePrediction, Subtask,
                      failure_insight_text, parse_state_text, subtask_spec)
from .store import RetrievalResult
from .world import RecipeTable, TaskSpec

logger = logging.getLogger(__name__)

TOKEN_ENV = "MINDSTORES_LLM_TOKEN"

TEMPLATES = {
    "environment_description": ("state_json_str",),
    "situation_analysis": ("description", "state_json_str"),
    "strategy_planning": ("description", "explanation", "goal", "state_json_str"),
    "action_selection": ("plan", "state_json_str"),
    "outcome_evaluation": ("done", "executed_actions", "final_state", "gpt_plan", "initial_state", "reward"),
}

PLAN_GRAMMAR = (f"one step per line as 'verb item xN' with verb in {{{', '.join(VERBS)}}}; "
                "items use snake_case names from the recipe list")

# Not one of the shipped templates: a short sub-task query built from the
# strategist/planner framing.
NEXT_SUBTASK_PROMPT = string.Template(
    "You are an expert Minecraft planner. The current goal is: ${goal}\n\n"
    "Current state:\n${state_json_str}\n\n"
    "Reply with ONLY the single next immediate sub-task as one line 'verb item'."
)


@lru_cache(maxsize=None)
def template_text(name: str) -> str:
    if name not in TEMPLATES:
        raise KeyError(f"unknown template {name!r}")
    return resources.files("mindstores").joinpath("prompts", f"{name}.txt").read_text(encoding="utf-8")


def render(name: str, **values) -> str:
    """Fill a template; every marker must be supplied and nothing else."""
    expected = set(TEMPLATES[name])
    if set(values) != expected:
        raise KeyError(f"template {name} takes {sorted(expected)}, got {sorted(values)}")
    return string.Template(template_text(name)).substitute({k: str(v) for k, v in values.items()})


class ChatClient:
    def __init__(self, url: str, model: str = "gpt-4", token: str | None = None, timeout: float = 60.0,
                 client: httpx.Client | None = None):
        self.url = url
        self.model = model
        self.token = token if token is not None else os.environ.get(TOKEN_ENV)
        self._client = client or httpx.Client(timeout=timeout)

    def complete(self, prompt: str) -> str:
        headers = {"Authorization": f"Bearer {self.token}"} if self.token else {}
        payload = {"model": self.model, "temperature": 0,
                   "messages": [{"role": "user", "content": prompt}]}
        try:
            resp = self._client.post(self.url, json=payload, headers=headers)
            resp.raise_for_status()
            content = resp.json()["choices"][0]["message"]["content"]
        except (httpx.HTTPError, ValueError, KeyError, IndexError, TypeError) as exc:
            raise ServiceError(f"chat completion failed: {exc}") from exc
        if not isinstance(content, str):
            raise ServiceError("chat completion returned non-text content")
        return content

    def close(self):
        self._client.close()


def _neighbor_records(neighbors: Sequence[RetrievalResult]) -> list[dict]:
    out = []
    for r in neighbors:
        t = r.experience
        if t is None:
            continue
        out.append({"id": r.tuple_id, "score": round(r.score, 4), "state": t.state_text,
                    "task": t.task_text, "plan": t.plan_text, "outcome": t.outcome_text})
    return out


def _classify(line: str) -> str:
    low = line.lower()
    if "fail" in low or "avoid" in low or "requires" in low:
        return FAILURE_MODE
    if "succeed" in low or "success" in low or "worked" in low:
        return STRATEGY
    return DYNAMICS


class LLMPlanner:
    """Planner whose reasoning steps are chat completions."""

    kind = "llm"

    def __init__(self, client: ChatClient):
        self.client = client

    def _state_json(self, state_text: str, **extra) -> str:
        return json.dumps({"state": state_text, **extra}, indent=2, sort_keys=True)

    def analyze_experiences(self, neighbors: Sequence[RetrievalResult], task_text: str = "") -> list[Insight]:
        if not neighbors:
            return []
        records = _neighbor_records(neighbors)
        description = "\n".join(f"- task {r['task']}: {r['outcome']}" for r in records)
        prompt = render("situation_analysis", description=description,
                        state_json_str=json.dumps({"task": task_text, "past_experiences": records},
                                                  indent=2, sort_keys=True))
        try:
            reply = self.client.complete(prompt)
        except ServiceError as exc:
            logger.warning("experience analysis failed, continuing without insights: %s", exc)
            return []
        ids = tuple(r["id"] for r in records)
        lines = [ln.strip(" -*\t") for ln in reply.splitlines()]
        return [Insight(ln, _classify(ln), ids) for ln in lines if ln]

    def _plan_from(self, state_text: str, task: TaskSpec, insights: Sequence[Insight],
                   table: RecipeTable, extra_note: str = "") -> Plan:
        recipes = {name: {"verb": r.verb, "ingredients": dict(r.ingredients), "tool": r.required_tool,
                          "station": r.station} for name, r in sorted(table.recipes.items())}
        state_json = self._state_json(state_text, goal=task.text, recipes=recipes, plan_grammar=PLAN_GRAMMAR)
        description = self.client.complete(render("environment_description", state_json_str=state_json))
        explanation = "\n".join(f"- {i.text}" for i in insights)
        if extra_note:
            explanation += f"\n- {extra_note}"
        strategy = self.client.complete(render("strategy_planning", description=description,
                                               explanation=explanation or "No past experience.",
                                               goal=task.text, state_json_str=state_json))
        note = None
        for _ in range(2):
            extra = {"plan_grammar": PLAN_GRAMMAR}
            if note:
                extra["previous_reply_error"] = note
            reply = self.client.complete(render("action_selection", plan=strategy,
                                                state_json_str=self._state_json(state_text, **extra)))
            try:
                plan = Plan.parse(reply)
            except PlanError as exc:
                note = str(exc)
                continue
            if plan.steps:
                return plan.canonical()
            note = "the reply contained no executable steps"
        raise PlanningError(f"could not parse an action list from the model: {note}")

    def generate_plan(self, state_text: str, task: TaskSpec, neighbors: Sequence[RetrievalResult],
                      insights: Sequence[Insight], table: RecipeTable) -> Plan:
        return self._plan_from(state_text, task, insights, table)

    def revise_plan(self, plan: Plan, prediction: OutcomePrediction, table: RecipeTable, *,
                    state_text: str, task: TaskSpec, insights: Sequence[Insight] = ()) -> Plan:
        if not prediction.dominant_failure_text:
            return plan
        explanation = ""
        if prediction.dominant_outcome:
            try:
                explanation = parse_outcome(prediction.dominant_outcome)[2]
            except ValueError:
                pass
        note = ("A similar past plan was predicted to end with: "
                + failure_insight_text(prediction.dominant_failure_text, explanation))
        revised = self._plan_from(state_text, task, insights, table, extra_note=note)
        return plan if revised.steps == plan.steps else revised

    def next_subtask(self, state_text: str, goal: TaskSpec, table: RecipeTable) -> Subtask:
        inventory, _ = parse_state_text(state_text)
        if inventory.get(goal.goal_item, 0) >= goal.goal_count:
            return Subtask(goal.text, goal, complete=True)
        reply = self.client.complete(NEXT_SUBTASK_PROMPT.substitute(
            goal=goal.text, state_json_str=self._state_json(state_text, plan_grammar=PLAN_GRAMMAR)))
        step = None
        for line in reply.splitlines():
            try:
                step = parse_step(line)
            except PlanError:
                continue
            if step is not None:
                break
        if step is None or step.item not in table:
            raise PlanningError(f"model did not name a usable sub-task: {reply.strip()[:80]!r}")
        step = ActionStep(step.verb, step.item, max(step.quantity, 1))
        return Subtask(f"{step.verb} {step.item}", subtask_spec(goal, step, inventory))


def evaluate_outcome(client: ChatClient, *, initial_state, final_state, reward, done, gpt_plan,
                     executed_actions) -> tuple[str, bool, str]:
    """Ask the model for an ``outcome|success|explanation`` verdict and parse it."""
    prompt = render("outcome_evaluation", initial_state=json.dumps(initial_state, sort_keys=True),
                    final_state=json.dumps(final_state, sort_keys=True), reward=reward, done=done,
                    gpt_plan=gpt_plan, executed_actions=executed_actions)
    reply = client.complete(prompt).strip()
    line = next((ln for ln in reply.splitlines() if "|" in ln), reply)
    return parse_outcome(line)
