"""The retrieve / analyze / plan / predict-revise / execute / record cycle.

``run_episode`` performs one cycle and stores exactly one experience.
``run_trial`` drives a task to completion from a persistent world state,
optionally through sub-tasks, and ``run_trials`` repeats that across seeds
and collects a ``MetricsReport``.
"""

from __future__ import annotations

import csv
import io
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

from .errors import PlanError, PlanningError
from .grammar import Plan, format_outcome
from .planner import (DEFAULT_MIN_SIM, DEFAULT_THRESHOLD, OutcomePrediction, ScriptedPlanner,
                      predict_outcome, prediction_insight)
from .store import ExperienceStore, RetrievalWeights
from .world import Outcome, TaskSpec, World, WorldState

logger = logging.getLogger(__name__)

PLANNER_KINDS = ("scripted", "llm")
DECOMPOSE_MIN_TIER = 3
PLANNER_ERROR = "failed: planner_error"


@dataclass(frozen=True)
class EpisodeConfig:
    k: int = 5
    weights: RetrievalWeights = field(default_factory=RetrievalWeights)
    max_revisions: int = 3
    seed: int = 42
    memory_enabled: bool = True
    prediction_enabled: bool = True
    planner_kind: str = "scripted"
    min_sim: float = DEFAULT_MIN_SIM
    threshold: float = DEFAULT_THRESHOLD
    decompose: bool = True
    max_episodes: int = 30

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.max_revisions < 1:
            raise ValueError("max_revisions must be >= 1")
        if self.max_episodes < 1:
            raise ValueError("max_episodes must be >= 1")
        if self.planner_kind not in PLANNER_KINDS:
            raise ValueError(f"planner_kind must be one of {PLANNER_KINDS}")
        if not 0.0 <= self.threshold <= 1.0:
            raise ValueError("threshold must lie in [0, 1]")


@dataclass(frozen=True)
class Attempt:
    plan: Plan
    prediction: OutcomePrediction | None
    outcome: Outcome | None = None


@dataclass
class EpisodeRecord:
    task: TaskSpec
    attempts: list[Attempt]
    final_success: bool
    steps_used: int
    revisions: int
    recorded_tuple_id: int
    outcome_text: str = ""
    predictions: int = 0
    final_state: WorldState | None = None

    @property
    def final_plan(self) -> Plan | None:
        return self.attempts[-1].plan if self.attempts else None


def run_episode(store: ExperienceStore, world: World, planner, task: TaskSpec, config: EpisodeConfig,
                state: WorldState | None = None) -> EpisodeRecord:
    """One full cycle; records exactly one tuple whatever happens.

    ``state`` defaults to a fresh ``world.reset(task, config.seed)``. Its goal is
    overridden by ``task`` for the duration of the episode.
    """
    if state is None:
        state = world.reset(task, config.seed)
    state = replace(state, goal_item=task.goal_item, goal_count=task.goal_count)
    state_text = world.describe(state)
    table = world.visible_table
    empty = ExperienceStore(store.dim, store.embedder)

    attempts: list[Attempt] = []
    revisions = predictions = 0
    try:
        neighbors = []
        if config.memory_enabled:
            neighbors = store.retrieve_by_state_task(state_text, task.text, config.k, config.weights)
        insights = list(planner.analyze_experiences(neighbors, task.text))
        plan = planner.generate_plan(state_text, task, neighbors, insights, table)
        prediction = None
        if config.prediction_enabled:
            memory = store if config.memory_enabled else empty
            prediction = predict_outcome(memory, state_text, task.text, plan, config.k, config.weights,
                                         config.min_sim, config.threshold)
            predictions += 1
            while not prediction.predicted_success and revisions < config.max_revisions:
                revised = planner.revise_plan(plan, prediction, table, state_text=state_text, task=task,
                                              insights=insights)
                if revised is plan or revised.steps == plan.steps:
                    logger.debug("revision reached a fixed point for %s", task.text)
                    break
                attempts.append(Attempt(plan, prediction))
                extra = prediction_insight(prediction)
                if extra is not None:
                    insights.append(extra)
                plan = revised
                revisions += 1
                prediction = predict_outcome(memory, state_text, task.text, plan, config.k, config.weights,
                                             config.min_sim, config.threshold)
                predictions += 1
    except (PlanningError, PlanError) as exc:
        logger.info("planner error on %s: %s", task.text, exc)
        outcome_text = format_outcome(PLANNER_ERROR, False, " ".join(str(exc).split()))
        plan_text = attempts[-1].plan.raw_text if attempts else f"(no plan for {task.text})"
        tid = store.record(state_text, task.text, plan_text, outcome_text, False)
        return EpisodeRecord(task, attempts, False, 0, revisions, tid, outcome_text, predictions, state)

    outcome, final = world.execute_plan(state, plan)
    attempts.append(Attempt(plan, prediction, outcome))
    outcome_text = outcome.serialize()
    tid = store.record(state_text, task.text, plan.raw_text, outcome_text, outcome.success)
    return EpisodeRecord(task, attempts, outcome.success, final.steps_used - state.steps_used, revisions,
                         tid, outcome_text, predictions, final)


@dataclass
class TrialResult:
    task: TaskSpec
    seed: int
    success: bool
    steps: int
    episodes: list[EpisodeRecord]
    episodes_to_success: int | None = None


def run_trial(store: ExperienceStore, world: World, planner, task: TaskSpec, config: EpisodeConfig,
              seed: int | None = None) -> TrialResult:
    """Episodes from one persistent world state until the goal is met.

    Stops early when the step budget runs out or after ``config.max_episodes``.
    Goals of tier MT3 and above go through ``next_subtask`` when
    ``config.decompose`` is set.
    """
    seed = config.seed if seed is None else seed
    state = world.reset(task, seed)
    episodes: list[EpisodeRecord] = []
    decompose = config.decompose and task.tier >= DECOMPOSE_MIN_TIER
    while len(episodes) < config.max_episodes and not state.goal_met() and state.steps_remaining > 0:
        episode_task = task
        if decompose:
            try:
                sub = planner.next_subtask(world.describe(state), task, world.visible_table)
                episode_task = sub.task
            except PlanningError as exc:
                logger.info("sub-task selection failed, planning the goal directly: %s", exc)
        rec = run_episode(store, world, planner, episode_task, config, state)
        episodes.append(rec)
        if rec.final_state is not None:
            state = replace(rec.final_state, goal_item=task.goal_item, goal_count=task.goal_count)
    success = state.goal_met()
    return TrialResult(task, seed, success, state.steps_used, episodes, len(episodes) if success else None)


@dataclass
class TaskMetrics:
    task: str
    tier: str
    trials: int
    successes: int
    mean_steps: float
    novel_learning_iterations: int | None
    db_size_final: int

    @property
    def success_rate(self) -> float:
        return self.successes / self.trials


CSV_COLUMNS = ("task", "tier", "trials", "successes", "success_rate", "mean_steps",
               "novel_learning_iterations", "db_size_final")


@dataclass
class MetricsReport:
    rows: list[TaskMetrics]
    cumulative_steps: int = 0
    db_size_timeline: list[int] = field(default_factory=list)
    steps_by_task: dict[str, int] = field(default_factory=dict)
    trials: dict[str, list[TrialResult]] = field(default_factory=dict, repr=False)

    def success_rate(self, task: str) -> float:
        for row in self.rows:
            if row.task == task:
                return row.success_rate
        raise KeyError(task)

    def to_csv(self, extra: dict[str, str] | None = None) -> str:
        extra = extra or {}
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow([*extra, *CSV_COLUMNS])
        for r in self.rows:
            nli = "" if r.novel_learning_iterations is None else r.novel_learning_iterations
            writer.writerow([*extra.values(), r.task, r.tier, r.trials, r.successes, f"{r.success_rate:.4f}",
                             f"{r.mean_steps:.2f}", nli, r.db_size_final])
        return buf.getvalue()

    def to_table(self) -> str:
        header = f"{'task':<28} {'tier':<5} {'trials':>6} {'succ':>5} {'rate':>6} {'steps':>9} {'nli':>4} {'db':>5}"
        lines = [header, "-" * len(header)]
        for r in self.rows:
            nli = "-" if r.novel_learning_iterations is None else str(r.novel_learning_iterations)
            lines.append(f"{r.task:<28} {r.tier:<5} {r.trials:>6} {r.successes:>5} {r.success_rate:>6.2f} "
                         f"{r.mean_steps:>9.1f} {nli:>4} {r.db_size_final:>5}")
        return "\n".join(lines)


def _metrics(task: TaskSpec, results: Sequence[TrialResult], db_size: int) -> TaskMetrics:
    nli, seen = None, 0
    for res in results:
        if res.success:
            nli = seen + res.episodes_to_success
            break
        seen += len(res.episodes)
    successes = sum(r.success for r in results)
    mean_steps = sum(r.steps for r in results) / len(results)
    return TaskMetrics(task.name, task.tier_label, len(results), successes, mean_steps, nli, db_size)


def run_trials(tasks: Sequence[TaskSpec], trials: int, config: EpisodeConfig, continuous: bool = False, *,
               world: World | None = None, planner_factory: Callable[[], object] = ScriptedPlanner,
               store: ExperienceStore | None = None, store_factory: Callable[[], ExperienceStore] | None = None,
               jobs: int = 1) -> MetricsReport:
    """Run ``trials`` trials of every task.

    Continuous mode threads one store through all tasks in order (trials run
    sequentially). Otherwise every trial gets a fresh store, copied from
    ``store`` when one is given, and trials may run on ``jobs`` threads.
    Trial ``j`` uses world seed ``config.seed + j``.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    world = world or World()
    if store_factory is None:
        def store_factory():
            return store.copy() if store is not None else ExperienceStore()

    report = MetricsReport([])
    if continuous:
        shared = store if store is not None else store_factory()
        planner = planner_factory()
        for task in tasks:
            results = [run_trial(shared, world, planner, task, config, config.seed + j) for j in range(trials)]
            report.trials[task.name] = results
            report.rows.append(_metrics(task, results, len(shared)))
            report.db_size_timeline.append(len(shared))
        report.steps_by_task = {t.name: sum(r.steps for r in report.trials[t.name]) for t in tasks}
        report.cumulative_steps = sum(report.steps_by_task.values())
        return report

    def one(job):
        task, j = job
        s = store_factory()
        res = run_trial(s, world, planner_factory(), task, config, config.seed + j)
        return res, len(s)

    jobs_list = [(task, j) for task in tasks for j in range(trials)]
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            outputs = list(pool.map(one, jobs_list))
    else:
        outputs = [one(job) for job in jobs_list]
    by_task: dict[str, list[tuple[TrialResult, int]]] = {}
    for (task, _), out in zip(jobs_list, outputs):
        by_task.setdefault(task.name, []).append(out)
    for task in tasks:
        outs = by_task[task.name]
        results = [r for r, _ in outs]
        report.trials[task.name] = results
        report.rows.append(_metrics(task, results, outs[-1][1]))
    report.steps_by_task = {t.name: sum(r.steps for r in report.trials[t.name]) for t in tasks}
    report.cumulative_steps = sum(report.steps_by_task.values())
    return report
