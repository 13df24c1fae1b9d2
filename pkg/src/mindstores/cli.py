"""Command-line experiment runner.

Subcommands: ``run``, ``sweep-k``, ``ablate``, ``continuous`` and ``replay``.
Options may also come from a YAML file given with ``--config``; flags typed
on the command line win over the file, which wins over built-in defaults.

Exit codes: 0 ok, 2 usage or validation error, 3 I/O error, 4 LLM or
embedding service error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

import yaml

from . import __version__
from .agent import EpisodeConfig, MetricsReport, run_trials
from .embedding import EXTERNAL_SERVICE, Embedder, EmbedderConfig
from .errors import EmbeddingError, PlanningError, RecipeError, ServiceError, StoreError
from .planner import ScriptedPlanner
from .store import ExperienceStore, RetrievalWeights
from .world import World, load_ladders, load_recipes, load_tasks

logger = logging.getLogger("mindstores")

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_SERVICE = 0, 2, 3, 4
K_GRID = (1, 3, 5, 10, 20)
ABLATIONS = ("full", "no-experience", "single-shot")


class UsageError(Exception):
    pass


def _common(p: argparse.ArgumentParser, *, tasks: bool = True) -> None:
    p.add_argument("--config", type=Path, help="YAML file of option defaults")
    if tasks:
        p.add_argument("--task", action="append", default=[], help="task name (repeatable)")
        p.add_argument("--tier", action="append", default=[], help="task tier such as MT4 (repeatable)")
        p.add_argument("--trials", type=int, default=30)
        p.add_argument("--max-revisions", type=int, default=3)
        p.add_argument("--max-episodes", type=int, default=30, help="episode cap per trial")
        p.add_argument("--no-decompose", dest="decompose", action="store_false",
                       help="plan every goal directly instead of through sub-tasks")
        p.add_argument("--hunger-limit", type=int, default=120, help="0 disables hunger")
        p.add_argument("--planner", choices=("scripted", "llm"), default="scripted")
        p.add_argument("--llm-url", help="OpenAI-compatible chat completions URL")
        p.add_argument("--llm-model", default="gpt-4")
        p.add_argument("--jobs", type=int, default=1, help="parallel trials (non-continuous only)")
        p.add_argument("--out", type=Path, default=Path("results"), help="output directory")
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--lambda-state", type=float, default=0.4)
    p.add_argument("--lambda-task", type=float, default=0.4)
    p.add_argument("--lambda-plan", type=float, default=0.2)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--db", type=Path, help="experience store (JSONL)")
    p.add_argument("--embed-dim", type=int, default=768)
    p.add_argument("--embed-url", help="embedding service URL (switches to external-service mode)")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mindstores", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run trials of the selected tasks")
    _common(run)
    sweep = sub.add_parser("sweep-k", help="run the k grid 1,3,5,10,20")
    _common(sweep)
    ablate = sub.add_parser("ablate", help="full vs no-experience vs single-shot")
    _common(ablate)
    cont = sub.add_parser("continuous", help="shared-store task ladder")
    _common(cont)
    cont.add_argument("--ladder", default="continuous", help="named ladder when no task is selected")
    replay = sub.add_parser("replay", help="query a saved store")
    _common(replay, tasks=False)
    replay.add_argument("--state", default="", help="query state text")
    replay.add_argument("--query-task", required=True, help="query task text")
    replay.add_argument("--plan", help="query plan text; adds the plan field to the score")
    return parser


def parse_args(argv) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "config", None):
        try:
            overrides = yaml.safe_load(args.config.read_text(encoding="utf-8")) or {}
        except OSError as exc:
            raise StoreError(f"could not read config {args.config}: {exc}") from exc
        except yaml.YAMLError as exc:
            raise UsageError(f"config {args.config} is not valid YAML: {exc}") from exc
        if not isinstance(overrides, dict):
            raise UsageError(f"config {args.config} must hold a mapping")
        overrides = {k.replace("-", "_"): v for k, v in overrides.items()}
        unknown = sorted(set(overrides) - set(vars(args)))
        if unknown:
            raise UsageError(f"unknown config keys: {', '.join(unknown)}")
        # re-parse so that flags given on the command line still win
        sub = parser._subparsers._group_actions[0].choices[args.command]
        sub.set_defaults(**overrides)
        args = parser.parse_args(argv)
    return args


def _embedder(args) -> Embedder:
    if args.embed_url:
        return Embedder(EmbedderConfig(dim=args.embed_dim, mode=EXTERNAL_SERVICE, service_endpoint=args.embed_url))
    return Embedder(EmbedderConfig(dim=args.embed_dim))


def _select_tasks(args, tasks, ladders, default_ladder=None):
    chosen = []
    for name in args.task:
        if name not in tasks:
            raise UsageError(f"task not found: {name}")
        chosen.append(tasks[name])
    for label in args.tier:
        label = str(label).upper()
        if not label.startswith("MT") or not label[2:].isdigit():
            raise UsageError(f"bad tier {label!r}; expected MT1..MT8")
        hits = [t for t in tasks.values() if t.tier_label == label and t.suite == "benchmark"]
        if not hits:
            raise UsageError(f"no tasks in tier {label}")
        chosen.extend(hits)
    if not chosen and default_ladder:
        if default_ladder not in ladders:
            raise UsageError(f"unknown ladder {default_ladder!r}")
        chosen = [tasks[n] for n in ladders[default_ladder]]
    if not chosen:
        raise UsageError("select tasks with --task or --tier")
    return chosen


def _config(args) -> EpisodeConfig:
    try:
        weights = RetrievalWeights(args.lambda_state, args.lambda_task, args.lambda_plan)
        return EpisodeConfig(k=args.k, weights=weights, max_revisions=args.max_revisions, seed=args.seed,
                             planner_kind=args.planner, decompose=args.decompose,
                             max_episodes=args.max_episodes)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _planner_factory(args):
    if args.planner == "scripted":
        return ScriptedPlanner
    if not args.llm_url:
        raise UsageError("--planner llm needs --llm-url")
    from .llm import ChatClient, LLMPlanner

    return lambda: LLMPlanner(ChatClient(args.llm_url, model=args.llm_model))


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


class _Run:
    def __init__(self, args):
        self.args = args
        if args.trials < 1:
            raise UsageError("--trials must be >= 1")
        if args.jobs < 1:
            raise UsageError("--jobs must be >= 1")
        if args.embed_dim < 8:
            raise UsageError("--embed-dim must be >= 8")
        self.table = load_recipes()
        self.tasks = load_tasks(None, self.table)
        self.ladders = load_ladders(None, self.tasks)
        self.world = World(self.table, hunger_limit=args.hunger_limit or None)
        self.config = _config(args)
        self.planner_factory = _planner_factory(args)
        self.embedder = _embedder(args)
        self.seed_store = None
        if args.db is not None and args.db.exists():
            self.seed_store = ExperienceStore.load(args.db, embedder=self.embedder)

    def store_factory(self):
        if self.seed_store is not None:
            return self.seed_store.copy()
        return ExperienceStore(self.args.embed_dim, self.embedder)

    def trials(self, tasks, config, continuous=False) -> MetricsReport:
        return run_trials(tasks, self.args.trials, config, continuous, world=self.world,
                          planner_factory=self.planner_factory, store_factory=self.store_factory,
                          jobs=1 if continuous else self.args.jobs)


def cmd_run(args) -> int:
    r = _Run(args)
    tasks = _select_tasks(args, r.tasks, r.ladders)
    report = r.trials(tasks, r.config)
    _write(args.out / "run.csv", report.to_csv())
    print(report.to_table())
    return EXIT_OK


def cmd_sweep_k(args) -> int:
    r = _Run(args)
    tasks = _select_tasks(args, r.tasks, r.ladders)
    parts = []
    print(f"k grid {K_GRID}")
    for k in K_GRID:
        report = r.trials(tasks, replace(r.config, k=k))
        csv_text = report.to_csv({"k": str(k)})
        parts.append(csv_text if not parts else csv_text.split("\n", 1)[1])
        print(f"\nk={k}\n{report.to_table()}")
    _write(args.out / "sweep_k.csv", "".join(parts))
    return EXIT_OK


def cmd_ablate(args) -> int:
    r = _Run(args)
    tasks = _select_tasks(args, r.tasks, r.ladders)
    variants = {
        "full": r.config,
        "no-experience": replace(r.config, memory_enabled=False),
        "single-shot": replace(r.config, prediction_enabled=False),
    }
    reports = {name: r.trials(tasks, cfg) for name, cfg in variants.items()}
    lines = []
    for name in ABLATIONS:
        csv_text = reports[name].to_csv({"variant": name})
        lines.append(csv_text if not lines else csv_text.split("\n", 1)[1])
        print(f"\n{name}\n{reports[name].to_table()}")
    # paired rows: variants of one task are adjacent
    header, *rows = "".join(lines).splitlines()
    order = {t.name: i for i, t in enumerate(tasks)}
    rows.sort(key=lambda row: (order[row.split(",")[1]], ABLATIONS.index(row.split(",")[0])))
    _write(args.out / "ablate.csv", "\n".join([header, *rows]) + "\n")
    return EXIT_OK


def cmd_continuous(args) -> int:
    r = _Run(args)
    tasks = _select_tasks(args, r.tasks, r.ladders, default_ladder=args.ladder)
    shared = r.store_factory()
    if args.db is not None:
        shared.log_path = None
    report = run_trials(tasks, args.trials, r.config, True, world=r.world, planner_factory=r.planner_factory,
                        store=shared)
    _write(args.out / "continuous.csv", report.to_csv())
    lines = ["index,task,steps,cumulative_steps,db_size"]
    total = 0
    for i, (task, size) in enumerate(zip(tasks, report.db_size_timeline), start=1):
        total += report.steps_by_task[task.name]
        lines.append(f"{i},{task.name},{report.steps_by_task[task.name]},{total},{size}")
    _write(args.out / "continuous_timeline.csv", "\n".join(lines) + "\n")
    if args.db is not None:
        shared.save(args.db)
    print(report.to_table())
    print(f"\ncumulative steps {report.cumulative_steps}; db size timeline {report.db_size_timeline}")
    return EXIT_OK


def cmd_replay(args) -> int:
    if args.db is None:
        raise UsageError("replay needs --db")
    if args.k < 1:
        raise UsageError("--k must be >= 1")
    try:
        weights = RetrievalWeights(args.lambda_state, args.lambda_task, args.lambda_plan)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    store = ExperienceStore.load(args.db, embedder=_embedder(args))
    if args.plan is None:
        results = store.retrieve_by_state_task(args.state, args.query_task, args.k, weights)
    else:
        results = store.retrieve_by_state_task_plan(args.state, args.query_task, args.plan, args.k, weights)
    print(f"{len(store)} experiences; top {len(results)}")
    for rank, res in enumerate(results, start=1):
        sims = " ".join(f"{f}={v:.3f}" for f, v in res.per_field_sims.items())
        t = res.experience
        print(f"{rank:>3}. id={res.tuple_id} score={res.score:.4f} ({sims})")
        print(f"     task: {t.task_text}")
        print(f"     outcome: {t.outcome_text}")
    return EXIT_OK


COMMANDS = {"run": cmd_run, "sweep-k": cmd_sweep_k, "ablate": cmd_ablate, "continuous": cmd_continuous,
            "replay": cmd_replay}


def main(argv=None) -> int:
    try:
        args = parse_args(argv)
    except UsageError as exc:
        print(f"mindstores: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except StoreError as exc:
        print(f"mindstores: error: {exc}", file=sys.stderr)
        return EXIT_IO
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (UsageError, RecipeError, PlanningError) as exc:
        print(f"mindstores: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (StoreError, OSError) as exc:
        print(f"mindstores: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ServiceError, EmbeddingError) as exc:
        print(f"mindstores: service error: {exc}", file=sys.stderr)
        return EXIT_SERVICE


if __name__ == "__main__":
    sys.exit(main())
