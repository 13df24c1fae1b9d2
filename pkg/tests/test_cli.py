import csv

import pytest

from mindstores.cli import main
from mindstores.embedding import EmbedderConfig
from mindstores.store import ExperienceStore


def rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_run_craft_planks(tmp_path, capsys):
    assert main(["run", "--task", "craft_planks", "--trials", "5", "--out", str(tmp_path)]) == 0
    (row,) = rows(tmp_path / "run.csv")
    assert row["success_rate"] == "1.0000" and row["trials"] == "5"
    assert "craft_planks" in capsys.readouterr().out


def test_run_diamond_tier(tmp_path):
    assert main(["run", "--tier", "MT8", "--trials", "1", "--out", str(tmp_path)]) == 0
    (row,) = rows(tmp_path / "run.csv")
    assert row["task"] == "mine_diamond" and float(row["success_rate"]) == 0.0


@pytest.mark.parametrize("argv", [
    ["run", "--task", "no_such_task"],
    ["run"],
    ["run", "--tier", "MT99x"],
    ["run", "--task", "craft_planks", "--k", "0"],
    ["run", "--task", "craft_planks", "--planner", "llm"],
])
def test_usage_errors(argv, tmp_path, capsys):
    assert main(argv + ["--out", str(tmp_path)]) == 2
    assert "error" in capsys.readouterr().err


def test_argparse_errors_exit_2():
    with pytest.raises(SystemExit) as info:
        main(["nonsense"])
    assert info.value.code == 2


def test_sweep_k_rows(tmp_path):
    assert main(["sweep-k", "--task", "craft_planks", "--task", "mine_iron", "--trials", "1",
                 "--out", str(tmp_path)]) == 0
    got = rows(tmp_path / "sweep_k.csv")
    assert len(got) == 2 * 5
    assert sorted({r["k"] for r in got}, key=int) == ["1", "3", "5", "10", "20"]


def test_ablate_pairs(tmp_path):
    assert main(["ablate", "--task", "craft_planks", "--task", "mine_iron", "--trials", "2",
                 "--out", str(tmp_path)]) == 0
    got = rows(tmp_path / "ablate.csv")
    assert [(r["task"], r["variant"]) for r in got] == [
        ("craft_planks", "full"), ("craft_planks", "no-experience"), ("craft_planks", "single-shot"),
        ("mine_iron", "full"), ("mine_iron", "no-experience"), ("mine_iron", "single-shot")]
    planks = [r for r in got if r["task"] == "craft_planks"]
    assert planks[0]["success_rate"] == planks[1]["success_rate"] == "1.0000"
    assert {k: v for k, v in planks[0].items() if k != "variant"} == \
        {k: v for k, v in planks[1].items() if k != "variant"}
    iron = {r["variant"]: float(r["success_rate"]) for r in got if r["task"] == "mine_iron"}
    assert iron["full"] == 1.0 and iron["no-experience"] == 0.0


def test_continuous_and_replay(tmp_path, capsys):
    db = tmp_path / "db.jsonl"
    assert main(["continuous", "--trials", "1", "--out", str(tmp_path), "--db", str(db), "--embed-dim", "64"]) == 0
    timeline = rows(tmp_path / "continuous_timeline.csv")
    sizes = [int(r["db_size"]) for r in timeline]
    assert len(timeline) == 10 and all(a < b for a, b in zip(sizes, sizes[1:]))
    assert len(ExperienceStore.load(db, EmbedderConfig(dim=64))) == sizes[-1]
    capsys.readouterr()
    assert main(["replay", "--db", str(db), "--embed-dim", "64", "--query-task", "mine iron_ore x1",
                 "--k", "3"]) == 0
    out = capsys.readouterr().out
    assert f"{sizes[-1]} experiences; top 3" in out


def test_replay_missing_db_is_io_error(tmp_path):
    assert main(["replay", "--db", str(tmp_path / "nope.jsonl"), "--query-task", "x"]) == 3


def test_replay_dim_mismatch_is_io_error(tmp_path):
    db = tmp_path / "db.jsonl"
    assert main(["continuous", "--task", "craft_planks", "--trials", "1", "--out", str(tmp_path),
                 "--db", str(db), "--embed-dim", "64"]) == 0
    assert main(["replay", "--db", str(db), "--embed-dim", "32", "--query-task", "x"]) == 3


def test_config_file_and_flag_precedence(tmp_path):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("trials: 2\nk: 3\n")
    assert main(["run", "--config", str(cfg), "--task", "craft_planks", "--out", str(tmp_path)]) == 0
    assert rows(tmp_path / "run.csv")[0]["trials"] == "2"
    assert main(["run", "--config", str(cfg), "--task", "craft_planks", "--trials", "4",
                 "--out", str(tmp_path)]) == 0
    assert rows(tmp_path / "run.csv")[0]["trials"] == "4"
    cfg.write_text("bogus: 1\n")
    assert main(["run", "--config", str(cfg), "--task", "craft_planks", "--out", str(tmp_path)]) == 2


def test_reproducible_output(tmp_path):
    outs = []
    for i in range(2):
        d = tmp_path / str(i)
        assert main(["run", "--task", "mine_iron", "--task", "craft_furnace", "--trials", "3",
                     "--jobs", str(i + 1), "--out", str(d)]) == 0
        outs.append((d / "run.csv").read_bytes())
    assert outs[0] == outs[1]


def test_service_error_exit_code(tmp_path):
    assert main(["run", "--task", "craft_planks", "--trials", "1", "--out", str(tmp_path),
                 "--embed-url", "http://127.0.0.1:9/embed", "--embed-dim", "8"]) == 4
