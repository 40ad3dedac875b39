"""Command-line surface: artifacts, manifests, exit codes, reproducibility."""

import json
import os

import numpy as np
import pytest

from treemem import cli
from treemem.reports import read_csv, read_json


def run(*argv):
    return cli.main(list(argv))


GEN_ARGS = ("gen", "--synth", "regime", "--seed", "11", "--blocks", "8",
            "--block-size", "3", "--points", "12")
TRAIN_ARGS = ("--memory", "tree", "--capacity", "4", "--embed-dim", "4",
              "--read-depth", "2", "--epochs", "2", "--t-obs", "4",
              "--t-pred", "8", "--learning-rate", "0.05", "--seed", "0")


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """One generated dataset plus one trained checkpoint, shared read-only."""
    root = tmp_path_factory.mktemp("cli")
    gen = root / "gen"
    assert run(*GEN_ARGS, "--out", str(gen)) == 0
    tr = root / "tr"
    assert run("train", "--data", str(gen / "dataset.jsonl"),
               *TRAIN_ARGS, "--out", str(tr)) == 0
    return {"root": root, "dataset": gen / "dataset.jsonl",
            "labels": gen / "labels.json", "checkpoint": tr / "checkpoint.json",
            "train_dir": tr}


def test_gen_writes_dataset_labels_and_manifest(workspace):
    assert workspace["dataset"].exists()
    labels = read_json(str(workspace["labels"]))
    assert set(labels["labels"].values()) <= {0, 1, 2, 3}
    assert len(labels["labels"]) == 24
    assert len(labels["schedule"]) == 8
    manifest = read_json(str(workspace["dataset"].parent / "run_manifest.json"))
    assert manifest["command"] == "gen"
    assert manifest["seed"] == 11
    assert manifest["config"]["block_size"] == 3
    assert "dataset.jsonl" in manifest["outputs"]
    assert manifest["tool_version"]


def test_gen_is_deterministic(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert run(*GEN_ARGS, "--out", str(a)) == 0
    assert run(*GEN_ARGS, "--out", str(b)) == 0
    assert (a / "dataset.jsonl").read_bytes() == (b / "dataset.jsonl").read_bytes()


def test_gen_linear_counts(tmp_path):
    out = tmp_path / "lin"
    assert run("gen", "--synth", "linear", "--seed", "2", "--count", "5",
               "--points", "9", "--out", str(out)) == 0
    lines = (out / "dataset.jsonl").read_text().strip().split("\n")
    assert len(lines) == 5
    first = json.loads(lines[0])
    assert len(first["points"]) == 9


def test_train_artifacts(workspace):
    tr = workspace["train_dir"]
    header, rows = read_csv(str(tr / "loss_log.csv"))
    assert header == ["epoch", "mean_loss"]
    assert [r[0] for r in rows] == ["1", "2"]
    assert all(float(r[1]) > 0 for r in rows)
    assert (tr / "loss_curve.svg").exists()
    ckpt = read_json(str(workspace["checkpoint"]))
    assert ckpt["config"]["model"]["memory"] == "tree"
    assert ckpt["normalization"] is not None
    manifest = read_json(str(tr / "run_manifest.json"))
    assert manifest["command"] == "train"
    assert manifest["inputs"] == [str(workspace["dataset"])]


def test_eval_reports_and_never_mutates_checkpoint(workspace, tmp_path):
    before = workspace["checkpoint"].read_bytes()
    out = tmp_path / "ev"
    assert run("eval", "--checkpoint", str(workspace["checkpoint"]),
               "--data", str(workspace["dataset"]), "--out", str(out)) == 0
    assert workspace["checkpoint"].read_bytes() == before
    header, rows = read_csv(str(out / "metrics.csv"))
    assert header == ["metric", "value", "count"]
    names = [r[0] for r in rows]
    assert "ADE" in names and "FDE" in names and "n-ADE" in names
    payload = read_json(str(out / "metrics.json"))
    assert payload["subset"] == "test"
    assert payload["records"] == 8  # 24 trajectories, 0.7 chronological split
    header, rows = read_csv(str(out / "predictions.csv"))
    assert header == ["sequence", "step", "truth_x", "truth_y", "pred_x", "pred_y"]
    assert len(rows) == 8 * 4  # records x horizon
    assert (out / "predictions.svg").exists()


def test_eval_train_subset(workspace, tmp_path):
    out = tmp_path / "ev"
    assert run("eval", "--checkpoint", str(workspace["checkpoint"]),
               "--data", str(workspace["dataset"]), "--subset", "train",
               "--out", str(out)) == 0
    assert read_json(str(out / "metrics.json"))["records"] == 16


def test_sweep_grid_rows_and_range_parsing(workspace, tmp_path):
    out = tmp_path / "sw"
    assert run("sweep", "--param", "l", "--values", "1..3",
               "--data", str(workspace["dataset"]),
               "--memory", "tree", "--capacity", "4", "--embed-dim", "4",
               "--epochs", "1", "--t-obs", "4", "--t-pred", "8",
               "--out", str(out)) == 0
    header, rows = read_csv(str(out / "sweep.csv"))
    assert header[:2] == ["param", "value"]
    assert [(r[0], r[1]) for r in rows] == [("l", "1"), ("l", "2"), ("l", "3")]
    assert (out / "sweep.svg").exists()
    for value in (1, 2, 3):
        assert (out / f"checkpoint_l{value}.json").exists()


def test_sweep_rejects_conflicting_flag(workspace, tmp_path):
    code = run("sweep", "--param", "l", "--values", "1,2",
               "--data", str(workspace["dataset"]), "--read-depth", "2",
               "--out", str(tmp_path / "sw"))
    assert code == 2


def test_parse_values_forms():
    assert cli.parse_values("2,4,8") == [2, 4, 8]
    assert cli.parse_values("1..6") == [1, 2, 3, 4, 5, 6]
    assert cli.parse_values("3..3") == [3]
    from treemem.errors import ConfigError
    with pytest.raises(ConfigError):
        cli.parse_values("6..1")
    with pytest.raises(ConfigError):
        cli.parse_values("a,b")


def test_attn_dump_per_sequence_weights(workspace, tmp_path):
    out = tmp_path / "ad"
    assert run("attn-dump", "--checkpoint", str(workspace["checkpoint"]),
               "--data", str(workspace["dataset"]), "--limit", "2",
               "--out", str(out)) == 0
    files = sorted(p for p in out.iterdir() if p.name.startswith("attn_"))
    assert len(files) == 2
    header, rows = read_csv(str(files[0]))
    assert header == ["step", "column", "level", "weight"]
    by_step = {}
    for step, column, level, weight in rows:
        assert int(level) in (1, 2)  # read depth 2 exposes two tree levels
        by_step.setdefault(step, []).append(float(weight))
    for step, weights in by_step.items():
        assert np.isclose(sum(weights), 1.0, atol=1e-9)


def test_analyze_outputs_contrast_and_panels(workspace, tmp_path):
    out = tmp_path / "an"
    assert run("analyze", "--checkpoint", str(workspace["checkpoint"]),
               "--data", str(workspace["dataset"]),
               "--labels", str(workspace["labels"]), "--out", str(out)) == 0
    index = read_json(str(out / "traces" / "index.json"))
    locs = {t["locator"] for t in index["traces"]}
    assert locs == {"root", "level:2:0"}  # capacity 4 puts leaves on level 2
    assert len(index["traces"]) == 16  # 8 test sequences x 2 locators
    contrast = read_json(str(out / "contrast.json"))
    for locator in locs:
        assert set(contrast[locator]) == {"by_input", "by_history",
                                          "input_minus_history"}
    groups = read_json(str(out / "groups.json"))
    assert groups  # at least one locator produced correlated groups
    panel_dirs = [p for p in out.iterdir() if p.name.startswith("panels_")]
    assert panel_dirs
    svgs = list(panel_dirs[0].glob("*_activations.svg"))
    assert svgs and all(p.with_suffix(".csv").exists() for p in svgs)


def test_analyze_explicit_locator(workspace, tmp_path):
    out = tmp_path / "an"
    assert run("analyze", "--checkpoint", str(workspace["checkpoint"]),
               "--data", str(workspace["dataset"]), "--locators", "node:3",
               "--trace-dim", "2", "--out", str(out)) == 0
    index = read_json(str(out / "traces" / "index.json"))
    assert {t["locator"] for t in index["traces"]} == {"node:3"}
    header, _ = read_csv(str(out / "traces" / index["traces"][0]["file"]))
    assert header == ["step", "unit0", "unit1"]


def test_plot_from_loss_csv(workspace, tmp_path):
    out = tmp_path / "pl"
    assert run("plot", "--csv", str(workspace["train_dir"] / "loss_log.csv"),
               "--kind", "loss", "--out", str(out)) == 0
    assert (out / "loss_log.svg").exists()


def test_usage_and_config_errors_exit_2(tmp_path):
    assert run() == 2  # no subcommand
    assert run("bogus") == 2
    assert run("gen", "--synth", "nope") == 2
    assert run("gen", "--synth", "regime", "--blocks", "3",
               "--out", str(tmp_path / "g")) == 2  # schedule can't revisit


def test_data_errors_exit_3(workspace, tmp_path):
    assert run("train", "--data", str(tmp_path / "missing.jsonl"),
               "--out", str(tmp_path / "t")) == 3
    bad = tmp_path / "bad.jsonl"
    bad.write_text("not json\n")
    assert run("train", "--data", str(bad), "--out", str(tmp_path / "t")) == 3


def test_numerical_failure_exits_4(workspace, tmp_path, monkeypatch):
    from treemem.errors import NumericalError

    def blow_up(*args, **kwargs):
        raise NumericalError("non-finite loss at epoch 1, trajectory traj00000")

    monkeypatch.setattr(cli, "train", blow_up)
    code = run("train", "--data", str(workspace["dataset"]),
               *TRAIN_ARGS, "--out", str(tmp_path / "t"))
    assert code == 4


def test_config_file_supplies_defaults_and_flags_override(workspace, tmp_path):
    ini = tmp_path / "run.ini"
    ini.write_text(
        "[model]\nmemory = tree\ncapacity = 4\nembed_dim = 4\nread_depth = 2\n"
        "[train]\nepochs = 1\nlearning_rate = 0.05\nt_obs = 4\nt_pred = 8\n"
    )
    out = tmp_path / "tr"
    assert run("train", "--data", str(workspace["dataset"]),
               "--config", str(ini), "--epochs", "2", "--out", str(out)) == 0
    _, rows = read_csv(str(out / "loss_log.csv"))
    assert len(rows) == 2  # the flag beats the file's epochs = 1
    ckpt = read_json(str(out / "checkpoint.json"))
    assert ckpt["config"]["model"]["capacity"] == 4  # file beats the default


def test_config_file_rejects_unknown_keys(workspace, tmp_path):
    ini = tmp_path / "run.ini"
    ini.write_text("[train]\nwarmup = 5\n")
    assert run("train", "--data", str(workspace["dataset"]),
               "--config", str(ini), "--out", str(tmp_path / "t")) == 2


def test_output_root_env_var(tmp_path, monkeypatch):
    monkeypatch.setenv("TREEMEM_OUTPUT_ROOT", str(tmp_path))
    assert run("gen", "--synth", "linear", "--count", "3", "--points", "8",
               "--seed", "1") == 0
    assert (tmp_path / "gen_out" / "dataset.jsonl").exists()


def test_manifest_lists_inputs_outputs_and_timing(workspace):
    manifest = read_json(str(workspace["train_dir"] / "run_manifest.json"))
    assert set(manifest) >= {"command", "config", "seed", "inputs", "outputs",
                             "started", "finished", "tool_version"}
    assert manifest["finished"] >= manifest["started"]
    assert {"checkpoint.json", "loss_log.csv", "loss_curve.svg"} <= set(
        manifest["outputs"]
    )
