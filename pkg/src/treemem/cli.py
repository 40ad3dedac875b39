"""Command-line front door.

Subcommands: gen (synthetic datasets), train (fit a model on a
chronological stream), eval (metrics on a held-out split), sweep
(capacity/width/depth grids), attn-dump (per-step attention weights),
analyze (memory-activation study), plot (re-render any emitted CSV).

Every command writes its artifacts plus a run_manifest.json into an
output directory; figures are SVG with a sibling CSV holding the
numbers.  Exit codes: 0 success, 2 usage or configuration error, 3 data
error, 4 numerical failure.  The TREEMEM_OUTPUT_ROOT environment
variable supplies a default output root when --out is omitted.
"""

import argparse
import configparser
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from datetime import datetime, timezone

import numpy as np

from . import __version__, plots
from .analysis import (
    export_panels,
    first_layer_locator,
    grouping_contrast,
    record_activations,
    top_correlated,
)
from .data import (
    NormalizationManifest,
    filter_short,
    load_csv,
    load_jsonl,
    resample,
    save_jsonl,
    synth_linear,
    synth_regime,
)
from .errors import ConfigError, DataError, NumericalError
from .metrics import PredictionRecord, build_report
from .model import ModelConfig, TrajectoryModel
from .reports import read_csv, read_json, write_csv, write_json
from .trainer import (
    TrainConfig,
    chronological_split,
    evaluate,
    load_checkpoint,
    save_checkpoint,
    train,
)

MODEL_DEFAULTS = {"memory": "tree", "capacity": 512, "embed_dim": 300,
                  "read_depth": 4, "attn_hidden": 0}
TRAIN_DEFAULTS = {"epochs": 50, "learning_rate": 1e-3, "momentum": 0.9,
                  "clip_norm": 5.0, "t_obs": 25, "t_pred": 50, "split": 0.7,
                  "seed": 0}
DATA_DEFAULTS = {"resample": "arc"}

_CASTS = {"memory": str, "capacity": int, "embed_dim": int, "read_depth": int,
          "attn_hidden": int, "epochs": int, "t_obs": int, "t_pred": int,
          "seed": int, "learning_rate": float, "momentum": float,
          "clip_norm": float, "split": float, "resample": str}


# ---------------------------------------------------------------------------
# plumbing


def _now():
    return datetime.now(timezone.utc).isoformat()


def resolve_out(args, command):
    out = getattr(args, "out", None)
    if not out:
        root = os.environ.get("TREEMEM_OUTPUT_ROOT", ".")
        out = os.path.join(root, f"{command}_out")
    os.makedirs(out, exist_ok=True)
    return out


def write_manifest(out, command, args, inputs, outputs, started):
    payload = {
        "command": command,
        "tool_version": __version__,
        "config": {k: v for k, v in sorted(vars(args).items()) if k != "func"},
        "seed": getattr(args, "seed", None),
        "inputs": sorted(inputs),
        "outputs": sorted(os.path.basename(p) for p in outputs),
        "started": started,
        "finished": _now(),
    }
    write_json(os.path.join(out, "run_manifest.json"), payload)


def read_config_file(path):
    parser = configparser.ConfigParser()
    if not parser.read(path):
        raise ConfigError(f"config file not found: {path}")
    values = {}
    for section in parser.sections():
        if section not in ("model", "train", "data"):
            raise ConfigError(f"unknown config section [{section}]")
        for key, raw in parser[section].items():
            if key not in _CASTS:
                raise ConfigError(f"unknown config key '{key}' in [{section}]")
            try:
                values[key] = _CASTS[key](raw)
            except ValueError as exc:
                raise ConfigError(f"bad value for '{key}': {raw!r}") from exc
    return values


def setting(args, file_values, key, default):
    flag = getattr(args, key, None)
    if flag is not None:
        return flag
    if key in file_values:
        return file_values[key]
    return default


def build_train_config(args, input_dim, overrides=None):
    file_values = read_config_file(args.config) if getattr(args, "config", None) else {}

    def pick(key, table):
        if overrides and key in overrides:
            return overrides[key]
        return setting(args, file_values, key, table[key])
    model = ModelConfig(
        input_dim=input_dim,
        embed_dim=pick("embed_dim", MODEL_DEFAULTS),
        memory=pick("memory", MODEL_DEFAULTS),
        capacity=pick("capacity", MODEL_DEFAULTS),
        read_depth=pick("read_depth", MODEL_DEFAULTS),
        attn_hidden=pick("attn_hidden", MODEL_DEFAULTS),
    )
    config = TrainConfig(
        model=model,
        learning_rate=pick("learning_rate", TRAIN_DEFAULTS),
        momentum=pick("momentum", TRAIN_DEFAULTS),
        clip_norm=pick("clip_norm", TRAIN_DEFAULTS),
        epochs=pick("epochs", TRAIN_DEFAULTS),
        seed=pick("seed", TRAIN_DEFAULTS),
        t_obs=pick("t_obs", TRAIN_DEFAULTS),
        t_pred=pick("t_pred", TRAIN_DEFAULTS),
        split_fraction=pick("split", TRAIN_DEFAULTS),
    )
    resample_mode = setting(args, file_values, "resample", DATA_DEFAULTS["resample"])
    if resample_mode not in ("arc", "index", "none"):
        raise ConfigError(f"resample must be arc, index, or none, got {resample_mode!r}")
    return config.validate(), resample_mode


def load_dataset(path):
    if not os.path.exists(path):
        raise DataError(f"dataset not found: {path}")
    if path.endswith(".csv"):
        return load_csv(path)
    return load_jsonl(path)


def prepare_stream(trajectories, t_pred, resample_mode):
    kept, dropped = filter_short(trajectories, min_points=3)
    if not kept:
        raise DataError("no trajectories left after the length filter")
    if resample_mode != "none":
        kept = [resample(t, t_pred, resample_mode) for t in kept]
    return kept, dropped


def pick_subset(train_set, test_set, which):
    if which == "train":
        chosen = train_set
    elif which == "test":
        chosen = test_set
    else:
        chosen = train_set + test_set
    if not chosen:
        raise DataError(f"the '{which}' subset is empty at this split")
    return chosen


def parse_values(text):
    """Grid values: either "2,4,8" or an inclusive range "1..6"."""
    text = text.strip()
    try:
        if ".." in text:
            lo, hi = text.split("..", 1)
            lo, hi = int(lo), int(hi)
            if hi < lo:
                raise ConfigError(f"empty range '{text}'")
            return list(range(lo, hi + 1))
        return [int(piece) for piece in text.split(",") if piece.strip()]
    except ValueError as exc:
        raise ConfigError(f"cannot parse values '{text}'") from exc


def parse_schedule(text):
    try:
        return [int(piece) for piece in text.split(",") if piece.strip()]
    except ValueError as exc:
        raise ConfigError(f"cannot parse schedule '{text}'") from exc


def _sanitize(locator):
    return locator.replace(":", "-")


# ---------------------------------------------------------------------------
# commands


def cmd_gen(args):
    started = _now()
    out = resolve_out(args, "gen")
    outputs = []
    dataset_path = os.path.join(out, "dataset.jsonl")
    if args.synth == "regime":
        schedule = parse_schedule(args.schedule) if args.schedule else None
        trajs, labels, schedule = synth_regime(
            seed=args.seed,
            n_regimes=args.regimes,
            n_blocks=args.blocks,
            block_size=args.block_size,
            n_points=args.points,
            sigma_frac=args.sigma_frac,
            dims=args.dims,
            schedule=schedule,
            lane_style=args.lane_style,
        )
        save_jsonl(dataset_path, trajs)
        labels_path = os.path.join(out, "labels.json")
        write_json(
            labels_path,
            {
                "labels": {t.id: lab for t, lab in zip(trajs, labels)},
                "schedule": schedule,
                "n_regimes": args.regimes,
                "block_size": args.block_size,
                "lane_style": args.lane_style,
                "note": "labels are generator ground truth, not learned clusters",
            },
        )
        outputs += [dataset_path, labels_path]
    else:
        trajs = synth_linear(
            seed=args.seed, n=args.count, n_points=args.points, dims=args.dims
        )
        save_jsonl(dataset_path, trajs)
        outputs.append(dataset_path)
    print(f"wrote {len(trajs)} trajectories to {dataset_path}")
    write_manifest(out, "gen", args, [], outputs, started)


def cmd_train(args):
    started = _now()
    out = resolve_out(args, "train")
    data = load_dataset(args.data)
    config, resample_mode = build_train_config(args, data[0].dim)
    stream, dropped = prepare_stream(data, config.t_pred, resample_mode)
    train_set, test_set = chronological_split(stream, config.split_fraction)
    if not train_set:
        raise DataError("training split is empty")
    norm = NormalizationManifest.from_trajectories(train_set)
    normalized = [norm.apply(t) for t in train_set]
    model = TrajectoryModel(config.model, rng=np.random.default_rng(config.seed))
    history, velocity = train(model, normalized, config, log=print)
    ckpt_path = os.path.join(out, "checkpoint.json")
    save_checkpoint(
        ckpt_path,
        model,
        config,
        velocity=velocity,
        stream_position=len(train_set),
        metric_log=[
            {"epoch": e + 1, "mean_loss": v} for e, v in enumerate(history)
        ],
        normalization=norm.to_dict(),
    )
    loss_path = os.path.join(out, "loss_log.csv")
    write_csv(loss_path, ["epoch", "mean_loss"],
              [[e + 1, v] for e, v in enumerate(history)])
    curve_path = os.path.join(out, "loss_curve.svg")
    plots.series_panel(
        [e + 1 for e in range(len(history))], history, curve_path,
        xlabel="epoch", ylabel="mean loss", title="training loss", logy=True,
    )
    print(f"trained {config.epochs} epochs on {len(train_set)} trajectories "
          f"({len(test_set)} held out, {len(dropped)} dropped)")
    write_manifest(out, "train", args, [args.data],
                   [ckpt_path, loss_path, curve_path], started)


def _denormalized_records(results, originals, norm, t_obs, t_pred):
    by_id = {t.id: t for t in originals}
    records = []
    for traj, predicted in results:
        source = by_id[traj.id]
        records.append(
            PredictionRecord(
                observed=source.points[:t_obs],
                truth=source.points[t_obs:t_pred],
                predicted=norm.unscale(predicted),
                seq_id=traj.id,
            )
        )
    return records


def _restore(args):
    """Shared eval/attn-dump/analyze loading: checkpoint, stream, split.

    Returns (model, config, subset, norm, stream) with the full prepared
    stream last, since checkpointed memory may reference trajectories
    outside the chosen subset."""
    model, config, extras = load_checkpoint(args.checkpoint)
    data = load_dataset(args.data)
    if data[0].dim != config.model.input_dim:
        raise DataError(
            f"dataset is {data[0].dim}-D but the checkpoint expects "
            f"{config.model.input_dim}-D input"
        )
    stream, _ = prepare_stream(data, config.t_pred, args.resample)
    train_set, test_set = chronological_split(stream, config.split_fraction)
    subset = pick_subset(train_set, test_set, args.subset)
    if extras.get("normalization"):
        norm = NormalizationManifest.from_dict(extras["normalization"])
    else:
        if not train_set:
            raise DataError("no training split to derive normalization from")
        norm = NormalizationManifest.from_trajectories(train_set)
    return model, config, subset, norm, stream


def cmd_eval(args):
    started = _now()
    out = resolve_out(args, "eval")
    with open(args.checkpoint, "rb") as fh:
        checkpoint_before = fh.read()
    model, config, subset, norm, stream = _restore(args)
    normalized = [norm.apply(t) for t in subset]
    results = evaluate(model, normalized, config)
    records = _denormalized_records(results, subset, norm, config.t_obs, config.t_pred)
    report = build_report(records, rooted_ade=args.rooted_ade)

    metrics_csv = os.path.join(out, "metrics.csv")
    write_csv(metrics_csv, ["metric", "value", "count"], report.rows())
    metrics_json = os.path.join(out, "metrics.json")
    write_json(metrics_json, {"report": report.to_dict(), "subset": args.subset,
                              "records": len(records)})

    pred_csv = os.path.join(out, "predictions.csv")
    dims = records[0].truth.shape[1]
    axis = "xyz"[:dims]
    header = (["sequence", "step"]
              + [f"truth_{a}" for a in axis] + [f"pred_{a}" for a in axis])
    rows = []
    for record in records:
        for t in range(record.horizon):
            rows.append([record.seq_id, t]
                        + list(record.truth[t]) + list(record.predicted[t]))
    write_csv(pred_csv, header, rows)

    figure_path = os.path.join(out, "predictions.svg")
    first = records[0]
    plots.trajectory_panel(first.observed, first.predicted, first.truth,
                           figure_path, title=first.seq_id)
    for name, value, _ in report.rows():
        print(f"{name}: {'undefined' if value is None else value}")
    with open(args.checkpoint, "rb") as fh:
        checkpoint_after = fh.read()
    if checkpoint_before != checkpoint_after:
        raise DataError("evaluation must not modify the checkpoint")
    write_manifest(out, "eval", args, [args.checkpoint, args.data],
                   [metrics_csv, metrics_json, pred_csv, figure_path], started)


SWEEP_TARGETS = {"p": "capacity", "k": "embed_dim", "l": "read_depth"}


def _sweep_cell(value, args, base_model_kw, config,
                train_norm, train_normalized, test_set, out):
    kw = dict(base_model_kw)
    kw[SWEEP_TARGETS[args.param]] = value
    model_cfg = ModelConfig(**kw)
    cell_cfg = TrainConfig(
        model=model_cfg,
        learning_rate=config.learning_rate,
        momentum=config.momentum,
        clip_norm=config.clip_norm,
        epochs=config.epochs,
        seed=config.seed,
        t_obs=config.t_obs,
        t_pred=config.t_pred,
        split_fraction=config.split_fraction,
    ).validate()
    model = TrajectoryModel(model_cfg, rng=np.random.default_rng(cell_cfg.seed))
    history, velocity = train(model, train_normalized, cell_cfg)
    normalized_test = [train_norm.apply(t) for t in test_set]
    results = evaluate(model, normalized_test, cell_cfg)
    records = _denormalized_records(results, test_set, train_norm,
                                    cell_cfg.t_obs, cell_cfg.t_pred)
    report = build_report(records)
    ckpt = os.path.join(out, f"checkpoint_{args.param}{value}.json")
    save_checkpoint(ckpt, model, cell_cfg, velocity=velocity,
                    stream_position=len(train_normalized),
                    normalization=train_norm.to_dict())
    return value, report, history[-1], ckpt


def cmd_sweep(args):
    started = _now()
    out = resolve_out(args, "sweep")
    target = SWEEP_TARGETS[args.param]
    if getattr(args, target, None) is not None:
        raise ConfigError(
            f"--param {args.param} conflicts with an explicit --{target.replace('_', '-')}"
        )
    values = parse_values(args.values)
    if not values:
        raise ConfigError("no sweep values given")
    data = load_dataset(args.data)
    # seed the base config with the first grid value so the swept field
    # is not validated against its unrelated global default
    config, resample_mode = build_train_config(args, data[0].dim,
                                               overrides={target: values[0]})
    stream, _ = prepare_stream(data, config.t_pred, resample_mode)
    train_set, test_set = chronological_split(stream, config.split_fraction)
    if not train_set or not test_set:
        raise DataError("sweep needs both a training and a test split")
    norm = NormalizationManifest.from_trajectories(train_set)
    train_normalized = [norm.apply(t) for t in train_set]
    base_model_kw = {
        "input_dim": config.model.input_dim,
        "embed_dim": config.model.embed_dim,
        "memory": config.model.memory,
        "capacity": config.model.capacity,
        "read_depth": config.model.read_depth,
        "attn_hidden": config.model.attn_hidden,
    }
    workers = args.max_workers or min(len(values), os.cpu_count() or 1)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        cells = list(
            pool.map(
                lambda v: _sweep_cell(v, args, base_model_kw, config,
                                      norm, train_normalized, test_set, out),
                values,
            )
        )
    metric_names = list(cells[0][1].values.keys())
    sweep_csv = os.path.join(out, "sweep.csv")
    rows = []
    for value, report, final_loss, _ in cells:
        rows.append([args.param, value]
                    + [report.values[name] for name in metric_names]
                    + [final_loss])
    write_csv(sweep_csv, ["param", "value"] + metric_names + ["final_train_loss"], rows)
    primary = metric_names[0]
    curve = os.path.join(out, "sweep.svg")
    plots.series_panel(
        [c[0] for c in cells],
        [c[1].values[primary] if c[1].values[primary] is not None else np.nan
         for c in cells],
        curve, xlabel=args.param, ylabel=primary,
        title=f"{primary} vs {args.param}",
    )
    for value, report, final_loss, _ in cells:
        shown = report.values[primary]
        print(f"{args.param}={value}  {primary}={shown}  final_loss={final_loss}")
    write_manifest(out, "sweep", args, [args.data],
                   [sweep_csv, curve] + [c[3] for c in cells], started)


def cmd_attn_dump(args):
    started = _now()
    out = resolve_out(args, "attn-dump")
    model, config, subset, norm, stream = _restore(args)
    if args.limit is not None:
        subset = subset[: args.limit]
    outputs = []
    is_tree = config.model.memory == "tree"
    for traj in subset:
        scaled = norm.apply(traj)
        weights = []

        def observer(step, phase, context, alpha, memory):
            if alpha is None or alpha.data.size == 0:
                return
            for column, weight in enumerate(alpha.data):
                level = (column + 1).bit_length() if is_tree else 1
                weights.append([step, column, level, float(weight)])

        model.predict(
            scaled.points[: config.t_obs], config.horizon, seq_id=traj.id,
            step_observer=observer, observe_reads=True,
        )
        path = os.path.join(out, f"attn_{traj.id}.csv")
        write_csv(path, ["step", "column", "level", "weight"], weights)
        outputs.append(path)
    print(f"dumped attention for {len(outputs)} sequences")
    write_manifest(out, "attn-dump", args, [args.checkpoint, args.data],
                   outputs, started)


def cmd_analyze(args):
    started = _now()
    out = resolve_out(args, "analyze")
    model, config, subset, norm, stream = _restore(args)
    if args.locators:
        locators = [piece.strip() for piece in args.locators.split(",") if piece.strip()]
    elif config.model.memory == "tree":
        locators = ["root", first_layer_locator(config.model)]
    else:
        locators = ["slot:0"]
    normalized = [norm.apply(t) for t in subset]
    traces, records = record_activations(
        model, normalized, locators, config.t_obs, config.horizon,
        trace_dim=args.trace_dim,
    )
    outputs = []

    traces_dir = os.path.join(out, "traces")
    os.makedirs(traces_dir, exist_ok=True)
    index = []
    for trace in traces:
        name = f"{_sanitize(trace.locator)}__{trace.seq_id}.csv"
        path = os.path.join(traces_dir, name)
        header = ["step"] + [f"unit{u}" for u in range(trace.matrix.shape[1])]
        write_csv(path, header,
                  [[t] + list(row) for t, row in enumerate(trace.matrix)])
        index.append({"sequence": trace.seq_id, "locator": trace.locator,
                      "file": name, "recent_ids": trace.recent_ids})
        outputs.append(path)
    write_json(os.path.join(traces_dir, "index.json"), {"traces": index})

    denorm_records = {
        sid: PredictionRecord(
            observed=norm.unscale(rec.observed),
            truth=norm.unscale(rec.truth),
            predicted=norm.unscale(rec.predicted),
            seq_id=sid,
        )
        for sid, rec in records.items()
    }
    dataset_points = {t.id: t.points for t in stream}

    label_map = None
    if args.labels:
        payload = read_json(args.labels)
        if "labels" not in payload:
            raise DataError(f"{args.labels}: missing 'labels' mapping")
        label_map = payload["labels"]

    groups_payload = {}
    contrast_payload = {}
    for locator in locators:
        own = [t for t in traces if t.locator == locator]
        if len(own) >= args.group_size:
            groups = top_correlated(own, group_size=args.group_size,
                                    max_groups=args.max_groups)
            panel_dir = os.path.join(out, f"panels_{_sanitize(locator)}")
            export_panels(groups, own, denorm_records, dataset_points, panel_dir)
            groups_payload[locator] = [
                {"sequences": [own[i].seq_id for i in members], "score": score}
                for members, score in groups
            ]
        if label_map is not None and len(own) >= 2:
            contrast_payload[locator] = grouping_contrast(own, label_map)
    groups_path = os.path.join(out, "groups.json")
    write_json(groups_path, groups_payload)
    outputs.append(groups_path)
    if contrast_payload:
        contrast_path = os.path.join(out, "contrast.json")
        write_json(contrast_path, contrast_payload)
        outputs.append(contrast_path)
        for locator, values in contrast_payload.items():
            print(f"{locator}: by_input={values['by_input']:.4f} "
                  f"by_history={values['by_history']:.4f}")
    write_manifest(out, "analyze", args,
                   [args.checkpoint, args.data] + ([args.labels] if args.labels else []),
                   outputs, started)


def cmd_plot(args):
    started = _now()
    out = resolve_out(args, "plot")
    header, rows = read_csv(args.csv)
    stem = os.path.splitext(os.path.basename(args.csv))[0]
    path = os.path.join(out, f"{stem}.svg")
    title = args.title or stem
    if args.kind == "loss":
        if header[:2] != ["epoch", "mean_loss"]:
            raise DataError(f"{args.csv}: expected epoch,mean_loss columns")
        plots.series_panel([float(r[0]) for r in rows], [float(r[1]) for r in rows],
                           path, xlabel="epoch", ylabel="mean loss",
                           title=title, logy=True)
    elif args.kind == "sweep":
        if len(header) < 3 or header[0] != "param":
            raise DataError(f"{args.csv}: not a sweep table")
        ys = [np.nan if r[2] == "undefined" else float(r[2]) for r in rows]
        plots.series_panel([float(r[1]) for r in rows], ys, path,
                           xlabel=rows[0][0] if rows else "value",
                           ylabel=header[2], title=title)
    elif args.kind == "trajectory":
        if header[:2] != ["phase", "step"]:
            raise DataError(f"{args.csv}: expected phase,step,... columns")
        groups = {"observed": [], "predicted": [], "truth": []}
        for r in rows:
            if r[0] not in groups:
                raise DataError(f"{args.csv}: unknown phase {r[0]!r}")
            groups[r[0]].append([float(v) for v in r[2:]])
        truth = np.asarray(groups["truth"]) if groups["truth"] else None
        plots.trajectory_panel(np.asarray(groups["observed"]),
                               np.asarray(groups["predicted"]),
                               truth, path, title=title)
    else:  # activation
        if header[0] != "step":
            raise DataError(f"{args.csv}: expected step,unit... columns")
        matrix = np.asarray([[float(v) for v in r[1:]] for r in rows])
        plots.activation_panel(matrix, path, title=title)
    print(f"wrote {path}")
    write_manifest(out, "plot", args, [args.csv], [path], started)


# ---------------------------------------------------------------------------
# parser


def _add_model_train_flags(sub):
    sub.add_argument("--config", help="INI file with [model]/[train]/[data] sections")
    sub.add_argument("--memory", choices=("tree", "dmn", "nse"))
    sub.add_argument("--capacity", type=int, help="memory leaves/slots (p)")
    sub.add_argument("--embed-dim", dest="embed_dim", type=int, help="hidden width (k)")
    sub.add_argument("--read-depth", dest="read_depth", type=int,
                     help="tree levels visible to attention (l)")
    sub.add_argument("--attn-hidden", dest="attn_hidden", type=int)
    sub.add_argument("--epochs", type=int)
    sub.add_argument("--learning-rate", dest="learning_rate", type=float)
    sub.add_argument("--momentum", type=float)
    sub.add_argument("--clip-norm", dest="clip_norm", type=float)
    sub.add_argument("--t-obs", dest="t_obs", type=int)
    sub.add_argument("--t-pred", dest="t_pred", type=int)
    sub.add_argument("--split", type=float, help="chronological train fraction")
    sub.add_argument("--seed", type=int)
    sub.add_argument("--resample", choices=("arc", "index", "none"))


def _add_restore_flags(sub):
    sub.add_argument("--checkpoint", required=True)
    sub.add_argument("--data", required=True)
    sub.add_argument("--subset", choices=("train", "test", "all"), default="test")
    sub.add_argument("--resample", choices=("arc", "index", "none"), default="arc")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="treemem",
        description="Tree-memory trajectory prediction: data, training, "
                    "evaluation, and memory analysis.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    commands = parser.add_subparsers(dest="command")

    gen = commands.add_parser("gen", help="generate a synthetic dataset")
    gen.add_argument("--synth", choices=("regime", "linear"), required=True)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--out")
    gen.add_argument("--regimes", type=int, default=4)
    gen.add_argument("--blocks", type=int, default=8)
    gen.add_argument("--block-size", dest="block_size", type=int, default=40)
    gen.add_argument("--points", type=int, default=50)
    gen.add_argument("--sigma-frac", dest="sigma_frac", type=float, default=0.02)
    gen.add_argument("--dims", type=int, default=2)
    gen.add_argument("--lane-style", dest="lane_style",
                     choices=("fork", "parallel"), default="fork")
    gen.add_argument("--schedule", help="comma-separated regime per block")
    gen.add_argument("--count", type=int, default=20,
                     help="trajectories for --synth linear")
    gen.set_defaults(func=cmd_gen)

    tr = commands.add_parser("train", help="fit a model on a stream")
    tr.add_argument("--data", required=True)
    tr.add_argument("--out")
    _add_model_train_flags(tr)
    tr.set_defaults(func=cmd_train)

    ev = commands.add_parser("eval", help="metrics on a split")
    _add_restore_flags(ev)
    ev.add_argument("--out")
    ev.add_argument("--rooted-ade", dest="rooted_ade", action="store_true",
                    help="also report the rooted average displacement")
    ev.set_defaults(func=cmd_eval)

    sw = commands.add_parser("sweep", help="grid over p, k, or l")
    sw.add_argument("--param", choices=tuple(SWEEP_TARGETS), required=True)
    sw.add_argument("--values", required=True, help='"2,4,8" or "1..6"')
    sw.add_argument("--data", required=True)
    sw.add_argument("--out")
    sw.add_argument("--max-workers", dest="max_workers", type=int)
    _add_model_train_flags(sw)
    sw.set_defaults(func=cmd_sweep)

    ad = commands.add_parser("attn-dump", help="per-step attention weights")
    _add_restore_flags(ad)
    ad.add_argument("--out")
    ad.add_argument("--limit", type=int)
    ad.set_defaults(func=cmd_attn_dump)

    an = commands.add_parser("analyze", help="memory-activation study")
    _add_restore_flags(an)
    an.add_argument("--out")
    an.add_argument("--locators", help="comma-separated cell locators")
    an.add_argument("--labels", help="labels.json from gen --synth regime")
    an.add_argument("--trace-dim", dest="trace_dim", type=int)
    an.add_argument("--group-size", dest="group_size", type=int, default=3)
    an.add_argument("--max-groups", dest="max_groups", type=int, default=5)
    an.set_defaults(func=cmd_analyze)

    pl = commands.add_parser("plot", help="render an emitted CSV as SVG")
    pl.add_argument("--csv", required=True)
    pl.add_argument("--kind", choices=("loss", "sweep", "trajectory", "activation"),
                    required=True)
    pl.add_argument("--out")
    pl.add_argument("--title")
    pl.set_defaults(func=cmd_plot)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 2
    if not getattr(args, "func", None):
        parser.print_help()
        return 2
    try:
        args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except NumericalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    return 0
