"""Memory-activation analysis: record per-cell hidden states over test
sequences, find recurring activation patterns across sequences, and
contrast two ways of grouping them — by the input's own lane label
versus by the label that dominates the recent stream history.

A cell locator picks what to trace:

- ``root``            — the top tree cell;
- ``node:<i>``        — tree cell by heap index (1-based, root = 1);
- ``level:<L>:<pos>`` — tree cell by level (1 = root) and position;
- ``level:<L>``       — every cell of one tree level, concatenated;
- ``slot:<j>``        — flat memory slot (0-based);
- ``slots``           — every flat slot, concatenated.

Layer-wide locators answer a different question than single cells: one
leaf-adjacent cell sees two ring slots, but the whole layer holds the
entire sliding window, so its trace reflects what the memory currently
contains.  When a layer is wider than ``trace_dim``, units are sampled
evenly across the concatenation so every cell contributes.

Trace similarity is the Pearson correlation of the flattened
(time x unit) matrices, so a cell that never changes during a sequence
still compares by its held content, while a cell updated every step
compares mostly by its dynamics.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError
from .metrics import PredictionRecord

HISTORY_WINDOW = 10  # trajectories of stream history attached to a trace


@dataclass
class ActivationTrace:
    seq_id: str
    locator: str
    matrix: np.ndarray  # (observed steps, trace_dim)
    recent_ids: list = field(default_factory=list)  # oldest -> newest, excludes self

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=np.float64)
        if self.matrix.ndim != 2:
            raise DataError(f"trace {self.seq_id}/{self.locator}: bad matrix shape")


def parse_locator(text, config):
    """Returns ("tree", heap_index), ("tree-level", level), ("flat", slot)
    or ("flat-all", 0)."""
    is_tree = config.memory == "tree"
    parts = str(text).strip().split(":")
    kind = parts[0]
    if kind == "root":
        if len(parts) != 1 or not is_tree:
            raise ConfigError(f"locator '{text}' needs a tree memory")
        return ("tree", 1)
    if kind == "node":
        if len(parts) != 2 or not is_tree:
            raise ConfigError(f"locator '{text}' needs a tree memory and one index")
        index = _as_int(text, parts[1])
        if not 1 <= index < 2 * config.capacity:
            raise ConfigError(
                f"locator '{text}': node index outside 1..{2 * config.capacity - 1}"
            )
        return ("tree", index)
    if kind == "level":
        if len(parts) not in (2, 3) or not is_tree:
            raise ConfigError(f"locator '{text}' needs a tree memory, level, position")
        level = _as_int(text, parts[1])
        depth = config.capacity.bit_length() - 1
        if not 1 <= level <= depth + 1:
            raise ConfigError(f"locator '{text}': level outside 1..{depth + 1}")
        if len(parts) == 2:
            return ("tree-level", level)
        pos = _as_int(text, parts[2])
        if not 0 <= pos < 2 ** (level - 1):
            raise ConfigError(f"locator '{text}': position outside 0..{2 ** (level - 1) - 1}")
        return ("tree", 2 ** (level - 1) + pos)
    if kind == "slot":
        if len(parts) != 2 or is_tree:
            raise ConfigError(f"locator '{text}' needs a flat memory and one slot")
        slot = _as_int(text, parts[1])
        if not 0 <= slot < config.capacity:
            raise ConfigError(f"locator '{text}': slot outside 0..{config.capacity - 1}")
        return ("flat", slot)
    if kind == "slots":
        if len(parts) != 1 or is_tree:
            raise ConfigError(f"locator '{text}' needs a flat memory")
        return ("flat-all", 0)
    raise ConfigError(f"unknown locator '{text}'")


def _as_int(text, piece):
    try:
        return int(piece)
    except ValueError as exc:
        raise ConfigError(f"locator '{text}': '{piece}' is not an integer") from exc


def first_layer_locator(config):
    """The leftmost leaf-adjacent cell of a tree memory."""
    depth = config.capacity.bit_length() - 1
    return f"level:{depth}:0"


def _locator_width(parsed, config):
    """Units available at the located object before any trimming."""
    kind, index = parsed
    if kind == "tree-level":
        return config.embed_dim * 2 ** (index - 1)
    if kind == "flat-all":
        return config.embed_dim * config.capacity
    return config.embed_dim


def _sample_columns(width, keep):
    """Evenly spaced unit indices, strictly increasing while keep <= width."""
    return np.floor(np.arange(keep) * width / keep).astype(int)


def _cell_state(memory, parsed, trace_dim):
    kind, index = parsed
    if kind == "tree":
        return memory.node_h[index].data[:trace_dim].copy()
    if kind == "tree-level":
        lo = 2 ** (index - 1)
        row = np.concatenate([memory.node_h[i].data for i in range(lo, 2 * lo)])
        return row[_sample_columns(row.shape[0], trace_dim)].copy()
    if kind == "flat-all":
        row = memory.h.data.T.ravel()  # slot 0's units, then slot 1's, ...
        return row[_sample_columns(row.shape[0], trace_dim)].copy()
    return memory.h.data[:trace_dim, index].copy()


def record_activations(model, stream, locators, t_obs, horizon, trace_dim=None):
    """Run the model over a test stream, capturing each located cell's
    hidden state after every observed step.

    Returns (traces, records): one ActivationTrace per (sequence,
    locator), and per-sequence PredictionRecords in model coordinates.
    Each trace carries the ids of up to ten trajectories enqueued before
    its own sequence began.  ``trace_dim`` defaults to 100 units or the
    widest located object, whichever is smaller; objects narrower than
    that keep their full width.
    """
    config = model.config
    if not locators:
        raise ConfigError("no cell locators given")
    parsed = [(str(text), parse_locator(text, config)) for text in locators]
    widest = max(_locator_width(spec_, config) for _, spec_ in parsed)
    if trace_dim is None:
        trace_dim = min(100, widest)
    if trace_dim < 1 or trace_dim > widest:
        raise ConfigError(f"trace_dim must be in 1..{widest}, got {trace_dim}")
    effective = {
        text: min(trace_dim, _locator_width(spec_, config)) for text, spec_ in parsed
    }
    traces, records = [], {}
    for traj in stream:
        points = np.asarray(traj.points, dtype=np.float64)
        if points.shape[0] < t_obs + horizon:
            raise DataError(
                f"trajectory {traj.id} has {points.shape[0]} points, "
                f"needs {t_obs + horizon}"
            )
        previous = list(model.memory.recent_ids)
        rows = {text: [] for text, _ in parsed}

        def observer(step, phase, context, alpha, memory):
            if phase != "observed":
                return
            for text, spec_ in parsed:
                rows[text].append(_cell_state(memory, spec_, effective[text]))

        predicted = model.predict(
            points[:t_obs], horizon, seq_id=traj.id, step_observer=observer
        )
        for text, _ in parsed:
            traces.append(
                ActivationTrace(
                    seq_id=traj.id,
                    locator=text,
                    matrix=np.stack(rows[text]),
                    recent_ids=previous,
                )
            )
        records[traj.id] = PredictionRecord(
            observed=points[:t_obs],
            truth=points[t_obs : t_obs + horizon],
            predicted=predicted,
            seq_id=traj.id,
        )
    return traces, records


# ---------------------------------------------------------------------------
# correlation structure


def correlation_matrix(traces):
    """Pearson correlation of flattened traces.

    Returns (corr, flagged): zero-variance traces are flagged and their
    correlations defined as 0 (diagonal stays 1).
    """
    if len(traces) < 2:
        raise DataError("need at least two traces to correlate")
    shapes = {t.matrix.shape for t in traces}
    if len(shapes) != 1:
        raise DataError(f"traces have mixed shapes {sorted(shapes)}")
    rows = np.stack([t.matrix.ravel() for t in traces])
    flagged = rows.std(axis=1) == 0.0
    safe = rows.copy()
    safe[flagged] = 0.0
    safe[flagged, 0] = 1.0  # placeholder variance; rows get zeroed below
    corr = np.corrcoef(safe)
    corr[flagged, :] = 0.0
    corr[:, flagged] = 0.0
    np.fill_diagonal(corr, 1.0)
    return corr, flagged


def top_correlated(traces, group_size=3, max_groups=5):
    """Greedy clique agglomeration on the correlation graph.

    Repeatedly seeds a group with the best unused pair, then grows it by
    the trace with the highest mean correlation to the members.  Returns
    [(member indices, mean pairwise correlation)] best first.
    """
    if group_size < 2:
        raise ConfigError(f"group_size must be >= 2, got {group_size}")
    if len(traces) < group_size:
        raise DataError(f"need >= {group_size} traces, got {len(traces)}")
    corr, _ = correlation_matrix(traces)
    n = corr.shape[0]
    pairs = sorted(
        ((i, j) for i in range(n) for j in range(i + 1, n)),
        key=lambda ij: (-corr[ij[0], ij[1]], ij[0], ij[1]),
    )
    used = set()
    groups = []
    for i, j in pairs:
        if i in used or j in used:
            continue
        members = [i, j]
        while len(members) < group_size:
            best, best_score = None, -np.inf
            for k in range(n):
                if k in used or k in members:
                    continue
                score = float(np.mean([corr[k, m] for m in members]))
                if score > best_score:
                    best, best_score = k, score
            if best is None:
                break
            members.append(best)
        if len(members) < group_size:
            break  # nothing left to complete a group with
        members = sorted(members)
        score = float(
            np.mean([corr[a, b] for x, a in enumerate(members) for b in members[x + 1 :]])
        )
        groups.append((members, score))
        used.update(members)
        if len(groups) == max_groups:
            break
    return groups


# ---------------------------------------------------------------------------
# label groupings


def majority_label(ids, label_map):
    """Plurality label over a window of trajectory ids; ties take the
    smallest label; an empty window gives -1."""
    if not ids:
        return -1
    counts = {}
    for i in ids:
        if i not in label_map:
            raise DataError(f"trajectory id '{i}' has no label")
        lab = int(label_map[i])
        counts[lab] = counts.get(lab, 0) + 1
    best = max(sorted(counts), key=lambda lab: counts[lab])
    return best


def mean_within_group_correlation(traces, labels):
    """Mean Pearson correlation over trace pairs sharing a label."""
    if len(labels) != len(traces):
        raise DataError(f"{len(labels)} labels for {len(traces)} traces")
    corr, _ = correlation_matrix(traces)
    values = []
    for i in range(len(traces)):
        for j in range(i + 1, len(traces)):
            if labels[i] == labels[j]:
                values.append(corr[i, j])
    if not values:
        raise DataError("no within-group pairs under this labeling")
    return float(np.mean(values))


def grouping_contrast(traces, label_map):
    """Compare grouping by the sequence's own label against grouping by
    the recent-history majority label.

    Returns {"by_input": mean, "by_history": mean, "input_minus_history":
    difference}; positive difference means traces organize around the
    current input, negative around what the stream recently contained.
    """
    input_labels = [majority_label([t.seq_id], label_map) for t in traces]
    history_labels = [majority_label(t.recent_ids, label_map) for t in traces]
    by_input = mean_within_group_correlation(traces, input_labels)
    by_history = mean_within_group_correlation(traces, history_labels)
    return {
        "by_input": by_input,
        "by_history": by_history,
        "input_minus_history": by_input - by_history,
    }


# ---------------------------------------------------------------------------
# panel export


def export_panels(groups, traces, records, dataset_points, out_dir, highlight_units=3):
    """Write the three-panel evidence for each group member: the
    activation matrix, the input/prediction picture, and the last-10
    stream history shaded by recency.  Each panel is an SVG with a
    sibling CSV holding the plotted numbers; an index.json ties the set
    together.  Returns the index dictionary."""
    import json
    import os

    from . import plots
    from .reports import write_csv, write_json

    os.makedirs(out_dir, exist_ok=True)
    index = {"groups": []}
    for g, (members, score) in enumerate(groups):
        entry = {"score": score, "members": []}
        for m, trace_index in enumerate(members):
            trace = traces[trace_index]
            stem = f"group{g}_member{m}"
            record = records.get(trace.seq_id)
            if record is None:
                raise DataError(f"no prediction record for sequence {trace.seq_id}")

            act_csv = os.path.join(out_dir, f"{stem}_activations.csv")
            header = ["step"] + [f"unit{u}" for u in range(trace.matrix.shape[1])]
            write_csv(
                act_csv,
                header,
                [[t] + list(row) for t, row in enumerate(trace.matrix)],
            )
            plots.activation_panel(
                trace.matrix,
                os.path.join(out_dir, f"{stem}_activations.svg"),
                highlight=highlight_units,
                title=f"{trace.locator} on {trace.seq_id}",
            )

            pred_csv = os.path.join(out_dir, f"{stem}_trajectory.csv")
            rows = []
            for t, pt in enumerate(record.observed):
                rows.append(["observed", t] + list(pt))
            for t, (pt, tp) in enumerate(zip(record.predicted, record.truth)):
                rows.append(["predicted", len(record.observed) + t] + list(pt))
                rows.append(["truth", len(record.observed) + t] + list(tp))
            dims = record.observed.shape[1]
            write_csv(pred_csv, ["phase", "step"] + ["xyz"[d] for d in range(dims)], rows)
            plots.trajectory_panel(
                record.observed,
                record.predicted,
                record.truth,
                os.path.join(out_dir, f"{stem}_trajectory.svg"),
                title=f"{trace.seq_id}",
            )

            hist_csv = os.path.join(out_dir, f"{stem}_history.csv")
            rows = []
            history = []
            for age, hid in enumerate(reversed(trace.recent_ids)):  # newest first
                if hid not in dataset_points:
                    raise DataError(f"history id '{hid}' not in the dataset")
                pts = np.asarray(dataset_points[hid], dtype=np.float64)
                history.append((hid, age, pts))
                for t, pt in enumerate(pts):
                    rows.append([hid, age, t] + list(pt))
            write_csv(hist_csv, ["id", "age", "step", "x", "y", "z"][: 3 + dims], rows)
            plots.history_panel(
                history, os.path.join(out_dir, f"{stem}_history.svg"),
                title=f"before {trace.seq_id}",
            )

            entry["members"].append(
                {
                    "sequence": trace.seq_id,
                    "locator": trace.locator,
                    "files": [
                        f"{stem}_activations.svg",
                        f"{stem}_activations.csv",
                        f"{stem}_trajectory.svg",
                        f"{stem}_trajectory.csv",
                        f"{stem}_history.svg",
                        f"{stem}_history.csv",
                    ],
                }
            )
        index["groups"].append(entry)
    write_json(os.path.join(out_dir, "index.json"), index)
    return index
