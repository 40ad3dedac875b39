"""Trajectory datasets: file formats, preprocessing, and synthetic streams.

A trajectory is an identifier, a start timestamp (used only for
chronological ordering), and a (T, d) float64 point array with d in
{2, 3}.  The on-disk format is JSON lines, one trajectory per line; a
flat CSV import (id, seq, x, y[, z][, t0]) is provided for external data.

The synthetic regime stream is the workhorse for experiments: a handful
of smooth lane prototypes that share an entry corridor and diverge late,
emitted in recurring blocks so that the recent past of the stream — not
the observed prefix — carries the information about which lane a
trajectory will take.
"""

import csv
import json
import math
from dataclasses import dataclass
from datetime import datetime, timedelta

import numpy as np
from scipy.interpolate import make_interp_spline

from .errors import ConfigError, DataError

BASE_TIME = datetime(2026, 1, 1, 0, 0, 0)


@dataclass
class Trajectory:
    id: str
    t0: datetime
    points: np.ndarray

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        if self.points.ndim != 2 or self.points.shape[1] not in (2, 3):
            raise DataError(f"trajectory {self.id}: bad point shape {self.points.shape}")
        if not np.isfinite(self.points).all():
            raise DataError(f"trajectory {self.id}: non-finite coordinates")

    @property
    def dim(self):
        return self.points.shape[1]

    def __len__(self):
        return self.points.shape[0]


def _check_uniform_dim(trajectories):
    dims = {t.dim for t in trajectories}
    if len(dims) > 1:
        raise DataError(f"dataset mixes point dimensions {sorted(dims)}")


def save_jsonl(path, trajectories):
    """One JSON object per line: id, ISO start time, nested point list."""
    with open(path, "w", encoding="utf-8") as fh:
        for traj in trajectories:
            row = {
                "id": traj.id,
                "t0": traj.t0.isoformat(),
                "points": traj.points.tolist(),
            }
            fh.write(json.dumps(row) + "\n")


def load_jsonl(path):
    trajectories = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: not valid JSON ({exc})") from exc
            for key in ("id", "t0", "points"):
                if key not in row:
                    raise DataError(f"{path}:{lineno}: missing field '{key}'")
            try:
                t0 = datetime.fromisoformat(row["t0"])
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: bad timestamp ({exc})") from exc
            try:
                traj = Trajectory(id=str(row["id"]), t0=t0, points=row["points"])
            except DataError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from exc
            trajectories.append(traj)
    if not trajectories:
        raise DataError(f"{path}: no trajectories")
    _check_uniform_dim(trajectories)
    return trajectories


def load_csv(path):
    """Flat-table import.  Required columns: id, seq, x, y; optional z and
    t0 (constant per id).  Rows are grouped by id in first-appearance
    order and sorted by seq within a group; absent timestamps are
    synthesized from that order so chronological splitting still works."""
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise DataError(f"{path}: empty CSV")
        cols = set(reader.fieldnames)
        missing = {"id", "seq", "x", "y"} - cols
        if missing:
            raise DataError(f"{path}: missing columns {sorted(missing)}")
        has_z = "z" in cols
        has_t0 = "t0" in cols
        groups = {}
        order = []
        times = {}
        for lineno, row in enumerate(reader, start=2):
            tid = row["id"]
            try:
                seq = int(row["seq"])
                point = [float(row["x"]), float(row["y"])]
                if has_z:
                    point.append(float(row["z"]))
            except (TypeError, ValueError) as exc:
                raise DataError(f"{path}:{lineno}: bad numeric field ({exc})") from exc
            if tid not in groups:
                groups[tid] = []
                order.append(tid)
            groups[tid].append((seq, point))
            if has_t0:
                try:
                    stamp = datetime.fromisoformat(row["t0"])
                except ValueError as exc:
                    raise DataError(f"{path}:{lineno}: bad timestamp ({exc})") from exc
                if tid in times and times[tid] != stamp:
                    raise DataError(f"{path}:{lineno}: conflicting t0 for id '{tid}'")
                times[tid] = stamp
    if not order:
        raise DataError(f"{path}: no data rows")
    trajectories = []
    for rank, tid in enumerate(order):
        rows = sorted(groups[tid], key=lambda item: item[0])
        seqs = [s for s, _ in rows]
        if len(set(seqs)) != len(seqs):
            raise DataError(f"{path}: duplicate seq values for id '{tid}'")
        t0 = times.get(tid, BASE_TIME + timedelta(minutes=rank))
        trajectories.append(Trajectory(id=tid, t0=t0, points=[p for _, p in rows]))
    _check_uniform_dim(trajectories)
    return trajectories


def filter_short(trajectories, min_points=3):
    """Drop trajectories with fewer than min_points points; returns the
    kept list and the dropped ids."""
    kept, dropped = [], []
    for traj in trajectories:
        (kept if len(traj) >= min_points else dropped).append(traj)
    return kept, [t.id for t in dropped]


def resample_points(points, n, mode="arc"):
    """Resample a polyline to n points, either uniformly along arc length
    (default) or uniformly in source index.  Endpoints are preserved
    exactly; a polyline of coincident points repeats its single location."""
    if mode not in ("arc", "index"):
        raise ConfigError(f"unknown resampling mode '{mode}'")
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[0] < 2:
        raise DataError(f"resampling needs >= 2 points, got shape {pts.shape}")
    if n < 2:
        raise DataError(f"resampling target must be >= 2, got {n}")
    if mode == "index":
        grid = np.arange(pts.shape[0], dtype=np.float64)
        targets = np.linspace(0.0, pts.shape[0] - 1.0, n)
    else:
        # Collapse runs of coincident points so the arc-length grid is
        # strictly increasing (np.interp requires it).
        keep = np.concatenate([[True], (np.diff(pts, axis=0) != 0.0).any(axis=1)])
        pts = pts[keep]
        if pts.shape[0] == 1:
            return np.repeat(pts, n, axis=0)
        grid = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(pts, axis=0), axis=1))])
        targets = np.linspace(0.0, grid[-1], n)
    return np.column_stack([np.interp(targets, grid, pts[:, j]) for j in range(pts.shape[1])])


def resample(trajectory, n, mode="arc"):
    return Trajectory(
        id=trajectory.id, t0=trajectory.t0, points=resample_points(trajectory.points, n, mode)
    )


@dataclass
class NormalizationManifest:
    """Global per-dimension min/max of a training split, used to scale
    coordinates into [0, 1] and back."""

    mins: np.ndarray
    maxs: np.ndarray

    def __post_init__(self):
        self.mins = np.asarray(self.mins, dtype=np.float64)
        self.maxs = np.asarray(self.maxs, dtype=np.float64)
        if self.mins.shape != self.maxs.shape or self.mins.ndim != 1:
            raise DataError("normalization bounds must be matching 1-D arrays")
        if not (self.maxs > self.mins).all():
            raise DataError("degenerate normalization range (max <= min)")

    @classmethod
    def from_trajectories(cls, trajectories):
        if not trajectories:
            raise DataError("cannot derive normalization from an empty set")
        _check_uniform_dim(trajectories)
        stacked = np.concatenate([t.points for t in trajectories], axis=0)
        return cls(mins=stacked.min(axis=0), maxs=stacked.max(axis=0))

    def scale(self, points):
        return (np.asarray(points, dtype=np.float64) - self.mins) / (self.maxs - self.mins)

    def unscale(self, points):
        return np.asarray(points, dtype=np.float64) * (self.maxs - self.mins) + self.mins

    def apply(self, trajectory):
        return Trajectory(
            id=trajectory.id, t0=trajectory.t0, points=self.scale(trajectory.points)
        )

    def to_dict(self):
        return {"mins": self.mins.tolist(), "maxs": self.maxs.tolist()}

    @classmethod
    def from_dict(cls, payload):
        try:
            return cls(mins=payload["mins"], maxs=payload["maxs"])
        except (KeyError, TypeError) as exc:
            raise DataError(f"bad normalization payload: {exc}") from exc


# ---------------------------------------------------------------------------
# synthetic streams

SCENE = 100.0  # square scene side length; altitude spans [0, 1000]


def _lane_prototype(rng, n_points, dims, exit_fraction, lane_style="fork"):
    """One smooth lane crossing the scene west to east.

    ``fork`` lanes share a straight trunk over the western half and only
    bend toward their per-lane eastern exit late, so the observed prefix
    alone cannot tell lanes apart; ``parallel`` lanes run at their own
    height the whole way and are distinguishable from the first point.
    ``exit_fraction`` in [0, 1] places the lane's eastern exit."""
    exit_y = SCENE * (0.15 + 0.7 * exit_fraction)
    entry_y = exit_y if lane_style == "parallel" else 0.5 * SCENE
    waypoints = np.array(
        [
            [0.0, entry_y],
            [0.25 * SCENE, entry_y],
            [0.5 * SCENE, entry_y],
            [0.75 * SCENE, 0.5 * (entry_y + exit_y)],
            [SCENE, exit_y],
        ]
    )
    knots = np.linspace(0.0, 1.0, waypoints.shape[0])
    spline = make_interp_spline(knots, waypoints, k=3)
    path = spline(np.linspace(0.0, 1.0, n_points))
    if dims == 3:
        crest = 1000.0 * (0.3 + 0.5 * exit_fraction)
        profile = crest * np.sin(np.linspace(0.0, np.pi, n_points))
        path = np.column_stack([path, profile])
    return path


def _validate_schedule(schedule, n_regimes):
    if n_regimes < 2:
        raise ConfigError(f"need at least 2 regimes, got {n_regimes}")
    if any(not (0 <= s < n_regimes) for s in schedule):
        raise ConfigError(f"schedule references regimes outside 0..{n_regimes - 1}")
    counts = np.bincount(schedule, minlength=n_regimes)
    lacking = [int(r) for r in range(n_regimes) if counts[r] < 2]
    if lacking:
        raise ConfigError(
            f"regimes {lacking} recur fewer than twice; the stream must revisit "
            "every regime"
        )


def synth_regime(
    seed,
    n_regimes=4,
    n_blocks=8,
    block_size=40,
    n_points=50,
    sigma_frac=0.02,
    dims=2,
    schedule=None,
    lane_style="fork",
):
    """Blocked recurring-regime stream.

    Returns (trajectories, labels, schedule): a chronologically ordered
    list of jittered lane trajectories, the per-trajectory regime label,
    and the per-block schedule.  The default schedule is round-robin, so
    every regime recurs; per-point Gaussian jitter has standard deviation
    sigma_frac times the scene diagonal.
    """
    if dims not in (2, 3):
        raise ConfigError(f"dims must be 2 or 3, got {dims}")
    if lane_style not in ("fork", "parallel"):
        raise ConfigError(f"lane_style must be 'fork' or 'parallel', got {lane_style!r}")
    if n_blocks < 1 or block_size < 1 or n_points < 2:
        raise ConfigError("n_blocks, block_size must be >= 1 and n_points >= 2")
    if sigma_frac < 0:
        raise ConfigError(f"sigma_frac must be >= 0, got {sigma_frac}")
    if schedule is None:
        schedule = [b % n_regimes for b in range(n_blocks)]
    schedule = [int(s) for s in schedule]
    if len(schedule) != n_blocks:
        raise ConfigError(f"schedule length {len(schedule)} != n_blocks {n_blocks}")
    _validate_schedule(schedule, n_regimes)
    rng = np.random.default_rng(seed)
    fractions = np.linspace(0.0, 1.0, n_regimes)
    prototypes = [_lane_prototype(rng, n_points, dims, f, lane_style) for f in fractions]
    diag = math.sqrt(dims) * SCENE if dims == 2 else math.sqrt(2 * SCENE**2 + 1000.0**2)
    sigma = sigma_frac * diag
    trajectories, labels = [], []
    index = 0
    for block, regime in enumerate(schedule):
        for _ in range(block_size):
            jitter = rng.normal(0.0, sigma, (n_points, dims)) if sigma > 0 else 0.0
            trajectories.append(
                Trajectory(
                    id=f"traj{index:05d}",
                    t0=BASE_TIME + timedelta(minutes=index),
                    points=prototypes[regime] + jitter,
                )
            )
            labels.append(regime)
            index += 1
    return trajectories, labels, schedule


def synth_linear(seed, n=20, n_points=50, dims=2):
    """Constant-velocity trajectories between random scene points — a
    smoke-test stream any working model should fit quickly."""
    if dims not in (2, 3):
        raise ConfigError(f"dims must be 2 or 3, got {dims}")
    if n < 1 or n_points < 2:
        raise ConfigError("need n >= 1 and n_points >= 2")
    rng = np.random.default_rng(seed)
    high = np.array([SCENE] * 2 + [1000.0] * (dims - 2))
    trajectories = []
    for i in range(n):
        start = rng.uniform(0.0, 1.0, dims) * high
        end = rng.uniform(0.0, 1.0, dims) * high
        points = np.linspace(start, end, n_points)
        trajectories.append(
            Trajectory(id=f"lin{i:05d}", t0=BASE_TIME + timedelta(minutes=i), points=points)
        )
    return trajectories
