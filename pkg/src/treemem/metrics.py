"""Trajectory error metrics, implemented exactly as their defining sums.

Conventions shared by all of them:

- a prediction record holds the observed prefix, the true suffix, and the
  predicted suffix (equal lengths H), in original (denormalized) units;
- residuals are predicted minus truth;
- the averaging denominators use n*(H-1) — one less than the number of
  predicted steps — exactly as the definitions are written, so records
  need at least two predicted steps;
- the along/cross decomposition projects the residual onto the heading
  frame of the *predicted* course from North;
- the average displacement error is a mean of *squared* displacements
  while the final displacement error takes the root; both are implemented
  as defined, with an optional conventionally-rooted average alongside.

Signed along/cross averages can cancel; absolute-value companions are
reported as clearly-labeled diagnostic extras.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import DataError

NONLINEARITY_EPS = 1e-3  # threshold relative to the bounding-box diagonal


@dataclass
class PredictionRecord:
    observed: np.ndarray  # (T_obs, d)
    truth: np.ndarray  # (H, d)
    predicted: np.ndarray  # (H, d)
    seq_id: str = ""

    def __post_init__(self):
        self.observed = np.asarray(self.observed, dtype=np.float64)
        self.truth = np.asarray(self.truth, dtype=np.float64)
        self.predicted = np.asarray(self.predicted, dtype=np.float64)
        if self.truth.shape != self.predicted.shape:
            raise DataError(
                f"record {self.seq_id}: truth {self.truth.shape} vs "
                f"predicted {self.predicted.shape}"
            )
        if self.truth.ndim != 2 or self.truth.shape[1] not in (2, 3):
            raise DataError(f"record {self.seq_id}: bad point shape {self.truth.shape}")

    @property
    def dim(self):
        return self.truth.shape[1]

    @property
    def horizon(self):
        return self.truth.shape[0]


def _check_records(records, need_dim=None):
    if not records:
        raise DataError("empty record set")
    horizons = {r.horizon for r in records}
    if len(horizons) != 1:
        raise DataError(f"records have mixed horizons {sorted(horizons)}")
    (horizon,) = horizons
    if horizon < 2:
        raise DataError("metrics need at least 2 predicted steps (denominator H-1)")
    dims = {r.dim for r in records}
    if len(dims) != 1:
        raise DataError(f"records have mixed dimensions {sorted(dims)}")
    (dim,) = dims
    if need_dim is not None and dim != need_dim:
        raise DataError(f"metric requires {need_dim}-D records, got {dim}-D")
    return horizon, dim


def course_from_north(points):
    """Heading angle per point: atan2(d_east, d_north) of the segment
    ending there (clockwise from +y).  The first point reuses the first
    segment's angle; coincident consecutive points reuse the previous
    angle (leading ones borrow the first defined angle; an everywhere-
    stationary trajectory gets course 0)."""
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[0] < 2:
        raise DataError(f"course_from_north needs >= 2 points, got shape {pts.shape}")
    seg = pts[1:, :2] - pts[:-1, :2]
    moved = (seg[:, 0] != 0.0) | (seg[:, 1] != 0.0)
    angles = np.arctan2(seg[:, 0], seg[:, 1])
    if not moved.any():
        angles[:] = 0.0
    else:
        first = int(np.argmax(moved))
        angles[:first] = angles[first]
        for t in range(first + 1, len(angles)):
            if not moved[t]:
                angles[t] = angles[t - 1]
    return np.concatenate([angles[:1], angles])


def _along_cross_terms(record):
    """Per-step (along, cross) residual components in the predicted
    heading frame."""
    theta = course_from_north(record.predicted)
    delta = record.predicted[:, :2] - record.truth[:, :2]
    along = delta[:, 0] * np.sin(theta) + delta[:, 1] * np.cos(theta)
    cross = delta[:, 0] * np.cos(theta) - delta[:, 1] * np.sin(theta)
    return along, cross


def along_cross_track(records, absolute=False):
    """Signed (or absolute, for diagnostics) average along/cross track
    errors over all records and steps."""
    horizon, _ = _check_records(records)
    denom = len(records) * (horizon - 1)
    ae = ce = 0.0
    for r in records:
        along, cross = _along_cross_terms(r)
        if absolute:
            along, cross = np.abs(along), np.abs(cross)
        ae += along.sum()
        ce += cross.sum()
    return ae / denom, ce / denom


def altitude_error(records):
    """Per-record root of the summed squared altitude residuals, averaged
    with the same n*(H-1) denominator."""
    horizon, _ = _check_records(records, need_dim=3)
    denom = len(records) * (horizon - 1)
    total = 0.0
    for r in records:
        dz = r.predicted[:, 2] - r.truth[:, 2]
        total += np.sqrt((dz * dz).sum())
    return total / denom


def nonlinearity_indicator(points):
    """Boolean per point: curvature proxy |p[t+1] - 2 p[t] + p[t-1]| above
    a relative threshold (1e-3 of the bounding-box diagonal); endpoints
    copy their neighbor; fewer than 3 points or a degenerate bounding box
    give all-False."""
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2:
        raise DataError(f"nonlinearity_indicator: bad shape {pts.shape}")
    m = pts.shape[0]
    if m < 3:
        return np.zeros(m, dtype=bool)
    second = pts[2:] - 2.0 * pts[1:-1] + pts[:-2]
    diag = float(np.linalg.norm(pts.max(axis=0) - pts.min(axis=0)))
    interior = np.linalg.norm(second, axis=1) > NONLINEARITY_EPS * diag
    return np.concatenate([interior[:1], interior, interior[-1:]])


def displacement_errors(records, rooted=False):
    """(ADE, FDE, (n-ADE or None, nonlinear step count)).

    ADE averages squared displacement norms over n*(H-1); FDE averages the
    final displacement norm over records; n-ADE restricts the squared
    average to steps the ground-truth curvature marks nonlinear, with the
    step count as denominator — zero such steps leaves it undefined.
    ``rooted=True`` returns the per-step-rooted ADE variant instead of the
    squared one.
    """
    horizon, _ = _check_records(records, need_dim=2)
    denom = len(records) * (horizon - 1)
    total = 0.0
    final = 0.0
    nl_sum = 0.0
    nl_count = 0
    for r in records:
        diff = r.predicted - r.truth
        sq = (diff * diff).sum(axis=1)
        total += np.sqrt(sq).sum() if rooted else sq.sum()
        final += float(np.sqrt(sq[-1]))
        mark = nonlinearity_indicator(r.truth)
        nl_sum += sq[mark].sum()
        nl_count += int(mark.sum())
    ade = total / denom
    fde = final / len(records)
    n_ade = (nl_sum / nl_count) if nl_count > 0 else None
    return ade, fde, (n_ade, nl_count)


@dataclass
class MetricsReport:
    dim: int
    values: dict = field(default_factory=dict)
    counts: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)

    def rows(self):
        """(metric, value, count) rows; undefined values render as None."""
        out = []
        for name, value in self.values.items():
            out.append((name, value, self.counts.get(name, self.counts.get("records"))))
        return out

    def to_dict(self):
        return {
            "dim": self.dim,
            "values": {k: v for k, v in self.values.items()},
            "counts": dict(self.counts),
            "notes": list(self.notes),
        }


def build_report(records, rooted_ade=False):
    """All metrics for the record dimensionality, plus diagnostics."""
    horizon, dim = _check_records(records)
    report = MetricsReport(dim=dim)
    report.counts["records"] = len(records)
    report.counts["steps_per_record"] = horizon
    report.counts["denominator_steps"] = horizon - 1
    if dim == 3:
        ae, ce = along_cross_track(records)
        ale = altitude_error(records)
        report.values["AE"] = ae
        report.values["CE"] = ce
        report.values["ALE"] = ale
        ae_abs, ce_abs = along_cross_track(records, absolute=True)
        report.values["AE_abs"] = ae_abs
        report.values["CE_abs"] = ce_abs
        report.notes.append("AE/CE are signed averages; *_abs are diagnostic extras")
    else:
        ade, fde, (n_ade, nl_count) = displacement_errors(records)
        report.values["ADE"] = ade
        report.values["FDE"] = fde
        report.values["n-ADE"] = n_ade
        report.counts["n-ADE"] = nl_count
        report.notes.append("ADE averages squared displacements; FDE is rooted")
        if n_ade is None:
            report.notes.append("n-ADE undefined: zero nonlinear steps")
        if rooted_ade:
            rooted, _, _ = displacement_errors(records, rooted=True)
            report.values["ADE_rooted"] = rooted
            report.notes.append("ADE_rooted is the conventional rooted variant")
    return report
