"""Training and evaluation over ordered trajectory streams.

One trajectory = one optimizer step: forward through the observed prefix
(inserting embeddings into memory), closed-loop prediction of the suffix,
MSE on normalized coordinates, backprop, clipped SGD with momentum.
Memory persists across trajectories within an epoch and is re-warmed from
scratch each epoch; evaluation continues the stream from the trained
memory state so the test split follows the train split chronologically.
"""

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from . import __version__
from . import kernel as K
from .errors import DataError, NumericalError
from .flat import FlatMemory
from .model import (
    ModelConfig,
    TrajectoryModel,
    config_from_dict,
    mse_loss,
    run_sequence,
)
from .params import decode_arrays, encode_arrays, gradients, lift
from .tree import TreeMemory


@dataclass
class TrainConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    learning_rate: float = 1e-3
    momentum: float = 0.9
    clip_norm: float = 5.0
    epochs: int = 50
    seed: int = 0
    t_obs: int = 25
    t_pred: int = 50
    split_fraction: float = 0.7

    def validate(self):
        self.model.validate()
        if self.t_obs < 1:
            raise DataError(f"t_obs must be >= 1, got {self.t_obs}")
        if self.t_pred <= self.t_obs:
            raise DataError(f"t_pred ({self.t_pred}) must exceed t_obs ({self.t_obs})")
        if not 0.0 < self.split_fraction <= 1.0:
            raise DataError(f"split fraction {self.split_fraction} outside (0, 1]")
        return self

    @property
    def horizon(self):
        return self.t_pred - self.t_obs


def chronological_split(trajectories, fraction):
    """Stable sort by start time, first floor(fraction*n) to train."""
    for t in trajectories:
        if t.t0 is None:
            raise DataError(f"trajectory {t.id}: missing start timestamp")
    ordered = sorted(trajectories, key=lambda t: t.t0)
    n_train = int(len(ordered) * fraction)
    return ordered[:n_train], ordered[n_train:]


def global_norm(grads):
    return float(np.sqrt(sum(float((g * g).sum()) for g in grads.values())))


def clip_by_global_norm(grads, max_norm):
    """Scale all gradients down to the given global norm; returns the
    pre-clip norm."""
    norm = global_norm(grads)
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / norm
        for name in grads:
            grads[name] = grads[name] * scale
    return norm

def check_finite_gradients(grads):
    for name, g in grads.items():
        if not np.isfinite(g).all():
            raise NumericalError(f"non-finite gradient in parameter block {name}")


def sgd_momentum_step(params, grads, velocity, learning_rate, momentum):
    """v <- mu*v - eta*g; theta <- theta + v (in place)."""
    for name in params:
        velocity[name] = momentum * velocity[name] - learning_rate * grads[name]
        params[name] += velocity[name]


def _check_lengths(trajectories, t_pred):
    for t in trajectories:
        if len(t.points) < t_pred:
            raise DataError(
                f"trajectory {t.id}: {len(t.points)} points < t_pred {t_pred}"
            )


def train(model, trajectories, config, log=None):
    """Run the configured number of epochs over the stream in order.

    Returns (history, velocity) where history is the per-epoch mean loss.
    """
    config.validate()
    if not trajectories:
        raise DataError("training stream is empty")
    _check_lengths(trajectories, config.t_pred)
    velocity = {name: np.zeros_like(arr) for name, arr in model.params.items()}
    history = []
    for epoch in range(config.epochs):
        model.reset_memory()
        losses = []
        for traj in trajectories:
            points = np.asarray(traj.points, dtype=np.float64)
            observed = points[: config.t_obs]
            truth = points[config.t_obs : config.t_pred]
            with K.recording() as tape:
                lifted = lift(model.params)
                model.memory.detach()
                model.memory.begin_sequence(traj.id)
                preds = run_sequence(
                    lifted, model.memory, observed, config.horizon, config.model
                )
                loss = mse_loss(preds, truth)
                loss_value = float(loss.data)
                if not np.isfinite(loss_value):
                    raise NumericalError(
                        f"non-finite loss {loss_value} at epoch {epoch}, trajectory {traj.id}"
                    )
                tape.backward(loss)
            grads = gradients(lifted, model.params)
            check_finite_gradients(grads)
            clip_by_global_norm(grads, config.clip_norm)
            sgd_momentum_step(
                model.params, grads, velocity, config.learning_rate, config.momentum
            )
            losses.append(loss_value)
        history.append(float(np.mean(losses)))
        if log is not None:
            log(f"epoch {epoch + 1}/{config.epochs}  mean loss {history[-1]:.6f}")
    return history, velocity


def evaluate(model, trajectories, config):
    """Predict every trajectory's suffix, advancing the memory through the
    stream.  Returns a list of (trajectory, predicted) in the model's
    (normalized) coordinate space."""
    config.validate()
    _check_lengths(trajectories, config.t_pred)
    results = []
    for traj in trajectories:
        points = np.asarray(traj.points, dtype=np.float64)
        predicted = model.predict(
            points[: config.t_obs], config.horizon, seq_id=traj.id
        )
        results.append((traj, predicted))
    return results


# ---------------------------------------------------------------------------
# checkpointing


def save_checkpoint(path, model, config, velocity=None, stream_position=0,
                    metric_log=(), normalization=None):
    if velocity is None:
        velocity = {name: np.zeros_like(arr) for name, arr in model.params.items()}
    payload = {
        "format_version": 1,
        "tool_version": __version__,
        "byte_order": "little",
        "config": asdict(config),
        "normalization": normalization,
        "params": encode_arrays(model.params),
        "velocity": encode_arrays(velocity),
        "memory": model.memory.snapshot(),
        "stream_position": int(stream_position),
        "metric_log": list(metric_log),
    }
    with open(path, "w") as fh:
        json.dump(payload, fh)


def load_checkpoint(path):
    """Returns (model, train_config, extras) where extras carries velocity,
    stream position, metric log, and the normalization manifest dict."""
    with open(path) as fh:
        payload = json.load(fh)
    for key in ("config", "params", "memory"):
        if key not in payload:
            raise DataError(f"checkpoint {path}: missing field {key!r}")
    if payload.get("byte_order", "little") != "little":
        raise DataError(f"checkpoint {path}: unsupported byte order")
    cfg_dict = dict(payload["config"])
    model_cfg = config_from_dict(cfg_dict.pop("model"))
    known = {f: cfg_dict[f] for f in TrainConfig.__dataclass_fields__
             if f != "model" and f in cfg_dict}
    config = TrainConfig(model=model_cfg, **known).validate()
    model = TrajectoryModel(model_cfg, params=decode_arrays(payload["params"]))
    snap = payload["memory"]
    if snap["variant"] == "tree":
        model.memory = TreeMemory.from_snapshot(snap)
    else:
        model.memory = FlatMemory.from_snapshot(snap)
    extras = {
        "velocity": decode_arrays(payload.get("velocity", {})),
        "stream_position": payload.get("stream_position", 0),
        "metric_log": payload.get("metric_log", []),
        "normalization": payload.get("normalization"),
    }
    return model, config, extras
