"""Model assembly: configuration, parameter initialization, and the
sequence-to-sequence forward pass shared by training and inference.

The forward contract: every observed point is encoded and its embedding
inserted into memory (reads happen against the pre-insertion state);
predictions are closed-loop — each output is fed back as the next input —
and the memory is frozen for the whole prediction horizon.
"""

from dataclasses import asdict, dataclass

import numpy as np

from . import kernel as K
from .attention import AttentionHead, init_attention_params
from .encoder import Encoder, init_encoder_params
from .errors import ConfigError, DataError
from .flat import FlatMemory, SlotUpdater, init_slot_params
from .params import count_params, lift
from .tree import RecursiveCell, TreeMemory, init_cell_params

MEMORY_VARIANTS = ("tree", "dmn", "nse")


@dataclass
class ModelConfig:
    input_dim: int = 2
    embed_dim: int = 300
    memory: str = "tree"
    capacity: int = 512  # tree leaves or flat slots
    read_depth: int = 4  # tree levels visible to attention
    attn_hidden: int = 0  # 0 means "same as embed_dim"

    def validate(self):
        if self.input_dim not in (2, 3):
            raise ConfigError(f"input_dim must be 2 or 3, got {self.input_dim}")
        if self.memory not in MEMORY_VARIANTS:
            raise ConfigError(f"memory must be one of {MEMORY_VARIANTS}, got {self.memory!r}")
        if self.embed_dim < 1:
            raise ConfigError(f"embed_dim must be positive, got {self.embed_dim}")
        if self.memory == "tree":
            if self.capacity < 2 or self.capacity & (self.capacity - 1):
                raise ConfigError(f"tree capacity must be a power of two, got {self.capacity}")
            depth = self.capacity.bit_length() - 1
            if not 1 <= self.read_depth <= depth + 1:
                raise ConfigError(
                    f"read_depth {self.read_depth} outside 1..{depth + 1} for capacity {self.capacity}"
                )
        elif self.capacity < 1:
            raise ConfigError(f"flat capacity must be >= 1, got {self.capacity}")
        return self

    @property
    def hidden_dim(self):
        return self.attn_hidden if self.attn_hidden else self.embed_dim


def init_model_params(config, rng):
    config.validate()
    params = {}
    params.update(init_encoder_params(rng, config.input_dim, config.embed_dim))
    params.update(
        init_attention_params(
            rng, config.embed_dim, config.input_dim, hidden_dim=config.hidden_dim
        )
    )
    if config.memory == "tree":
        params.update(init_cell_params(rng, config.embed_dim))
    elif config.memory == "dmn":
        params.update(init_slot_params(rng, config.embed_dim))
    return params


def param_count(config):
    """Closed-form trainable-parameter count for a configuration."""
    d, k = config.input_dim, config.embed_dim
    k_h = config.hidden_dim
    total = 4 * (k * d + k * k + k)  # encoder
    total += k_h * 2 * k + k_h + k_h + 1 + d * k  # attention + merge
    if config.memory == "tree":
        total += 17 * k * k
    elif config.memory == "dmn":
        total += 4 * (k + k * k + k)
    return total


def matched_flat_config(tree_config, variant="dmn", capacity=None):
    """Flat-baseline configuration whose parameter count is closest to the
    tree model's, for a fair comparison.

    Scans the flat embedding dimension and returns (config, relative
    difference).  Raises if no candidate lands within 5%.
    """
    tree_config.validate()
    target = param_count(tree_config)
    slots = capacity if capacity is not None else tree_config.capacity
    best = None
    for k_flat in range(1, 4 * tree_config.embed_dim + 1):
        cand = ModelConfig(
            input_dim=tree_config.input_dim,
            embed_dim=k_flat,
            memory=variant,
            capacity=slots,
            read_depth=1,
        )
        diff = abs(param_count(cand) - target) / target
        if best is None or diff < best[1]:
            best = (cand, diff)
    if best[1] >= 0.05:
        raise ConfigError(
            f"no flat configuration within 5% of {target} parameters (best {best[1]:.1%})"
        )
    return best


def build_memory(config):
    if config.memory == "tree":
        return TreeMemory(config.capacity, config.embed_dim)
    return FlatMemory(config.capacity, config.embed_dim, config.memory)


class TrajectoryModel:
    """Parameters plus the persistent memory state of one stream."""

    def __init__(self, config, rng=None, params=None):
        self.config = config.validate()
        if params is None:
            if rng is None:
                raise ValueError("need an rng or explicit params")
            params = init_model_params(config, rng)
        self.params = params
        self.memory = build_memory(config)

    def reset_memory(self):
        self.memory = build_memory(self.config)

    def predict(self, observed, horizon, seq_id=None, step_observer=None, observe_reads=False):
        """Inference without gradient bookkeeping; memory advances by the
        observed prefix.  Returns a (horizon, d) array."""
        self.memory.detach()
        self.memory.begin_sequence(seq_id)
        preds = run_sequence(
            lift(self.params),
            self.memory,
            observed,
            horizon,
            self.config,
            step_observer=step_observer,
            observe_reads=observe_reads,
        )
        return np.asarray([p.data for p in preds])


def run_sequence(lifted, memory, observed, horizon, config, step_observer=None, observe_reads=False):
    """Shared forward pass; with an active tape this is the training path.

    ``step_observer(step, phase, context, alpha, memory)`` is called once
    per step (phase "observed" or "predicted"); alpha is None when no read
    happened at that step.
    """
    if horizon < 1:
        raise DataError(f"prediction horizon must be >= 1, got {horizon}")
    observed = np.asarray(observed, dtype=np.float64)
    if observed.ndim != 2 or observed.shape[1] != config.input_dim:
        raise DataError(
            f"observed prefix shape {observed.shape} incompatible with input_dim {config.input_dim}"
        )
    if not np.isfinite(observed).all():
        raise DataError("observed prefix contains non-finite coordinates")

    enc = Encoder(lifted)
    head = AttentionHead(lifted)
    cell = RecursiveCell(lifted) if config.memory == "tree" else None
    updater = SlotUpdater(lifted) if config.memory == "dmn" else None

    def read_state():
        if config.memory == "tree":
            return memory.read_matrix(config.read_depth)
        return memory.read_matrix()

    state = enc.zero_state()
    context = None
    for t in range(observed.shape[0]):
        context, state = enc.step(K.Var(observed[t]), state)
        alpha = None
        matrix, mask = read_state()
        if config.memory == "tree":
            if observe_reads and mask.any():
                _, alpha = head.read_and_predict(matrix, mask, context)
            memory.enqueue(context, cell)
        else:
            if mask.any():
                scores = head.score(matrix, mask, context)
                if config.memory == "dmn":
                    memory.dmn_update(scores, updater)
                    if observe_reads:
                        alpha = K.softmax(scores)
                else:
                    alpha = K.softmax(scores)
                    memory.nse_update(alpha, context)
            memory.write(context)
        if step_observer is not None:
            step_observer(t, "observed", context, alpha, memory)

    predictions = []
    t_obs = observed.shape[0]
    for j in range(horizon):
        matrix, mask = read_state()
        y, alpha = head.read_and_predict(matrix, mask, context)
        predictions.append(y)
        if step_observer is not None:
            step_observer(t_obs + j, "predicted", context, alpha, memory)
        context, state = enc.step(y, state)
    return predictions


def mse_loss(predictions, truth):
    """Mean over steps and coordinates of the squared residual."""
    truth = np.asarray(truth, dtype=np.float64)
    if len(predictions) != truth.shape[0]:
        raise ValueError(
            f"mse_loss: {len(predictions)} predictions vs {truth.shape[0]} truth points"
        )
    acc = None
    for y, target in zip(predictions, truth):
        diff = K.sub(y, target)
        term = K.total(K.mul(diff, diff))
        acc = term if acc is None else K.add(acc, term)
    scale = 1.0 / (truth.shape[0] * truth.shape[1])
    return K.mul(acc, scale)


def config_to_dict(config):
    return asdict(config)


def config_from_dict(obj):
    known = {f: obj[f] for f in ModelConfig.__dataclass_fields__ if f in obj}
    return ModelConfig(**known).validate()
