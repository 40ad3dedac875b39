"""Single-layer (flat) memory baselines sharing the attention read path.

Two update rules over a k x p_flat slot matrix:

- episodic ("dmn"): every slot advances by one step of a shared LSTM whose
  scalar input is that slot's attention score;
- replacement ("nse"): every slot moves toward the new content by its
  attention weight, slot_j <- (1 - a_j) slot_j + a_j content.

Like the tree, new embeddings enter through a ring-buffer write cursor, so
warm-up masking works identically; the update rules only touch occupied
slots.
"""

from collections import deque

import numpy as np

from . import kernel as K
from .errors import ConfigError
from .params import glorot_uniform

SLOT_GATES = ("i", "f", "o", "g")


def init_slot_params(rng, embed_dim, prefix="slot"):
    """Shared per-slot LSTM: scalar input weight, recurrent matrix, bias
    per gate.  Parameter count is independent of the slot count."""
    params = {}
    for gate in SLOT_GATES:
        params[f"{prefix}.w_{gate}"] = glorot_uniform(
            rng, (embed_dim,), fan_in=1, fan_out=embed_dim
        )
        params[f"{prefix}.u_{gate}"] = glorot_uniform(rng, (embed_dim, embed_dim))
        bias = np.zeros(embed_dim)
        if gate == "f":
            bias += 1.0
        params[f"{prefix}.b_{gate}"] = bias
    return params


class SlotUpdater:
    """Vectorized one-step slot LSTM over the whole memory matrix."""

    def __init__(self, lifted, prefix="slot"):
        pick = lambda name: lifted[f"{prefix}.{name}"]
        self.w = {g: pick(f"w_{g}") for g in SLOT_GATES}
        self.u = {g: pick(f"u_{g}") for g in SLOT_GATES}
        self.b = {g: pick(f"b_{g}") for g in SLOT_GATES}
        self.embed_dim = self.u["i"].shape[0]

    def _pre(self, gate, scores, h):
        k = self.embed_dim
        return K.add(
            K.add(K.outer(self.w[gate], scores), K.matmul(self.u[gate], h)),
            K.reshape(self.b[gate], (k, 1)),
        )

    def step(self, scores, h, c):
        gate_i = K.sigmoid(self._pre("i", scores, h))
        gate_f = K.sigmoid(self._pre("f", scores, h))
        gate_o = K.sigmoid(self._pre("o", scores, h))
        cand = K.tanh(self._pre("g", scores, h))
        c_next = K.add(K.mul(gate_f, c), K.mul(gate_i, cand))
        h_next = K.mul(gate_o, K.tanh(c_next))
        return h_next, c_next


class FlatMemory:
    """Slot matrix with ring-buffer ingestion and a variant update rule."""

    def __init__(self, capacity, embed_dim, variant="dmn"):
        if capacity < 1:
            raise ConfigError(f"flat capacity must be >= 1, got {capacity}")
        if variant not in ("dmn", "nse"):
            raise ConfigError(f"unknown flat-memory variant {variant!r}")
        self.capacity = capacity
        self.embed_dim = embed_dim
        self.variant = variant
        self.h = K.Var(np.zeros((embed_dim, capacity)))
        self.c = K.Var(np.zeros((embed_dim, capacity)))
        self.cursor = 0
        self.occupancy = 0
        self.recent_ids = deque(maxlen=10)

    def active_mask(self):
        """Occupied slots form a prefix (ring fills 0..occupancy-1 first)."""
        return np.arange(self.capacity) < self.occupancy

    def begin_sequence(self, seq_id):
        if seq_id is not None and (not self.recent_ids or self.recent_ids[-1] != seq_id):
            self.recent_ids.append(seq_id)

    def read_matrix(self):
        return self.h, self.active_mask()

    def write(self, embedding):
        """Insert one embedding at the cursor slot."""
        if embedding.shape != (self.embed_dim,):
            raise ValueError(
                f"write: embedding shape {embedding.shape} != ({self.embed_dim},)"
            )
        self.h = K.set_col(self.h, self.cursor, embedding)
        self.c = K.set_col(self.c, self.cursor, embedding)
        self.cursor = (self.cursor + 1) % self.capacity
        self.occupancy = min(self.occupancy + 1, self.capacity)

    def dmn_update(self, scores, updater):
        """Episodic update: one slot-LSTM step per occupied slot.

        ``scores`` may carry mask sentinels on inactive columns; those are
        zeroed before entering the gate algebra, and the 0/1 active-mask
        blend keeps unoccupied slots exactly zero.
        """
        if scores.shape != (self.capacity,):
            raise ValueError(f"dmn_update: scores shape {scores.shape} != ({self.capacity},)")
        mask = self.active_mask()
        clean = K.mask_fill(scores, mask, 0.0)
        h_next, c_next = updater.step(clean, self.h, self.c)
        keep = mask.astype(np.float64)[None, :]
        self.h = K.mul(h_next, keep)
        self.c = K.mul(c_next, keep)

    def nse_update(self, alpha, content):
        """Replacement update: slot_j <- (1 - a_j) slot_j + a_j content.

        Masked slots carry exactly zero weight, so they are preserved bit
        for bit; the cell matrix is untouched (this variant has no cell).
        """
        if alpha.shape != (self.capacity,):
            raise ValueError(f"nse_update: alpha shape {alpha.shape} != ({self.capacity},)")
        if content.shape != (self.embed_dim,):
            raise ValueError(
                f"nse_update: content shape {content.shape} != ({self.embed_dim},)"
            )
        keep = K.reshape(K.sub(1.0, alpha), (1, self.capacity))
        self.h = K.add(K.mul(self.h, keep), K.outer(content, alpha))

    def detach(self):
        self.h = K.Var(self.h.data)
        self.c = K.Var(self.c.data)

    def snapshot(self):
        from .params import encode_arrays

        return {
            "variant": self.variant,
            "capacity": self.capacity,
            "embed_dim": self.embed_dim,
            "cursor": self.cursor,
            "occupancy": self.occupancy,
            "recent_ids": list(self.recent_ids),
            "nodes": encode_arrays({"h": self.h.data, "c": self.c.data}),
        }

    @classmethod
    def from_snapshot(cls, snap):
        from .params import decode_arrays

        mem = cls(snap["capacity"], snap["embed_dim"], snap["variant"])
        arrays = decode_arrays(snap["nodes"])
        mem.h = K.Var(arrays["h"])
        mem.c = K.Var(arrays["c"])
        mem.cursor = snap["cursor"]
        mem.occupancy = snap["occupancy"]
        mem.recent_ids = deque(snap.get("recent_ids", []), maxlen=10)
        return mem
