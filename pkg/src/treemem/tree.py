"""Binary-tree external memory over a sliding window of embeddings.

Leaves hold the last ``capacity`` embeddings in a ring buffer; every
internal node is a recursive-cell compression of its two children, so the
root summarizes the whole window.  Inserting one embedding recomputes only
the ancestors of the written leaf (depth-many nodes).

Heap layout: index 1 is the root, children of i are 2i and 2i+1, leaves
occupy indices capacity .. 2*capacity-1.  Leaf ring position j lives at
heap index capacity + j.
"""

from collections import deque

import numpy as np

from . import kernel as K
from .errors import ConfigError, DataError
from .params import glorot_uniform

# gate-order convention for the packed matmul: input gate, left forget,
# right forget; each row block reads [hL; hR; cL; cR]
CELL_FIELDS = (
    "w_hi_l", "w_hi_r", "w_ci_l", "w_ci_r",
    "w_hfl_l", "w_hfl_r", "w_cfl_l", "w_cfl_r",
    "w_hfr_l", "w_hfr_r", "w_cfr_l", "w_cfr_r",
    "w_hc_l", "w_hc_r",
    "w_ho_l", "w_ho_r", "w_co_p",
)


def init_cell_params(rng, embed_dim, prefix="cell"):
    """Seventeen k x k matrices, one shared set for every node at every level."""
    return {f"{prefix}.{f}": glorot_uniform(rng, (embed_dim, embed_dim)) for f in CELL_FIELDS}


class RecursiveCell:
    """Combines two child (h, c) states into one parent state.

    Gate algebra, with sigma the logistic function and * elementwise:

        i  = sigma(W_hi_l hL + W_hi_r hR + W_ci_l cL + W_ci_r cR)
        fL = sigma(W_hfl_l hL + W_hfl_r hR + W_cfl_l cL + W_cfl_r cR)
        fR = sigma(W_hfr_l hL + W_hfr_r hR + W_cfr_l cL + W_cfr_r cR)
        beta = W_hc_l hL + W_hc_r hR
        cP = fL*cL + fR*cR + i*tanh(beta)
        o  = sigma(W_ho_l hL + W_ho_r hR + W_co_p cP)
        hP = o*tanh(cP)

    There are no biases, so a zero-children input yields an exactly-zero
    parent for any weights: inactive subtrees stay exact zeros.

    The three 4k-input gates are packed into one (3k x 4k) operand at
    construction time; combine() then costs four matmuls.
    """

    def __init__(self, lifted, prefix="cell"):
        pick = lambda name: lifted[f"{prefix}.{name}"]
        self.w_gates = K.concat(
            [
                K.concat([pick("w_hi_l"), pick("w_hi_r"), pick("w_ci_l"), pick("w_ci_r")], axis=1),
                K.concat([pick("w_hfl_l"), pick("w_hfl_r"), pick("w_cfl_l"), pick("w_cfl_r")], axis=1),
                K.concat([pick("w_hfr_l"), pick("w_hfr_r"), pick("w_cfr_l"), pick("w_cfr_r")], axis=1),
            ],
            axis=0,
        )
        self.w_cand = K.concat([pick("w_hc_l"), pick("w_hc_r")], axis=1)
        self.w_out_h = K.concat([pick("w_ho_l"), pick("w_ho_r")], axis=1)
        self.w_out_c = pick("w_co_p")
        self.embed_dim = self.w_out_c.shape[0]

    def combine(self, left, right):
        h_l, c_l = left
        h_r, c_r = right
        if h_l.shape != (self.embed_dim,) or h_r.shape != (self.embed_dim,):
            raise ValueError(
                f"combine: child dims {h_l.shape}, {h_r.shape} != ({self.embed_dim},)"
            )
        x4 = K.concat([h_l, h_r, c_l, c_r])
        x2 = K.concat([h_l, h_r])
        gates = K.sigmoid(K.matmul(self.w_gates, x4))
        gate_i, gate_fl, gate_fr = K.split(gates, 3)
        beta = K.matmul(self.w_cand, x2)
        c_p = K.add(
            K.add(K.mul(gate_fl, c_l), K.mul(gate_fr, c_r)),
            K.mul(gate_i, K.tanh(beta)),
        )
        gate_o = K.sigmoid(K.add(K.matmul(self.w_out_h, x2), K.matmul(self.w_out_c, c_p)))
        h_p = K.mul(gate_o, K.tanh(c_p))
        return (h_p, c_p)


class TreeMemory:
    """Ring-buffered sliding window compressed by a complete binary tree."""

    variant = "tree"

    def __init__(self, capacity, embed_dim):
        if capacity < 2 or capacity & (capacity - 1):
            raise ConfigError(f"tree capacity must be a power of two >= 2, got {capacity}")
        self.capacity = capacity
        self.embed_dim = embed_dim
        self.depth = capacity.bit_length() - 1  # ancestors touched per insert
        zero = np.zeros(embed_dim)
        self.node_h = [K.Var(zero.copy()) for _ in range(2 * capacity)]
        self.node_c = [K.Var(zero.copy()) for _ in range(2 * capacity)]
        self.cursor = 0
        self.occupancy = 0
        self.combine_count = 0
        self.recent_ids = deque(maxlen=10)

    # -- occupancy ----------------------------------------------------------

    def is_active(self, index):
        """A node is active iff its subtree holds at least one occupied leaf.

        The ring fills positions 0..occupancy-1 before wrapping, so the
        occupied set is always a prefix and activity reduces to comparing
        the subtree's first leaf position with the occupancy.
        """
        if not 1 <= index < 2 * self.capacity:
            raise ValueError(f"node index {index} out of range")
        level = index.bit_length() - 1
        leaves_per_node = self.capacity >> level
        first_leaf = (index - (1 << level)) * leaves_per_node
        return first_leaf < self.occupancy

    def begin_sequence(self, seq_id):
        """Note which trajectory subsequent insertions belong to."""
        if seq_id is not None and (not self.recent_ids or self.recent_ids[-1] != seq_id):
            self.recent_ids.append(seq_id)

    # -- updates ------------------------------------------------------------

    def enqueue(self, embedding, cell):
        """Write one embedding at the cursor leaf and recompute its ancestors."""
        if embedding.shape != (self.embed_dim,):
            raise ValueError(
                f"enqueue: embedding shape {embedding.shape} != ({self.embed_dim},)"
            )
        leaf = self.capacity + self.cursor
        self.node_h[leaf] = embedding
        self.node_c[leaf] = embedding
        self.cursor = (self.cursor + 1) % self.capacity
        self.occupancy = min(self.occupancy + 1, self.capacity)
        index = leaf >> 1
        while index >= 1:
            left, right = 2 * index, 2 * index + 1
            h, c = cell.combine(
                (self.node_h[left], self.node_c[left]),
                (self.node_h[right], self.node_c[right]),
            )
            self.node_h[index] = h
            self.node_c[index] = c
            self.combine_count += 1
            index >>= 1

    def detach(self):
        """Re-wrap every node as a tape-free constant (truncated backprop:
        contents stored before the current trajectory are treated as data)."""
        self.node_h = [K.Var(v.data) for v in self.node_h]
        self.node_c = [K.Var(v.data) for v in self.node_c]

    # -- reads --------------------------------------------------------------

    def read_matrix(self, levels):
        """Hidden states of the top ``levels`` tree levels as columns.

        Returns (matrix k x (2^levels - 1), activity mask).  Column order is
        heap order: root, then level 2 left-to-right, and so on.
        """
        if not 1 <= levels <= self.depth + 1:
            raise ValueError(f"read depth {levels} outside 1..{self.depth + 1}")
        indices = range(1, 2 ** levels)
        matrix = K.stack_cols([self.node_h[i] for i in indices])
        mask = np.array([self.is_active(i) for i in indices], dtype=bool)
        return matrix, mask

    # -- serialization ------------------------------------------------------

    def snapshot(self):
        h = np.stack([v.data for v in self.node_h])
        c = np.stack([v.data for v in self.node_c])
        from .params import encode_arrays

        return {
            "variant": self.variant,
            "capacity": self.capacity,
            "embed_dim": self.embed_dim,
            "cursor": self.cursor,
            "occupancy": self.occupancy,
            "combine_count": self.combine_count,
            "recent_ids": list(self.recent_ids),
            "nodes": encode_arrays({"h": h, "c": c}),
        }

    @classmethod
    def from_snapshot(cls, snap):
        from .params import decode_arrays

        mem = cls(snap["capacity"], snap["embed_dim"])
        arrays = decode_arrays(snap["nodes"])
        mem.node_h = [K.Var(row.copy()) for row in arrays["h"]]
        mem.node_c = [K.Var(row.copy()) for row in arrays["c"]]
        mem.cursor = snap["cursor"]
        mem.occupancy = snap["occupancy"]
        mem.combine_count = snap.get("combine_count", 0)
        mem.recent_ids = deque(snap.get("recent_ids", []), maxlen=10)
        return mem


def rebuild_full(window, capacity, embed_dim, cell):
    """Construct the whole tree from scratch for a given leaf window.

    ``window`` maps leaf position -> embedding (at most ``capacity``
    entries).  Internal nodes with at least one occupied descendant are
    combined bottom-up; the rest stay exact zeros.  This is the ground
    truth the incremental enqueue path must match bit for bit.
    """
    if len(window) > capacity:
        raise DataError(f"rebuild_full: {len(window)} leaves exceed capacity {capacity}")
    memory = TreeMemory(capacity, embed_dim)
    for pos, emb in window.items():
        if not 0 <= pos < capacity:
            raise DataError(f"rebuild_full: leaf position {pos} outside 0..{capacity - 1}")
        leaf = capacity + pos
        memory.node_h[leaf] = emb
        memory.node_c[leaf] = emb
    memory.occupancy = len(window)
    occupied = set(capacity + pos for pos in window)
    for index in range(capacity - 1, 0, -1):
        left, right = 2 * index, 2 * index + 1
        if left in occupied or right in occupied:
            h, c = cell.combine(
                (memory.node_h[left], memory.node_c[left]),
                (memory.node_h[right], memory.node_c[right]),
            )
            memory.node_h[index] = h
            memory.node_c[index] = c
            occupied.add(index)
    return memory
