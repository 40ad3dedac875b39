"""Input-side LSTM: folds each d-dimensional point into a k-dimensional
context vector, one step per point.

The exposed representation handed to the memory and attention modules is
the hidden state h (not the cell state c).
"""

import numpy as np

from . import kernel as K
from .errors import DataError
from .params import glorot_uniform

GATES = ("i", "f", "o", "g")  # input, forget, output, candidate


def init_encoder_params(rng, input_dim, embed_dim, prefix="enc"):
    """Gate weights are scaled-uniform; biases zero except forget = 1
    (remember-by-default keeps early training stable) and candidate =
    0.05.  The small positive candidate bias keeps the summed hidden
    state positive at the start, which matters because the rectified
    output head receives that sum as an untrainable offset: a negative
    start can clamp every output at zero with no gradient to recover.
    """
    params = {}
    for gate in GATES:
        params[f"{prefix}.w_{gate}"] = glorot_uniform(rng, (embed_dim, input_dim))
        params[f"{prefix}.u_{gate}"] = glorot_uniform(rng, (embed_dim, embed_dim))
        bias = np.zeros(embed_dim)
        if gate == "f":
            bias += 1.0
        elif gate == "g":
            bias += 0.05
        params[f"{prefix}.b_{gate}"] = bias
    return params


class Encoder:
    """Steps an LSTM over input vectors.

    The per-gate matrices are concatenated into single (4k x d), (4k x k)
    operands when the instance is built, so each step costs two matmuls;
    gradients flow back through the concatenation to the individual blocks.
    """

    def __init__(self, lifted, prefix="enc"):
        pick = lambda name: lifted[f"{prefix}.{name}"]
        self.w = K.concat([pick(f"w_{g}") for g in GATES], axis=0)
        self.u = K.concat([pick(f"u_{g}") for g in GATES], axis=0)
        self.b = K.concat([pick(f"b_{g}") for g in GATES])
        self.embed_dim = self.u.shape[1]

    def zero_state(self):
        z = np.zeros(self.embed_dim)
        return (K.Var(z), K.Var(z.copy()))

    def step(self, x, state):
        """One LSTM step; returns (embedding, next_state) where the
        embedding is the new hidden state."""
        h, c = state
        z = K.add(K.add(K.matmul(self.w, x), K.matmul(self.u, h)), self.b)
        zi, zf, zo, zg = K.split(z, 4)
        gate_i = K.sigmoid(zi)
        gate_f = K.sigmoid(zf)
        gate_o = K.sigmoid(zo)
        cand = K.tanh(zg)
        c_next = K.add(K.mul(gate_f, c), K.mul(gate_i, cand))
        h_next = K.mul(gate_o, K.tanh(c_next))
        return h_next, (h_next, c_next)


def encode_sequence(xs, params, prefix="enc"):
    """Fold lstm steps over a sequence from the zero state; one embedding
    per input point."""
    if len(xs) == 0:
        raise DataError("encode_sequence: empty sequence")
    dims = {np.shape(x)[0] for x in xs}
    if len(dims) != 1:
        raise DataError(f"encode_sequence: mixed input dimensions {sorted(dims)}")
    arr = np.asarray([np.asarray(x, dtype=np.float64) for x in xs])
    if not np.isfinite(arr).all():
        raise DataError("encode_sequence: non-finite input point")
    from .params import lift

    lifted = params if isinstance(next(iter(params.values())), K.Var) else lift(params)
    enc = Encoder(lifted, prefix=prefix)
    state = enc.zero_state()
    embeddings = []
    for x in xs:
        emb, state = enc.step(K.Var(np.asarray(x, dtype=np.float64)), state)
        embeddings.append(emb)
    return embeddings
