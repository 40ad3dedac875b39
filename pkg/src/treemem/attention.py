"""Memory read head: score memory columns against the current context,
softmax-attend, and merge the retrieved vector with the context into the
next predicted point.
"""

import numpy as np

from . import kernel as K
from .params import glorot_uniform


def init_attention_params(rng, embed_dim, out_dim, hidden_dim=None, prefix="attn"):
    """Score MLP (hidden tanh layer over [column; context], scalar output)
    plus the output-merge matrix."""
    k_h = embed_dim if hidden_dim is None else hidden_dim
    return {
        f"{prefix}.w_hidden": glorot_uniform(rng, (k_h, 2 * embed_dim)),
        f"{prefix}.b_hidden": np.zeros(k_h),
        f"{prefix}.w_score": glorot_uniform(rng, (1, k_h)),
        f"{prefix}.b_score": np.zeros(1),
        f"{prefix}.w_out": glorot_uniform(rng, (out_dim, embed_dim)),
    }


class AttentionHead:
    def __init__(self, lifted, prefix="attn"):
        pick = lambda name: lifted[f"{prefix}.{name}"]
        self.w_hidden = pick("w_hidden")
        self.b_hidden = pick("b_hidden")
        self.w_score = pick("w_score")
        self.b_score = pick("b_score")
        self.w_out = pick("w_out")
        self.hidden_dim = self.w_hidden.shape[0]
        self.embed_dim = self.w_hidden.shape[1] // 2
        self.out_dim = self.w_out.shape[0]

    def score(self, matrix, mask, context):
        """Raw scores per column; inactive columns get the mask sentinel so
        the subsequent softmax assigns them exactly zero weight."""
        q = matrix.shape[1]
        if matrix.shape[0] != self.embed_dim or context.shape != (self.embed_dim,):
            raise ValueError(
                f"score: memory {matrix.shape} / context {context.shape} "
                f"incompatible with embed dim {self.embed_dim}"
            )
        stacked = K.concat([matrix, K.tile_cols(context, q)], axis=0)
        hidden = K.tanh(
            K.add(K.matmul(self.w_hidden, stacked), K.reshape(self.b_hidden, (self.hidden_dim, 1)))
        )
        scores = K.add(K.matmul(self.w_score, hidden), K.reshape(self.b_score, (1, 1)))
        return K.mask_fill(K.reshape(scores, (q,)), mask, K.MASK_SENTINEL)

    @staticmethod
    def attend(matrix, alpha):
        """Convex combination of columns under the attention weights."""
        return K.matmul(matrix, alpha)

    def merge_output(self, z, context):
        """y = ReLU(W_out z + (J - W_out) c) with J the all-ones matrix;
        the J c term replicates sum(c) into every output coordinate."""
        ones_c = K.fill(K.total(context), self.out_dim)
        return K.relu(K.add(K.matmul(self.w_out, K.sub(z, context)), ones_c))

    def bypass(self, context):
        """Empty-memory fallback: the merge with the retrieved vector absent,
        y = ReLU((J - W_out) c)."""
        ones_c = K.fill(K.total(context), self.out_dim)
        return K.relu(K.sub(ones_c, K.matmul(self.w_out, context)))

    def read_and_predict(self, matrix, mask, context):
        """Full read path: score -> softmax -> attend -> merge.

        Returns (prediction, alpha-data).  With no active column the
        attention is bypassed and alpha is empty.
        """
        if not mask.any():
            return self.bypass(context), K.Var(np.zeros(0))
        scores = self.score(matrix, mask, context)
        alpha = K.softmax(scores)
        z = self.attend(matrix, alpha)
        return self.merge_output(z, context), alpha
