"""Parameter collections: initialization, lifting onto the gradient tape,
counting, and byte-exact serialization for checkpoints.

Every model component stores its weights in one flat dict mapping
``"<block>.<field>"`` to a float64 array.  The optimizer updates those
arrays in place; forward passes lift them to :class:`~treemem.kernel.Var`
once per tape.
"""

import base64

import numpy as np

from . import kernel as K
from .errors import DataError


def glorot_uniform(rng, shape, fan_in=None, fan_out=None):
    """Scaled-uniform init, limit sqrt(6 / (fan_in + fan_out))."""
    if fan_in is None:
        fan_in = shape[1] if len(shape) == 2 else 1
    if fan_out is None:
        fan_out = shape[0]
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def lift(params):
    """Wrap every array in a Var so gradients can accumulate on it."""
    return {name: K.Var(arr) for name, arr in params.items()}


def gradients(lifted, params):
    """Collect grads off lifted Vars; blocks never touched get zeros."""
    out = {}
    for name, arr in params.items():
        g = lifted[name].grad
        out[name] = g if g is not None else np.zeros_like(arr)
    return out


def count_params(params):
    return sum(arr.size for arr in params.values())


def encode_arrays(params):
    """JSON-able dict of {name: {shape, dtype, data}} with little-endian raw bytes."""
    out = {}
    for name, arr in params.items():
        arr = np.asarray(arr, dtype=np.float64)
        out[name] = {
            "shape": list(arr.shape),
            "dtype": "float64",
            "data": base64.b64encode(arr.astype("<f8").tobytes()).decode("ascii"),
        }
    return out


def decode_arrays(obj):
    out = {}
    for name, spec in obj.items():
        if spec.get("dtype") != "float64":
            raise DataError(f"array {name}: unsupported dtype {spec.get('dtype')}")
        raw = base64.b64decode(spec["data"])
        arr = np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(spec["shape"])
        out[name] = arr.copy()
    return out
