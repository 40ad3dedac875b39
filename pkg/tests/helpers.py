"""Shared utilities for the test suite: gradient checking against the
finite-difference oracle, and relative-error norms."""

import numpy as np

from treemem import kernel as K


def rel_error(a, b):
    """Norm of the difference over the larger norm, floored to dodge 0/0."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-8)
    return np.linalg.norm(a - b) / denom


def check_gradients(make_loss, params, h=1e-5, tol=1e-4):
    """Compare reverse-mode gradients with central differences per array.

    ``make_loss`` maps a dict of name -> Var to a scalar Var and must be a
    pure function of those arrays (bake any randomness in beforehand).
    Returns the worst relative error seen, asserting every block is within
    ``tol``.
    """
    with K.recording() as tape:
        lifted = {k: K.Var(v.copy()) for k, v in params.items()}
        loss = make_loss(lifted)
        tape.backward(loss)
    worst = 0.0
    for name, arr in params.items():
        analytic = lifted[name].grad
        if analytic is None:
            analytic = np.zeros_like(arr)

        def f(x, _name=name):
            trial = {k: K.Var(v) for k, v in params.items()}
            trial[_name] = K.Var(x)
            return float(make_loss(trial).data)

        numeric = K.finite_difference_gradient(f, arr, h=h)
        if max(np.linalg.norm(analytic), np.linalg.norm(numeric)) < 1e-7:
            # Both sides are numerically zero.  Central differences cannot
            # resolve gradients below ~|loss|*eps/h (~1e-11 here), so for a
            # parameter the loss provably ignores (e.g. a bias cancelled by
            # softmax shift invariance) the comparison is noise over noise.
            continue
        err = rel_error(analytic, numeric)
        assert err <= tol, f"gradient mismatch for {name}: rel error {err:.3e} > {tol}"
        worst = max(worst, err)
    return worst
