"""Central finite-difference checks for tape gradients."""

import numpy as np

from . import tensor as T


def _central(fn, flat, i, h):
    orig = flat[i]
    flat[i] = orig + h
    fp = float(_value(fn))
    flat[i] = orig - h
    fm = float(_value(fn))
    flat[i] = orig
    return (fp - fm) / (2 * h)


def numerical_grad(fn, tensors, h=1e-5):
    """Central differences of scalar ``fn()`` w.r.t. every entry of ``tensors``."""
    grads = []
    for t in tensors:
        g = np.zeros_like(t.data)
        flat = t.data.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            gflat[i] = _central(fn, flat, i, h)
        grads.append(g)
    return grads


def _value(fn):
    with T.no_grad():
        return fn().data


def relative_error(analytic, numeric, floor=1e-4):
    """Elementwise ``|a - n| / max(|a|, |n|, floor)``, reduced by max.

    ``floor`` keeps entries whose true derivative is (near) zero from turning
    finite-difference round-off into a relative error of order one.
    """
    analytic = np.asarray(analytic, dtype=float)
    numeric = np.asarray(numeric, dtype=float)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    if analytic.size == 0:
        return 0.0
    return float(np.max(np.abs(analytic - numeric) / denom))


def _kink_refined(fn, flat, i, coarse, h, floor, agree=1e-4):
    """Finite difference at ``h`` unless the step straddles a kink.

    LeakyReLU and max-pooling are piecewise linear, so in a deep network a
    step of ``h`` can cross a breakpoint. That shows up as the ``h`` estimate
    disagreeing with the ``h/10`` one while ``h/10`` and ``h/100`` agree; only
    then is the ``h/10`` estimate returned.
    """
    fine = _central(fn, flat, i, h / 10)
    finer = _central(fn, flat, i, h / 100)
    kink = relative_error(coarse, fine, floor) > agree
    if kink and relative_error(fine, finer, floor) < agree:
        return fine
    return coarse


def check_gradients(fn, tensors, h=1e-5, floor=1e-4, refine=True, tol=1e-5):
    """Return the max relative error between tape and finite-difference gradients.

    ``fn`` must rebuild the graph from ``tensors`` on every call and return a
    scalar tensor. With ``refine``, entries whose error exceeds ``tol`` are
    re-differenced with smaller steps (see :func:`_kink_refined`).
    """
    tensors = list(tensors)
    for t in tensors:
        t.requires_grad = True
    loss = fn()
    T.backward(loss)
    analytic = [t.grad.copy() for t in tensors]
    numeric = numerical_grad(fn, tensors, h)
    worst = 0.0
    for t, a, n in zip(tensors, analytic, numeric):
        a, n = a.reshape(-1), n.reshape(-1)
        if refine:
            flat = t.data.reshape(-1)
            for i in range(a.size):
                if relative_error(a[i], n[i], floor) > tol:
                    n[i] = _kink_refined(fn, flat, i, n[i], h, floor)
        worst = max(worst, relative_error(a, n, floor))
    return worst


def random_projection(rng, shape):
    """Fixed random weights turning an array-valued op into a scalar loss."""
    return T.Tensor(rng.normal(size=shape))


def projected(out, weights):
    return T.sum_all(T.mul(out, weights))


def check_gradients_sampled(fn, tensors, rng, per_tensor=3, h=1e-5, floor=1e-4, refine=True,
                            tol=1e-5):
    """Like :func:`check_gradients` but probes ``per_tensor`` random entries of each tensor.

    Used for whole networks, where differencing every weight is too slow.
    """
    tensors = list(tensors)
    for t in tensors:
        t.requires_grad = True
    T.backward(fn())
    worst = 0.0
    for t in tensors:
        analytic = t.grad.reshape(-1).copy()
        flat = t.data.reshape(-1)
        picks = rng.choice(flat.size, size=min(per_tensor, flat.size), replace=False)
        for i in picks:
            numeric = _central(fn, flat, i, h)
            if refine and relative_error(analytic[i], numeric, floor) > tol:
                numeric = _kink_refined(fn, flat, i, numeric, h, floor)
            worst = max(worst, relative_error(analytic[i], numeric, floor))
    return worst
