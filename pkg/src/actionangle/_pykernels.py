"""Pure-Python/NumPy implementations of the kernel API.

Used when the compiled extension is unavailable or when
``ACTIONANGLE_PURE_PYTHON=1``.  Semantics match :mod:`actionangle._ckernels`:
non-finite values signal a singularity, never an exception.
"""

from __future__ import annotations

import math

import numpy as np

BACKEND = "python"

_DOMAIN = (ZeroDivisionError, ValueError, OverflowError)


def _call(fn, x):
    try:
        out = fn(x)
    except _DOMAIN:
        return None
    for v in out:
        if not math.isfinite(v):
            return None
    return out


def eval_tape(tape, x):
    out = _call(tape.scalar_fn, [float(v) for v in x])
    if out is None:
        # recover the finite outputs through the nan-propagating path
        return eval_tape_batch(tape, np.asarray(x, dtype=float)[None, :])[0]
    return np.array(out, dtype=float)


def eval_tape_batch(tape, X):
    X = np.asarray(X, dtype=float)
    B = X.shape[0]
    with np.errstate(all="ignore"):
        cols = tape.vector_fn(X.T)
    out = np.empty((B, tape.nout))
    for k, col in enumerate(cols):
        out[:, k] = np.broadcast_to(col, (B,))
    return out


def rk4(tape, x0, t0, h, nsteps):
    fn = tape.scalar_fn
    dim = len(x0)
    traj = np.full((nsteps + 1, dim), np.nan)
    y = [float(v) for v in x0]
    traj[0] = y
    done = 0
    half = 0.5 * h
    for s in range(nsteps):
        t = t0 + s * h
        k1 = _call(fn, y + [t])
        if k1 is None:
            break
        k2 = _call(fn, [a + half * b for a, b in zip(y, k1)] + [t + half])
        if k2 is None:
            break
        k3 = _call(fn, [a + half * b for a, b in zip(y, k2)] + [t + half])
        if k3 is None:
            break
        k4 = _call(fn, [a + h * b for a, b in zip(y, k3)] + [t + h])
        if k4 is None:
            break
        y_new = [a + h / 6.0 * (b1 + 2.0 * b2 + 2.0 * b3 + b4)
                 for a, b1, b2, b3, b4 in zip(y, k1, k2, k3, k4)]
        if not all(math.isfinite(v) for v in y_new):
            break
        y = y_new
        traj[s + 1] = y
        done = s + 1
    return traj, done


def midpoint(tape, x0, t0, h, nsteps, tol, maxiter):
    fn = tape.scalar_fn
    dim = len(x0)
    traj = np.full((nsteps + 1, dim), np.nan)
    y = [float(v) for v in x0]
    traj[0] = y
    done = 0
    status = 0
    for s in range(nsteps):
        tm = t0 + (s + 0.5) * h
        f = _call(fn, y + [tm])
        if f is None:
            status = 1
            break
        y_new = [a + h * b for a, b in zip(y, f)]
        status = 2
        for _ in range(maxiter):
            f = _call(fn, [0.5 * (a + b) for a, b in zip(y, y_new)] + [tm])
            if f is None:
                status = 1
                break
            cand = [a + h * b for a, b in zip(y, f)]
            delta = max(abs(c - d) for c, d in zip(cand, y_new))
            scale = max(1.0, max(abs(c) for c in cand))
            y_new = cand
            if delta <= tol * scale:
                status = 0
                break
        if status != 0:
            break
        y = y_new
        traj[s + 1] = y
        done = s + 1
    return traj, done, status


def rk4_batch(tape, X0, t0, h, nsteps):
    X = np.array(X0, dtype=float, copy=True)
    B, dim = X.shape
    fn = tape.vector_fn
    alive = np.ones(B, dtype=bool)

    def field(Y, t):
        cols = fn(list(Y.T) + [np.full(B, t)])
        return np.stack([np.broadcast_to(c, (B,)) for c in cols], axis=1)

    with np.errstate(all="ignore"):
        for s in range(nsteps):
            t = t0 + s * h
            k1 = field(X, t)
            k2 = field(X + 0.5 * h * k1, t + 0.5 * h)
            k3 = field(X + 0.5 * h * k2, t + 0.5 * h)
            k4 = field(X + h * k3, t + h)
            X = X + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            alive &= np.all(np.isfinite(X), axis=1)
    X[~alive] = np.nan
    return X
