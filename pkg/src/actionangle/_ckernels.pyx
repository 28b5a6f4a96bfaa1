# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled tape interpreter and fixed-step integrators.

Mirrors :mod:`actionangle._pykernels` function for function.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport sin, cos, sqrt, exp, atan2, pow, isfinite, NAN, fabs
from libc.stdlib cimport malloc, free

cnp.import_array()

BACKEND = "cython"


cdef struct TapeView:
    int n
    int nout
    int nvars
    const int* op
    const int* a
    const int* b
    const double* c
    const int* outs


cdef inline int run(TapeView* tp, const double* x, double* regs, double* out) noexcept nogil:
    """Evaluate the tape; returns 0 when every output is finite."""
    cdef int k, o
    cdef double y, z
    for k in range(tp.n):
        o = tp.op[k]
        if o == 0:
            regs[k] = tp.c[k]
        elif o == 1:
            regs[k] = x[tp.a[k]]
        elif o == 2:
            regs[k] = regs[tp.a[k]] + regs[tp.b[k]]
        elif o == 3:
            regs[k] = regs[tp.a[k]] - regs[tp.b[k]]
        elif o == 4:
            regs[k] = regs[tp.a[k]] * regs[tp.b[k]]
        elif o == 5:
            regs[k] = regs[tp.a[k]] / regs[tp.b[k]]
        elif o == 6:
            regs[k] = -regs[tp.a[k]]
        elif o == 7:
            regs[k] = pow(regs[tp.a[k]], tp.c[k])
        elif o == 8:
            regs[k] = sin(regs[tp.a[k]])
        elif o == 9:
            regs[k] = cos(regs[tp.a[k]])
        elif o == 10:
            y = regs[tp.a[k]]
            regs[k] = sqrt(y) if y >= 0.0 else NAN
        elif o == 11:
            regs[k] = exp(regs[tp.a[k]])
        else:
            y = regs[tp.a[k]]
            z = regs[tp.b[k]]
            regs[k] = NAN if (y == 0.0 and z == 0.0) else atan2(y, z)
    cdef int bad = 0
    for k in range(tp.nout):
        out[k] = regs[tp.outs[k]]
        if not isfinite(out[k]):
            bad = 1
    return bad


cdef class _Holder:
    """Keeps the contiguous arrays alive while a TapeView points into them."""
    cdef object op, a, b, c, outs
    cdef TapeView view

    def __init__(self, tape):
        self.op = np.ascontiguousarray(tape.ops, dtype=np.int32)
        self.a = np.ascontiguousarray(tape.a, dtype=np.int32)
        self.b = np.ascontiguousarray(tape.b, dtype=np.int32)
        self.c = np.ascontiguousarray(tape.c, dtype=np.float64)
        self.outs = np.ascontiguousarray(tape.outs, dtype=np.int32)
        cdef const int[::1] op_v = self.op
        cdef const int[::1] a_v = self.a
        cdef const int[::1] b_v = self.b
        cdef const double[::1] c_v = self.c
        cdef const int[::1] o_v = self.outs
        self.view.n = op_v.shape[0]
        self.view.nout = o_v.shape[0]
        self.view.nvars = tape.nvars
        self.view.op = &op_v[0] if op_v.shape[0] else NULL
        self.view.a = &a_v[0] if a_v.shape[0] else NULL
        self.view.b = &b_v[0] if b_v.shape[0] else NULL
        self.view.c = &c_v[0] if c_v.shape[0] else NULL
        self.view.outs = &o_v[0] if o_v.shape[0] else NULL


def eval_tape(tape, x):
    cdef _Holder h = _Holder(tape)
    cdef const double[::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    out = np.empty(h.view.nout, dtype=np.float64)
    cdef double[::1] ov = out
    cdef double* regs = <double*> malloc(max(h.view.n, 1) * sizeof(double))
    try:
        run(&h.view, &xv[0], regs, &ov[0] if h.view.nout else NULL)
    finally:
        free(regs)
    return out


def eval_tape_batch(tape, X):
    cdef _Holder h = _Holder(tape)
    cdef const double[:, ::1] xv = np.ascontiguousarray(X, dtype=np.float64)
    cdef Py_ssize_t B = xv.shape[0], i
    out = np.empty((B, h.view.nout), dtype=np.float64)
    cdef double[:, ::1] ov = out
    cdef double* regs = <double*> malloc(max(h.view.n, 1) * sizeof(double))
    try:
        with nogil:
            for i in range(B):
                run(&h.view, &xv[i, 0], regs, &ov[i, 0])
    finally:
        free(regs)
    return out


cdef inline int field(TapeView* tp, const double* y, double t, int dim,
                      double* xbuf, double* regs, double* out) noexcept nogil:
    cdef int j
    for j in range(dim):
        xbuf[j] = y[j]
    xbuf[dim] = t
    return run(tp, xbuf, regs, out)


cdef int rk4_step(TapeView* tp, double* y, double t, double h, int dim,
                  double* work, double* regs) noexcept nogil:
    """One classical RK4 step in place; work holds 6*dim+1 doubles."""
    cdef double* k1 = work
    cdef double* k2 = work + dim
    cdef double* k3 = work + 2 * dim
    cdef double* k4 = work + 3 * dim
    cdef double* tmp = work + 4 * dim
    cdef double* xbuf = work + 5 * dim
    cdef int j
    if field(tp, y, t, dim, xbuf, regs, k1):
        return 1
    for j in range(dim):
        tmp[j] = y[j] + 0.5 * h * k1[j]
    if field(tp, tmp, t + 0.5 * h, dim, xbuf, regs, k2):
        return 1
    for j in range(dim):
        tmp[j] = y[j] + 0.5 * h * k2[j]
    if field(tp, tmp, t + 0.5 * h, dim, xbuf, regs, k3):
        return 1
    for j in range(dim):
        tmp[j] = y[j] + h * k3[j]
    if field(tp, tmp, t + h, dim, xbuf, regs, k4):
        return 1
    for j in range(dim):
        tmp[j] = y[j] + h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j])
        if not isfinite(tmp[j]):
            return 1
    for j in range(dim):
        y[j] = tmp[j]
    return 0


def rk4(tape, x0, double t0, double h, int nsteps):
    """Classical RK4; returns ``(states[nsteps+1, dim], steps_done)``."""
    cdef _Holder hd = _Holder(tape)
    cdef int dim = len(x0)
    traj = np.full((nsteps + 1, dim), np.nan)
    cdef double[:, ::1] tv = traj
    cdef const double[::1] y0 = np.ascontiguousarray(x0, dtype=np.float64)
    cdef double* y = <double*> malloc(dim * sizeof(double))
    cdef double* work = <double*> malloc((6 * dim + 1) * sizeof(double))
    cdef double* regs = <double*> malloc(max(hd.view.n, 1) * sizeof(double))
    cdef int s, j, done = 0
    try:
        with nogil:
            for j in range(dim):
                y[j] = y0[j]
                tv[0, j] = y[j]
            for s in range(nsteps):
                if rk4_step(&hd.view, y, t0 + s * h, h, dim, work, regs):
                    break
                for j in range(dim):
                    tv[s + 1, j] = y[j]
                done = s + 1
    finally:
        free(y)
        free(work)
        free(regs)
    return traj, done


def midpoint(tape, x0, double t0, double h, int nsteps, double tol, int maxiter):
    """Implicit midpoint rule with fixed-point stage solve.

    Returns ``(states, steps_done, status)``; status 0 ok, 1 singular,
    2 stage iteration did not converge.
    """
    cdef _Holder hd = _Holder(tape)
    cdef int dim = len(x0)
    traj = np.full((nsteps + 1, dim), np.nan)
    cdef double[:, ::1] tv = traj
    cdef const double[::1] y0 = np.ascontiguousarray(x0, dtype=np.float64)
    cdef double* y = <double*> malloc(dim * sizeof(double))
    cdef double* ynew = <double*> malloc(dim * sizeof(double))
    cdef double* mid = <double*> malloc(dim * sizeof(double))
    cdef double* f = <double*> malloc(dim * sizeof(double))
    cdef double* xbuf = <double*> malloc((dim + 1) * sizeof(double))
    cdef double* regs = <double*> malloc(max(hd.view.n, 1) * sizeof(double))
    cdef int s, j, it, done = 0, status = 0
    cdef double delta, scale, cand, tm
    try:
        with nogil:
            for j in range(dim):
                y[j] = y0[j]
                tv[0, j] = y[j]
            for s in range(nsteps):
                tm = t0 + (s + 0.5) * h
                if field(&hd.view, y, tm, dim, xbuf, regs, f):
                    status = 1
                    break
                for j in range(dim):
                    ynew[j] = y[j] + h * f[j]
                status = 2
                for it in range(maxiter):
                    for j in range(dim):
                        mid[j] = 0.5 * (y[j] + ynew[j])
                    if field(&hd.view, mid, tm, dim, xbuf, regs, f):
                        status = 1
                        break
                    delta = 0.0
                    scale = 1.0
                    for j in range(dim):
                        cand = y[j] + h * f[j]
                        delta = max(delta, fabs(cand - ynew[j]))
                        scale = max(scale, fabs(cand))
                        ynew[j] = cand
                    if delta <= tol * scale:
                        status = 0
                        break
                if status != 0:
                    break
                for j in range(dim):
                    y[j] = ynew[j]
                    tv[s + 1, j] = y[j]
                done = s + 1
    finally:
        free(y)
        free(ynew)
        free(mid)
        free(f)
        free(xbuf)
        free(regs)
    return traj, done, status


def rk4_batch(tape, X0, double t0, double h, int nsteps):
    """Advance many initial states independently; failed rows become nan."""
    cdef _Holder hd = _Holder(tape)
    X = np.array(X0, dtype=np.float64, order="C", copy=True)
    cdef double[:, ::1] xv = X
    cdef Py_ssize_t B = xv.shape[0], i
    cdef int dim = xv.shape[1]
    cdef int s, j
    cdef double* work = <double*> malloc((6 * dim + 1) * sizeof(double))
    cdef double* regs = <double*> malloc(max(hd.view.n, 1) * sizeof(double))
    try:
        with nogil:
            for i in range(B):
                for s in range(nsteps):
                    if rk4_step(&hd.view, &xv[i, 0], t0 + s * h, h, dim, work, regs):
                        for j in range(dim):
                            xv[i, j] = NAN
                        break
    finally:
        free(work)
        free(regs)
    return X
