"""Canonical Poisson brackets and the structure checks built on them.

Sign convention throughout::

    {f, g} = sum_i  df/dp_i * dg/dq^i  -  df/dq^i * dg/dp_i

so that ``{p1, q1} = 1`` and ``dg/dt = {H, g}`` along the flow of ``H``.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from ..errors import SingularityError
from . import expr as ex
from .chart import Observable, PhaseChart, _coords

FD_STEP = 1e-6
FD_STEP_NESTED = 1e-4
RANK_RTOL = 1e-10
BRACKET_ATOL = 1e-12


def _scheme(scheme, h):
    if isinstance(scheme, tuple):
        scheme, h = scheme
    if scheme not in ("analytic", "finite_diff"):
        raise ValueError(f"unknown scheme {scheme!r}")
    return scheme, h


def bracket_observable(f: Observable, g: Observable) -> Observable:
    """Symbolic ``{f, g}`` as a new observable on the same chart."""
    chart = f.chart
    if g.chart != chart:
        raise ValueError("observables live on different charts")
    terms = []
    for i in range(chart.n_dof):
        qi, pi = chart.q_names[i], chart.p_names[i]
        fq, fp = f.grad[chart.index(qi)], f.grad[chart.index(pi)]
        gq, gp = g.grad[chart.index(qi)], g.grad[chart.index(pi)]
        terms.append(ex.sub(ex.mul(fp, gq), ex.mul(fq, gp)))
    return Observable(ex.total(terms), chart)


def _canonical_grad(grad: np.ndarray, n: int) -> tuple[np.ndarray, np.ndarray]:
    return grad[:n], grad[n:2 * n]


def fd_gradient(fn: Callable[[np.ndarray], float], c: np.ndarray, chart: PhaseChart,
                h: float = FD_STEP) -> np.ndarray:
    """Central differences of ``fn`` in the ``2n`` canonical directions."""
    n2 = 2 * chart.n_dof
    out = np.empty(n2)
    for k in range(n2):
        cp = np.array(c, dtype=float)
        cm = np.array(c, dtype=float)
        cp[k] += h
        cm[k] -= h
        out[k] = (fn(cp) - fn(cm)) / (2.0 * h)
    return out


def _as_fn(f) -> Callable[[np.ndarray], float]:
    return f.evaluate if isinstance(f, Observable) else f


def fd_bracket(f, g, c: np.ndarray, chart: PhaseChart, h: float = FD_STEP) -> float:
    """Finite-difference bracket of two observables or plain callables."""
    n = chart.n_dof
    gf = fd_gradient(_as_fn(f), c, chart, h)
    gg = fd_gradient(_as_fn(g), c, chart, h)
    fq, fp = _canonical_grad(gf, n)
    gq, gp = _canonical_grad(gg, n)
    return float(fp @ gq - fq @ gp)


def poisson_bracket(f: Observable, g: Observable, z, scheme="analytic",
                    h: float = FD_STEP) -> float:
    """Value of ``{f, g}`` at ``z``.

    ``scheme`` is ``"analytic"`` (symbolic partials) or ``"finite_diff"``
    (central differences with step ``h``); ``("finite_diff", h)`` is also
    accepted.
    """
    scheme, h = _scheme(scheme, h)
    chart = f.chart
    c = _coords(z, chart)
    if scheme == "finite_diff":
        return fd_bracket(f, g, c, chart, h)
    n = chart.n_dof
    fq, fp = _canonical_grad(f.gradient(c), n)
    gq, gp = _canonical_grad(g.gradient(c), n)
    return float(fp @ gq - fq @ gp)


def hamiltonian_vector_field(f: Observable, z) -> tuple[np.ndarray, np.ndarray]:
    """``(dq/dt, dp/dt) = (df/dp, -df/dq)`` at ``z``."""
    n = f.chart.n_dof
    fq, fp = _canonical_grad(f.gradient(z), n)
    return fp.copy(), -fq


def vector_field_exprs(H: Observable) -> list:
    """Right-hand side of Hamilton's equations as expressions in chart order."""
    chart = H.chart
    dq = [H.grad[chart.index(p)] for p in chart.p_names]
    dp = [ex.neg(H.grad[chart.index(q)]) for q in chart.q_names]
    return dq + dp


def jacobi_defect(f: Observable, g: Observable, h: Observable, z, scheme="analytic",
                  step: float = FD_STEP_NESTED) -> float:
    """``{f,{g,h}} + {g,{h,f}} + {h,{f,g}}`` at ``z``.

    The analytic scheme composes brackets symbolically; the finite-difference
    scheme nests central differences, both levels with ``step``.
    """
    scheme, step = _scheme(scheme, step)
    chart = f.chart
    c = _coords(z, chart)
    if scheme == "analytic":
        return (poisson_bracket(f, bracket_observable(g, h), c)
                + poisson_bracket(g, bracket_observable(h, f), c)
                + poisson_bracket(h, bracket_observable(f, g), c))

    def inner(a, b):
        return lambda x: fd_bracket(a, b, x, chart, step)

    return (fd_bracket(f, inner(g, h), c, chart, step)
            + fd_bracket(g, inner(h, f), c, chart, step)
            + fd_bracket(h, inner(f, g), c, chart, step))


def jacobian(F: Sequence[Observable], z) -> np.ndarray:
    """``k x 2n`` matrix of canonical partials."""
    chart = F[0].chart
    c = _coords(z, chart)
    n2 = 2 * chart.n_dof
    return np.array([f.gradient(c)[:n2] for f in F])


def numerical_rank(A: np.ndarray, rtol: float = RANK_RTOL, atol: float = 0.0) -> int:
    s = np.linalg.svd(np.atleast_2d(A), compute_uv=False)
    if s.size == 0 or s[0] <= atol:
        return 0
    return int(np.sum(s > max(rtol * s[0], atol)))


def independence_rank(F: Sequence[Observable], z, rtol: float = RANK_RTOL) -> int:
    """Rank of the Jacobian of ``F`` at ``z``; full rank means independence."""
    return numerical_rank(jacobian(F, z), rtol)


def structure_matrix(F: Sequence[Observable], z, scheme="analytic",
                     rtol: float = RANK_RTOL) -> tuple[np.ndarray, int]:
    """Antisymmetric matrix ``s_ij = {F_i, F_j}(z)`` and its corank."""
    k = len(F)
    chart = F[0].chart
    c = _coords(z, chart)
    n = chart.n_dof
    grads = [f.gradient(c) for f in F]
    norms = [float(np.linalg.norm(g[:2 * n])) for g in grads]
    if _scheme(scheme, FD_STEP)[0] == "analytic":
        s = np.zeros((k, k))
        for i in range(k):
            qi, pi = _canonical_grad(grads[i], n)
            for j in range(i + 1, k):
                qj, pj = _canonical_grad(grads[j], n)
                s[i, j] = pi @ qj - qi @ pj
                s[j, i] = -s[i, j]
    else:
        s = np.zeros((k, k))
        for i in range(k):
            for j in range(i + 1, k):
                s[i, j] = poisson_bracket(F[i], F[j], c, scheme)
                s[j, i] = -s[i, j]
    if not np.all(np.isfinite(s)):
        raise SingularityError("structure matrix is singular", last_state=c)
    # |{F_i, F_j}| <= |dF_i| |dF_j|: entries below roundoff of that bound are zero
    atol = BRACKET_ATOL * max(a * b for a in norms for b in norms)
    return s, k - numerical_rank(s, rtol, atol)
