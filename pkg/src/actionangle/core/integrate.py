"""Fixed-step integration of Hamilton's equations."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np

from .._backend import kernels
from ..errors import ConvergenceError, SingularityError
from . import expr as ex
from .brackets import vector_field_exprs
from .chart import Observable, PhaseChart, PhasePoint, _coords

METHODS = ("rk4", "implicit_midpoint")
MIDPOINT_TOL = 1e-13
MIDPOINT_MAXITER = 50


@dataclass(frozen=True)
class Trajectory:
    """Time-stamped phase points; ``states`` rows are ``(q..., p...)``."""

    chart: PhaseChart
    times: np.ndarray
    states: np.ndarray
    method: str
    step: float

    def __post_init__(self):
        if len(self.times) != len(self.states):
            raise ValueError("times and states differ in length")
        if len(self.times) > 1 and not np.all(np.diff(self.times) > 0):
            raise ValueError("times must be strictly increasing")

    def __len__(self):
        return len(self.times)

    def points(self) -> np.ndarray:
        """Full chart coordinates for each sample (time slot filled in)."""
        pts = self.states
        if self.chart.time_dependent:
            pts = np.column_stack([pts, self.times])
        if self.chart.extras:
            raise ValueError("trajectories on charts with extra symbols need explicit values")
        return pts

    def point(self, k: int) -> PhasePoint:
        return PhasePoint(self.chart, self.points()[k])

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]

    # -- CSV ---------------------------------------------------------------
    def header(self) -> list[str]:
        return [self.chart.time_name, *self.chart.q_names, *self.chart.p_names]

    def to_csv(self, path=None, extra_columns: dict | None = None) -> str:
        """Write ``t,q1..qn,p1..pn[,extra...]`` at 17 significant digits."""
        extra_columns = extra_columns or {}
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.header() + list(extra_columns))
        cols = [np.asarray(v, dtype=float) for v in extra_columns.values()]
        for k in range(len(self)):
            row = [self.times[k], *self.states[k], *(c[k] for c in cols)]
            w.writerow([fmt(v) for v in row])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", encoding="utf-8", newline="") as fh:
                fh.write(text)
        return text

    @classmethod
    def from_csv(cls, source, chart: PhaseChart, method: str = "", step: float = 0.0):
        text = source if "\n" in str(source) else open(source, encoding="utf-8").read()
        rows = list(csv.reader(io.StringIO(text)))
        head, body = rows[0], rows[1:]
        n2 = 2 * chart.n_dof
        data = np.array([[float(v) for v in r[: n2 + 1]] for r in body])
        if head[: n2 + 1] != [chart.time_name, *chart.q_names, *chart.p_names]:
            raise ValueError(f"unexpected header {head}")
        return cls(chart, data[:, 0], data[:, 1:], method, step)


def fmt(v: float) -> str:
    v = float(v)
    if not math.isfinite(v):
        return "nan" if math.isnan(v) else ("inf" if v > 0 else "-inf")
    return f"{v:.17g}"


@lru_cache(maxsize=256)
def _field_tape(H: Observable) -> ex.Tape:
    chart = H.chart
    if chart.extras:
        raise ValueError("bind extra symbols before integrating")
    names = list(chart.q_names + chart.p_names) + [chart.time_name]
    return ex.Tape(vector_field_exprs(H), names)


def _steps(t_span, step: float) -> tuple[int, float]:
    t0, t1 = map(float, t_span)
    if not step > 0:
        raise ValueError("step must be positive")
    if not t1 > t0:
        raise ValueError("t_span must be increasing")
    n = (t1 - t0) / step
    nsteps = int(round(n)) if abs(n - round(n)) < 1e-9 * max(1.0, n) else int(math.ceil(n))
    nsteps = max(nsteps, 1)
    return nsteps, (t1 - t0) / nsteps


def integrate_hamilton(H: Observable, z0, t_span: Sequence[float], step: float,
                       method: str = "rk4", tol: float = MIDPOINT_TOL,
                       maxiter: int = MIDPOINT_MAXITER) -> Trajectory:
    """Integrate the flow of ``H`` from ``z0`` over ``t_span``.

    The step is shrunk, if needed, so that it divides the span evenly.  ``z0``
    may be a full chart point or just ``(q, p)``; on a time-dependent chart
    its time coordinate is ignored and time runs from ``t_span[0]``.

    Raises
    ------
    SingularityError
        A non-finite state was produced.  ``partial`` holds the trajectory up
        to the last finite state.
    ConvergenceError
        The implicit-midpoint stage iteration failed (``tol``/``maxiter``).
    """
    if method not in METHODS:
        raise ValueError(f"method must be one of {METHODS}")
    chart = H.chart
    n2 = 2 * chart.n_dof
    raw = np.asarray(getattr(z0, "coords", z0), dtype=float)
    c0 = raw if raw.shape == (n2,) else _coords(z0, chart)[:n2]
    nsteps, h = _steps(t_span, step)
    t0 = float(t_span[0])
    tape = _field_tape(H)
    status = 0
    if method == "rk4":
        states, done = kernels.rk4(tape, c0, t0, h, nsteps)
        if done < nsteps:
            status = 1
    else:
        states, done, status = kernels.midpoint(tape, c0, t0, h, nsteps, tol, maxiter)
    times = t0 + h * np.arange(nsteps + 1)
    if status:
        partial = Trajectory(chart, times[: done + 1], states[: done + 1], method, h)
        where = f"t = {times[done]:.6g}"
        if status == 2:
            raise ConvergenceError(f"implicit midpoint stage did not converge after {where}",
                                   iterate=states[done])
        raise SingularityError(f"singular vector field after {where}",
                               last_state=states[done], last_time=times[done], partial=partial)
    return Trajectory(chart, times, states, method, h)


def conservation_report(H: Observable, F: Sequence[Observable], traj: Trajectory,
                        include_hamiltonian: bool = True) -> dict[str, float]:
    """Max ``|F(z(t)) - F(z(t0))|`` along ``traj`` for each observable."""
    pts = traj.points()
    items = list(F)
    if include_hamiltonian and all(f is not H for f in items):
        items = [H] + items
    out = {}
    for k, f in enumerate(items):
        vals = f.evaluate_many(pts)
        if not np.all(np.isfinite(vals)):
            raise SingularityError(f"{f!r} is singular along the trajectory")
        out[f.name or f"F{k}"] = float(np.max(np.abs(vals - vals[0])))
    return out
