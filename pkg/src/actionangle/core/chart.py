"""Phase charts, points and observables."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np

from .._backend import kernels
from ..errors import ExpressionError, SingularityError
from . import expr as ex


@dataclass(frozen=True)
class PhaseChart:
    """Canonical coordinates ``(q^i, p_i)`` plus optional time and extras.

    Symbols are ordered ``q..., p..., [t], extras...``.  Only the ``(q, p)``
    pairs take part in Poisson brackets; ``t`` and extras are inert
    parameters.
    """

    q_names: tuple
    p_names: tuple
    time_dependent: bool = False
    extras: tuple = ()
    time_name: str = "t"

    def __post_init__(self):
        object.__setattr__(self, "q_names", tuple(self.q_names))
        object.__setattr__(self, "p_names", tuple(self.p_names))
        object.__setattr__(self, "extras", tuple(self.extras))
        if len(self.q_names) != len(self.p_names) or not self.q_names:
            raise ValueError("need n >= 1 matching q and p names")
        names = self.symbols
        if len(set(names)) != len(names):
            raise ValueError(f"coordinate names must be distinct: {names}")
        for n in names:
            if n in ex.FUNCTIONS:
                raise ValueError(f"{n!r} is reserved")

    @classmethod
    def canonical(cls, n_dof: int, time_dependent: bool = False, extras=()) -> "PhaseChart":
        return cls(tuple(f"q{i + 1}" for i in range(n_dof)),
                   tuple(f"p{i + 1}" for i in range(n_dof)),
                   time_dependent, tuple(extras))

    @property
    def n_dof(self) -> int:
        return len(self.q_names)

    @property
    def dim(self) -> int:
        """Length of a phase point: ``2n`` plus one slot for ``t`` if present."""
        return 2 * self.n_dof + (1 if self.time_dependent else 0)

    @property
    def symbols(self) -> tuple:
        s = self.q_names + self.p_names
        if self.time_dependent:
            s = s + (self.time_name,)
        return s + self.extras

    def index(self, name: str) -> int:
        return self.symbols.index(name)

    def point(self, q: Sequence[float], p: Sequence[float], t: float | None = None,
              extras: Sequence[float] = ()) -> "PhasePoint":
        coords = list(q) + list(p)
        if self.time_dependent:
            coords.append(0.0 if t is None else t)
        coords.extend(extras)
        return PhasePoint(self, np.asarray(coords, dtype=float))


@dataclass(frozen=True)
class PhasePoint:
    chart: PhaseChart
    coords: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.coords, dtype=float)
        if c.shape != (len(self.chart.symbols),):
            raise ValueError(f"expected {len(self.chart.symbols)} coordinates, got {c.shape}")
        c = c.copy()
        c.flags.writeable = False
        object.__setattr__(self, "coords", c)

    @property
    def q(self) -> np.ndarray:
        return self.coords[: self.chart.n_dof]

    @property
    def p(self) -> np.ndarray:
        n = self.chart.n_dof
        return self.coords[n: 2 * n]

    @property
    def t(self) -> float:
        return float(self.coords[2 * self.chart.n_dof]) if self.chart.time_dependent else 0.0


def _coords(z, chart: PhaseChart) -> np.ndarray:
    if isinstance(z, PhasePoint):
        if z.chart != chart:
            raise ValueError("point belongs to a different chart")
        return z.coords
    c = np.asarray(z, dtype=float)
    if c.shape != (len(chart.symbols),):
        raise ValueError(f"expected {len(chart.symbols)} coordinates, got {c.shape}")
    return c


@dataclass(frozen=True, eq=False)
class Observable:
    """A scalar field on a chart given by an expression with symbolic gradient."""

    expr: ex.Expr
    chart: PhaseChart
    name: str = field(default="", compare=False)

    def __post_init__(self):
        unknown = self.expr.free_vars - set(self.chart.symbols)
        if unknown:
            raise ExpressionError(f"identifiers not in chart: {sorted(unknown)}")

    # -- construction ------------------------------------------------------
    @classmethod
    def parse(cls, text: str, chart: PhaseChart, name: str = "") -> "Observable":
        return cls(ex.parse(text, chart.symbols), chart, name)

    def text(self) -> str:
        return ex.to_text(self.expr)

    def __eq__(self, other):
        return isinstance(other, Observable) and self.expr is other.expr and self.chart == other.chart

    def __hash__(self):
        return hash((id(self.expr), self.chart))

    def __repr__(self):
        label = f"{self.name}=" if self.name else ""
        return f"Observable({label}{self.text()!r})"

    def renamed(self, name: str) -> "Observable":
        return Observable(self.expr, self.chart, name)

    # -- calculus ----------------------------------------------------------
    @cached_property
    def grad(self) -> tuple:
        """Symbolic partials, one per chart symbol, in chart order."""
        return tuple(ex.diff(self.expr, s) for s in self.chart.symbols)

    def partial(self, name: str) -> "Observable":
        return Observable(self.grad[self.chart.index(name)], self.chart)

    @cached_property
    def _value_tape(self) -> ex.Tape:
        return ex.Tape([self.expr], self.chart.symbols)

    @cached_property
    def _grad_tape(self) -> ex.Tape:
        return ex.Tape([self.expr, *self.grad], self.chart.symbols)

    def __call__(self, z) -> float:
        return self.evaluate(z)

    def evaluate(self, z) -> float:
        c = _coords(z, self.chart)
        v = kernels.eval_tape(self._value_tape, c)[0]
        if not np.isfinite(v):
            raise SingularityError(f"{self!r} is singular at {c.tolist()}", last_state=c)
        return float(v)

    def value_and_gradient(self, z) -> tuple[float, np.ndarray]:
        c = _coords(z, self.chart)
        out = kernels.eval_tape(self._grad_tape, c)
        if not np.all(np.isfinite(out)):
            raise SingularityError(f"{self!r} or its gradient is singular at {c.tolist()}",
                                   last_state=c)
        return float(out[0]), out[1:]

    def gradient(self, z) -> np.ndarray:
        return self.value_and_gradient(z)[1]

    def evaluate_many(self, Z) -> np.ndarray:
        """Vectorized evaluation over rows of ``Z``; singular rows give nan."""
        Z = np.atleast_2d(np.asarray(Z, dtype=float))
        out = kernels.eval_tape_batch(self._value_tape, Z)[:, 0]
        out[~np.isfinite(out)] = np.nan
        return out

    # -- algebra -----------------------------------------------------------
    def _lift(self, other) -> ex.Expr:
        if isinstance(other, Observable):
            if other.chart != self.chart:
                raise ValueError("observables live on different charts")
            return other.expr
        return ex.const(other)

    def __add__(self, o):
        return Observable(ex.add(self.expr, self._lift(o)), self.chart)

    def __radd__(self, o):
        return Observable(ex.add(self._lift(o), self.expr), self.chart)

    def __sub__(self, o):
        return Observable(ex.sub(self.expr, self._lift(o)), self.chart)

    def __rsub__(self, o):
        return Observable(ex.sub(self._lift(o), self.expr), self.chart)

    def __mul__(self, o):
        return Observable(ex.mul(self.expr, self._lift(o)), self.chart)

    def __rmul__(self, o):
        return Observable(ex.mul(self._lift(o), self.expr), self.chart)

    def __truediv__(self, o):
        return Observable(ex.div(self.expr, self._lift(o)), self.chart)

    def __rtruediv__(self, o):
        return Observable(ex.div(self._lift(o), self.expr), self.chart)

    def __neg__(self):
        return Observable(ex.neg(self.expr), self.chart)

    def __pow__(self, k):
        return Observable(ex.power(self.expr, k), self.chart)

    def apply(self, fname: str, *others: "Observable") -> "Observable":
        return Observable(ex.func(fname, self.expr, *(self._lift(o) for o in others)), self.chart)


def parse_observable(text: str, chart: PhaseChart, name: str = "") -> Observable:
    """Parse ``text`` into an :class:`Observable` on ``chart``.

    Raises :class:`~actionangle.errors.ExpressionError` (with ``offset``) on
    syntax errors, :class:`~actionangle.errors.UnknownIdentifierError` for
    symbols outside the chart and
    :class:`~actionangle.errors.NonRationalExponentError` for exponents that
    are not rational literals.
    """
    return Observable.parse(text, chart, name)


def constant(value: float, chart: PhaseChart) -> Observable:
    return Observable(ex.const(value), chart)


def coordinate(name: str, chart: PhaseChart) -> Observable:
    if name not in chart.symbols:
        raise ValueError(f"{name!r} not in chart")
    return Observable(ex.var(name), chart, name)


@dataclass(frozen=True, eq=False)
class HomogeneousObservable:
    """``H* = p0 + H(t, q, p)`` on the chart extended by the pair ``(t, p0)``.

    The extended chart lists ``t`` as the first coordinate and ``p0`` as the
    first momentum, so the flow of ``H*`` has ``dt/ds = 1``.
    """

    base: Observable
    extended: Observable
    p0_name: str = "p0"

    def evaluate(self, z_ext) -> float:
        return self.extended.evaluate(z_ext)

    def lift_point(self, z, p0: float | None = None) -> PhasePoint:
        """Embed a base point; ``p0`` defaults to ``-H(z)`` (the zero level)."""
        base_chart = self.base.chart
        c = _coords(z, base_chart)
        n = base_chart.n_dof
        t = c[2 * n] if base_chart.time_dependent else 0.0
        if p0 is None:
            p0 = -self.base.evaluate(c)
        extra = c[2 * n + (1 if base_chart.time_dependent else 0):]
        return self.extended.chart.point([t, *c[:n]], [p0, *c[n:2 * n]], extras=extra)


def homogeneous_extend(H: Observable, p0_name: str = "p0") -> HomogeneousObservable:
    base = H.chart
    t = base.time_name
    if t in base.q_names + base.p_names or p0_name in base.symbols:
        raise ValueError("time or p0 symbol already used as a canonical coordinate")
    chart = PhaseChart((t,) + base.q_names, (p0_name,) + base.p_names,
                       time_dependent=False, extras=base.extras)
    return HomogeneousObservable(H, Observable(ex.add(ex.var(p0_name), H.expr), chart,
                                               f"{H.name}*" if H.name else ""), p0_name)
