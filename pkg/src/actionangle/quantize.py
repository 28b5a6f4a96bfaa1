"""Quantization on the torus in action-angle variables.

States are finite Fourier series ``psi(phi) = sum_n c_n exp(i n.phi)`` with an
offset vector ``lam``; the action operators act as ``I_k psi_n = (n_k + lam_k) psi_n``.
Affine observables ``f = a^k(phi) I_k + b(phi)`` with trigonometric-polynomial
coefficients are quantized as

    f^ = -i a^k d_k - (i/2) (d_k a^k) + a^k lam_k - b

which maps finite supports to finite supports, so everything here is exact
up to floating-point rounding.
"""

from __future__ import annotations

import cmath
import csv
import io
import itertools
import json
import math
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Iterable, Mapping, Sequence

import numpy as np

from .core import Observable, PhaseChart, parse_observable

Mode = tuple

REALITY_TOL = 1e-12


# ---------------------------------------------------------------------------
# trigonometric polynomials
# ---------------------------------------------------------------------------

def _clean(poly: Mapping) -> dict:
    return {tuple(int(v) for v in k): complex(c) for k, c in poly.items() if c != 0}


def poly_add(p: Mapping, q: Mapping, alpha: complex = 1.0) -> dict:
    """``p + alpha q``."""
    out = dict(p)
    for k, c in q.items():
        out[k] = out.get(k, 0) + alpha * c
    return {k: c for k, c in out.items() if c != 0}


def poly_mul(p: Mapping, q: Mapping) -> dict:
    """Product of two Fourier series (convolution of coefficients)."""
    out: dict = {}
    for k1, c1 in p.items():
        for k2, c2 in q.items():
            k = tuple(a + b for a, b in zip(k1, k2))
            out[k] = out.get(k, 0) + c1 * c2
    return {k: c for k, c in out.items() if c != 0}


def poly_deriv(p: Mapping, k: int) -> dict:
    """``d/dphi^k``: mode ``m`` gets multiplied by ``i m_k``."""
    return {m: 1j * m[k] * c for m, c in p.items() if m[k] != 0}


def poly_eval(p: Mapping, phi) -> complex:
    phi = np.atleast_1d(np.asarray(phi, dtype=float))
    return sum(c * cmath.exp(1j * float(np.dot(m, phi))) for m, c in p.items())


def is_real(p: Mapping, tol: float = REALITY_TOL) -> bool:
    """``c_{-m} = conj(c_m)`` for every mode."""
    for m, c in p.items():
        neg = tuple(-v for v in m)
        if abs(p.get(neg, 0) - c.conjugate()) > tol * max(1.0, abs(c)):
            return False
    return True


def bandwidth(p: Mapping) -> int:
    return max((max(abs(v) for v in m) for m in p), default=0)


def trig(m: int, mode: Sequence[int], kind: str, amplitude: float = 1.0) -> dict:
    """``amplitude * cos(mode.phi)`` or ``sin(mode.phi)`` as a Fourier polynomial."""
    mode = tuple(int(v) for v in mode)
    if len(mode) != m:
        raise ValueError("mode length must equal m")
    neg = tuple(-v for v in mode)
    if not any(mode):
        return {mode: complex(amplitude)} if kind == "cos" else {}
    if kind == "cos":
        return {mode: amplitude / 2, neg: amplitude / 2}
    if kind == "sin":
        return {mode: -0.5j * amplitude, neg: 0.5j * amplitude}
    raise ValueError("kind must be 'sin' or 'cos'")


def constant_poly(m: int, value: float) -> dict:
    return {(0,) * m: complex(value)} if value else {}


# ---------------------------------------------------------------------------
# states
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TorusState:
    """Finite Fourier state on the m-torus with action offsets ``lam``."""

    amplitudes: Mapping
    lam: tuple

    def __post_init__(self):
        amps = _clean(self.amplitudes)
        lam = tuple(float(v) for v in self.lam)
        for n in amps:
            if len(n) != len(lam):
                raise ValueError(f"mode {n} does not match m = {len(lam)}")
        object.__setattr__(self, "amplitudes", MappingProxyType(amps))
        object.__setattr__(self, "lam", lam)

    @classmethod
    def basis(cls, n: Sequence[int], lam: Sequence[float] | None = None) -> "TorusState":
        n = tuple(int(v) for v in n)
        return cls({n: 1.0}, tuple(lam) if lam is not None else (0.0,) * len(n))

    @property
    def m(self) -> int:
        return len(self.lam)

    def __getitem__(self, n) -> complex:
        return self.amplitudes.get(tuple(n), 0j)

    def modes(self) -> list:
        return sorted(self.amplitudes)

    def _like(self, amps) -> "TorusState":
        return TorusState(amps, self.lam)

    def _check(self, other: "TorusState"):
        if other.lam != self.lam:
            raise ValueError("states with different offsets live in different spaces")

    def __add__(self, other: "TorusState") -> "TorusState":
        self._check(other)
        return self._like(poly_add(self.amplitudes, other.amplitudes))

    def __sub__(self, other: "TorusState") -> "TorusState":
        self._check(other)
        return self._like(poly_add(self.amplitudes, other.amplitudes, -1.0))

    def __mul__(self, z: complex) -> "TorusState":
        return self._like({n: z * c for n, c in self.amplitudes.items()})

    __rmul__ = __mul__

    def inner(self, other: "TorusState") -> complex:
        """``<self|other> = sum_n self_n * conj(other_n)`` (linear in the first slot)."""
        self._check(other)
        return sum(c * other[n].conjugate() for n, c in self.amplitudes.items())

    def norm(self) -> float:
        return math.sqrt(math.fsum(abs(c) ** 2 for c in self.amplitudes.values()))

    def canonical(self) -> "TorusState":
        """Relabel so every offset lies in [0, 1); keeps each ``n + lam``."""
        shift = tuple(math.floor(v) for v in self.lam)
        lam = tuple(v - s for v, s in zip(self.lam, shift))
        amps = {tuple(a + s for a, s in zip(n, shift)): c for n, c in self.amplitudes.items()}
        return TorusState(amps, lam)

    def to_function(self, phi) -> complex:
        return poly_eval(self.amplitudes, phi)

    # -- JSON -----------------------------------------------------------------
    def to_json_obj(self, half_labels: bool = False) -> dict:
        """``{m, lambda, modes: [{n, re, im}]}``.

        With ``half_labels`` each ``n`` is written as ``n + lambda`` (the
        double-cover label, half-integer for lambda = 1/2) and the document
        carries ``"labels": "n+lambda"``.
        """
        modes = []
        for n in self.modes():
            c = self.amplitudes[n]
            label = [v + l for v, l in zip(n, self.lam)] if half_labels else list(n)
            modes.append({"n": label, "re": c.real, "im": c.imag})
        obj = {"m": self.m, "lambda": list(self.lam), "modes": modes}
        if half_labels:
            obj["labels"] = "n+lambda"
        return obj

    @classmethod
    def from_json_obj(cls, obj: Mapping) -> "TorusState":
        """Inverse of :meth:`to_json_obj`; non-integer labels without the
        ``labels`` marker are read as ``n + lambda`` too."""
        m = int(obj["m"])
        lam = tuple(float(v) for v in obj.get("lambda", [0.0] * m))
        if len(lam) != m:
            raise ValueError("lambda length must equal m")
        shifted = obj.get("labels", "n") == "n+lambda"
        amps: dict = {}
        for entry in obj.get("modes", []):
            label = [float(v) for v in entry["n"]]
            if len(label) != m:
                raise ValueError(f"mode label {label} has wrong length")
            use_shift = shifted or not all(v.is_integer() for v in label)
            n = [v - l if use_shift else v for v, l in zip(label, lam)]
            if not all(abs(v - round(v)) < 1e-9 for v in n):
                raise ValueError(f"mode label {label} is neither n nor n + lambda")
            key = tuple(int(round(v)) for v in n)
            amps[key] = amps.get(key, 0) + complex(float(entry.get("re", 0.0)),
                                                   float(entry.get("im", 0.0)))
        return cls(amps, lam)

    def dumps(self, half_labels: bool = False) -> str:
        from .cli import dumps
        return dumps(self.to_json_obj(half_labels))

    @classmethod
    def loads(cls, text: str) -> "TorusState":
        return cls.from_json_obj(json.loads(text))


def random_state(rng: np.random.Generator, m: int, radius: int,
                 lam: Sequence[float] | None = None) -> TorusState:
    """Unit-norm state with random complex amplitudes on the box ``|n_k| <= radius``."""
    amps = {}
    for n in itertools.product(range(-radius, radius + 1), repeat=m):
        amps[n] = complex(rng.normal(), rng.normal())
    st = TorusState(amps, tuple(lam) if lam is not None else (0.0,) * m)
    return st * (1.0 / st.norm())


# ---------------------------------------------------------------------------
# affine observables and operators
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AffineObservable:
    """``f(I, phi) = sum_k a[k](phi) I_k + b(phi)`` with Fourier-polynomial coefficients."""

    a: tuple
    b: Mapping = field(default_factory=dict)
    check_real: bool = True

    def __post_init__(self):
        a = tuple(MappingProxyType(_clean(ak)) for ak in self.a)
        b = MappingProxyType(_clean(self.b))
        m = len(a)
        if m == 0:
            raise ValueError("need at least one angle")
        for p in (*a, b):
            for mode in p:
                if len(mode) != m:
                    raise ValueError(f"mode {mode} does not match m = {m}")
            if self.check_real and not is_real(p):
                raise ValueError("coefficients must satisfy c_{-n} = conj(c_n)")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)

    @property
    def m(self) -> int:
        return len(self.a)

    @classmethod
    def action(cls, k: int, m: int) -> "AffineObservable":
        return cls(tuple(constant_poly(m, 1.0 if j == k else 0.0) for j in range(m)), {})

    @classmethod
    def function(cls, m: int, b: Mapping) -> "AffineObservable":
        """An observable independent of the actions."""
        return cls(tuple({} for _ in range(m)), b)

    def bandwidth(self) -> int:
        return max(bandwidth(p) for p in (*self.a, self.b))

    def evaluate(self, I, phi) -> float:
        I = np.atleast_1d(np.asarray(I, dtype=float))
        val = sum(poly_eval(ak, phi) * I[k] for k, ak in enumerate(self.a)) + poly_eval(self.b, phi)
        return float(np.real(val))


def poisson_affine(f: AffineObservable, g: AffineObservable) -> AffineObservable:
    """Classical bracket with ``phi`` as coordinates and ``I`` as momenta.

    ``{f, g} = (a^j d_j c^k - c^j d_j a^k) I_k + (a^j d_j d - c^j d_j b)``
    for ``f = a.I + b`` and ``g = c.I + d``.
    """
    if f.m != g.m:
        raise ValueError("observables on different tori")
    m = f.m
    coeff = []
    for k in range(m):
        acc: dict = {}
        for j in range(m):
            acc = poly_add(acc, poly_mul(f.a[j], poly_deriv(g.a[k], j)))
            acc = poly_add(acc, poly_mul(g.a[j], poly_deriv(f.a[k], j)), -1.0)
        coeff.append(acc)
    free: dict = {}
    for j in range(m):
        free = poly_add(free, poly_mul(f.a[j], poly_deriv(g.b, j)))
        free = poly_add(free, poly_mul(g.a[j], poly_deriv(f.b, j)), -1.0)
    return AffineObservable(tuple(coeff), free, check_real=False)


def _check_index(k: int, m: int):
    if not 0 <= k < m:
        raise IndexError(f"action index {k} out of range for m = {m}")


def action_operator(k: int, state: TorusState) -> TorusState:
    """``I_k``: multiply mode ``n`` by ``n_k + lam_k``."""
    _check_index(k, state.m)
    lk = state.lam[k]
    return state._like({n: (n[k] + lk) * c for n, c in state.amplitudes.items()})


def schrodinger_operator(f: AffineObservable, state: TorusState) -> TorusState:
    """Exact mode-space image of ``f^ psi``."""
    if f.m != state.m:
        raise ValueError("observable and state on different tori")
    psi = dict(state.amplitudes)
    out: dict = {}
    for k, ak in enumerate(f.a):
        if not ak:
            continue
        # a^k (n_k + lam_k) psi covers -i a^k d_k + a^k lam_k
        weighted = {n: (n[k] + state.lam[k]) * c for n, c in psi.items()}
        out = poly_add(out, poly_mul(ak, weighted))
        # -(i/2) d_k a^k has mode coefficients (m_k / 2) a^k_m
        half_div = {mm: 0.5 * mm[k] * c for mm, c in ak.items() if mm[k]}
        out = poly_add(out, poly_mul(half_div, psi))
    out = poly_add(out, poly_mul(f.b, psi), -1.0)
    return state._like(out)


def commutator(f: AffineObservable, g: AffineObservable, state: TorusState) -> TorusState:
    return (schrodinger_operator(f, schrodinger_operator(g, state))
            - schrodinger_operator(g, schrodinger_operator(f, state)))


def dirac_residual(f: AffineObservable, g: AffineObservable, probe: TorusState) -> float:
    """``|| ([f^, g^] + i {f,g}^) probe ||``."""
    lhs = commutator(f, g, probe)
    rhs = schrodinger_operator(poisson_affine(f, g), probe)
    return (lhs + 1j * rhs).norm()


def random_affine(rng: np.random.Generator, m: int, band: int, scale: float = 1.0) -> AffineObservable:
    """Real affine observable with random coefficients of bandwidth ``<= band``.

    The coefficients are normalized so that their absolute values sum to
    ``scale`` over all of ``a`` and ``b``; hence ``|a^k(phi)|, |b(phi)| <= scale``.
    """
    def poly():
        out: dict = {}
        for mode in itertools.product(range(-band, band + 1), repeat=m):
            neg = tuple(-v for v in mode)
            if mode in out:
                continue
            if mode == neg:
                out[mode] = complex(rng.normal())
            else:
                c = complex(rng.normal(), rng.normal()) / 2
                out[mode] = c
                out[neg] = c.conjugate()
        return out

    polys = [poly() for _ in range(m + 1)]
    total = sum(abs(c) for p in polys for c in p.values())
    polys = [{k: scale * c / total for k, c in p.items()} for p in polys]
    return AffineObservable(tuple(polys[:m]), polys[m])


# ---------------------------------------------------------------------------
# Hamiltonians of the actions and spectra
# ---------------------------------------------------------------------------

def torus_chart(m: int) -> PhaseChart:
    """Chart with angles ``phi1..phim`` as coordinates and ``I1..Im`` as momenta."""
    return PhaseChart(tuple(f"phi{k + 1}" for k in range(m)), tuple(f"I{k + 1}" for k in range(m)))


def action_hamiltonian(text: str, m: int) -> Observable:
    """Parse ``H(I1..Im)``; angle dependence is rejected."""
    h = parse_observable(text, torus_chart(m), "H")
    angles = {f"phi{k + 1}" for k in range(m)}
    if h.expr.free_vars & angles:
        raise ValueError("the Hamiltonian must depend on the actions only")
    return h


def _energies(H: Observable, actions: np.ndarray) -> np.ndarray:
    m = H.chart.n_dof
    pts = np.column_stack([np.zeros((len(actions), m)), actions])
    return H.evaluate_many(pts)


def _box(box) -> list:
    """``box`` is a ``(lo, hi)`` pair or one pair per dimension."""
    ranges = [tuple(box)] if np.ndim(box) == 1 else [tuple(b) for b in box]
    for lo, hi in ranges:
        if int(hi) < int(lo):
            raise ValueError("empty mode box")
    return [range(int(lo), int(hi) + 1) for lo, hi in ranges]


def spectrum(H: Observable, lam: Sequence[float], box) -> list[tuple[tuple, float]]:
    """``[(n, H(n + lam))]`` for every ``n`` in the box, in lexicographic order."""
    lam = np.atleast_1d(np.asarray(lam, dtype=float))
    m = H.chart.n_dof
    if len(lam) != m:
        raise ValueError("lambda length must equal the number of actions")
    ranges = _box(box)
    if len(ranges) == 1 and m > 1:
        ranges = ranges * m
    if len(ranges) != m:
        raise ValueError("box must give one range or one range per action")
    modes = list(itertools.product(*ranges))
    if not modes:
        raise ValueError("empty mode box")
    E = _energies(H, np.array(modes, dtype=float) + lam)
    return [(n, float(e)) for n, e in zip(modes, E)]


def spectrum_csv(spec: list[tuple[tuple, float]], path=None) -> str:
    from .core.integrate import fmt
    m = len(spec[0][0]) if spec else 1
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([f"n{k + 1}" for k in range(m)] + ["E"])
    for n, e in spec:
        w.writerow([str(v) for v in n] + [fmt(e)])
    text = buf.getvalue()
    if path is not None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    return text


def kepler_quantum_example(lam: float, k_range: Iterable[int], H: Observable | None = None,
                           variant: str = "minus") -> list[tuple[int, float]]:
    """Spectrum of the single-action Kepler example, ``E_k = H(k - lam)``.

    ``variant="plus"`` gives ``H(k + lam)``, the convention used by
    :func:`spectrum` and :func:`action_operator`.
    """
    if H is None:
        H = action_hamiltonian("I1", 1)
    if variant not in ("minus", "plus"):
        raise ValueError("variant must be 'minus' or 'plus'")
    ks = list(k_range)
    sign = -1.0 if variant == "minus" else 1.0
    E = _energies(H, np.array(ks, dtype=float)[:, None] + sign * lam)
    return [(int(k), float(e)) for k, e in zip(ks, E)]


def _phases(state: TorusState, H: Observable, t: float, sign: float) -> TorusState:
    if H.chart.n_dof != state.m:
        raise ValueError("Hamiltonian and state have different numbers of actions")
    modes = state.modes()
    if not modes:
        return state
    E = _energies(H, np.array(modes, dtype=float) + np.array(state.lam))
    return state._like({n: cmath.exp(sign * 1j * t * e) * state.amplitudes[n]
                        for n, e in zip(modes, E)})


def evolve(state: TorusState, H: Observable, t: float) -> TorusState:
    """Free evolution ``psi_n -> exp(-i t H(n + lam)) psi_n``."""
    return _phases(state, H, t, -1.0)


def r_isomorphism(state: TorusState, H: Observable, t: float) -> TorusState:
    """``psi_n -> exp(+i t H(n + lam)) psi_n``: undoes the free evolution."""
    return _phases(state, H, t, 1.0)
