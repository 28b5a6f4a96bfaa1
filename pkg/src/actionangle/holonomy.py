"""Driven integrable systems: classical holonomy flow and quantum transport.

A connection assigns to every parameter direction ``alpha`` a vector field
``Lambda_alpha(sigma, phi)`` on the torus.  Driving the parameters along a
path ``sigma(t)`` moves the angles by ``dphi/dt = Lambda_alpha dsigma^alpha/dt``
and the actions by the cotangent lift of that flow.  The quantum counterpart
transports half-densities along the same flow.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ._backend import kernels, threads
from .core import expr as ex
from .errors import ConfigError, GridResolutionError, SingularityError
from .quantize import TorusState, action_hamiltonian, r_isomorphism

__all__ = [
    "ConnectionField",
    "ParameterPath",
    "PathPiece",
    "HolonomyState",
    "HolonomyTrajectory",
    "QuantumHolonomy",
    "ALLOWED_LAMBDA",
    "MIN_GRID",
    "berry_multiplier",
    "classical_holonomy",
    "connection_bandwidth",
    "grid_nodes",
    "grid_values",
    "quantum_holonomy",
    "r_isomorphism",
    "reparametrization_check",
    "to_original_coordinates",
]

TWO_PI = 2.0 * math.pi
ALLOWED_LAMBDA = (0.0, 0.5, -0.5)
MIN_GRID = 16
GRID_PER_BAND = 4
BANDWIDTH_TOL = 1e-12
PERIODICITY_TOL = 1e-9
PATH_TOL = 1e-8


def _angle_names(m: int) -> tuple:
    return tuple(f"phi{k + 1}" for k in range(m))


def _sigma_names(d: int) -> tuple:
    return tuple(f"sigma{a + 1}" for a in range(d))


def _parse(text: str, symbols: Sequence[str], aliases: dict) -> ex.Expr:
    e = ex.parse(text, (*symbols, *aliases))
    return ex.substitute(e, {k: ex.var(v) for k, v in aliases.items()})


def _angles_inside_trig(e: ex.Expr, angles: frozenset) -> bool:
    """True when every occurrence of an angle sits under some sin or cos."""
    memo: dict = {}

    def ok(node):
        if node.op in ("sin", "cos"):
            return True
        if node.op == "var":
            return node.value not in angles
        hit = memo.get(node)
        if hit is None:
            hit = memo[node] = all(ok(a) for a in node.args)
        return hit

    return ok(e)


# ---------------------------------------------------------------------------
# connection and path
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ConnectionField:
    """Coefficients ``Lambda^k_alpha(sigma1..sigmad, phi1..phim)``.

    ``coeffs[k][alpha]`` is the ``phi^k`` component along parameter
    ``sigma^alpha``.  Angles may only occur inside ``sin``/``cos``.
    """

    m: int
    d: int
    coeffs: tuple  # m rows of d expressions

    @classmethod
    def parse(cls, coeffs: Sequence[Sequence[str]], m: int | None = None,
              d: int | None = None) -> "ConnectionField":
        rows = [list(r) if not isinstance(r, str) else [r] for r in coeffs]
        m = len(rows) if m is None else m
        d = len(rows[0]) if d is None and rows else d
        if m < 1 or d is None or d < 1:
            raise ConfigError("connection needs m >= 1 and d >= 1")
        if len(rows) != m or any(len(r) != d for r in rows):
            raise ConfigError(f"connection coefficients must form an {m} x {d} table")
        aliases = {}
        if m == 1:
            aliases["phi"] = "phi1"
        if d == 1:
            aliases["sigma"] = "sigma1"
        symbols = (*_sigma_names(d), *_angle_names(m))
        exprs = tuple(tuple(_parse(t, symbols, aliases) for t in r) for r in rows)
        return cls(m, d, exprs)

    def __post_init__(self):
        angles = frozenset(_angle_names(self.m))
        for row in self.coeffs:
            for e in row:
                if not _angles_inside_trig(e, angles):
                    raise ConfigError(f"angle outside sin/cos in {ex.to_text(e)!r}")
        self._check_periodic()

    @property
    def symbols(self) -> tuple:
        return (*_sigma_names(self.d), *_angle_names(self.m))

    def _check_periodic(self):
        # sin(phi1/2) passes the syntactic test but is not a torus function
        rng = np.random.default_rng(0)
        pts = rng.uniform(-1.0, 1.0, (4, self.d + self.m))
        pts[:, self.d:] *= math.pi
        tape = ex.Tape([e for r in self.coeffs for e in r], self.symbols)
        base = kernels.eval_tape_batch(tape, pts)
        for k in range(self.m):
            shifted = pts.copy()
            shifted[:, self.d + k] += TWO_PI
            other = kernels.eval_tape_batch(tape, shifted)
            ok = np.isfinite(base) & np.isfinite(other)
            if np.any(np.abs(base - other)[ok] > PERIODICITY_TOL * np.maximum(1.0, np.abs(base[ok]))):
                raise ConfigError(f"connection is not 2pi-periodic in phi{k + 1}")

    @property
    def is_principal(self) -> bool:
        return all(e.is_const for r in self.coeffs for e in r)

    def constants(self) -> np.ndarray:
        if not self.is_principal:
            raise ValueError("connection coefficients are not constant")
        return np.array([[e.value for e in r] for r in self.coeffs])

    def texts(self) -> list:
        return [[ex.to_text(e) for e in r] for r in self.coeffs]


@dataclass(frozen=True)
class PathPiece:
    """One C^1 piece ``sigma(t)``, ``t`` in ``[t0, t1]``."""

    t0: float
    t1: float
    components: tuple
    derivatives: tuple

    def values(self, t: float) -> np.ndarray:
        tape = ex.Tape(list(self.components), ("t",))
        return kernels.eval_tape(tape, np.array([t]))

    def rates(self, t: float) -> np.ndarray:
        tape = ex.Tape(list(self.derivatives), ("t",))
        return kernels.eval_tape(tape, np.array([t]))


def _check_derivatives(comps, derivs, t0, t1):
    auto = [ex.diff(c, "t") for c in comps]
    ts = np.linspace(t0, t1, 17)[:, None]
    a = kernels.eval_tape_batch(ex.Tape(auto, ("t",)), ts)
    b = kernels.eval_tape_batch(ex.Tape(list(derivs), ("t",)), ts)
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise ConfigError("path or its derivative is singular on its interval")
    if np.any(np.abs(a - b) > PATH_TOL * np.maximum(1.0, np.abs(a))):
        raise ConfigError("stated path derivative disagrees with d/dt of the components")


@dataclass(frozen=True)
class ParameterPath:
    """Piecewise C^1 path in parameter space starting at ``t = 0``."""

    pieces: tuple

    @classmethod
    def from_pieces(cls, pieces: Sequence[dict]) -> "ParameterPath":
        """``pieces``: dicts with ``t0, t1, components`` and optional ``derivatives``."""
        out = []
        for p in pieces:
            comps = tuple(_parse(c, ("t",), {}) for c in p["components"])
            if p.get("derivatives") is None:
                derivs = tuple(ex.diff(c, "t") for c in comps)
            else:
                derivs = tuple(_parse(c, ("t",), {}) for c in p["derivatives"])
                if len(derivs) != len(comps):
                    raise ConfigError("one derivative per path component is required")
                _check_derivatives(comps, derivs, float(p["t0"]), float(p["t1"]))
            out.append(PathPiece(float(p["t0"]), float(p["t1"]), comps, derivs))
        return cls(tuple(out))

    @classmethod
    def from_exprs(cls, T: float, components: Sequence[str],
                   derivatives: Sequence[str] | None = None) -> "ParameterPath":
        return cls.from_pieces([{"t0": 0.0, "t1": T, "components": components,
                                 "derivatives": derivatives}])

    def __post_init__(self):
        if not self.pieces:
            raise ConfigError("empty path")
        d = len(self.pieces[0].components)
        if self.pieces[0].t0 != 0.0:
            raise ConfigError("path must start at t = 0")
        for a, b in zip(self.pieces, self.pieces[1:]):
            if a.t1 != b.t0:
                raise ConfigError("path pieces must be contiguous")
            va, vb = a.values(a.t1), b.values(b.t0)
            if np.any(np.abs(va - vb) > PATH_TOL * np.maximum(1.0, np.abs(va))):
                raise ConfigError(f"path is discontinuous at t = {a.t1}")
        for p in self.pieces:
            if not p.t1 > p.t0:
                raise ConfigError("path pieces need t1 > t0")
            if len(p.components) != d or len(p.derivatives) != d:
                raise ConfigError("all path pieces need the same dimension")

    @property
    def d(self) -> int:
        return len(self.pieces[0].components)

    @property
    def T(self) -> float:
        return self.pieces[-1].t1

    @property
    def breakpoints(self) -> list:
        return [p.t1 for p in self.pieces[:-1]]

    def start(self) -> np.ndarray:
        return self.pieces[0].values(0.0)

    def end(self) -> np.ndarray:
        return self.pieces[-1].values(self.T)

    def displacement(self) -> np.ndarray:
        return self.end() - self.start()

    def compose(self, repar: "ParameterPath") -> "ParameterPath":
        """``sigma(r(t))`` for a scalar monotone reparametrization ``r``."""
        if repar.d != 1:
            raise ConfigError("a reparametrization is a scalar path")
        _check_monotone(repar, self.T)
        out = []
        for rp in repar.pieces:
            r, dr = rp.components[0], rp.derivatives[0]
            lo, hi = float(rp.values(rp.t0)[0]), float(rp.values(rp.t1)[0])
            host = [p for p in self.pieces if p.t0 - PATH_TOL <= lo and hi <= p.t1 + PATH_TOL]
            if not host:
                raise ConfigError("split the reparametrization at the path's breakpoints")
            p = host[0]
            comps = tuple(ex.substitute(c, {"t": r}) for c in p.components)
            derivs = tuple(ex.mul(ex.substitute(c, {"t": r}), dr) for c in p.derivatives)
            out.append(PathPiece(rp.t0, rp.t1, comps, derivs))
        return ParameterPath(tuple(out))


def _check_monotone(repar: ParameterPath, T: float, samples: int = 1001):
    if abs(float(repar.start()[0])) > PATH_TOL or abs(float(repar.end()[0]) - T) > PATH_TOL * max(1.0, T):
        raise ConfigError("reparametrization must map 0 -> 0 and T' -> T")
    for p in repar.pieces:
        ts = np.linspace(p.t0, p.t1, samples)[:, None]
        rate = kernels.eval_tape_batch(ex.Tape([p.derivatives[0]], ("t",)), ts)[:, 0]
        # the endpoint of the first piece may have r' = 0 (t^2 at 0)
        interior = rate[1:-1]
        if not np.all(np.isfinite(rate)) or np.any(interior <= 0.0) or np.any(rate < 0.0):
            raise ConfigError("reparametrization is not monotone increasing")


# ---------------------------------------------------------------------------
# classical holonomy
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class HolonomyState:
    I: tuple
    phi: tuple

    def __post_init__(self):
        object.__setattr__(self, "I", tuple(float(v) for v in self.I))
        object.__setattr__(self, "phi", tuple(float(np.mod(v, TWO_PI)) for v in self.phi))
        if len(self.I) != len(self.phi):
            raise ValueError("I and phi must have the same length")

    @property
    def m(self) -> int:
        return len(self.I)


@dataclass
class HolonomyTrajectory:
    """Samples of ``(I, phi)``; ``phi`` is kept unwrapped (continuous)."""

    t: np.ndarray
    I: np.ndarray
    phi: np.ndarray

    def __len__(self):
        return len(self.t)

    @property
    def m(self) -> int:
        return self.I.shape[1]

    @property
    def final(self) -> HolonomyState:
        return HolonomyState(self.I[-1], self.phi[-1])

    def state(self, k: int) -> HolonomyState:
        return HolonomyState(self.I[k], self.phi[k])

    def header(self) -> list:
        m = self.m
        return ["t", *(f"I{k + 1}" for k in range(m)), *(f"phi{k + 1}" for k in range(m))]

    def to_csv(self, path=None, extra_columns: dict | None = None) -> str:
        extra = extra_columns or {}
        cols = [self.t, *self.I.T, *np.mod(self.phi, TWO_PI).T, *extra.values()]
        lines = [",".join([*self.header(), *extra])]
        for row in zip(*cols):
            lines.append(",".join("%.17g" % v for v in row))
        text = "\n".join(lines) + "\n"
        if path is not None:
            with open(path, "w", encoding="utf-8") as fh:
                fh.write(text)
        return text


def _holonomy_field(conn: ConnectionField, piece: PathPiece, with_actions: bool):
    """Right-hand side exprs in ``(phi..., I...)`` for one path piece."""
    if len(piece.components) != conn.d:
        raise ConfigError(f"path has {len(piece.components)} components, connection needs {conn.d}")
    sub = {s: c for s, c in zip(_sigma_names(conn.d), piece.components)}
    lam = [[ex.substitute(e, sub) for e in row] for row in conn.coeffs]
    angles = _angle_names(conn.m)
    v = [ex.total(ex.mul(lam[k][a], piece.derivatives[a]) for a in range(conn.d))
         for k in range(conn.m)]
    if not with_actions:
        return v
    acts = [ex.var(f"I{k + 1}") for k in range(conn.m)]
    dI = [ex.neg(ex.total(ex.mul(acts[k], ex.diff(v[k], angles[i])) for k in range(conn.m)))
          for i in range(conn.m)]
    return [*v, *dI]


def _steps(piece: PathPiece, step: float) -> tuple[int, float]:
    span = piece.t1 - piece.t0
    n = max(1, math.ceil(span / step - 1e-9))
    return n, span / n


def classical_holonomy(conn: ConnectionField, path: ParameterPath, s0: HolonomyState,
                       step: float) -> HolonomyTrajectory:
    """RK4 on the angle flow and its cotangent lift; restarts at breakpoints."""
    if not step > 0:
        raise ValueError("step must be positive")
    if s0.m != conn.m:
        raise ValueError(f"state has {s0.m} angles, connection has {conn.m}")
    m = conn.m
    names = (*_angle_names(m), *(f"I{k + 1}" for k in range(m)), "t")
    y = np.array([*s0.phi, *s0.I])
    ts, rows = [np.array([0.0])], [y[None, :]]
    for piece in path.pieces:
        n, h = _steps(piece, step)
        tape = ex.Tape(_holonomy_field(conn, piece, True), names)
        traj, done = kernels.rk4(tape, y, piece.t0, h, n)
        if done < n:
            raise SingularityError(f"connection evaluation failed at t = {piece.t0 + done * h}",
                                   last_state=traj[done], last_time=piece.t0 + done * h)
        t = piece.t0 + h * np.arange(1, n + 1)
        t[-1] = piece.t1
        ts.append(t)
        rows.append(traj[1:])
        y = traj[-1]
    Y = np.vstack(rows)
    return HolonomyTrajectory(np.concatenate(ts), Y[:, m:].copy(), Y[:, :m].copy())


def reparametrization_check(conn: ConnectionField, path: ParameterPath, repar: ParameterPath,
                            s0: HolonomyState, step: float) -> float:
    """Max-norm deviation of the final ``(I, phi)`` under ``sigma -> sigma o repar``."""
    ref = classical_holonomy(conn, path, s0, step)
    alt = classical_holonomy(conn, path.compose(repar), s0, step)
    dI = np.abs(ref.I[-1] - alt.I[-1])
    dphi = np.abs(ref.phi[-1] - alt.phi[-1])
    return float(max(dI.max(), dphi.max()))


def to_original_coordinates(traj: HolonomyTrajectory, H_poly) -> HolonomyTrajectory:
    """Angles of the undriven chart: ``phi(t) = phi_bar(t) + t dH/dI(I(t))``."""
    m = traj.m
    H = action_hamiltonian(H_poly, m) if isinstance(H_poly, str) else H_poly
    grads = [H.partial(f"I{k + 1}") for k in range(m)]
    pts = np.column_stack([traj.phi, traj.I])
    omega = np.column_stack([g.evaluate_many(pts) for g in grads])
    return HolonomyTrajectory(traj.t.copy(), traj.I.copy(), traj.phi + traj.t[:, None] * omega)


# ---------------------------------------------------------------------------
# quantum transport
# ---------------------------------------------------------------------------

def berry_multiplier(conn: ConnectionField, path: ParameterPath, n: Sequence[int],
                     lam: Sequence[float] | None = None) -> complex:
    """``exp[-i (n + lam)_j dsigma^alpha Lambda^j_alpha]`` for a constant connection."""
    if not conn.is_principal:
        raise ValueError("the Berry multiplier needs a constant connection")
    shift = np.zeros(conn.m) if lam is None else np.asarray(lam, dtype=float)
    k = np.asarray(n, dtype=float) + shift
    phase = float(k @ conn.constants() @ path.displacement())
    return complex(math.cos(phase), -math.sin(phase))


def grid_nodes(N: int, m: int) -> np.ndarray:
    """Nodes ``2 pi j / N`` of the product grid, shape ``(N**m, m)``, C order."""
    axes = np.meshgrid(*([TWO_PI * np.arange(N) / N] * m), indexing="ij")
    return np.column_stack([a.ravel() for a in axes])


def _grid_modes(values: np.ndarray) -> dict:
    """Trigonometric interpolant of grid data; the Nyquist mode is split evenly."""
    N = values.shape[0]
    m = values.ndim
    c = np.fft.fftn(values) / N**m
    freqs = np.fft.fftfreq(N, 1.0 / N).astype(int)
    out: dict = {}
    for idx in np.ndindex(*c.shape):
        coef = c[idx]
        if coef == 0:
            continue
        ks = [freqs[i] for i in idx]
        # the Nyquist frequency -N/2 is shared between -N/2 and +N/2
        choices = [[-N // 2, N // 2] if (N % 2 == 0 and k == -N // 2) else [k] for k in ks]
        share = coef / np.prod([len(ch) for ch in choices])
        for key in np.array(np.meshgrid(*choices, indexing="ij")).reshape(m, -1).T:
            key = tuple(int(v) for v in key)
            out[key] = out.get(key, 0) + share
    return out


def _eval_modes(modes: dict, points: np.ndarray, chunk: int = 4096) -> np.ndarray:
    """Evaluate ``sum_n c_n exp(i n . phi)`` at ``points`` (shape ``(P, m)``)."""
    P, m = points.shape
    out = np.zeros(P, dtype=complex)
    if not modes:
        return out
    keys = np.array(list(modes), dtype=float)
    coefs = np.array([modes[k] for k in modes], dtype=complex)
    for s in range(0, P, chunk):
        ph = points[s:s + chunk] @ keys.T
        out[s:s + chunk] = np.exp(1j * ph) @ coefs
    return out


def grid_values(state: TorusState, N: int) -> np.ndarray:
    """Values of ``sum_n c_n exp(i n . phi)`` on the product grid, shape ``(N,)*m``."""
    vals = _eval_modes(dict(state.amplitudes), grid_nodes(N, state.m))
    return vals.reshape((N,) * state.m)


def connection_bandwidth(conn: ConnectionField, path: ParameterPath, samples: int = 5) -> int:
    """Largest angle frequency of ``Lambda`` with relative weight above 1e-12.

    Measured on a 64-point (m <= 2) or 16-point grid per angle at ``samples``
    parameter values along the path.
    """
    M = 64 if conn.m <= 2 else 16
    nodes = grid_nodes(M, conn.m)
    tape = ex.Tape([e for r in conn.coeffs for e in r], conn.symbols)
    freqs = np.abs(np.fft.fftfreq(M, 1.0 / M)).astype(int)
    band = 0
    for piece in path.pieces:
        for t in np.linspace(piece.t0, piece.t1, samples):
            sig = piece.values(t)
            X = np.column_stack([np.broadcast_to(sig, (len(nodes), conn.d)), nodes])
            vals = kernels.eval_tape_batch(tape, X)
            for col in vals.T:
                c = np.abs(np.fft.fftn(col.reshape((M,) * conn.m))) / M**conn.m
                big = c > BANDWIDTH_TOL * max(1.0, c.max())
                for idx in zip(*np.nonzero(big)):
                    band = max(band, max(freqs[i] for i in idx))
    return int(band)


def _check_lambda(lam: Sequence[float], m: int) -> tuple:
    lam = tuple(float(v) for v in lam)
    if len(lam) != m:
        raise ValueError(f"need {m} lambda components, got {len(lam)}")
    for v in lam:
        if v not in ALLOWED_LAMBDA:
            raise ValueError(f"lambda components must be 0 or +-1/2, got {v}")
    return lam


def _characteristics_tape(conn: ConnectionField, piece: PathPiece) -> ex.Tape:
    """Displacement ``delta`` from a fixed node plus the variational equation.

    Integrating ``delta`` instead of the position keeps the rounding relative
    to the (small) displacement rather than to the angle itself.
    """
    m = conn.m
    angles = _angle_names(m)
    v = _holonomy_field(conn, piece, False)
    Dv = [[ex.diff(v[i], angles[l]) for l in range(m)] for i in range(m)]
    shift = {a: ex.add(ex.var(f"node{k + 1}"), ex.var(f"delta{k + 1}")) for k, a in enumerate(angles)}
    v = [ex.substitute(e, shift) for e in v]
    Dv = [[ex.substitute(e, shift) for e in row] for row in Dv]
    V = [[ex.var(f"V{i + 1}_{j + 1}") for j in range(m)] for i in range(m)]
    dV = [ex.total(ex.mul(Dv[i][l], V[l][j]) for l in range(m))
          for i in range(m) for j in range(m)]
    names = (*(f"node{k + 1}" for k in range(m)), *(f"delta{k + 1}" for k in range(m)),
             *(f"V{i + 1}_{j + 1}" for i in range(m) for j in range(m)), "t")
    return ex.Tape([*([ex.ZERO] * m), *v, *dV], names)


def _run_batch(tape, X, t0, h, n):
    workers = min(threads(), max(1, len(X) // 256))
    if workers <= 1:
        return kernels.rk4_batch(tape, X, t0, h, n)
    parts = np.array_split(X, workers)
    with ThreadPoolExecutor(workers) as pool:
        done = list(pool.map(lambda part: kernels.rk4_batch(tape, part, t0, h, n), parts))
    return np.vstack(done)


def _backward_flow(conn: ConnectionField, path: ParameterPath, nodes: np.ndarray, step: float):
    """Displacements ``Phi^{-1}(T, phi) - phi`` and ``det d Phi^{-1}/d phi``."""
    m = conn.m
    X = np.column_stack([nodes, np.zeros_like(nodes), np.tile(np.eye(m).ravel(), (len(nodes), 1))])
    for piece in reversed(path.pieces):
        n, h = _steps(piece, step)
        X = _run_batch(_characteristics_tape(conn, piece), X, piece.t1, -h, n)
    if not np.all(np.isfinite(X)):
        raise SingularityError("characteristic integration failed")
    disp = X[:, m:2 * m]
    J = np.linalg.det(X[:, 2 * m:].reshape(-1, m, m))
    return disp, J


@dataclass
class QuantumHolonomy:
    """Transported grid function with its offsets ``lam``."""

    values: np.ndarray
    lam: tuple
    feet: np.ndarray = field(repr=False)
    jacobian: np.ndarray = field(repr=False)

    @property
    def N(self) -> int:
        return self.values.shape[0]

    @property
    def m(self) -> int:
        return self.values.ndim

    def norm(self) -> float:
        """Grid norm ``((2 pi / N)^m sum |Psi|^2)^{1/2}``."""
        return math.sqrt((TWO_PI / self.N) ** self.m * float(np.sum(np.abs(self.values) ** 2)))

    def state(self) -> TorusState:
        """Fourier modes of the result; serialized labels are ``n + lam``."""
        return TorusState(_grid_modes(self.values), self.lam)


def grid_norm(values: np.ndarray) -> float:
    N, m = values.shape[0], values.ndim
    return math.sqrt((TWO_PI / N) ** m * float(np.sum(np.abs(values) ** 2)))


def quantum_holonomy(conn: ConnectionField, path: ParameterPath, psi0, lam: Sequence[float],
                     N: int, step: float, check_grid: bool = True) -> QuantumHolonomy:
    """Transport ``psi0`` as a half-density along the connection's flow.

    ``psi0`` is a :class:`TorusState` or an array of grid values of shape
    ``(N,)*m``.  Off-grid values come from the trigonometric interpolant.
    """
    m = conn.m
    lam = _check_lambda(lam, m)
    if not step > 0:
        raise ValueError("step must be positive")
    if N < MIN_GRID:
        raise GridResolutionError(f"grid needs N >= {MIN_GRID}, got {N}")
    if check_grid:
        band = connection_bandwidth(conn, path)
        if N < GRID_PER_BAND * band:
            raise GridResolutionError(
                f"N = {N} is below {GRID_PER_BAND} x connection bandwidth {band}")
    nodes = grid_nodes(N, m)
    if isinstance(psi0, TorusState):
        if psi0.m != m:
            raise ValueError("state and connection have different numbers of angles")
        modes = dict(psi0.amplitudes)
        start = _eval_modes(modes, nodes)
    else:
        start = np.asarray(psi0, dtype=complex)
        if start.shape != (N,) * m:
            raise ValueError(f"grid values must have shape {(N,) * m}")
        modes = _grid_modes(start)
        start = start.ravel()
    disp, J = _backward_flow(conn, path, nodes, step)
    if np.any(J <= 0):
        raise SingularityError("transport Jacobian lost positivity")
    feet = nodes + disp
    moved = np.any(disp != 0.0, axis=1)
    base = start.copy()
    if np.any(moved):
        base[moved] = _eval_modes(modes, feet[moved])
    phase = np.exp(1j * (disp @ np.asarray(lam)))
    vals = np.sqrt(J) * base * phase
    return QuantumHolonomy(vals.reshape((N,) * m), lam, feet, J)
