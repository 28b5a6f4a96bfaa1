"""Planar Kepler system: integrals, algebra checks and global action-angle charts.

Units are normalized so that the potential is ``-1/r``.  The phase space is
split into the bound region ``U_minus`` (H < 0, M12 != 0) and the scattering
region ``U_plus`` (H > 0, M12 != 0); points with ``M12 = 0`` or ``H = 0``
(within ``eps``) are excluded.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, fields
from functools import lru_cache

import numpy as np

from .core import (
    Observable,
    PhaseChart,
    bracket_observable,
    fd_gradient,
    integrate_hamilton,
    parse_observable,
)
from .core.chart import _coords
from .errors import ChartBoundaryError, ConvergenceError, RegimeError, SingularityError

CHART = PhaseChart.canonical(2)
EPS_REG = 1e-9
CIRCULAR_ECC = 1e-10
KEPLER_TOL = 1e-12
KEPLER_MAXITER = 60

_H = "0.5*(p1^2 + p2^2) - 1/(q1^2 + q2^2)^0.5"
_M = "q1*p2 - q2*p1"
_A = "q{i}*(p1^2 + p2^2) - p{i}*(p1*q1 + p2*q2) - q{i}/(q1^2 + q2^2)^0.5"


class Regime(enum.Enum):
    U_minus = "U_minus"
    U_plus = "U_plus"
    Excluded = "Excluded"


@dataclass(frozen=True)
class KeplerCatalog:
    """Named integrals of the Kepler system on the chart ``(q1, q2, p1, p2)``."""

    H: Observable
    M12: Observable
    A1: Observable
    A2: Observable
    L1: Observable
    L2: Observable
    K1: Observable
    K2: Observable
    F1: Observable
    F2: Observable
    F3: Observable
    S1: Observable
    S2: Observable
    S3: Observable
    M2: Observable
    A_sq: Observable
    L_sq: Observable
    K_sq: Observable
    r: Observable
    p: Observable
    pq: Observable
    I_minus: Observable
    I_plus: Observable
    gamma: Observable

    def as_dict(self) -> dict[str, Observable]:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def __getitem__(self, name: str) -> Observable:
        return getattr(self, name)

    @property
    def integrals(self) -> tuple:
        """The observables the acceptance checks iterate over."""
        return (self.H, self.M12, self.A1, self.A2, self.L1, self.L2, self.K1, self.K2)


@lru_cache(maxsize=1)
def kepler_observables() -> KeplerCatalog:
    """Build the catalog; every member is parsed from its closed-form text."""
    def obs(text, name):
        return parse_observable(text, CHART, name)

    A1, A2 = _A.format(i=1), _A.format(i=2)
    L1, L2 = f"({A1})/sqrt(-2*({_H}))", f"({A2})/sqrt(-2*({_H}))"
    K1, K2 = f"({A1})/sqrt(2*({_H}))", f"({A2})/sqrt(2*({_H}))"
    F1, F2, F3 = f"-({L1})", f"-({L2})", f"-({_M})"
    S1, S2, S3 = f"-({K1})", f"-({K2})", f"-({_M})"
    return KeplerCatalog(
        H=obs(_H, "H"),
        M12=obs(_M, "M12"),
        A1=obs(A1, "A1"),
        A2=obs(A2, "A2"),
        L1=obs(L1, "L1"),
        L2=obs(L2, "L2"),
        K1=obs(K1, "K1"),
        K2=obs(K2, "K2"),
        F1=obs(F1, "F1"),
        F2=obs(F2, "F2"),
        F3=obs(F3, "F3"),
        S1=obs(S1, "S1"),
        S2=obs(S2, "S2"),
        S3=obs(S3, "S3"),
        M2=obs(f"({_M})^2", "M2"),
        A_sq=obs(f"({A1})^2 + ({A2})^2", "A_sq"),
        L_sq=obs(f"({L1})^2 + ({L2})^2", "L_sq"),
        K_sq=obs(f"({K1})^2 + ({K2})^2", "K_sq"),
        r=obs("(q1^2 + q2^2)^0.5", "r"),
        p=obs("(p1^2 + p2^2)^0.5", "p"),
        pq=obs("p1*q1 + p2*q2", "pq"),
        I_minus=obs(f"-1/(2*(({F1})^2 + ({F2})^2 + ({F3})^2))", "I"),
        I_plus=obs(f"1/(2*(({S1})^2 + ({S2})^2 - ({S3})^2))", "I"),
        gamma=obs(f"atan2({F2}, {F3})", "gamma"),
    )


def _point(z) -> np.ndarray:
    return _coords(z, CHART)


def classify_region(z, eps: float = EPS_REG) -> Regime:
    """Regime of ``z``; raises :class:`SingularityError` at ``r = 0``."""
    c = _point(z)
    if c[0] == 0.0 and c[1] == 0.0:
        raise SingularityError("r = 0 is not in the phase space", last_state=c)
    cat = kepler_observables()
    h, m = cat.H(c), cat.M12(c)
    if abs(m) > eps:
        if h < -eps:
            return Regime.U_minus
        if h > eps:
            return Regime.U_plus
    return Regime.Excluded


def _chart_regime(c: np.ndarray, eps: float) -> Regime:
    """Regime for the chart maps; ``M12 = 0`` with ``H != 0`` is a chart boundary."""
    regime = classify_region(c, eps)
    if regime is Regime.Excluded:
        cat = kepler_observables()
        if abs(cat.M12(c)) <= eps and abs(cat.H(c)) > eps:
            raise ChartBoundaryError("x3 = -M12 = 0 is the boundary of the angle chart")
        raise RegimeError(f"point {c.tolist()} is in the excluded set")
    return regime


# ---------------------------------------------------------------------------
# algebra verification
# ---------------------------------------------------------------------------

@dataclass
class Residual:
    """One checked relation ``lhs = rhs``.

    ``rel`` divides the discrepancy by ``max(1, |lhs|, |rhs|, scale)``, where
    ``scale`` is the sum of magnitudes of the products making up a bracket.
    Near ``H = 0`` those products grow like ``|H|^-3`` and cancel, so the
    absolute residual there measures rounding rather than the algebra.
    """

    lhs: float
    rhs: float
    scale: float = 0.0

    @property
    def abs(self) -> float:
        return abs(self.lhs - self.rhs)

    @property
    def rel(self) -> float:
        return self.abs / max(1.0, abs(self.lhs), abs(self.rhs), self.scale)


def _bracket_terms(gf: np.ndarray, gg: np.ndarray) -> tuple[float, float]:
    """Bracket of two chart gradients and the sum of its term magnitudes."""
    a = gf[2:4] * gg[0:2]
    b = gf[0:2] * gg[2:4]
    return float(a.sum() - b.sum()), float(np.abs(a).sum() + np.abs(b).sum())


def _so_matrix_residual(gens: dict, metric: np.ndarray, c: np.ndarray) -> dict[str, Residual]:
    """Entry-wise check of ``{M_mn, M_ab} = g_mb M_na + g_na M_mb - g_ma M_nb - g_nb M_ma``."""
    idx = [(0, 1), (0, 2), (1, 2)]
    vals = {}
    grads = {}
    for key, ob in gens.items():
        v, g = ob.value_and_gradient(c)
        vals[key], grads[key] = v, g

    def M(a, b):
        if a == b:
            return 0.0
        return vals[(a, b)] if (a, b) in vals else -vals[(b, a)]

    def sgn(a, b):
        return (1.0, (a, b)) if (a, b) in vals else (-1.0, (b, a))

    out = {}
    for (m, n) in idx:
        for (a, b) in idx:
            s1, k1 = sgn(m, n)
            s2, k2 = sgn(a, b)
            val, scale = _bracket_terms(grads[k1], grads[k2])
            lhs = s1 * s2 * val
            rhs = (metric[m, b] * M(n, a) + metric[n, a] * M(m, b)
                   - metric[m, a] * M(n, b) - metric[n, b] * M(m, a))
            out[f"M{m + 1}{n + 1},M{a + 1}{b + 1}"] = Residual(lhs, rhs, scale)
    return out


def verify_algebra(z, eps: float = EPS_REG) -> dict:
    """Residuals of the Kepler bracket relations at ``z`` (analytic brackets).

    Returns ``{"point", "regime", "residuals", "identities", "matrix"}``
    where every leaf is a :class:`Residual`.
    """
    c = _point(z)
    regime = classify_region(c, eps)
    if regime is Regime.Excluded:
        raise RegimeError(f"point {c.tolist()} is in the excluded set")
    cat = kepler_observables()
    h, m = cat.H(c), cat.M12(c)
    a1, a2 = cat.A1(c), cat.A2(c)
    grads = {}

    def br(f, g, rhs):
        for ob in (f, g):
            if ob.name not in grads:
                grads[ob.name] = ob.gradient(c)
        val, scale = _bracket_terms(grads[f.name], grads[g.name])
        return Residual(val, rhs, scale)

    res = {
        "M12_A1": br(cat.M12, cat.A1, -a2),
        "M12_A2": br(cat.M12, cat.A2, a1),
        "A1_A2": br(cat.A1, cat.A2, 2.0 * h * m),
    }
    alt = res["A1_A2"]
    res["M12_times_A1_A2"] = Residual(m * alt.lhs, a1 * a1 + a2 * a2 - 1.0, abs(m) * alt.scale)
    ident = {
        "A2_eq_2M2H_plus_1": Residual(a1 * a1 + a2 * a2, 2.0 * m * m * h + 1.0),
        "2M2H_eq_A2_minus_1": Residual(2.0 * m * m * h, a1 * a1 + a2 * a2 - 1.0),
    }
    if regime is Regime.U_minus:
        l1, l2 = cat.L1(c), cat.L2(c)
        res["M12_L1"] = br(cat.M12, cat.L1, -l2)
        res["M12_L2"] = br(cat.M12, cat.L2, l1)
        res["L1_L2"] = br(cat.L1, cat.L2, -m)
        ident["casimir_M2_L2"] = Residual(m * m + l1 * l1 + l2 * l2, -1.0 / (2.0 * h))
        gens = {(0, 1): cat.M12, (0, 2): -cat.L1, (1, 2): -cat.L2}
        metric = np.diag([1.0, 1.0, 1.0])
        ident["I_eq_H"] = Residual(cat.I_minus(c), h)
    else:
        k1, k2 = cat.K1(c), cat.K2(c)
        res["M12_K1"] = br(cat.M12, cat.K1, -k2)
        res["M12_K2"] = br(cat.M12, cat.K2, k1)
        res["K1_K2"] = br(cat.K1, cat.K2, m)
        ident["casimir_K2_M2"] = Residual(k1 * k1 + k2 * k2 - m * m, 1.0 / (2.0 * h))
        gens = {(0, 1): cat.M12, (0, 2): -cat.K1, (1, 2): -cat.K2}
        metric = np.diag([1.0, 1.0, -1.0])
        ident["I_eq_H"] = Residual(cat.I_plus(c), h)
    return {
        "point": c.tolist(),
        "regime": regime.value,
        "residuals": res,
        "identities": ident,
        "matrix": _so_matrix_residual(gens, metric, c),
    }


def algebra_report(record: dict) -> dict:
    """JSON-friendly view of :func:`verify_algebra` output."""
    def flat(group):
        return {k: {"lhs": r.lhs, "rhs": r.rhs, "abs": r.abs, "rel": r.rel, "scale": r.scale}
                for k, r in group.items()}

    return {
        "point": record["point"],
        "regime": record["regime"],
        "residuals": flat(record["residuals"]) | {
            f"matrix[{k}]": v for k, v in flat(record["matrix"]).items()},
        "identities": flat(record["identities"]),
    }


def max_residual(record: dict, kind: str = "rel") -> float:
    vals = [getattr(r, kind) for g in ("residuals", "identities", "matrix")
            for r in record[g].values()]
    return max(vals)


def sample_points(rng: np.random.Generator, n: int, regime: Regime | None = None,
                  r_range=(0.3, 3.0), p_max: float = 2.5, eps: float = EPS_REG) -> np.ndarray:
    """Uniform samples (annulus in q, disc in p), rejecting the excluded set.

    With ``regime`` given, only points of that regime are kept.
    """
    out = []
    r0, r1 = r_range
    while len(out) < n:
        # uniform in area
        r = math.sqrt(rng.uniform(r0 * r0, r1 * r1))
        th = rng.uniform(0.0, 2.0 * math.pi)
        pr = p_max * math.sqrt(rng.uniform(0.0, 1.0))
        ph = rng.uniform(0.0, 2.0 * math.pi)
        c = np.array([r * math.cos(th), r * math.sin(th), pr * math.cos(ph), pr * math.sin(ph)])
        reg = classify_region(c, eps)
        if reg is Regime.Excluded or (regime is not None and reg is not regime):
            continue
        out.append(c)
    return np.array(out)


# ---------------------------------------------------------------------------
# action-angle charts and the time law
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ActionAngleState:
    """Generalized action-angle coordinates of a Kepler phase point.

    ``angle`` is gamma in [0, 2pi) on ``U_minus`` or lambda on ``U_plus``;
    ``time_angle`` is alpha in [0, 2pi a^(3/2)) or the signed time tau.
    """

    regime: Regime
    I: float
    x1: float
    angle: float
    time_angle: float
    a: float
    e: float

    @property
    def gamma(self) -> float:
        return self.angle

    @property
    def alpha(self) -> float:
        return self.time_angle

    @property
    def period(self) -> float:
        return 2.0 * math.pi * self.a ** 1.5 if self.regime is Regime.U_minus else math.inf


def kepler_time(phi: float, a: float, e: float, regime: Regime = Regime.U_minus) -> float:
    """Time-angle from the anomaly-like variable ``phi`` (inverse of :func:`solve_kepler`)."""
    s = a ** 1.5
    if regime is Regime.U_minus:
        return phi - s * e * math.sin(phi / s)
    return s * e * math.sinh(phi / s) - phi


def solve_kepler(alpha: float, a: float, e: float, regime: Regime = Regime.U_minus,
                 tol: float = KEPLER_TOL, maxiter: int = KEPLER_MAXITER) -> float:
    """Invert the Kepler time law for ``phi``.

    Elliptic: ``alpha = phi - a^1.5 e sin(phi / a^1.5)`` with ``e in [0, 1)``.
    Hyperbolic: ``tau = a^1.5 e sinh(phi / a^1.5) - phi`` with ``e > 1``.
    Newton iteration in the scaled variable ``u = phi / a^1.5``, kept inside a
    bracket that always contains the root; stops when the residual in
    ``alpha`` units is below ``tol``.
    """
    if a <= 0:
        raise ValueError("semi-axis must be positive")
    s = a ** 1.5
    m = alpha / s
    if regime is Regime.U_minus:
        if not 0.0 <= e < 1.0:
            raise ValueError("elliptic branch needs 0 <= e < 1")
        if e == 0.0:
            return alpha
        g = lambda u: u - e * math.sin(u) - m  # noqa: E731
        dg = lambda u: 1.0 - e * math.cos(u)  # noqa: E731
        lo, hi = m - e, m + e
        u = m
    elif regime is Regime.U_plus:
        if not e > 1.0:
            raise ValueError("hyperbolic branch needs e > 1")
        g = lambda u: e * math.sinh(u) - u - m  # noqa: E731
        dg = lambda u: e * math.cosh(u) - 1.0  # noqa: E731
        lo, hi = math.asinh(abs(m) / e), math.asinh(abs(m) / (e - 1.0))
        if m < 0:
            lo, hi = -hi, -lo
        u = math.copysign(math.asinh(abs(m) / e), m)
    else:
        raise RegimeError("no time law on the excluded set")
    for _ in range(maxiter):
        gu = g(u)
        if abs(gu) * s < tol:
            return u * s
        if gu > 0:
            hi = min(hi, u)
        else:
            lo = max(lo, u)
        step = u - gu / dg(u)
        u = step if lo < step < hi else 0.5 * (lo + hi)
    if abs(g(u)) * s < tol:
        return u * s
    raise ConvergenceError(f"Kepler equation did not converge (alpha={alpha}, e={e})", iterate=u * s)


def _chart_values(c: np.ndarray):
    cat = kepler_observables()
    h, m = cat.H(c), cat.M12(c)
    a1, a2 = cat.A1(c), cat.A2(c)
    return h, m, a1, a2


def to_action_angle(z, eps: float = EPS_REG) -> ActionAngleState:
    """Global generalized action-angle coordinates ``(I, x1, gamma, alpha)``.

    On ``U_plus`` returns ``(I, x1, lambda, tau)``.  The time-angle is zero
    at pericentre and advances at unit rate along the flow; on circular orbits
    alpha is measured from the x-axis in the direction of motion.
    """
    c = _point(z)
    regime = _chart_regime(c, eps)
    h, m, a1, a2 = _chart_values(c)
    q1, q2, p1, p2 = map(float, c)
    r = math.hypot(q1, q2)
    pq = p1 * q1 + p2 * q2
    e = math.hypot(a1, a2)
    x3 = -m
    if regime is Regime.U_minus:
        s = math.sqrt(-2.0 * h)
        x1, x2 = a1 / s, a2 / s
        x1, x2 = -x1, -x2
        I = -0.5 / (x1 * x1 + x2 * x2 + x3 * x3)
        gamma = math.atan2(x2, x3) % (2.0 * math.pi)
        a = -0.5 / I
        period = 2.0 * math.pi * a ** 1.5
        if e < CIRCULAR_ECC:
            theta = math.atan2(q2, q1) * math.copysign(1.0, m)
            alpha = a ** 1.5 * (theta % (2.0 * math.pi))
        else:
            u = math.atan2(pq / math.sqrt(a), 1.0 - r / a)
            alpha = a ** 1.5 * u - a * pq
        alpha %= period
        if alpha == period:  # rounding at the top of the range
            alpha = 0.0
        return ActionAngleState(regime, I, x1, gamma, alpha, a, e)
    s = math.sqrt(2.0 * h)
    x1, x2 = -a1 / s, -a2 / s
    I = 0.5 / (x1 * x1 + x2 * x2 - x3 * x3)
    if not abs(x3) < abs(x2):
        raise ChartBoundaryError("lambda chart needs |x3| < |x2|")
    lam = math.atanh(x3 / x2)
    a = 0.5 / I
    F = math.asinh(pq / (math.sqrt(a) * e))
    tau = a * pq - a ** 1.5 * F
    return ActionAngleState(regime, I, x1, lam, tau, a, e)


def chart_along(states: np.ndarray, eps: float = EPS_REG) -> dict[str, np.ndarray]:
    """Columns ``I, x1, gamma, alpha`` (or lambda/tau) for each row of ``states``."""
    rows = [to_action_angle(s, eps) for s in states]
    return {
        "I": np.array([r.I for r in rows]),
        "x1": np.array([r.x1 for r in rows]),
        "gamma": np.array([r.angle for r in rows]),
        "alpha": np.array([r.time_angle for r in rows]),
    }


def from_elements(a: float, e: float, omega: float = 0.0, prograde: bool = True) -> np.ndarray:
    """Phase point at pericentre of a bound orbit with semi-axis ``a`` and eccentricity ``e``."""
    if not (a > 0 and 0 <= e < 1):
        raise ValueError("need a > 0 and 0 <= e < 1")
    rp = a * (1.0 - e)
    vp = math.sqrt((1.0 + e) / rp)
    sign = 1.0 if prograde else -1.0
    co, so = math.cos(omega), math.sin(omega)
    return np.array([rp * co, rp * so, -sign * vp * so, sign * vp * co])


# ---------------------------------------------------------------------------
# Darboux triplet
# ---------------------------------------------------------------------------

def verify_darboux_triplet(z, eps: float = EPS_REG, relative: bool = False) -> dict[str, float]:
    """Analytic residuals of ``{I,x1} = 0, {I,gamma} = 0, {x1,gamma} = 1`` on ``U_minus``.

    On ``U_plus`` the lambda chart is checked instead and the measured sign
    of ``{x1, lambda}`` is reported under ``x1_lambda_sign``.  With
    ``relative`` each residual is divided by ``max(1, scale)`` as in
    :class:`Residual`.
    """
    c = _point(z)
    regime = _chart_regime(c, eps)
    cat = kepler_observables()
    x3 = -cat.M12(c)

    def br(f, g):
        return _bracket_terms(f.gradient(c), g.gradient(c))

    def out(f, g, target=0.0):
        value, scale = br(f, g) if isinstance(g, Observable) else g
        r = Residual(value, target, scale)
        return r.rel if relative else r.abs

    if regime is Regime.U_minus:
        I, x1 = cat.I_minus, cat.F1
        return {
            "I_x1": out(I, x1),
            "I_gamma": out(I, cat.gamma),
            "x1_gamma_minus_1": out(x1, cat.gamma, 1.0),
        }
    I, x1 = cat.I_plus, cat.S1
    x2v = cat.S2(c)
    if not abs(x3) < abs(x2v):
        raise ChartBoundaryError("lambda chart needs |x3| < |x2|")
    den = x2v * x2v - x3 * x3

    def with_lambda(f):
        # d(lambda) = (x2 dx3 - x3 dx2) / (x2^2 - x3^2)
        b3, s3 = br(f, cat.S3)
        b2, s2 = br(f, cat.S2)
        return (x2v * b3 - x3 * b2) / den, (abs(x2v) * s3 + abs(x3) * s2) / abs(den)

    x1_lam, x1_scale = with_lambda(x1)
    return {
        "I_x1": out(I, x1),
        "I_lambda": out(None, with_lambda(I)),
        "x1_lambda_abs_minus_1": out(None, (abs(x1_lam), x1_scale), 1.0),
        "x1_lambda_sign": 1.0 if x1_lam > 0 else -1.0,
    }


def measure_I_alpha_bracket(z, h: float = 1e-6) -> float:
    """Finite-difference ``{I, alpha}`` on ``U_minus``; reported, not asserted."""
    c = _point(z)
    st = to_action_angle(c)
    if st.regime is not Regime.U_minus:
        raise RegimeError("alpha exists only on U_minus")
    period = st.period

    def alpha_local(x):
        d = to_action_angle(x).time_angle - st.time_angle
        return (d + 0.5 * period) % period - 0.5 * period

    cat = kepler_observables()
    gI = cat.I_minus.gradient(c)
    ga = fd_gradient(alpha_local, c, CHART, h)
    return float(gI[2:4] @ ga[0:2] - gI[0:2] @ ga[2:4])


# ---------------------------------------------------------------------------
# period check
# ---------------------------------------------------------------------------

def orbit_period_check(z, step: float = 1e-4, delta: float = 1e-3,
                       method: str = "rk4") -> tuple[float, float]:
    """Predicted period ``2 pi a^1.5`` and the measured first-return time.

    The return time is the minimum of ``|z(t) - z0|`` in the window
    ``[T/2, 3T/2]``, refined by a parabola through the three samples around
    the discrete minimum.
    """
    c = _point(z)
    if classify_region(c) is not Regime.U_minus:
        raise RegimeError("only bound orbits (U_minus) have a period")
    st = to_action_angle(c)
    t_pred = st.period
    traj = integrate_hamilton(kepler_observables().H, c, (0.0, 1.5 * t_pred), step, method)
    d2 = np.sum((traj.states - c) ** 2, axis=1)
    lo = int(np.searchsorted(traj.times, 0.5 * t_pred))
    k = lo + int(np.argmin(d2[lo:]))
    if math.sqrt(d2[k]) > delta:
        raise ConvergenceError(f"orbit did not return within {delta}", iterate=traj.times[k])
    if k + 1 >= len(d2):
        raise ConvergenceError("return time at the end of the integration window")
    y0, y1, y2 = d2[k - 1], d2[k], d2[k + 1]
    curv = y0 - 2.0 * y1 + y2
    offset = 0.5 * (y0 - y2) / curv if curv > 0 else 0.0
    return t_pred, float(traj.times[k] + offset * traj.step)


def kepler_brackets_observable(name_f: str, name_g: str) -> Observable:
    """Symbolic bracket of two catalog members (used by nested checks)."""
    cat = kepler_observables()
    return bracket_observable(cat[name_f], cat[name_g])
