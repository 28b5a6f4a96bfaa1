"""The seven acceptance criteria as runnable checks.

Each ``criterion_k`` returns a :class:`CriterionResult` holding named checks
``{name, value, threshold, pass}``.  ``run_all`` runs them in order; the CLI
``report-all`` subcommand and ``tests/test_acceptance.py`` both use it.
"""

from __future__ import annotations

import itertools
import math
import time
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from . import holonomy as Hm
from . import kepler as K
from . import quantize as Q
from .core import (
    conservation_report,
    fd_gradient,
    independence_rank,
    integrate_hamilton,
    jacobi_defect,
    structure_matrix,
)
from .errors import ChartBoundaryError


@dataclass
class Check:
    name: str
    value: float
    threshold: float
    passed: bool
    detail: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {"name": self.name, "value": self.value, "threshold": self.threshold,
                "pass": self.passed, **({"detail": self.detail} if self.detail else {})}


def below(name: str, value: float, threshold: float, **detail) -> Check:
    value = float(value)
    return Check(name, value, threshold, bool(value < threshold), detail)


@dataclass
class CriterionResult:
    number: int
    title: str
    checks: list
    seconds: float = 0.0

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        failing = [c.name for c in self.checks if not c.passed]
        tail = f"; failing: {', '.join(failing)}" if failing else ""
        return (f"criterion {self.number} [{status}] {self.title} "
                f"({len(self.checks)} checks, {self.seconds:.1f} s{tail})")

    def as_dict(self) -> dict:
        return {"criterion": self.number, "title": self.title, "pass": self.passed,
                "checks": [c.as_dict() for c in self.checks]}


def _rng(seed: int, k: int) -> np.random.Generator:
    return np.random.default_rng([seed, k])


def _wrap(d, period):
    return (d + 0.5 * period) % period - 0.5 * period


# ---------------------------------------------------------------------------
# 1. Kepler algebra
# ---------------------------------------------------------------------------

def criterion_1(seed: int = 0, points: int = 1000) -> list:
    rng = _rng(seed, 1)
    checks = []
    for regime in (K.Regime.U_minus, K.Regime.U_plus):
        recs = [K.verify_algebra(p) for p in K.sample_points(rng, points, regime)]
        tag = regime.name
        checks.append(below(f"{tag}: bracket residuals (scaled)",
                            max(max(r.rel for r in rec["residuals"].values()) for rec in recs), 1e-12))
        checks.append(below(f"{tag}: Casimir and energy identities (scaled)",
                            max(max(r.rel for r in rec["identities"].values()) for rec in recs), 1e-12))
        checks.append(below(f"{tag}: so matrix form, all 9 entries (scaled)",
                            max(max(r.rel for r in rec["matrix"].values()) for rec in recs), 1e-12))
        checks.append(below(f"{tag}: bracket residuals (absolute, reported)",
                            max(K.max_residual(rec, "abs") for rec in recs), math.inf))
    return checks


# ---------------------------------------------------------------------------
# 2. superintegrable structure
# ---------------------------------------------------------------------------

def criterion_2(seed: int = 0, points: int = 100) -> list:
    cat = K.kepler_observables()
    pts = K.sample_points(_rng(seed, 2), points, K.Regime.U_minus)
    trio = [cat.M12, cat.L1, cat.L2]
    bad_rank = sum(independence_rank(trio, p) != 3 for p in pts)
    bad_corank = sum(structure_matrix(trio, p)[1] != 1 for p in pts)
    bad_pair = sum(structure_matrix([cat.H, cat.M12], p)[1] != 2 for p in pts)
    return [
        below("points with rank(M12, L1, L2) != 3", bad_rank, 1),
        below("points with corank of the (M12, L1, L2) bracket matrix != 1", bad_corank, 1),
        below("points with corank of the (H, M12) bracket matrix != 2", bad_pair, 1),
    ]


# ---------------------------------------------------------------------------
# 3. dynamics
# ---------------------------------------------------------------------------

def _orbit_error(method: str, n: int) -> float:
    z0 = K.from_elements(1.0, 0.5)
    tr = integrate_hamilton(K.kepler_observables().H, z0, (0.0, 2 * math.pi), 2 * math.pi / n, method)
    return float(np.max(np.abs(tr.final - z0)))


def criterion_3(seed: int = 0) -> list:
    cat = K.kepler_observables()
    z0 = K.from_elements(1.0, 0.5)
    tr = integrate_hamilton(cat.H, z0, (0.0, 2 * math.pi), 1e-4)
    rep = conservation_report(cat.H, [cat.M12, cat.A1, cat.A2], tr, include_hamiltonian=False)
    checks = [below("orbit a=1, e=0.5 closure after 2 pi (rk4, step 1e-4)",
                    np.max(np.abs(tr.final - z0)), 1e-5)]
    checks += [below(f"drift of {k}", v, 1e-7) for k, v in rep.items()]
    for method, order, ns in (("rk4", 4, (400, 800, 1600)),
                              ("implicit_midpoint", 2, (2000, 4000, 8000))):
        errs = [_orbit_error(method, n) for n in ns]
        slope = np.polyfit(np.log([2 * math.pi / n for n in ns]), np.log(errs), 1)[0]
        checks.append(below(f"{method} slope - {order}", abs(slope - order), 0.3 + 1e-12,
                            slope=float(slope), errors=errs))
    return checks


# ---------------------------------------------------------------------------
# 4. charts
# ---------------------------------------------------------------------------

def criterion_4(seed: int = 0, points: int = 100) -> list:
    cat = K.kepler_observables()
    rng = _rng(seed, 4)
    const_dev = adv_dev = 0.0
    for z0 in (K.from_elements(1.0, 0.5), K.from_elements(1.3, 0.7, 0.4),
               np.array([1.0, 0.5, -0.3, 1.0])):
        start = K.to_action_angle(z0)
        T = start.period
        traj = integrate_hamilton(cat.H, z0, (0.0, T), 1e-3)
        cols = K.chart_along(traj.states[::10])
        t = traj.times[::10]
        const_dev = max(const_dev,
                        np.max(np.abs(cols["I"] - start.I)),
                        np.max(np.abs(cols["x1"] - start.x1)),
                        np.max(np.abs(_wrap(cols["gamma"] - start.gamma, 2 * math.pi))))
        adv_dev = max(adv_dev, np.max(np.abs(_wrap(cols["alpha"] - start.alpha - t, T))))
    trip = 0.0
    for alpha, e in zip(rng.uniform(-20, 20, 500), rng.uniform(0, 0.99, 500)):
        phi = K.solve_kepler(alpha, 1.0, e)
        trip = max(trip, abs(K.kepler_time(phi, 1.0, e) - alpha))
    minus = max(max(K.verify_darboux_triplet(p, relative=True).values())
                for p in K.sample_points(rng, points, K.Regime.U_minus))
    plus, signs, used = 0.0, set(), 0
    for p in K.sample_points(rng, 3 * points, K.Regime.U_plus):
        try:
            res = K.verify_darboux_triplet(p, relative=True)
        except ChartBoundaryError:
            continue
        signs.add(res.pop("x1_lambda_sign"))
        plus = max(plus, max(res.values()))
        used += 1
        if used == points:
            break
    return [
        below("(I, x1, gamma) constant along orbits", const_dev, 1e-6),
        below("alpha - t (mod period) constant along orbits", adv_dev, 1e-5),
        below("Kepler equation round trip, 500 samples", trip, 1e-10),
        below("Darboux triplet on U_minus (scaled)", minus, 1e-12),
        below("Darboux triplet on U_plus, |{x1, lambda}| = 1 (scaled)", plus, 1e-12,
              measured_sign_of_x1_lambda=sorted(signs)),
    ]


# ---------------------------------------------------------------------------
# 5. quantization
# ---------------------------------------------------------------------------

def _spectrum_error(rng: np.random.Generator, trials: int = 50) -> float:
    worst = 0.0
    for _ in range(trials):
        m = int(rng.integers(1, 3))
        monos = [e for e in itertools.product(range(5), repeat=m) if sum(e) <= 4]
        coefs = [Fraction(int(v), 4) for v in rng.integers(-20, 21, len(monos))]
        text = " + ".join(f"({float(c)})" + "".join(f"*I{k + 1}^{p}" for k, p in enumerate(e))
                          for c, e in zip(coefs, monos))
        H = Q.action_hamiltonian(text, m)
        lam = [float(rng.choice([0.0, 0.25, 0.5])) for _ in range(m)]
        for n, E in Q.spectrum(H, lam, (-3, 3)):
            x = [Fraction(v) + Fraction(l) for v, l in zip(n, lam)]
            exact = sum(c * math.prod(xk**p for xk, p in zip(x, e)) for c, e in zip(coefs, monos))
            worst = max(worst, abs(E - float(exact)) / max(1.0, abs(float(exact))))
    return worst


def criterion_5(seed: int = 0, pairs: int = 50) -> list:
    rng = _rng(seed, 5)
    dirac = herm = 0.0
    for _ in range(pairs):
        m = int(rng.integers(1, 3))
        band = int(rng.integers(1, 6))
        f, g = Q.random_affine(rng, m, band), Q.random_affine(rng, m, band)
        lam = rng.uniform(0.0, 1.0, m)
        psi, chi = Q.random_state(rng, m, 3, lam), Q.random_state(rng, m, 3, lam)
        dirac = max(dirac, Q.dirac_residual(f, g, psi))
        herm = max(herm, abs(Q.schrodinger_operator(f, psi).inner(chi)
                             - psi.inner(Q.schrodinger_operator(f, chi))))
    return [
        below(f"Dirac residual, {pairs} random affine pairs", dirac, 1e-13),
        below("Hermiticity defect", herm, 1e-13),
        below("spectrum vs exact rational H(n + lam), degree <= 4 (relative)",
              _spectrum_error(rng), 1e-14),
    ]


# ---------------------------------------------------------------------------
# 6. holonomy
# ---------------------------------------------------------------------------

def criterion_6(seed: int = 0) -> list:
    rng = _rng(seed, 6)
    sin_conn = Hm.ConnectionField.parse([["sin(phi)"]])
    unit = Hm.ParameterPath.from_exprs(1.0, ["t"])
    s0 = Hm.HolonomyState([1.0], [math.pi / 2])
    traj = Hm.classical_holonomy(sin_conn, unit, s0, 1e-4)
    long = Hm.classical_holonomy(sin_conn, Hm.ParameterPath.from_exprs(2.0, ["t"]), s0, 1e-4)
    inv = long.I[:, 0] * np.sin(long.phi[:, 0])
    repar = max(
        Hm.reparametrization_check(sin_conn, unit, Hm.ParameterPath.from_exprs(1.0, ["t^2"]), s0, 1e-4),
        Hm.reparametrization_check(sin_conn, unit, Hm.ParameterPath.from_pieces(
            [{"t0": 0.0, "t1": 0.5, "components": ["0.5*t"]},
             {"t0": 0.5, "t1": 1.0, "components": ["1.5*t - 0.5"]}]), s0, 1e-4))
    principal = Hm.ConnectionField.parse([["0.5"]])
    half_turn = Hm.ParameterPath.from_exprs(math.pi, ["t"])
    berry = 0.0
    for n in range(-3, 4):
        for lam in (0.0, 0.5, -0.5):
            out = Hm.quantum_holonomy(principal, half_turn, Q.TorusState.basis((n,)), [lam], 32, 1e-3)
            berry = max(berry, abs(out.state()[(n,)] - Hm.berry_multiplier(principal, half_turn, [n], [lam])))
    flat = np.full(256, (2 * math.pi) ** -0.5)
    unitarity = abs(Hm.quantum_holonomy(sin_conn, unit, flat, [0], 256, 1e-3).norm() - 1.0)
    H = Q.action_hamiltonian("I1^2 + 0.3*I1", 1)
    mean = 0.0
    for _ in range(20):
        psi = Q.random_state(rng, 1, 4, (float(rng.choice([0.0, 0.5])),))
        R = Hm.r_isomorphism(psi, H, float(rng.uniform(-5, 5)))
        mean = max(mean, abs(Q.action_operator(0, R).inner(R) - Q.action_operator(0, psi).inner(psi)))
    return [
        below("I sin(phi) drift over dsigma = 2", np.ptp(inv), 1e-9),
        below("|I(1) - cosh 1|", abs(traj.I[-1, 0] - math.cosh(1.0)), 1e-8),
        below("reparametrization deviation (t^2 and a kinked map)", repar, 1e-8),
        below("Berry multiplier vs grid transport, principal connection", berry, 1e-10),
        below("unitarity defect, sin(phi) connection, N = 256", unitarity, 1e-10),
        below("R isomorphism mean-action change", mean, 1e-14),
    ]


# ---------------------------------------------------------------------------
# 7. Jacobi and gradient hygiene
# ---------------------------------------------------------------------------

_REGIME_INTEGRALS = {
    K.Regime.U_minus: ("H", "M12", "A1", "A2", "L1", "L2"),
    K.Regime.U_plus: ("H", "M12", "A1", "A2", "K1", "K2"),
}
_OFF_REGIME = {
    K.Regime.U_minus: {"K1", "K2", "S1", "S2", "S3", "K_sq", "I_plus"},
    K.Regime.U_plus: {"L1", "L2", "F1", "F2", "F3", "L_sq", "I_minus", "gamma"},
}


def criterion_7(seed: int = 0, points: int = 100) -> list:
    cat = K.kepler_observables()
    rng = _rng(seed, 7)
    checks = []
    for regime, names in _REGIME_INTEGRALS.items():
        pts = K.sample_points(rng, points, regime)
        worst, per_triple = 0.0, {}
        for a, b, c in itertools.combinations(names, 3):
            f, g, h = cat[a], cat[b], cat[c]
            d = max(abs(jacobi_defect(f, g, h, p, ("finite_diff", 1e-4))) for p in pts)
            per_triple[f"{a},{b},{c}"] = d
            worst = max(worst, d)
        generators = max(v for k, v in per_triple.items() if not set(k.split(",")) - {"H", "M12", "A1", "A2"})
        checks.append(below(f"{regime.name}: nested finite-difference Jacobi defect, all integral triples",
                            worst, 1e-6, generators_only=generators, per_triple=per_triple))
        grad = 0.0
        for name, f in cat.as_dict().items():
            if name in _OFF_REGIME[regime]:
                continue
            for p in pts:
                sym = f.gradient(p)[:4]
                num = fd_gradient(f.evaluate, p, K.CHART, 1e-6)
                grad = max(grad, float(np.max(np.abs(sym - num)) / max(1.0, np.max(np.abs(sym)))))
        checks.append(below(f"{regime.name}: symbolic vs central-difference gradients (relative)", grad, 1e-6))
    # the analytic composition is the reference the finite differences approximate
    analytic = max(abs(jacobi_defect(cat.M12, cat.A1, cat.A2, p))
                   for p in K.sample_points(rng, points, K.Regime.U_minus))
    checks.append(below("analytic Jacobi defect (M12, A1, A2), reported", analytic, math.inf))
    return checks


CRITERIA = {
    1: ("Kepler algebra suite", criterion_1),
    2: ("Superintegrable-structure suite", criterion_2),
    3: ("Dynamics suite", criterion_3),
    4: ("Chart suite", criterion_4),
    5: ("Quantization suite", criterion_5),
    6: ("Holonomy suite", criterion_6),
    7: ("Jacobi/gradient hygiene", criterion_7),
}


def run_criterion(k: int, seed: int = 0) -> CriterionResult:
    title, fn = CRITERIA[k]
    t0 = time.perf_counter()
    checks = fn(seed)
    return CriterionResult(k, title, checks, time.perf_counter() - t0)


def run_all(seed: int = 0, only=None) -> list:
    return [run_criterion(k, seed) for k in (only or CRITERIA)]

