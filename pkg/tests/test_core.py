import math

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from actionangle import _pykernels
from actionangle.core import (
    PhaseChart,
    bracket_observable,
    conservation_report,
    constant,
    fd_gradient,
    hamiltonian_vector_field,
    homogeneous_extend,
    independence_rank,
    integrate_hamilton,
    jacobi_defect,
    parse_observable,
    poisson_bracket,
    structure_matrix,
)
from actionangle.core import expr as ex
from actionangle.core.integrate import Trajectory
from actionangle.errors import (
    ConvergenceError,
    ExpressionError,
    NonRationalExponentError,
    SingularityError,
    UnknownIdentifierError,
)

C2 = PhaseChart.canonical(2)
C1 = PhaseChart.canonical(1)
Z = (1.0, 0.5, -0.3, 1.0)

KEPLER_H = "0.5*(p1^2+p2^2) - 1/(q1^2+q2^2)^0.5"
A1 = "q1*(p1^2+p2^2) - p1*(p1*q1+p2*q2) - q1/(q1^2+q2^2)^0.5"
A2 = "q2*(p1^2+p2^2) - p2*(p1*q1+p2*q2) - q2/(q1^2+q2^2)^0.5"
M12 = "q1*p2 - q2*p1"


def obs(text, chart=C2):
    return parse_observable(text, chart)


# ---------------------------------------------------------------------------
# expressions
# ---------------------------------------------------------------------------

def test_parse_angular_momentum_partial():
    m = obs(M12)
    assert m.partial("p2").text() == "q1"
    assert m(Z) == pytest.approx(1.15)


def test_parse_kepler_hamiltonian():
    h = obs(KEPLER_H)
    assert h((1, 0, 0, 1)) == -0.5
    r = math.hypot(1, 0.5)
    assert h(Z) == pytest.approx(0.5 * (0.09 + 1) - 1 / r, abs=1e-15)


def test_unknown_identifier_has_offset():
    with pytest.raises(UnknownIdentifierError) as info:
        obs("q1 + q3")
    assert info.value.offset == 5


@pytest.mark.parametrize("text, offset", [
    ("q1 +", 4),
    ("q1 * (p1", 8),
    ("(q1))", 4),
    ("q1 $ p1", 3),
    ("sin(q1, p1)", 0),
])
def test_syntax_error_offsets(text, offset):
    with pytest.raises(ExpressionError) as info:
        obs(text)
    assert info.value.offset == offset


def test_offset_counts_utf8_bytes():
    with pytest.raises(ExpressionError) as info:
        ex.parse("q1 + é", ["q1"])
    assert info.value.offset == 5
    with pytest.raises(ExpressionError) as info:
        ex.parse("é + $", None)
    assert info.value.offset == 0


@pytest.mark.parametrize("text", ["q1^p1", "q1^(p1)", "q1^(1/p1)", "q1^sin(1)"])
def test_non_rational_exponent(text):
    with pytest.raises(NonRationalExponentError):
        obs(text)


def test_rational_exponents_accepted():
    e = obs("q1^(1/3) + q1^-2 + q1^0.5")
    assert e((8.0, 0, 0, 0)) == pytest.approx(2 + 1 / 64 + math.sqrt(8))


def test_unknown_function():
    with pytest.raises(UnknownIdentifierError):
        ex.parse("tanh(q1)", None)


def test_constant_folding_and_interning():
    assert ex.parse("2*3 + 0*q1") is ex.const(6.0)
    assert obs("q1*p1").expr is obs("(q1) * (p1)").expr


def test_atan2_origin_is_singular():
    g = obs("atan2(q1, q2)")
    with pytest.raises(SingularityError):
        g((0.0, 0.0, 1.0, 1.0))


_names = st.sampled_from(["q1", "q2", "p1", "p2"])
_consts = st.floats(-3, 3, allow_nan=False).map(lambda v: round(v, 3))


def _expr_strategy(safe: bool):
    leaf = st.one_of(_names.map(ex.var), _consts.map(ex.const))

    def extend(children):
        binary = st.tuples(st.sampled_from([ex.add, ex.sub, ex.mul]), children, children)
        nodes = [
            binary.map(lambda t: t[0](t[1], t[2])),
            st.tuples(children, st.integers(0, 3)).map(lambda t: ex.power(t[0], t[1])),
            children.map(ex.sin),
            children.map(ex.cos),
            children.map(ex.neg),
            # denominators and roots bounded away from zero
            st.tuples(children, children).map(
                lambda t: ex.div(t[0], ex.add(ex.const(2.5), ex.sin(t[1])))),
            children.map(lambda c: ex.sqrt(ex.add(ex.const(1.0), ex.power(c, 2)))),
            children.map(lambda c: ex.exp(ex.sin(c))),
            st.tuples(children, children).map(
                lambda t: ex.atan2(t[0], ex.add(ex.const(2.0), ex.cos(t[1])))),
        ]
        if not safe:
            nodes.append(st.tuples(children, st.fractions(-3, 3, max_denominator=4))
                         .map(lambda t: ex.power(t[0], t[1])))
            nodes.append(st.tuples(children, children).map(lambda t: ex.div(*t)))
        return st.one_of(*nodes)

    return st.recursive(leaf, extend, max_leaves=8)


_points = st.lists(st.floats(-1.5, 1.5, allow_nan=False), min_size=4, max_size=4)


@settings(max_examples=200, deadline=None)
@given(_expr_strategy(safe=False))
def test_text_round_trip(e):
    assert ex.parse(ex.to_text(e), C2.symbols) is e


@settings(max_examples=100, deadline=None, suppress_health_check=[HealthCheck.too_slow])
@given(_expr_strategy(safe=True), _points)
def test_gradient_matches_central_differences(e, point):
    f = parse_observable(ex.to_text(e), C2)
    c = np.array(point)
    grad = f.gradient(c)
    num = fd_gradient(f.evaluate, c, C2, 1e-6)
    scale = max(1.0, float(np.max(np.abs(grad))))
    assert np.max(np.abs(grad - num)) <= 1e-6 * scale


# ---------------------------------------------------------------------------
# brackets and vector fields
# ---------------------------------------------------------------------------

def test_canonical_pair():
    assert poisson_bracket(obs("p1"), obs("q1"), Z) == 1.0
    assert poisson_bracket(obs("q1"), obs("p1"), Z) == -1.0


def test_kepler_bracket_examples():
    m, a1, a2 = obs(M12), obs(A1), obs(A2)
    h = obs(KEPLER_H)
    # frozen from the finite-difference oracle (h = 1e-6) at Z
    assert poisson_bracket(m, a1, Z) == pytest.approx(0.1022136, abs=5e-8)
    assert poisson_bracket(m, a1, Z) == pytest.approx(-a2(Z), abs=1e-14)
    assert poisson_bracket(m, a1, Z, ("finite_diff", 1e-6)) == pytest.approx(-a2(Z), abs=1e-8)
    val = poisson_bracket(a1, a2, Z)
    assert val == pytest.approx(-0.803682, abs=1e-6)
    assert val == pytest.approx(2 * h(Z) * m(Z), abs=1e-14)
    assert poisson_bracket(a1, a2, Z, "finite_diff") == pytest.approx(val, abs=1e-8)


def test_finite_difference_bracket_accepts_callables():
    from actionangle.core import fd_bracket
    val = fd_bracket(lambda c: c[2], lambda c: c[0], np.array(Z), C2)
    assert val == pytest.approx(1.0, abs=1e-9)


def test_vector_field_examples():
    dq, dp = hamiltonian_vector_field(obs("0.5*(p1^2+p2^2)"), (0, 0, 1, 2))
    assert dq.tolist() == [1, 2] and dp.tolist() == [0, 0]
    dq, dp = hamiltonian_vector_field(obs(KEPLER_H), (1, 0, 0, 1))
    assert dq.tolist() == [0, 1] and dp.tolist() == [-1, 0]
    dq, dp = hamiltonian_vector_field(constant(3.0, C2), Z)
    assert not dq.any() and not dp.any()


_observable_pool = [M12, A1, A2, KEPLER_H, "sin(q1)*p2^3", "exp(q2*p1) + q1^2",
                    "atan2(p2, 2 + q1^2)", "sqrt(1 + p1^2*q2^2)"]
_pool = st.sampled_from(_observable_pool).map(obs)
_kepler_points = st.tuples(st.floats(0.4, 2.0), st.floats(-2, 2),
                           st.floats(-1.5, 1.5), st.floats(-1.5, 1.5)).map(np.array)


@settings(max_examples=100, deadline=None)
@given(_pool, _pool, _kepler_points)
def test_antisymmetry(f, g, z):
    assert poisson_bracket(f, g, z) == -poisson_bracket(g, f, z)


@settings(max_examples=100, deadline=None)
@given(_pool, _pool, _pool, _kepler_points)
def test_leibniz(h, f, g, z):
    lhs = poisson_bracket(h, f * g, z)
    rhs = poisson_bracket(h, f, z) * g(z) + f(z) * poisson_bracket(h, g, z)
    scale = max(1.0, abs(lhs), abs(rhs))
    assert abs(lhs - rhs) <= 1e-12 * scale
    fd = poisson_bracket(h, f * g, z, "finite_diff")
    assert abs(fd - rhs) <= 1e-6 * scale


@settings(max_examples=100, deadline=None)
@given(_pool, _pool, _kepler_points)
def test_bracket_is_vector_field_applied_to_differential(f, g, z):
    dq, dp = hamiltonian_vector_field(f, z)
    dg = g.gradient(z)
    assert poisson_bracket(f, g, z) == pytest.approx(dq @ dg[:2] + dp @ dg[2:4], rel=1e-15, abs=0)


def _flow(H, z, s):
    # exact enough for a commutator test: RK4 with a few small steps
    return integrate_hamilton(H, z, (0.0, s), s / 4).final


@pytest.mark.parametrize("f, g", [(M12, A1), (KEPLER_H, "q1*p1^2"), ("sin(q1)*p2", "q2^2*p1")])
def test_vector_field_commutator(f, g):
    # phi_g(-s) phi_f(-s) phi_g(s) phi_f(s) z = z + s^2 [theta_f, theta_g] + O(s^3)
    F, G = obs(f), obs(g)
    z = np.array(Z)
    s = 1e-3
    w = _flow(F, z, s)
    w = _flow(G, w, s)
    w = _flow(-F, w, s)
    w = _flow(-G, w, s)
    comm = (w - z) / s**2
    dq, dp = hamiltonian_vector_field(bracket_observable(F, G), z)
    theta = np.concatenate([dq, dp])
    assert np.max(np.abs(comm - theta)) < 5e-3 * max(1.0, np.max(np.abs(theta)))


def test_jacobi_defect_examples():
    q1, p1 = obs("q1"), obs("p1")
    assert jacobi_defect(q1, p1, q1 * p1, Z) == 0.0
    m, a1, a2 = obs(M12), obs(A1), obs(A2)
    assert abs(jacobi_defect(m, a1, a2, Z)) < 1e-13
    assert abs(jacobi_defect(m, a1, a2, Z, ("finite_diff", 1e-4))) < 1e-6
    assert jacobi_defect(a1, a1, m, Z) == pytest.approx(0.0, abs=1e-14)


def test_independence_rank_examples():
    assert independence_rank([obs("q1"), obs("p1")], Z) == 2
    assert independence_rank([obs(M12), obs(A1), obs(A2)], Z) == 3
    assert independence_rank([obs("q1"), obs("2*q1")], Z) == 1


def test_structure_matrix_examples():
    s, corank = structure_matrix([obs("q1"), obs("p1")], Z)
    assert s.tolist() == [[0, -1], [1, 0]] and corank == 0
    s, corank = structure_matrix([obs(KEPLER_H), obs(M12)], Z)
    assert np.max(np.abs(s)) < 1e-14 and corank == 2
    h = obs(KEPLER_H)
    l1 = obs(f"({A1})/sqrt(-2*({KEPLER_H}))")
    l2 = obs(f"({A2})/sqrt(-2*({KEPLER_H}))")
    s, corank = structure_matrix([obs(M12), l1, l2], Z)
    assert corank == 1
    assert np.allclose(s, -s.T)
    assert h(Z) < 0


def test_singularity_reported():
    h = obs(KEPLER_H)
    with pytest.raises(SingularityError):
        poisson_bracket(h, obs("q1"), (0, 0, 1, 1))


# ---------------------------------------------------------------------------
# integrators
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("method", ["rk4", "implicit_midpoint"])
def test_free_particle_exact(method):
    tr = integrate_hamilton(obs("0.5*p1^2", C1), (0.0, 1.0), (0, 1), 0.1, method)
    assert tr.final[0] == pytest.approx(1.0, abs=1e-15)
    assert len(tr) == 11
    assert np.all(np.diff(tr.times) > 0)


def test_circular_kepler_orbit_closes():
    tr = integrate_hamilton(obs(KEPLER_H), (1, 0, 0, 1), (0, 2 * math.pi), 1e-3)
    assert np.max(np.abs(tr.final - [1, 0, 0, 1])) < 1e-6


def test_midpoint_conserves_quadratic_energy():
    h = obs("0.5*p1^2 + 0.5*q1^2", C1)
    tr = integrate_hamilton(h, (1.0, 0.0), (0, 100), 0.1, "implicit_midpoint")
    rep = conservation_report(h, [h], tr)
    assert rep[list(rep)[0]] < 1e-12


def _orbit_error(method, n):
    h = obs(KEPLER_H)
    z0 = np.array([0.5, 0.0, 0.0, math.sqrt(3.0)])  # a = 1, e = 0.5 at pericentre
    tr = integrate_hamilton(h, z0, (0, 2 * math.pi), 2 * math.pi / n, method)
    return np.max(np.abs(tr.final - z0))


def test_integrator_orders():
    for method, order, ns in (("rk4", 4, (400, 800, 1600)),
                              ("implicit_midpoint", 2, (2000, 4000, 8000))):
        errs = [_orbit_error(method, n) for n in ns]
        slope = np.polyfit(np.log([2 * math.pi / n for n in ns]), np.log(errs), 1)[0]
        assert abs(slope - order) <= 0.3, (method, slope, errs)


def test_conservation_report_examples():
    h = obs(KEPLER_H)
    z0 = np.array([0.5, 0.0, 0.0, math.sqrt(3.0)])
    tr = integrate_hamilton(h, z0, (0, 2 * math.pi), 1e-3)
    rep = conservation_report(h, [obs(M12, C2).renamed("M12"), obs(A1).renamed("A1"),
                                  obs(A2).renamed("A2")], tr)
    assert max(rep["M12"], rep["A1"], rep["A2"]) < 1e-7
    free = obs("0.5*p1^2", C1)
    tr = integrate_hamilton(free, (0.0, 0.7), (0, 2), 0.1)
    rep = conservation_report(free, [obs("q1", C1).renamed("q1")], tr)
    assert rep["q1"] == pytest.approx(2 * 0.7, abs=1e-14)


def test_singularity_halts_integration():
    h = obs("0.5*p1^2 + sqrt(q1)", C1)  # reaches q1 = 0 in finite time
    with pytest.raises(SingularityError) as info:
        integrate_hamilton(h, (1.0, 0.0), (0, 5), 1e-3)
    err = info.value
    assert err.partial is not None and len(err.partial) >= 1
    assert np.all(np.isfinite(err.last_state))


def test_midpoint_nonconvergence_reported():
    h = obs("0.5*p1^2 + 0.5*q1^2", C1)
    with pytest.raises(ConvergenceError):
        integrate_hamilton(h, (1.0, 0.0), (0, 10), 5.0, "implicit_midpoint")


def test_trajectory_csv_round_trip(tmp_path):
    tr = integrate_hamilton(obs(KEPLER_H), (1, 0, 0, 1), (0, 1), 0.25)
    path = tmp_path / "traj.csv"
    text = tr.to_csv(path)
    assert text.splitlines()[0] == "t,q1,q2,p1,p2"
    back = Trajectory.from_csv(path, C2)
    assert np.array_equal(back.states, tr.states)
    assert np.array_equal(back.times, tr.times)


# ---------------------------------------------------------------------------
# time-dependent systems
# ---------------------------------------------------------------------------

def test_homogeneous_zero_level():
    tchart = PhaseChart.canonical(1, time_dependent=True)
    h = parse_observable("t*q1 + p1^2", tchart)
    hs = homogeneous_extend(h)
    z = tchart.point([0.3], [0.7], t=1.5)
    assert hs.evaluate(hs.lift_point(z)) == 0.0


def test_homogeneous_zero_hamiltonian():
    hs = homogeneous_extend(constant(0.0, C1))
    tr = integrate_hamilton(hs.extended, hs.lift_point((0.2, 0.4), p0=0.0), (0, 2), 0.5)
    assert tr.final.tolist() == [2.0, 0.2, 0.0, 0.4]


def test_homogeneous_autonomous_matches():
    h = obs("0.5*p1^2 + 0.1*q1^4", C1)
    hs = homogeneous_extend(h)
    base = integrate_hamilton(h, (0.3, 0.5), (0, 3), 0.01)
    ext = integrate_hamilton(hs.extended, hs.lift_point((0.3, 0.5)), (0, 3), 0.01)
    assert np.max(np.abs(ext.final[[1, 3]] - base.final)) < 1e-14


def test_driven_linear_force():
    tchart = PhaseChart.canonical(1, time_dependent=True)
    h = parse_observable("t*q1", tchart)
    hs = homogeneous_extend(h)
    T = 2.0
    ext = integrate_hamilton(hs.extended, hs.lift_point(tchart.point([0.0], [1.0])),
                             (0, T), 0.01)
    assert ext.final[0] == pytest.approx(T, abs=1e-14)
    assert ext.final[3] == pytest.approx(1.0 - T**2 / 2, abs=1e-12)
    # the explicit time-dependent integration agrees
    direct = integrate_hamilton(h, (0.0, 1.0), (0, T), 0.01)
    assert direct.final[1] == pytest.approx(1.0 - T**2 / 2, abs=1e-12)


# ---------------------------------------------------------------------------
# backend parity
# ---------------------------------------------------------------------------

def _compiled():
    try:
        from actionangle import _ckernels
    except ImportError:
        pytest.skip("compiled kernels not built")
    return _ckernels


def test_backend_eval_parity():
    ck = _compiled()
    h = obs(KEPLER_H)
    tape = h._grad_tape
    X = np.random.default_rng(3).uniform(0.3, 1.5, size=(50, 4))
    assert np.allclose(ck.eval_tape_batch(tape, X), _pykernels.eval_tape_batch(tape, X),
                       rtol=1e-14, atol=1e-14)
    bad = np.array([[0.0, 0.0, 1.0, 1.0]])
    assert not np.isfinite(ck.eval_tape_batch(tape, bad)).all()
    assert not np.isfinite(_pykernels.eval_tape_batch(tape, bad)).all()


def test_backend_integrator_parity():
    ck = _compiled()
    from actionangle.core.integrate import _field_tape
    tape = _field_tape(obs(KEPLER_H))
    x0 = np.array([0.5, 0.0, 0.0, math.sqrt(3.0)])
    a, na = ck.rk4(tape, x0, 0.0, 0.01, 300)
    b, nb = _pykernels.rk4(tape, x0, 0.0, 0.01, 300)
    assert na == nb == 300 and np.allclose(a, b, rtol=1e-12, atol=1e-12)
    a, na, sa = ck.midpoint(tape, x0, 0.0, 0.01, 100, 1e-13, 50)
    b, nb, sb = _pykernels.midpoint(tape, x0, 0.0, 0.01, 100, 1e-13, 50)
    assert (na, sa) == (nb, sb) == (100, 0) and np.allclose(a, b, rtol=1e-11, atol=1e-11)
    X0 = np.array([x0, [1.0, 0.0, 0.0, 1.0], [0.0, 0.0, 1.0, 1.0]])
    A = ck.rk4_batch(tape, X0, 0.0, 0.01, 50)
    B = _pykernels.rk4_batch(tape, X0, 0.0, 0.01, 50)
    assert np.allclose(A[:2], B[:2], rtol=1e-12, atol=1e-12)
    assert np.isnan(A[2]).all() and np.isnan(B[2]).all()
