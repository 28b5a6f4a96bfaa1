import cmath
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from actionangle import holonomy as Hm
from actionangle.core import PhaseChart, integrate_hamilton, parse_observable
from actionangle.errors import ConfigError, GridResolutionError
from actionangle.quantize import TorusState, action_hamiltonian, action_operator, random_state

SIN = Hm.ConnectionField.parse([["sin(phi)"]])
UNIT = Hm.ParameterPath.from_exprs(1.0, ["t"])


def sin_flow(phi0, t):
    """Closed form of dphi/dt = sin(phi): tan(phi/2) = tan(phi0/2) e^t (phi0 in (-pi, pi))."""
    return 2.0 * np.arctan(np.tan(phi0 / 2.0) * np.exp(t))


# ---------------------------------------------------------------------------
# types
# ---------------------------------------------------------------------------

def test_connection_validation():
    with pytest.raises(ConfigError):
        Hm.ConnectionField.parse([["phi1*sin(phi1)"]])
    with pytest.raises(ConfigError):
        Hm.ConnectionField.parse([["sin(phi1/2)"]])
    with pytest.raises(ConfigError):
        Hm.ConnectionField.parse([["sin(phi1)", "1"], ["2"]])
    conn = Hm.ConnectionField.parse([["sigma1*cos(phi2)", "1"], ["sin(phi1 - phi2)", "sigma2^2"]])
    assert (conn.m, conn.d) == (2, 2)
    assert not conn.is_principal
    assert Hm.ConnectionField.parse([["0.5"]]).constants().tolist() == [[0.5]]


def test_path_validation():
    with pytest.raises(ConfigError):
        Hm.ParameterPath.from_exprs(1.0, ["t^2"], ["t"])
    with pytest.raises(ConfigError):
        Hm.ParameterPath.from_pieces([{"t0": 0, "t1": 1, "components": ["t"]},
                                      {"t0": 1, "t1": 2, "components": ["t + 1"]}])
    p = Hm.ParameterPath.from_exprs(2.0, ["t^2", "sin(t)"], ["2*t", "cos(t)"])
    assert p.T == 2.0 and p.d == 2
    assert p.displacement() == pytest.approx([4.0, math.sin(2.0)])


def test_state_reduces_angles():
    s = Hm.HolonomyState([1.0], [-0.5])
    assert s.phi[0] == pytest.approx(2 * math.pi - 0.5)


# ---------------------------------------------------------------------------
# classical holonomy
# ---------------------------------------------------------------------------

def test_sin_connection_example():
    traj = Hm.classical_holonomy(SIN, UNIT, Hm.HolonomyState([1.0], [math.pi / 2]), 1e-4)
    assert abs(traj.I[-1, 0] - math.cosh(1.0)) < 1e-8
    assert abs(traj.final.phi[0] - 2 * math.atan(math.e)) < 1e-8
    assert traj.I[-1, 0] == pytest.approx(1.5430806348152437, abs=1e-8)


def test_sin_connection_invariant_and_closed_form():
    path = Hm.ParameterPath.from_exprs(2.0, ["t"])
    for phi0, I0 in [(0.4, 1.3), (2.5, -0.7), (-1.0, 2.0)]:
        traj = Hm.classical_holonomy(SIN, path, Hm.HolonomyState([I0], [phi0]), 1e-4)
        inv = traj.I[:, 0] * np.sin(traj.phi[:, 0])
        assert np.ptp(inv) < 1e-9
        exact = np.mod(sin_flow(phi0, traj.t), 2 * math.pi)
        assert np.max(np.abs(np.mod(traj.phi[:, 0], 2 * math.pi) - exact)) < 1e-9


def test_principal_connection_classical():
    conn = Hm.ConnectionField.parse([["0.7"]])
    path = Hm.ParameterPath.from_exprs(5.0, ["t"])
    traj = Hm.classical_holonomy(conn, path, Hm.HolonomyState([1.5], [6.0]), 1e-3)
    assert traj.I[-1, 0] == 1.5
    assert traj.final.phi[0] == pytest.approx(math.fmod(6.0 + 3.5, 2 * math.pi), abs=1e-12)


def test_zero_path_leaves_state_unchanged():
    path = Hm.ParameterPath.from_exprs(1.0, ["0.3"])
    s0 = Hm.HolonomyState([1.2], [0.9])
    traj = Hm.classical_holonomy(SIN, path, s0, 1e-2)
    assert traj.final == s0


def test_matches_generic_hamilton_integrator():
    # the holonomy flow is the Hamiltonian flow of I_k Lambda^k_alpha dsigma^alpha/dt
    conn = Hm.ConnectionField.parse([["sigma1*cos(phi2)", "1 + sin(phi1)"],
                                     ["sin(phi1 - phi2)", "sigma2^2*cos(phi1)"]])
    path = Hm.ParameterPath.from_exprs(1.5, ["sin(t)", "t^2"], ["cos(t)", "2*t"])
    s0 = Hm.HolonomyState([0.8, -1.1], [0.3, 2.0])
    traj = Hm.classical_holonomy(conn, path, s0, 1e-3)
    chart = PhaseChart(("phi1", "phi2"), ("I1", "I2"), time_dependent=True)
    H = parse_observable(
        "I1*(sin(t)*cos(phi2)*cos(t) + (1 + sin(phi1))*2*t)"
        " + I2*(sin(phi1 - phi2)*cos(t) + t^4*cos(phi1)*2*t)", chart)
    ref = integrate_hamilton(H, [*s0.phi, *s0.I], (0.0, 1.5), 1e-3)
    end = ref.final
    assert np.max(np.abs(traj.phi[-1] - end[:2])) < 1e-11
    assert np.max(np.abs(traj.I[-1] - end[2:4])) < 1e-11


@settings(max_examples=30, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3), st.floats(-3, 3), st.floats(-3, 3),
       st.floats(0, 6.28), st.floats(0, 6.28))
def test_actions_transform_linearly(a, b, c, e, p1, p2):
    conn = Hm.ConnectionField.parse([["cos(phi1 + phi2)", "0.5"], ["sin(phi1)*sigma1", "cos(phi2)"]])
    path = Hm.ParameterPath.from_exprs(1.0, ["t", "t^2"])
    run = lambda I: Hm.classical_holonomy(conn, path, Hm.HolonomyState(I, [p1, p2]), 1e-2).I[-1]
    u, v = run([a, b]), run([c, e])
    w = run([2.0 * a - 0.5 * c, 2.0 * b - 0.5 * e])
    scale = max(1.0, np.abs(u).max(), np.abs(v).max())
    assert np.max(np.abs(w - (2.0 * u - 0.5 * v))) < 1e-10 * scale


def test_reparametrization_examples():
    s0 = Hm.HolonomyState([1.0], [math.pi / 2])
    assert Hm.reparametrization_check(SIN, UNIT, Hm.ParameterPath.from_exprs(1.0, ["t"]), s0, 1e-4) == 0.0
    sq = Hm.ParameterPath.from_exprs(1.0, ["t^2"])
    assert Hm.reparametrization_check(SIN, UNIT, sq, s0, 1e-4) < 1e-8
    kink = Hm.ParameterPath.from_pieces([{"t0": 0, "t1": 0.5, "components": ["0.5*t"]},
                                         {"t0": 0.5, "t1": 1.0, "components": ["1.5*t - 0.5"]}])
    assert Hm.reparametrization_check(SIN, UNIT, kink, s0, 1e-4) < 1e-7


def test_reparametrization_two_parameters():
    conn = Hm.ConnectionField.parse([["sin(phi1)", "cos(phi1)*sigma2"]])
    path = Hm.ParameterPath.from_exprs(2.0, ["t", "sin(t)"])
    repar = Hm.ParameterPath.from_exprs(1.0, ["2*t^3"])
    s0 = Hm.HolonomyState([0.7], [1.0])
    assert Hm.reparametrization_check(conn, path, repar, s0, 1e-4) < 1e-8


def test_reparametrization_must_be_monotone():
    s0 = Hm.HolonomyState([1.0], [1.0])
    with pytest.raises(ConfigError):
        bad = Hm.ParameterPath.from_exprs(1.0, ["2*t^2 - t"])
        Hm.reparametrization_check(SIN, UNIT, bad, s0, 1e-3)
    with pytest.raises(ConfigError):
        Hm.reparametrization_check(SIN, UNIT, Hm.ParameterPath.from_exprs(1.0, ["0.5*t"]), s0, 1e-3)


def test_original_coordinates():
    traj = Hm.classical_holonomy(SIN, UNIT, Hm.HolonomyState([2.0], [1.0]), 1e-3)
    same = Hm.to_original_coordinates(traj, "0")
    assert np.array_equal(same.phi, traj.phi) and np.array_equal(same.I, traj.I)
    const = Hm.ConnectionField.parse([["0.25"]])
    t2 = Hm.classical_holonomy(const, Hm.ParameterPath.from_exprs(2.0, ["t^2"]),
                               Hm.HolonomyState([2.0], [1.0]), 1e-3)
    orig = Hm.to_original_coordinates(t2, "0.5*I1^2")
    expected = 1.0 + 0.25 * t2.t**2 + 2.0 * t2.t
    assert np.max(np.abs(orig.phi[:, 0] - expected)) < 1e-12
    assert np.array_equal(orig.I, t2.I)


def test_trajectory_csv():
    traj = Hm.classical_holonomy(SIN, UNIT, Hm.HolonomyState([1.0], [math.pi / 2]), 0.25)
    lines = traj.to_csv().splitlines()
    assert lines[0] == "t,I1,phi1"
    assert len(lines) == 6
    assert float(lines[-1].split(",")[0]) == 1.0


# ---------------------------------------------------------------------------
# Berry multiplier and quantum transport
# ---------------------------------------------------------------------------

def test_berry_examples():
    path = Hm.ParameterPath.from_exprs(math.pi, ["t"])
    assert Hm.berry_multiplier(Hm.ConnectionField.parse([["2"]]), path, [0]) == 1
    assert abs(Hm.berry_multiplier(Hm.ConnectionField.parse([["2"]]), path, [1]) - 1) < 1e-15
    assert abs(Hm.berry_multiplier(Hm.ConnectionField.parse([["0.5"]]), path, [1]) + 1j) < 1e-15
    with pytest.raises(ValueError):
        Hm.berry_multiplier(SIN, path, [1])


@pytest.mark.parametrize("lam", [0.0, 0.5, -0.5])
def test_principal_transport_is_berry_phase(lam):
    conn = Hm.ConnectionField.parse([["0.5", "-1.25"], ["0.3", "2"]])
    path = Hm.ParameterPath.from_exprs(1.0, ["3*t", "sin(t)"])
    for n in [(0, 0), (1, -2), (-3, 2)]:
        q = Hm.quantum_holonomy(conn, path, TorusState.basis(n), [lam, lam], 16, 1e-3)
        out = q.state()
        mult = Hm.berry_multiplier(conn, path, n, [lam, lam])
        assert abs(out[n] - mult) < 1e-12
        others = [abs(c) for k, c in out.amplitudes.items() if k != n]
        assert max(others, default=0.0) < 1e-12


def test_unitarity_sin_connection():
    psi0 = np.full(256, (2 * math.pi) ** -0.5)
    q = Hm.quantum_holonomy(SIN, UNIT, psi0, [0], 256, 1e-3)
    assert abs(q.norm() - 1.0) < 1e-10


def test_unitarity_two_angles():
    path = Hm.ParameterPath.from_exprs(1.0, ["t", "t^2"])
    psi0 = random_state(np.random.default_rng(0), 2, 2, (0.5, 0.0))
    mild = Hm.ConnectionField.parse([["0.3*cos(phi2)", "0.2*sin(phi1)"], ["0.3*sin(phi1 + phi2)", "1"]])
    q = Hm.quantum_holonomy(mild, path, psi0, psi0.lam, 32, 1e-3)
    assert abs(q.norm() - Hm.grid_norm(Hm.grid_values(psi0, 32))) < 1e-10


def test_unitarity_strong_distortion_converges_spectrally():
    # the transported state gains bandwidth; the grid norm is exact once N resolves it
    conn = Hm.ConnectionField.parse([["cos(phi2)", "0.5*sin(phi1)"], ["sin(phi1 + phi2)", "1"]])
    path = Hm.ParameterPath.from_exprs(1.0, ["t", "t^2"])
    psi0 = random_state(np.random.default_rng(0), 2, 2, (0.5, 0.0))
    defects = []
    for N in (32, 64, 96):
        q = Hm.quantum_holonomy(conn, path, psi0, psi0.lam, N, 1e-3)
        defects.append(abs(q.norm() - Hm.grid_norm(Hm.grid_values(psi0, N))))
    assert defects[0] > defects[1] > 1e3 * defects[2] or defects[2] < 1e-14
    assert defects[2] < 1e-10


def _closed_form_transport(psi0: TorusState, lam: float, t: float, N: int):
    phi = 2 * math.pi * np.arange(N) / N
    centred = np.angle(np.exp(1j * phi))  # (-pi, pi]
    feet = sin_flow(centred, -t)
    with np.errstate(invalid="ignore", divide="ignore"):
        J = np.sin(feet) / np.sin(centred)
    J[np.isclose(np.sin(centred), 0.0, atol=1e-15) & (np.cos(centred) > 0)] = math.exp(-t)
    J[np.isclose(np.sin(centred), 0.0, atol=1e-15) & (np.cos(centred) < 0)] = math.exp(t)
    base = sum(c * np.exp(1j * n[0] * feet) for n, c in psi0.amplitudes.items())
    return np.sqrt(J) * base * np.exp(1j * lam * (feet - centred))


@pytest.mark.parametrize("lam", [0.0, 0.5])
def test_transport_matches_closed_form(lam):
    psi0 = TorusState({(2,): 1.0, (-1,): 0.3j}, (lam,))
    q = Hm.quantum_holonomy(SIN, UNIT, psi0, [lam], 64, 1e-3)
    exact = _closed_form_transport(psi0, lam, 1.0, 64)
    assert np.max(np.abs(q.values - exact)) < 1e-10


def test_transport_solves_schrodinger_equation():
    # check d_t Psi + Lambda d_phi Psi + 1/2 Lambda' Psi + i lam Lambda Psi = 0
    lam, N, h = 0.5, 64, 1e-3
    psi0 = TorusState({(1,): 1.0, (0,): 0.5}, (lam,))
    vals = {}
    for j in (-2, -1, 0, 1, 2):
        path = Hm.ParameterPath.from_exprs(0.7 + j * h, ["t"])
        vals[j] = Hm.quantum_holonomy(SIN, path, psi0, [lam], N, 1e-4).values
    # five-point stencil, O(h^4)
    dt = (8 * (vals[1] - vals[-1]) - (vals[2] - vals[-2])) / (12 * h)
    k = np.fft.fftfreq(N, 1.0 / N)
    psi = vals[0]
    dphi = np.fft.ifft(1j * k * np.fft.fft(psi))
    phi = 2 * math.pi * np.arange(N) / N
    resid = dt + np.sin(phi) * dphi + 0.5 * np.cos(phi) * psi + 1j * lam * np.sin(phi) * psi
    assert np.max(np.abs(resid)) < 1e-6


def test_zero_path_quantum_identity():
    path = Hm.ParameterPath.from_exprs(1.0, ["0.2"])
    grid = Hm.grid_values(random_state(np.random.default_rng(1), 1, 3), 32)
    q = Hm.quantum_holonomy(SIN, path, grid, [0], 32, 1e-2)
    assert np.array_equal(q.values, grid)


def test_quantum_preconditions():
    psi0 = TorusState.basis((0,))
    with pytest.raises(ValueError):
        Hm.quantum_holonomy(SIN, UNIT, psi0, [0.25], 32, 1e-2)
    with pytest.raises(GridResolutionError):
        Hm.quantum_holonomy(SIN, UNIT, psi0, [0], 8, 1e-2)
    wide = Hm.ConnectionField.parse([["0.1*sin(5*phi)"]])
    assert Hm.connection_bandwidth(wide, UNIT) == 5
    with pytest.raises(GridResolutionError):
        Hm.quantum_holonomy(wide, UNIT, psi0, [0], 16, 1e-2)
    assert Hm.quantum_holonomy(wide, UNIT, psi0, [0], 20, 1e-2).N == 20


def test_grid_interpolation_splits_nyquist():
    N = 16
    phi = 2 * math.pi * np.arange(N) / N
    modes = Hm._grid_modes(np.cos(8 * phi))
    assert modes[(8,)] == pytest.approx(0.5) and modes[(-8,)] == pytest.approx(0.5)


def test_half_integer_output_labels():
    q = Hm.quantum_holonomy(Hm.ConnectionField.parse([["1"]]), UNIT, TorusState.basis((1,)),
                            [0.5], 16, 1e-2)
    obj = q.state().to_json_obj(half_labels=True)
    big = [m for m in obj["modes"] if abs(complex(m["re"], m["im"])) > 0.5]
    assert big[0]["n"] == [1.5]
    assert abs(q.state()[(1,)] - cmath.exp(-1.5j)) < 1e-12


# ---------------------------------------------------------------------------
# R isomorphism
# ---------------------------------------------------------------------------

def test_r_isomorphism_mean_actions():
    rng = np.random.default_rng(2)
    H = action_hamiltonian("I1^2 - 0.3*I1*I2 + I2^3", 2)
    worst = 0.0
    for _ in range(20):
        psi = random_state(rng, 2, 3, (0.5, 0.0))
        R = Hm.r_isomorphism(psi, H, rng.uniform(-5, 5))
        for k in range(2):
            worst = max(worst, abs(action_operator(k, R).inner(R) - action_operator(k, psi).inner(psi)))
        assert abs(R.norm() - psi.norm()) < 1e-14
    assert worst < 1e-14
