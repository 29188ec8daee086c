import cmath
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from measphase.errors import GeodesicUndefinedError, UndefinedPhaseError
from measphase.phase_engine import (
    MeasurementProtocol,
    ParallelSweep,
    PhaseAmplitude,
    all_plus,
    closed_form_amplitude,
    delta_rotation,
    equator_condition,
    pancharatnam_phase,
    postselected_closed_form,
    principal_phase,
    sequence_amplitude,
    solid_angle,
)
from measphase.qubit_core import MINUS, PLUS, BlochPoint, Direction, QubitState, kraus

# N = 10^4 all-+ product at c=3, theta=pi/4, from an independent rotating-frame
# matrix power (dR (M dR)^(N-1))[0, 0].
GOLDEN_N10K_C3 = 0.5145094342589005 - 0.3267023059481497j
# closed form at the same point, frozen from the first evaluation
GOLDEN_CLOSED_C3 = 0.5145586747493998 - 0.3265395068865489j


def direct_closed_form(c, theta, sign=1):
    """Textbook evaluation with an explicit choice of square-root branch."""
    z = complex(c, math.pi * math.cos(theta))
    tau = sign * cmath.sqrt(z * z - (math.pi * math.sin(theta)) ** 2)
    return -math.exp(-c) * (cmath.cosh(tau) + z * cmath.sinh(tau) / tau)


def rotating_frame_oracle(c, theta, n):
    e = np.exp(-2j * np.pi / n)
    s2, c2 = math.sin(theta / 2) ** 2, math.cos(theta / 2) ** 2
    off = 0.5 * (1 - e) * math.sin(theta)
    dr = np.array([[c2 + e * s2, off], [off, s2 + e * c2]])
    m = np.diag([1.0, math.sqrt(1 - 4 * c / n)])
    return complex((dr @ np.linalg.matrix_power(m @ dr, n - 1))[0, 0])


# -- amplitudes and protocols ----------------------------------------------------

def test_principal_phase_branch():
    assert principal_phase(-1 + 0j) == math.pi
    assert principal_phase(complex(-1, -0.0)) == math.pi
    assert principal_phase(1j) == pytest.approx(math.pi / 2)


def test_phase_amplitude_flags_small_probability():
    assert PhaseAmplitude(1e-5).phase_defined is True
    assert PhaseAmplitude(1e-7).phase_defined is False


def test_parallel_sweep_eta_eff():
    assert ParallelSweep(0.5, 1.0).eta_eff == pytest.approx(1 - math.exp(-2))
    with pytest.raises(ValueError):
        ParallelSweep(-1, 1.0)


def test_parallel_protocol_layout():
    p = MeasurementProtocol.parallel(1.0, math.pi / 3, 10)
    assert p.n_steps == 10
    assert p.strengths[:-1] == (0.4,) * 9 and p.strengths[-1] == 1.0
    assert p.orientations[2].phi == pytest.approx(2 * math.pi * 3 / 10)
    assert p.orientations[-1].phi == pytest.approx(0.0)
    assert p.initial == Direction(math.pi / 3, 0.0)


def test_protocol_validation():
    with pytest.raises(ValueError):
        MeasurementProtocol.parallel(3.0, 1.0, 10)
    with pytest.raises(ValueError):
        MeasurementProtocol((Direction(0.1),), (0.5,), Direction(0.1))
    p = MeasurementProtocol.parallel(1.0, 1.0, 5)
    with pytest.raises(ValueError):
        p.full_readouts([PLUS] * 4 + [MINUS])
    with pytest.raises(ValueError):
        p.full_readouts([PLUS] * 3)


def test_kraus_ops_table_matches_scalar_kraus():
    p = MeasurementProtocol.parallel(0.7, 1.2, 6)
    for k, n in enumerate(p.orientations):
        np.testing.assert_allclose(p.kraus_ops[k, 0], kraus(n, p.strengths[k], PLUS), atol=1e-15)
        np.testing.assert_allclose(p.kraus_ops[k, 1], kraus(n, p.strengths[k], MINUS), atol=1e-15)


# -- Pancharatnam phase ----------------------------------------------------------

def test_identical_states_have_zero_phase():
    s = QubitState.from_direction(Direction(1.0, 2.0))
    amp = pancharatnam_phase([s] * 5)
    assert amp.phase == pytest.approx(0.0, abs=1e-15)
    assert amp.probability == pytest.approx(1.0)


def test_octant_triangle_phase_and_solid_angle():
    pts = [BlochPoint(0.0, 0.0), BlochPoint(math.pi / 2, 0.0), BlochPoint(math.pi / 2, math.pi / 2)]
    assert solid_angle(pts) == pytest.approx(math.pi / 2, abs=1e-12)
    amp = pancharatnam_phase([QubitState.from_direction(p) for p in pts])
    assert amp.phase == pytest.approx(-math.pi / 4, abs=1e-12)


def test_pancharatnam_gauge_invariance():
    rng = np.random.default_rng(5)
    states = [QubitState.from_direction(BlochPoint(*rng.uniform([0, 0], [2, 6]))) for _ in range(6)]
    base = pancharatnam_phase(states).amplitude
    states[3] = QubitState(states[3].amp_up, states[3].amp_down, 1.234j)
    states[0] = QubitState(states[0].amp_up * 1j, states[0].amp_down * 1j)
    assert pancharatnam_phase(states).amplitude == pytest.approx(base, abs=1e-14)


def test_pancharatnam_orthogonal_pair_raises():
    with pytest.raises(UndefinedPhaseError):
        pancharatnam_phase([QubitState(1, 0), QubitState(0, 1), QubitState.from_vector([1, 1])])


def test_pancharatnam_needs_two_states():
    with pytest.raises(ValueError):
        pancharatnam_phase([QubitState(1, 0)])


@settings(max_examples=60, deadline=None)
@given(st.integers(3, 12), st.integers(0, 2**32 - 1))
def test_pancharatnam_equals_minus_half_solid_angle(n_vertices, seed):
    rng = np.random.default_rng(seed)
    v = rng.normal(size=(n_vertices, 3))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    # keep neighbours well away from antipodal
    for i in range(1, n_vertices):
        if np.dot(v[i], v[i - 1]) < -0.9:
            v[i] = -v[i]
    if np.dot(v[0], v[-1]) < -0.9:
        return
    pts = [BlochPoint.from_vector(x) for x in v]
    amp = pancharatnam_phase([QubitState.from_direction(p) for p in pts])
    diff = principal_phase(cmath.exp(1j * (amp.phase + 0.5 * solid_angle(pts))))
    assert abs(diff) < 1e-6


# -- solid angle -----------------------------------------------------------------------

def test_solid_angle_back_and_forth_is_zero():
    assert solid_angle([BlochPoint(0.3, 0.2), BlochPoint(1.4, 2.0)]) == 0.0


def test_solid_angle_equator_is_two_pi():
    pts = [BlochPoint(math.pi / 2, 2 * math.pi * k / 50) for k in range(50)]
    assert solid_angle(pts) == pytest.approx(2 * math.pi, abs=1e-12)


def test_solid_angle_orientation_and_cap():
    theta = 0.9
    pts = [BlochPoint(theta, 2 * math.pi * k / 400) for k in range(400)]
    cap = 2 * math.pi * (1 - math.cos(theta))
    assert solid_angle(pts) == pytest.approx(cap, rel=1e-4)
    assert solid_angle(pts[::-1]) == pytest.approx(-cap, rel=1e-4)


def test_solid_angle_antipodal_neighbours_raise():
    with pytest.raises(GeodesicUndefinedError):
        solid_angle([BlochPoint(0.0), BlochPoint(math.pi), BlochPoint(1.0, 1.0)])


# -- Kraus products ----------------------------------------------------------------------

def test_zero_strength_amplitude_is_one():
    for theta in (0.2, 1.0, 2.5):
        amp = all_plus(MeasurementProtocol.parallel(0.0, theta, 50))
        assert amp.amplitude == pytest.approx(1.0, abs=1e-12)


def test_pole_protocol_amplitude_is_one():
    amp = all_plus(MeasurementProtocol.parallel(2.0, 0.0, 50))
    assert amp.probability == pytest.approx(1.0, abs=1e-12)
    assert amp.phase == pytest.approx(0.0, abs=1e-12)


def test_all_plus_matches_rotating_frame_oracle():
    for c, theta, n in [(1.0, math.pi / 4, 64), (3.0, 2.0, 300), (0.5, math.pi / 2, 17)]:
        amp = all_plus(MeasurementProtocol.parallel(c, theta, n)).amplitude
        assert amp == pytest.approx(rotating_frame_oracle(c, theta, n), abs=1e-12)


def test_n10k_golden_value():
    amp = all_plus(MeasurementProtocol.parallel(3.0, math.pi / 4, 10_000)).amplitude
    assert amp == pytest.approx(GOLDEN_N10K_C3, abs=1e-10)


def test_n2000_close_to_closed_form():
    amp = all_plus(MeasurementProtocol.parallel(3.0, math.pi / 4, 2000)).amplitude
    assert abs(amp - closed_form_amplitude(3.0, math.pi / 4)) < 5e-3


def test_all_plus_stepwise_overlaps_are_positive():
    p = MeasurementProtocol.parallel(1.5, 1.0, 100)
    psi = p.initial_state.amplitudes
    for k in range(p.n_steps):
        nxt = p.kraus_ops[k, 0] @ psi
        assert np.vdot(nxt, psi).real > 0 and abs(np.vdot(nxt, psi).imag) < 1e-12
        psi = nxt / np.linalg.norm(nxt)


def test_impossible_sequence_raises():
    p = MeasurementProtocol((Direction(0.0), Direction(0.0)), (1.0, 1.0), Direction(0.0))
    with pytest.raises(UndefinedPhaseError):
        sequence_amplitude(p, [MINUS])


def test_long_sequence_does_not_underflow():
    p = MeasurementProtocol.parallel(20.0, math.pi / 2, 4000)
    rng = np.random.default_rng(0)
    r = [PLUS if x else MINUS for x in rng.random(3999) < 0.9] + [PLUS]
    amp = sequence_amplitude(p, r[:-1])
    # oracle: renormalise every step and add the logs by hand
    psi0 = p.initial_state.amplitudes
    v, log_norm = psi0.copy(), 0.0
    for k, rk in enumerate(r):
        v = p.kraus_ops[k, 0 if rk == PLUS else 1] @ v
        nrm = np.linalg.norm(v)
        log_norm += math.log(nrm)
        v /= nrm
    ov = np.vdot(psi0, v)
    expected_log_abs = log_norm + math.log(abs(ov))
    assert expected_log_abs < -300  # the raw product would underflow
    assert amp.probability == 0.0
    assert 0.5 * amp.log_probability == pytest.approx(expected_log_abs, abs=1e-8)
    assert amp.phase == pytest.approx(cmath.phase(ov), abs=1e-8)


@pytest.mark.parametrize("c,theta", [(1.0, math.pi / 4), (3.0, 2.0), (0.5, 1.3)])
def test_convergence_is_first_order(c, theta):
    exact = closed_form_amplitude(c, theta)
    errs = [abs(all_plus(MeasurementProtocol.parallel(c, theta, n)).amplitude - exact) for n in (250, 500, 1000, 2000)]
    for a, b in zip(errs, errs[1:]):
        assert 0.4 <= b / a <= 0.6


# -- closed form ------------------------------------------------------------------------

def test_closed_form_trivial_limits():
    for c in (0.0, 0.5, 3.0, 40.0):
        assert closed_form_amplitude(c, 0.0) == pytest.approx(1.0, abs=1e-12)
    for theta in np.linspace(0, math.pi, 9):
        assert closed_form_amplitude(0.0, theta) == pytest.approx(1.0, abs=1e-12)


def test_closed_form_golden():
    assert closed_form_amplitude(3.0, math.pi / 4) == pytest.approx(GOLDEN_CLOSED_C3, abs=1e-14)
    # the N = 10^4 product sits within its O(1/N) error of the limit
    assert abs(GOLDEN_CLOSED_C3 - GOLDEN_N10K_C3) < 5e-4


def test_closed_form_strong_limit_trend():
    target = math.pi * (math.cos(math.pi / 4) - 1)
    errs = [abs(postselected_closed_form(c, math.pi / 4).phase - target) for c in (20, 40, 100, 400)]
    assert all(b < a for a, b in zip(errs, errs[1:]))
    assert errs[-1] < 1e-3
    assert postselected_closed_form(400, math.pi / 4).probability > 0.9


@given(st.floats(0.0, 30.0), st.floats(0.0, math.pi))
def test_branch_independence(c, theta):
    z2 = complex(c, math.pi * math.cos(theta)) ** 2 - (math.pi * math.sin(theta)) ** 2
    if abs(z2) < 1e-6:
        return
    a, b = direct_closed_form(c, theta, 1), direct_closed_form(c, theta, -1)
    assert abs(a - b) < 1e-12 * max(1.0, abs(a))
    assert abs(closed_form_amplitude(c, theta) - a) < 1e-10 * max(1.0, abs(a))


def test_series_switch_is_continuous():
    # tau = 0 at (c, theta) = (pi, pi/2)
    for d in (1e-9, 5e-9, 2e-8, 1e-6):
        for sgn in (1, -1):
            c = math.sqrt(math.pi ** 2 + sgn * d)
            v = closed_form_amplitude(c, math.pi / 2)
            assert v == pytest.approx(closed_form_amplitude(math.pi, math.pi / 2), abs=1e-5)
    # across |tau| = 1e-4 the two evaluations agree
    inside = closed_form_amplitude(math.sqrt(math.pi ** 2 + 0.99e-8), math.pi / 2)
    outside = direct_closed_form(math.sqrt(math.pi ** 2 + 1.01e-8), math.pi / 2)
    assert inside == pytest.approx(outside, abs=1e-9)


@given(st.floats(0.0, 50.0))
def test_equator_amplitude_is_real(c):
    assert abs(closed_form_amplitude(c, math.pi / 2).imag) < 1e-12


@given(st.floats(0.0, 20.0), st.floats(0.01, math.pi / 2))
def test_reflection_symmetry(c, theta):
    a, b = postselected_closed_form(c, theta), postselected_closed_form(c, math.pi - theta)
    if a.probability < 1e-12:
        return
    assert abs(principal_phase(cmath.exp(1j * (a.phase + b.phase)))) < 1e-9


def test_equator_condition_matches_closed_form():
    for c in (0.5, 2.0, 3.0, math.pi, 6.0):
        amp = closed_form_amplitude(c, math.pi / 2)
        assert amp.real == pytest.approx(-math.exp(-c) * equator_condition(c), abs=1e-12)


def test_closed_form_rejects_bad_inputs():
    with pytest.raises(ValueError):
        postselected_closed_form(-0.1, 1.0)
    with pytest.raises(ValueError):
        postselected_closed_form(1.0, 4.0)


def test_delta_rotation_is_step_rotation():
    from measphase.qubit_core import rotation_matrix

    theta, n = 1.1, 12
    expected = rotation_matrix(Direction(theta, 2 * math.pi / n)) @ rotation_matrix(Direction(theta, 0)).conj().T
    np.testing.assert_allclose(delta_rotation(theta, n), expected, atol=1e-14)
