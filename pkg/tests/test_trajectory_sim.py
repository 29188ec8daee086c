import math

import numpy as np
import pytest

from measphase.errors import EnumerationTooLargeError, VisibilityZeroError
from measphase.phase_engine import MeasurementProtocol, all_plus, closed_form_amplitude
from measphase.qubit_core import MINUS, PLUS, Direction, apply_measurement
from measphase.trajectory_sim import (
    acceptance_probability,
    all_plus_frequency,
    averaged_amplitude,
    averaged_amplitude_parallel,
    averaged_phase_exact,
    averaged_phase_mc,
    enumerate_all,
    phase_histogram,
    realization_stream,
    resolve_threads,
    sample_trajectory,
    sequence_frequencies,
    simulate_ensemble,
)

# N=500, c=1, theta=pi/4, frozen from the rotating-frame matrix power
# (dR (x) dR) T^(N-1) with T = sum_r (M_r dR) (x) (M_r dR).
GOLDEN_CHI_BAR_C1 = -0.06660912485048405
GOLDEN_ALPHA_C1 = 0.5964138472555047


def dead_protocol():
    """Postselection onto the state orthogonal to the initial one."""
    return MeasurementProtocol(
        (Direction(0.0), Direction(0.0)), (0.5, 1.0), Direction(0.0), final_postselect=MINUS
    )


def brute_force_average(protocol):
    """Sum of squared loop amplitudes over every accepted readout sequence."""
    return sum(o.amplitude.amplitude ** 2 for o in enumerate_all(protocol) if o.readouts[-1] == PLUS)


# -- random streams --------------------------------------------------------------------

def test_streams_are_order_independent():
    a = [realization_stream(7, i).random(5) for i in (3, 1, 2)]
    b = [realization_stream(7, i).random(5) for i in (1, 2, 3)]
    np.testing.assert_array_equal(a[0], b[2])
    np.testing.assert_array_equal(a[1], b[0])
    assert not np.array_equal(b[0], b[1])
    assert not np.array_equal(realization_stream(8, 1).random(5), b[0])


def test_resolve_threads_env(monkeypatch):
    monkeypatch.setenv("MEASPHASE_THREADS", "3")
    assert resolve_threads(0) == 3
    assert resolve_threads(5) == 5
    monkeypatch.delenv("MEASPHASE_THREADS")
    assert resolve_threads(0) >= 1


# -- single trajectories ---------------------------------------------------------------

@pytest.mark.parametrize("c,theta", [(0.0, 1.0), (2.0, 0.0)])
def test_trivial_protocols_always_plus(c, theta):
    p = MeasurementProtocol.parallel(c, theta, 100)
    for i in range(20):
        rec = sample_trajectory(p, realization_stream(0, i))
        assert all(r == PLUS for r in rec.readouts)
        assert rec.accepted
        assert rec.phase == pytest.approx(0.0, abs=1e-12)


def test_record_probability_is_product_of_steps():
    p = MeasurementProtocol.parallel(2.0, 1.0, 40)
    for i in range(10):
        rec = sample_trajectory(p, realization_stream(3, i), keep_states=True, seed=3, index=i)
        assert len(rec.states) == p.n_steps + 1
        state, prob = p.initial_state, 1.0
        for n, eta, r in zip(p.orientations, p.strengths, rec.readouts):
            state, pk = apply_measurement(state, n, eta, r)
            prob *= pk
        if rec.accepted:
            assert rec.amplitude.probability == pytest.approx(prob, rel=1e-9)
        assert rec.accepted == (rec.readouts[-1] == PLUS)


def test_scalar_and_batched_sampling_agree():
    p = MeasurementProtocol.parallel(1.5, 1.2, 60)
    readouts, z, accepted, chi = simulate_ensemble(p, 40, seed=11, threads=1)
    for i in range(40):
        rec = sample_trajectory(p, realization_stream(11, i))
        assert tuple(readouts[i]) == rec.readouts
        assert z[i] == pytest.approx(rec.z, abs=1e-12)
        if rec.accepted:
            assert chi[i] == pytest.approx(rec.phase, abs=1e-10)


def test_all_plus_frequency_matches_closed_form():
    p = MeasurementProtocol.parallel(3.0, math.pi / 4, 500)
    readouts, *_ = simulate_ensemble(p, 4000, seed=0)
    freq = all_plus_frequency(readouts)
    prob = abs(closed_form_amplitude(3.0, math.pi / 4)) ** 2
    assert abs(freq - prob) < 3 * math.sqrt(prob * (1 - prob) / 4000)


# -- enumeration -------------------------------------------------------------------------

def test_projective_enumeration():
    p = MeasurementProtocol(
        (Direction(math.pi / 2), Direction(math.pi / 2, math.pi / 2), Direction(0.7)),
        (1.0, 1.0, 1.0),
        Direction(0.7),
    )
    outcomes = enumerate_all(p)
    assert len(outcomes) == 8
    assert sum(o.probability for o in outcomes) == pytest.approx(1.0, abs=1e-12)
    for o in outcomes:
        if o.readouts[-1] == PLUS and o.probability > 0:
            assert o.amplitude.probability == pytest.approx(o.probability, abs=1e-12)


def test_enumeration_total_probability():
    outcomes = enumerate_all(MeasurementProtocol.parallel(1.0, math.pi / 4, 6))
    assert len(outcomes) == 64
    assert sum(o.probability for o in outcomes) == pytest.approx(1.0, abs=1e-12)


def test_enumeration_rows_match_sequence_amplitude():
    from measphase.phase_engine import sequence_amplitude

    p = MeasurementProtocol.parallel(1.0, 1.0, 7)
    for o in enumerate_all(p)[::9]:
        if o.readouts[-1] != PLUS:
            continue
        assert o.amplitude.amplitude == pytest.approx(sequence_amplitude(p, o.readouts).amplitude, abs=1e-13)


def test_enumeration_refuses_large_n():
    with pytest.raises(EnumerationTooLargeError):
        enumerate_all(MeasurementProtocol.parallel(1.0, 1.0, 17))


def test_exhaustive_matches_transfer_matrix_on_grid():
    for n in range(3, 11):
        for c in (0.3, 0.7):
            for theta in (0.4, math.pi / 2, 2.5):
                p = MeasurementProtocol.parallel(c, theta, n)
                assert abs(brute_force_average(p) - averaged_amplitude(p)) < 1e-12
                accept = sum(o.probability for o in enumerate_all(p) if o.readouts[-1] == PLUS)
                assert acceptance_probability(p) == pytest.approx(accept, abs=1e-12)


def test_mc_sequence_frequencies_match_enumeration():
    p = MeasurementProtocol.parallel(1.0, math.pi / 4, 8)
    n = 20000
    readouts, *_ = simulate_ensemble(p, n, seed=5)
    freq = sequence_frequencies(readouts)
    assert sum(freq.values()) == n
    for o in enumerate_all(p):
        expected = n * o.probability
        sigma = math.sqrt(n * o.probability * (1 - o.probability))
        assert abs(freq.get(o.readouts, 0) - expected) <= 4 * sigma + 1e-9


# -- exact averaging ----------------------------------------------------------------------

def test_exact_average_golden():
    s = averaged_phase_exact(MeasurementProtocol.parallel(1.0, math.pi / 4, 500))
    assert s.chi_bar == pytest.approx(GOLDEN_CHI_BAR_C1, abs=1e-12)
    assert s.alpha == pytest.approx(GOLDEN_ALPHA_C1, abs=1e-12)


def test_parallel_route_matches_stepwise():
    for c, theta, n in [(1.0, math.pi / 4, 500), (3.3, 1.06, 500), (0.2, 2.0, 40)]:
        a = averaged_amplitude(MeasurementProtocol.parallel(c, theta, n))
        b = averaged_amplitude_parallel(c, theta, n)
        assert abs(a - b) < 1e-12 * max(1.0, abs(a)) + 1e-14


def test_parallel_route_broadcasts():
    out = averaged_amplitude_parallel(np.array([[0.5], [1.0]]), np.array([0.3, 0.6, 0.9]), 50)
    assert out.shape == (2, 3)
    assert out[1, 2] == pytest.approx(averaged_amplitude_parallel(1.0, 0.9, 50), abs=1e-15)


def test_exact_average_trivial_and_equator():
    s = averaged_phase_exact(MeasurementProtocol.parallel(0.0, 1.0, 100))
    assert s.chi_bar == pytest.approx(0.0, abs=1e-14) and s.alpha == pytest.approx(0.0, abs=1e-14)
    for c in (1.0, 20.0):
        z = averaged_amplitude(MeasurementProtocol.parallel(c, math.pi / 2, 500))
        assert z.real > 0 and abs(z.imag) < 1e-12 * abs(z)


def test_strong_limit_visibility_grows():
    alphas = [averaged_phase_exact(MeasurementProtocol.parallel(c, math.pi / 4, 4000)).alpha for c in (10, 20, 40, 80)]
    assert all(b < a for a, b in zip(alphas, alphas[1:]))


def test_visibility_zero_raises():
    with pytest.raises(VisibilityZeroError):
        averaged_phase_exact(dead_protocol())
    with pytest.raises(VisibilityZeroError):
        averaged_phase_mc(dead_protocol(), 100)


# -- Monte Carlo ----------------------------------------------------------------------------

def test_mc_zero_strength_exact():
    s = averaged_phase_mc(MeasurementProtocol.parallel(0.0, 1.0, 50), 300)
    assert s.chi_bar == pytest.approx(0.0, abs=1e-14)
    assert s.alpha == pytest.approx(0.0, abs=1e-14)
    assert s.accept_rate == 1.0


def test_mc_agrees_with_exact():
    p = MeasurementProtocol.parallel(1.0, math.pi / 4, 500)
    exact = averaged_phase_exact(p).mean_z
    for estimator in ("overlap", "accepted"):
        mc = averaged_phase_mc(p, 4000, seed=0, estimator=estimator)
        assert abs(mc.mean_z - exact) < 3 * mc.stderr
        assert math.exp(-mc.alpha) <= 1 + 3 * mc.stderr


def test_mc_strong_limit():
    s = averaged_phase_mc(MeasurementProtocol.parallel(20.0, math.pi / 4, 500), 4000, seed=1)
    target = math.pi * (math.cos(math.pi / 4) - 1)
    assert abs(s.chi_bar - target) < 0.02
    assert s.alpha < 0.3


def test_mc_is_thread_independent():
    p = MeasurementProtocol.parallel(0.8, 1.0, 200)
    a = averaged_phase_mc(p, 5000, seed=42, threads=1, bins=32)
    b = averaged_phase_mc(p, 5000, seed=42, threads=4, bins=32)
    assert a == b
    np.testing.assert_array_equal(a.counts, b.counts)


def test_mc_rejects_bad_arguments():
    p = MeasurementProtocol.parallel(0.8, 1.0, 20)
    with pytest.raises(ValueError):
        averaged_phase_mc(p, 10, estimator="nope")
    with pytest.raises(ValueError):
        averaged_phase_mc(p, 10, bins=4)
    with pytest.raises(ValueError):
        simulate_ensemble(p, 0)


# -- histograms --------------------------------------------------------------------------------

def test_histogram_mass_is_accepted_count():
    p = MeasurementProtocol.parallel(1.0, math.pi / 4, 200)
    h = phase_histogram(p, 3000, bins=32, seed=2)
    assert h.counts.sum() == round(h.accept_rate * 3000)
    assert len(h.bin_centers) == 32


def test_histogram_zero_strength_single_bin():
    h = phase_histogram(MeasurementProtocol.parallel(0.0, math.pi / 4, 100), 500, bins=64)
    assert np.count_nonzero(h.counts) == 1
    k = int(np.argmax(h.counts))
    assert h.bin_edges[k] <= 0.0 < h.bin_edges[k + 1]


def test_histogram_strong_limit_single_dominant_bin():
    p = MeasurementProtocol.parallel(20.0, math.pi / 4, 500)
    h = phase_histogram(p, 4000, bins=64, seed=0)
    k = int(np.argmax(h.counts))
    assert h.counts[k] > 0.9 * h.counts.sum()
    target = math.pi * (math.cos(math.pi / 4) - 1)
    assert h.bin_edges[k] <= target < h.bin_edges[k + 1]


def test_histogram_mode_is_all_plus_bin():
    for c in (0.5, 1.0, 3.0):
        p = MeasurementProtocol.parallel(c, math.pi / 4, 500)
        h = phase_histogram(p, 4000, bins=64, seed=0)
        k = int(np.argmax(h.counts))
        assert h.bin_edges[k] <= all_plus(p).phase < h.bin_edges[k + 1]



def minus_closed_protocol(n, eta, theta=1.0):
    """Parallel steps closed by a projective ``-`` readout along the antipode."""
    start = Direction(theta, 0.0)
    dirs = tuple(Direction(theta, 2 * math.pi * k / n) for k in range(1, n)) + (start.antipode(),)
    return MeasurementProtocol(dirs, (eta,) * (n - 1) + (1.0,), start, final_postselect=MINUS)


def test_minus_postselection_closes_with_minus_operator():
    small = minus_closed_protocol(6, 0.3)
    brute = sum(o.amplitude.amplitude ** 2 for o in enumerate_all(small) if o.readouts[-1] == MINUS)
    assert abs(brute - averaged_amplitude(small)) < 1e-12

    p = minus_closed_protocol(30, 0.1)
    exact = averaged_amplitude(p)
    assert abs(exact) > 0.1
    mc = averaged_phase_mc(p, 4000, seed=3)
    assert abs(mc.mean_z - exact) < 4 * mc.stderr
    rec = sample_trajectory(p, realization_stream(3, 0))
    _, z, *_ = simulate_ensemble(p, 1, seed=3)
    assert z[0] == pytest.approx(rec.z, abs=1e-12)
