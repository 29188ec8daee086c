"""Geometric phases of measurement sequences.

Three independent routes to the phase of a closed loop are provided: the
Pancharatnam product over a list of states, the stepwise Kraus product of
a :class:`MeasurementProtocol`, and the quasicontinuous closed form for the
all-``+`` readout sequence along a parallel.  :func:`solid_angle` gives the
purely geometric oracle ``phase = -solid_angle / 2``.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np

from .errors import GeodesicUndefinedError, ImpossibleReadoutError, UndefinedPhaseError
from .qubit_core import (
    ANTIPODAL_TOL,
    MINUS,
    PLUS,
    TWO_PI,
    BlochPoint,
    Direction,
    QubitState,
    great_circle_angle,
    kraus_batch,
    measure,
    readout_sign,
)

PHASE_TOL = 1e-12
SERIES_RADIUS = 1e-4


def principal_phase(z: complex) -> float:
    """``arg z`` on the branch ``(-pi, pi]`` (``-0.0`` imaginary parts included)."""
    ph = cmath.phase(z)
    return ph + TWO_PI if ph <= -math.pi else ph


@dataclass(frozen=True)
class PhaseAmplitude:
    """Complex amplitude ``sqrt(P) exp(i chi)`` of a closed measurement loop.

    ``log_amplitude``, when present, is the complex logarithm of the
    amplitude; it keeps the phase and magnitude of amplitudes too small
    for a float.
    """

    amplitude: complex
    log_amplitude: complex | None = None

    @property
    def probability(self) -> float:
        return abs(self.amplitude) ** 2

    @property
    def log_probability(self) -> float:
        if self.log_amplitude is not None:
            return 2.0 * self.log_amplitude.real
        return math.log(self.probability) if self.probability > 0 else -math.inf

    @property
    def phase(self) -> float:
        if self.log_amplitude is not None:
            return principal_phase(cmath.exp(1j * self.log_amplitude.imag))
        return principal_phase(self.amplitude)

    @property
    def phase_defined(self) -> bool:
        return self.probability >= PHASE_TOL


@dataclass(frozen=True)
class ParallelSweep:
    """Quasicontinuous parallel protocol parameters."""

    c: float
    theta: float

    def __post_init__(self):
        if self.c < 0:
            raise ValueError(f"c must be non-negative, got {self.c}")
        if not 0.0 <= self.theta <= math.pi:
            raise ValueError(f"theta must lie in [0, pi], got {self.theta}")

    @property
    def eta_eff(self) -> float:
        return -math.expm1(-4.0 * self.c)


@dataclass(frozen=True)
class MeasurementProtocol:
    """Sequence of ``N`` measurements applied to the initial state.

    ``orientations[k-1]`` and ``strengths[k-1]`` describe step ``k``.  With
    ``final_postselect`` set, the last step must be projective and its
    readout is fixed.  Use :meth:`parallel` for the standard protocol along
    a circle of latitude.
    """

    orientations: tuple[Direction, ...]
    strengths: tuple[float, ...]
    initial: Direction
    final_postselect: int | None = PLUS
    sweep: ParallelSweep | None = field(default=None, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "orientations", tuple(self.orientations))
        object.__setattr__(self, "strengths", tuple(float(e) for e in self.strengths))
        if len(self.orientations) != len(self.strengths):
            raise ValueError("orientations and strengths must have equal length")
        if len(self.orientations) < 1:
            raise ValueError("a protocol needs at least one measurement")
        if any(not 0.0 <= e <= 1.0 for e in self.strengths):
            raise ValueError("strengths must lie in [0, 1]")
        if self.final_postselect is not None:
            object.__setattr__(self, "final_postselect", readout_sign(self.final_postselect))
            if self.strengths[-1] != 1.0:
                raise ValueError("a postselected final measurement must be projective")

    @classmethod
    def parallel(cls, c: float, theta: float, n_steps: int = 500) -> "MeasurementProtocol":
        """``N-1`` weak steps of strength ``4c/N`` along latitude ``theta``,
        at azimuths ``2 pi k / N``, closed by a projective step at ``k = N``."""
        sweep = ParallelSweep(float(c), float(theta))
        if n_steps < 2:
            raise ValueError("N must be at least 2")
        eta = 4.0 * c / n_steps
        if eta > 1.0:
            raise ValueError(f"4c/N = {eta} exceeds 1; increase N")
        dirs = [Direction(theta, TWO_PI * k / n_steps) for k in range(1, n_steps + 1)]
        strengths = [eta] * (n_steps - 1) + [1.0]
        return cls(tuple(dirs), tuple(strengths), Direction(theta, 0.0), PLUS, sweep)

    @property
    def n_steps(self) -> int:
        return len(self.strengths)

    @property
    def initial_state(self) -> QubitState:
        return QubitState.from_direction(self.initial)

    @cached_property
    def kraus_ops(self) -> np.ndarray:
        """Array ``(N, 2, 2, 2)``: step, readout index (0 = ``+``), matrix."""
        th = np.array([d.theta for d in self.orientations])
        ph = np.array([d.phi for d in self.orientations])
        eta = np.array(self.strengths)
        return np.stack([kraus_batch(th, ph, eta, PLUS), kraus_batch(th, ph, eta, MINUS)], axis=1)

    @cached_property
    def kraus_table(self) -> list[tuple[tuple, tuple]]:
        """Kraus entries as Python complex tuples, for scalar loops."""
        ops = self.kraus_ops
        return [
            (tuple(ops[k, 0].ravel().tolist()), tuple(ops[k, 1].ravel().tolist()))
            for k in range(self.n_steps)
        ]

    def full_readouts(self, readouts: Sequence) -> tuple[int, ...]:
        r = tuple(readout_sign(x) for x in readouts)
        if self.final_postselect is not None and len(r) == self.n_steps - 1:
            r = r + (self.final_postselect,)
        if len(r) != self.n_steps:
            raise ValueError(f"expected {self.n_steps} readouts, got {len(r)}")
        if self.final_postselect is not None and r[-1] != self.final_postselect:
            raise ValueError("final readout contradicts the postselection")
        return r


def pancharatnam_phase(states: Sequence[QubitState], closed: bool = True) -> PhaseAmplitude:
    """Bargmann product ``<psi_0|psi_last> ... <psi_2|psi_1><psi_1|psi_0>``.

    Each state is reduced to a unit vector first, so the result is the
    amplitude of the corresponding chain of projective measurements and its
    phase is gauge invariant.
    """
    if len(states) < 2:
        raise ValueError("need at least two states")
    rays = [s.ray() for s in states]
    pairs = list(zip(rays[:-1], rays[1:]))
    if closed:
        pairs.append((rays[-1], rays[0]))
    amp = 1.0 + 0j
    for prev, nxt in pairs:
        ov = complex(np.vdot(nxt, prev))
        if abs(ov) < PHASE_TOL:
            raise UndefinedPhaseError("orthogonal consecutive states")
        amp *= ov
    return PhaseAmplitude(amp)


def _run(protocol: MeasurementProtocol, readouts: Sequence[int]) -> QubitState:
    state = protocol.initial_state
    for ops, r in zip(protocol.kraus_table, readouts):
        m = ops[0] if r == PLUS else ops[1]
        state, _ = measure(state, ((m[0], m[1]), (m[2], m[3])))
    return state


def sequence_amplitude(protocol: MeasurementProtocol, readouts: Sequence) -> PhaseAmplitude:
    """``<psi_0| M_N ... M_1 |psi_0>`` for one readout sequence.

    ``readouts`` has length ``N``, or ``N - 1`` when the final readout is
    postselected.  The product is accumulated in log form, so long
    sequences do not underflow.
    """
    r = protocol.full_readouts(readouts)
    try:
        final = _run(protocol, r)
    except ImpossibleReadoutError as exc:
        raise UndefinedPhaseError(f"readout sequence has zero amplitude: {exc}") from exc
    psi0 = protocol.initial_state
    ov = np.vdot(psi0.amplitudes, final.amplitudes)
    if ov == 0:
        return PhaseAmplitude(0j)
    log_amp = final.log_weight + cmath.log(ov)
    return PhaseAmplitude(complex(cmath.exp(log_amp)), complex(log_amp))


def all_plus(protocol: MeasurementProtocol) -> PhaseAmplitude:
    return sequence_amplitude(protocol, [PLUS] * protocol.n_steps)


def _cosh_sinhc(tau2: complex) -> tuple[complex, complex]:
    """``cosh(tau)`` and ``sinh(tau)/tau`` as functions of ``tau**2``."""
    c_sum, s_sum, term = 0j, 0j, 1 + 0j
    for k in range(6):
        c_sum += term
        term_s = term / (2 * k + 1)
        s_sum += term_s
        term = term * tau2 / ((2 * k + 1) * (2 * k + 2))
    return c_sum, s_sum


def closed_form_amplitude(c: float, theta: float) -> complex:
    """``-exp(-c) (cosh tau + z sinh(tau)/tau)``, ``z = c + i pi cos theta``,
    ``tau = sqrt(z^2 - pi^2 sin^2 theta)``."""
    z = complex(c, math.pi * math.cos(theta))
    tau2 = z * z - (math.pi * math.sin(theta)) ** 2
    tau = cmath.sqrt(tau2)
    if abs(tau) < SERIES_RADIUS:
        ch, shc = _cosh_sinhc(tau2)
        return -math.exp(-c) * (ch + z * shc)
    # exp(+-tau - c) form stays finite for large c
    r = z / tau
    return -0.5 * (cmath.exp(tau - c) * (1 + r) + cmath.exp(-tau - c) * (1 - r))


def postselected_closed_form(c: float, theta: float) -> PhaseAmplitude:
    """Quasicontinuous (``N -> inf``) amplitude of the all-``+`` sequence."""
    if c < 0:
        raise ValueError("c must be non-negative")
    if not 0.0 <= theta <= math.pi:
        raise ValueError("theta must lie in [0, pi]")
    return PhaseAmplitude(closed_form_amplitude(c, theta))


def equator_condition(c: float) -> float:
    """Real function whose root is the postselected critical strength.

    Equals ``cosh(tau) + c sinh(tau)/tau`` with ``tau**2 = c**2 - pi**2``;
    the equator amplitude is ``-exp(-c)`` times this value.
    """
    tau2 = c * c - math.pi ** 2
    if abs(tau2) < SERIES_RADIUS ** 2:
        ch, shc = _cosh_sinhc(complex(tau2))
        return (ch + c * shc).real
    if tau2 > 0:
        t = math.sqrt(tau2)
        return math.cosh(t) + c * math.sinh(t) / t
    s = math.sqrt(-tau2)
    return math.cos(s) + c * math.sin(s) / s


# Reference-point candidates for the solid-angle fan; +z first.
def _fibonacci_directions(n: int = 64) -> np.ndarray:
    k = np.arange(n) + 0.5
    z = 1 - 2 * k / n
    phi = math.pi * (3 - math.sqrt(5)) * k
    rho = np.sqrt(1 - z * z)
    return np.stack([rho * np.cos(phi), rho * np.sin(phi), z], axis=1)


_REFERENCE_CANDIDATES = np.vstack([[0.0, 0.0, 1.0], _fibonacci_directions()])


def _triangle_solid_angle(a, b, c) -> float:
    num = float(np.dot(a, np.cross(b, c)))
    den = 1.0 + float(np.dot(a, b) + np.dot(b, c) + np.dot(c, a))
    return 2.0 * math.atan2(num, den)


def solid_angle(polygon: Sequence[BlochPoint]) -> float:
    """Oriented solid angle of the closed geodesic polygon, in ``(-2pi, 2pi]``.

    Counter-clockwise loops (seen from outside) are positive.  The polygon
    is fanned into signed triangles from a reference point chosen away from
    every edge's great circle; the sum is reduced modulo ``4 pi``, which is
    all a closed loop determines.
    """
    if len(polygon) < 2:
        raise ValueError("need at least two vertices")
    verts = np.array([p.vector for p in polygon])
    nxt = np.roll(verts, -1, axis=0)
    normals = np.cross(verts, nxt)
    lengths = np.linalg.norm(normals, axis=1)
    for v, w in zip(verts, nxt):
        if great_circle_angle(v, w) > math.pi - ANTIPODAL_TOL:
            raise GeodesicUndefinedError("antipodal neighbouring vertices")
    live = lengths > 1e-15
    if not np.any(live):
        return 0.0
    unit = normals[live] / lengths[live, None]
    score = np.min(np.abs(_REFERENCE_CANDIDATES @ unit.T), axis=1)
    ref = _REFERENCE_CANDIDATES[int(np.argmax(score))]
    total = sum(_triangle_solid_angle(ref, v, w) for v, w in zip(verts, nxt))
    total = math.fmod(total, 2 * TWO_PI)
    if total <= -TWO_PI:
        total += 2 * TWO_PI
    elif total > TWO_PI:
        total -= 2 * TWO_PI
    return total


def delta_rotation(theta: float, n_steps: int) -> np.ndarray:
    """Step rotation ``R(n_{k+1}) R^{-1}(n_k)`` of the parallel protocol."""
    e = cmath.exp(-TWO_PI * 1j / n_steps)
    c2, s2 = math.cos(theta / 2) ** 2, math.sin(theta / 2) ** 2
    off = 0.5 * (1 - e) * math.sin(theta)
    return np.array([[c2 + e * s2, off], [off, s2 + e * c2]], dtype=complex)
