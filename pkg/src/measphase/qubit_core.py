"""Qubit states, Bloch-sphere geometry and the null-type Kraus operators.

A measurement along direction ``n`` with strength ``eta`` has two readouts.
The ``+`` readout leaves ``|+n>`` untouched and damps ``|-n>`` by
``sqrt(1 - eta)``; the ``-`` readout projects onto ``|-n>`` with amplitude
``sqrt(eta)``.  Operators are plain ``(2, 2)`` complex numpy arrays.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import GeodesicUndefinedError, ImpossibleReadoutError

PLUS = 1
MINUS = -1

TWO_PI = 2.0 * math.pi
POLE_TOL = 1e-14
MIN_PROBABILITY = 1e-300
ANTIPODAL_TOL = 1e-9


def readout_sign(r) -> int:
    """Normalise a readout given as ``+1/-1``, ``'+'/'-'`` or a bool."""
    if r is True or (r is not False and r in (PLUS, "+")):
        return PLUS
    if r is False or r in (MINUS, "-"):
        return MINUS
    raise ValueError(f"readout must be +1/-1 or '+'/'-', got {r!r}")


@dataclass(frozen=True)
class Direction:
    """Measurement axis ``n = (sin t cos p, sin t sin p, cos t)``."""

    theta: float
    phi: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "theta", min(max(float(self.theta), 0.0), math.pi))
        object.__setattr__(self, "phi", _wrap_2pi(float(self.phi)))

    @property
    def vector(self) -> np.ndarray:
        st = math.sin(self.theta)
        return np.array([st * math.cos(self.phi), st * math.sin(self.phi), math.cos(self.theta)])

    def antipode(self) -> "Direction":
        return Direction(math.pi - self.theta, self.phi + math.pi)


@dataclass(frozen=True)
class BlochPoint:
    """Point on the Bloch sphere (polar ``theta``, azimuth ``phi``)."""

    theta: float
    phi: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "theta", min(max(float(self.theta), 0.0), math.pi))
        object.__setattr__(self, "phi", _wrap_2pi(float(self.phi)))

    @property
    def vector(self) -> np.ndarray:
        st = math.sin(self.theta)
        return np.array([st * math.cos(self.phi), st * math.sin(self.phi), math.cos(self.theta)])

    @classmethod
    def from_vector(cls, v) -> "BlochPoint":
        x, y, z = (float(t) for t in v)
        rho = math.hypot(x, y)
        theta = math.atan2(rho, z)
        phi = 0.0 if rho < POLE_TOL else math.atan2(y, x)
        return cls(theta, phi)


@dataclass(frozen=True)
class QubitState:
    """Pure qubit state with an accumulated complex log-weight.

    The exact (possibly unnormalised) vector is
    ``exp(log_weight) * (amp_up, amp_down)``.  States produced by
    :meth:`from_vector` and :func:`apply_measurement` are normalised with a
    real, non-negative ``amp_up``; the removed phase lives in ``log_weight``.
    """

    amp_up: complex
    amp_down: complex
    log_weight: complex = 0j

    @classmethod
    def from_vector(cls, vec, log_weight: complex = 0j) -> "QubitState":
        up, down = complex(vec[0]), complex(vec[1])
        norm = math.hypot(abs(up), abs(down))
        if norm < MIN_PROBABILITY:
            raise ImpossibleReadoutError("cannot normalise a null vector")
        ref = up if abs(up) > 0.0 else down
        gauge = cmath.phase(ref)
        rot = cmath.exp(-1j * gauge) / norm
        up, down = up * rot, down * rot
        if abs(up) > 0.0:
            up = complex(up.real, 0.0)
        else:
            down = complex(down.real, 0.0)
        return cls(up, down, complex(log_weight) + complex(math.log(norm), gauge))

    @classmethod
    def from_direction(cls, n: Direction | BlochPoint) -> "QubitState":
        """The ``+1`` eigenstate ``cos(t/2)|up> + e^{ip} sin(t/2)|down>``."""
        return cls(
            complex(math.cos(n.theta / 2)),
            cmath.exp(1j * n.phi) * math.sin(n.theta / 2),
        )

    @property
    def amplitudes(self) -> np.ndarray:
        return np.array([self.amp_up, self.amp_down], dtype=complex)

    @property
    def vector(self) -> np.ndarray:
        """The exact unnormalised vector, ``exp(log_weight) * amplitudes``."""
        return cmath.exp(self.log_weight) * self.amplitudes

    @property
    def norm_squared(self) -> float:
        return abs(self.amp_up) ** 2 + abs(self.amp_down) ** 2

    def normalized(self) -> "QubitState":
        return QubitState.from_vector(self.amplitudes, self.log_weight)

    def ray(self) -> np.ndarray:
        """Unit vector carrying the full phase of the exact state."""
        v = self.amplitudes / math.sqrt(self.norm_squared)
        return v * cmath.exp(1j * self.log_weight.imag)


def _wrap_2pi(x: float) -> float:
    x = math.fmod(x, TWO_PI)
    if x < 0.0:
        x += TWO_PI
    return 0.0 if x >= TWO_PI else x


def rotation_matrix(n: Direction) -> np.ndarray:
    """``R(n)`` with ``R^{-1}(n)|up/down> = |+n/-n>``."""
    c, s = math.cos(n.theta / 2), math.sin(n.theta / 2)
    e = cmath.exp(-1j * n.phi)
    return np.array([[c, e * s], [s, -e * c]], dtype=complex)


def kraus_axis(eta: float, r) -> np.ndarray:
    """Kraus operator for a measurement along ``e_z``."""
    eta = float(eta)
    if not 0.0 <= eta <= 1.0:
        raise ValueError(f"measurement strength must lie in [0, 1], got {eta}")
    if readout_sign(r) == PLUS:
        return np.diag([1.0, math.sqrt(1.0 - eta)]).astype(complex)
    return np.diag([0.0, math.sqrt(eta)]).astype(complex)


def kraus(n: Direction, eta: float, r) -> np.ndarray:
    """Kraus operator ``R^{-1}(n) M(e_z, r) R(n)``."""
    rot = rotation_matrix(n)
    return rot.conj().T @ kraus_axis(eta, r) @ rot


def kraus_batch(theta, phi, eta, r) -> np.ndarray:
    """Vectorised :func:`kraus` over broadcastable angle/strength arrays.

    Returns an array of shape ``broadcast_shape + (2, 2)``.
    """
    theta, phi, eta = np.broadcast_arrays(
        np.asarray(theta, float), np.asarray(phi, float), np.asarray(eta, float)
    )
    if np.any((eta < 0.0) | (eta > 1.0)):
        raise ValueError("measurement strength must lie in [0, 1]")
    c, s = np.cos(theta / 2), np.sin(theta / 2)
    e = np.exp(-1j * phi)
    rot = np.empty(theta.shape + (2, 2), dtype=complex)
    rot[..., 0, 0], rot[..., 0, 1] = c, e * s
    rot[..., 1, 0], rot[..., 1, 1] = s, -e * c
    diag = np.zeros(theta.shape + (2, 2), dtype=complex)
    if readout_sign(r) == PLUS:
        diag[..., 0, 0] = 1.0
        diag[..., 1, 1] = np.sqrt(1.0 - eta)
    else:
        diag[..., 1, 1] = np.sqrt(eta)
    return np.conj(np.swapaxes(rot, -1, -2)) @ diag @ rot


def measure(state: QubitState, op: np.ndarray) -> tuple[QubitState, float]:
    """Apply a Kraus operator; return the renormalised state and its probability."""
    (m00, m01), (m10, m11) = op.tolist() if isinstance(op, np.ndarray) else op
    norm2 = state.norm_squared
    up = (m00 * state.amp_up + m01 * state.amp_down)
    down = (m10 * state.amp_up + m11 * state.amp_down)
    prob = (abs(up) ** 2 + abs(down) ** 2) / norm2
    if prob < MIN_PROBABILITY:
        raise ImpossibleReadoutError(f"readout probability {prob:.3g} is zero")
    return QubitState.from_vector((up, down), state.log_weight), prob


def apply_measurement(state: QubitState, n: Direction, eta: float, r) -> tuple[QubitState, float]:
    """Measure ``state`` along ``n`` with strength ``eta`` and readout ``r``.

    Returns
    -------
    (QubitState, float)
        The normalised post-measurement state, whose ``log_weight`` keeps
        track of the discarded norm and phase, and the Born probability of
        ``r``.

    Raises
    ------
    ImpossibleReadoutError
        If the readout probability is below ``1e-300``.
    """
    return measure(state, kraus(n, eta, r))


def bloch_coords(state: QubitState) -> BlochPoint:
    """Bloch-sphere coordinates of a state; the azimuth is 0 at the poles."""
    up, down = abs(state.amp_up), abs(state.amp_down)
    theta = 2.0 * math.atan2(down, up)
    if up < POLE_TOL or down < POLE_TOL:
        return BlochPoint(theta, 0.0)
    return BlochPoint(theta, cmath.phase(state.amp_down) - cmath.phase(state.amp_up))


def state_from_bloch(p: BlochPoint) -> QubitState:
    return QubitState.from_direction(p)


def great_circle_angle(a: np.ndarray, b: np.ndarray) -> float:
    return math.atan2(float(np.linalg.norm(np.cross(a, b))), float(np.dot(a, b)))


def geodesic_interpolate(a: BlochPoint, b: BlochPoint, s: float) -> BlochPoint:
    """Point a fraction ``s`` of the way along the shortest arc from a to b."""
    va, vb = a.vector, b.vector
    omega = great_circle_angle(va, vb)
    if omega > math.pi - ANTIPODAL_TOL:
        raise GeodesicUndefinedError(f"antipodal points {a} and {b}")
    if omega < 1e-15:
        return a
    if s == 0.0:
        return a
    if s == 1.0:
        return b
    w = math.sin(omega)
    v = (math.sin((1.0 - s) * omega) * va + math.sin(s * omega) * vb) / w
    return BlochPoint.from_vector(v)


def slerp_vectors(va: np.ndarray, vb: np.ndarray, s: np.ndarray) -> np.ndarray:
    """Batched shortest-arc interpolation between unit vectors.

    ``va`` and ``vb`` have shape ``(..., 3)``; ``s`` has shape ``(m,)``.
    Returns shape ``(..., m, 3)``.
    """
    dot = np.clip(np.sum(va * vb, axis=-1), -1.0, 1.0)
    cross = np.linalg.norm(np.cross(va, vb), axis=-1)
    omega = np.arctan2(cross, dot)
    if np.any(omega > math.pi - ANTIPODAL_TOL):
        raise GeodesicUndefinedError("antipodal endpoints in geodesic closure")
    om = omega[..., None]
    s = np.asarray(s, float)
    small = om < 1e-12
    w = np.where(small, 1.0, np.sin(om))
    ca = np.where(small, 1.0 - s, np.sin((1.0 - s) * om) / w)
    cb = np.where(small, s, np.sin(s * om) / w)
    out = ca[..., None] * va[..., None, :] + cb[..., None] * vb[..., None, :]
    return out / np.linalg.norm(out, axis=-1, keepdims=True)


def states_from_vectors(v: np.ndarray) -> np.ndarray:
    """Bloch unit vectors ``(..., 3)`` to state amplitudes ``(..., 2)``."""
    theta = np.arctan2(np.hypot(v[..., 0], v[..., 1]), v[..., 2])
    phi = np.arctan2(v[..., 1], v[..., 0])
    out = np.empty(v.shape[:-1] + (2,), dtype=complex)
    out[..., 0] = np.cos(theta / 2)
    out[..., 1] = np.exp(1j * phi) * np.sin(theta / 2)
    return out


def bloch_vectors(psi: np.ndarray) -> np.ndarray:
    """State amplitudes ``(..., 2)`` (normalised) to Bloch vectors ``(..., 3)``."""
    a, b = psi[..., 0], psi[..., 1]
    ab = np.conj(a) * b
    return np.stack([2 * ab.real, 2 * ab.imag, np.abs(a) ** 2 - np.abs(b) ** 2], axis=-1)


def overlaps(bra: Sequence[complex] | np.ndarray, ket: np.ndarray) -> np.ndarray:
    """Batched ``<bra|ket>`` over the last axis."""
    return np.sum(np.conj(bra) * ket, axis=-1)
