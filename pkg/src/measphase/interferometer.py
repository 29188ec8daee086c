"""Detector model and drain intensities of the proposed interferometers.

Ordering convention for two-qubit operators: system (x) detector, with
detector basis ``|+>`` (index 0) and ``|->`` (index 1).
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .phase_engine import MeasurementProtocol, closed_form_amplitude
from .qubit_core import PLUS, Direction, kraus_axis, readout_sign, rotation_matrix
from .trajectory_sim import acceptance_probability, averaged_phase_exact

SIGMA_X = np.array([[0, 1], [1, 0]], dtype=complex)


@dataclass(frozen=True)
class DetectorCoupling:
    """System-detector coupling along ``n`` with integrated strength ``g``.

    ``g`` is restricted to ``[0, pi/2]``, the range on which ``eta = sin^2 g``
    is one-to-one and the model reproduces the null-type Kraus operators.
    """

    n: Direction
    g: float

    def __post_init__(self):
        if not 0.0 <= self.g <= 0.5 * math.pi:
            raise ValueError(f"g must lie in [0, pi/2], got {self.g}")

    @property
    def eta(self) -> float:
        return math.sin(self.g) ** 2


def _projectors(n: Direction) -> tuple[np.ndarray, np.ndarray]:
    rot = rotation_matrix(n)
    inv = rot.conj().T
    up = inv[:, [0]]
    down = inv[:, [1]]
    return up @ up.conj().T, down @ down.conj().T


def entangling_unitary(coupling: DetectorCoupling) -> np.ndarray:
    """``exp(-i g (1 - sigma_n) (x) sigma_y / 2)`` in closed form.

    ``(1 - sigma_n)/2`` is the projector onto ``|-n>``, so the exponential
    is the identity on ``|+n>`` and a detector rotation by ``g`` on ``|-n>``.
    """
    p_plus, p_minus = _projectors(coupling.n)
    cg, sg = math.cos(coupling.g), math.sin(coupling.g)
    det_rot = np.array([[cg, -sg], [sg, cg]], dtype=complex)
    return np.kron(p_plus, np.eye(2)) + np.kron(p_minus, det_rot)


def kraus_from_model(coupling: DetectorCoupling) -> tuple[np.ndarray, np.ndarray]:
    """Detector blocks ``<+|U|+>`` and ``<-|U|+>`` of the entangling unitary."""
    u = entangling_unitary(coupling).reshape(2, 2, 2, 2)
    return u[:, 0, :, 0].copy(), u[:, 1, :, 0].copy()


@dataclass(frozen=True)
class IntensityPair:
    I1: float
    I2: float
    gamma: float
    I0: float

    @property
    def total(self) -> float:
        return self.I1 + self.I2


def postselected_intensities(c: float, theta: float, gamma: float, I0: float = 1.0) -> IntensityPair:
    """Mach-Zehnder drains with null-type detectors in one arm."""
    if I0 <= 0:
        raise ValueError("I0 must be positive")
    amp = closed_form_amplitude(c, theta)
    fringe = (amp * cmath.exp(1j * gamma)).real
    return IntensityPair(0.5 * I0 * (1 + fringe), 0.5 * I0 * (1 - fringe), gamma, I0)


def polarizer_intensities(c: float, theta: float, gamma: float, I0: float = 1.0) -> IntensityPair:
    """Drains with imperfect polarizers in one arm; absorption loses ``I0 (1-P)/2``."""
    if I0 <= 0:
        raise ValueError("I0 must be positive")
    w = closed_form_amplitude(c, theta) * cmath.exp(1j * gamma)
    return IntensityPair(0.25 * I0 * abs(1 + w) ** 2, 0.25 * I0 * abs(1 - w) ** 2, gamma, I0)


def flip_operator(n0: Direction) -> np.ndarray:
    """``R^{-1}(n0) sigma_x R(n0)``: swaps ``|+n0>`` and ``|-n0>``."""
    rot = rotation_matrix(n0)
    return rot.conj().T @ SIGMA_X @ rot


def _flipped_kraus(n: Direction, eta: float, r) -> np.ndarray:
    rot = rotation_matrix(n)
    return rot.conj().T @ SIGMA_X @ kraus_axis(eta, r) @ SIGMA_X @ rot


def upper_arm_amplitude(protocol: MeasurementProtocol, readouts: Sequence) -> complex:
    """``<psi0| M_{N-1} ... M_1 |psi0>`` for the ``N - 1`` weak readouts."""
    psi0 = protocol.initial_state.amplitudes
    v = psi0.copy()
    for n, eta, r in zip(protocol.orientations[:-1], protocol.strengths[:-1], readouts):
        rot = rotation_matrix(n)
        v = rot.conj().T @ kraus_axis(eta, r) @ rot @ v
    return complex(np.vdot(psi0, v))


def lower_arm_amplitude(protocol: MeasurementProtocol, readouts: Sequence) -> complex:
    """Lower-arm amplitude: flip, measure along ``-n_k``, flip back."""
    if len(readouts) != protocol.n_steps - 1:
        raise ValueError("expected one readout per weak step")
    psi0 = protocol.initial_state.amplitudes
    flip = flip_operator(protocol.initial)
    v = flip @ psi0
    for n, eta, r in zip(protocol.orientations[:-1], protocol.strengths[:-1], readouts):
        v = _flipped_kraus(n, eta, readout_sign(r)) @ v
    return complex(np.vdot(psi0, flip @ v))


def averaged_intensities(protocol: MeasurementProtocol, gamma: float, I0: float = 1.0) -> IntensityPair:
    """Drains of the two-arm detector scheme that interferes every readout sequence."""
    if I0 <= 0:
        raise ValueError("I0 must be positive")
    summary = averaged_phase_exact(protocol)
    incoherent = acceptance_probability(protocol)
    fringe = (summary.mean_z * cmath.exp(1j * gamma)).real
    return IntensityPair(0.5 * I0 * (incoherent + fringe), 0.5 * I0 * (incoherent - fringe), gamma, I0)


__all__ = [
    "PLUS",
    "DetectorCoupling",
    "IntensityPair",
    "averaged_intensities",
    "entangling_unitary",
    "flip_operator",
    "kraus_from_model",
    "lower_arm_amplitude",
    "polarizer_intensities",
    "postselected_intensities",
    "upper_arm_amplitude",
]
