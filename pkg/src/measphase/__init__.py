"""Geometric phases induced by sequences of null-type weak measurements on a qubit."""

__version__ = "0.1.0"

from .errors import (
    EnumerationTooLargeError,
    GeodesicUndefinedError,
    GridTooCoarseError,
    ImpossibleReadoutError,
    MeasPhaseError,
    NoCriticalPointError,
    PhaseUndefinedAtError,
    SearchError,
    UndefinedPhaseError,
    VisibilityZeroError,
)
from .qubit_core import (
    MINUS,
    PLUS,
    BlochPoint,
    Direction,
    QubitState,
    apply_measurement,
    bloch_coords,
    geodesic_interpolate,
    kraus,
    kraus_axis,
    measure,
    rotation_matrix,
    state_from_bloch,
)
from .phase_engine import (
    MeasurementProtocol,
    ParallelSweep,
    PhaseAmplitude,
    all_plus,
    closed_form_amplitude,
    equator_condition,
    pancharatnam_phase,
    postselected_closed_form,
    sequence_amplitude,
    solid_angle,
)
from .trajectory_sim import (
    EnsembleSummary,
    TrajectoryRecord,
    acceptance_probability,
    averaged_amplitude,
    averaged_phase_exact,
    averaged_phase_mc,
    enumerate_all,
    phase_histogram,
    sample_trajectory,
    simulate_ensemble,
)
from .topology import (
    ChernResult,
    averaged_critical_point,
    chern_number,
    chern_via_curvature,
    critical_strength,
    unfold_phase,
    winding_number_averaged,
)
from .interferometer import (
    DetectorCoupling,
    IntensityPair,
    averaged_intensities,
    entangling_unitary,
    kraus_from_model,
    lower_arm_amplitude,
    polarizer_intensities,
    postselected_intensities,
    upper_arm_amplitude,
)

__all__ = [
    "__version__",
    "acceptance_probability",
    "all_plus",
    "apply_measurement",
    "averaged_amplitude",
    "averaged_critical_point",
    "averaged_intensities",
    "averaged_phase_exact",
    "averaged_phase_mc",
    "bloch_coords",
    "BlochPoint",
    "chern_number",
    "chern_via_curvature",
    "ChernResult",
    "closed_form_amplitude",
    "critical_strength",
    "DetectorCoupling",
    "Direction",
    "EnsembleSummary",
    "entangling_unitary",
    "enumerate_all",
    "EnumerationTooLargeError",
    "equator_condition",
    "geodesic_interpolate",
    "GeodesicUndefinedError",
    "GridTooCoarseError",
    "ImpossibleReadoutError",
    "IntensityPair",
    "kraus",
    "kraus_axis",
    "kraus_from_model",
    "lower_arm_amplitude",
    "MeasPhaseError",
    "measure",
    "MeasurementProtocol",
    "MINUS",
    "NoCriticalPointError",
    "pancharatnam_phase",
    "ParallelSweep",
    "phase_histogram",
    "PhaseAmplitude",
    "PhaseUndefinedAtError",
    "PLUS",
    "polarizer_intensities",
    "postselected_closed_form",
    "postselected_intensities",
    "QubitState",
    "rotation_matrix",
    "sample_trajectory",
    "SearchError",
    "sequence_amplitude",
    "simulate_ensemble",
    "solid_angle",
    "state_from_bloch",
    "TrajectoryRecord",
    "UndefinedPhaseError",
    "unfold_phase",
    "upper_arm_amplitude",
    "VisibilityZeroError",
    "winding_number_averaged",
]
