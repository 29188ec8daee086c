"""Readout-sequence ensembles: sampling, enumeration and exact averaging.

The averaged phase is defined through

    exp(2i chi_bar - alpha) = sum over readouts of <psi_0|M_{N-1}...M_1|psi_0>**2

which is linear in ``M (x) M`` and therefore equals a product of 4x4
transfer matrices on the doubled space.  Monte Carlo estimates of the same
quantity use one counter-based random stream per realization, so results
do not depend on how realizations are scheduled across threads.
"""

from __future__ import annotations

import cmath
import itertools
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import EnumerationTooLargeError, VisibilityZeroError
from .phase_engine import MeasurementProtocol, PhaseAmplitude, delta_rotation, principal_phase
from .qubit_core import MINUS, MIN_PROBABILITY, PLUS, BlochPoint, bloch_coords, measure

MAX_ENUMERATION_STEPS = 16
CHUNK = 2048
BOOTSTRAP_RESAMPLES = 200


def realization_stream(master_seed: int, index: int) -> np.random.Generator:
    """Independent generator for realization ``index``.

    Philox is counter based: the master seed is the key and the realization
    index occupies the most significant counter word, so streams never
    overlap and can be created in any order.
    """
    bitgen = np.random.Philox(key=int(master_seed) & (2**64 - 1), counter=[0, 0, 0, int(index)])
    return np.random.Generator(bitgen)


@dataclass(frozen=True)
class TrajectoryRecord:
    readouts: tuple[int, ...]
    amplitude: PhaseAmplitude
    accepted: bool
    z: complex
    seed: int | None = None
    index: int | None = None
    states: tuple[BlochPoint, ...] | None = None

    @property
    def phase(self) -> float:
        return self.amplitude.phase


@dataclass(frozen=True)
class EnsembleSummary:
    """Averaged phase (mod pi), suppression exponent and optional histogram."""

    chi_bar: float
    alpha: float
    mean_z: complex
    n_realizations: int = 0
    accept_rate: float = float("nan")
    stderr: float = 0.0
    bin_edges: np.ndarray | None = field(default=None, compare=False)
    counts: np.ndarray | None = field(default=None, compare=False)

    @property
    def visibility(self) -> float:
        return math.exp(-self.alpha)

    @property
    def bin_centers(self) -> np.ndarray | None:
        if self.bin_edges is None:
            return None
        return 0.5 * (self.bin_edges[1:] + self.bin_edges[:-1])


@dataclass(frozen=True)
class SequenceOutcome:
    readouts: tuple[int, ...]
    amplitude: PhaseAmplitude
    probability: float


def _summary_from_mean(mean: complex, **kw) -> EnsembleSummary:
    mag = abs(mean)
    if mag < MIN_PROBABILITY:
        raise VisibilityZeroError("averaged amplitude vanishes; chi_bar undefined")
    return EnsembleSummary(0.5 * principal_phase(mean), -math.log(mag), complex(mean), **kw)


# -- single trajectories ----------------------------------------------------

def _closing_index(protocol: MeasurementProtocol) -> int:
    """Readout index (0 = ``+``) whose operator closes the loop."""
    return 1 if protocol.final_postselect == MINUS else 0


def _choose(p_plus: float, u: float, p_minus: float) -> bool:
    """True for readout ``+``.  Mirrors the vectorised rule in :func:`_simulate_batch`."""
    return u < p_plus or p_minus < MIN_PROBABILITY


def sample_trajectory(
    protocol: MeasurementProtocol,
    rng: np.random.Generator,
    keep_states: bool = False,
    seed: int | None = None,
    index: int | None = None,
) -> TrajectoryRecord:
    """Draw one readout sequence by sequential Born-rule sampling.

    ``N`` uniforms are consumed up front, one per step; readout ``+`` is
    chosen when ``u_k < p_k(+)``.
    """
    u = rng.random(protocol.n_steps)
    state = protocol.initial_state
    psi0 = state.amplitudes
    readouts: list[int] = []
    states = [bloch_coords(state)] if keep_states else None
    z = 0j
    last = protocol.n_steps - 1
    for k, (mp, mm) in enumerate(protocol.kraus_table):
        if k == last:
            # final-step overlap before sampling the closing readout
            ray = state.ray()
            z = complex(np.vdot(psi0, protocol.kraus_ops[k, _closing_index(protocol)] @ ray)) ** 2
        up, dn = state.amp_up, state.amp_down
        p_plus = abs(mp[0] * up + mp[1] * dn) ** 2 + abs(mp[2] * up + mp[3] * dn) ** 2
        p_minus = abs(mm[0] * up + mm[1] * dn) ** 2 + abs(mm[2] * up + mm[3] * dn) ** 2
        plus = _choose(p_plus / state.norm_squared, u[k], p_minus / state.norm_squared)
        m = mp if plus else mm
        state, _ = measure(state, ((m[0], m[1]), (m[2], m[3])))
        readouts.append(PLUS if plus else MINUS)
        if keep_states:
            states.append(bloch_coords(state))
    ov = np.vdot(psi0, state.amplitudes)
    amp = 0j if ov == 0 else complex(cmath.exp(state.log_weight + cmath.log(ov)))
    accepted = protocol.final_postselect is None or readouts[-1] == protocol.final_postselect
    return TrajectoryRecord(
        tuple(readouts),
        PhaseAmplitude(amp),
        accepted,
        z,
        seed,
        index,
        tuple(states) if keep_states else None,
    )


def _simulate_batch(protocol: MeasurementProtocol, uniforms: np.ndarray):
    """Vectorised sampling of many realizations.

    Returns ``(readouts, z, accepted, chi)`` where ``readouts`` is an
    ``int8`` array of shape ``(R, N)`` and ``chi`` is the phase of the
    realized closed loop (NaN when rejected).
    """
    n_real, n_steps = uniforms.shape
    psi0 = protocol.initial_state.amplitudes
    psi = np.tile(psi0, (n_real, 1))
    readouts = np.empty((n_real, n_steps), dtype=np.int8)
    ops = protocol.kraus_ops
    z = np.zeros(n_real, dtype=complex)
    for k in range(n_steps):
        mp, mm = ops[k, 0], ops[k, 1]
        if k == n_steps - 1:
            closing = psi @ (ops[k, _closing_index(protocol)].T @ np.conj(psi0))
            z = closing**2
        vp = psi @ mp.T
        vm = psi @ mm.T
        pp = np.sum(np.abs(vp) ** 2, axis=1)
        pm = np.sum(np.abs(vm) ** 2, axis=1)
        plus = (uniforms[:, k] < pp) | (pm < MIN_PROBABILITY)
        readouts[:, k] = np.where(plus, PLUS, MINUS)
        with np.errstate(divide="ignore", invalid="ignore"):
            psi = np.where(
                plus[:, None], vp / np.sqrt(pp)[:, None], vm / np.sqrt(pm)[:, None]
            )
    if protocol.final_postselect is None:
        accepted = np.ones(n_real, dtype=bool)
    else:
        accepted = readouts[:, -1] == protocol.final_postselect
    chi = np.where(accepted, np.angle(closing), np.nan)
    chi = np.where(chi <= -math.pi, chi + 2 * math.pi, chi)
    return readouts, z, accepted, chi


def _chunk_job(protocol: MeasurementProtocol, seed: int, start: int, stop: int):
    u = np.empty((stop - start, protocol.n_steps))
    for i in range(start, stop):
        u[i - start] = realization_stream(seed, i).random(protocol.n_steps)
    return _simulate_batch(protocol, u)


def simulate_ensemble(
    protocol: MeasurementProtocol, n_realizations: int, seed: int = 0, threads: int = 0
):
    """Run ``n_realizations`` trajectories; arrays are in realization order."""
    if n_realizations < 1:
        raise ValueError("need at least one realization")
    bounds = [(s, min(s + CHUNK, n_realizations)) for s in range(0, n_realizations, CHUNK)]
    workers = resolve_threads(threads)
    if workers == 1 or len(bounds) == 1:
        parts = [_chunk_job(protocol, seed, a, b) for a, b in bounds]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda ab: _chunk_job(protocol, seed, *ab), bounds))
    return tuple(np.concatenate(arrs) for arrs in zip(*parts))


def resolve_threads(threads: int = 0) -> int:
    if threads and threads > 0:
        return int(threads)
    env = os.environ.get("MEASPHASE_THREADS")
    if env:
        return max(1, int(env))
    return max(1, min(8, os.cpu_count() or 1))


# -- exhaustive enumeration -------------------------------------------------

def enumerate_all(protocol: MeasurementProtocol) -> list[SequenceOutcome]:
    """Every readout sequence (both final readouts) with its exact amplitude.

    ``probability`` is the Born probability of the whole sequence,
    ``|M_N...M_1 psi_0|^2``; ``amplitude`` is ``<psi_0|M_N...M_1|psi_0>``.
    """
    n = protocol.n_steps
    if n > MAX_ENUMERATION_STEPS:
        raise EnumerationTooLargeError(
            f"N={n} gives 2^{n} sequences; use averaged_phase_exact or averaged_phase_mc"
        )
    psi0 = protocol.initial_state.amplitudes
    vecs = psi0[None, :]
    ops = protocol.kraus_ops
    for k in range(n):
        vecs = np.concatenate([vecs @ ops[k, 0].T, vecs @ ops[k, 1].T])
    out = []
    probs = np.sum(np.abs(vecs) ** 2, axis=1)
    amps = vecs @ np.conj(psi0)
    for idx, seq in enumerate(_sequences(n)):
        out.append(SequenceOutcome(seq, PhaseAmplitude(complex(amps[idx])), float(probs[idx])))
    return out


def _sequences(n: int):
    """Readout tuples in the row order produced by :func:`enumerate_all`.

    Concatenating ``[plus-branch, minus-branch]`` at step ``k`` makes the
    step-``k`` readout the most significant bit of the row index.
    """
    for bits in itertools.product((PLUS, MINUS), repeat=n):
        yield tuple(reversed(bits))


# -- doubled-space transfer matrices ----------------------------------------

def _doubled_amplitude(protocol: MeasurementProtocol, conjugate: bool) -> complex:
    """``<psi0,psi0'| prod_k T_k |psi0,psi0'>`` with log-magnitude accumulation.

    ``T_k = sum_r M (x) M`` (``conjugate=False``) or ``M (x) conj(M)``; the
    last step only contributes its postselected readout.
    """
    psi0 = protocol.initial_state.amplitudes
    second = np.conj(psi0) if conjugate else psi0
    start = np.kron(psi0, second)
    v = start.copy()
    log_mag = 0.0
    ops = protocol.kraus_ops
    n = protocol.n_steps
    for k in range(n):
        if k == n - 1 and protocol.final_postselect is not None:
            ri = [0 if protocol.final_postselect == PLUS else 1]
        else:
            ri = [0, 1]
        t = sum(np.kron(ops[k, i], np.conj(ops[k, i]) if conjugate else ops[k, i]) for i in ri)
        v = t @ v
        norm = np.linalg.norm(v)
        if norm == 0.0:
            return 0j
        v /= norm
        log_mag += math.log(norm)
    return complex(np.vdot(start, v)) * math.exp(log_mag)


def averaged_amplitude(protocol: MeasurementProtocol) -> complex:
    """``sum over readouts of <psi0|prod M|psi0>**2`` (exact)."""
    return _doubled_amplitude(protocol, conjugate=False)


def acceptance_probability(protocol: MeasurementProtocol) -> float:
    """``sum over readouts of |<psi0|prod M|psi0>|**2`` (exact)."""
    return _doubled_amplitude(protocol, conjugate=True).real


def averaged_phase_exact(protocol: MeasurementProtocol) -> EnsembleSummary:
    """Exact averaged phase and suppression exponent via transfer matrices."""
    return _summary_from_mean(averaged_amplitude(protocol))


def averaged_amplitude_parallel(c, theta, n_steps: int = 500) -> np.ndarray:
    """Vectorised averaged amplitude for parallel protocols.

    In the frame co-rotating with the measurement axis every step is the
    same operator, so the product collapses to a matrix power of
    ``sum_r (M_r dR) (x) (M_r dR)``.  ``c`` and ``theta`` broadcast.
    """
    c, theta = np.broadcast_arrays(np.asarray(c, float), np.asarray(theta, float))
    shape = c.shape
    c, theta = c.ravel(), theta.ravel()
    eta = 4.0 * c / n_steps
    if np.any(eta > 1.0):
        raise ValueError("4c/N exceeds 1")
    dr = np.stack([delta_rotation(t, n_steps) for t in theta])
    sp = np.sqrt(1.0 - eta)
    sm = np.sqrt(eta)
    mp_dr = dr.copy()
    mp_dr[:, 1, :] *= sp[:, None]
    mm_dr = np.zeros_like(dr)
    mm_dr[:, 1, :] = sm[:, None] * dr[:, 1, :]
    t = _kron_batch(mp_dr, mp_dr) + _kron_batch(mm_dr, mm_dr)
    prod = _kron_batch(dr, dr) @ np.linalg.matrix_power(t, n_steps - 1)
    return prod[:, 0, 0].reshape(shape)


def _kron_batch(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.einsum("nij,nkl->nikjl", a, b).reshape(a.shape[0], 4, 4)


# -- Monte Carlo -----------------------------------------------------------

def _bootstrap_stderr(z: np.ndarray, seed: int) -> float:
    rng = np.random.Generator(np.random.Philox(key=int(seed) & (2**64 - 1), counter=[0, 0, 1, 0]))
    n = z.size
    means = np.empty(BOOTSTRAP_RESAMPLES, dtype=complex)
    for b in range(BOOTSTRAP_RESAMPLES):
        means[b] = z[rng.integers(0, n, n)].mean()
    return float(math.sqrt(np.var(means.real) + np.var(means.imag)))


def averaged_phase_mc(
    protocol: MeasurementProtocol,
    n_realizations: int,
    seed: int = 0,
    threads: int = 0,
    bins: int | None = None,
    estimator: str = "overlap",
) -> EnsembleSummary:
    """Monte Carlo estimate of the averaged phase.

    Parameters
    ----------
    estimator : {"overlap", "accepted"}
        ``"overlap"`` averages ``z = <psi_0|M_N|psi_{N-1}>**2`` built from the
        normalised pre-closing state, independent of the sampled final
        readout.  ``"accepted"`` averages ``exp(2i chi)`` over accepted runs
        with rejected runs counted as zero.  Both are unbiased for the exact
        sum; the first has lower variance.
    bins : int, optional
        If given, a histogram of ``chi`` over accepted realizations is
        attached.
    """
    readouts, z, accepted, chi = simulate_ensemble(protocol, n_realizations, seed, threads)
    if estimator == "accepted":
        if not np.any(accepted):
            raise VisibilityZeroError("every realization was rejected")
        z = np.where(accepted, np.exp(2j * np.nan_to_num(chi)), 0j)
    elif estimator != "overlap":
        raise ValueError(f"unknown estimator {estimator!r}")
    mean = complex(np.mean(z))
    edges = counts = None
    if bins is not None:
        if bins < 8:
            raise ValueError("need at least 8 bins")
        counts, edges = np.histogram(chi[accepted], bins=bins, range=(-math.pi, math.pi))
    return _summary_from_mean(
        mean,
        n_realizations=n_realizations,
        accept_rate=float(np.mean(accepted)),
        stderr=_bootstrap_stderr(z, seed),
        bin_edges=edges,
        counts=counts,
    )


def phase_histogram(
    protocol: MeasurementProtocol,
    n_realizations: int,
    bins: int = 64,
    seed: int = 0,
    threads: int = 0,
) -> EnsembleSummary:
    """Histogram of ``chi`` over accepted realizations, one count each."""
    return averaged_phase_mc(protocol, n_realizations, seed, threads, bins=bins)


def sequence_frequencies(readouts: np.ndarray) -> dict[tuple[int, ...], int]:
    """Occurrence count of every distinct readout row."""
    rows, counts = np.unique(readouts, axis=0, return_counts=True)
    return {tuple(int(x) for x in r): int(c) for r, c in zip(rows, counts)}


def all_plus_frequency(readouts: np.ndarray) -> float:
    return float(np.mean(np.all(readouts == PLUS, axis=1)))
