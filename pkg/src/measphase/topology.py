"""Topological characterisation of the strong-to-weak measurement transition.

The postselected phase chi(theta) along the family of parallels is lifted
to a continuous real function with chi(0) = 0.  Its endpoint difference
divided by 2 pi is the Chern number of the map from (theta, t) to the Bloch
sphere, which :func:`chern_via_curvature` recomputes independently from
gauge-invariant plaquette fluxes of finite-N trajectories.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import optimize

from .errors import GridTooCoarseError, NoCriticalPointError, PhaseUndefinedAtError, SearchError
from .phase_engine import closed_form_amplitude, equator_condition, principal_phase
from .qubit_core import (
    TWO_PI,
    bloch_vectors,
    kraus_batch,
    PLUS,
    slerp_vectors,
    states_from_vectors,
)
from .trajectory_sim import averaged_amplitude_parallel

P_FLOOR = 1e-8
VISIBILITY_FLOOR = 1e-8
RELIABLE_RESIDUAL = 0.05


def _wrap(x: float, period: float = TWO_PI) -> float:
    """Reduce to ``(-period/2, period/2]``."""
    half = 0.5 * period
    y = math.fmod(x + half, period)
    if y <= 0.0:
        y += period
    return y - half


def _lift(principal: float, reference: float, period: float = TWO_PI) -> float:
    """The representative of ``principal`` (mod ``period``) nearest ``reference``."""
    return principal + period * round((reference - principal) / period)


@dataclass(frozen=True)
class UnfoldedPhaseCurve:
    """Continuous postselected phase over ``[0, theta_max]``.

    ``chi`` is NaN where ``flagged`` marks points whose postselection
    probability is below ``1e-8``.
    """

    c: float
    theta: np.ndarray
    chi: np.ndarray
    probability: np.ndarray
    flagged: np.ndarray

    def at(self, theta: float) -> float:
        """Unfolded phase at an arbitrary angle inside the curve's range."""
        good = ~self.flagged
        amp = closed_form_amplitude(self.c, theta)
        if abs(amp) ** 2 < P_FLOOR:
            raise PhaseUndefinedAtError(
                f"postselection probability vanishes at theta={theta:.12g}", theta, self.c
            )
        ref = float(np.interp(theta, self.theta[good], self.chi[good]))
        return _lift(principal_phase(amp), ref)


def unfold_phase(
    c: float,
    theta_max: float = math.pi,
    tolerance: float = 0.25,
    n_initial: int = 129,
    min_step: float = 1e-13,
) -> UnfoldedPhaseCurve:
    """Lift the closed-form postselected phase to a continuous curve.

    The grid is bisected wherever two consecutive resolvable points differ
    by ``tolerance`` or more (principal difference).  Unresolvable points
    (``P < 1e-8``) in between are bridged once the resolvable neighbours on
    both sides agree to within ``tolerance``; until then the stretch is
    narrowed from its two edges.

    Raises
    ------
    PhaseUndefinedAtError
        When refinement reaches ``min_step`` without closing a gap, which
        happens only at a genuine zero of the postselection probability.
    """
    if c < 0:
        raise ValueError("c must be non-negative")
    if not 0.0 < theta_max <= math.pi:
        raise ValueError("theta_max must lie in (0, pi]")
    tolerance = min(tolerance, 0.5 * math.pi)
    thetas = list(np.linspace(0.0, theta_max, n_initial))
    amps = [closed_form_amplitude(c, t) for t in thetas]
    while True:
        good = [i for i, a in enumerate(amps) if abs(a) ** 2 >= P_FLOOR]
        if not good or good[0] != 0:
            raise PhaseUndefinedAtError("phase undefined at theta=0", 0.0, c)
        inserts = []
        for i, j in zip(good[:-1], good[1:]):
            jump = abs(_wrap(principal_phase(amps[j]) - principal_phase(amps[i])))
            if jump < tolerance:
                continue
            # close in on an unresolvable stretch from its two edges only
            edges = {i, j - 1}
            if all(thetas[k + 1] - thetas[k] < min_step for k in edges):
                where = 0.5 * (thetas[i] + thetas[j])
                raise PhaseUndefinedAtError(
                    f"cannot continue the phase across theta={where:.12g} at c={c}",
                    where,
                    c,
                )
            inserts.extend(
                0.5 * (thetas[k] + thetas[k + 1]) for k in edges if thetas[k + 1] - thetas[k] >= min_step
            )
        if good[-1] != len(thetas) - 1:
            # an unresolvable tail is narrowed from its resolvable edge only
            k = good[-1]
            if thetas[k + 1] - thetas[k] < min_step:
                raise PhaseUndefinedAtError("phase undefined at the end point", thetas[-1], c)
            inserts.append(0.5 * (thetas[k] + thetas[k + 1]))
        if not inserts:
            break
        for t in sorted(set(inserts)):
            pos = bisect.bisect_left(thetas, t)
            thetas.insert(pos, t)
            amps.insert(pos, closed_form_amplitude(c, t))
    amps_arr = np.array(amps)
    prob = np.abs(amps_arr) ** 2
    flagged = prob < P_FLOOR
    chi = np.full(len(thetas), np.nan)
    prev = None
    for i, a in enumerate(amps):
        if flagged[i]:
            continue
        p = principal_phase(a)
        chi[i] = p if prev is None else _lift(p, prev)
        prev = chi[i]
    chi -= chi[0]
    return UnfoldedPhaseCurve(float(c), np.array(thetas), chi, prob, flagged)


@dataclass(frozen=True)
class ChernResult:
    chern: int
    raw: float
    residual: float
    method: str = "endpoint"

    @property
    def reliable(self) -> bool:
        return self.residual < RELIABLE_RESIDUAL


@lru_cache(maxsize=None)
def critical_strength(bracket: tuple[float, float] = (1.0, 4.0), tol: float = 1e-10) -> float:
    """Strength at which the equator postselection probability vanishes.

    Bisection on ``cosh(tau) + c sinh(tau)/tau`` with ``tau**2 = c**2 - pi**2``.
    """
    lo, hi = bracket
    f_lo, f_hi = equator_condition(lo), equator_condition(hi)
    if not (lo < hi) or f_lo * f_hi > 0:
        raise SearchError(f"no sign change of the equator condition on [{lo}, {hi}]")
    return float(optimize.bisect(equator_condition, lo, hi, xtol=tol, rtol=4 * np.finfo(float).eps))


def chern_number(c: float) -> ChernResult:
    """Chern number from the unfolded phase difference ``chi(pi) - chi(0)``."""
    c_crit = critical_strength()
    if abs(c - c_crit) < 1e-3:
        raise PhaseUndefinedAtError(
            f"c={c} is within 1e-3 of the critical strength {c_crit:.10f}", math.pi / 2, c
        )
    curve = unfold_phase(c)
    raw = (curve.chi[-1] - curve.chi[0]) / TWO_PI
    n = int(round(raw))
    return ChernResult(n, float(raw), float(abs(raw - n)), "endpoint")


@dataclass(frozen=True)
class PlaquetteField:
    """Berry flux per plaquette on the ``(theta, t)`` lattice."""

    theta: np.ndarray
    t: np.ndarray
    flux: np.ndarray

    @property
    def total(self) -> float:
        return float(self.flux.sum())

    def row_phases(self) -> np.ndarray:
        """Cumulative flux up to each theta row: the loop phase chi(theta_i)."""
        return np.concatenate([[0.0], np.cumsum(self.flux.sum(axis=1))])


def trajectory_lattice(c: float, grid_n: int = 128, n_steps: int = 512) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """States ``|psi_theta(t)>`` of the all-``+`` trajectories on a lattice.

    Returns ``(theta, t, psi)`` with ``psi`` of shape ``(grid_n + 1, grid_n, 2)``.
    The first ``grid_n/2 + 1`` columns sample the measured states
    ``psi_0 ... psi_{N-1}`` at ``t = pi k / N``; the remaining columns follow
    the shortest geodesic from ``psi_{N-1}`` back to ``psi_0``.
    """
    if grid_n < 64 or grid_n % 2:
        raise ValueError("grid_n must be even and at least 64")
    half = grid_n // 2
    if n_steps < half + 1:
        raise ValueError("n_steps must exceed grid_n / 2")
    eta = 4.0 * c / n_steps
    if eta > 1.0:
        raise ValueError("4c/N exceeds 1; increase n_steps")
    theta = np.linspace(0.0, math.pi, grid_n + 1)
    keep = np.rint(np.linspace(0, n_steps - 1, half + 1)).astype(int)
    psi = np.stack([np.cos(theta / 2), np.sin(theta / 2)], axis=1).astype(complex)
    measured = np.empty((theta.size, half + 1, 2), dtype=complex)
    slot = 0
    if keep[0] == 0:
        measured[:, 0] = psi
        slot = 1
    for k in range(1, n_steps):
        m = kraus_batch(theta, TWO_PI * k / n_steps, eta, PLUS)
        psi = np.einsum("gij,gj->gi", m, psi)
        psi /= np.linalg.norm(psi, axis=1, keepdims=True)
        while slot <= half and keep[slot] == k:
            measured[:, slot] = psi
            slot += 1
    start = bloch_vectors(measured[:, -1])
    end = bloch_vectors(measured[:, 0])
    s = np.arange(1, half) / half
    closing = states_from_vectors(slerp_vectors(start, end, s))
    states = np.concatenate([measured, closing], axis=1)
    t = np.concatenate([math.pi * keep / n_steps, math.pi + math.pi * s])
    return theta, t, states


def plaquette_flux(psi: np.ndarray) -> np.ndarray:
    """Berry flux through each plaquette, periodic along the second axis.

    For corners ``a=(i,j), b=(i+1,j), c=(i+1,j+1), d=(i,j+1)`` the flux is
    ``arg(<b|a><c|b><d|c><a|d>)``, the Pancharatnam phase of the loop.
    """
    a = psi[:-1]
    b = psi[1:]
    c = np.roll(psi[1:], -1, axis=1)
    d = np.roll(psi[:-1], -1, axis=1)

    def ov(x, y):
        return np.sum(np.conj(x) * y, axis=-1)

    return np.angle(ov(b, a) * ov(c, b) * ov(d, c) * ov(a, d))


def chern_via_curvature(
    c: float, grid_n: int = 128, n_steps: int = 512, max_flux: float = 0.5 * math.pi
) -> ChernResult:
    """Chern number as the total plaquette Berry flux over ``2 pi``.

    Raises
    ------
    GridTooCoarseError
        If any plaquette flux exceeds ``max_flux`` in magnitude.
    """
    theta, t, psi = trajectory_lattice(c, grid_n, n_steps)
    flux = plaquette_flux(psi)
    worst = float(np.max(np.abs(flux)))
    if worst >= max_flux:
        i, _ = np.unravel_index(np.argmax(np.abs(flux)), flux.shape)
        raise GridTooCoarseError(
            f"plaquette flux {worst:.3f} near theta={theta[i]:.4f}; increase grid_n"
        )
    raw = flux.sum() / TWO_PI
    n = int(round(raw))
    return ChernResult(n, float(raw), float(abs(raw - n)), "plaquette")


def plaquette_field(c: float, grid_n: int = 128, n_steps: int = 512) -> PlaquetteField:
    theta, t, psi = trajectory_lattice(c, grid_n, n_steps)
    return PlaquetteField(theta, t, plaquette_flux(psi))


@dataclass(frozen=True)
class WindingResult:
    m: int
    theta: np.ndarray
    chi_bar: np.ndarray
    visibility: np.ndarray


def winding_number_averaged(
    c: float,
    n_theta: int = 65,
    n_steps: int = 500,
    tolerance: float = 0.25 * math.pi,
    min_step: float = 1e-9,
) -> WindingResult:
    """Winding of the averaged phase (a circle of length pi) over ``[0, pi/2]``.

    Raises
    ------
    PhaseUndefinedAtError
        If the visibility drops below ``1e-8`` or refinement stalls.
    """
    thetas = list(np.linspace(0.0, 0.5 * math.pi, n_theta))
    vals = list(averaged_amplitude_parallel(c, np.array(thetas), n_steps))
    while True:
        vis = np.abs(vals)
        if np.any(vis < VISIBILITY_FLOOR):
            i = int(np.argmin(vis))
            raise PhaseUndefinedAtError(
                f"averaged visibility {vis[i]:.2e} at theta={thetas[i]:.6f}", thetas[i], c
            )
        half = [0.5 * principal_phase(v) for v in vals]
        bad = [
            i for i in range(len(thetas) - 1)
            if abs(_wrap(half[i + 1] - half[i], math.pi)) >= tolerance
        ]
        if not bad:
            break
        new = []
        for i in bad:
            if thetas[i + 1] - thetas[i] < min_step:
                raise PhaseUndefinedAtError(
                    f"averaged phase jumps at theta={thetas[i]:.9f}", thetas[i], c
                )
            new.append(0.5 * (thetas[i] + thetas[i + 1]))
        new_vals = averaged_amplitude_parallel(c, np.array(new), n_steps)
        for t, v in zip(new, new_vals):
            pos = bisect.bisect_left(thetas, t)
            thetas.insert(pos, t)
            vals.insert(pos, v)
    chi = [half[0]]
    for h in half[1:]:
        chi.append(_lift(h, chi[-1], math.pi))
    chi = np.array(chi) - chi[0]
    m = int(round((chi[-1] - chi[0]) / math.pi))
    return WindingResult(m, np.array(thetas), chi, np.abs(np.array(vals)))


@dataclass(frozen=True)
class CriticalPoint:
    c: float
    theta: float
    visibility: float


def averaged_critical_point(
    c_range: tuple[float, float] = (2.5, 4.5),
    theta_range: tuple[float, float] = (0.5, 1.5),
    n_steps: int = 500,
    grid: int = 41,
    levels: int = 12,
    max_visibility: float = 1e-3,
) -> CriticalPoint:
    """Locate the zero of the averaged visibility by nested grid refinement.

    Each level evaluates a ``grid x grid`` lattice on the current box and
    shrinks the box to a few cells around the minimum.

    Raises
    ------
    NoCriticalPointError
        If the smallest visibility found exceeds ``max_visibility``.
    """
    (c_lo, c_hi), (t_lo, t_hi) = c_range, theta_range
    if not (c_lo < c_hi and t_lo < t_hi):
        raise SearchError("empty search box")
    box_c, box_t = (c_lo, c_hi), (t_lo, t_hi)
    best = (math.inf, c_lo, t_lo)
    for _ in range(levels):
        cs = np.linspace(*box_c, grid)
        ts = np.linspace(*box_t, grid)
        cc, tt = np.meshgrid(cs, ts, indexing="ij")
        vis = np.abs(averaged_amplitude_parallel(cc, tt, n_steps))
        i, j = np.unravel_index(np.argmin(vis), vis.shape)
        if vis[i, j] < best[0]:
            best = (float(vis[i, j]), float(cs[i]), float(ts[j]))
        dc = 2 * (cs[1] - cs[0])
        dt = 2 * (ts[1] - ts[0])
        box_c = (max(c_lo, cs[i] - dc), min(c_hi, cs[i] + dc))
        box_t = (max(t_lo, ts[j] - dt), min(t_hi, ts[j] + dt))
    vis, c, theta = best
    if vis > max_visibility:
        raise NoCriticalPointError(
            f"minimum visibility {vis:.3g} at (c={c:.4f}, theta={theta:.4f}) is not a zero"
        )
    return CriticalPoint(c, theta, vis)
