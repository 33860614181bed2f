"""Discrete energetics and time evolution of an ensemble.

Members follow second-order point dynamics m x'' = -grad(sum U + U_variety),
integrated with velocity Verlet.  Velocities are integrator state carried
next to the (immutable) ensemble, not beables.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .ensemble import DensitySpec, close_pairs
from .errors import DegenerateConfigurationError, DynamicsAborted, InvalidInputError, RelaxationError
from .potentials import FreePotential
from .variety import compute_views, variety, variety_gradient


@dataclass(frozen=True)
class EnergyReport:
    kinetic: float
    variety_potential: float
    external_potential: float
    total: float = field(init=False)

    def __post_init__(self):
        object.__setattr__(
            self, "total", self.kinetic + self.variety_potential + self.external_potential)

    def as_dict(self):
        return {"kinetic": self.kinetic, "variety_potential": self.variety_potential,
                "external_potential": self.external_potential, "total": self.total}


@dataclass
class TrajectoryRecord:
    times: np.ndarray
    positions: Optional[np.ndarray]
    energies: list
    seed: Optional[int] = None
    settings: dict = field(default_factory=dict)
    final_state: object = None
    final_velocities: Optional[np.ndarray] = None
    steps: int = 0

    def energy_column(self, name):
        return np.array([getattr(e, name) for e in self.energies])

    def member_track(self, k, axis=0):
        return self.positions[:, k, axis]


@dataclass
class DynamicsStep:
    state: object
    velocities: np.ndarray
    forces: np.ndarray
    dt: float
    variety_potential: float


def _phase_angles(phases, i, k):
    """Principal-branch angles of w_k/w_i and w_i/w_k for each stored pair."""
    to_k = np.angle(phases[k] * np.conj(phases[i]))
    to_i = np.angle(phases[i] * np.conj(phases[k]))
    if np.any(np.abs(to_k) == math.pi):
        warnings.warn("phase ratio of exactly -1: principal branch picks +pi",
                      RuntimeWarning, stacklevel=3)
    return to_k, to_i


def momenta_from_phases(state, views=None):
    """Composite momenta p_k = -i hbar (1/N) sum_j V[k][j] ln(w_j / w_k).

    Uses the principal branch, so each log is i times an angle in (-pi, pi].
    """
    N, d = state.N, state.dim
    p = np.zeros((N, d))
    if N < 2:
        return p
    views = views if views is not None else compute_views(state)
    to_k, to_i = _phase_angles(state.phases, views.i, views.k)
    # member i sees V[i][k] = v; member k sees V[k][i] = -v
    contrib_i = views.vectors * to_k[:, None]
    contrib_k = -views.vectors * to_i[:, None]
    for a in range(d):
        p[:, a] = np.bincount(views.i, contrib_i[:, a], N) + np.bincount(
            views.k, contrib_k[:, a], N)
    return state.constants.hbar * p / N


def kinetic_energy(state, views=None, Z=None):
    """Phase kinetic energy (Z hbar^2 / 2 m N^2) sum_{k!=j} |ln(w_j/w_k)|^2 / |x_k - x_j|^2.

    ``Z`` may be a scalar or a per-member array weighting the outer index k;
    it defaults to ``state.cutoffs.Z``.  Pairs outside the horizon are skipped.
    """
    N = state.N
    if N < 2:
        return 0.0
    views = views if views is not None else compute_views(state)
    if len(views) == 0:
        return 0.0
    c = state.constants
    Z = state.cutoffs.Z if Z is None else Z
    to_k, to_i = _phase_angles(state.phases, views.i, views.k)
    inv_r2 = 1.0 / views.separations**2
    if np.ndim(Z) == 0:
        s = float(Z) * float(np.sum((to_k**2 + to_i**2) * inv_r2))
    else:
        Z = np.asarray(Z, dtype=float)
        s = float(np.sum((Z[views.i] * to_k**2 + Z[views.k] * to_i**2) * inv_r2))
    return c.hbar**2 / (2.0 * c.mass * N**2) * s


def _variety_energy(state, views):
    c = state.constants
    return -(c.hbar**2) / (8.0 * c.mass) * variety(state, views, with_pairs=False).total


def hamiltonian(state, external_potential=None, views=None):
    """Energy report: phase kinetic energy + variety potential + sum of U(x_k)."""
    external_potential = external_potential or FreePotential()
    views = views if views is not None else compute_views(state)
    return EnergyReport(
        kinetic_energy(state, views),
        _variety_energy(state, views) if state.N >= 3 else 0.0,
        external_potential.total(state.positions),
    )


def mechanical_energy(state, velocities, external_potential, smooth_cutoff=False):
    """Energy conserved by the point dynamics: m|v|^2/2 + variety potential + sum U."""
    views = compute_views(state, smooth=smooth_cutoff)
    kin = 0.5 * state.constants.mass * float(np.sum(velocities**2))
    uv = _variety_energy(state, views) if state.N >= 3 else 0.0
    return EnergyReport(kin, uv, external_potential.total(state.positions))


def total_forces(state, external_potential, smooth_cutoff=False):
    """Forces on every member and the variety potential at this configuration."""
    views = compute_views(state, smooth=smooth_cutoff)
    F = -external_potential.gradient(state.positions)
    uv = 0.0
    if state.N >= 3:
        F -= variety_gradient(state, smooth=smooth_cutoff, views=views)
        uv = _variety_energy(state, views)
    return F, uv


def minimum_separation(positions):
    positions = np.asarray(positions)
    if positions.shape[0] < 2:
        return math.inf
    if positions.shape[1] == 1:
        return float(np.min(np.diff(np.sort(positions[:, 0]))))
    diff = positions[:, None, :] - positions[None, :, :]
    dist = np.sqrt(np.einsum("ija,ija->ij", diff, diff))
    dist[np.diag_indices_from(dist)] = np.inf
    return float(dist.min())


def _step_allowed(old, new, eps):
    if new.shape[0] < 2:
        return True
    if new.shape[1] == 1:
        # in one dimension members cannot pass through each other
        order = np.argsort(old[:, 0], kind="stable")
        gaps = np.diff(new[order, 0])
        return bool(np.all(gaps >= eps))
    return close_pairs(new, eps).size == 0


def suggest_timestep(state, external_potential=None, fraction=0.1):
    """Stability heuristic from the closest pair and the external trap frequency.

    The variety force between members at separation s changes on the time
    scale sqrt(8) m s^2 / hbar; the minimum separation is floored at
    epsilon_min.
    """
    c = state.constants
    scales = []
    if state.N >= 3:
        s = max(minimum_separation(state.positions), state.epsilon_min())
        scales.append(math.sqrt(8.0) * c.mass * s**2 / c.hbar)
    omega = getattr(external_potential, "omega", None)
    if omega:
        scales.append(1.0 / omega)
    if not scales:
        return fraction
    return fraction * min(scales)


def step_dynamics(state, external_potential=None, dt=1e-3, velocities=None, gamma=0.0,
                  forces=None, smooth_cutoff=False, track_phases=False, max_halvings=20):
    """One velocity-Verlet step; ``gamma > 0`` adds a -gamma v drag.

    A step that would bring any pair closer than epsilon_min (or, in one
    dimension, swap neighbours) is retried with half the timestep, up to
    ``max_halvings`` times.
    """
    if not dt > 0:
        raise InvalidInputError("dt must be positive")
    if gamma < 0:
        raise InvalidInputError("gamma must be nonnegative")
    external_potential = external_potential or FreePotential()
    m = state.constants.mass
    x = state.positions
    v = np.zeros_like(x) if velocities is None else np.asarray(velocities, dtype=float)
    if forces is None:
        forces, _ = total_forces(state, external_potential, smooth_cutoff)
    eps = state.epsilon_min()
    h = dt
    for _ in range(max_halvings + 1):
        v_half = v + 0.5 * h * (forces / m - gamma * v)
        x_new = x + h * v_half
        if _step_allowed(x, x_new, eps):
            new_state = state.with_positions(x_new)
            try:
                f_new, uv = total_forces(new_state, external_potential, smooth_cutoff)
            except DegenerateConfigurationError:
                h *= 0.5
                continue
            v_new = (v_half + 0.5 * h * f_new / m) / (1.0 + 0.5 * gamma * h)
            if track_phases:
                new_state = _advance_phases(new_state, v_new, external_potential, h)
            return DynamicsStep(new_state, v_new, f_new, h, uv)
        h *= 0.5
    raise DynamicsAborted(
        f"pair separation fell below epsilon_min={eps:g} after {max_halvings} halvings")


def _advance_phases(state, velocities, external_potential, dt):
    """dS_k/dt = L_k with the member's share of the variety potential."""
    c = state.constants
    N = state.N
    kin = 0.5 * c.mass * np.einsum("na,na->n", velocities, velocities)
    ext = external_potential.energy(state.positions)
    share = np.zeros(N)
    if N >= 3:
        local = variety(state, with_pairs=False).local
        share = -(c.hbar**2) / (8.0 * c.mass) * state.cutoffs.A / N * local
    L = kin - ext - share
    return state.with_phases(state.phases * np.exp(1j * L * dt / c.hbar))


def run_dynamics(state, external_potential=None, dt=None, steps=1000, velocities=None,
                 gamma=0.0, record_every=1, keep_positions=True, seed=None,
                 smooth_cutoff=False, track_phases=False, max_halvings=20):
    """Integrate ``steps`` steps and record energies (and positions) every ``record_every``.

    ``velocities="momenta"`` starts from the phase momenta divided by m.
    """
    external_potential = external_potential or FreePotential()
    dt = dt or suggest_timestep(state, external_potential)
    if isinstance(velocities, str) and velocities == "momenta":
        v = momenta_from_phases(state) / state.constants.mass
    elif velocities is None:
        v = np.zeros_like(state.positions)
    else:
        v = np.asarray(velocities, float)
    settings = {"dt": dt, "steps": steps, "gamma": gamma, "record_every": record_every,
                "smooth_cutoff": smooth_cutoff, "track_phases": track_phases}
    times, frames, energies = [], [], []
    forces, uv = total_forces(state, external_potential, smooth_cutoff)
    t = 0.0

    def record():
        times.append(t)
        if keep_positions:
            frames.append(np.array(state.positions))
        kin = 0.5 * state.constants.mass * float(np.sum(v**2))
        energies.append(EnergyReport(kin, uv, external_potential.total(state.positions)))

    def trajectory(n_done):
        return TrajectoryRecord(np.array(times), np.array(frames) if keep_positions else None,
                                energies, seed, settings, state, v, n_done)

    record()
    for n in range(1, steps + 1):
        try:
            step = step_dynamics(state, external_potential, dt, v, gamma, forces,
                                 smooth_cutoff, track_phases, max_halvings)
        except DynamicsAborted as exc:
            raise DynamicsAborted(str(exc), step=n, time=t, trajectory=trajectory(n - 1)) from None
        state, v, forces, uv = step.state, step.velocities, step.forces, step.variety_potential
        t += step.dt
        if n % record_every == 0 or n == steps:
            record()
    return trajectory(steps)


@dataclass
class DivergenceReport:
    steps: int
    max_force: float
    reason: str
    state: object = None


def relax_to_stationary(state, external_potential=None, gamma=1.0, tol=1e-6, dt=None,
                        max_steps=200_000, smooth_cutoff=False):
    """Damped dynamics until the largest force component drops below ``tol``."""
    if not gamma > 0:
        raise InvalidInputError("relaxation needs gamma > 0")
    external_potential = external_potential or FreePotential()
    dt = dt or suggest_timestep(state, external_potential)
    v = np.zeros_like(state.positions)
    forces, _ = total_forces(state, external_potential, smooth_cutoff)
    for n in range(max_steps):
        fmax = float(np.max(np.abs(forces))) if forces.size else 0.0
        if fmax < tol:
            return state
        try:
            step = step_dynamics(state, external_potential, dt, v, gamma, forces, smooth_cutoff)
        except DynamicsAborted as exc:
            raise RelaxationError(
                f"relaxation aborted at step {n}: {exc}",
                DivergenceReport(n, fmax, "collision", state)) from None
        state, v, forces = step.state, step.velocities, step.forces
    fmax = float(np.max(np.abs(forces)))
    raise RelaxationError(
        f"no stationary configuration after {max_steps} steps (max force {fmax:.3g})",
        DivergenceReport(max_steps, fmax, "max_steps", state))


def _reference_probabilities(density, edges):
    if isinstance(density, DensitySpec):
        cdf = density.cdf(edges)
        return np.diff(cdf), 1.0 - (cdf[-1] - cdf[0])
    samples = np.asarray(density, dtype=float).reshape(-1)
    counts, _ = np.histogram(samples, edges)
    return counts / samples.size, 1.0 - counts.sum() / samples.size


def equilibration_metric(trajectory, member, density, n_windows=10, bins=30,
                         value_range=None, cumulative=True, axis=0):
    """Total-variation distance between one member's time-averaged histogram and ``density``.

    ``trajectory`` is a :class:`TrajectoryRecord` or a 1D array of the
    member's positions.  ``density`` is a :class:`DensitySpec` or an array of
    samples (e.g. pooled ensemble positions).  Windows grow from the start of
    the run when ``cumulative`` is true, otherwise they are disjoint.
    Probability falling outside the bin range is kept as one extra cell.
    """
    if isinstance(trajectory, TrajectoryRecord):
        track = trajectory.member_track(member, axis)
    else:
        track = np.asarray(trajectory, dtype=float).reshape(-1)
    if track.size == 0:
        raise InvalidInputError("empty trajectory")
    if n_windows < 1 or track.size < n_windows:
        raise InvalidInputError("trajectory too short for the requested windows")
    if value_range is None:
        if isinstance(density, DensitySpec):
            value_range = density.support(4.0)
        else:
            value_range = (float(np.min(density)), float(np.max(density)))
    edges = np.linspace(value_range[0], value_range[1], bins + 1)
    q, q_out = _reference_probabilities(density, edges)
    bounds = np.linspace(0, track.size, n_windows + 1).astype(int)
    out = np.empty(n_windows)
    for w in range(n_windows):
        lo = 0 if cumulative else bounds[w]
        chunk = track[lo:bounds[w + 1]]
        counts, _ = np.histogram(chunk, edges)
        p = counts / chunk.size
        p_out = 1.0 - p.sum()
        out[w] = 0.5 * (np.sum(np.abs(p - q)) + abs(p_out - q_out))
    return out


def trend_slope(series):
    series = np.asarray(series, dtype=float)
    return float(np.polyfit(np.arange(series.size), series, 1)[0])
