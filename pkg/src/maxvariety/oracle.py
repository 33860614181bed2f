"""Grid Schroedinger solver used as ground truth for the ensemble side.

Hard-wall box with psi = 0 at both ends; second-order finite differences.
Real-time steps use the Crank-Nicolson (Cayley) propagator, which is unitary
up to the tridiagonal solve; ground states come from implicit imaginary-time
steps with renormalization.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.linalg import lapack

from .continuum import correction_potential, correction_prefactor
from .ensemble import PhysicalConstants
from .errors import ConvergenceError, InvalidInputError

NODE_THRESHOLD = 1e-12
POINTS_PER_WAVELENGTH = 8
SPECTRAL_TAIL_TOL = 1e-8
SCHEMA_VERSION = 1


@dataclass(frozen=True)
class GridWavefunction:
    z: np.ndarray
    psi: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        z = np.asarray(self.z, dtype=float)
        psi = np.asarray(self.psi, dtype=complex)
        if z.ndim != 1 or z.shape != psi.shape or z.size < 5:
            raise InvalidInputError("wavefunction needs a 1D grid of >= 5 points")
        steps = np.diff(z)
        if steps[0] <= 0 or not np.allclose(steps, steps[0], rtol=1e-9, atol=0.0):
            raise InvalidInputError("grid must be uniform and increasing")
        psi = psi.copy()
        psi[0] = psi[-1] = 0.0
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "psi", psi)

    @property
    def h(self):
        return float(self.z[1] - self.z[0])

    @property
    def rho(self):
        return np.abs(self.psi) ** 2

    def norm(self):
        return float(np.sum(self.rho) * self.h)

    def normalized(self):
        n = self.norm()
        if n <= 0:
            raise InvalidInputError("cannot normalize a zero wavefunction")
        return replace(self, psi=self.psi / math.sqrt(n))

    @classmethod
    def from_function(cls, z, fn, t=0.0):
        z = np.asarray(z, dtype=float)
        return cls(z, fn(z), t).normalized()


def box_grid(low, high, n_points):
    return np.linspace(float(low), float(high), int(n_points))


def gaussian_packet(z, center=0.0, sigma=1.0, p0=0.0, hbar=1.0):
    return GridWavefunction.from_function(
        z, lambda x: np.exp(-((x - center) ** 2) / (4 * sigma**2) + 1j * p0 * x / hbar))


def _potential_on(z, U):
    if callable(U):
        U = U(z)
    U = np.zeros_like(z) if U is None else np.asarray(U, dtype=float)
    if U.shape != z.shape:
        raise InvalidInputError("potential must be sampled on the wavefunction grid")
    return U


def _interior_hamiltonian(U, h, constants):
    """Diagonal and off-diagonal of H on the interior points."""
    c = constants.hbar**2 / (2.0 * constants.mass * h**2)
    diag = 2.0 * c + U[1:-1]
    off = -c * np.ones(diag.size - 1)
    return diag, off


def apply_hamiltonian(psi, U, constants=None):
    constants = constants or PhysicalConstants()
    U = _potential_on(psi.z, U)
    diag, off = _interior_hamiltonian(U, psi.h, constants)
    inner = psi.psi[1:-1]
    out = np.zeros_like(psi.psi)
    out[1:-1] = diag * inner
    out[1:-2] += off * inner[1:]
    out[2:-1] += off * inner[:-1]
    return out


def energy_expectation(psi, U, constants=None):
    Hpsi = apply_hamiltonian(psi, U, constants)
    return float(np.real(np.vdot(psi.psi, Hpsi)) * psi.h / psi.norm())


def check_resolution(psi, U, constants=None):
    """Reject grids with fewer than 8 points per local de Broglie wavelength.

    Two tests: spectral weight of psi beyond the resolved wavenumber, and the
    momentum a particle reaches if all of <H> - min U turns into kinetic energy.
    """
    constants = constants or PhysicalConstants()
    U = _potential_on(psi.z, U)
    h = psi.h
    k_max = 2.0 * math.pi / (POINTS_PER_WAVELENGTH * h)
    spectrum = np.abs(np.fft.fft(psi.psi)) ** 2
    k = 2.0 * math.pi * np.fft.fftfreq(psi.z.size, d=h)
    total = float(spectrum.sum())
    tail = float(spectrum[np.abs(k) > k_max].sum())
    if total > 0 and tail > SPECTRAL_TAIL_TOL * total:
        raise InvalidInputError(
            f"grid spacing {h:g} under-resolves the wavefunction (spectral tail {tail / total:.2e})")
    energy = energy_expectation(psi, U, constants)
    supported = psi.rho > NODE_THRESHOLD * psi.rho.max()
    headroom = energy - float(U[supported].min())
    if headroom > 0:
        p_max = math.sqrt(2.0 * constants.mass * headroom)
        if p_max / constants.hbar > k_max:
            raise InvalidInputError(
                f"grid spacing {h:g} cannot resolve momentum {p_max:.3g} reachable at this energy")


class _CrankNicolson:
    """Factorized (1 + i H dt / 2 hbar) for repeated solves."""

    def __init__(self, U, h, dt, constants):
        diag, off = _interior_hamiltonian(U, h, constants)
        a = 0.5j * dt / constants.hbar
        self.diag_r, self.off_r = 1.0 - a * diag, -a * off
        lower = (a * off).astype(complex)
        dl, d, du, du2, ipiv, info = lapack.zgttrf(lower, (1.0 + a * diag).astype(complex),
                                                  lower.copy())
        if info != 0:
            raise RuntimeError(f"tridiagonal factorization failed (info={info})")
        self.factors = (dl, d, du, du2, ipiv)

    def step(self, inner):
        rhs = self.diag_r * inner
        rhs[:-1] += self.off_r * inner[1:]
        rhs[1:] += self.off_r * inner[:-1]
        x, info = lapack.zgttrs(*self.factors, rhs)
        if info != 0:
            raise RuntimeError(f"tridiagonal solve failed (info={info})")
        return x


def evolve(psi, U, dt, steps, constants=None, record_every=None, validate=True):
    """Crank-Nicolson evolution for ``steps`` steps of size ``dt``.

    Returns the final wavefunction, or the list of recorded frames (including
    the initial one) when ``record_every`` is given.
    """
    constants = constants or PhysicalConstants()
    if not dt > 0:
        raise InvalidInputError("dt must be positive")
    U = _potential_on(psi.z, U)
    if validate:
        check_resolution(psi, U, constants)
    solver = _CrankNicolson(U, psi.h, dt, constants)
    inner = psi.psi[1:-1].copy()
    frames = [psi] if record_every else None
    for n in range(1, steps + 1):
        inner = solver.step(inner)
        if record_every and (n % record_every == 0 or n == steps):
            frames.append(_wrap(psi, inner, psi.t + n * dt))
    if record_every:
        return frames
    return _wrap(psi, inner, psi.t + steps * dt)


def _wrap(template, inner, t):
    full = np.zeros_like(template.psi)
    full[1:-1] = inner
    return replace(template, psi=full, t=t)


def ground_state(U, z, constants=None, dtau=0.5, tol=1e-10, max_steps=100_000,
                 require_confinement=True, residual_tol=1e-6):
    """Lowest eigenpair by implicit imaginary-time steps with renormalization.

    Stops once the energy changes by less than ``tol`` between steps and the
    eigen-residual ||H psi - E psi|| is below ``residual_tol``.  With
    ``require_confinement`` the state must not lean on the box walls.
    """
    constants = constants or PhysicalConstants()
    z = np.asarray(z, dtype=float)
    U = _potential_on(z, U)
    psi = GridWavefunction(z, np.ones_like(z)).normalized()
    h = psi.h
    diag, off = _interior_hamiltonian(U, h, constants)
    a = dtau / constants.hbar
    dl, d, du, du2, ipiv, info = lapack.dgttrf(a * off, 1.0 + a * diag, a * off)
    if info != 0:
        raise ConvergenceError(f"imaginary-time factorization failed (info={info})")
    inner = psi.psi[1:-1].real.copy()
    energy = math.inf
    for n in range(max_steps):
        inner, info = lapack.dgttrs(dl, d, du, du2, ipiv, inner)
        inner /= math.sqrt(float(np.sum(inner**2)) * h)
        Hin = diag * inner
        Hin[:-1] += off * inner[1:]
        Hin[1:] += off * inner[:-1]
        new_energy = float(np.dot(inner, Hin) * h)
        residual = math.sqrt(float(np.sum((Hin - new_energy * inner) ** 2)) * h)
        if abs(new_energy - energy) < tol and residual < residual_tol:
            energy = new_energy
            break
        energy = new_energy
    else:
        raise ConvergenceError(f"imaginary-time iteration did not converge in {max_steps} steps")
    if inner[inner.size // 2] < 0 or np.sum(inner) < 0:
        inner = -inner
    state = _wrap(GridWavefunction(z, np.zeros_like(z)), inner.astype(complex), 0.0)
    if require_confinement:
        rho = state.rho
        edge = max(2, z.size // 50)
        if max(rho[:edge].max(), rho[-edge:].max()) > 1e-6 * rho.max():
            raise ConvergenceError("ground state reaches the box walls; potential is not "
                                   "confining on this box")
    return state, energy


@dataclass(frozen=True)
class MadelungPair:
    z: np.ndarray
    rho: np.ndarray
    S: np.ndarray
    node_mask: np.ndarray
    hbar: float = 1.0


def madelung_decompose(psi, hbar=1.0, threshold=NODE_THRESHOLD):
    """rho = |psi|^2 and S = hbar * unwrapped arg(psi); S is NaN on nodes."""
    rho = psi.rho
    if not np.any(rho > 0):
        raise InvalidInputError("wavefunction vanishes everywhere")
    nodes = rho < threshold
    S = np.full(rho.shape, np.nan)
    good = ~nodes
    S[good] = hbar * np.unwrap(np.angle(psi.psi[good]))
    return MadelungPair(psi.z, rho, S, nodes, hbar)


def recompose(pair):
    psi = np.sqrt(pair.rho) * np.exp(1j * np.nan_to_num(pair.S) / pair.hbar)
    psi[pair.node_mask] = 0.0
    return psi


def quantum_potential(rho, z, constants=None, threshold=NODE_THRESHOLD):
    """-(hbar^2/2m) (sqrt rho)'' / sqrt rho with the 3-point stencil; NaN where masked."""
    constants = constants or PhysicalConstants()
    rho = np.asarray(rho, dtype=float)
    z = np.asarray(z, dtype=float)
    h = z[1] - z[0]
    amp = np.sqrt(np.clip(rho, 0.0, None))
    out = np.full(rho.shape, np.nan)
    ok = np.zeros(rho.shape, dtype=bool)
    ok[1:-1] = rho[1:-1] >= threshold
    lap = np.zeros_like(amp)
    lap[1:-1] = (amp[2:] - 2 * amp[1:-1] + amp[:-2]) / h**2
    out[ok] = -(constants.hbar**2) / (2 * constants.mass) * lap[ok] / amp[ok]
    return out


@dataclass
class Residuals:
    times: np.ndarray
    continuity: np.ndarray
    hamilton_jacobi: np.ndarray
    z: np.ndarray

    def sup(self, which="hamilton_jacobi", region=None):
        """Sup-norm over finite entries, optionally restricted to ``region=(lo, hi)``."""
        field = getattr(self, which)
        cols = np.ones(self.z.shape, dtype=bool)
        if region is not None:
            cols = (self.z >= region[0]) & (self.z <= region[1])
        vals = field[:, cols]
        vals = vals[np.isfinite(vals)]
        return float(np.max(np.abs(vals))) if vals.size else 0.0


def residuals(frames, U, constants=None, threshold=NODE_THRESHOLD):
    """Continuity and Hamilton-Jacobi residuals at every interior time slice.

    ``frames`` are equally spaced in time.  Continuity is checked as
    d rho/dt + d/dx (rho S'/m) = 0 and Hamilton-Jacobi as
    -dS/dt - [S'^2/2m + U + U_Q] = 0.  Phase derivatives come from
    Im(conj(psi) psi') / |psi|^2 and the angle of psi(t+dt)/psi(t-dt), so no
    unwrapping is needed.  Points near nodes are NaN.
    """
    constants = constants or PhysicalConstants()
    if len(frames) < 3:
        raise InvalidInputError("residuals need at least three time slices")
    z = frames[0].z
    h = frames[0].h
    dts = np.diff([f.t for f in frames])
    if not np.allclose(dts, dts[0], rtol=1e-9) or dts[0] <= 0:
        raise InvalidInputError("frames must be equally spaced in time")
    dt = dts[0]
    U = _potential_on(z, U)
    hbar, m = constants.hbar, constants.mass
    cont, hj, times = [], [], []
    for prev, cur, nxt in zip(frames, frames[1:], frames[2:]):
        psi = cur.psi
        rho = cur.rho
        mask = (rho < threshold) | (prev.rho < threshold) | (nxt.rho < threshold)
        mask[[0, -1]] = True
        dpsi = np.zeros_like(psi)
        dpsi[1:-1] = (psi[2:] - psi[:-2]) / (2 * h)
        with np.errstate(divide="ignore", invalid="ignore"):
            grad_S = hbar * np.imag(np.conj(psi) * dpsi) / rho
        flux = np.where(mask, 0.0, rho * grad_S / m)
        dflux = np.full_like(flux, np.nan)
        dflux[1:-1] = (flux[2:] - flux[:-2]) / (2 * h)
        rho_dot = (nxt.rho - prev.rho) / (2 * dt)
        S_dot = hbar * np.angle(nxt.psi * np.conj(prev.psi)) / (2 * dt)
        UQ = quantum_potential(rho, z, constants, threshold)
        c_res = rho_dot + dflux
        h_res = -S_dot - (grad_S**2 / (2 * m) + U + UQ)
        # flux differences need valid neighbours on both sides
        wide = mask.copy()
        wide[1:-1] |= mask[2:] | mask[:-2]
        c_res[wide] = np.nan
        h_res[mask] = np.nan
        cont.append(c_res)
        hj.append(h_res)
        times.append(cur.t)
    return Residuals(np.array(times), np.array(cont), np.array(hj), z)


def nonlinear_substeps(h, dt, prefactor, constants=None):
    """Substeps per step keeping the self-consistent kick stable.

    Linearizing the correction about a smooth density gives grid-scale
    modes of frequency about k^3 sqrt(prefactor / m) at k = pi / h; the
    explicit kick stays stable while that frequency times the substep is
    at most one.
    """
    constants = constants or PhysicalConstants()
    if prefactor <= 0:
        return 1
    omega = (math.pi / h) ** 3 * math.sqrt(prefactor / constants.mass)
    return max(1, math.ceil(omega * dt))


def evolve_nonlinear(psi, U, N, r_prime, dt, steps, constants=None, d=1, mode="self_consistent",
                     record_every=None):
    """Evolution with the density-dependent correction added to U.

    Kick-drift-kick splitting: half a correction kick, one Crank-Nicolson
    step, half a kick.  ``mode="frozen"`` keeps the correction computed from
    the initial density; the default recomputes it from |psi|^2 at every
    kick.  With a zero prefactor (``N = inf``) every kick multiplies by 1,
    so the result matches :func:`evolve` exactly.  Self-consistent runs
    split each step into :func:`nonlinear_substeps` substeps.
    """
    constants = constants or PhysicalConstants()
    if mode not in ("self_consistent", "frozen"):
        raise InvalidInputError("mode must be 'self_consistent' or 'frozen'")
    U = _potential_on(psi.z, U)
    check_resolution(psi, U, constants)
    solver = _CrankNicolson(U, psi.h, dt, constants)
    prefactor = correction_prefactor(N, r_prime, d, constants)

    def correction(state, first=False):
        if prefactor == 0.0:
            return np.zeros(state.z.size - 2)
        field = correction_potential(state, N, r_prime, d, constants, check_resolution=first)
        return np.nan_to_num(field, nan=0.0)[1:-1]

    substeps = nonlinear_substeps(psi.h, dt, prefactor, constants) if mode == "self_consistent" else 1
    dt_sub = dt / substeps
    if substeps > 1:
        solver = _CrankNicolson(U, psi.h, dt_sub, constants)
    kick_factor = -0.5j * dt_sub / constants.hbar
    # kicks change only the phase, so one correction serves the closing kick
    # of a step and the opening kick of the next
    dU = correction(psi, first=True)
    inner = psi.psi[1:-1].copy()
    frames = [psi] if record_every else None
    for n in range(1, steps + 1):
        for _ in range(substeps):
            inner = inner * np.exp(kick_factor * dU)
            inner = solver.step(inner)
            if mode == "self_consistent":
                dU = correction(_wrap(psi, inner, 0.0))
            inner = inner * np.exp(kick_factor * dU)
        if record_every and (n % record_every == 0 or n == steps):
            frames.append(_wrap(psi, inner, psi.t + n * dt))
    return frames if record_every else _wrap(psi, inner, psi.t + steps * dt)


def write_snapshot(psi, path, hbar=1.0):
    """CSV with columns x, re_psi, im_psi, rho, S_masked (empty on nodes)."""
    pair = madelung_decompose(psi, hbar)
    with open(path, "w", newline="") as fh:
        fh.write(f"# schema_version={SCHEMA_VERSION}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["x", "re_psi", "im_psi", "rho", "S_masked"])
        for x, p, r, s in zip(psi.z, psi.psi, pair.rho, pair.S):
            writer.writerow([repr(float(x)), repr(float(p.real)), repr(float(p.imag)),
                             repr(float(r)), "" if math.isnan(s) else repr(float(s))])
