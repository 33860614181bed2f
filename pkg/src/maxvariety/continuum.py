"""Discrete-to-continuum dictionary: density fields, cutoff scalings, normalization
constants, the continuum variety, kinetic-energy checks and the density-dependent
correction to the quantum potential.

All continuum formulas work on uniform 1D grids.  Horizon ratios are evaluated
locally, r(z) = R (N rho(z))^(1/d), so the normalization constants sit inside the
z-integral; members whose local ratio is <= 1 have no well-defined
normalization and are excluded from the sums.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.integrate import trapezoid
from scipy.special import gamma as gamma_fn
from scipy.stats import gaussian_kde

from .dynamics import kinetic_energy
from .ensemble import CutoffParams, DensitySpec, PhysicalConstants, sample_ensemble, set_phases_from_field
from .errors import InvalidInputError, ResolutionError
from .variety import variety

DENSITY_FLOOR = 1e-12
ENDPOINT_TOL = 1e-10
RESOLUTION_TOL = 0.01
SCHEMA_VERSION = 1
TABLE_COLUMNS = ("N", "seed", "R", "r_prime", "discrete_value", "continuum_value", "rel_discrepancy")


def solid_angle(d):
    """Surface area of the unit (d-1)-sphere: 2 at d=1, 2 pi at d=2, 4 pi at d=3."""
    if int(d) != d or d < 1:
        raise InvalidInputError(f"dimension must be a positive integer, got {d}")
    return 2.0 * math.pi ** (d / 2.0) / gamma_fn(d / 2.0)


@dataclass(frozen=True)
class ContinuumField:
    """Density (and optional action) sampled on a uniform grid."""

    z: np.ndarray
    rho: np.ndarray
    S: Optional[np.ndarray] = None

    def __post_init__(self):
        z = np.asarray(self.z, dtype=float)
        rho = np.asarray(self.rho, dtype=float)
        if z.ndim != 1 or z.shape != rho.shape or z.size < 5:
            raise InvalidInputError("field needs matching 1D grid and density with >= 5 points")
        steps = np.diff(z)
        if not np.allclose(steps, steps[0], rtol=1e-9, atol=0.0) or steps[0] <= 0:
            raise InvalidInputError("grid must be uniform and increasing")
        if np.any(rho < 0) or not np.all(np.isfinite(rho)):
            raise InvalidInputError("density must be finite and nonnegative")
        total = trapezoid(rho, z)
        if abs(total - 1.0) > 1e-9:
            raise InvalidInputError(f"density integrates to {total!r}, not 1")
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "rho", rho)
        if self.S is not None:
            S = np.asarray(self.S, dtype=float)
            if S.shape != z.shape:
                raise InvalidInputError("action field must match the grid")
            object.__setattr__(self, "S", S)

    @property
    def h(self):
        return float(self.z[1] - self.z[0])

    @classmethod
    def from_values(cls, z, rho, S=None):
        z = np.asarray(z, dtype=float)
        rho = np.asarray(rho, dtype=float)
        return cls(z, rho / trapezoid(rho, z), S)

    @classmethod
    def from_spec(cls, spec: DensitySpec, n_points=4001, width=10.0, S_field=None):
        lo, hi = spec.support(width)
        z = np.linspace(lo, hi, n_points)
        S = None if S_field is None else np.asarray(S_field(z), dtype=float)
        return cls.from_values(z, spec.pdf(z), S)

    @classmethod
    def from_samples(cls, samples, n_points=4001, pad=6.0, bandwidth="silverman"):
        """Gaussian kernel density estimate of 1D samples."""
        samples = np.asarray(samples, dtype=float).reshape(-1)
        if samples.size < 2:
            raise InvalidInputError("need at least two samples")
        kde = gaussian_kde(samples, bw_method=bandwidth)
        bw = math.sqrt(float(kde.covariance[0, 0]))
        z = np.linspace(samples.min() - pad * bw, samples.max() + pad * bw, n_points)
        return cls.from_values(z, kde(z))

    def coarsened(self):
        """Every second grid point, renormalized."""
        S = None if self.S is None else self.S[::2]
        return ContinuumField.from_values(self.z[::2], self.rho[::2], S)


def _as_field(obj):
    if isinstance(obj, ContinuumField):
        return obj
    if isinstance(obj, DensitySpec):
        return ContinuumField.from_spec(obj)
    rho = getattr(obj, "rho", None)
    if rho is not None and hasattr(obj, "z"):
        return ContinuumField.from_values(obj.z, rho)
    raise InvalidInputError("expected a ContinuumField, DensitySpec or grid wavefunction")


def nn_density(state):
    """Per-member density from nearest-neighbour gaps, 1/(N * gap), in input order.

    Interior members use the mean of their left and right gaps, the two end
    members their single gap.
    """
    if state.dim != 1:
        raise InvalidInputError("nn_density is one-dimensional")
    N = state.N
    if N < 2:
        raise InvalidInputError("nn_density needs at least two members")
    x = state.positions[:, 0]
    order = np.argsort(x, kind="stable")
    gaps = np.diff(x[order])
    spacing = np.empty(N)
    spacing[0], spacing[-1] = gaps[0], gaps[-1]
    spacing[1:-1] = 0.5 * (gaps[:-1] + gaps[1:])
    out = np.empty(N)
    out[order] = 1.0 / (N * spacing)
    return out


@dataclass(frozen=True)
class CutoffScaling:
    N: int
    d: int
    R: float
    a: np.ndarray
    r: np.ndarray
    r_prime: float
    omega: float
    valid: np.ndarray

    @property
    def excluded(self):
        return int(np.count_nonzero(~self.valid))


def local_horizon_ratio(N, rho, R, d=1):
    """r = R / a with a = (N rho)^(-1/d); zero where rho vanishes."""
    rho = np.asarray(rho, dtype=float)
    return R * (N * np.clip(rho, 0.0, None)) ** (1.0 / d)


def cutoff_scaling(N, rho_field, R, d=1):
    """UV cutoff a(z), horizon ratio r(z) and r' = N^(1/d) R.

    ``rho_field`` is a :class:`ContinuumField` or an array of density values.
    Points with rho = 0 get a = inf, r = 0 and are flagged invalid, as are
    points with r <= 1.
    """
    if not R > 0:
        raise InvalidInputError("R must be positive")
    if int(N) != N or N < 1:
        raise InvalidInputError("N must be a positive integer")
    rho = rho_field.rho if isinstance(rho_field, ContinuumField) else np.asarray(rho_field, float)
    with np.errstate(divide="ignore"):
        a = np.where(rho > 0, (N * np.where(rho > 0, rho, 1.0)) ** (-1.0 / d), np.inf)
    r = local_horizon_ratio(N, rho, R, d)
    return CutoffScaling(int(N), d, float(R), a, r, float(N ** (1.0 / d) * R), solid_angle(d), r > 1.0)


@dataclass(frozen=True)
class NormalizationConstants:
    Z_V: object
    Z_KE: object
    Z_0: object


def normalization_constants(N, r, d=1, approximate=False):
    """Variety, kinetic and phase normalization constants for horizon ratio ``r``.

    ``r`` may be an array (local ratios).  ``approximate=True`` returns the
    large-r form of Z_V, d^2 / (2 N Omega^2 r^(2d)), as usually quoted.
    """
    if N < 1 or d < 1:
        raise InvalidInputError("need N >= 1 and d >= 1")
    r_arr = np.asarray(r, dtype=float)
    if np.any(r_arr <= 1.0):
        raise InvalidInputError("horizon ratio r must exceed 1")
    omega = solid_angle(d)
    shell = r_arr**d - 1.0
    if approximate:
        Z_V = d**2 / (2.0 * N * omega**2 * r_arr ** (2 * d))
    else:
        Z_V = d**2 / (N * omega**2 * shell**2)
    Z_KE = N / (shell * omega)
    Z_0 = d * N / (omega * shell)
    if np.ndim(r) == 0:
        Z_V, Z_KE, Z_0 = float(Z_V), float(Z_KE), float(Z_0)
    return NormalizationConstants(Z_V, Z_KE, Z_0)


def _grid_mask(rho):
    return rho >= DENSITY_FLOOR


def _check_support(rho, drho):
    """Warn when the density vanishes strictly inside its support or is cut off at the ends."""
    pos = np.nonzero(rho > 0)[0]
    if pos.size and np.any(rho[pos[0]:pos[-1] + 1] == 0):
        warnings.warn("density touches zero inside its support; integrating over the "
                      "positive part only", RuntimeWarning, stacklevel=3)
    ends = np.array([0, -1])
    if np.any((rho[ends] > ENDPOINT_TOL) & (np.abs(drho[ends]) > ENDPOINT_TOL)):
        warnings.warn("density does not vanish at the grid ends; dropped boundary terms "
                      "may matter", RuntimeWarning, stacklevel=3)


def _fisher_integral(z, rho):
    drho = np.gradient(rho, z[1] - z[0])
    mask = _grid_mask(rho)
    integrand = np.zeros_like(rho)
    integrand[mask] = drho[mask] ** 2 / rho[mask]
    return float(trapezoid(integrand, z)), drho


def fisher_functional(rho_field, return_error=False):
    """Integral of rho (rho'/rho)^2 by trapezoid quadrature with centred differences.

    With ``return_error=True`` also returns |I_h - I_2h| / 3, the usual
    estimate for a second-order rule.
    """
    f = _as_field(rho_field)
    value, drho = _fisher_integral(f.z, f.rho)
    _check_support(f.rho, drho)
    if not return_error:
        return value
    coarse, _ = _fisher_integral(f.z[::2], f.rho[::2])
    return value, abs(value - coarse) / 3.0


@dataclass(frozen=True)
class ContinuumVariety:
    horizon_term: float
    fisher_term: float
    correction_term: float

    @property
    def total(self):
        return self.horizon_term + self.fisher_term + self.correction_term


def laplacian_term(rho_field):
    """Integral of (rho'')^2 / rho over the resolved support."""
    f = _as_field(rho_field)
    h = f.h
    d2 = np.zeros_like(f.rho)
    d2[1:-1] = (f.rho[2:] - 2.0 * f.rho[1:-1] + f.rho[:-2]) / h**2
    mask = _grid_mask(f.rho)
    integrand = np.zeros_like(f.rho)
    integrand[mask] = d2[mask] ** 2 / f.rho[mask]
    return float(trapezoid(integrand, f.z))


def continuum_variety(rho_field, scaling: CutoffScaling):
    """Continuum variety split into horizon, Fisher and first correction terms.

    The correction carries d/(d+2) (r'^2 / N^(2/d)); at d=1 this matches
    the coefficient used in :func:`correction_potential`.
    """
    f = _as_field(rho_field)
    d = scaling.d
    coeff = (d / (d + 2.0)) * scaling.r_prime**2 / scaling.N ** (2.0 / d)
    return ContinuumVariety(1.0 / scaling.R**2, -fisher_functional(f), coeff * laplacian_term(f))


@dataclass
class ConvergenceTable:
    rows: list = field(default_factory=list)
    label: str = ""

    def column(self, name):
        return np.array([row[name] for row in self.rows])

    def N_values(self):
        return sorted({row["N"] for row in self.rows})

    def medians(self, column="rel_discrepancy"):
        return {N: float(np.median([r[column] for r in self.rows if r["N"] == N]))
                for N in self.N_values()}

    def is_decreasing(self, column="rel_discrepancy"):
        med = list(self.medians(column).values())
        return all(b < a for a, b in zip(med, med[1:]))

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            fh.write(f"# schema_version={SCHEMA_VERSION}\n")
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(TABLE_COLUMNS)
            for row in self.rows:
                writer.writerow([repr(row[c]) if isinstance(row[c], float) else row[c]
                                 for c in TABLE_COLUMNS])


def _rel(discrete, continuum):
    if continuum == 0.0:
        return abs(discrete)
    return abs(discrete - continuum) / abs(continuum)


def _variety_cell(args):
    spec, N, seed, r_prime, d, A, include_correction = args
    R = r_prime / N ** (1.0 / d)
    cutoffs = CutoffParams(R=R, A=A)
    state = sample_ensemble(spec, N, seed, PhysicalConstants(dim=d), cutoffs)
    local = variety(state, with_pairs=False).local
    rho = np.prod(spec.pdf(state.positions), axis=1)
    r = local_horizon_ratio(N, rho, R, d)
    keep = r > 1.0
    Z_V = normalization_constants(N, r[keep], d).Z_V
    discrete = A / N * float(np.sum(Z_V * local[keep])) - 1.0 / R**2
    cont = continuum_variety(spec, cutoff_scaling(N, np.ones(1), R, d))
    predicted = cont.fisher_term + (cont.correction_term if include_correction else 0.0)
    return {"N": int(N), "seed": int(seed), "R": R, "r_prime": float(r_prime),
            "discrete_value": discrete, "continuum_value": predicted,
            "rel_discrepancy": _rel(discrete, predicted)}


def _check_sweep(N_list, seeds):
    N_list = [int(n) for n in N_list]
    if any(b <= a for a, b in zip(N_list, N_list[1:])):
        raise InvalidInputError("N_list must be strictly increasing")
    if not len(seeds):
        raise InvalidInputError("at least one seed is required")
    return N_list


def discrete_vs_continuum(spec, N_list, seeds, r_prime=1000.0, d=1, A=1.0,
                          include_correction=False, map_fn=map):
    """Normalized discrete variety minus 1/R^2 against the continuum prediction.

    R follows R = r' / N^(1/d) for every N.  The continuum side is the Fisher
    term, plus the first correction when ``include_correction`` is set.
    ``map_fn`` lets callers run the (N, seed) cells in a pool; rows come back
    in cell order either way.
    """
    if d != 1:
        raise InvalidInputError("continuum sweeps are one-dimensional")
    N_list = _check_sweep(N_list, seeds)
    cells = [(spec, N, s, r_prime, d, A, include_correction) for N in N_list for s in seeds]
    return ConvergenceTable(list(map_fn(_variety_cell, cells)), "variety")


def _ke_cell(args):
    spec, S_field, N, seed, r_prime, constants = args
    R = r_prime / N
    state = sample_ensemble(spec, N, seed, constants, CutoffParams(R=R))
    state = set_phases_from_field(state, S_field)
    rho = spec.pdf(state.positions[:, 0])
    r = local_horizon_ratio(N, rho, R, 1)
    keep = r > 1.0
    Z = np.zeros(N)
    Z[keep] = normalization_constants(N, r[keep], 1).Z_KE
    discrete = kinetic_energy(state, Z=Z)
    target = ke_target(spec, S_field, constants)
    return {"N": int(N), "seed": int(seed), "R": R, "r_prime": float(r_prime),
            "discrete_value": discrete, "continuum_value": target,
            "rel_discrepancy": _rel(discrete, target)}


def ke_target(spec, S_field: Callable, constants=None, n_points=8001):
    """Quadrature of rho (S')^2 / 2m."""
    constants = constants or PhysicalConstants()
    f = ContinuumField.from_spec(spec, n_points, S_field=S_field)
    dS = np.gradient(f.S, f.h)
    return float(trapezoid(f.rho * dS**2, f.z)) / (2.0 * constants.mass)


def ke_continuum_check(spec, S_field, N_list, seeds, r_prime=1000.0, constants=None,
                       map_fn=map):
    """Normalized discrete phase kinetic energy against the continuum integral."""
    constants = constants or PhysicalConstants()
    if constants.dim != 1:
        raise InvalidInputError("kinetic-energy sweeps are one-dimensional")
    N_list = _check_sweep(N_list, seeds)
    cells = [(spec, S_field, N, s, r_prime, constants) for N in N_list for s in seeds]
    return ConvergenceTable(list(map_fn(_ke_cell, cells)), "kinetic")


def _log_derivative_bracket(rho, h):
    """rho''''/rho - 2 (rho''/rho)^2 - 2 rho' rho'''/rho^2 via derivatives of ln rho.

    In terms of l = ln rho the bracket is l4 + 2 l1 l3 + l2^2 - 4 l1^2 l2 - 3 l1^4,
    which avoids dividing small stencil differences by a vanishing density.
    Points within two cells of the ends or below the density floor are NaN.
    """
    out = np.full(rho.shape, np.nan)
    if rho.size < 5:
        return out
    with np.errstate(divide="ignore"):
        ell = np.log(np.where(rho > 0, rho, np.nan))
    m2, m1, c, p1, p2 = ell[:-4], ell[1:-3], ell[2:-2], ell[3:-1], ell[4:]
    l1 = (p1 - m1) / (2 * h)
    l2 = (p1 - 2 * c + m1) / h**2
    l3 = (p2 - 2 * p1 + 2 * m1 - m2) / (2 * h**3)
    l4 = (p2 - 4 * p1 + 6 * c - 4 * m1 + m2) / h**4
    out[2:-2] = l4 + 2 * l1 * l3 + l2**2 - 4 * l1**2 * l2 - 3 * l1**4
    out[rho < DENSITY_FLOOR] = np.nan
    return out


def correction_prefactor(N, r_prime, d=1, constants=None):
    constants = constants or PhysicalConstants()
    return (r_prime**2 / N ** (2.0 / d)) * (d / (d + 2.0)) * constants.hbar**2 / (2.0 * constants.mass)


def correction_potential(rho_field, N, r_prime, d=1, constants=None, check_resolution=True):
    """Density-dependent correction to the quantum potential on the field's grid.

    Masked points (density floor, two cells at each end) are NaN.  When
    ``check_resolution`` is on, the bracket is recomputed on the grid with
    twice the spacing and a relative change above 1% (density-weighted L2)
    raises :class:`ResolutionError`.
    """
    f = _as_field(rho_field)
    bracket = _log_derivative_bracket(f.rho, f.h)
    if check_resolution:
        coarse = _log_derivative_bracket(f.rho[::2], 2 * f.h)
        fine = bracket[::2]
        ok = np.isfinite(coarse) & np.isfinite(fine)
        w = f.rho[::2][ok]
        norm = math.sqrt(float(np.sum(w * fine[ok] ** 2)))
        diff = math.sqrt(float(np.sum(w * (fine[ok] - coarse[ok]) ** 2)))
        if norm > 0 and diff > RESOLUTION_TOL * norm:
            raise ResolutionError(
                f"grid spacing {f.h:g} too coarse for fourth derivatives "
                f"(two-grid change {diff / norm:.2%})")
    return correction_prefactor(N, r_prime, d, constants) * bracket


def energy_shift(psi_field, correction):
    """First-order energy shift, integral of |psi|^2 times the correction field.

    Masked (NaN) points carry negligible probability and are skipped.
    """
    rho = np.asarray(getattr(psi_field, "rho"), dtype=float)
    z = np.asarray(psi_field.z, dtype=float)
    correction = np.asarray(correction)
    if correction.shape != rho.shape:
        raise InvalidInputError("correction field and wavefunction grids differ")
    if np.iscomplexobj(correction):
        raise InvalidInputError("correction field must be real")
    integrand = np.where(np.isfinite(correction), rho * correction, 0.0)
    return float(trapezoid(integrand, z))


@dataclass
class ShiftScaling:
    N: np.ndarray
    shifts: np.ndarray
    slope: float


def energy_shift_scaling(psi_field, N_list, r_prime, d=1, constants=None):
    """Energy shift for each N at fixed r' and the log-log slope of |shift| against N."""
    N = np.asarray(N_list, dtype=float)
    shifts = np.array([energy_shift(psi_field, correction_potential(
        psi_field, n, r_prime, d, constants, check_resolution=(i == 0)))
        for i, n in enumerate(N)])
    slope = float(np.polyfit(np.log(N), np.log(np.abs(shifts)), 1)[0])
    return ShiftScaling(N, shifts, slope)
