"""Ensemble state: member positions, unit-modulus phases, constants, cutoffs."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np
from scipy.integrate import trapezoid
from scipy.spatial import cKDTree
from scipy.special import erf

from .errors import InvalidInputError

PHASE_TOL = 1e-12
RELATIVE_EPSILON = 1e-9


@dataclass(frozen=True)
class PhysicalConstants:
    hbar: float = 1.0
    mass: float = 1.0
    dim: int = 1

    def __post_init__(self):
        if not (self.hbar > 0 and math.isfinite(self.hbar)):
            raise InvalidInputError(f"hbar must be positive, got {self.hbar}")
        if not (self.mass > 0 and math.isfinite(self.mass)):
            raise InvalidInputError(f"mass must be positive, got {self.mass}")
        if int(self.dim) != self.dim or self.dim < 1:
            raise InvalidInputError(f"dim must be a positive integer, got {self.dim}")


@dataclass(frozen=True)
class CutoffParams:
    """View horizon, minimum separation and normalization constants.

    ``epsilon_min=None`` means "1e-9 times the ensemble diameter", resolved
    per state by :meth:`EnsembleState.epsilon_min`.
    """

    R: float = math.inf
    epsilon_min: Optional[float] = None
    A: float = 1.0
    Z: float = 1.0
    Z0: float = 1.0
    ZKE: float = 1.0

    def __post_init__(self):
        if not (self.R > 0):
            raise InvalidInputError(f"R must be > 0 or inf, got {self.R}")
        if self.epsilon_min is not None and not (self.epsilon_min > 0):
            raise InvalidInputError(f"epsilon_min must be > 0, got {self.epsilon_min}")
        for name in ("A", "Z", "Z0", "ZKE"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise InvalidInputError(f"{name} must be finite and > 0, got {value}")


@dataclass(frozen=True)
class DensitySpec:
    """A one-dimensional probability density (isotropic product for d > 1).

    Use the :meth:`uniform`, :meth:`gaussian` and :meth:`custom`
    constructors rather than building instances directly.
    """

    kind: str
    params: tuple = ()
    grid: Optional[np.ndarray] = field(default=None, compare=False, repr=False)
    values: Optional[np.ndarray] = field(default=None, compare=False, repr=False)

    @classmethod
    def uniform(cls, low=0.0, high=1.0):
        if not high > low:
            raise InvalidInputError("uniform density needs high > low")
        return cls("uniform", (float(low), float(high)))

    @classmethod
    def gaussian(cls, mean=0.0, sigma=1.0):
        if not sigma > 0:
            raise InvalidInputError("gaussian density needs sigma > 0")
        return cls("gaussian", (float(mean), float(sigma)))

    @classmethod
    def custom(cls, grid, values, normalize=True):
        grid = np.asarray(grid, dtype=float)
        values = np.asarray(values, dtype=float)
        if grid.ndim != 1 or grid.shape != values.shape or grid.size < 2:
            raise InvalidInputError("custom density needs matching 1D grid and values")
        if np.any(np.diff(grid) <= 0):
            raise InvalidInputError("custom density grid must be strictly increasing")
        if np.any(values < 0) or not np.all(np.isfinite(values)):
            raise InvalidInputError("density must be finite and nonnegative")
        total = trapezoid(values, grid)
        if normalize:
            if total <= 0:
                raise InvalidInputError("density integrates to zero")
            values = values / total
        elif abs(total - 1.0) > 1e-9:
            raise InvalidInputError(f"density integrates to {total}, not 1")
        grid.setflags(write=False)
        values.setflags(write=False)
        return cls("custom", (), grid, values)

    @classmethod
    def from_name(cls, name, **params):
        if name == "uniform":
            return cls.uniform(params.get("low", 0.0), params.get("high", 1.0))
        if name == "gaussian":
            return cls.gaussian(params.get("mean", 0.0), params.get("sigma", 1.0))
        raise InvalidInputError(f"unknown density {name!r}")

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "uniform":
            lo, hi = self.params
            return np.where((x >= lo) & (x <= hi), 1.0 / (hi - lo), 0.0)
        if self.kind == "gaussian":
            mu, s = self.params
            return np.exp(-0.5 * ((x - mu) / s) ** 2) / (s * math.sqrt(2 * math.pi))
        return np.interp(x, self.grid, self.values, left=0.0, right=0.0)

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "uniform":
            lo, hi = self.params
            return np.clip((x - lo) / (hi - lo), 0.0, 1.0)
        if self.kind == "gaussian":
            mu, s = self.params
            return 0.5 * (1.0 + erf((x - mu) / (s * math.sqrt(2))))
        return np.interp(x, self.grid, self._cumulative(), left=0.0, right=1.0)

    def _cumulative(self):
        steps = 0.5 * (self.values[1:] + self.values[:-1]) * np.diff(self.grid)
        cum = np.concatenate([[0.0], np.cumsum(steps)])
        return cum / cum[-1]

    def support(self, width=8.0):
        """A finite interval carrying essentially all of the probability."""
        if self.kind == "uniform":
            return self.params
        if self.kind == "gaussian":
            mu, s = self.params
            return (mu - width * s, mu + width * s)
        return (float(self.grid[0]), float(self.grid[-1]))

    def draw(self, rng, size):
        if self.kind == "uniform":
            lo, hi = self.params
            return rng.uniform(lo, hi, size)
        if self.kind == "gaussian":
            mu, s = self.params
            return rng.normal(mu, s, size)
        u = rng.uniform(0.0, 1.0, size)
        cum = self._cumulative()
        # drop flat segments so the inverse CDF is single valued
        keep = np.concatenate([[True], np.diff(cum) > 0])
        return np.interp(u, cum[keep], self.grid[keep])


def _frozen(a, dtype):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class EnsembleState:
    """Immutable value holding the beables (x_k, w_k) of an N-member ensemble."""

    positions: np.ndarray
    phases: np.ndarray
    constants: PhysicalConstants = field(default_factory=PhysicalConstants)
    cutoffs: CutoffParams = field(default_factory=CutoffParams)

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=float)
        if pos.ndim == 1:
            pos = pos[:, None]
        if pos.ndim != 2 or pos.shape[1] != self.constants.dim:
            raise InvalidInputError(
                f"positions must have shape (N, {self.constants.dim}), got {pos.shape}")
        if pos.shape[0] < 1:
            raise InvalidInputError("an ensemble needs at least one member")
        if not np.all(np.isfinite(pos)):
            raise InvalidInputError("positions must be finite")
        ph = np.asarray(self.phases, dtype=complex).reshape(-1)
        if ph.shape[0] != pos.shape[0]:
            raise InvalidInputError("phases and positions disagree on N")
        object.__setattr__(self, "positions", _frozen(pos, float))
        object.__setattr__(self, "phases", _frozen(ph, complex))

    @classmethod
    def from_positions(cls, positions, constants=None, cutoffs=None, phases=None):
        pos = np.asarray(positions, dtype=float)
        constants = constants or PhysicalConstants(dim=pos.shape[1] if pos.ndim == 2 else 1)
        n = pos.shape[0]
        if phases is None:
            phases = np.ones(n, dtype=complex)
        return cls(pos, phases, constants, cutoffs or CutoffParams())

    @property
    def N(self):
        return self.positions.shape[0]

    @property
    def dim(self):
        return self.positions.shape[1]

    @property
    def actions(self):
        """S_k in (-pi*hbar, pi*hbar], recovered from the stored phases."""
        return self.constants.hbar * np.angle(self.phases)

    def diameter(self):
        if self.N < 2:
            return 0.0
        span = self.positions.max(axis=0) - self.positions.min(axis=0)
        return float(np.linalg.norm(span))

    def epsilon_min(self):
        if self.cutoffs.epsilon_min is not None:
            return self.cutoffs.epsilon_min
        diam = self.diameter()
        return RELATIVE_EPSILON * diam if diam > 0 else RELATIVE_EPSILON

    def with_positions(self, positions):
        return replace(self, positions=positions)

    def with_phases(self, phases):
        return replace(self, phases=phases)

    def with_cutoffs(self, **changes):
        return replace(self, cutoffs=replace(self.cutoffs, **changes))

    def permuted(self, order):
        order = np.asarray(order)
        return replace(self, positions=self.positions[order], phases=self.phases[order])


@dataclass
class ValidationReport:
    coincident: list = field(default_factory=list)
    nonunit: list = field(default_factory=list)

    @property
    def ok(self):
        return not self.coincident and not self.nonunit

    def __bool__(self):
        return self.ok


def close_pairs(positions, radius):
    """Index pairs (i < j) with separation strictly below ``radius``."""
    positions = np.asarray(positions, dtype=float)
    if positions.shape[0] < 2:
        return np.empty((0, 2), dtype=np.intp)
    tree = cKDTree(positions)
    pairs = tree.query_pairs(radius, output_type="ndarray")
    if pairs.size == 0:
        return np.empty((0, 2), dtype=np.intp)
    sep = np.linalg.norm(positions[pairs[:, 0]] - positions[pairs[:, 1]], axis=1)
    pairs = np.sort(pairs[sep < radius], axis=1)
    return pairs[np.lexsort((pairs[:, 1], pairs[:, 0]))]


def validate_state(state):
    """Report coincident member pairs and non-unit phases; never raises."""
    report = ValidationReport()
    for i, j in close_pairs(state.positions, state.epsilon_min()):
        report.coincident.append((int(i), int(j)))
    bad = np.nonzero(np.abs(np.abs(state.phases) - 1.0) > PHASE_TOL)[0]
    report.nonunit.extend(int(k) for k in bad)
    return report


def sample_ensemble(spec, N, seed, constants=None, cutoffs=None, max_redraws=1000):
    """Draw N i.i.d. members from ``spec``; phases start at w_k = 1.

    Later members that land within epsilon_min of an earlier one are
    redrawn, so the result is deterministic for a fixed seed.
    """
    if not isinstance(spec, DensitySpec):
        raise InvalidInputError("spec must be a DensitySpec")
    if int(N) != N or N < 1:
        raise InvalidInputError(f"N must be a positive integer, got {N}")
    N = int(N)
    constants = constants or PhysicalConstants()
    cutoffs = cutoffs or CutoffParams()
    rng = np.random.default_rng(seed)
    d = constants.dim
    pos = np.stack([spec.draw(rng, N) for _ in range(d)], axis=1)
    state = EnsembleState(pos, np.ones(N, dtype=complex), constants, cutoffs)
    for _ in range(max_redraws):
        clash = close_pairs(state.positions, state.epsilon_min())
        if clash.size == 0:
            return state
        later = np.unique(clash[:, 1])
        pos = np.array(state.positions)
        pos[later] = np.stack([spec.draw(rng, later.size) for _ in range(d)], axis=1)
        state = state.with_positions(pos)
    raise InvalidInputError("could not separate sampled members; density too concentrated")


def set_phases_from_field(state, S_field: Callable):
    """Set w_k = exp(i S(x_k) / hbar) from an action field S(x)."""
    x = state.positions[:, 0] if state.dim == 1 else state.positions
    S = np.asarray(S_field(x), dtype=float).reshape(-1)
    if S.shape[0] != state.N:
        S = np.array([float(S_field(p)) for p in x])
    if not np.all(np.isfinite(S)):
        raise InvalidInputError("action field is not finite at every member")
    return state.with_phases(np.exp(1j * S / state.constants.hbar))
