"""Views, distinctiveness, variety and the inter-ensemble potential.

For a fixed third member k, the views V[i][k] of all other members form a set
of n = N - 1 vectors, and the sum of squared differences over ordered pairs
collapses to ``2 n sum|v|^2 - 2 |sum v|^2``.  That identity turns the
O(N^3) triple sum into O(pairs) work; :func:`variety_naive` keeps the literal
triple loop as an oracle.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .ensemble import close_pairs
from .errors import DegenerateConfigurationError, InvalidInputError

NORMALIZATIONS = ("N2", "N(N-1)")
TAPER_FRACTION = 0.05
DENSE_PAIR_LIMIT = 1500


@dataclass(frozen=True)
class ViewSet:
    """Views for unordered pairs (i < k) inside the horizon.

    ``vectors[p]`` is V[i][k] = (x_i - x_k) / |x_i - x_k|^2 (times the taper
    weight when a smooth cutoff is in use); V[k][i] is its negative.
    Pairs outside the horizon are absent and read as zero.
    """

    N: int
    i: np.ndarray
    k: np.ndarray
    vectors: np.ndarray
    separations: np.ndarray
    weights: np.ndarray
    dweights: np.ndarray

    @property
    def dim(self):
        return self.vectors.shape[1]

    def __len__(self):
        return self.i.shape[0]

    def dense(self):
        """(N, N, d) array with V[i, k] filled for every stored ordered pair."""
        out = np.zeros((self.N, self.N, self.dim))
        out[self.i, self.k] = self.vectors
        out[self.k, self.i] = -self.vectors
        return out

    def get(self, i, k):
        if i == k:
            raise InvalidInputError("a member has no view of itself")
        lo, hi, sign = (i, k, 1.0) if i < k else (k, i, -1.0)
        hit = np.nonzero((self.i == lo) & (self.k == hi))[0]
        if hit.size == 0:
            return np.zeros(self.dim)
        return sign * self.vectors[hit[0]]


@dataclass
class VarietyBreakdown:
    total: float
    local: np.ndarray
    pair: Optional[np.ndarray] = None


def _taper(r, R, smooth):
    """Cutoff weight s(r) and its derivative; cosine taper over the last 5% of R."""
    s = np.ones_like(r)
    ds = np.zeros_like(r)
    if smooth and math.isfinite(R):
        w = TAPER_FRACTION * R
        band = r > R - w
        phase = np.pi * (r[band] - (R - w)) / w
        s[band] = 0.5 * (1.0 + np.cos(phase))
        ds[band] = -0.5 * np.pi / w * np.sin(phase)
    return s, ds


def compute_views(state, smooth=False):
    """Pairwise views inside the horizon R (strict ``|x_i - x_k| < R``)."""
    x = state.positions
    N = state.N
    R = state.cutoffs.R
    if N < 2:
        empty = np.empty(0, dtype=np.intp)
        return ViewSet(N, empty, empty, np.empty((0, state.dim)), np.empty(0),
                       np.empty(0), np.empty(0))
    if math.isfinite(R):
        pairs = close_pairs(x, R)
        i, k = pairs[:, 0], pairs[:, 1]
    else:
        i, k = np.triu_indices(N, 1)
    diff = x[i] - x[k]
    sep = np.sqrt(np.einsum("pa,pa->p", diff, diff))
    eps = state.epsilon_min()
    bad = sep < eps
    if np.any(bad):
        raise DegenerateConfigurationError(
            f"{int(bad.sum())} pair(s) closer than epsilon_min={eps:g}",
            pairs=list(zip(i[bad].tolist(), k[bad].tolist())))
    s, ds = _taper(sep, R, smooth)
    vectors = diff * (s / sep**2)[:, None]
    return ViewSet(N, i, k, vectors, sep, s, ds)


def distinctiveness(views, i, j):
    """(1/N) sum over k not in {i, j} of |V[i][k] - V[j][k]|^2."""
    if i == j:
        raise InvalidInputError("distinctiveness needs two different members")
    total = 0.0
    for k in range(views.N):
        if k in (i, j):
            continue
        diff = views.get(i, k) - views.get(j, k)
        total += float(diff @ diff)
    return total / views.N


def _norm_factor(N, normalization):
    if normalization not in NORMALIZATIONS:
        raise InvalidInputError(f"normalization must be one of {NORMALIZATIONS}")
    return 1.0 if normalization == "N2" else N / (N - 1)


def _per_member_sums(views):
    """Per-member |view|^2 totals and view sums F_k = sum_i V[i][k]."""
    N, d = views.N, views.dim
    sq = np.einsum("pa,pa->p", views.vectors, views.vectors)
    n = np.bincount(views.i, sq, N) + np.bincount(views.k, sq, N)
    F = np.empty((N, d))
    for a in range(d):
        F[:, a] = np.bincount(views.k, views.vectors[:, a], N) - np.bincount(
            views.i, views.vectors[:, a], N)
    return n, F


def pair_distinctiveness(views):
    """Upper-triangular matrix of I_ij for every pair (dense, O(N^3))."""
    N = views.N
    V = views.dense()
    norms = np.einsum("ika,ika->i", V, V)
    vij2 = np.einsum("ija,ija->ij", V, V)
    flat = V.reshape(N, -1)
    gram = flat @ flat.T
    I = (norms[:, None] - vij2 + norms[None, :] - vij2.T - 2.0 * gram) / N
    return np.triu(I, 1)


def variety(state, views=None, normalization="N2", with_pairs=None):
    """Total variety, per-member local variety and (optionally) pair terms.

    With ``normalization="N2"`` the total is (A/N^2) sum_{i!=j} I_ij; the
    alternative ``"N(N-1)"`` divides by N(N-1) instead.  When the pair matrix
    is computed the two aggregation orders are cross-checked.
    """
    N = state.N
    if N < 3:
        # distinctiveness needs a third member to compare views of
        return VarietyBreakdown(0.0, np.zeros(N), np.zeros((N, N)))
    views = views if views is not None else compute_views(state)
    scale = _norm_factor(N, normalization)
    A = state.cutoffs.A
    n, F = _per_member_sums(views)
    local = 2.0 * ((N - 1) * n - np.einsum("ka,ka->k", F, F)) / N**2
    total = scale * A / N * float(np.sum(local))
    if with_pairs is None:
        with_pairs = N <= DENSE_PAIR_LIMIT
    pair = None
    if with_pairs:
        pair = pair_distinctiveness(views)
        from_pairs = scale * A / N**2 * 2.0 * float(pair.sum())
        if not math.isclose(from_pairs, total, rel_tol=1e-10, abs_tol=1e-300):
            raise RuntimeError(
                f"variety aggregations disagree: {from_pairs!r} vs {total!r}")
    return VarietyBreakdown(total, local, pair)


def variety_potential(state, views=None, normalization="N2"):
    """U = -(hbar^2 / 8 m) * variety; never positive."""
    c = state.constants
    v = variety(state, views, normalization, with_pairs=False).total
    return -(c.hbar**2) / (8.0 * c.mass) * v


def variety_gradient(state, smooth=False, normalization="N2", views=None):
    """Analytic gradient of :func:`variety_potential`, shape (N, d).

    Horizon membership is frozen, so with a sharp cutoff pairs sitting
    within epsilon_min of R trigger a warning.
    """
    N, d = state.N, state.dim
    grad = np.zeros((N, d))
    if N < 3:
        return grad
    views = views if views is not None else compute_views(state, smooth=smooth)
    R = state.cutoffs.R
    eps = state.epsilon_min()
    if not smooth and math.isfinite(R) and len(views):
        near = np.abs(views.separations - R) < eps
        if np.any(near):
            warnings.warn(f"{int(near.sum())} pair(s) within epsilon_min of the horizon; "
                          "gradient of the sharp cutoff is unreliable there",
                          RuntimeWarning, stacklevel=2)
    scale = _norm_factor(N, normalization)
    c = state.constants
    pref = -(c.hbar**2) / (8.0 * c.mass) * scale * 2.0 * state.cutoffs.A / N**3

    _, F = _per_member_sums(views)
    x = state.positions
    r = x[views.i] - x[views.k]
    rn = views.separations
    s, ds = views.weights, views.dweights
    # d/dr of sum over both orderings of s^2/|r|^2
    dP = 4.0 * r * (s * ds / rn**3 - s**2 / rn**4)[:, None]
    # J(r) (F_k - F_i), J = s (I/|r|^2 - 2 r r^T/|r|^4) + s' r r^T/|r|^3
    g = F[views.k] - F[views.i]
    rg = np.einsum("pa,pa->p", r, g)
    Jg = (s / rn**2)[:, None] * g + ((ds / rn**3 - 2.0 * s / rn**4) * rg)[:, None] * r
    dpair = pref * ((N - 1) * dP - 2.0 * Jg)
    for a in range(d):
        grad[:, a] += np.bincount(views.i, dpair[:, a], N)
        grad[:, a] -= np.bincount(views.k, dpair[:, a], N)
    return grad


def variety_naive(state, normalization="N2"):
    """Literal triple loop over (k, i, j) with the sharp horizon; oracle only."""
    x = state.positions
    N = state.N
    if N < 2:
        return 0.0
    R = state.cutoffs.R

    def view(i, k):
        diff = x[i] - x[k]
        r2 = float(diff @ diff)
        if math.sqrt(r2) >= R:
            return np.zeros_like(diff)
        return diff / r2

    total = 0.0
    for k in range(N):
        for i in range(N):
            if i == k:
                continue
            for j in range(N):
                if j == i or j == k:
                    continue
                diff = view(i, k) - view(j, k)
                total += float(diff @ diff)
    return _norm_factor(N, normalization) * state.cutoffs.A * total / N**3


def three_body_potential(x1, x2, x3, constants=None, signed=True):
    """Closed-form three-member potential in one dimension.

    ``D(i, k)`` is read as the signed separation x_i - x_k, so that 1/D is
    the one-dimensional view; with that reading the value is exactly
    27/2 times |variety_potential| of the same triple.  ``signed=False``
    uses absolute separations instead.
    """
    hbar, mass = (constants.hbar, constants.mass) if constants else (1.0, 1.0)
    x = (float(x1), float(x2), float(x3))
    if len(set(x)) < 3:
        raise DegenerateConfigurationError("coincident members in three-body potential")

    def inv(i, k):
        d = x[i] - x[k]
        return 1.0 / (d if signed else abs(d))

    u32, u21, u13 = inv(2, 1), inv(1, 0), inv(0, 2)
    return hbar**2 / (8.0 * mass) * ((u32 - u21) ** 2 + (u13 - u32) ** 2 + (u21 - u13) ** 2)
