"""Ordinary external potentials U(x), shared by the ensemble dynamics and the grid solver."""

from __future__ import annotations

import numpy as np

from .errors import InvalidInputError


class ExternalPotential:
    """Base class: per-member energies, gradients, and grid sampling."""

    name = "custom"

    def energy(self, x):
        raise NotImplementedError

    def gradient(self, x):
        raise NotImplementedError

    def total(self, x):
        return float(np.sum(self.energy(x)))

    def on_grid(self, z):
        z = np.asarray(z, dtype=float)
        return self.energy(z[:, None])

    def params(self):
        return {}


class FreePotential(ExternalPotential):
    name = "free"

    def energy(self, x):
        return np.zeros(np.shape(x)[0])

    def gradient(self, x):
        return np.zeros(np.shape(x))


class HarmonicPotential(ExternalPotential):
    """U(x) = m w^2 |x - c|^2 / 2."""

    name = "harmonic"

    def __init__(self, omega=1.0, mass=1.0, center=0.0):
        if omega <= 0 or mass <= 0:
            raise InvalidInputError("harmonic potential needs omega > 0 and mass > 0")
        self.omega = float(omega)
        self.mass = float(mass)
        self.center = center

    def energy(self, x):
        d = np.asarray(x, dtype=float) - self.center
        return 0.5 * self.mass * self.omega**2 * np.einsum("na,na->n", d, d)

    def gradient(self, x):
        return self.mass * self.omega**2 * (np.asarray(x, dtype=float) - self.center)

    def params(self):
        return {"omega": self.omega, "mass": self.mass}


def make_potential(name, mass=1.0, **params):
    if name in (None, "free", "zero"):
        return FreePotential()
    if name == "harmonic":
        return HarmonicPotential(params.get("omega", 1.0), mass, params.get("center", 0.0))
    raise InvalidInputError(f"unknown potential {name!r}")
