"""Shared phase-space types: domain geometry, initial conditions, gridded
densities and marker ensembles.

Grid convention used throughout the package: the spatial direction is
periodic and node-indexed without the duplicate right endpoint
(``x_i = x_min + i * dx``, ``dx = L / nx``, ``i = 0..nx-1``), while the
velocity direction is bounded and includes both endpoints
(``v_j = v_min + j * dv``, ``dv = (v_max - v_min) / (nv - 1)``).  All
masses and marginals of gridded densities use the trapezoidal rule on
this grid, which in the periodic direction reduces to the plain node sum.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

SQRT_2PI = float(np.sqrt(2.0 * np.pi))


class AllZeroDensity(ValueError):
    """Raised when normalizing a density whose nodes are all zero."""


@dataclass(frozen=True)
class PhaseSpaceDomain:
    """Periodic-in-x, velocity-truncated phase-space box [x_min,x_max]x[v_min,v_max]."""

    x_min: float
    x_max: float
    v_min: float
    v_max: float

    def __post_init__(self):
        if not self.x_max > self.x_min:
            raise ValueError("x_max must exceed x_min")
        if not self.v_max > self.v_min:
            raise ValueError("v_max must exceed v_min")

    @property
    def length(self) -> float:
        """Spatial period L."""
        return self.x_max - self.x_min

    @property
    def v_span(self) -> float:
        return self.v_max - self.v_min

    @property
    def area(self) -> float:
        return self.length * self.v_span

    def wrap_x(self, x):
        """Map positions into [x_min, x_max) by periodicity."""
        return self.x_min + np.mod(np.asarray(x, dtype=float) - self.x_min, self.length)


@dataclass(frozen=True)
class Species:
    """Charge and mass in normalized units."""

    q: float
    m: float

    def __post_init__(self):
        if not self.m > 0:
            raise ValueError("mass must be positive")

    @property
    def q_over_m(self) -> float:
        return self.q / self.m


#: Single electron species in normalized units; the neutralizing ion
#: background is a fixed unit density inside the field solvers.
ELECTRON = Species(q=-1.0, m=1.0)


@dataclass(frozen=True)
class InitialCondition:
    """Perturbed Maxwellian with an optional drifting bump in velocity.

    f(x, v) = (1 - epsilon*cos(k*x))/sqrt(2*pi)
              * [(1-n_b) exp(-v^2/2) + (n_b/sigma_b) exp(-(v-v_b)^2/(2 sigma_b^2))]

    Parameters
    ----------
    epsilon : float
        Perturbation amplitude.
    k : float
        Perturbation wavenumber; the spatial period is L = 2*pi/k.
    n_b : float
        Bump fraction in [0, 1).
    sigma_b : float
        Bump thermal width, > 0.
    v_b : float
        Bump drift velocity.
    """

    epsilon: float
    k: float
    n_b: float = 0.0
    sigma_b: float = 1.0
    v_b: float = 0.0

    def __post_init__(self):
        if not self.k > 0:
            raise ValueError("wavenumber k must be positive")
        if not self.sigma_b > 0:
            raise ValueError("sigma_b must be positive")
        if not (0.0 <= self.n_b < 1.0):
            raise ValueError("n_b must lie in [0, 1)")

    @property
    def length(self) -> float:
        """Spatial period L = 2*pi/k of the perturbation."""
        return 2.0 * np.pi / self.k


def eval_initial_f(ic: InitialCondition, x, v):
    """Evaluate the initial phase-space density at (x, v).

    Vectorized over numpy inputs; x is taken as-is (the cosine makes the
    expression L-periodic), v supports the full real line.
    """
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    bulk = (1.0 - ic.n_b) * np.exp(-0.5 * v * v)
    bump = 0.0
    if ic.n_b != 0.0:
        bump = (ic.n_b / ic.sigma_b) * np.exp(-0.5 * ((v - ic.v_b) / ic.sigma_b) ** 2)
    out = (1.0 - ic.epsilon * np.cos(ic.k * x)) / SQRT_2PI * (bulk + bump)
    if out.ndim == 0:
        return float(out)
    return out


def initial_x_density(ic: InitialCondition, x):
    """Normalized spatial factor (1 - eps*cos(kx)) / L of the initial density."""
    return (1.0 - ic.epsilon * np.cos(ic.k * np.asarray(x, dtype=float))) / ic.length


def v_trapezoid_weights(nv: int) -> np.ndarray:
    """Trapezoid weights (1/2, 1, ..., 1, 1/2) for the endpoint-inclusive v grid."""
    w = np.ones(nv)
    w[0] = w[-1] = 0.5
    return w


@dataclass(frozen=True)
class GriddedDensity:
    """Node values of a phase-space density on the package grid convention.

    ``values[i, j]`` lives at ``(x_i, v_j)`` with x periodic-indexed
    (nx nodes, nx cells including the wrap cell) and v endpoint-inclusive
    (nv nodes, nv - 1 cells).  Between nodes the density is understood as
    its bilinear interpolant.
    """

    domain: PhaseSpaceDomain
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim != 2 or vals.shape[0] < 2 or vals.shape[1] < 2:
            raise ValueError("values must be an nx x nv array with nx, nv >= 2")
        object.__setattr__(self, "values", vals)

    @property
    def nx(self) -> int:
        return self.values.shape[0]

    @property
    def nv(self) -> int:
        return self.values.shape[1]

    @property
    def dx(self) -> float:
        return self.domain.length / self.nx

    @property
    def dv(self) -> float:
        return self.domain.v_span / (self.nv - 1)

    def x_nodes(self) -> np.ndarray:
        return self.domain.x_min + self.dx * np.arange(self.nx)

    def v_nodes(self) -> np.ndarray:
        return self.domain.v_min + self.dv * np.arange(self.nv)

    def x_marginal_nodes(self) -> np.ndarray:
        """Trapezoid v-integral of each x column: g_X(x_i)."""
        return self.dv * (self.values @ v_trapezoid_weights(self.nv))

    def mass(self) -> float:
        """Trapezoid integral over the full domain (periodic sum in x)."""
        return float(self.dx * np.sum(self.x_marginal_nodes()))

    def bilinear_at(self, x, v):
        """Bilinear interpolant value at (x, v); x wraps periodically, v clips.

        Vectorized; returns a scalar for scalar input.
        """
        x = np.asarray(x, dtype=float)
        v = np.asarray(v, dtype=float)
        tx = (x - self.domain.x_min) / self.dx
        ix = np.floor(tx).astype(np.int64) % self.nx
        fx = np.mod(tx, 1.0)
        tv = np.clip((v - self.domain.v_min) / self.dv, 0.0, self.nv - 1.0)
        jv = np.minimum(np.floor(tv).astype(np.int64), self.nv - 2)
        fv = tv - jv
        ixp = (ix + 1) % self.nx
        g = self.values
        out = ((1 - fx) * (1 - fv) * g[ix, jv]
               + fx * (1 - fv) * g[ixp, jv]
               + (1 - fx) * fv * g[ix, jv + 1]
               + fx * fv * g[ixp, jv + 1])
        if out.ndim == 0:
            return float(out)
        return out


def density_from_initial_condition(ic: InitialCondition,
                                   domain: PhaseSpaceDomain,
                                   nx: int, nv: int) -> GriddedDensity:
    """Tabulate the initial density on an nx x nv package grid."""
    g = GriddedDensity(domain, np.zeros((nx, nv)))
    xx, vv = np.meshgrid(g.x_nodes(), g.v_nodes(), indexing="ij")
    return GriddedDensity(domain, eval_initial_f(ic, xx, vv))


def normalize_to_sampling_density(f: GriddedDensity) -> GriddedDensity:
    """Return |f| scaled to unit trapezoid mass.

    Raises
    ------
    AllZeroDensity
        If every node of f is zero.
    """
    absvals = np.abs(f.values)
    mass = GriddedDensity(f.domain, absvals).mass()
    if mass == 0.0:
        raise AllZeroDensity("cannot normalize a density that vanishes at every node")
    return GriddedDensity(f.domain, absvals / mass)


@dataclass
class ParticleEnsemble:
    """Marker arrays sampling the stochastic characteristics.

    Each marker carries its position, velocity and the two likelihoods
    f_like (plasma density at the marker) and g_like (sampling density at
    the marker); the ratio f_like/g_like is the particle weight.  The
    only mutable core type: pushers update arrays in place.
    """

    x: np.ndarray
    v: np.ndarray
    f_like: np.ndarray
    g_like: np.ndarray

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        self.v = np.asarray(self.v, dtype=float)
        self.f_like = np.asarray(self.f_like, dtype=float)
        self.g_like = np.asarray(self.g_like, dtype=float)
        n = self.x.shape[0]
        if not (self.v.shape == self.f_like.shape == self.g_like.shape == (n,)):
            raise ValueError("all marker arrays must share one length")

    @property
    def n_p(self) -> int:
        return self.x.shape[0]

    def weights(self) -> np.ndarray:
        return self.f_like / self.g_like

    def copy(self) -> "ParticleEnsemble":
        return ParticleEnsemble(self.x.copy(), self.v.copy(),
                                self.f_like.copy(), self.g_like.copy())


def weight(ensemble: ParticleEnsemble, k: int) -> float:
    """Weight w_k = f_like[k] / g_like[k] of marker k; constant under
    volume-preserving pushes."""
    if not 0 <= k < ensemble.n_p:
        raise IndexError(f"marker index {k} out of range")
    return float(ensemble.f_like[k] / ensemble.g_like[k])


@dataclass(frozen=True)
class DiagnosticsRecord:
    """One time sample of the conserved-quantity diagnostics."""

    t: float
    field_energy: float
    kinetic_energy: float
    total_energy: float
    total_mass: float
    entropy: float
    star_disc: Optional[float] = None
    hk_variation: Optional[float] = None

    @classmethod
    def make(cls, t, field_energy, kinetic_energy, total_mass, entropy,
             star_disc=None, hk_variation=None) -> "DiagnosticsRecord":
        return cls(t=float(t), field_energy=float(field_energy),
                   kinetic_energy=float(kinetic_energy),
                   total_energy=float(field_energy) + float(kinetic_energy),
                   total_mass=float(total_mass), entropy=float(entropy),
                   star_disc=star_disc, hk_variation=hk_variation)
