"""Geometric particle-in-cell: cubic-B-spline weak Poisson solve, the
integrator family with explicit likelihood bookkeeping, and the
Monte-Carlo estimators of the conserved quantities.

Charge deposition and field evaluation share one periodic cubic B-spline
basis (Galerkin consistency); the circulant stiffness matrix is inverted
spectrally with the constant null space pinned to zero mean.  Pushers
mutate the ensemble in place; the dissipative explicit Euler variants
rescale the likelihoods by the one-step flow determinant, all other kinds
leave them untouched.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np

from .core import ELECTRON, ParticleEnsemble, Species

try:  # jitted particle kernels; the numpy paths below remain the reference
    import numba

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a soft dependency
    _HAVE_NUMBA = False


class FixedPointDiverged(RuntimeError):
    """Implicit pusher failed to converge; carries iteration count and residual."""

    def __init__(self, message, iterations, residual):
        super().__init__(f"{message} (iterations={iterations}, residual={residual:.3e})")
        self.iterations = iterations
        self.residual = residual


class IntegratorKind(enum.Enum):
    EXPLICIT_EULER = "euler"
    EXPLICIT_EULER2 = "euler2"
    SYMPLECTIC_EULER = "seuler"
    IMPLICIT_MIDPOINT = "midpoint"
    CRANK_NICOLSON = "cn"
    RUTH3 = "ruth3"


#: Kinds whose one-step flow has unit Jacobian determinant.
VOLUME_PRESERVING = frozenset({IntegratorKind.SYMPLECTIC_EULER,
                               IntegratorKind.IMPLICIT_MIDPOINT,
                               IntegratorKind.CRANK_NICOLSON,
                               IntegratorKind.RUTH3})

_RUTH3_DRIFT = (2.0 / 3.0, -2.0 / 3.0, 1.0)
_RUTH3_KICK = (7.0 / 24.0, 3.0 / 4.0, -1.0 / 24.0)

_FIXED_POINT_TOL = 1e-12
_FIXED_POINT_CAP = 100


# ---------------------------------------------------------------------------
# cubic B-spline basis on a uniform periodic grid

def _bspline3_weights(u: np.ndarray):
    """Values of the four cubic B-splines covering a cell at local u in [0,1)."""
    c = 1.0 - u
    w_m1 = c * c * c / 6.0
    w_0 = (3.0 * u ** 3 - 6.0 * u ** 2 + 4.0) / 6.0
    w_1 = (-3.0 * u ** 3 + 3.0 * u ** 2 + 3.0 * u + 1.0) / 6.0
    w_2 = u ** 3 / 6.0
    return w_m1, w_0, w_1, w_2


def _bspline3_dweights(u: np.ndarray):
    c = 1.0 - u
    d_m1 = -0.5 * c * c
    d_0 = 1.5 * u ** 2 - 2.0 * u
    d_1 = -1.5 * u ** 2 + u + 0.5
    d_2 = 0.5 * u ** 2
    return d_m1, d_0, d_1, d_2


def _bspline3_d2weights(u: np.ndarray):
    d2_m1 = 1.0 - u
    d2_0 = 3.0 * u - 2.0
    d2_1 = -3.0 * u + 1.0
    d2_2 = u
    return d2_m1, d2_0, d2_1, d2_2


if _HAVE_NUMBA:

    @numba.njit(cache=True)
    def _deposit_kernel(x, w, x_min, inv_dx, n_f):
        out = np.zeros(n_f)
        for k in range(x.shape[0]):
            t = (x[k] - x_min) * inv_dx
            i = int(np.floor(t))
            u = t - i
            i = i % n_f
            c = 1.0 - u
            u2 = u * u
            u3 = u2 * u
            wk = w[k]
            out[(i - 1) % n_f] += wk * (c * c * c / 6.0)
            out[i] += wk * ((3.0 * u3 - 6.0 * u2 + 4.0) / 6.0)
            out[(i + 1) % n_f] += wk * ((-3.0 * u3 + 3.0 * u2 + 3.0 * u + 1.0) / 6.0)
            out[(i + 2) % n_f] += wk * (u3 / 6.0)
        return out

    @numba.njit(cache=True)
    def _spline_eval_kernel(coeffs, x, x_min, inv_dx, n_f, order):
        out = np.empty(x.shape[0])
        for k in range(x.shape[0]):
            t = (x[k] - x_min) * inv_dx
            i = int(np.floor(t))
            u = t - i
            i = i % n_f
            cm1 = coeffs[(i - 1) % n_f]
            c0 = coeffs[i]
            c1 = coeffs[(i + 1) % n_f]
            c2 = coeffs[(i + 2) % n_f]
            if order == 0:
                c = 1.0 - u
                u2 = u * u
                u3 = u2 * u
                out[k] = (cm1 * (c * c * c / 6.0)
                          + c0 * ((3.0 * u3 - 6.0 * u2 + 4.0) / 6.0)
                          + c1 * ((-3.0 * u3 + 3.0 * u2 + 3.0 * u + 1.0) / 6.0)
                          + c2 * (u3 / 6.0))
            elif order == 1:
                c = 1.0 - u
                u2 = u * u
                out[k] = (cm1 * (-0.5 * c * c)
                          + c0 * (1.5 * u2 - 2.0 * u)
                          + c1 * (-1.5 * u2 + u + 0.5)
                          + c2 * (0.5 * u2))
            else:
                out[k] = (cm1 * (1.0 - u) + c0 * (3.0 * u - 2.0)
                          + c1 * (-3.0 * u + 1.0) + c2 * u)
        return out


@dataclass(frozen=True)
class SplinePoissonSolver:
    """Weak Poisson solver on n_f periodic cubic B-splines over [x_min, x_min+L].

    The stiffness matrix (integrals of N_i' N_j') is circulant with first
    row (2/3, -1/8, -1/5, -1/120, 0, ..., -1/120, -1/5, -1/8)/dx; its rows
    sum to zero (constants are the null space), so the solve pins the
    coefficient mean to zero.
    """

    x_min: float
    length: float
    n_f: int
    stiffness_eigs: np.ndarray
    stiffness_row: np.ndarray

    @classmethod
    def build(cls, x_min: float, length: float, n_f: int) -> "SplinePoissonSolver":
        if n_f < 4:
            raise ValueError("need at least 4 cells for the cubic basis")
        dx = length / n_f
        row = np.zeros(n_f)
        stencil = np.array([2.0 / 3.0, -1.0 / 8.0, -1.0 / 5.0, -1.0 / 120.0]) / dx
        row[0] = stencil[0]
        for off in (1, 2, 3):
            row[off] += stencil[off]
            row[-off] += stencil[off]
        eigs = np.fft.fft(row)
        return cls(x_min=x_min, length=length, n_f=n_f,
                   stiffness_eigs=eigs, stiffness_row=row)

    @property
    def dx(self) -> float:
        return self.length / self.n_f

    def _cells(self, x: np.ndarray):
        t = (np.asarray(x, dtype=float) - self.x_min) / self.dx
        i = np.floor(t).astype(np.int64)
        u = t - i
        return i % self.n_f, u

    def basis_matrix_indices(self, x: np.ndarray):
        """(indices, weights) of the four basis functions active at each x."""
        i, u = self._cells(x)
        weights = _bspline3_weights(u)
        indices = tuple((i + off) % self.n_f for off in (-1, 0, 1, 2))
        return indices, weights

    def apply_stiffness(self, c: np.ndarray) -> np.ndarray:
        return np.fft.ifft(np.fft.fft(c) * self.stiffness_eigs).real


class FieldSolution(NamedTuple):
    """Cubic-spline coefficients of the zero-mean potential at time t."""

    coeffs: np.ndarray
    solver: "SplinePoissonSolver"
    t: float = 0.0

    def E(self, x):
        return eval_E(self, x)

    def dE(self, x):
        return eval_dE(self, x)


class AnalyticField(NamedTuple):
    """Frozen analytic field for harness tests and Jacobian probes."""

    e_fn: Callable
    de_fn: Callable

    def E(self, x):
        return self.e_fn(np.asarray(x, dtype=float))

    def dE(self, x):
        return self.de_fn(np.asarray(x, dtype=float))


def deposit_rhs(ensemble: ParticleEnsemble, solver: SplinePoissonSolver,
                species: Species = ELECTRON) -> np.ndarray:
    """Weak-form load vector b_i = q [ (1/n_p) sum_k w_k N_i(x_k) - dx ].

    The subtracted dx is the projection of the unit neutralizing
    background onto each basis function.  Deposition accumulates in one
    fixed (marker-index) order, so results do not depend on chunking.
    """
    b = np.zeros(solver.n_f)
    if ensemble.n_p > 0:
        w = ensemble.weights()
        if _HAVE_NUMBA:
            b = _deposit_kernel(ensemble.x, w, solver.x_min,
                                1.0 / solver.dx, solver.n_f)
        else:
            indices, weights = solver.basis_matrix_indices(ensemble.x)
            for idx, wgt in zip(indices, weights):
                b += np.bincount(idx, weights=w * wgt, minlength=solver.n_f)
        b /= ensemble.n_p
    return species.q * (b - solver.dx)


def solve_poisson_fem(solver: SplinePoissonSolver, b: np.ndarray,
                      t: float = 0.0) -> FieldSolution:
    """Solve stiffness * coeffs = b with the mean projected out of both sides."""
    bh = np.fft.fft(np.asarray(b, dtype=float))
    bh[0] = 0.0
    eigs = solver.stiffness_eigs.copy()
    eigs[0] = 1.0
    coeffs = np.fft.ifft(bh / eigs).real
    return FieldSolution(coeffs=coeffs, solver=solver, t=t)


def _spline_eval(solver: SplinePoissonSolver, coeffs: np.ndarray,
                 x: np.ndarray, order: int) -> np.ndarray:
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if _HAVE_NUMBA:
        return _spline_eval_kernel(coeffs, x, solver.x_min, 1.0 / solver.dx,
                                   solver.n_f, order)
    i, u = solver._cells(x)
    table = (_bspline3_weights, _bspline3_dweights, _bspline3_d2weights)[order]
    out = np.zeros_like(u)
    for off, wgt in zip((-1, 0, 1, 2), table(u)):
        out += coeffs[(i + off) % solver.n_f] * wgt
    return out


def eval_phi(field: FieldSolution, x):
    return _spline_eval(field.solver, field.coeffs, x, 0)


def eval_E(field: FieldSolution, x):
    """E = -Phi'(x); continuous and C1 across knots."""
    return -_spline_eval(field.solver, field.coeffs, x, 1) / field.solver.dx


def eval_dE(field: FieldSolution, x):
    """dE/dx = -Phi''(x) from the analytic second derivative of the spline."""
    return -_spline_eval(field.solver, field.coeffs, x, 2) / field.solver.dx ** 2


def field_energy(field: FieldSolution) -> float:
    """(1/2) integral of E^2 dx = (1/2) c^T S c (exact spline quadrature)."""
    c = field.coeffs
    return float(0.5 * np.dot(c, field.solver.apply_stiffness(c)))


class SelfConsistentField:
    """Callable field machinery: deposit the ensemble, solve, return the field."""

    def __init__(self, solver: SplinePoissonSolver, species: Species = ELECTRON):
        self.solver = solver
        self.species = species

    def __call__(self, ensemble: ParticleEnsemble, t: float = 0.0) -> FieldSolution:
        b = deposit_rhs(ensemble, self.solver, self.species)
        return solve_poisson_fem(self.solver, b, t=t)


class FrozenField:
    """Field machinery that ignores the ensemble (external prescribed field)."""

    def __init__(self, field):
        self.field = field

    def __call__(self, ensemble=None, t: float = 0.0):
        return self.field


def _wrap(ensemble: ParticleEnsemble, x_min: float, length: float):
    ensemble.x = x_min + np.mod(ensemble.x - x_min, length)


def push(kind: IntegratorKind, ensemble: ParticleEnsemble, fields, dt: float,
         species: Species = ELECTRON) -> None:
    """Advance the ensemble one step of ``kind`` in place.

    ``fields`` is the field machinery: a callable mapping the current
    ensemble to a field object with E(x) and dE(x) (use
    :class:`SelfConsistentField` for production, :class:`FrozenField` for
    harness tests).  Implicit kinds iterate the collective particle-field
    fixed point to 1e-12 in the max norm of position increments.

    Likelihood bookkeeping: the volume-preserving kinds leave f_like and
    g_like untouched; ExplicitEuler divides g_like by the one-step flow
    determinant 1 - dt^2 (q/m) dE(x_old); ExplicitEuler2 divides both
    likelihoods, keeping the weights unchanged.
    """
    qm = species.q_over_m
    if isinstance(fields, SelfConsistentField):
        x_min = fields.solver.x_min
        length = fields.solver.length
    else:
        x_min, length = None, None

    def wrap():
        if x_min is not None:
            _wrap(ensemble, x_min, length)

    if kind in (IntegratorKind.EXPLICIT_EULER, IntegratorKind.EXPLICIT_EULER2):
        field = fields(ensemble)
        e_old = field.E(ensemble.x)
        de_old = field.dE(ensemble.x)
        det = 1.0 - dt * dt * qm * de_old
        ensemble.x = ensemble.x + dt * ensemble.v
        ensemble.v = ensemble.v + dt * qm * e_old
        ensemble.g_like = ensemble.g_like / det
        if kind is IntegratorKind.EXPLICIT_EULER2:
            ensemble.f_like = ensemble.f_like / det
        wrap()
        return

    if kind is IntegratorKind.SYMPLECTIC_EULER:
        ensemble.x = ensemble.x + dt * ensemble.v
        wrap()
        field = fields(ensemble)
        ensemble.v = ensemble.v + dt * qm * field.E(ensemble.x)
        return

    if kind is IntegratorKind.RUTH3:
        for c, d in zip(_RUTH3_DRIFT, _RUTH3_KICK):
            field = fields(ensemble)
            ensemble.v = ensemble.v + d * dt * qm * field.E(ensemble.x)
            ensemble.x = ensemble.x + c * dt * ensemble.v
            wrap()
        return

    if kind is IntegratorKind.IMPLICIT_MIDPOINT:
        x_n = ensemble.x.copy()
        v_n = ensemble.v.copy()
        v_half = ensemble.v.copy()
        trial = ensemble.copy()
        x_half_prev = None
        for it in range(_FIXED_POINT_CAP):
            x_half = x_n + 0.5 * dt * v_half
            if x_half_prev is not None:
                resid = float(np.max(np.abs(x_half - x_half_prev)))
                if resid <= _FIXED_POINT_TOL:
                    break
            x_half_prev = x_half
            trial.x = x_half
            if x_min is not None:
                _wrap(trial, x_min, length)
            field = fields(trial)
            v_half = v_n + 0.5 * dt * qm * field.E(trial.x)
        else:
            raise FixedPointDiverged("implicit midpoint fixed point stalled",
                                     _FIXED_POINT_CAP, resid)
        e_half = field.E(trial.x)
        ensemble.x = x_n + dt * v_half
        ensemble.v = v_n + dt * qm * e_half
        wrap()
        return

    if kind is IntegratorKind.CRANK_NICOLSON:
        x_n = ensemble.x.copy()
        v_n = ensemble.v.copy()
        field_n = fields(ensemble)
        e_n = field_n.E(x_n)
        v_new = ensemble.v.copy()
        trial = ensemble.copy()
        x_new_prev = None
        for it in range(_FIXED_POINT_CAP):
            x_new = x_n + 0.5 * dt * (v_n + v_new)
            if x_new_prev is not None:
                resid = float(np.max(np.abs(x_new - x_new_prev)))
                if resid <= _FIXED_POINT_TOL:
                    break
            x_new_prev = x_new
            trial.x = x_new
            if x_min is not None:
                _wrap(trial, x_min, length)
            field = fields(trial)
            v_new = v_n + 0.5 * dt * qm * (e_n + field.E(trial.x))
        else:
            raise FixedPointDiverged("Crank-Nicolson fixed point stalled",
                                     _FIXED_POINT_CAP, resid)
        ensemble.x = x_n + 0.5 * dt * (v_n + v_new)
        ensemble.v = v_new
        wrap()
        return

    raise ValueError(f"unknown integrator kind {kind!r}")


# ---------------------------------------------------------------------------
# frozen-field single-particle maps (Jacobian probes, harness tests)

def frozen_step(kind: IntegratorKind, x, v, dt: float, field,
                species: Species = ELECTRON):
    """One step of ``kind`` for independent particles in a frozen field."""
    qm = species.q_over_m
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    if kind in (IntegratorKind.EXPLICIT_EULER, IntegratorKind.EXPLICIT_EULER2):
        return x + dt * v, v + dt * qm * field.E(x)
    if kind is IntegratorKind.SYMPLECTIC_EULER:
        x_new = x + dt * v
        return x_new, v + dt * qm * field.E(x_new)
    if kind is IntegratorKind.RUTH3:
        for c, d in zip(_RUTH3_DRIFT, _RUTH3_KICK):
            v = v + d * dt * qm * field.E(x)
            x = x + c * dt * v
        return x, v
    if kind is IntegratorKind.IMPLICIT_MIDPOINT:
        x_half, v_half = adjoint_euler_step(x, v, 0.5 * dt, field, species)
        e_half = field.E(x_half)
        return x + dt * v_half, v + dt * qm * e_half
    if kind is IntegratorKind.CRANK_NICOLSON:
        e_n = field.E(x)
        v_new = np.array(v, dtype=float, copy=True)
        for it in range(_FIXED_POINT_CAP):
            x_new = x + 0.5 * dt * (v + v_new)
            v_next = v + 0.5 * dt * qm * (e_n + field.E(x_new))
            resid = float(np.max(np.abs(v_next - v_new)))
            v_new = v_next
            if resid <= 1e-14 * max(1.0, float(np.max(np.abs(v_new)))):
                break
        else:
            raise FixedPointDiverged("frozen Crank-Nicolson stalled",
                                     _FIXED_POINT_CAP, resid)
        return x + 0.5 * dt * (v + v_new), v_new
    raise ValueError(f"unknown integrator kind {kind!r}")


def adjoint_euler_step(x, v, dt: float, field, species: Species = ELECTRON):
    """The adjoint (implicit) Euler map: x' = x + dt v', v' = v + dt (q/m) E(x')."""
    qm = species.q_over_m
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    v_new = np.array(v, dtype=float, copy=True)
    for it in range(_FIXED_POINT_CAP):
        x_new = x + dt * v_new
        v_next = v + dt * qm * field.E(x_new)
        resid = float(np.max(np.abs(v_next - v_new)))
        v_new = v_next
        if resid <= 1e-14 * max(1.0, float(np.max(np.abs(v_new)))):
            break
    else:
        raise FixedPointDiverged("adjoint Euler fixed point stalled",
                                 _FIXED_POINT_CAP, resid)
    return x + dt * v_new, v_new


def map_jacobian_det(step_map, x: float, v: float, h_x: float, h_v: float) -> float:
    """Central finite-difference determinant of a 2-D one-step map."""
    xp, vp = step_map(np.array([x + h_x, x - h_x, x, x]),
                      np.array([v, v, v + h_v, v - h_v]))
    dxdx = (xp[0] - xp[1]) / (2 * h_x)
    dvdx = (vp[0] - vp[1]) / (2 * h_x)
    dxdv = (xp[2] - xp[3]) / (2 * h_v)
    dvdv = (vp[2] - vp[3]) / (2 * h_v)
    return float(dxdx * dvdv - dxdv * dvdx)


def flow_jacobian_det(kind: IntegratorKind, x: float, v: float, dt: float,
                      field, species: Species = ELECTRON) -> float:
    """Numerical Jacobian determinant of one frozen-field step at (x, v).

    Central differences with h = 1e-5 * scale per coordinate.
    """
    h_x = 1e-5 * max(1.0, abs(x))
    h_v = 1e-5 * max(1.0, abs(v))
    return map_jacobian_det(
        lambda xs, vs: frozen_step(kind, xs, vs, dt, field, species),
        x, v, h_x, h_v)


# ---------------------------------------------------------------------------
# Monte-Carlo estimators

def kinetic_energy(ensemble: ParticleEnsemble) -> float:
    """H_T = (1/2n_p) sum v_k^2 w_k."""
    return float(0.5 * np.mean(ensemble.v ** 2 * ensemble.weights()))


def total_mass(ensemble: ParticleEnsemble) -> float:
    """M = (1/n_p) sum f_k/g_k."""
    return float(np.mean(ensemble.weights()))


def momentum(ensemble: ParticleEnsemble) -> float:
    return float(np.mean(ensemble.v * ensemble.weights()))


class EntropyEstimate(NamedTuple):
    value: float
    skipped_fraction: float


def discrete_entropy(ensemble: ParticleEnsemble) -> EntropyEstimate:
    """S = (1/n_p) sum f_k ln(f_k) / g_k over markers with f_k > 0.

    Markers with nonpositive plasma likelihood (possible after a
    negative-weight handoff) are skipped; the skipped fraction is reported
    alongside the value.
    """
    f = ensemble.f_like
    pos = f > 0.0
    skipped = 1.0 - np.count_nonzero(pos) / ensemble.n_p
    total = float(np.sum(f[pos] * np.log(f[pos]) / ensemble.g_like[pos]))
    return EntropyEstimate(value=total / ensemble.n_p, skipped_fraction=skipped)
