"""Forward scattering: Lippmann-Schwinger solves and analytic oracles.

The discrete Lippmann-Schwinger system on the masked voxels is

    (I + G diag(q)) u = u0,   u0 = exp(ik alpha . x),

and the scattering amplitude is ``A_q = B(q u)``.  Two independent
reference amplitudes are provided: the Born approximation (``u`` replaced
by ``u0``) and the partial-wave series for a sound-soft sphere.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse.linalg as spla
from scipy.special import spherical_jn, spherical_yn

from .grid import (
    FOUR_PI,
    ComplexField,
    FarField,
    SphereGrid,
    VolumePotential,
    WaveContext,
    far_field_map,
)

logger = logging.getLogger(__name__)

# Largest system solved by dense LU.  A 4096^2 complex matrix is ~270 MB.
DENSE_LIMIT = 4096
DEFAULT_TOL = 1e-8


class NonConvergenceError(RuntimeError):
    """Raised when a solve does not reach the requested residual."""

    def __init__(self, message: str, residual: float, iterations: int = 0):
        super().__init__(f"{message} (achieved residual {residual:.3e})")
        self.residual = residual
        self.iterations = iterations


@dataclass(frozen=True, eq=False)
class Potential:
    """Potential ``q = k^2 (1 - n^2)`` sampled on the masked voxels."""

    field: ComplexField
    context: WaveContext

    @property
    def grid(self):
        return self.field.grid

    @property
    def values(self) -> np.ndarray:
        return self.field.values

    @classmethod
    def constant(cls, grid, context: WaveContext, value: complex) -> "Potential":
        return cls(ComplexField(grid, np.full(grid.n_masked, value, dtype=complex)), context)

    @classmethod
    def from_refraction(cls, grid, context: WaveContext, n_squared) -> "Potential":
        """Potential of a refraction coefficient ``n^2`` given per voxel."""
        n2 = np.broadcast_to(np.asarray(n_squared, dtype=complex), (grid.n_masked,))
        return cls(ComplexField(grid, context.k**2 * (1.0 - n2)), context)

    def refraction(self) -> np.ndarray:
        return 1.0 - self.values / self.context.k**2


@dataclass(frozen=True, eq=False)
class ScatteringSolution:
    u: ComplexField
    amplitude: FarField
    residual: float
    iterations: int
    method: str

    def report(self) -> dict:
        """JSON-ready solve summary."""
        q_grid = self.u.grid
        return {
            "residual": self.residual,
            "iterations": self.iterations,
            "method": self.method,
            "grid_shape": list(q_grid.shape),
            "n_unknowns": q_grid.n_masked,
        }


def lippmann_schwinger_residual(op: VolumePotential, q: np.ndarray, u: np.ndarray, u0: np.ndarray) -> float:
    """Relative defect ``||u + G(q u) - u0|| / ||u0||``."""
    r = u + op.apply(q * u) - u0
    return float(np.linalg.norm(r) / np.linalg.norm(u0))


def solve_scattering(
    q: Potential,
    sphere: SphereGrid,
    tol: float = DEFAULT_TOL,
    method: str = "auto",
    maxiter: int = 2000,
    operator: VolumePotential | None = None,
) -> ScatteringSolution:
    """Solve the Lippmann-Schwinger equation for ``q`` and its amplitude.

    Parameters
    ----------
    q : Potential
        Potential on the masked voxels; the incident wave is taken from
        ``q.context``.
    sphere : SphereGrid
        Directions at which the amplitude is returned.
    tol : float
        Relative residual bound for the discrete equation.
    method : {"auto", "dense", "iterative"}
        ``auto`` uses dense LU up to ``DENSE_LIMIT`` unknowns and GMRES with
        FFT products above that.
    operator : VolumePotential, optional
        Reuse an operator (and its cached matrix/FFT kernel) across solves.

    Raises
    ------
    NonConvergenceError
        If the final relative residual exceeds ``tol``.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    grid = q.grid
    ctx = q.context
    op = operator if operator is not None else VolumePotential(grid, ctx.k)
    if not op.grid.same_as(grid) or op.k != ctx.k:
        raise ValueError("operator does not match the potential's grid and wavenumber")
    if method == "auto":
        method = "dense" if grid.n_masked <= DENSE_LIMIT else "iterative"

    u0 = ctx.incident(grid.centers)
    qv = q.values
    iterations = 0
    if not np.any(qv):
        u = u0.copy()
    elif method == "dense":
        system = op.matrix() * qv[None, :]
        system[np.diag_indices_from(system)] += 1.0
        try:
            u = scipy.linalg.solve(system, u0, check_finite=False)
        except scipy.linalg.LinAlgError as exc:
            raise NonConvergenceError(f"dense solve failed: {exc}", float("inf")) from exc
        iterations = 1
    elif method == "iterative":
        u, iterations = _gmres(op, qv, u0, tol, maxiter)
    else:
        raise ValueError(f"unknown method {method!r}")

    residual = lippmann_schwinger_residual(op, qv, u, u0)
    if not np.isfinite(residual) or residual > tol:
        raise NonConvergenceError(
            f"Lippmann-Schwinger solve ({method}) missed tol={tol:.1e}", residual, iterations
        )
    u_field = ComplexField(grid, u)
    amp = far_field_map(grid, sphere, ctx.k, ComplexField(grid, qv * u))
    logger.debug("LS solve %s: n=%d residual=%.2e", method, grid.n_masked, residual)
    return ScatteringSolution(u_field, amp, residual, iterations, method)


def _gmres(op: VolumePotential, qv: np.ndarray, u0: np.ndarray, tol: float, maxiter: int):
    n = len(u0)
    A = spla.LinearOperator((n, n), matvec=lambda x: x + op.apply(qv * x), dtype=complex)
    count = [0]

    def callback(_):
        count[0] += 1

    # maxiter bounds inner iterations; scipy counts restart cycles
    restart = max(1, min(n, 200, maxiter))
    cycles = -(-maxiter // restart)
    # aim below tol so the independently recomputed residual clears it
    u, info = spla.gmres(
        A, u0, rtol=0.1 * tol, atol=0.0, restart=restart, maxiter=cycles,
        callback=callback, callback_type="pr_norm",
    )
    if info < 0:
        raise NonConvergenceError("GMRES breakdown", float("inf"), count[0])
    return u, count[0]


def born_amplitude(q: Potential, sphere: SphereGrid) -> FarField:
    """First Born amplitude ``-(1/4pi) int exp(ik(alpha - beta).x) q(x) dx``."""
    grid = q.grid
    ctx = q.context
    u0 = ctx.incident(grid.centers)
    return far_field_map(grid, sphere, ctx.k, ComplexField(grid, q.values * u0))


def ball_born_amplitude(value: complex, radius: float, k: float, alpha, directions) -> np.ndarray:
    """Born amplitude of a constant potential on a centered ball, in closed form."""
    alpha = np.asarray(alpha, dtype=float)
    kappa = k * np.linalg.norm(alpha[None, :] - np.atleast_2d(directions), axis=1)
    x = kappa * radius
    out = np.empty(len(kappa))
    small = x < 1e-3
    xs = x[~small]
    out[~small] = FOUR_PI * (np.sin(xs) - xs * np.cos(xs)) / kappa[~small] ** 3
    # (sin x - x cos x)/x^3 = 1/3 - x^2/30 + ...
    out[small] = FOUR_PI * radius**3 * (1.0 / 3.0 - x[small] ** 2 / 30.0)
    return -value / FOUR_PI * out


def soft_sphere_lmax(ka: float) -> int:
    return int(math.ceil(ka)) + 12


def soft_sphere_coefficients(a: float, k: float) -> np.ndarray:
    """Partial-wave ratios ``j_l(ka) / h_l(ka)`` for ``l = 0..l_max``."""
    ka = k * a
    l = np.arange(soft_sphere_lmax(ka) + 1)
    j = spherical_jn(l, ka)
    y = spherical_yn(l, ka)
    with np.errstate(over="ignore", invalid="ignore"):
        ratio = j / (j + 1j * y)
    return np.where(np.isfinite(ratio), ratio, 0.0)


def soft_sphere_amplitude(a: float, k: float, angles) -> np.ndarray:
    """Far-field amplitude of a sound-soft sphere of radius ``a``.

    ``A(theta) = (i/k) sum_l (2l+1) j_l(ka)/h_l(ka) P_l(cos theta)``, with
    ``theta`` measured from the incident direction.  Tends to ``-a`` as
    ``ka -> 0``.
    """
    angles = np.asarray(angles, dtype=float)
    if a < 0 or k <= 0:
        raise ValueError("need a >= 0 and k > 0")
    if a == 0:
        return np.zeros(angles.shape, dtype=complex)
    if k * a >= 50:
        raise ValueError(f"ka={k * a} outside the supported range ka < 50")
    c = soft_sphere_coefficients(a, k)
    l = np.arange(len(c))
    series = np.polynomial.legendre.legval(np.cos(angles), (2 * l + 1) * c)
    return 1j / k * series


def soft_sphere_cross_section(a: float, k: float, n_nodes: int | None = None) -> float:
    """``int |A|^2 dOmega`` by Gauss-Legendre quadrature in ``cos(theta)``."""
    if n_nodes is None:
        n_nodes = 2 * soft_sphere_lmax(k * a) + 8
    x, w = np.polynomial.legendre.leggauss(n_nodes)
    amp = soft_sphere_amplitude(a, k, np.arccos(x))
    return float(2.0 * np.pi * np.sum(w * np.abs(amp) ** 2))
