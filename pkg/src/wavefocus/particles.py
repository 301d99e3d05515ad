"""Small sound-soft particles: sampling and Foldy-Lax multiple scattering.

Each particle of radius ``a`` (``ka << 1``) acts as a point scatterer with
strength ``C0 = 4 pi a``; the effective fields solve

    u_j = u0(x_j) - sum_{m != j} C0 g(x_j, x_m) u_m,

and the cloud's amplitude is ``A_M(beta) = -(C0/4pi) sum_m exp(-ik beta.x_m) u_m``.
A cloud with ``N(x)`` particles per unit volume should scatter like the
potential ``q = q0 + C0 N``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from scipy.spatial import cKDTree

from .grid import FOUR_PI, FarField, RealField, SphereGrid, WaveContext, green, relative_distance

logger = logging.getLogger(__name__)

MAX_PARTICLES = 100_000
MAX_DENSE_PARTICLES = 10_000
MAX_KA = 0.1
MAX_A_OVER_D = 0.2
SEPARATION = 4.0  # minimum center distance in units of a
SAMPLING_RETRIES = 50


class ParticleError(ValueError):
    """Invalid particle cloud or sampling request."""


@dataclass(frozen=True, eq=False)
class ParticleCloud:
    positions: np.ndarray
    radius: float
    seed: int | None = None

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=float).reshape(-1, 3)
        if self.radius <= 0:
            raise ParticleError("particle radius must be positive")
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "radius", float(self.radius))

    @property
    def count(self) -> int:
        return len(self.positions)

    @property
    def capacitance(self) -> float:
        return FOUR_PI * self.radius

    @property
    def mean_spacing(self) -> float:
        """Mean nearest-neighbour distance (inf for fewer than two particles)."""
        if self.count < 2:
            return float("inf")
        dist, _ = cKDTree(self.positions).query(self.positions, k=2)
        return float(np.mean(dist[:, 1]))

    def min_distance(self) -> float:
        if self.count < 2:
            return float("inf")
        dist, _ = cKDTree(self.positions).query(self.positions, k=2)
        return float(np.min(dist[:, 1]))

    def particle_volume(self) -> float:
        return self.count * FOUR_PI / 3.0 * self.radius**3


def sample_particles(density: RealField, a: float, seed: int) -> ParticleCloud:
    """Poisson-sample a cloud with ``density`` particles per unit volume.

    Voxel ``i`` receives ``Poisson(N_i dV)`` particles placed uniformly in
    the voxel.  Particles closer than ``4a`` to an earlier one are redrawn
    inside their own voxel, up to ``SAMPLING_RETRIES`` rounds.
    """
    grid = density.grid
    n = density.values
    if np.any(n < 0):
        raise ParticleError("density must be nonnegative; clip infeasible voxels first")
    if a <= 0:
        raise ParticleError("particle radius must be positive")
    expected = float(np.sum(n) * grid.voxel_volume)
    if expected < 1:
        raise ParticleError(f"expected particle count {expected:.3g} is below 1")
    if expected > MAX_PARTICLES:
        raise ParticleError(f"expected particle count {expected:.0f} exceeds budget {MAX_PARTICLES}")

    rng = np.random.default_rng(seed)
    counts = rng.poisson(n * grid.voxel_volume)
    owner = np.repeat(np.arange(grid.n_masked), counts)
    corner = grid.lower + grid.indices[owner] * grid.spacing

    def draw(idx):
        return corner[idx] + rng.random((len(idx), 3)) * grid.spacing

    pos = draw(np.arange(len(owner)))
    min_sep = SEPARATION * a
    for _ in range(SAMPLING_RETRIES):
        pairs = cKDTree(pos).query_pairs(min_sep, output_type="ndarray")
        if len(pairs) == 0:
            break
        redo = np.unique(pairs.max(axis=1))
        pos[redo] = draw(redo)
    else:
        if len(cKDTree(pos).query_pairs(min_sep, output_type="ndarray")):
            raise ParticleError(
                f"could not separate particles by {SEPARATION}a after {SAMPLING_RETRIES} rounds"
            )
    cloud = ParticleCloud(pos, a, seed)
    d = cloud.mean_spacing
    if a / d > MAX_A_OVER_D:
        raise ParticleError(f"a/d = {a / d:.3f} exceeds {MAX_A_OVER_D}; particles are not dilute")
    return cloud


@dataclass(frozen=True, eq=False)
class EnsembleSolution:
    local_fields: np.ndarray
    amplitude: FarField
    residual: float


def foldy_lax_solve(cloud: ParticleCloud, context: WaveContext, sphere: SphereGrid) -> EnsembleSolution:
    """Solve the Foldy-Lax system for a cloud in free space."""
    k = context.k
    if k * cloud.radius > MAX_KA:
        raise ParticleError(f"ka = {k * cloud.radius:.3g} exceeds {MAX_KA}; particles are not small")
    m = cloud.count
    if m == 0:
        return EnsembleSolution(np.zeros(0, complex), FarField.zeros(sphere), 0.0)
    if m > MAX_DENSE_PARTICLES:
        raise ParticleError(f"{m} particles exceed the dense-solve budget {MAX_DENSE_PARTICLES}")
    if cloud.min_distance() == 0.0:
        raise ParticleError("coincident particles make the Foldy-Lax system singular")

    x = cloud.positions
    c0 = cloud.capacitance
    u0 = context.incident(x)
    diff = x[:, None, :] - x[None, :, :]
    r = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    np.fill_diagonal(r, 1.0)
    system = c0 * green(r, k)
    np.fill_diagonal(system, 1.0)
    u = scipy.linalg.solve(system, u0, check_finite=False)
    residual = float(np.linalg.norm(system @ u - u0) / np.linalg.norm(u0))
    if not residual <= 1e-10:
        raise ParticleError(f"Foldy-Lax residual {residual:.2e} above 1e-10")
    phase = np.exp(-1j * k * (sphere.directions @ x.T))
    amp = -(c0 / FOUR_PI) * (phase @ u)
    return EnsembleSolution(u, FarField(sphere, amp), residual)


@dataclass
class SeedRun:
    seed: int
    count: int
    mean_spacing: float
    residual: float
    distance: float
    relative_volume: float

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class EnsembleReport:
    radius: float
    ka: float
    mean_count: float
    mean_spacing: float
    relative_volume: float
    distance_to_design: float
    residual: float
    runs: list = field(default_factory=list)
    averaged: FarField | None = None
    clouds: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "M": self.mean_count,
            "a": self.radius,
            "ka": self.ka,
            "d_mean": self.mean_spacing,
            "relative_volume": self.relative_volume,
            "residual": self.residual,
            "distance_to_design": self.distance_to_design,
            "per_seed": [r.to_dict() for r in self.runs],
        }


def effective_medium_check(
    design,
    a: float,
    seeds,
    density: RealField | None = None,
    predicted: FarField | None = None,
    context: WaveContext | None = None,
) -> EnsembleReport:
    """Compare seed-averaged cloud amplitudes with the designed amplitude.

    ``design`` is a :class:`~wavefocus.design.DesignResult`; the density is
    rescaled for particles of radius ``a``, i.e. ``N = C0(design) N_design /
    (4 pi a)``, so the capacitance per unit volume stays fixed.  With
    ``design=None`` pass ``density`` (already for radius ``a``),
    ``predicted`` and ``context`` directly.
    """
    if design is not None:
        density = RealField(
            design.density.clipped.grid, design.density.clipped.values * design.c0 / (FOUR_PI * a)
        )
        predicted = design.predicted
        context = design.q_delta.context
    if density is None or predicted is None or context is None:
        raise ValueError("need a design or density, predicted amplitude and context")
    sphere = predicted.sphere
    seeds = [int(s) for s in seeds]
    if not seeds:
        raise ValueError("need at least one seed")

    grid = density.grid
    if not np.any(density.values > 0):
        return EnsembleReport(a, context.k * a, 0.0, float("inf"), 0.0, 0.0, 0.0,
                              averaged=FarField.zeros(sphere))

    total = np.zeros(len(sphere), dtype=complex)
    runs = []
    clouds = []
    for seed in seeds:
        cloud = sample_particles(density, a, seed)
        clouds.append(cloud)
        sol = foldy_lax_solve(cloud, context, sphere)
        total += sol.amplitude.values
        runs.append(
            SeedRun(
                seed,
                cloud.count,
                cloud.mean_spacing,
                sol.residual,
                relative_distance(sol.amplitude, predicted),
                cloud.particle_volume() / grid.volume,
            )
        )
    averaged = FarField(sphere, total / len(seeds))
    return EnsembleReport(
        radius=float(a),
        ka=float(context.k * a),
        mean_count=float(np.mean([r.count for r in runs])),
        mean_spacing=float(np.mean([r.mean_spacing for r in runs])),
        relative_volume=float(np.mean([r.relative_volume for r in runs])),
        distance_to_design=relative_distance(averaged, predicted),
        residual=float(max(r.residual for r in runs)),
        runs=runs,
        averaged=averaged,
        clouds=clouds,
    )
