"""Voxel grids, sphere quadrature and the two integral operators on them.

Everything else in the package is built on three discrete objects:

* ``DomainGrid``: a box of ``nx * ny * nz`` voxels with a boolean mask
  selecting the design region D.  Fields live on masked voxels only and
  are ordered with ``ix`` fastest, then ``iy``, then ``iz``.
* ``SphereGrid``: a product rule on S^2 (Gauss-Legendre in cos(theta),
  uniform in phi) with weights summing to 4*pi.
* The volume potential ``(G h)(x) = int_D g(x, y) h(y) dy`` with
  ``g = exp(ik|x-y|) / (4 pi |x-y|)`` and the far-field map
  ``(B h)(beta) = -(1/4pi) int_D exp(-ik beta.x) h(x) dx``.

The volume potential uses the midpoint rule off the diagonal and the
integral of ``g`` over a ball of equal volume for the self voxel.  A dense
path and an FFT convolution path are provided; they agree to rounding.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.fft

FOUR_PI = 4.0 * np.pi


# ---------------------------------------------------------------------------
# Data types
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class WaveContext:
    """Fixed wavenumber ``k`` and unit incident direction ``alpha``."""

    k: float
    alpha: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 1.0]))

    def __post_init__(self):
        alpha = np.asarray(self.alpha, dtype=float).reshape(3)
        if not np.isfinite(self.k) or self.k <= 0:
            raise ValueError(f"wavenumber must be positive, got k={self.k}")
        if abs(np.linalg.norm(alpha) - 1.0) > 1e-14:
            raise ValueError(f"incident direction must be a unit vector, got {alpha}")
        object.__setattr__(self, "k", float(self.k))
        object.__setattr__(self, "alpha", alpha)

    @classmethod
    def from_direction(cls, k: float, direction: Sequence[float]) -> "WaveContext":
        """Build a context, normalizing ``direction`` first."""
        d = np.asarray(direction, dtype=float)
        return cls(k, d / np.linalg.norm(d))

    def incident(self, points: np.ndarray) -> np.ndarray:
        """Plane wave ``exp(ik alpha.x)`` at ``points`` of shape (n, 3)."""
        return np.exp(1j * self.k * (points @ self.alpha))


@dataclass(frozen=True, eq=False)
class DomainGrid:
    """Voxelized bounding box with a mask marking the design region.

    Attributes
    ----------
    lower : ndarray, shape (3,)
        Minimum corner of the box.
    spacing : ndarray, shape (3,)
        Voxel edge length per axis.
    shape : tuple of int
        Voxel counts ``(nx, ny, nz)``.
    mask : ndarray of bool, shape ``shape``
        ``mask[ix, iy, iz]`` is True for voxels inside D.
    """

    lower: np.ndarray
    spacing: np.ndarray
    shape: tuple
    mask: np.ndarray

    def __post_init__(self):
        lower = np.asarray(self.lower, dtype=float).reshape(3)
        spacing = np.asarray(self.spacing, dtype=float).reshape(3)
        shape = tuple(int(n) for n in self.shape)
        mask = np.asarray(self.mask, dtype=bool)
        if len(shape) != 3 or min(shape) < 1:
            raise ValueError(f"invalid grid shape {shape}")
        if np.any(spacing <= 0) or not np.all(np.isfinite(spacing)):
            raise ValueError(f"grid spacing must be positive, got {spacing}")
        if mask.shape != shape:
            raise ValueError(f"mask shape {mask.shape} does not match grid shape {shape}")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "shape", shape)
        object.__setattr__(self, "mask", mask)
        # (ix, iy, iz) of masked voxels, ix fastest
        flat = np.flatnonzero(mask.ravel(order="F"))
        idx = np.stack(np.unravel_index(flat, shape, order="F"), axis=1)
        object.__setattr__(self, "_flat", flat)
        object.__setattr__(self, "_indices", idx)

    @property
    def upper(self) -> np.ndarray:
        return self.lower + np.asarray(self.shape) * self.spacing

    @property
    def voxel_volume(self) -> float:
        return float(np.prod(self.spacing))

    @property
    def n_masked(self) -> int:
        return len(self._flat)

    @property
    def indices(self) -> np.ndarray:
        """Integer voxel indices of masked voxels, shape (n, 3)."""
        return self._indices

    @property
    def centers(self) -> np.ndarray:
        """Centers of masked voxels, shape (n, 3)."""
        return self.lower + (self._indices + 0.5) * self.spacing

    @property
    def volume(self) -> float:
        """Discrete volume of D, i.e. masked count times voxel volume."""
        return self.n_masked * self.voxel_volume

    def scatter(self, values: np.ndarray) -> np.ndarray:
        """Embed masked values into a full ``shape`` array (zeros outside D)."""
        full = np.zeros(int(np.prod(self.shape)), dtype=np.result_type(values, float))
        full[self._flat] = values
        return full.reshape(self.shape, order="F")

    def gather(self, full: np.ndarray) -> np.ndarray:
        """Inverse of :meth:`scatter`."""
        return full.ravel(order="F")[self._flat]

    def same_as(self, other: "DomainGrid") -> bool:
        return other is self or (
            self.shape == other.shape
            and np.array_equal(self.lower, other.lower)
            and np.array_equal(self.spacing, other.spacing)
            and np.array_equal(self.mask, other.mask)
        )


@dataclass(frozen=True, eq=False)
class SphereGrid:
    """Quadrature nodes on the unit sphere.

    Directions are stored through their polar/azimuthal angles so that the
    far-field file format round-trips exactly.
    """

    theta: np.ndarray
    phi: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        theta = np.asarray(self.theta, dtype=float).ravel()
        phi = np.asarray(self.phi, dtype=float).ravel()
        weights = np.asarray(self.weights, dtype=float).ravel()
        if not (theta.shape == phi.shape == weights.shape):
            raise ValueError("theta, phi and weights must have equal length")
        if np.any(weights <= 0):
            raise ValueError("sphere quadrature weights must be positive")
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "phi", phi)
        object.__setattr__(self, "weights", weights)
        st = np.sin(theta)
        dirs = np.stack([st * np.cos(phi), st * np.sin(phi), np.cos(theta)], axis=1)
        object.__setattr__(self, "directions", dirs)

    @classmethod
    def from_directions(cls, directions: np.ndarray, weights=None) -> "SphereGrid":
        """Sphere grid through arbitrary directions (equal weights by default)."""
        d = np.atleast_2d(np.asarray(directions, dtype=float))
        d = d / np.linalg.norm(d, axis=1, keepdims=True)
        theta = np.arccos(np.clip(d[:, 2], -1.0, 1.0))
        phi = np.arctan2(d[:, 1], d[:, 0])
        if weights is None:
            weights = np.full(len(d), FOUR_PI / len(d))
        return cls(theta, phi, weights)

    def __len__(self) -> int:
        return len(self.weights)

    def same_as(self, other: "SphereGrid") -> bool:
        return other is self or (
            np.array_equal(self.theta, other.theta)
            and np.array_equal(self.phi, other.phi)
            and np.array_equal(self.weights, other.weights)
        )


@dataclass(frozen=True, eq=False)
class ComplexField:
    """Complex samples on the masked voxels of a grid."""

    grid: DomainGrid
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=complex).ravel()
        if len(values) != self.grid.n_masked:
            raise ValueError(
                f"field has {len(values)} values but grid has {self.grid.n_masked} masked voxels"
            )
        object.__setattr__(self, "values", values)

    @classmethod
    def zeros(cls, grid: DomainGrid) -> "ComplexField":
        return cls(grid, np.zeros(grid.n_masked, dtype=complex))

    def norm(self) -> float:
        """L^2(D) norm with voxel-volume weights."""
        return float(np.sqrt(self.grid.voxel_volume * np.sum(np.abs(self.values) ** 2)))

    def max_abs(self) -> float:
        return float(np.max(np.abs(self.values), initial=0.0))


@dataclass(frozen=True, eq=False)
class RealField:
    """Real samples on the masked voxels of a grid (particle densities)."""

    grid: DomainGrid
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float).ravel()
        if len(values) != self.grid.n_masked:
            raise ValueError(
                f"field has {len(values)} values but grid has {self.grid.n_masked} masked voxels"
            )
        object.__setattr__(self, "values", values)


@dataclass(frozen=True, eq=False)
class FarField:
    """Complex samples of a far-field pattern on a sphere grid."""

    sphere: SphereGrid
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=complex).ravel()
        if len(values) != len(self.sphere):
            raise ValueError(
                f"far field has {len(values)} values but sphere has {len(self.sphere)} directions"
            )
        object.__setattr__(self, "values", values)

    @classmethod
    def zeros(cls, sphere: SphereGrid) -> "FarField":
        return cls(sphere, np.zeros(len(sphere), dtype=complex))

    def norm(self) -> float:
        """L^2(S^2) norm under the sphere quadrature."""
        return float(np.sqrt(np.sum(self.sphere.weights * np.abs(self.values) ** 2)))

    def inner(self, other: "FarField") -> complex:
        """Weighted inner product, conjugate-linear in ``other``."""
        return complex(np.sum(self.sphere.weights * self.values * np.conj(other.values)))


def relative_distance(a: FarField, b: FarField) -> float:
    """``||a - b|| / ||b||`` in L^2(S^2); zero when both vanish."""
    diff = FarField(b.sphere, a.values - b.values).norm()
    ref = b.norm()
    if ref == 0.0:
        return 0.0 if diff == 0.0 else float("inf")
    return diff / ref


# ---------------------------------------------------------------------------
# Grid construction
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class Ball:
    center: tuple
    radius: float


def build_domain_grid(bounds, shape, region=None) -> DomainGrid:
    """Voxelize ``bounds = (lower, upper)`` and mask voxels inside ``region``.

    ``region`` is ``None`` / ``"box"`` for the whole box or a :class:`Ball`.
    Membership is decided by the voxel center.
    """
    lower = np.asarray(bounds[0], dtype=float).reshape(3)
    upper = np.asarray(bounds[1], dtype=float).reshape(3)
    shape = tuple(int(n) for n in shape)
    if len(shape) != 3 or min(shape) < 2:
        raise ValueError(f"every grid axis needs at least 2 voxels, got shape {shape}")
    extent = upper - lower
    if np.any(extent <= 0) or not np.all(np.isfinite(extent)):
        raise ValueError(f"degenerate bounding box: lower={lower}, upper={upper}")
    spacing = extent / np.asarray(shape)

    axes = [lower[i] + (np.arange(shape[i]) + 0.5) * spacing[i] for i in range(3)]
    if region is None or region == "box":
        mask = np.ones(shape, dtype=bool)
    elif isinstance(region, Ball):
        c = np.asarray(region.center, dtype=float)
        r = float(region.radius)
        if r <= 0 or np.any(c - r < lower - 1e-12) or np.any(c + r > upper + 1e-12):
            raise ValueError(f"ball (center={c}, radius={r}) does not fit inside the bounds")
        X, Y, Z = np.meshgrid(*axes, indexing="ij")
        mask = (X - c[0]) ** 2 + (Y - c[1]) ** 2 + (Z - c[2]) ** 2 <= r * r
    else:
        raise ValueError(f"unknown region {region!r}")
    return DomainGrid(lower, spacing, shape, mask)


def build_sphere_grid(n_polar: int, n_azimuthal: int) -> SphereGrid:
    """Gauss-Legendre in cos(theta) times the uniform rule in phi."""
    if n_polar < 2 or n_azimuthal < 4:
        raise ValueError(
            f"need n_polar >= 2 and n_azimuthal >= 4, got {n_polar}, {n_azimuthal}"
        )
    x, w = np.polynomial.legendre.leggauss(n_polar)
    # descending cos(theta) so theta increases from the north pole
    x, w = x[::-1], w[::-1]
    phi = 2.0 * np.pi * np.arange(n_azimuthal) / n_azimuthal
    theta = np.repeat(np.arccos(x), n_azimuthal)
    weights = np.repeat(w, n_azimuthal) * (2.0 * np.pi / n_azimuthal)
    return SphereGrid(theta, np.tile(phi, n_polar), weights)


# ---------------------------------------------------------------------------
# Volume potential
# ---------------------------------------------------------------------------
def equivalent_radius(voxel_volume: float) -> float:
    """Radius of the ball with the same volume as a voxel."""
    return (3.0 * voxel_volume / FOUR_PI) ** (1.0 / 3.0)


def ball_self_integral(radius: float, k: float) -> complex:
    """Integral of ``g(0, y)`` over ``|y| < radius``.

    Equals ``(exp(ikR)(1 - ikR) - 1) / k^2`` and tends to ``R^2 / 2`` as
    ``k -> 0``.
    """
    x = k * radius
    if x < 0.1:
        # series in x; the closed form cancels catastrophically here
        ix = 1j * x
        s = sum(ix**n * (1 - n) / math.factorial(n) for n in range(2, 18))
        return complex(s / k**2)
    return complex((np.exp(1j * x) * (1.0 - 1j * x) - 1.0) / k**2)


def green(r: np.ndarray, k: float) -> np.ndarray:
    """Outgoing Helmholtz Green's function ``exp(ikr) / (4 pi r)``."""
    return np.exp(1j * k * r) / (FOUR_PI * r)


class VolumePotential:
    """Discrete operator ``h -> int_D g(x, y) h(y) dy`` at voxel centers.

    The dense matrix is assembled lazily; :meth:`apply` uses FFT
    convolution on the full box, which is exact up to rounding relative to
    the dense matrix.
    """

    def __init__(self, grid: DomainGrid, k: float):
        if k <= 0:
            raise ValueError("wavenumber must be positive")
        self.grid = grid
        self.k = float(k)
        self.self_term = ball_self_integral(equivalent_radius(grid.voxel_volume), k)
        self._kernel_hat = None
        self._matrix = None

    @property
    def n(self) -> int:
        return self.grid.n_masked

    def matrix(self) -> np.ndarray:
        """Dense ``n x n`` matrix; symmetric (not Hermitian)."""
        if self._matrix is None:
            self._matrix = assemble_volume_matrix(self.grid, self.k, self.self_term)
        return self._matrix

    def _kernel_fft(self):
        if self._kernel_hat is None:
            g = self.grid
            shape = np.asarray(g.shape)
            fshape = tuple(2 * shape)
            offs = [np.fft.fftfreq(2 * n, 1.0 / (2 * n)) for n in shape]
            # offset -n never pairs two voxels; zeroing it keeps the wrap clean
            dx = [o * h for o, h in zip(offs, g.spacing)]
            X, Y, Z = np.meshgrid(*dx, indexing="ij")
            r = np.sqrt(X**2 + Y**2 + Z**2)
            with np.errstate(divide="ignore", invalid="ignore"):
                kern = green(r, self.k) * g.voxel_volume
            kern[0, 0, 0] = self.self_term
            for ax, n in enumerate(shape):
                sl = [slice(None)] * 3
                sl[ax] = int(n)
                kern[tuple(sl)] = 0.0
            self._kernel_hat = scipy.fft.fftn(kern)
            self._fshape = fshape
        return self._kernel_hat

    def apply(self, values: np.ndarray) -> np.ndarray:
        """FFT-accelerated product with masked-voxel values."""
        khat = self._kernel_fft()
        full = self.grid.scatter(np.asarray(values, dtype=complex))
        conv = scipy.fft.ifftn(khat * scipy.fft.fftn(full, s=self._fshape))
        nx, ny, nz = self.grid.shape
        return self.grid.gather(conv[:nx, :ny, :nz])

    def apply_dense(self, values: np.ndarray) -> np.ndarray:
        return self.matrix() @ np.asarray(values, dtype=complex)


def assemble_volume_matrix(grid: DomainGrid, k: float, self_term=None, chunk: int = 512):
    """Dense volume-potential matrix, assembled in row blocks."""
    x = grid.centers
    n = len(x)
    dv = grid.voxel_volume
    if self_term is None:
        self_term = ball_self_integral(equivalent_radius(dv), k)
    mat = np.empty((n, n), dtype=complex)
    for start in range(0, n, chunk):
        stop = min(start + chunk, n)
        diff = x[start:stop, None, :] - x[None, :, :]
        r = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
        rows = np.arange(start, stop)
        r[rows - start, rows] = 1.0
        block = green(r, k) * dv
        block[rows - start, rows] = self_term
        mat[start:stop] = block
    return mat


def apply_volume_potential(grid: DomainGrid, k: float, h: ComplexField, method: str = "fft"):
    """``(G h)(x_i)`` at every masked voxel center.

    ``method`` is ``"fft"`` (default) or ``"dense"``; both give the same
    numbers up to rounding.
    """
    if not h.grid.same_as(grid):
        raise ValueError("field does not live on the given grid")
    op = VolumePotential(grid, k)
    if method == "dense":
        vals = op.apply_dense(h.values)
    elif method == "fft":
        vals = op.apply(h.values)
    else:
        raise ValueError(f"unknown method {method!r}")
    return ComplexField(grid, vals)


# ---------------------------------------------------------------------------
# Far-field operator and its adjoint
# ---------------------------------------------------------------------------
def far_field_matrix(grid: DomainGrid, sphere: SphereGrid, k: float) -> np.ndarray:
    """Matrix of ``B``: entry (j, l) is ``-(dV/4pi) exp(-ik beta_j . x_l)``."""
    phase = sphere.directions @ grid.centers.T
    return (-grid.voxel_volume / FOUR_PI) * np.exp(-1j * k * phase)


def far_field_map(grid: DomainGrid, sphere: SphereGrid, k: float, h: ComplexField) -> FarField:
    """``(B h)(beta_j) = -(1/4pi) sum_l exp(-ik beta_j . x_l) h_l dV``."""
    if not h.grid.same_as(grid):
        raise ValueError("field does not live on the given grid")
    return FarField(sphere, far_field_matrix(grid, sphere, k) @ h.values)


def far_field_adjoint(grid: DomainGrid, sphere: SphereGrid, k: float, f: FarField) -> ComplexField:
    """Adjoint of :func:`far_field_map` for the weighted inner products.

    ``(B* f)(x) = -(1/4pi) sum_j w_j exp(+ik beta_j . x) f_j``; the voxel
    volume cancels between the operator and the L^2(D) weight.
    """
    if not f.sphere.same_as(sphere):
        raise ValueError("far field does not live on the given sphere grid")
    phase = grid.centers @ sphere.directions.T
    vals = np.exp(1j * k * phase) @ (sphere.weights * f.values)
    return ComplexField(grid, -vals / FOUR_PI)
