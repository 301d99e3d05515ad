"""Inverse design at fixed wavenumber and incident direction.

Pipeline, for a target pattern ``f`` on the sphere and accuracy ``eps``:

1. ``fit_h``: Tikhonov fit of a source density ``h`` with ``B h ~ f``,
   either at a fixed ``lam`` or with ``lam`` chosen by the discrepancy
   principle so that ``||f - B h||`` lands in ``[eps/2, eps]``.
2. ``compute_psi``: ``psi = u0 - G h``.
3. ``choose_delta`` / ``cutoff``: zero ``h`` where ``|psi| < delta``,
   recompute ``psi_delta = u0 - G h_delta`` and set
   ``q_delta = h_delta / psi_delta`` on the kept voxels.
4. ``density``: particle density ``N = (q_delta - q0) / C0``.

Because ``u := psi_delta`` solves the Lippmann-Schwinger equation with
``q_delta``, the scattering amplitude of ``q_delta`` is exactly
``B h_delta``; :func:`wavefocus.forward.solve_scattering` checks this
independently.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

from .grid import (
    FOUR_PI,
    ComplexField,
    DomainGrid,
    FarField,
    RealField,
    SphereGrid,
    VolumePotential,
    WaveContext,
    far_field_map,
    far_field_matrix,
)
from .forward import Potential, solve_scattering

logger = logging.getLogger(__name__)

LAMBDA_FLOOR = 1e-14
DELTA_LADDER = tuple(2.0 ** -m for m in range(20, 2, -1))  # finest first
BOUND_FACTOR = 0.5


class CutoffBoundWarning(UserWarning):
    pass


@dataclass(frozen=True, eq=False)
class DesignTarget:
    f: FarField
    epsilon: float
    context: WaveContext

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")
        if not np.all(np.isfinite(self.f.values)):
            raise ValueError("target pattern has non-finite values")


@dataclass(frozen=True)
class RegularizationPolicy:
    """``mode`` is ``"fixed"`` (use ``lam``) or ``"discrepancy"``."""

    mode: str = "discrepancy"
    lam: float | None = None
    floor: float = LAMBDA_FLOOR
    max_bisections: int = 200

    def __post_init__(self):
        if self.mode not in ("fixed", "discrepancy"):
            raise ValueError(f"unknown regularization mode {self.mode!r}")
        if self.mode == "fixed" and not (self.lam is not None and self.lam > 0):
            raise ValueError("fixed regularization needs lam > 0")
        if not self.floor > 0:
            raise ValueError("lambda floor must be positive")


# ---------------------------------------------------------------------------
# Tikhonov fit
# ---------------------------------------------------------------------------
class TikhonovProblem:
    """``min ||f - B h||^2_{S^2} + lam ||h||^2_D`` through one SVD.

    With ``z = sqrt(dV) h`` and ``b = sqrt(w) f`` the problem becomes an
    ordinary least-squares problem for ``A = diag(sqrt(w)) B / sqrt(dV)``;
    residual and solution norm are then closed-form in ``lam``.
    """

    def __init__(self, grid: DomainGrid, sphere: SphereGrid, k: float, f: FarField):
        self.grid = grid
        self.sphere = sphere
        self.k = k
        self.f = f
        sw = np.sqrt(sphere.weights)
        self._sv = np.sqrt(grid.voxel_volume)
        A = sw[:, None] * far_field_matrix(grid, sphere, k) / self._sv
        self.U, self.s, self.Vh = np.linalg.svd(A, full_matrices=False)
        b = sw * f.values
        self.beta = self.U.conj().T @ b
        self.perp2 = float(np.linalg.norm(b - self.U @ self.beta) ** 2)

    def coefficients(self, lam: float) -> np.ndarray:
        return self.s / (self.s**2 + lam) * self.beta

    def solve(self, lam: float) -> ComplexField:
        z = self.Vh.conj().T @ self.coefficients(lam)
        return ComplexField(self.grid, z / self._sv)

    def residual(self, lam: float) -> float:
        filt = lam / (self.s**2 + lam)
        return float(np.sqrt(np.sum((filt * np.abs(self.beta)) ** 2) + self.perp2))

    def solution_norm(self, lam: float) -> float:
        return float(np.linalg.norm(self.coefficients(lam)))


@dataclass(frozen=True, eq=False)
class FitResult:
    h: ComplexField
    lam: float
    residual: float
    h_norm: float
    reached: bool


def fit_h(
    target: DesignTarget,
    grid: DomainGrid,
    sphere: SphereGrid,
    reg: RegularizationPolicy,
    problem: TikhonovProblem | None = None,
) -> FitResult:
    """Fit ``h`` to the target pattern with Tikhonov regularization.

    In discrepancy mode ``lam`` is bisected (in log scale) until the
    residual lies in ``[eps/2, eps]``.  If even ``lam = reg.floor`` leaves
    a residual above ``eps`` the floor solution is returned with
    ``reached=False``; a target with ``||f|| <= eps`` gets ``h = 0``.
    """
    if not target.f.sphere.same_as(sphere):
        raise ValueError("target pattern does not live on the given sphere grid")
    k = target.context.k
    if problem is None:
        problem = TikhonovProblem(grid, sphere, k, target.f)
    eps = target.epsilon

    if reg.mode == "fixed":
        lam = reg.lam
    else:
        lam = _discrepancy_lambda(problem, eps, reg)
    if lam == np.inf:
        h = ComplexField.zeros(grid)
    else:
        h = problem.solve(lam)
    residual = FarField(sphere, target.f.values - far_field_map(grid, sphere, k, h).values).norm()
    return FitResult(h, lam, residual, h.norm(), residual <= eps)


def _discrepancy_lambda(problem: TikhonovProblem, eps: float, reg: RegularizationPolicy) -> float:
    lo = reg.floor
    if problem.residual(lo) > eps:
        logger.warning(
            "target unreachable: residual %.3e at lambda floor exceeds eps=%.3e",
            problem.residual(lo), eps,
        )
        return lo
    if problem.f.norm() <= eps:
        return np.inf
    smax = float(problem.s[0]) if len(problem.s) else 0.0
    hi = max(smax**2, 1.0) * 1e4
    while problem.residual(hi) <= eps:
        hi *= 1e4
    for _ in range(reg.max_bisections):
        mid = np.sqrt(lo * hi)
        r = problem.residual(mid)
        if 0.5 * eps <= r <= eps:
            return float(mid)
        if r > eps:
            hi = mid
        else:
            lo = mid
    return float(lo)


# ---------------------------------------------------------------------------
# psi, cutoff and delta selection
# ---------------------------------------------------------------------------
def compute_psi(grid: DomainGrid, context: WaveContext, h: ComplexField, operator=None) -> ComplexField:
    """``psi = u0 - G h`` at the voxel centers."""
    op = operator if operator is not None else VolumePotential(grid, context.k)
    u0 = context.incident(grid.centers)
    return ComplexField(grid, u0 - op.apply(h.values))


@dataclass(frozen=True, eq=False)
class CutoffResult:
    h_delta: ComplexField
    q_delta: Potential
    psi_delta: ComplexField
    cut: np.ndarray
    delta: float
    min_kept_psi: float
    bound_ok: bool

    @property
    def cut_fraction(self) -> float:
        return float(np.mean(self.cut)) if len(self.cut) else 0.0


def cutoff(
    h: ComplexField,
    psi: ComplexField,
    delta: float,
    context: WaveContext,
    operator: VolumePotential | None = None,
) -> CutoffResult:
    """Remove the tube ``|psi| < delta`` and rebuild ``q`` off it.

    ``psi_delta = psi + G(h - h_delta)``, which equals ``u0 - G h_delta``
    whenever ``psi = u0 - G h``.  ``bound_ok`` is False if a kept voxel ends
    up with ``|psi_delta| < delta / 2``; the caller should then try a larger
    ``delta``.
    """
    if not delta > 0:
        raise ValueError("delta must be positive")
    grid = h.grid
    cut = np.abs(psi.values) < delta
    hd = np.where(cut, 0.0, h.values)
    if np.any(cut):
        op = operator if operator is not None else VolumePotential(grid, context.k)
        psid = psi.values + op.apply(h.values - hd)
    else:
        psid = psi.values.copy()
    kept = ~cut
    q = np.zeros(grid.n_masked, dtype=complex)
    q[kept] = hd[kept] / psid[kept]
    min_kept = float(np.min(np.abs(psid[kept]), initial=np.inf))
    bound_ok = min_kept >= BOUND_FACTOR * delta
    return CutoffResult(
        ComplexField(grid, hd),
        Potential(ComplexField(grid, q), context),
        ComplexField(grid, psid),
        cut,
        float(delta),
        min_kept,
        bool(bound_ok),
    )


def choose_delta(
    h: ComplexField,
    psi: ComplexField,
    context: WaveContext,
    operator: VolumePotential | None = None,
    ladder=DELTA_LADDER,
) -> float:
    """Smallest rung of ``2^-m, m = 3..20`` whose cutoff keeps the bound."""
    op = operator if operator is not None else VolumePotential(h.grid, context.k)
    for delta in sorted(ladder):
        if cutoff(h, psi, delta, context, op).bound_ok:
            return float(delta)
    coarsest = float(max(ladder))
    warnings.warn(
        f"no cutoff level keeps |psi_delta| >= delta/2; using delta={coarsest}",
        CutoffBoundWarning,
        stacklevel=2,
    )
    return coarsest


def null_tube_integral(
    psi_fn,
    h_fn,
    point,
    delta: float,
    lower,
    upper,
    n_phi: int = 32,
    order: int = 8,
    grading: int = 24,
) -> float:
    """``int_{|psi| < delta} |h(y)| / (4 pi |point - y|) dy`` near a null line.

    ``point`` must lie on the zero set of ``psi``.  The null line through it
    is taken straight, with tangent ``grad Re psi x grad Im psi``; the tube
    cross-section at each station is found by bisection on ``|psi| = delta``
    along rays, and the integral is done in cylindrical coordinates around
    the line with geometrically graded Gauss-Legendre panels toward the
    singular point.  The integration stops where the line leaves the box
    ``[lower, upper]``.
    """
    x0 = np.asarray(point, dtype=float)
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    scale = float(np.max(upper - lower))

    # tangent of the null line from the gradients of Re psi and Im psi
    step = 1e-6 * scale
    grads = np.empty((3, 2))
    for i in range(3):
        e = np.zeros(3)
        e[i] = step
        d = (psi_fn((x0 + e)[None]) - psi_fn((x0 - e)[None]))[0] / (2 * step)
        grads[i] = d.real, d.imag
    t = np.cross(grads[:, 0], grads[:, 1])
    if np.linalg.norm(t) == 0:
        raise ValueError("grad Re psi and grad Im psi are parallel at the point")
    t /= np.linalg.norm(t)
    e1 = np.cross(t, [1.0, 0.0, 0.0] if abs(t[0]) < 0.9 else [0.0, 1.0, 0.0])
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(t, e1)

    # where the line x0 + s t leaves the box
    with np.errstate(divide="ignore"):
        ta = (lower - x0) / t
        tb = (upper - x0) / t
    s_min = float(np.max(np.where(np.isfinite(ta), np.minimum(ta, tb), -np.inf)))
    s_max = float(np.min(np.where(np.isfinite(ta), np.maximum(ta, tb), np.inf)))

    gx, gw = np.polynomial.legendre.leggauss(order)

    def graded(length):
        # panels [0, r^(grading)], ..., [r, 1] scaled to [0, length]
        edges = np.concatenate([[0.0], 2.0 ** -np.arange(grading, -1, -1)]) * length
        a, b = edges[:-1, None], edges[1:, None]
        nodes = (0.5 * (b - a) * gx + 0.5 * (a + b)).ravel()
        weights = (0.5 * (b - a) * gw).ravel()
        return nodes, weights

    s_pos, w_pos = graded(s_max)
    s_neg, w_neg = graded(-s_min)
    s_nodes = np.concatenate([-s_neg, s_pos])
    s_w = np.concatenate([w_neg, w_pos])
    phi = 2 * np.pi * np.arange(n_phi) / n_phi
    w_phi = 2 * np.pi / n_phi

    S, P = np.meshgrid(s_nodes, phi, indexing="ij")
    base = x0 + S[..., None] * t
    ray = np.cos(P)[..., None] * e1 + np.sin(P)[..., None] * e2

    def mod_psi(rho):
        pts = base + rho[..., None] * ray
        return np.abs(psi_fn(pts.reshape(-1, 3))).reshape(rho.shape)

    inside0 = mod_psi(np.zeros(S.shape)) < delta
    hi = np.full(S.shape, delta)
    for _ in range(60):
        grow = (mod_psi(hi) < delta) & inside0
        if not grow.any():
            break
        hi = np.where(grow, 2 * hi, hi)
    lo = np.zeros(S.shape)
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        below = mod_psi(mid) < delta
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
    rho_b = np.where(inside0, 0.5 * (lo + hi), 0.0)

    u_nodes, u_w = graded(1.0)
    rho = rho_b[..., None] * u_nodes
    pts = base[:, :, None, :] + rho[..., None] * ray[:, :, None, :]
    habs = np.abs(h_fn(pts.reshape(-1, 3))).reshape(rho.shape)
    integrand = habs * rho / (FOUR_PI * np.sqrt(rho**2 + S[..., None] ** 2 + 1e-300))
    inner = np.sum(integrand * u_w, axis=-1) * rho_b
    return float(np.sum(inner.sum(axis=1) * w_phi * s_w))


# ---------------------------------------------------------------------------
# Density and the full pipeline
# ---------------------------------------------------------------------------
@dataclass(frozen=True, eq=False)
class DensityResult:
    raw: RealField
    clipped: RealField
    infeasible: np.ndarray
    negative_voxels: int
    complex_voxels: int

    @property
    def infeasible_voxels(self) -> int:
        return int(np.count_nonzero(self.infeasible))

    @property
    def infeasible_fraction(self) -> float:
        n = len(self.infeasible)
        return self.infeasible_voxels / n if n else 0.0


def density(q_delta: Potential, q0: Potential, c0: float) -> DensityResult:
    """Particles per unit volume ``N = Re(q_delta - q0) / C0``.

    Voxels with ``N < 0`` or with a non-negligible imaginary part of
    ``q_delta - q0`` cannot be realized by soft particles; they are counted,
    and ``clipped`` zeroes them.
    """
    if not c0 > 0:
        raise ValueError("capacitance must be positive")
    if not q_delta.grid.same_as(q0.grid):
        raise ValueError("q_delta and q0 live on different grids")
    p = q_delta.values - q0.values
    qmax = max(np.max(np.abs(q_delta.values), initial=0.0), np.max(np.abs(q0.values), initial=0.0))
    n = p.real / c0
    imag_bad = np.abs(p.imag) > 1e-8 * qmax
    neg = n < 0
    bad = imag_bad | neg
    return DensityResult(
        RealField(q_delta.grid, n),
        RealField(q_delta.grid, np.where(bad, 0.0, n)),
        bad,
        int(np.count_nonzero(neg)),
        int(np.count_nonzero(imag_bad)),
    )


@dataclass(frozen=True, eq=False)
class DesignResult:
    target: DesignTarget
    h: ComplexField
    h_delta: ComplexField
    psi: ComplexField
    psi_delta: ComplexField
    q_delta: Potential
    q0: Potential
    c0: float
    delta: float
    lam: float
    residual_fit: float
    residual_final: float
    cut_fraction: float
    min_psi: float
    min_kept_psi: float
    bound_ok: bool
    density: DensityResult
    predicted: FarField
    notes: list = field(default_factory=list)

    @property
    def infeasible_voxels(self) -> int:
        return self.density.infeasible_voxels

    @property
    def h_norm(self) -> float:
        return self.h.norm()

    @property
    def within_2eps(self) -> bool:
        return self.residual_final <= 2.0 * self.target.epsilon

    def report(self) -> dict:
        return {
            "delta": self.delta,
            "lambda": None if self.lam == np.inf else self.lam,
            "epsilon": self.target.epsilon,
            "target_norm": self.target.f.norm(),
            "residual_fit": self.residual_fit,
            "residual_final": self.residual_final,
            "within_2eps": self.within_2eps,
            "cut_fraction": self.cut_fraction,
            "min_psi": self.min_psi,
            "min_kept_psi_delta": self.min_kept_psi,
            "bound_ok": self.bound_ok,
            "h_norm": self.h_norm,
            "h_delta_norm": self.h_delta.norm(),
            "q_delta_max": self.q_delta.field.max_abs(),
            "infeasible_voxels": self.infeasible_voxels,
            "negative_voxels": self.density.negative_voxels,
            "complex_voxels": self.density.complex_voxels,
            "n_voxels": self.h.grid.n_masked,
            "capacitance": self.c0,
            "notes": list(self.notes),
        }


def design(
    target: DesignTarget,
    grid: DomainGrid,
    sphere: SphereGrid,
    reg: RegularizationPolicy,
    c0: float,
    q0: Potential | None = None,
    problem: TikhonovProblem | None = None,
) -> DesignResult:
    """Run fit, psi, cutoff and density and collect the diagnostics.

    The final residual is measured from ``h_delta``.  A final residual
    above ``2 max(eps, residual_fit)`` is logged and recorded in ``notes``
    rather than raised.
    """
    ctx = target.context
    if q0 is None:
        q0 = Potential(ComplexField.zeros(grid), ctx)
    op = VolumePotential(grid, ctx.k)
    notes = []

    fit = fit_h(target, grid, sphere, reg, problem)
    if not fit.reached:
        notes.append(
            f"target not reached at lambda={fit.lam:.3e}: residual {fit.residual:.4e} > eps {target.epsilon:.4e}"
        )
    psi = compute_psi(grid, ctx, fit.h, op)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", CutoffBoundWarning)
        delta = choose_delta(fit.h, psi, ctx, op)
    for w in caught:
        notes.append(str(w.message))
    cut = cutoff(fit.h, psi, delta, ctx, op)
    predicted = far_field_map(grid, sphere, ctx.k, cut.h_delta)
    residual_final = FarField(sphere, target.f.values - predicted.values).norm()
    if residual_final > 2.0 * max(target.epsilon, fit.residual):
        msg = (
            f"cutoff inflated the residual: {residual_final:.4e} > "
            f"2*max(eps, residual_fit) = {2 * max(target.epsilon, fit.residual):.4e}"
        )
        logger.warning(msg)
        notes.append(msg)
    dens = density(cut.q_delta, q0, c0)
    return DesignResult(
        target=target,
        h=fit.h,
        h_delta=cut.h_delta,
        psi=psi,
        psi_delta=cut.psi_delta,
        q_delta=cut.q_delta,
        q0=q0,
        c0=float(c0),
        delta=delta,
        lam=fit.lam,
        residual_fit=fit.residual,
        residual_final=residual_final,
        cut_fraction=cut.cut_fraction,
        min_psi=float(np.min(np.abs(psi.values), initial=np.inf)),
        min_kept_psi=cut.min_kept_psi,
        bound_ok=cut.bound_ok,
        density=dens,
        predicted=predicted,
        notes=notes,
    )


def design_from_potential(
    q: Potential, sphere: SphereGrid, c0: float, epsilon: float = 1e-12, q0: Potential | None = None
) -> DesignResult:
    """Wrap a known potential as a design (``h = q u``, ``psi = u``).

    Useful when the potential itself is the design goal, e.g. for checking
    the particle realization of a uniform medium.
    """
    grid = q.grid
    ctx = q.context
    if q0 is None:
        q0 = Potential(ComplexField.zeros(grid), ctx)
    sol = solve_scattering(q, sphere)
    h = ComplexField(grid, q.values * sol.u.values)
    op = VolumePotential(grid, ctx.k)
    delta = choose_delta(h, sol.u, ctx, op)
    cut = cutoff(h, sol.u, delta, ctx, op)
    predicted = far_field_map(grid, sphere, ctx.k, cut.h_delta)
    target = DesignTarget(sol.amplitude, epsilon, ctx)
    residual = FarField(sphere, sol.amplitude.values - predicted.values).norm()
    return DesignResult(
        target=target,
        h=h,
        h_delta=cut.h_delta,
        psi=sol.u,
        psi_delta=cut.psi_delta,
        q_delta=cut.q_delta,
        q0=q0,
        c0=float(c0),
        delta=delta,
        lam=0.0,
        residual_fit=0.0,
        residual_final=residual,
        cut_fraction=cut.cut_fraction,
        min_psi=float(np.min(np.abs(sol.u.values))),
        min_kept_psi=cut.min_kept_psi,
        bound_ok=cut.bound_ok,
        density=density(cut.q_delta, q0, c0),
        predicted=predicted,
        notes=["built from a given potential"],
    )


# ---------------------------------------------------------------------------
# Targets and ill-posedness diagnostics
# ---------------------------------------------------------------------------
def cap_target(sphere: SphereGrid, half_angle: float = np.pi / 6, axis=(0.0, 0.0, 1.0), value: complex = 1.0) -> FarField:
    """Indicator of the polar cap ``beta . axis >= cos(half_angle)``."""
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    inside = sphere.directions @ axis >= np.cos(half_angle)
    return FarField(sphere, np.where(inside, value, 0.0))


def annulus_target(sphere: SphereGrid, inner: float, outer: float, axis=(0.0, 0.0, 1.0), value: complex = 1.0) -> FarField:
    """Indicator of ``inner <= angle(beta, axis) <= outer``."""
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    ang = np.arccos(np.clip(sphere.directions @ axis, -1.0, 1.0))
    return FarField(sphere, np.where((ang >= inner) & (ang <= outer), value, 0.0))


def synthetic_target(grid: DomainGrid, sphere: SphereGrid, k: float, seed: int, scale: float = 1.0):
    """Reachable target ``f = B h*`` for a random complex ``h*``.

    Returns ``(f, h_star)``.
    """
    rng = np.random.default_rng(seed)
    n = grid.n_masked
    h_star = ComplexField(grid, scale * (rng.standard_normal(n) + 1j * rng.standard_normal(n)))
    return far_field_map(grid, sphere, k, h_star), h_star


def far_field_singular_values(grid: DomainGrid, sphere: SphereGrid, k: float) -> np.ndarray:
    """Singular values of ``B`` between L^2(D) and L^2(S^2), descending."""
    sw = np.sqrt(sphere.weights)
    A = sw[:, None] * far_field_matrix(grid, sphere, k) / np.sqrt(grid.voxel_volume)
    return np.linalg.svd(A, compute_uv=False)
