"""Command-line front end.

Usage::

    wavefocus {design,forward,verify,ensemble,diagnose} --config run.json --out outdir
              [--seed N] [--tol T]

Exit status: 0 success, 1 tolerance failure (or non-convergence), 2 input
error.  On failure a machine-readable ``error.json`` is written to the
output directory and echoed on stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import io
from .design import (
    DesignTarget,
    RegularizationPolicy,
    annulus_target,
    cap_target,
    design,
    far_field_singular_values,
    synthetic_target,
)
from .forward import DEFAULT_TOL, NonConvergenceError, Potential, solve_scattering
from .grid import (
    FOUR_PI,
    Ball,
    ComplexField,
    FarField,
    RealField,
    WaveContext,
    build_domain_grid,
    build_sphere_grid,
    relative_distance,
)
from .particles import ParticleError, effective_medium_check

logger = logging.getLogger("wavefocus")

EXIT_OK, EXIT_TOLERANCE, EXIT_INPUT = 0, 1, 2
COMMANDS = ("design", "forward", "verify", "ensemble", "diagnose")
DIAGNOSE_BUDGET = 2**23  # entries of the far-field matrix


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Config parsing; everything here is cheap and runs before any solve
# ---------------------------------------------------------------------------
class Config:
    def __init__(self, data: dict, base: Path, seed=None, tol=None):
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        self.data = dict(data)
        self.base = base
        if seed is not None:
            self.data["seed"] = seed
        if tol is not None:
            self.data["tol"] = tol

    def get(self, key, default=None):
        return self.data.get(key, default)

    def require(self, key):
        if key not in self.data:
            raise ConfigError(f"missing config key {key!r}")
        return self.data[key]

    def number(self, key, default=None, positive=True):
        val = self.data.get(key, default)
        if val is None:
            raise ConfigError(f"missing config key {key!r}")
        try:
            val = float(val)
        except (TypeError, ValueError):
            raise ConfigError(f"{key!r} must be a number") from None
        if not np.isfinite(val) or (positive and val <= 0):
            raise ConfigError(f"{key!r} must be positive and finite, got {val}")
        return val

    def path(self, value) -> Path:
        p = Path(value)
        if not p.is_absolute():
            p = self.base / p
        if not p.exists():
            raise ConfigError(f"input file not found: {p}")
        return p

    @property
    def seed(self) -> int:
        try:
            return int(self.data.get("seed", 0))
        except (TypeError, ValueError):
            raise ConfigError("'seed' must be an integer") from None

    @property
    def tol(self) -> float:
        return self.number("tol", DEFAULT_TOL)

    def context(self) -> WaveContext:
        k = self.number("k")
        alpha = np.asarray(self.data.get("alpha", [0.0, 0.0, 1.0]), dtype=float)
        if alpha.shape != (3,) or not np.linalg.norm(alpha) > 0:
            raise ConfigError("'alpha' must be a nonzero 3-vector")
        return WaveContext.from_direction(k, alpha)

    def grid(self):
        spec = self.require("grid")
        try:
            bounds = [list(map(float, b)) for b in spec["bounds"]]
            shape = [int(n) for n in spec["shape"]]
        except (KeyError, TypeError, ValueError):
            raise ConfigError("'grid' needs 'bounds' [[x,y,z],[x,y,z]] and 'shape' [nx,ny,nz]") from None
        region = spec.get("region", {"type": "box"})
        kind = region.get("type", "box")
        if kind == "box":
            reg = None
        elif kind == "ball":
            try:
                reg = Ball(tuple(map(float, region["center"])), float(region["radius"]))
            except (KeyError, TypeError, ValueError):
                raise ConfigError("ball region needs 'center' and 'radius'") from None
        else:
            raise ConfigError(f"unknown region type {kind!r}")
        try:
            return build_domain_grid(bounds, shape, reg)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def sphere(self):
        spec = self.require("sphere")
        try:
            return build_sphere_grid(int(spec["n_polar"]), int(spec["n_azimuthal"]))
        except (KeyError, TypeError) as exc:
            raise ConfigError("'sphere' needs 'n_polar' and 'n_azimuthal'") from exc
        except ValueError as exc:
            raise ConfigError(str(exc)) from None


def _complex(value) -> complex:
    if isinstance(value, (list, tuple)) and len(value) == 2:
        return complex(float(value[0]), float(value[1]))
    return complex(float(value))


def _background(cfg: Config, grid, ctx) -> Potential:
    spec = cfg.get("background", {"type": "zero"})
    kind = spec.get("type", "zero")
    if kind == "zero":
        return Potential(ComplexField.zeros(grid), ctx)
    if kind == "constant":
        return Potential.constant(grid, ctx, _complex(spec.get("value", 0.0)))
    if kind == "file":
        fld = io.read_field(cfg.path(spec["path"]))
        if not fld.grid.same_as(grid):
            raise ConfigError("background field grid differs from the design grid")
        return Potential(fld, ctx)
    raise ConfigError(f"unknown background type {kind!r}")


def _radius(cfg: Config, key="particle_radius", default=0.01) -> float:
    return cfg.number(key, default)


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------
def run_design(cfg: Config, out: Path) -> int:
    ctx = cfg.context()
    grid = cfg.grid()
    tspec = cfg.require("target")
    kind = tspec.get("type")
    params = tspec.get("params", {})
    if kind == "file":
        target_ff = io.read_far_field(cfg.path(params.get("path", tspec.get("path"))))
        sphere = target_ff.sphere
    else:
        sphere = cfg.sphere()
    reg_spec = cfg.get("reg", {"mode": "discrepancy"})
    try:
        reg = RegularizationPolicy(
            mode=reg_spec.get("mode", "discrepancy"),
            lam=reg_spec.get("lambda"),
            floor=float(reg_spec.get("floor", 1e-14)),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    a = _radius(cfg)
    q0 = _background(cfg, grid, ctx)

    if kind == "cap":
        target_ff = cap_target(
            sphere,
            np.deg2rad(float(params.get("half_angle_deg", 30.0))),
            params.get("axis", [0.0, 0.0, 1.0]),
            _complex(params.get("value", 1.0)),
        )
    elif kind == "annulus":
        target_ff = annulus_target(
            sphere,
            np.deg2rad(float(params.get("inner_deg", 20.0))),
            np.deg2rad(float(params.get("outer_deg", 40.0))),
            params.get("axis", [0.0, 0.0, 1.0]),
            _complex(params.get("value", 1.0)),
        )
    elif kind == "zero":
        target_ff = FarField.zeros(sphere)
    elif kind == "synthetic":
        target_ff, _ = synthetic_target(grid, sphere, ctx.k, cfg.seed, float(params.get("scale", 1.0)))
    elif kind != "file":
        raise ConfigError(f"unknown target type {kind!r}")

    if "epsilon" in cfg.data:
        eps = cfg.number("epsilon")
    else:
        eps = cfg.number("epsilon_rel") * target_ff.norm()
        if eps <= 0:
            # zero target: any positive accuracy is met by h = 0
            eps = cfg.number("epsilon_rel")
    target = DesignTarget(target_ff, eps, ctx)

    result = design(target, grid, sphere, reg, c0=FOUR_PI * a, q0=q0)
    out.mkdir(parents=True, exist_ok=True)
    io.write_far_field(out / "target.farfield", target_ff)
    io.write_far_field(out / "predicted.farfield", result.predicted)
    io.write_field(out / "h_delta.field", result.h_delta)
    io.write_field(out / "psi.field", result.psi)
    io.write_field(out / "q_delta.field", result.q_delta.field)
    io.write_field(out / "density.field", result.density.raw)
    io.write_field(out / "density_clipped.field", result.density.clipped)
    report = result.report()
    report.update(k=ctx.k, alpha=ctx.alpha, grid_shape=list(grid.shape), particle_radius=a)
    io.write_json(out / "design_report.json", report)
    return EXIT_OK if result.within_2eps else EXIT_TOLERANCE


def _load_potential(cfg: Config, ctx):
    spec = cfg.get("potential")
    if spec is None and "q_path" in cfg.data:
        spec = {"type": "file", "path": cfg.data["q_path"]}
    if spec is None:
        raise ConfigError("missing 'potential' (or 'q_path')")
    kind = spec.get("type", "file")
    if kind == "file":
        return Potential(io.read_field(cfg.path(spec["path"])), ctx)
    if kind == "constant":
        return Potential.constant(cfg.grid(), ctx, _complex(spec.get("value", 0.0)))
    raise ConfigError(f"unknown potential type {kind!r}")


def _solve_report(sol, ctx) -> dict:
    rep = sol.report()
    rep.update(k=ctx.k, alpha=ctx.alpha)
    return rep


def run_forward(cfg: Config, out: Path) -> int:
    ctx = cfg.context()
    q = _load_potential(cfg, ctx)
    sphere = cfg.sphere()
    tol = cfg.tol
    sol = solve_scattering(q, sphere, tol=tol)
    out.mkdir(parents=True, exist_ok=True)
    io.write_field(out / "u.field", sol.u)
    io.write_far_field(out / "amplitude.farfield", sol.amplitude)
    io.write_json(out / "solve_report.json", _solve_report(sol, ctx))
    return EXIT_OK


def run_verify(cfg: Config, out: Path) -> int:
    """Forward-solve a designed potential and compare with the prediction.

    Without ``predicted_path`` the reference is the zero pattern on the
    configured sphere grid.
    """
    ctx = cfg.context()
    q = _load_potential(cfg, ctx)
    tolerance = cfg.number("tolerance", 0.05)
    if "predicted_path" in cfg.data:
        predicted = io.read_far_field(cfg.path(cfg.data["predicted_path"]))
        sphere = predicted.sphere
    else:
        sphere = cfg.sphere()
        predicted = FarField.zeros(sphere)
    sol = solve_scattering(q, sphere, tol=cfg.tol)
    mismatch = relative_distance(sol.amplitude, predicted)
    passed = mismatch <= tolerance
    out.mkdir(parents=True, exist_ok=True)
    io.write_far_field(out / "amplitude.farfield", sol.amplitude)
    report = _solve_report(sol, ctx)
    report.update(
        mismatch=mismatch,
        tolerance=tolerance,
        passed=passed,
        amplitude_norm=sol.amplitude.norm(),
        predicted_norm=predicted.norm(),
    )
    io.write_json(out / "verify_report.json", report)
    return EXIT_OK if passed else EXIT_TOLERANCE


def run_ensemble(cfg: Config, out: Path) -> int:
    ctx = cfg.context()
    a = _radius(cfg)
    density = io.read_field(cfg.path(cfg.require("density_path")), real=True)
    predicted = io.read_far_field(cfg.path(cfg.require("predicted_path")))
    # density files from `design` are for the design radius; rescale to a
    design_radius = cfg.number("density_radius", a)
    density = RealField(density.grid, np.clip(density.values, 0.0, None) * design_radius / a)
    if "seeds" in cfg.data:
        seeds = [int(s) for s in cfg.data["seeds"]]
    else:
        n = int(cfg.get("n_seeds", 8))
        seeds = list(range(cfg.seed, cfg.seed + n))
    tolerance = cfg.number("tolerance", 0.25)
    if ctx.k * a > 0.1:
        raise ConfigError(f"ka = {ctx.k * a:.3g} exceeds 0.1")

    report = effective_medium_check(None, a, seeds, density=density, predicted=predicted, context=ctx)
    out.mkdir(parents=True, exist_ok=True)
    if report.mean_count > 0:
        for cloud in report.clouds:
            io.write_cloud(out / f"cloud_seed{cloud.seed}.csv", cloud)
        io.write_far_field(out / "ensemble_amplitude.farfield", report.averaged)
    data = report.to_dict()
    data.update(tolerance=tolerance, passed=report.distance_to_design <= tolerance, seeds=seeds)
    io.write_json(out / "ensemble_report.json", data)
    return EXIT_OK if data["passed"] else EXIT_TOLERANCE


def run_diagnose(cfg: Config, out: Path) -> int:
    ctx = cfg.context()
    grid = cfg.grid()
    sphere = cfg.sphere()
    size = grid.n_masked * len(sphere)
    if size > DIAGNOSE_BUDGET:
        raise ConfigError(f"far-field matrix has {size} entries, above the budget {DIAGNOSE_BUDGET}")
    s = far_field_singular_values(grid, sphere, ctx.k)
    out.mkdir(parents=True, exist_ok=True)
    io.write_singular_values(out / "singular_values.csv", s)
    report = {
        "k": ctx.k,
        "grid_shape": list(grid.shape),
        "n_voxels": grid.n_masked,
        "n_directions": len(sphere),
        "n_singular_values": len(s),
        "sigma_max": float(s[0]),
        "sigma_min": float(s[-1]),
        "condition_number": float(s[0] / s[-1]) if s[-1] > 0 else float("inf"),
        "monotone": bool(np.all(np.diff(s) <= 0)),
    }
    io.write_json(out / "diagnose_report.json", report)
    return EXIT_OK


RUNNERS = {
    "design": run_design,
    "forward": run_forward,
    "verify": run_verify,
    "ensemble": run_ensemble,
    "diagnose": run_diagnose,
}


def _fail(out: Path, code: int, exc: Exception) -> int:
    payload = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
    residual = getattr(exc, "residual", None)
    if residual is not None:
        payload["residual"] = residual
    try:
        out.mkdir(parents=True, exist_ok=True)
        io.write_json(out / "error.json", payload)
    except OSError:
        pass
    print(json.dumps(io._jsonable(payload), sort_keys=True), file=sys.stderr)
    return code


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="wavefocus", description=__doc__.split("\n")[0])
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", required=True, help="JSON run configuration")
    parser.add_argument("--out", default=".", help="output directory")
    parser.add_argument("--seed", type=int, default=None, help="overrides the config seed")
    parser.add_argument("--tol", type=float, default=None, help="linear-solver tolerance")
    parser.add_argument("-v", "--verbose", action="store_true")
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    out = Path(args.out)

    try:
        cfg_path = Path(args.config)
        try:
            data = json.loads(cfg_path.read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {cfg_path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON in {cfg_path}: {exc}") from None
        cfg = Config(data, cfg_path.resolve().parent, args.seed, args.tol)
        return RUNNERS[args.command](cfg, out)
    except NonConvergenceError as exc:
        return _fail(out, EXIT_TOLERANCE, exc)
    except (ConfigError, io.FormatError, ParticleError, ValueError, KeyError) as exc:
        return _fail(out, EXIT_INPUT, exc)


if __name__ == "__main__":
    sys.exit(main())
