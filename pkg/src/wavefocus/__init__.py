"""Design media that scatter a plane wave into a prescribed far-field pattern.

Given a target far-field pattern at one wavenumber and one incident
direction, build a potential whose scattering amplitude approximates the
target, convert it into a particle density, and check both steps against
independent forward solvers.
"""

from .grid import (
    Ball,
    ComplexField,
    DomainGrid,
    FarField,
    RealField,
    SphereGrid,
    WaveContext,
    apply_volume_potential,
    build_domain_grid,
    build_sphere_grid,
    far_field_adjoint,
    far_field_map,
    relative_distance,
)

__version__ = "0.1.0"
