"""Exact laws of finite-velocity motions."""
from .bessel import bessel_i1, bessel_tilde, bessel_tilde_array
from .densities import (
    DensityValue,
    FaceChart,
    complete_density,
    complete_density_values,
    complete_integral,
    complete_series,
    cyclic_density,
    cyclic_density_values,
    density_sum,
    face_density,
    minimal_density,
    minimal_joint_density,
)
from .masses import (
    border_mass,
    face_mass_complete,
    face_masses_complete,
    identity_exp_product,
    identity_subset_power_sum,
    inner_mass_complete,
    mass_exactly_H_plus_1,
    uniform_face_mass,
    vertex_mass,
)
