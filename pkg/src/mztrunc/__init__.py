"""Truncation of L1-convergent sequences ``B u_j -> K`` and a second-order
potential for the linearised isentropic Euler system."""

from .convex_geom import ConvexBody, DistanceResult, hausdorff, inflated_distance, project, sup_norm
from .field import (
    Grid,
    GridField,
    HomogeneousOperator,
    apply_operator,
    ball_average,
    l1_dist_integral,
    read_fld,
    sup_norm_derivative,
    variable_mollify,
    write_fld,
)

__version__ = "0.1.0"
