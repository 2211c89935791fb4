"""Tear-film thinning simulation and evaporation-parameter estimation."""

from .evaporation import (
    CircularPeak,
    EllipticPeak,
    EvaporationSpec,
    GeometryError,
    RadialEvaporation,
    StreakEvaporation,
    ellipse_geometry,
    eval_elliptic_J,
    eval_multi_J,
    eval_radial_J,
    eval_streak_J,
    periodicity_defect,
)
from .params import (
    FieldState,
    Grid2D,
    InitialConditions,
    NondimParams,
    ParameterError,
    PhysicalParams,
    derive_nondim,
    intensity,
    nondim_time,
    normalization_coefficient,
)
from .solver import (
    OracleResult,
    SolveResult,
    SolverOptions,
    solve_2d,
    solve_radial,
    solve_streak,
    uniform_ode_oracle,
)

__version__ = "0.1.0"
