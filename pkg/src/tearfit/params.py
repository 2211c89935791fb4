"""Physical constants, nondimensional groups, grids, fields, and FL intensity.

All quantities carry documented unit conventions instead of a units library.
Dimensional values default to the standard tear-film literature constants;
everything downstream works with the nondimensional groups derived here.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields

import numpy as np

# Sodium fluorescein molar mass, g/mol.  Converts the critical-concentration
# mass fraction to molarity so the extinction group comes out dimensionless.
FLUORESCEIN_MOLAR_MASS = 376.27
WATER_DENSITY_G_PER_L = 1000.0


class ParameterError(ValueError):
    """Out-of-domain physical or nondimensional parameter."""


@dataclass(frozen=True)
class PhysicalParams:
    """Dimensional model constants (SI units unless noted).

    v_max / v_min are the peak and background thinning rates; their ratio is
    the nondimensional evaporation baseline.  eps_f is the Napierian
    extinction coefficient in 1/(M m); f_cr is a mass fraction.
    """

    mu: float = 1.3e-3            # viscosity, Pa s
    sigma0: float = 0.045         # surface tension, N/m
    rho: float = 1.0e3            # density, kg/m^3
    d: float = 4.5e-6             # initial film thickness, m
    v_max: float = 10e-6 / 60.0   # peak thinning rate, m/s (10 um/min)
    v_min: float = 0.7e-6 / 60.0  # background thinning rate, m/s
    V_w: float = 1.8e-5           # molar volume of water, m^3/mol
    D_f: float = 0.39e-9          # fluorescein diffusivity, m^2/s
    D_o: float = 1.6e-9           # salt diffusivity, m^2/s
    c0: float = 300.0             # isotonic osmolarity, mol/m^3 (mOsM)
    P0: float = 12.1e-6           # corneal permeability, m/s
    eps_f: float = 1.75e7         # Napierian extinction coefficient, 1/(M m)
    f_cr: float = 0.002           # critical FL concentration, mass fraction

    def __post_init__(self):
        for f_ in fields(self):
            value = getattr(self, f_.name)
            if not (isinstance(value, (int, float)) and math.isfinite(value) and value > 0):
                raise ParameterError(f"physical parameter {f_.name!r} must be finite and > 0, got {value!r}")
        if self.v_min >= self.v_max:
            raise ParameterError("v_min must be smaller than v_max")

    @classmethod
    def from_mapping(cls, mapping) -> "PhysicalParams":
        """Build from a key/value mapping, rejecting unknown keys."""
        known = {f_.name for f_ in fields(cls)}
        unknown = set(mapping) - known
        if unknown:
            raise ParameterError(f"unknown physical parameter keys: {sorted(unknown)}")
        return cls(**{k: float(v) for k, v in mapping.items()})


@dataclass(frozen=True)
class NondimParams:
    """Dimensionless groups of the thin-film system.

    eps: film aspect ratio; ell: transverse length scale (m); Pc: corneal
    permeability group; Pe_c / Pe_f: osmolarity and fluorescein Peclet
    numbers; phi: nondimensional extinction coefficient; t_scale: seconds per
    nondimensional time unit; v_b: background-to-peak thinning ratio.
    """

    eps: float
    ell: float
    Pc: float
    Pe_c: float
    Pe_f: float
    phi: float
    t_scale: float
    v_b: float

    def __post_init__(self):
        for f_ in fields(self):
            value = getattr(self, f_.name)
            if not (math.isfinite(value) and value > 0):
                raise ParameterError(f"nondimensional parameter {f_.name!r} must be finite and > 0, got {value!r}")
        if self.eps >= 0.1:
            raise ParameterError(f"aspect ratio eps={self.eps:.3g} is not small; check inputs")


def derive_nondim(params: PhysicalParams) -> NondimParams:
    """Derive the nondimensional groups from dimensional constants.

    The transverse length scale is ell = (sigma0 / mu / v_max)^(1/4) * d and
    the time scale is d / v_max.  The critical FL concentration enters as a
    molarity, converted from its mass fraction via the fluorescein molar mass.
    """
    ell = (params.sigma0 / params.mu / params.v_max) ** 0.25 * params.d
    eps = params.d / ell
    f_cr_molar = params.f_cr * WATER_DENSITY_G_PER_L / FLUORESCEIN_MOLAR_MASS
    return NondimParams(
        eps=eps,
        ell=ell,
        Pc=params.P0 * params.V_w * params.c0 / params.v_max,
        Pe_c=params.v_max * ell / (eps * params.D_o),
        Pe_f=params.v_max * ell / (eps * params.D_f),
        phi=params.eps_f * f_cr_molar * params.d,
        t_scale=params.d / params.v_max,
        v_b=params.v_min / params.v_max,
    )


def nondim_time(T_prime: float, nd: NondimParams) -> float:
    """Convert an elapsed video duration in seconds to nondimensional time."""
    if T_prime < 0:
        raise ParameterError(f"duration must be nonnegative, got {T_prime}")
    return T_prime / nd.t_scale


@dataclass(frozen=True)
class Grid2D:
    """Uniform periodic grid on (-pi, pi]^2, endpoint -pi excluded.

    m and n are the point counts along x and y and must be even.
    """

    m: int = 40
    n: int = 40

    def __post_init__(self):
        if self.m < 4 or self.n < 4 or self.m % 2 or self.n % 2:
            raise ParameterError(f"grid counts must be even and >= 4, got m={self.m}, n={self.n}")

    @property
    def x(self) -> np.ndarray:
        return -np.pi + (np.arange(self.m) + 1) * (2 * np.pi / self.m)

    @property
    def y(self) -> np.ndarray:
        return -np.pi + (np.arange(self.n) + 1) * (2 * np.pi / self.n)

    def meshgrid(self):
        """Node coordinates as (X, Y) arrays of shape (m, n), x along axis 0."""
        return np.meshgrid(self.x, self.y, indexing="ij")

    @property
    def cell_area(self) -> float:
        return (2 * np.pi / self.m) * (2 * np.pi / self.n)


@dataclass(frozen=True)
class FieldState:
    """All model fields at one nondimensional time.

    h, c, f are thickness, osmolarity, and FL concentration; p, u_bar, v_bar
    are diagnostics (pressure and depth-averaged velocities).  1D solvers
    store 1D arrays and leave v_bar as None.
    """

    t: float
    h: np.ndarray
    c: np.ndarray
    f: np.ndarray
    p: np.ndarray | None = None
    u_bar: np.ndarray | None = None
    v_bar: np.ndarray | None = None


@dataclass(frozen=True)
class InitialConditions:
    """Uniform initial state: h = c = 1, p = 0, and f = f0.

    f0 is the initial FL concentration normalized to the critical value.
    """

    f0: float = 1.0

    def __post_init__(self):
        if not (math.isfinite(self.f0) and self.f0 > 0):
            raise ParameterError(f"f0 must be finite and > 0, got {self.f0}")


def intensity(h, f, I0: float, phi: float):
    """Fluorescence intensity I = I0 * (1 - exp(-phi f h)) / (1 + f^2).

    Elementwise over arrays; self-quenching through the 1 + f^2 denominator.
    """
    h = np.asarray(h, dtype=float)
    f = np.asarray(f, dtype=float)
    return I0 * (1.0 - np.exp(-phi * f * h)) / (1.0 + f * f)


def normalization_coefficient(f0: float, phi: float) -> float:
    """Intensity normalization giving the uniform initial state I = 1.

    Matches the data convention of normalizing to the initial FL intensity.
    """
    if phi <= 1e-12:
        raise ParameterError(f"phi={phi} too small for a meaningful normalization")
    if f0 <= 0:
        raise ParameterError(f"f0 must be positive, got {f0}")
    return (1.0 + f0 * f0) / (1.0 - math.exp(-phi * f0))
