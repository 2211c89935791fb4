"""Evaporation-rate distributions J over the film.

Supported shapes: sums of circular Gaussians, rotated elliptical Gaussians
parameterized by a focal vector and eccentricity, and the 1D radial / streak
profiles used by the reduced geometries.  Also provides a screening measure
of how far J is from being periodic on the computational square.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


class GeometryError(ValueError):
    """Degenerate or out-of-range ellipse geometry."""


ECCENTRICITY_MAX = 0.999  # beyond this the minor axis collapses numerically


def ellipse_geometry(fx: float, fy: float, e: float) -> tuple[float, float, float]:
    """Semi-major axis, semi-minor axis, and rotation angle of an ellipse.

    The ellipse is described by the vector (fx, fy) from center to one focus
    and the eccentricity e in (0, 1).  atan2 fixes the quadrant of the angle
    for fx <= 0.
    """
    if not (0.0 < e <= ECCENTRICITY_MAX):
        raise GeometryError(f"eccentricity must lie in (0, {ECCENTRICITY_MAX}], got {e}")
    c_foc = math.hypot(fx, fy)
    if c_foc <= 0.0 or not math.isfinite(c_foc):
        raise GeometryError("focal vector must be nonzero and finite")
    a = c_foc / e
    b = a * math.sqrt(1.0 - e * e)
    theta = math.atan2(fy, fx)
    return a, b, theta


@dataclass(frozen=True)
class CircularPeak:
    """Axis-aligned Gaussian peak with independent x/y widths."""

    x0: float = 0.0
    y0: float = 0.0
    xw: float = 0.5
    yw: float = 0.5
    a: float = 0.8

    def __post_init__(self):
        if self.xw <= 0 or self.yw <= 0:
            raise GeometryError(f"peak widths must be positive, got xw={self.xw}, yw={self.yw}")

    def as_dict(self) -> dict:
        return {"kind": "circular", "a": self.a, "x0": self.x0, "y0": self.y0,
                "xw": self.xw, "yw": self.yw}


@dataclass(frozen=True)
class EllipticPeak:
    """Rotated elliptical Gaussian peak with its own background multiplier."""

    x0: float = 0.0
    y0: float = 0.0
    fx: float = 0.5
    fy: float = 0.5
    e: float = 0.9
    a: float = 0.8
    beta: float = 1.0

    def __post_init__(self):
        ellipse_geometry(self.fx, self.fy, self.e)  # validates
        if self.beta <= 0:
            raise GeometryError(f"background multiplier beta must be positive, got {self.beta}")

    def geometry(self) -> tuple[float, float, float]:
        return ellipse_geometry(self.fx, self.fy, self.e)

    def as_dict(self) -> dict:
        return {"kind": "elliptic", "a": self.a, "fx": self.fx, "fy": self.fy,
                "x0": self.x0, "y0": self.y0, "e": self.e, "beta": self.beta}


def _peak_from_dict(d: dict):
    kind = d.get("kind", "elliptic")
    body = {k: float(v) for k, v in d.items() if k != "kind"}
    if kind == "circular":
        return CircularPeak(**body)
    if kind == "elliptic":
        return EllipticPeak(**body)
    raise GeometryError(f"unknown peak kind {kind!r}")


@dataclass(frozen=True)
class EvaporationSpec:
    """Background level plus one or more Gaussian peaks on the 2D domain."""

    v_b: float = 0.07
    peaks: tuple = (EllipticPeak(),)

    def __post_init__(self):
        if self.v_b < 0:
            raise GeometryError(f"background ratio v_b must be nonnegative, got {self.v_b}")
        if len(self.peaks) < 1:
            raise GeometryError("at least one peak is required")
        object.__setattr__(self, "peaks", tuple(self.peaks))

    def background(self) -> float:
        """Far-field evaporation level: v_b scaled by the mean multiplier."""
        betas = [p.beta if isinstance(p, EllipticPeak) else 1.0 for p in self.peaks]
        return self.v_b * sum(betas) / len(betas)

    def max_amplitude(self) -> float:
        amps = []
        for p in self.peaks:
            beta = p.beta if isinstance(p, EllipticPeak) else 1.0
            amps.append(abs(p.a - beta * self.v_b))
        return max(amps)

    def __call__(self, x, y):
        return eval_multi_J(self, x, y)

    def as_dict(self) -> dict:
        return {"v_b": self.v_b, "peaks": [p.as_dict() for p in self.peaks]}

    @classmethod
    def from_dict(cls, d: dict) -> "EvaporationSpec":
        return cls(v_b=float(d["v_b"]), peaks=tuple(_peak_from_dict(p) for p in d["peaks"]))


@dataclass(frozen=True)
class RadialEvaporation:
    """Radial profile J(r) on 0 <= r: scaled background plus one Gaussian bump."""

    v_b: float = 0.07
    r_w: float = 0.5
    a: float = 0.8
    beta: float = 1.0

    def __post_init__(self):
        if self.r_w <= 0:
            raise GeometryError(f"radial width must be positive, got {self.r_w}")

    def __call__(self, r):
        return eval_radial_J(self, r)

    def as_dict(self) -> dict:
        return {"v_b": self.v_b, "r_w": self.r_w, "a": self.a, "beta": self.beta}


@dataclass(frozen=True)
class StreakEvaporation:
    """Streak profile J(x) on (-pi, pi], uniform along the other direction."""

    v_b: float = 0.07
    x_w: float = 0.5
    a: float = 0.8
    beta: float = 1.0

    def __post_init__(self):
        if self.x_w <= 0:
            raise GeometryError(f"streak width must be positive, got {self.x_w}")

    def __call__(self, x):
        return eval_streak_J(self, x)

    def as_dict(self) -> dict:
        return {"v_b": self.v_b, "x_w": self.x_w, "a": self.a, "beta": self.beta}


def _gauss_term(peak, v_b: float, x, y):
    """One peak's contribution (a_k - beta_k v_b) * G_k and its multiplier."""
    if isinstance(peak, EllipticPeak):
        a_ax, b_ax, theta = peak.geometry()
        ct, st = math.cos(theta), math.sin(theta)
        dx = x - peak.x0
        dy = y - peak.y0
        xi = ct * dx + st * dy
        eta = -st * dx + ct * dy
        Q = (xi / a_ax) ** 2 + (eta / b_ax) ** 2
        return (peak.a - peak.beta * v_b) * np.exp(-0.5 * Q), peak.beta
    dx = (x - peak.x0) / peak.xw
    dy = (y - peak.y0) / peak.yw
    return (peak.a - v_b) * np.exp(-0.5 * (dx * dx + dy * dy)), 1.0


def eval_multi_J(spec: EvaporationSpec, x, y):
    """Evaluate J(x, y) = v_b * mean(beta_k) + sum_k (a_k - beta_k v_b) G_k.

    For circular peaks beta_k = 1, which reduces to the plain multi-peak sum;
    a single elliptic peak reduces to the scaled-background elliptical form.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    terms = []
    betas = []
    for peak in spec.peaks:
        term, beta = _gauss_term(peak, spec.v_b, x, y)
        terms.append(term)
        betas.append(beta)
    J = spec.v_b * (sum(betas) / len(betas))
    for term in terms:
        J = J + term
    return J


def eval_elliptic_J(spec: EvaporationSpec, x, y):
    """Single elliptical peak evaluation; delegates to the multi-peak kernel."""
    if len(spec.peaks) != 1 or not isinstance(spec.peaks[0], EllipticPeak):
        raise GeometryError("eval_elliptic_J expects exactly one elliptic peak")
    return eval_multi_J(spec, x, y)


def eval_radial_J(spec: RadialEvaporation, r):
    """J(r) = beta v_b + (a - v_b) exp(-(r/r_w)^2 / 2)."""
    r = np.asarray(r, dtype=float)
    return spec.beta * spec.v_b + (spec.a - spec.v_b) * np.exp(-0.5 * (r / spec.r_w) ** 2)


def eval_streak_J(spec: StreakEvaporation, x):
    """J(x) = beta v_b + (a - beta v_b) exp(-(x/x_w)^2 / 2)."""
    x = np.asarray(x, dtype=float)
    return spec.beta * spec.v_b + (spec.a - spec.beta * spec.v_b) * np.exp(-0.5 * (x / spec.x_w) ** 2)


PERIODICITY_THRESHOLD = 1e-3  # defect above this triggers the fit penalty


def periodicity_defect(spec, n_samples: int = 512) -> float:
    """Residual peak content on the domain boundary, relative to amplitude.

    Returns max over the square's edges (or the interval endpoints for a
    streak profile) of |J - background| / max peak amplitude.  A defect near
    zero means J continues periodically without a visible seam; large
    evaporation widths give an O(1) defect.
    """
    if isinstance(spec, StreakEvaporation):
        amp = abs(spec.a - spec.beta * spec.v_b)
        if amp == 0.0:
            return 0.0
        edge = np.abs(eval_streak_J(spec, np.array([-np.pi, np.pi])) - spec.beta * spec.v_b)
        return float(edge.max() / amp)
    amp = spec.max_amplitude()
    if amp == 0.0:
        return 0.0
    s = np.linspace(-np.pi, np.pi, n_samples)
    edges_x = np.concatenate([s, s, np.full(n_samples, -np.pi), np.full(n_samples, np.pi)])
    edges_y = np.concatenate([np.full(n_samples, -np.pi), np.full(n_samples, np.pi), s, s])
    J = eval_multi_J(spec, edges_x, edges_y)
    return float(np.abs(J - spec.background()).max() / amp)
