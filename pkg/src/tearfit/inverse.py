"""Objective construction, parameter codecs, and the fitting drivers.

The misfit is the squared discrete l2 difference between model and observed
intensity over a centered rectangle and all sampled frames.  Structurally
invalid or non-periodic evaporation candidates and failed forward solves all
map to one large penalty value so the derivative-free optimizers can keep
moving.  Forward evaluations go through the reduced-order model by default,
with the basis rebuilt at the current candidate every few evaluations.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.interpolate import RectBivariateSpline

from .evaporation import (
    PERIODICITY_THRESHOLD,
    CircularPeak,
    EllipticPeak,
    EvaporationSpec,
    GeometryError,
    RadialEvaporation,
    StreakEvaporation,
    periodicity_defect,
)
from .optim import MinimizeResult, OptimizerOptions, minimize_vector
from .params import (
    Grid2D,
    InitialConditions,
    NondimParams,
    ParameterError,
    intensity,
    normalization_coefficient,
)
from .rom import PodBasis, RomOptions, snapshot_solve, solve_reduced
from .solver import RadialGrid, SolverOptions, solve_2d, solve_radial, solve_streak

DEFAULT_RECT = (-2.6, 2.6, -2.6, 2.6)
DEFAULT_PENALTY = 1e8


class LayoutError(ValueError):
    """Parameter vector cannot be decoded into a structurally valid spec."""


_ELLIPSE_NAMES = ("v_b", "a", "fx", "fy", "x0", "y0", "e", "beta")
_PROFILE_NAMES = {"radial": ("v_b", "r_w", "a", "beta"), "streak": ("v_b", "x_w", "a", "beta")}


@dataclass(frozen=True)
class ParameterLayout:
    """Lossless mapping between flat parameter vectors and evaporation specs.

    kinds: "ellipse" (8 parameters), "multi" (1 shared background + 7 per
    peak), "radial" and "streak" (4 each).
    """

    kind: str = "ellipse"
    n_peaks: int = 1

    def __post_init__(self):
        if self.kind not in ("ellipse", "multi", "radial", "streak"):
            raise ParameterError(f"unknown layout kind {self.kind!r}")
        if self.kind == "multi" and self.n_peaks < 2:
            raise ParameterError("multi layout needs at least 2 peaks")

    @property
    def tag(self) -> str:
        return f"multi{self.n_peaks}" if self.kind == "multi" else self.kind

    @property
    def size(self) -> int:
        if self.kind == "ellipse":
            return 8
        if self.kind == "multi":
            return 1 + 7 * self.n_peaks
        return 4

    def names(self) -> list[str]:
        if self.kind == "ellipse":
            return list(_ELLIPSE_NAMES)
        if self.kind == "multi":
            out = ["v_b"]
            for k in range(1, self.n_peaks + 1):
                out += [f"{name}_{k}" for name in ("a", "fx", "fy", "x0", "y0", "e", "beta")]
            return out
        return list(_PROFILE_NAMES[self.kind])

    def encode(self, spec) -> np.ndarray:
        if self.kind in ("radial", "streak"):
            width = spec.r_w if self.kind == "radial" else spec.x_w
            return np.array([spec.v_b, width, spec.a, spec.beta])
        peaks = spec.peaks
        if len(peaks) != self.n_peaks or any(not isinstance(p, EllipticPeak) for p in peaks):
            raise LayoutError(f"spec does not match layout {self.tag}")
        vec = [spec.v_b]
        for p in peaks:
            vec += [p.a, p.fx, p.fy, p.x0, p.y0, p.e, p.beta]
        return np.array(vec)

    def decode(self, p: np.ndarray):
        p = np.asarray(p, dtype=float)
        if p.shape != (self.size,):
            raise LayoutError(f"expected {self.size} parameters for {self.tag}, got {p.shape}")
        if not np.all(np.isfinite(p)):
            raise LayoutError("non-finite parameter")
        try:
            if self.kind == "radial":
                spec = RadialEvaporation(v_b=p[0], r_w=p[1], a=p[2], beta=p[3])
            elif self.kind == "streak":
                spec = StreakEvaporation(v_b=p[0], x_w=p[1], a=p[2], beta=p[3])
            else:
                peaks = []
                for k in range(self.n_peaks):
                    a, fx, fy, x0, y0, e, beta = p[1 + 7 * k: 8 + 7 * k]
                    peaks.append(EllipticPeak(x0=x0, y0=y0, fx=fx, fy=fy, e=e, a=a, beta=beta))
                spec = EvaporationSpec(v_b=p[0], peaks=tuple(peaks))
        except GeometryError as exc:
            raise LayoutError(str(exc)) from exc
        if spec.v_b < 0:
            raise LayoutError("negative background")
        for peak in getattr(spec, "peaks", (spec,)):
            if peak.a <= spec.v_b:
                raise LayoutError("peak height must exceed the background ratio")
            if getattr(peak, "beta", 1.0) <= 0:
                raise LayoutError("nonpositive background multiplier")
        return spec

    def spec_dict(self, p: np.ndarray) -> dict:
        return dict(zip(self.names(), [float(v) for v in np.asarray(p)]))


def rect_mask_2d(grid: Grid2D, rect=DEFAULT_RECT) -> np.ndarray:
    """Boolean node mask for the restricted-norm rectangle."""
    x0, x1, y0, y1 = rect
    if x0 >= x1 or y0 >= y1:
        raise ParameterError("empty norm rectangle")
    X, Y = grid.meshgrid()
    mask = (X >= x0) & (X <= x1) & (Y >= y0) & (Y <= y1)
    if not mask.any():
        raise ParameterError("norm rectangle contains no grid nodes")
    return mask


def relative_error_trace(I_th: np.ndarray, I_ex: np.ndarray, mask=None) -> np.ndarray:
    """Per-frame ||I_th - I_ex||_2 / ||I_ex||_2; NaN where the data frame is zero."""
    I_th = np.asarray(I_th, dtype=float)
    I_ex = np.asarray(I_ex, dtype=float)
    if I_th.shape != I_ex.shape:
        raise ParameterError("frame shape mismatch between model and data")
    out = np.empty(I_th.shape[0])
    for j in range(I_th.shape[0]):
        th = I_th[j][mask] if mask is not None else I_th[j].ravel()
        ex = I_ex[j][mask] if mask is not None else I_ex[j].ravel()
        denom = np.linalg.norm(ex)
        out[j] = np.linalg.norm(th - ex) / denom if denom > 0 else np.nan
    return out


@dataclass
class Objective:
    """Misfit between a parameterized forward model and intensity data.

    `frames` live on the discrete space matching the layout kind: (T, m, n)
    grid frames for 2D layouts, (T, n_r) radial profiles, or (T, m) streak
    profiles.  `use_rom` switches the 2D forward path between the reduced
    model (default) and the full-order solver.
    """

    frames: np.ndarray
    times: np.ndarray
    layout: ParameterLayout
    nd: NondimParams
    ic: InitialConditions
    rect: tuple = DEFAULT_RECT
    penalty: float = DEFAULT_PENALTY
    frame_stride: int = 1
    solver_opts: SolverOptions = field(default_factory=SolverOptions)
    rom_opts: RomOptions = field(default_factory=RomOptions)
    use_rom: bool = True
    n_radial_cells: int = 128
    I0: float = 0.0
    nfev: int = 0
    last_failure: str = ""

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=float)
        self.times = np.asarray(self.times, dtype=float)
        if self.frames.shape[0] != self.times.size:
            raise ParameterError("frame count does not match time count")
        if self.I0 == 0.0:
            self.I0 = normalization_coefficient(self.ic.f0, self.nd.phi)
        if self.layout.kind in ("ellipse", "multi"):
            grid = Grid2D(self.solver_opts.m, self.solver_opts.n)
            if self.frames.shape[1:] != (grid.m, grid.n):
                raise ParameterError("2D frames do not match the solver grid")
            self._mask = rect_mask_2d(grid, self.rect)
        elif self.layout.kind == "radial":
            radii = RadialGrid(self.n_radial_cells).r
            if self.frames.shape[1:] != radii.shape:
                raise ParameterError("radial profiles do not match the radial grid")
            self._mask = radii <= max(abs(v) for v in self.rect)
        else:
            x = Grid2D(self.solver_opts.m, self.solver_opts.n).x
            if self.frames.shape[1:] != x.shape:
                raise ParameterError("streak profiles do not match the solver grid")
            self._mask = (x >= self.rect[0]) & (x <= self.rect[1])
        self._basis: PodBasis | None = None
        self._built_at: np.ndarray | None = None
        self._built_window: float | None = None
        self._window = self.rom_opts.snapshot_window
        self._refining = False
        self._last_accepted: np.ndarray | None = None
        self.rebuild_count = 0

    def __call__(self, p) -> float:
        return evaluate_objective(p, self)

    # reduced-model bookkeeping ------------------------------------------

    @staticmethod
    def _rel_dist(a, b) -> float:
        return float((np.abs(a - b) / (1.0 + np.abs(b))).max())

    def _rebuild(self, p) -> bool:
        t_end = float(self.times[-1])
        rom_opts = replace(self.rom_opts, snapshot_window=self._window)
        spec = self.layout.decode(p)
        snap, basis = snapshot_solve(spec, self.nd, self.ic, t_end,
                                     self.solver_opts, rom_opts)
        if basis is None:
            self.last_failure = f"snapshot solve failed: {snap.message}"
            return False
        self._basis = basis
        self._built_at = np.array(p, dtype=float)
        self._built_window = self._window
        self.rebuild_count += 1
        return True

    def maybe_rebuild(self, x_best) -> bool:
        """Trust-region basis policy, called at optimizer-accepted points only.

        The basis follows the accepted iterate: it is rebuilt once the
        iterate leaves the trust region of the current build point.  When
        successive accepted points stop moving far, the snapshot window is
        escalated to the whole horizon so the model error near the optimum
        drops well below the fitting tolerances.
        """
        if not self.use_rom or self.layout.kind not in ("ellipse", "multi"):
            return False
        x = np.asarray(x_best, dtype=float)
        if not self._refining and self._last_accepted is not None:
            if self._rel_dist(x, self._last_accepted) < 0.3 * self.rom_opts.trust_radius:
                self._refining = True
                self._window = 1.0
        self._last_accepted = x.copy()
        trust = self.rom_opts.trust_radius * (0.25 if self._refining else 1.0)
        fresh = (self._basis is not None
                 and self._built_window == self._window
                 and self._rel_dist(x, self._built_at) <= trust)
        if fresh:
            return False
        try:
            return self._rebuild(x)
        except LayoutError:
            return False

    def _solve(self, spec, t_eval, p=None):
        t_end = float(t_eval[-1])
        if self.layout.kind == "radial":
            return solve_radial(spec, self.nd, self.ic, t_end, self.solver_opts,
                                t_eval=t_eval, n_cells=self.n_radial_cells)
        if self.layout.kind == "streak":
            return solve_streak(spec, self.nd, self.ic, t_end, self.solver_opts, t_eval=t_eval)
        if not self.use_rom:
            return solve_2d(spec, self.nd, self.ic, t_end, self.solver_opts, t_eval=t_eval)
        if self._basis is None:
            if p is None or not self._rebuild(p):
                # no basis available: fall back to the full-order model
                return solve_2d(spec, self.nd, self.ic, t_end, self.solver_opts, t_eval=t_eval)
        return solve_reduced(spec, self.nd, self.ic, t_end, self._basis,
                             self.solver_opts, t_eval=t_eval)

    def model_frames(self, spec, all_frames: bool = True, p=None) -> np.ndarray | None:
        """Intensity frames of the forward model, or None on solver failure."""
        idx = slice(None) if all_frames else slice(None, None, self.frame_stride)
        t_eval = self.times[idx]
        result = self._solve(spec, t_eval, p=p)
        if not result.ok:
            self.last_failure = result.message or result.status
            return None
        out = np.stack([intensity(s.h, s.f, self.I0, self.nd.phi) for s in result.states])
        return out

    def final_rel_err(self, p) -> np.ndarray:
        """RelErr trace of the decoded candidate over every frame."""
        spec = self.layout.decode(p)
        model = self.model_frames(spec, all_frames=True)
        if model is None:
            return np.full(self.times.size, np.nan)
        return relative_error_trace(model, self.frames, self._mask)


def evaluate_objective(p, obj: Objective) -> float:
    """Sum of squared in-rectangle intensity differences, or the penalty."""
    obj.nfev += 1
    try:
        spec = obj.layout.decode(p)
    except LayoutError as exc:
        obj.last_failure = str(exc)
        return obj.penalty
    if obj.layout.kind != "radial" and periodicity_defect(spec) > PERIODICITY_THRESHOLD:
        obj.last_failure = "evaporation profile is not periodic on the domain"
        return obj.penalty
    model = obj.model_frames(spec, all_frames=False, p=np.asarray(p, dtype=float))
    if model is None:
        return obj.penalty
    data = obj.frames[::obj.frame_stride]
    diff = (model - data)[:, obj._mask]
    return float(np.sum(diff * diff))


@dataclass
class FitResult:
    """Outcome of one parameter fit, serializable as a JSON report."""

    layout_tag: str
    algorithm: str
    status: str
    iterations: int
    nfev: int
    objective: float
    parameters: dict
    initial_parameters: dict
    objective_history: list
    rel_err: list
    times: list
    wall_time: float
    restarts: int = 0
    rom_report: dict | None = None
    extras: dict = field(default_factory=dict)

    def to_json(self, path) -> None:
        import json
        from pathlib import Path

        payload = {k: getattr(self, k) for k in (
            "layout_tag", "algorithm", "status", "iterations", "nfev", "objective",
            "parameters", "initial_parameters", "objective_history", "rel_err",
            "times", "wall_time", "restarts", "rom_report", "extras")}
        payload["rel_err"] = [None if (v is None or not np.isfinite(v)) else float(v)
                              for v in self.rel_err]
        Path(path).write_text(json.dumps(payload, indent=2))

    @classmethod
    def from_json(cls, path) -> "FitResult":
        import json
        from pathlib import Path

        payload = json.loads(Path(path).read_text())
        return cls(**payload)

    def rel_err_csv(self, path) -> None:
        rows = ["time,rel_err"]
        for t, v in zip(self.times, self.rel_err):
            value = "" if (v is None or not np.isfinite(v)) else f"{v:.8e}"
            rows.append(f"{t:.8f},{value}")
        from pathlib import Path

        Path(path).write_text("\n".join(rows) + "\n")


def minimize(obj: Objective, p0, opts: OptimizerOptions | None = None) -> FitResult:
    """Run the configured derivative-free optimizer on an objective."""
    opts = opts or OptimizerOptions()
    if opts.penalty != obj.penalty:
        opts = replace(opts, penalty=obj.penalty)
    p0 = np.asarray(p0, dtype=float)

    def on_iteration(x_best, f_best):
        if obj.maybe_rebuild(x_best):
            return obj(x_best)
        return None

    start = time.perf_counter()
    raw: MinimizeResult = minimize_vector(obj, p0, opts, callback=on_iteration)
    wall = time.perf_counter() - start
    rel_err = obj.final_rel_err(raw.x)
    status = "converged" if raw.status == "converged" else "non-convergence"
    if raw.fun >= obj.penalty:
        status = "failed"
    return FitResult(
        layout_tag=obj.layout.tag,
        algorithm=raw.algorithm,
        status=status,
        iterations=raw.iterations,
        nfev=raw.nfev,
        objective=float(raw.fun),
        parameters=obj.layout.spec_dict(raw.x),
        initial_parameters=obj.layout.spec_dict(p0),
        objective_history=[float(v) for v in raw.history],
        rel_err=list(rel_err),
        times=[float(t) for t in obj.times],
        wall_time=wall,
        restarts=raw.restarts,
    )


# ------------------------------------------------------ reduced-geometry fits

def _frame_spline(frame: np.ndarray, grid: Grid2D) -> RectBivariateSpline:
    return RectBivariateSpline(grid.x, grid.y, frame, kx=3, ky=3)


def radial_average(frames: np.ndarray, grid: Grid2D, center, radii,
                   n_theta: int = 72) -> np.ndarray:
    """Average each frame over circles about the center at the given radii."""
    theta = np.linspace(0.0, 2 * np.pi, n_theta, endpoint=False)
    cx, cy = center
    X = cx + np.outer(radii, np.cos(theta))
    Y = cy + np.outer(radii, np.sin(theta))
    # wrap into the periodic square before sampling
    X = (X + np.pi) % (2 * np.pi) - np.pi
    Y = (Y + np.pi) % (2 * np.pi) - np.pi
    out = np.empty((frames.shape[0], len(radii)))
    for j, frame in enumerate(frames):
        spline = _frame_spline(frame, grid)
        out[j] = spline.ev(X.ravel(), Y.ravel()).reshape(X.shape).mean(axis=1)
    return out


def lift_radial(profile: np.ndarray, radii: np.ndarray, grid: Grid2D, center) -> np.ndarray:
    """Rotate radial profiles about the center back onto the 2D grid."""
    X, Y = grid.meshgrid()
    R = np.hypot(X - center[0], Y - center[1])
    return np.stack([np.interp(R.ravel(), radii, prof).reshape(X.shape) for prof in profile])


def fit_radial_to_2d(frames: np.ndarray, times, center, p0, nd: NondimParams,
                     ic: InitialConditions, solver_opts: SolverOptions | None = None,
                     optimizer_opts: OptimizerOptions | None = None,
                     rect=DEFAULT_RECT, n_cells: int = 128) -> FitResult:
    """Fit the axisymmetric model to radially averaged 2D data.

    The optimized radial intensity is lifted back to 2D by rotation about the
    center, and the reported RelErr trace compares that lift against the full
    2D data over the norm rectangle.
    """
    solver_opts = solver_opts or SolverOptions()
    grid = Grid2D(solver_opts.m, solver_opts.n)
    radii = RadialGrid(n_cells).r
    profiles = radial_average(np.asarray(frames, dtype=float), grid, center, radii)
    obj = Objective(frames=profiles, times=np.asarray(times, dtype=float),
                    layout=ParameterLayout(kind="radial"), nd=nd, ic=ic, rect=rect,
                    solver_opts=solver_opts, n_radial_cells=n_cells)
    fit = minimize(obj, p0, optimizer_opts)
    spec = obj.layout.decode(np.array([fit.parameters[k] for k in obj.layout.names()]))
    model_profiles = obj.model_frames(spec, all_frames=True)
    if model_profiles is not None:
        lifted = lift_radial(model_profiles, radii, grid, center)
        mask = rect_mask_2d(grid, rect)
        fit.rel_err = list(relative_error_trace(lifted, np.asarray(frames, dtype=float), mask))
        fit.extras["lifted"] = True
        fit.extras["center"] = [float(center[0]), float(center[1])]
    return fit


def extract_streak_profile(frames: np.ndarray, grid: Grid2D, axis: str = "horizontal"):
    """1D profiles through the final-frame intensity minimum, centered on it.

    Returns (profiles, roll, index): profiles rolled so the minimum sits at
    the x=0 node, the roll applied, and the fixed cross index.
    """
    frames = np.asarray(frames, dtype=float)
    i_min, j_min = np.unravel_index(np.argmin(frames[-1]), frames[-1].shape)
    zero_node = grid.m // 2 - 1  # node where the coordinate equals 0
    if axis == "horizontal":
        prof = frames[:, :, j_min]
        roll = zero_node - i_min
        index = int(j_min)
    elif axis == "vertical":
        prof = frames[:, i_min, :]
        roll = (grid.n // 2 - 1) - j_min
        index = int(i_min)
    else:
        raise ParameterError(f"axis must be horizontal or vertical, got {axis!r}")
    return np.roll(prof, roll, axis=1), int(roll), index


def fit_streak_to_2d(frames: np.ndarray, times, axis, p0, nd: NondimParams,
                     ic: InitialConditions, solver_opts: SolverOptions | None = None,
                     optimizer_opts: OptimizerOptions | None = None,
                     rect=DEFAULT_RECT) -> FitResult:
    """Fit the streak model to a 1D cut and lift by extrusion."""
    solver_opts = solver_opts or SolverOptions()
    grid = Grid2D(solver_opts.m, solver_opts.n)
    frames = np.asarray(frames, dtype=float)
    profiles, roll, index = extract_streak_profile(frames, grid, axis)
    obj = Objective(frames=profiles, times=np.asarray(times, dtype=float),
                    layout=ParameterLayout(kind="streak"), nd=nd, ic=ic, rect=rect,
                    solver_opts=solver_opts)
    fit = minimize(obj, p0, optimizer_opts)
    spec = obj.layout.decode(np.array([fit.parameters[k] for k in obj.layout.names()]))
    model_profiles = obj.model_frames(spec, all_frames=True)
    if model_profiles is not None:
        unrolled = np.roll(model_profiles, -roll, axis=1)
        if axis == "horizontal":
            lifted = np.repeat(unrolled[:, :, None], grid.n, axis=2)
        else:
            lifted = np.repeat(unrolled[:, None, :], grid.m, axis=1)
        mask = rect_mask_2d(grid, rect)
        fit.rel_err = list(relative_error_trace(lifted, frames, mask))
        fit.extras["lifted"] = True
        fit.extras["axis"] = axis
        fit.extras["cross_index"] = index
    return fit


def fit_multi_spot(frames: np.ndarray, times, K: int, p0, nd: NondimParams,
                   ic: InitialConditions, solver_opts: SolverOptions | None = None,
                   optimizer_opts: OptimizerOptions | None = None,
                   rect=DEFAULT_RECT, use_rom: bool = True,
                   rom_opts: RomOptions | None = None) -> FitResult:
    """Joint fit of K elliptical spots (1 + 7K parameters), Nelder-Mead default."""
    if K < 2:
        raise ParameterError("multi-spot fit needs K >= 2")
    optimizer_opts = optimizer_opts or OptimizerOptions(algorithm="nelder-mead")
    obj = Objective(frames=np.asarray(frames, dtype=float),
                    times=np.asarray(times, dtype=float),
                    layout=ParameterLayout(kind="multi", n_peaks=K), nd=nd, ic=ic,
                    rect=rect, solver_opts=solver_opts or SolverOptions(),
                    rom_opts=rom_opts or RomOptions(), use_rom=use_rom)
    return minimize(obj, p0, optimizer_opts)
