"""Forward solvers for the thin-film thinning system.

The 2D and streak geometries use Fourier spectral collocation on a periodic
grid with the pressure eliminated exactly in spectral space (p = -laplacian h),
integrated in time by an adaptive variable-order implicit stiff method (BDF).
The axisymmetric geometry uses second-order conservative finite differences
on a half-offset radial grid.  Thickness/osmolarity are integrated first and
the fluorescein transport is integrated afterwards against their dense output.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.fft as sfft
from scipy.integrate import solve_ivp

from .evaporation import EvaporationSpec, RadialEvaporation, StreakEvaporation
from .params import FieldState, Grid2D, InitialConditions, NondimParams, ParameterError

STATUS_SUCCESS = "success"
STATUS_FAILURE = "integrator-failure"
STATUS_UNDERFLOW = "step-underflow"


class _EvalBudgetExceeded(RuntimeError):
    pass


@dataclass(frozen=True)
class SolverOptions:
    """Tolerances and grid for the stiff time integration.

    m is the point count per dimension for spectral solvers and the radial
    cell count for the axisymmetric solver.  touchdown_h stops a solve once
    the film gets thin enough that breakup is inevitable.
    """

    rel_tol: float = 1e-7
    abs_tol: float = 1e-9
    max_steps: int = 2_000_000
    m: int = 40
    n: int = 40
    touchdown_h: float = 0.01
    dealias: bool = False

    def __post_init__(self):
        for name in ("rel_tol", "abs_tol"):
            v = getattr(self, name)
            if not (0 < v <= 1e-2):
                raise ParameterError(f"{name} must lie in (0, 1e-2], got {v}")
        if self.max_steps <= 0:
            raise ParameterError("max_steps must be positive")


@dataclass
class SolveResult:
    """Solution states at the requested output times."""

    times: np.ndarray
    states: list
    status: str = STATUS_SUCCESS
    message: str = ""
    nfev: int = 0
    wall_time: float = 0.0

    @property
    def ok(self) -> bool:
        return self.status == STATUS_SUCCESS

    def field_array(self, name: str) -> np.ndarray:
        return np.array([getattr(s, name) for s in self.states])

    def export_csv(self, out_dir, parameters: dict | None = None) -> None:
        """Dump per-time CSV files for every field plus a run manifest."""
        import json
        from pathlib import Path

        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for i, state in enumerate(self.states):
            for name in ("h", "c", "f", "p", "u_bar", "v_bar"):
                arr = getattr(state, name)
                if arr is None:
                    continue
                np.savetxt(out / f"{name}_{i:04d}.csv", np.atleast_2d(arr), delimiter=",")
        manifest = {
            "times": [float(t) for t in self.times],
            "status": self.status,
            "grid_shape": list(np.shape(self.states[0].h)) if self.states else [],
            "parameters": parameters or {},
        }
        (out / "manifest.json").write_text(json.dumps(manifest, indent=2))


class SpectralOperators2D:
    """Fourier differentiation on a Grid2D, acting on trailing (m, n) axes."""

    def __init__(self, grid: Grid2D, dealias: bool = False):
        self.grid = grid
        m, n = grid.m, grid.n
        kx = np.fft.fftfreq(m, d=1.0 / m)
        ky = np.fft.rfftfreq(n, d=1.0 / n)
        kx_odd = kx.copy()
        kx_odd[m // 2] = 0.0  # Nyquist has no well-defined odd derivative
        ky_odd = ky.copy()
        ky_odd[-1] = 0.0
        self.ikx = (1j * kx_odd)[:, None]
        self.iky = (1j * ky_odd)[None, :]
        self.k2 = kx[:, None] ** 2 + ky[None, :] ** 2
        if dealias:
            keep = (np.abs(kx[:, None]) <= m // 3) & (ky[None, :] <= n // 3)
            self.mask = keep.astype(float)
        else:
            self.mask = None
        self._shape = (m, n)

    def fwd(self, u):
        uh = sfft.rfft2(u, axes=(-2, -1))
        if self.mask is not None:
            uh = uh * self.mask
        return uh

    def inv(self, uh):
        return sfft.irfft2(uh, s=self._shape, axes=(-2, -1))

    def dx(self, u):
        return self.inv(self.ikx * self.fwd(u))

    def dy(self, u):
        return self.inv(self.iky * self.fwd(u))

    def pressure(self, u):
        """p = -laplacian(u), computed via the Laplacian symbol."""
        return self.inv(self.k2 * self.fwd(u))

    def check_exactness(self) -> float:
        """Max error differentiating sin(3x)cos(2y); should be ~1e-12."""
        X, Y = self.grid.meshgrid()
        u = np.sin(3 * X) * np.cos(2 * Y)
        exact = 3 * np.cos(3 * X) * np.cos(2 * Y)
        return float(np.abs(self.dx(u) - exact).max())


def _velocities_2d(ops: SpectralOperators2D, h):
    """Diagnostic pressure and depth-averaged velocities from thickness."""
    phat = ops.k2 * ops.fwd(h)
    px = ops.inv(ops.ikx * phat)
    py = ops.inv(ops.iky * phat)
    coef = -(h * h) / 12.0
    return ops.inv(phat), coef * px, coef * py


def _rhs_stage1_2d(ops, J, Pc, inv_Pe_c, h, c):
    """Time derivatives of (h, c); arrays have trailing (m, n) axes."""
    hhat = ops.fwd(h)
    phat = ops.k2 * hhat
    px = ops.inv(ops.ikx * phat)
    py = ops.inv(ops.iky * phat)
    coef = -(h * h) / 12.0
    ub = coef * px
    vb = coef * py
    div_hu = ops.inv(ops.ikx * ops.fwd(h * ub) + ops.iky * ops.fwd(h * vb))
    osmosis = Pc * (c - 1.0)
    dh = -div_hu - J + osmosis
    chat = ops.fwd(c)
    cx = ops.inv(ops.ikx * chat)
    cy = ops.inv(ops.iky * chat)
    diff_c = ops.inv(ops.ikx * ops.fwd(h * cx) + ops.iky * ops.fwd(h * cy))
    dc = (inv_Pe_c * diff_c + (J - osmosis) * c) / h - (ub * cx + vb * cy)
    return dh, dc

def _rhs_stage2_2d(ops, J, Pc, inv_Pe_f, h, c, ub, vb, f):
    fhat = ops.fwd(f)
    fx = ops.inv(ops.ikx * fhat)
    fy = ops.inv(ops.iky * fhat)
    diff_f = ops.inv(ops.ikx * ops.fwd(h * fx) + ops.iky * ops.fwd(h * fy))
    osmosis = Pc * (c - 1.0)
    return (inv_Pe_f * diff_f + (J - osmosis) * f) / h - (ub * fx + vb * fy)


def _split(y, nfields, shape):
    """(nfields*prod(shape),[ k]) -> ((k, nfields) + shape, batched?)."""
    if y.ndim == 1:
        return y.reshape((1, nfields) + shape), False
    return np.ascontiguousarray(y.T).reshape((y.shape[1], nfields) + shape), True


def _merge(dz, batched):
    out = dz.reshape(dz.shape[0], -1).T
    return out if batched else out[:, 0]


def _budgeted(fun, budget):
    count = [0]

    def wrapped(t, y):
        count[0] += y.shape[1] if y.ndim == 2 else 1
        if count[0] > budget:
            raise _EvalBudgetExceeded
        return fun(t, y)

    return wrapped, count


def _classify_failure(message: str) -> tuple[str, str]:
    if "step size" in message.lower():
        return STATUS_UNDERFLOW, message
    return STATUS_FAILURE, message


def _integrate(fun, t_span, y0, opts, t_eval=None, events=None):
    """solve_ivp(BDF) wrapper with an evaluation budget and status mapping."""
    wrapped, count = _budgeted(fun, opts.max_steps)
    try:
        sol = solve_ivp(
            wrapped, t_span, y0, method="BDF", rtol=opts.rel_tol, atol=opts.abs_tol,
            t_eval=t_eval, dense_output=True, vectorized=True, events=events,
        )
    except _EvalBudgetExceeded:
        return None, STATUS_FAILURE, "evaluation budget exhausted", count[0]
    if sol.status == 1:
        return sol, STATUS_FAILURE, "film touched down before the final time", count[0]
    if not sol.success:
        status, message = _classify_failure(sol.message or "")
        return sol, status, message, count[0]
    if not np.all(np.isfinite(sol.y)):
        return sol, STATUS_FAILURE, "non-finite state", count[0]
    return sol, STATUS_SUCCESS, "", count[0]


def _default_times(t_end: float, t_eval) -> np.ndarray:
    if t_eval is None:
        return np.linspace(0.0, t_end, 11)
    t_eval = np.asarray(t_eval, dtype=float)
    if t_eval.ndim != 1 or np.any(np.diff(t_eval) <= 0):
        raise ParameterError("output times must be strictly increasing")
    return t_eval


def solve_2d(spec: EvaporationSpec, nd: NondimParams, ic: InitialConditions,
             t_end: float, opts: SolverOptions | None = None,
             t_eval=None) -> SolveResult:
    """Solve the 2D thinning system and report states at the output times.

    Stage 1 integrates thickness and osmolarity with the pressure eliminated
    spectrally; stage 2 integrates fluorescein against the dense output of
    stage 1.  Any failure to reach t_end (including touchdown) is reported in
    the result status rather than raised.
    """
    if t_end <= 0:
        raise ParameterError("t_end must be positive")
    opts = opts or SolverOptions()
    grid = Grid2D(opts.m, opts.n)
    ops = SpectralOperators2D(grid, dealias=opts.dealias)
    X, Y = grid.meshgrid()
    J = spec(X, Y)
    times = _default_times(t_end, t_eval)
    Pc, inv_Pe_c, inv_Pe_f = nd.Pc, 1.0 / nd.Pe_c, 1.0 / nd.Pe_f
    shape = (grid.m, grid.n)
    npts = grid.m * grid.n
    start = time.perf_counter()

    def rhs1(t, y):
        z, batched = _split(y, 2, shape)
        dh, dc = _rhs_stage1_2d(ops, J, Pc, inv_Pe_c, z[:, 0], z[:, 1])
        return _merge(np.stack([dh, dc], axis=1), batched)

    def touchdown(t, y):
        return y[:npts].min() - opts.touchdown_h

    touchdown.terminal = True
    touchdown.direction = -1

    y0 = np.concatenate([np.ones(npts), np.ones(npts)])
    sol1, status, message, nfev1 = _integrate(rhs1, (0.0, t_end), y0, opts, events=touchdown)
    if status != STATUS_SUCCESS:
        return SolveResult(times=times, states=[], status=status, message=message,
                           nfev=nfev1, wall_time=time.perf_counter() - start)

    dense1 = sol1.sol

    def rhs2(t, y):
        z, batched = _split(y, 1, shape)
        hc = dense1(t).reshape(2, *shape)
        h, c = hc[0][None], hc[1][None]
        _, ub, vb = _velocities_2d(ops, h)
        df = _rhs_stage2_2d(ops, J, Pc, inv_Pe_f, h, c, ub, vb, z[:, 0])
        return _merge(df[:, None], batched)

    f0 = np.full(npts, ic.f0)
    sol2, status, message, nfev2 = _integrate(rhs2, (0.0, t_end), f0, opts)
    wall = time.perf_counter() - start
    if status != STATUS_SUCCESS:
        return SolveResult(times=times, states=[], status=status, message=message,
                           nfev=nfev1 + nfev2, wall_time=wall)

    states = []
    for t in times:
        hc = dense1(t).reshape(2, *shape)
        h, c = hc[0], hc[1]
        f = sol2.sol(t).reshape(shape)
        p, ub, vb = _velocities_2d(ops, h)
        states.append(FieldState(t=float(t), h=h, c=c, f=f, p=p, u_bar=ub, v_bar=vb))
    return SolveResult(times=times, states=states, nfev=nfev1 + nfev2, wall_time=wall)


class SpectralOperators1D:
    """Fourier differentiation on the periodic interval (-pi, pi]."""

    def __init__(self, m: int):
        if m < 4 or m % 2:
            raise ParameterError(f"streak grid count must be even and >= 4, got {m}")
        self.m = m
        k = np.fft.rfftfreq(m, d=1.0 / m)
        k_odd = k.copy()
        k_odd[-1] = 0.0
        self.ik = 1j * k_odd
        self.k2 = k ** 2

    @property
    def x(self) -> np.ndarray:
        return -np.pi + (np.arange(self.m) + 1) * (2 * np.pi / self.m)

    def fwd(self, u):
        return sfft.rfft(u, axis=-1)

    def inv(self, uh):
        return sfft.irfft(uh, n=self.m, axis=-1)

    def dx(self, u):
        return self.inv(self.ik * self.fwd(u))


def _velocities_streak(ops: SpectralOperators1D, h):
    phat = ops.k2 * ops.fwd(h)
    px = ops.inv(ops.ik * phat)
    return ops.inv(phat), -(h * h) / 12.0 * px


def solve_streak(spec: StreakEvaporation, nd: NondimParams, ic: InitialConditions,
                 t_end: float, opts: SolverOptions | None = None,
                 t_eval=None) -> SolveResult:
    """Solve the 1D streak system with periodic boundary conditions."""
    if t_end <= 0:
        raise ParameterError("t_end must be positive")
    opts = opts or SolverOptions()
    ops = SpectralOperators1D(opts.m)
    x = ops.x
    J = spec(x)
    times = _default_times(t_end, t_eval)
    Pc, inv_Pe_c, inv_Pe_f = nd.Pc, 1.0 / nd.Pe_c, 1.0 / nd.Pe_f
    m = ops.m
    start = time.perf_counter()

    def rhs1(t, y):
        z, batched = _split(y, 2, (m,))
        h, c = z[:, 0], z[:, 1]
        phat = ops.k2 * ops.fwd(h)
        px = ops.inv(ops.ik * phat)
        ub = -(h * h) / 12.0 * px
        div_hu = ops.dx(h * ub)
        osmosis = Pc * (c - 1.0)
        dh = -div_hu - J + osmosis
        cx = ops.dx(c)
        diff_c = ops.dx(h * cx)
        dc = (inv_Pe_c * diff_c + (J - osmosis) * c) / h - ub * cx
        return _merge(np.stack([dh, dc], axis=1), batched)

    def touchdown(t, y):
        return y[:m].min() - opts.touchdown_h

    touchdown.terminal = True
    touchdown.direction = -1

    y0 = np.concatenate([np.ones(m), np.ones(m)])
    sol1, status, message, nfev1 = _integrate(rhs1, (0.0, t_end), y0, opts, events=touchdown)
    if status != STATUS_SUCCESS:
        return SolveResult(times=times, states=[], status=status, message=message,
                           nfev=nfev1, wall_time=time.perf_counter() - start)
    dense1 = sol1.sol

    def rhs2(t, y):
        z, batched = _split(y, 1, (m,))
        hc = dense1(t).reshape(2, m)
        h, c = hc[0][None], hc[1][None]
        _, ub = _velocities_streak(ops, h)
        f = z[:, 0]
        fx = ops.dx(f)
        diff_f = ops.dx(h * fx)
        osmosis = Pc * (c - 1.0)
        df = (inv_Pe_f * diff_f + (J - osmosis) * f) / h - ub * fx
        return _merge(df[:, None], batched)

    sol2, status, message, nfev2 = _integrate(rhs2, (0.0, t_end), np.full(m, ic.f0), opts)
    wall = time.perf_counter() - start
    if status != STATUS_SUCCESS:
        return SolveResult(times=times, states=[], status=status, message=message,
                           nfev=nfev1 + nfev2, wall_time=wall)
    states = []
    for t in times:
        hc = dense1(t).reshape(2, m)
        h, c = hc[0], hc[1]
        f = sol2.sol(t)
        p, ub = _velocities_streak(ops, h)
        states.append(FieldState(t=float(t), h=h, c=c, f=f, p=p, u_bar=ub))
    return SolveResult(times=times, states=states, nfev=nfev1 + nfev2, wall_time=wall)


class RadialGrid:
    """Half-offset cell-centered grid on (0, R0) avoiding the axis singularity."""

    def __init__(self, n_cells: int = 128, R0: float = math.pi):
        if n_cells < 8:
            raise ParameterError(f"need at least 8 radial cells, got {n_cells}")
        self.n = n_cells
        self.R0 = R0
        self.dr = R0 / n_cells
        self.r = (np.arange(n_cells) + 0.5) * self.dr
        self.r_face = np.arange(n_cells + 1) * self.dr


def _face_grad(u, dr):
    """du/dr at cell faces; zero at the axis (regularity) and at R0 (no flux)."""
    g = np.zeros(u.shape[:-1] + (u.shape[-1] + 1,))
    g[..., 1:-1] = np.diff(u, axis=-1) / dr
    return g


def _div_r(F_face, rg: RadialGrid):
    """(1/r) d(r F)/dr from face values of F."""
    rF = rg.r_face * F_face
    return (rF[..., 1:] - rF[..., :-1]) / (rg.r * rg.dr)


def _center_grad(u, dr):
    """du/dr at cell centers with reflecting ghosts at both ends."""
    g = np.empty_like(u)
    g[..., 1:-1] = (u[..., 2:] - u[..., :-2]) / (2 * dr)
    g[..., 0] = (u[..., 1] - u[..., 0]) / (2 * dr)
    g[..., -1] = (u[..., -1] - u[..., -2]) / (2 * dr)
    return g


def _radial_stage1_terms(rg: RadialGrid, h, c):
    """Pressure, face velocity, and center velocity for the radial system."""
    p = -_div_r(_face_grad(h, rg.dr), rg)
    dp_face = _face_grad(p, rg.dr)
    h_face = np.zeros(h.shape[:-1] + (rg.n + 1,))
    h_face[..., 1:-1] = 0.5 * (h[..., 1:] + h[..., :-1])
    u_face = -(h_face * h_face) / 12.0 * dp_face
    u_center = 0.5 * (u_face[..., 1:] + u_face[..., :-1])
    return p, h_face, u_face, u_center


def solve_radial(spec: RadialEvaporation, nd: NondimParams, ic: InitialConditions,
                 t_end: float, opts: SolverOptions | None = None,
                 t_eval=None, n_cells: int = 128) -> SolveResult:
    """Solve the axisymmetric system on 0 < r < pi.

    Regularity at the axis and no-flux conditions at the outer radius are
    built into the face fluxes of the conservative discretization.
    """
    if t_end <= 0:
        raise ParameterError("t_end must be positive")
    opts = opts or SolverOptions()
    rg = RadialGrid(n_cells=n_cells)
    J = spec(rg.r)
    times = _default_times(t_end, t_eval)
    Pc, inv_Pe_c, inv_Pe_f = nd.Pc, 1.0 / nd.Pe_c, 1.0 / nd.Pe_f
    N = rg.n
    start = time.perf_counter()

    def rhs1(t, y):
        z, batched = _split(y, 2, (N,))
        h, c = z[:, 0], z[:, 1]
        _, h_face, u_face, u_center = _radial_stage1_terms(rg, h, c)
        osmosis = Pc * (c - 1.0)
        dh = -_div_r(h_face * u_face, rg) - J + osmosis
        diff_c = _div_r(h_face * _face_grad(c, rg.dr), rg)
        dc = (inv_Pe_c * diff_c + (J - osmosis) * c) / h - u_center * _center_grad(c, rg.dr)
        return _merge(np.stack([dh, dc], axis=1), batched)

    def touchdown(t, y):
        return y[:N].min() - opts.touchdown_h

    touchdown.terminal = True
    touchdown.direction = -1

    y0 = np.concatenate([np.ones(N), np.ones(N)])
    sol1, status, message, nfev1 = _integrate(rhs1, (0.0, t_end), y0, opts, events=touchdown)
    if status != STATUS_SUCCESS:
        return SolveResult(times=times, states=[], status=status, message=message,
                           nfev=nfev1, wall_time=time.perf_counter() - start)
    dense1 = sol1.sol

    def rhs2(t, y):
        z, batched = _split(y, 1, (N,))
        hc = dense1(t).reshape(2, N)
        h, c = hc[0][None], hc[1][None]
        _, h_face, u_face, u_center = _radial_stage1_terms(rg, h, c)
        f = z[:, 0]
        diff_f = _div_r(h_face * _face_grad(f, rg.dr), rg)
        osmosis = Pc * (c - 1.0)
        df = (inv_Pe_f * diff_f + (J - osmosis) * f) / h - u_center * _center_grad(f, rg.dr)
        return _merge(df[:, None], batched)

    sol2, status, message, nfev2 = _integrate(rhs2, (0.0, t_end), np.full(N, ic.f0), opts)
    wall = time.perf_counter() - start
    if status != STATUS_SUCCESS:
        return SolveResult(times=times, states=[], status=status, message=message,
                           nfev=nfev1 + nfev2, wall_time=wall)
    states = []
    for t in times:
        hc = dense1(t).reshape(2, N)
        h, c = hc[0], hc[1]
        f = sol2.sol(t)
        p, _, _, u_center = _radial_stage1_terms(rg, h, c)
        states.append(FieldState(t=float(t), h=h, c=c, f=f, p=p, u_bar=u_center))
    result = SolveResult(times=times, states=states, nfev=nfev1 + nfev2, wall_time=wall)
    result.radii = rg.r
    return result


@dataclass
class OracleResult:
    """Spatially uniform reference solution (independent of the PDE solvers)."""

    times: np.ndarray
    h: np.ndarray
    c: np.ndarray
    f: np.ndarray
    touchdown_time: float | None = None


def uniform_ode_oracle(J_const: float, nd: NondimParams, ic: InitialConditions,
                       t_end: float, t_eval=None) -> OracleResult:
    """High-accuracy ODE reduction for a spatially uniform film.

    Integrates dh/dt = -J + Pc(c-1), h dc/dt = Jc - Pc(c-1)c, and likewise
    for f, with an explicit adaptive scheme at tolerance 1e-10.  Reports the
    touchdown time if the film reaches zero thickness before t_end.
    """
    times = _default_times(t_end, t_eval)
    Pc = nd.Pc

    def rhs(t, y):
        h, c, f = y
        osmosis = Pc * (c - 1.0)
        return [-J_const + osmosis, (J_const - osmosis) * c / h, (J_const - osmosis) * f / h]

    def touchdown(t, y):
        return y[0] - 1e-6

    touchdown.terminal = True
    touchdown.direction = -1

    sol = solve_ivp(rhs, (0.0, t_end), [1.0, 1.0, ic.f0], method="DOP853",
                    rtol=1e-10, atol=1e-12, t_eval=times, dense_output=True,
                    events=touchdown)
    if sol.status == 1:
        td = float(sol.t_events[0][0])
        keep = times < td
        y = np.array([sol.sol(t) for t in times[keep]]).T if keep.any() else np.empty((3, 0))
        return OracleResult(times=times[keep], h=y[0], c=y[1], f=y[2], touchdown_time=td)
    return OracleResult(times=sol.t, h=sol.y[0], c=sol.y[1], f=sol.y[2])
