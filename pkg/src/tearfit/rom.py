"""Snapshot-based model reduction for the 2D forward solver.

Short-time solution snapshots are factored per field by SVD into orthonormal
spatial modes; the governing equations are then Galerkin-projected onto the
retained modes and integrated as a small stiff ODE system.  Nonlinear terms
are evaluated by lifting to the full grid, applying the collocation
operators, and projecting back (no hyper-reduction; the grid is small).
"""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass

import numpy as np

from .evaporation import EvaporationSpec
from .params import FieldState, Grid2D, InitialConditions, NondimParams, ParameterError
from .solver import (
    STATUS_SUCCESS,
    SolverOptions,
    SolveResult,
    SpectralOperators2D,
    _default_times,
    _integrate,
    _rhs_stage1_2d,
    _rhs_stage2_2d,
    _velocities_2d,
    solve_2d,
)

BASIS_FORMAT_VERSION = 1
FIELD_ORDER = ("h", "c", "f")


@dataclass(frozen=True)
class RomOptions:
    """Snapshot schedule, truncation policy, and basis-reuse policy.

    During fitting, the basis is rebuilt (a fresh snapshot solve at the
    current candidate) once the candidate's relative distance from the build
    point exceeds trust_radius, with at least rebuild_block objective
    evaluations between rebuilds.  Inside the trust region the basis is held
    fixed so the objective stays consistent for line searches.
    """

    snapshot_window: float = 0.1    # fraction of t_end sampled for snapshots
    snapshot_count: int = 40
    energy_threshold: float = 1.0 - 1e-12
    max_modes: int = 60
    trust_radius: float = 0.1
    rebuild_block: int = 10

    def __post_init__(self):
        if not (0 < self.snapshot_window <= 1):
            raise ParameterError(f"snapshot_window must lie in (0, 1], got {self.snapshot_window}")
        if not (0.9 < self.energy_threshold < 1):
            raise ParameterError(f"energy_threshold must lie in (0.9, 1), got {self.energy_threshold}")
        if self.snapshot_count < 2:
            raise ParameterError("need at least 2 snapshots")
        if self.trust_radius <= 0:
            raise ParameterError("trust_radius must be positive")


class PodBasis:
    """Per-field affine bases: mean state plus orthonormal fluctuation modes."""

    def __init__(self, grid_shape, means, modes, singular_values, snapshot_count,
                 energy_threshold):
        self.grid_shape = tuple(grid_shape)
        self.means = means            # field -> (npts,)
        self.modes = modes            # field -> (npts, r_field)
        self.singular_values = singular_values
        self.snapshot_count = snapshot_count
        self.energy_threshold = energy_threshold

    def mode_counts(self) -> dict:
        return {name: self.modes[name].shape[1] for name in FIELD_ORDER}

    def orthonormality_defect(self) -> float:
        worst = 0.0
        for name in FIELD_ORDER:
            U = self.modes[name]
            if U.shape[1] == 0:
                continue
            G = U.T @ U
            worst = max(worst, float(np.abs(G - np.eye(G.shape[0])).max()))
        return worst

    def project(self, name: str, field_flat: np.ndarray) -> np.ndarray:
        return (field_flat - self.means[name]) @ self.modes[name]

    def lift(self, name: str, coeffs: np.ndarray) -> np.ndarray:
        return self.means[name] + coeffs @ self.modes[name].T

    def reconstruction_error(self, name: str, field_flat: np.ndarray) -> float:
        rec = self.lift(name, self.project(name, field_flat))
        denom = np.linalg.norm(field_flat)
        return float(np.linalg.norm(rec - field_flat) / denom) if denom else 0.0

    def save(self, path) -> None:
        payload = {
            "format_version": BASIS_FORMAT_VERSION,
            "grid_shape": np.array(self.grid_shape),
            "field_order": np.array(FIELD_ORDER),
            "snapshot_count": self.snapshot_count,
            "energy_threshold": self.energy_threshold,
        }
        for name in FIELD_ORDER:
            payload[f"mean_{name}"] = self.means[name]
            payload[f"modes_{name}"] = self.modes[name]
            payload[f"sv_{name}"] = self.singular_values[name]
        np.savez(path, **payload)

    @classmethod
    def load(cls, path) -> "PodBasis":
        with np.load(path, allow_pickle=False) as data:
            version = int(data["format_version"])
            if version != BASIS_FORMAT_VERSION:
                raise ParameterError(f"unsupported basis format version {version}")
            return cls(
                grid_shape=tuple(int(v) for v in data["grid_shape"]),
                means={n: data[f"mean_{n}"] for n in FIELD_ORDER},
                modes={n: data[f"modes_{n}"] for n in FIELD_ORDER},
                singular_values={n: data[f"sv_{n}"] for n in FIELD_ORDER},
                snapshot_count=int(data["snapshot_count"]),
                energy_threshold=float(data["energy_threshold"]),
            )


def build_basis(snapshots, opts: RomOptions | None = None) -> PodBasis:
    """SVD of mean-centered snapshots, truncated at the energy threshold.

    Retains the smallest mode count whose cumulative squared singular values
    reach the threshold, capped at max_modes and at the numerical rank.
    """
    opts = opts or RomOptions()
    if len(snapshots) < 2:
        raise ParameterError("need at least 2 snapshots to build a basis")
    grid_shape = np.shape(snapshots[0].h)
    means, modes, svals = {}, {}, {}
    for name in FIELD_ORDER:
        X = np.stack([getattr(s, name).ravel() for s in snapshots], axis=1)
        mean = X.mean(axis=1)
        Xc = X - mean[:, None]
        U, s, _ = np.linalg.svd(Xc, full_matrices=False)
        energy = s * s
        total = energy.sum()
        if total == 0.0:
            r = 0
        else:
            rank = int(np.sum(s > s[0] * 1e-13))
            cum = np.cumsum(energy) / total
            r = int(np.searchsorted(cum, opts.energy_threshold) + 1)
            if r > rank:
                warnings.warn(
                    f"snapshot set for field {name!r} is rank deficient; "
                    f"basis truncated to numerical rank {rank}")
                r = rank
            r = min(r, opts.max_modes)
        means[name] = mean
        modes[name] = U[:, :r].copy()
        svals[name] = s[:r].copy()
    return PodBasis(grid_shape=grid_shape, means=means, modes=modes,
                    singular_values=svals, snapshot_count=len(snapshots),
                    energy_threshold=opts.energy_threshold)


def snapshot_solve(spec: EvaporationSpec, nd: NondimParams, ic: InitialConditions,
                   t_end: float, solver_opts: SolverOptions,
                   rom_opts: RomOptions | None = None):
    """Full-order solve over the snapshot window, returning (result, basis)."""
    rom_opts = rom_opts or RomOptions()
    t_snap = np.linspace(0.0, rom_opts.snapshot_window * t_end, rom_opts.snapshot_count)
    result = solve_2d(spec, nd, ic, t_snap[-1], solver_opts, t_eval=t_snap)
    if not result.ok:
        return result, None
    return result, build_basis(result.states, rom_opts)


def solve_reduced(spec: EvaporationSpec, nd: NondimParams, ic: InitialConditions,
                  t_end: float, basis: PodBasis, opts: SolverOptions | None = None,
                  t_eval=None) -> SolveResult:
    """Integrate the Galerkin-projected system and lift to full-grid states."""
    if t_end <= 0:
        raise ParameterError("t_end must be positive")
    opts = opts or SolverOptions()
    grid = Grid2D(*basis.grid_shape)
    if (opts.m, opts.n) != basis.grid_shape:
        opts = SolverOptions(rel_tol=opts.rel_tol, abs_tol=opts.abs_tol,
                             max_steps=opts.max_steps, m=grid.m, n=grid.n,
                             touchdown_h=opts.touchdown_h, dealias=opts.dealias)
    ops = SpectralOperators2D(grid, dealias=opts.dealias)
    X, Y = grid.meshgrid()
    J = spec(X, Y)
    times = _default_times(t_end, t_eval)
    Pc, inv_Pe_c, inv_Pe_f = nd.Pc, 1.0 / nd.Pe_c, 1.0 / nd.Pe_f
    shape = basis.grid_shape
    npts = shape[0] * shape[1]
    Uh, Uc, Uf = basis.modes["h"], basis.modes["c"], basis.modes["f"]
    mh, mc, mf = basis.means["h"], basis.means["c"], basis.means["f"]
    r_h, r_c, r_f = Uh.shape[1], Uc.shape[1], Uf.shape[1]
    start = time.perf_counter()

    def lift_pair(a):
        # a: (k, r_h + r_c) -> h, c as (k, m, n)
        h = (mh + a[:, :r_h] @ Uh.T).reshape(-1, *shape)
        c = (mc + a[:, r_h:] @ Uc.T).reshape(-1, *shape)
        return h, c

    def rhs1(t, y):
        batched = y.ndim == 2
        a = y.T if batched else y[None]
        h, c = lift_pair(a)
        dh, dc = _rhs_stage1_2d(ops, J, Pc, inv_Pe_c, h, c)
        da = np.concatenate([dh.reshape(-1, npts) @ Uh, dc.reshape(-1, npts) @ Uc], axis=1)
        return da.T if batched else da[0]

    def touchdown(t, y):
        h = mh + y[:r_h] @ Uh.T
        return h.min() - opts.touchdown_h

    touchdown.terminal = True
    touchdown.direction = -1

    ones = np.ones(npts)
    a0 = np.concatenate([(ones - mh) @ Uh, (ones - mc) @ Uc])
    sol1, status, message, nfev1 = _integrate(rhs1, (0.0, t_end), a0, opts, events=touchdown)
    if status != STATUS_SUCCESS:
        return SolveResult(times=times, states=[], status=status, message=message,
                           nfev=nfev1, wall_time=time.perf_counter() - start)
    dense1 = sol1.sol

    def rhs2(t, y):
        batched = y.ndim == 2
        af = y.T if batched else y[None]
        h, c = lift_pair(dense1(t)[None])
        _, ub, vb = _velocities_2d(ops, h)
        f = (mf + af @ Uf.T).reshape(-1, *shape)
        df = _rhs_stage2_2d(ops, J, Pc, inv_Pe_f, h, c, ub, vb, f)
        da = df.reshape(-1, npts) @ Uf
        return da.T if batched else da[0]

    af0 = (np.full(npts, ic.f0) - mf) @ Uf
    sol2, status, message, nfev2 = _integrate(rhs2, (0.0, t_end), af0, opts)
    wall = time.perf_counter() - start
    if status != STATUS_SUCCESS:
        return SolveResult(times=times, states=[], status=status, message=message,
                           nfev=nfev1 + nfev2, wall_time=wall)

    states = []
    for t in times:
        h, c = lift_pair(dense1(t)[None])
        h, c = h[0], c[0]
        f = (mf + sol2.sol(t) @ Uf.T).reshape(shape)
        p, ub, vb = _velocities_2d(ops, h)
        states.append(FieldState(t=float(t), h=h, c=c, f=f, p=p, u_bar=ub, v_bar=vb))
    return SolveResult(times=times, states=states, nfev=nfev1 + nfev2, wall_time=wall)


def rom_speedup_report(spec: EvaporationSpec, nd: NondimParams, ic: InitialConditions,
                       t_end: float, solver_opts: SolverOptions | None = None,
                       rom_opts: RomOptions | None = None, t_eval=None) -> dict:
    """Wall-clock comparison of full vs snapshot+reduced solve on one spec."""
    solver_opts = solver_opts or SolverOptions()
    rom_opts = rom_opts or RomOptions()
    t0 = time.perf_counter()
    full = solve_2d(spec, nd, ic, t_end, solver_opts, t_eval=t_eval)
    full_time = time.perf_counter() - t0
    report = {
        "rom_enabled": True,
        "grid": [solver_opts.m, solver_opts.n],
        "full_solve_seconds": full_time,
        "full_status": full.status,
    }
    t0 = time.perf_counter()
    snap, basis = snapshot_solve(spec, nd, ic, t_end, solver_opts, rom_opts)
    if basis is None:
        report.update({"rom_status": snap.status, "speedup": None})
        return report
    reduced = solve_reduced(spec, nd, ic, t_end, basis, solver_opts, t_eval=t_eval)
    rom_time = time.perf_counter() - t0
    report.update({
        "rom_status": reduced.status,
        "mode_counts": basis.mode_counts(),
        "snapshot_count": rom_opts.snapshot_count,
        "snapshot_window": rom_opts.snapshot_window,
        "rom_solve_seconds": rom_time,
        "speedup": full_time / rom_time if rom_time > 0 else None,
    })
    return report
