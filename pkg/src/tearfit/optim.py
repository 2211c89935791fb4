"""Derivative-free minimizers used by the fitting pipeline.

Two algorithms: Nelder-Mead with the standard simplex coefficients plus
restart on collapse, and a principal-axis scheme of sequential line
minimizations along an adaptively rotated orthonormal direction set.  Both
treat penalty plateaus (objective returning a large constant for infeasible
points) by restarting around the best point seen with reduced steps.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .params import ParameterError


@dataclass(frozen=True)
class OptimizerOptions:
    algorithm: str = "principal-axis"   # or "nelder-mead"
    x_tol: float = 1e-7
    f_tol: float = 1e-12
    max_iterations: int = 500
    penalty: float = 1e8
    initial_step: object = None         # scalar or per-dimension array; None -> auto
    max_restarts: int = 30

    def __post_init__(self):
        if self.algorithm not in ("principal-axis", "nelder-mead"):
            raise ParameterError(f"unknown algorithm {self.algorithm!r}")
        if self.x_tol <= 0 or self.f_tol <= 0:
            raise ParameterError("tolerances must be positive")


@dataclass
class MinimizeResult:
    x: np.ndarray
    fun: float
    iterations: int
    nfev: int
    history: list = field(default_factory=list)  # best objective after each iteration
    status: str = "converged"                    # or "max-iterations"
    algorithm: str = ""
    restarts: int = 0


def _auto_steps(x0: np.ndarray, initial_step) -> np.ndarray:
    if initial_step is None:
        return np.maximum(0.15 * np.abs(x0), 0.05)
    step = np.asarray(initial_step, dtype=float)
    if step.ndim == 0:
        return np.full(x0.shape, float(step))
    if step.shape != x0.shape:
        raise ParameterError("initial_step shape does not match x0")
    return step.copy()


def minimize_vector(fun, x0, opts: OptimizerOptions, callback=None) -> MinimizeResult:
    """Dispatch to the configured algorithm.

    `callback(x_best, f_best)` runs after every iteration; it may return a
    replacement objective value when the objective itself has changed (the
    fitting pipeline uses this to refresh values after a basis rebuild).
    """
    x0 = np.asarray(x0, dtype=float)
    if opts.algorithm == "nelder-mead":
        return nelder_mead(fun, x0, opts, callback=callback)
    return principal_axis(fun, x0, opts, callback=callback)


# ----------------------------------------------------------------- Nelder-Mead

def nelder_mead(fun, x0, opts: OptimizerOptions, callback=None) -> MinimizeResult:
    """Simplex search: reflection 1, expansion 2, contraction 1/2, shrink 1/2."""
    x0 = np.asarray(x0, dtype=float)
    n = x0.size
    steps = _auto_steps(x0, opts.initial_step)
    nfev = 0

    def make_simplex(center, local_steps):
        verts = [center.copy()]
        for i in range(n):
            v = center.copy()
            v[i] += local_steps[i]
            verts.append(v)
        return np.array(verts)

    def evaluate(points):
        nonlocal nfev
        vals = np.array([fun(p) for p in points])
        nfev += len(points)
        return vals

    simplex = make_simplex(x0, steps)
    fvals = evaluate(simplex)
    history = []
    restarts = 0
    status = "max-iterations"
    iterations = 0

    for iterations in range(1, opts.max_iterations + 1):
        order = np.argsort(fvals, kind="stable")
        simplex, fvals = simplex[order], fvals[order]
        best, worst = fvals[0], fvals[-1]

        x_spread = np.abs(simplex[1:] - simplex[0]).max()
        f_spread = abs(worst - best)
        if (x_spread <= opts.x_tol * (1.0 + np.abs(simplex[0]).max())
                and f_spread <= opts.f_tol * (1.0 + abs(best))):
            history.append(best)
            status = "converged"
            break

        stuck_on_penalty = np.sum(fvals >= opts.penalty) >= n
        degenerate = x_spread <= 1e-14 * (1.0 + np.abs(simplex[0]).max())
        if stuck_on_penalty or degenerate:
            if restarts >= opts.max_restarts:
                history.append(best)
                break
            restarts += 1
            if best >= opts.penalty:
                # nothing feasible yet: search wider, flipping orientation
                steps = -2.0 * steps
            else:
                # re-seed a smaller simplex around the best feasible point
                steps = steps * 0.5
            simplex = make_simplex(simplex[0], steps)
            fvals = np.concatenate([[fvals[0]], evaluate(simplex[1:])])
            history.append(min(best, fvals.min()))
            continue

        centroid = simplex[:-1].mean(axis=0)
        xr = centroid + (centroid - simplex[-1])
        fr = fun(xr)
        nfev += 1
        if fr < best:
            xe = centroid + 2.0 * (centroid - simplex[-1])
            fe = fun(xe)
            nfev += 1
            simplex[-1], fvals[-1] = (xe, fe) if fe < fr else (xr, fr)
        elif fr < fvals[-2]:
            simplex[-1], fvals[-1] = xr, fr
        else:
            if fr < worst:
                xc = centroid + 0.5 * (centroid - simplex[-1])  # outside
            else:
                xc = centroid - 0.5 * (centroid - simplex[-1])  # inside
            fc = fun(xc)
            nfev += 1
            if fc < min(fr, worst):
                simplex[-1], fvals[-1] = xc, fc
            else:
                simplex[1:] = simplex[0] + 0.5 * (simplex[1:] - simplex[0])
                fvals[1:] = evaluate(simplex[1:])
        history.append(min(fvals.min(), history[-1] if history else np.inf))

        if callback is not None:
            i_best = int(np.argmin(fvals))
            refreshed = callback(simplex[i_best], fvals[i_best])
            if refreshed is not None:
                # objective changed under us: revalue the whole simplex
                fvals[i_best] = refreshed
                others = [i for i in range(len(fvals)) if i != i_best]
                fvals[others] = evaluate(simplex[others])

    order = np.argsort(fvals, kind="stable")
    return MinimizeResult(x=simplex[order[0]].copy(), fun=float(fvals[order[0]]),
                          iterations=iterations, nfev=nfev, history=history,
                          status=status, algorithm="nelder-mead", restarts=restarts)


# -------------------------------------------------------------- principal axis

def _line_minimize(fun, x, direction, step, f_x, penalty):
    """Bounded bracketing plus safeguarded parabolic refinement along a line.

    Returns (t_best, f_best, nfev).  Never moves if no sampled point improves.
    """
    nfev = 0

    def phi(t):
        nonlocal nfev
        nfev += 1
        return fun(x + t * direction)

    pts = {0.0: f_x}
    fp = phi(step)
    fm = phi(-step)
    pts[step] = fp
    pts[-step] = fm

    if fp >= f_x and fm >= f_x:
        for frac in (0.25, 0.0625):
            t = step * frac
            pts[t] = phi(t)
            pts[-t] = phi(-t)
        t_best = min(pts, key=lambda t: (pts[t], abs(t)))
        return t_best, pts[t_best], nfev

    sign = 1.0 if fp < fm else -1.0
    t_prev, f_prev = 0.0, f_x
    t_cur = sign * step
    f_cur = pts[t_cur]
    for _ in range(12):
        t_next = 2.0 * t_cur
        f_next = phi(t_next)
        pts[t_next] = f_next
        if f_next >= f_cur or f_next >= penalty:
            break
        t_prev, f_prev = t_cur, f_cur
        t_cur, f_cur = t_next, f_next

    ts = np.array(sorted(pts))
    fs = np.array([pts[t] for t in ts])
    i = int(np.argmin(fs))
    if 0 < i < len(ts) - 1:
        a, b, c = ts[i - 1], ts[i], ts[i + 1]
        fa, fb, fc = fs[i - 1], fs[i], fs[i + 1]
        for _ in range(8):
            denom = (b - a) * (fb - fc) - (b - c) * (fb - fa)
            if abs(denom) < 1e-300:
                break
            t_new = b - 0.5 * ((b - a) ** 2 * (fb - fc) - (b - c) ** 2 * (fb - fa)) / denom
            if not (min(a, c) < t_new < max(a, c)) or abs(t_new - b) < 1e-14 * (1 + abs(b)):
                t_new = 0.5 * (a + c)  # bisect the wider side
            if abs(t_new - b) < 1e-15 * (1 + abs(b)):
                break
            f_new = phi(t_new)
            if f_new < fb:
                if t_new < b:
                    c, fc = b, fb
                else:
                    a, fa = b, fb
                b, fb = t_new, f_new
            else:
                if t_new < b:
                    a, fa = t_new, f_new
                else:
                    c, fc = t_new, f_new
            if abs(c - a) <= 1e-12 * (1.0 + abs(b)):
                break
        t_best, f_best = b, fb
    else:
        t_best, f_best = ts[i], fs[i]
    if f_best >= f_x:
        return 0.0, f_x, nfev
    return float(t_best), float(f_best), nfev


def principal_axis(fun, x0, opts: OptimizerOptions, callback=None) -> MinimizeResult:
    """Sequential line minimizations along an adaptively rotated axis set.

    One iteration sweeps every direction, follows the net displacement, and
    replaces the direction of largest decrease with it; the direction matrix
    is re-orthonormalized by SVD every n sweeps to stay well conditioned.
    """
    x = np.asarray(x0, dtype=float).copy()
    n = x.size
    steps = _auto_steps(x, opts.initial_step)
    base_steps = steps.copy()
    directions = np.eye(n)
    f_cur = fun(x)
    nfev = 1
    history = []
    restarts = 0
    status = "max-iterations"
    iterations = 0
    slow_sweeps = 0

    for iterations in range(1, opts.max_iterations + 1):
        x_start = x.copy()
        f_start = f_cur
        decreases = np.zeros(n)
        for j in range(n):
            t, f_new, ne = _line_minimize(fun, x, directions[:, j], steps[j], f_cur, opts.penalty)
            nfev += ne
            if t != 0.0:
                x = x + t * directions[:, j]
                decreases[j] = f_cur - f_new
                f_cur = f_new
                steps[j] = min(max(abs(t), 0.1 * steps[j]), 4.0 * steps[j])
            else:
                steps[j] = max(steps[j] * 0.35, 1e-14)

        disp = x - x_start
        disp_norm = np.linalg.norm(disp)
        if disp_norm > 0:
            t, f_new, ne = _line_minimize(fun, x, disp / disp_norm, disp_norm, f_cur, opts.penalty)
            nfev += ne
            if t != 0.0:
                x = x + t * (disp / disp_norm)
                f_cur = f_new
            j_max = int(np.argmax(decreases))
            directions[:, j_max] = disp / disp_norm
            if iterations % n == 0:
                u, _, _ = np.linalg.svd(directions)
                directions = u

        history.append(f_cur)

        if callback is not None:
            refreshed = callback(x, f_cur)
            if refreshed is not None:
                f_cur = refreshed

        if f_cur >= opts.penalty:
            if restarts >= opts.max_restarts:
                break
            restarts += 1
            directions = np.eye(n)
            steps = -2.0 * steps  # widen the search, flipping orientation
            continue

        scale = 1.0 + np.abs(x).max()
        x_move = np.abs(x - x_start).max()
        f_move = f_start - f_cur
        small_move = (x_move <= opts.x_tol * scale
                      and f_move <= opts.f_tol * (1.0 + abs(f_cur)))
        if small_move and np.abs(steps).max() <= 100.0 * opts.x_tol * scale:
            slow_sweeps += 1
            if slow_sweeps >= 2:
                status = "converged"
                break
        elif small_move:
            # steps are still coarse: refine before judging convergence
            slow_sweeps = 0
            steps = steps * 0.25
        else:
            slow_sweeps = 0

    return MinimizeResult(x=x, fun=float(f_cur), iterations=iterations, nfev=nfev,
                          history=history, status=status, algorithm="principal-axis",
                          restarts=restarts)
