"""Optimization drivers for registration, geodesics and shooting.

All variational problems funnel through one quasi-Newton engine
(:func:`minimize`, limited-memory BFGS with a strong-Wolfe line search).
Objectives return ``(value, gradient)``; gradients are assembled analytically
from the metric/varifold vertex gradients.  Mesh degeneracies encountered
during a line search surface as non-finite objective values, which the
search treats as "step too far" and halves away from (up to a configured
number of times) before giving up.

The shooting solver (:func:`geodesic_ivp`) advances a discrete geodesic by
requiring each knot to be the geodesic midpoint of its neighbors: every step
solves the stationarity system of the two-step energy for the next knot by
Gauss-Newton on the squared residual.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from ._diff import step_energy_discrete_with_grads
from .latent import (
    decode,
    gram,
    gram_directional_derivative,
    latent_path_energy_with_grad,
)
from .mesh import MeshError, TriangleMesh
from .metric import _geometry
from .varifold import VarifoldConfig, varifold_grad, varifold_sqdist


class SolverFailure(RuntimeError):
    """An optimization run could not produce a usable result."""


@dataclass(frozen=True)
class OptimizerConfig:
    """Quasi-Newton settings shared by all solvers."""

    max_iterations: int = 500
    gradient_tolerance: float = 1e-8
    memory: int = 10
    wolfe_c1: float = 1e-4
    wolfe_c2: float = 0.9
    max_step_halvings: int = 30

    def __post_init__(self):
        if self.max_iterations < 1 or self.memory < 1:
            raise ValueError("iteration and memory budgets must be positive")
        if not (self.gradient_tolerance > 0):
            raise ValueError("gradient tolerance must be positive")


@dataclass
class SolveReport:
    """Outcome of one (possibly multi-stage) solve."""

    value: float
    grad_norm: float
    iterations: list
    reason: str  # converged | max_iters | line_search_failure
    details: dict = field(default_factory=dict)

    def __post_init__(self):
        if not np.isfinite(self.value):
            raise ValueError("solve report with non-finite objective value")


@dataclass(frozen=True)
class MultiscaleSchedule:
    """Ordered (sigma, lambda) stages for relaxed matching problems.

    Kernel scales must be nonincreasing and balancing weights nondecreasing:
    coarse alignment first, then tightening of the data term.
    """

    stages: tuple

    def __post_init__(self):
        stages = tuple((float(s), float(l)) for s, l in self.stages)
        if not stages:
            raise ValueError("schedule needs at least one stage")
        sigmas = [s for s, _ in stages]
        lams = [l for _, l in stages]
        if any(s <= 0 for s in sigmas) or any(l <= 0 for l in lams):
            raise ValueError("sigmas and lambdas must be positive")
        if any(s1 > s0 for s0, s1 in zip(sigmas, sigmas[1:])):
            raise ValueError("sigmas must be nonincreasing")
        if any(l1 < l0 for l0, l1 in zip(lams, lams[1:])):
            raise ValueError("lambdas must be nondecreasing")
        object.__setattr__(self, "stages", stages)

    @classmethod
    def bodies(cls):
        """Five-stage default for unit-diameter body-like surfaces."""
        return cls(
            stages=(
                (0.4, 1e2),
                (0.2, 1e4),
                (0.1, 1e6),
                (0.05, 1e7),
                (0.025, 1e8),
            )
        )

    @classmethod
    def faces(cls):
        """Two-stage default for unit-diameter face-like surfaces."""
        return cls(stages=((0.01, 1e6), (0.005, 1e10)))


# ---------------------------------------------------------------------------
# quasi-Newton engine
# ---------------------------------------------------------------------------


def _two_loop(g, mem):
    q = g.copy()
    alphas = []
    for s, y, rho in reversed(mem):
        a = rho * (s @ q)
        alphas.append(a)
        q -= a * y
    if mem:
        s, y, _ = mem[-1]
        q *= (s @ y) / (y @ y)
    for (s, y, rho), a in zip(mem, reversed(alphas)):
        q += (a - rho * (y @ q)) * s
    return q


def _finite(f, g):
    return np.isfinite(f) and g is not None and np.all(np.isfinite(g))


def _zoom(phi, lo, f_lo, der_lo, g_lo, hi, f_hi, f0, derphi0, cfg):
    c1, c2 = cfg.wolfe_c1, cfg.wolfe_c2
    for _ in range(cfg.max_step_halvings):
        span = hi - lo
        a = None
        if np.isfinite(f_hi):
            # quadratic model through (f_lo, der_lo, f_hi)
            denom = f_hi - f_lo - der_lo * span
            if denom != 0:
                cand = lo - 0.5 * der_lo * span**2 / denom
                inner_lo = min(lo, hi) + 0.1 * abs(span)
                inner_hi = max(lo, hi) - 0.1 * abs(span)
                if inner_lo <= cand <= inner_hi:
                    a = cand
        if a is None:
            a = 0.5 * (lo + hi)
        fa, ga, dera = phi(a)
        if not np.isfinite(fa) or fa > f0 + c1 * a * derphi0 or fa >= f_lo:
            hi, f_hi = a, fa
            continue
        if abs(dera) <= -c2 * derphi0:
            return a, fa, ga
        if dera * (hi - lo) >= 0:
            hi, f_hi = lo, f_lo
        lo, f_lo, der_lo, g_lo = a, fa, dera, ga
    if lo > 0 and f_lo < f0:
        return lo, f_lo, g_lo  # sufficient decrease without the curvature bound
    return None


def _line_search(fun, x, f0, g0, d, cfg):
    c1, c2 = cfg.wolfe_c1, cfg.wolfe_c2
    derphi0 = float(g0 @ d)
    if derphi0 >= 0:
        return None

    def phi(a):
        f, g = fun(x + a * d)
        if not _finite(f, g):
            return np.inf, None, np.nan
        return float(f), g, float(np.asarray(g) @ d)

    a_prev, f_prev, der_prev, g_prev = 0.0, f0, derphi0, g0
    a = 1.0
    for _ in range(cfg.max_step_halvings):
        fa, ga, dera = phi(a)
        if np.isfinite(fa):
            break
        a *= 0.5
    else:
        return None
    for it in range(30):
        if fa > f0 + c1 * a * derphi0 or (it > 0 and fa >= f_prev):
            return _zoom(phi, a_prev, f_prev, der_prev, g_prev, a, fa, f0, derphi0, cfg)
        if abs(dera) <= -c2 * derphi0:
            return a, fa, ga
        if dera >= 0:
            return _zoom(phi, a, fa, dera, ga, a_prev, f_prev, f0, derphi0, cfg)
        a_prev, f_prev, der_prev, g_prev = a, fa, dera, ga
        a *= 2.0
        fa, ga, dera = phi(a)
        if not np.isfinite(fa):
            return _zoom(phi, a_prev, f_prev, der_prev, g_prev, a, fa, f0, derphi0, cfg)
    return None


def minimize(fun, x0, config=None, callback=None):
    """Limited-memory BFGS with a strong-Wolfe line search.

    Parameters
    ----------
    fun : callable
        Maps a flat parameter vector to ``(value, gradient)``.  Non-finite
        values signal an inadmissible point; the line search backs off.
    x0 : ndarray
        Starting point; the objective must be finite there.
    callback : callable, optional
        Called with ``(x, value)`` after every accepted iterate.

    Returns
    -------
    (ndarray, SolveReport)
        Accepted iterates have monotone nonincreasing objective values; the
        run stops when the max-norm of the gradient drops below the
        tolerance, the iteration budget is exhausted, or the line search
        cannot make progress (the last good iterate is returned).
    """
    cfg = config if config is not None else OptimizerConfig()
    x = np.array(x0, dtype=np.float64).ravel()
    f, g = fun(x)
    if not _finite(f, g):
        raise SolverFailure("objective is not finite at the initial point")
    f = float(f)
    g = np.asarray(g, dtype=np.float64)
    mem = deque(maxlen=cfg.memory)
    n_iter = 0
    reason = "max_iters"
    for _ in range(cfg.max_iterations):
        gnorm = float(np.max(np.abs(g))) if g.size else 0.0
        if gnorm < cfg.gradient_tolerance:
            reason = "converged"
            break
        d = -_two_loop(g, mem)
        if not np.all(np.isfinite(d)) or float(d @ g) >= 0.0:
            mem.clear()
            d = -g
        hit = _line_search(fun, x, f, g, d, cfg)
        if hit is None:
            reason = "line_search_failure"
            break
        a, f_new, g_new = hit
        s = a * d
        g_new = np.asarray(g_new, dtype=np.float64)
        y = g_new - g
        sy = float(s @ y)
        if sy > 1e-12 * (np.linalg.norm(s) * np.linalg.norm(y) + 1e-300):
            mem.append((s, y, 1.0 / sy))
        x = x + s
        f, g = float(f_new), g_new
        n_iter += 1
        if callback is not None:
            callback(x, f)
    else:
        if float(np.max(np.abs(g))) < cfg.gradient_tolerance:
            reason = "converged"
    report = SolveReport(
        value=f,
        grad_norm=float(np.max(np.abs(g))) if g.size else 0.0,
        iterations=[n_iter],
        reason=reason,
    )
    return x, report


def _guard(fun):
    """Map mesh degeneracies to non-finite objective values."""

    def wrapped(x):
        try:
            return fun(x)
        except MeshError:
            return np.inf, None

    return wrapped


# ---------------------------------------------------------------------------
# latent-space solvers
# ---------------------------------------------------------------------------


def retrieve_latent(basis, target, coefficients, schedule=None, time_steps=10, config=None):
    """Latent code retrieval by relaxed varifold matching from the template.

    Minimizes ``Gamma(decode(alpha(1)), target) + path_energy / lambda`` over
    the path knots ``alpha(1/T) ... alpha(1)`` with ``alpha(0) = 0`` pinned
    to the template.  Stages of the multiscale schedule warm-start from the
    previous solution.

    Returns
    -------
    (ndarray, SolveReport)
        The full ``(T+1, P)`` path (first row zero) and a report whose
        details carry the final varifold discrepancy and path energy.
    """
    schedule = schedule if schedule is not None else MultiscaleSchedule.bodies()
    T = int(time_steps)
    if T < 1:
        raise ValueError("time_steps must be >= 1")
    P = basis.dim
    fields_mat = basis.fields_matrix

    def objective(vcfg, lam):
        def fun(x):
            path = np.vstack([np.zeros(P), x.reshape(T, P)])
            energy, grad_e = latent_path_energy_with_grad(basis, path, coefficients)
            end = decode(basis, path[-1])
            gamma = varifold_sqdist(end, target, vcfg)
            grad = grad_e / lam
            grad[-1] += fields_mat @ varifold_grad(end, target, vcfg).ravel()
            return gamma + energy / lam, grad[1:].ravel()

        return _guard(fun)

    x = np.zeros(T * P)
    iterations = []
    report = None
    for sigma, lam in schedule.stages:
        x, report = minimize(objective(VarifoldConfig(sigma), lam), x, config)
        iterations.extend(report.iterations)
    path = np.vstack([np.zeros(P), x.reshape(T, P)])
    end = decode(basis, path[-1])
    sigma_final = schedule.stages[-1][0]
    gamma = varifold_sqdist(end, target, VarifoldConfig(sigma_final))
    energy, _ = latent_path_energy_with_grad(basis, path, coefficients)
    report = SolveReport(
        value=report.value,
        grad_norm=report.grad_norm,
        iterations=iterations,
        reason=report.reason,
        details={"varifold_sqdist": gamma, "path_energy": energy, "sigma": sigma_final},
    )
    return path, report


def geodesic_bvp(basis, alpha0, alpha1, time_steps, coefficients, config=None):
    """Geodesic boundary value problem between two latent codes.

    Minimizes the latent path energy over the interior knots with both
    endpoints fixed, starting from the linear interpolation.
    """
    alpha0 = basis.check_code(alpha0)
    alpha1 = basis.check_code(alpha1)
    T = int(time_steps)
    if T < 1:
        raise ValueError("time_steps must be >= 1")
    ts = np.linspace(0.0, 1.0, T + 1)[:, None]
    init = (1.0 - ts) * alpha0 + ts * alpha1

    if T == 1:
        energy, _ = latent_path_energy_with_grad(basis, init, coefficients)
        return init, SolveReport(value=energy, grad_norm=0.0, iterations=[0], reason="converged")

    def fun(x):
        path = np.vstack([alpha0, x.reshape(T - 1, basis.dim), alpha1])
        energy, grad = latent_path_energy_with_grad(basis, path, coefficients)
        return energy, grad[1:T].ravel()

    x, report = minimize(_guard(fun), init[1:T].ravel(), config)
    path = np.vstack([alpha0, x.reshape(T - 1, basis.dim), alpha1])
    return path, report


def relaxed_geodesic(basis, q0, q1, time_steps, coefficients, schedule=None, config=None,
                     init_path=None):
    """Geodesic between the closest latent representatives of two meshes.

    Minimizes ``path_energy + lambda * Gamma(decode(alpha(0)), q0)
    + lambda * Gamma(decode(alpha(1)), q1)`` over all knots; the endpoint
    meshes may have arbitrary mesh structures.
    """
    schedule = schedule if schedule is not None else MultiscaleSchedule.bodies()
    T = int(time_steps)
    if T < 1:
        raise ValueError("time_steps must be >= 1")
    P = basis.dim
    fields_mat = basis.fields_matrix

    def objective(vcfg, lam):
        def fun(x):
            path = x.reshape(T + 1, P)
            energy, grad = latent_path_energy_with_grad(basis, path, coefficients)
            start = decode(basis, path[0])
            end = decode(basis, path[-1])
            g0 = varifold_sqdist(start, q0, vcfg)
            g1 = varifold_sqdist(end, q1, vcfg)
            grad[0] += lam * (fields_mat @ varifold_grad(start, q0, vcfg).ravel())
            grad[-1] += lam * (fields_mat @ varifold_grad(end, q1, vcfg).ravel())
            return energy + lam * (g0 + g1), grad.ravel()

        return _guard(fun)

    x = (np.zeros((T + 1, P)) if init_path is None else np.asarray(init_path, float)).ravel()
    iterations = []
    report = None
    for sigma, lam in schedule.stages:
        x, report = minimize(objective(VarifoldConfig(sigma), lam), x, config)
        iterations.extend(report.iterations)
    path = x.reshape(T + 1, P)
    vcfg = VarifoldConfig(schedule.stages[-1][0])
    energy, _ = latent_path_energy_with_grad(basis, path, coefficients)
    details = {
        "gamma0": varifold_sqdist(decode(basis, path[0]), q0, vcfg),
        "gamma1": varifold_sqdist(decode(basis, path[-1]), q1, vcfg),
        "path_energy": energy,
        "sigma": vcfg.sigma,
    }
    report = SolveReport(
        value=report.value,
        grad_norm=report.grad_norm,
        iterations=iterations,
        reason=report.reason,
        details=details,
    )
    return path, report


# ---------------------------------------------------------------------------
# shooting (initial value problem)
# ---------------------------------------------------------------------------


def _midpoint_residual_solve(g_prev, g_cur, d_tensor, beta0, x0_offset, tol, max_iter=200):
    """Solve the midpoint stationarity system for the next code offset.

    The residual in the offset ``bt = alpha_next - alpha_cur`` is

        Phi(bt) = 2 G_prev beta0 - 2 G_cur bt + D(bt, bt)

    with ``D`` the directional derivatives of the Gram matrix at the current
    knot; Gauss-Newton with backtracking drives ``|Phi|`` below ``tol``.
    """
    b = 2.0 * (g_prev @ beta0)

    def residual(bt):
        return b - 2.0 * (g_cur @ bt) + np.einsum("ijk,j,k->i", d_tensor, bt, bt)

    bt = x0_offset.copy()
    r = residual(bt)
    rn = float(np.linalg.norm(r))
    mu = 0.0
    eye = np.eye(bt.size)
    for _ in range(max_iter):
        if rn <= tol:
            break
        jac = -2.0 * g_cur + 2.0 * np.einsum("ijk,k->ij", d_tensor, bt)
        try:
            dx = np.linalg.solve(jac.T @ jac + mu * eye, -(jac.T @ r))
        except np.linalg.LinAlgError:
            dx = np.linalg.lstsq(jac, -r, rcond=None)[0]
        step = 1.0
        improved = False
        for _ in range(40):
            cand = bt + step * dx
            rc = residual(cand)
            rcn = float(np.linalg.norm(rc))
            if rcn < rn:
                bt, r, rn = cand, rc, rcn
                improved = True
                break
            step *= 0.5
        if improved:
            mu = max(mu * 0.25, 0.0)
        else:
            mu = max(4.0 * mu, 1e-8 * float(np.trace(g_cur @ g_cur)) ** 0.5, 1e-12)
            if mu > 1e12:
                break
    return bt, rn


def geodesic_ivp(basis, alpha0, beta, steps, coefficients, config=None,
                 residual_tolerance=None):
    """Shoot a discrete geodesic from a code along an initial velocity.

    The first knot past the start is ``alpha0 + beta/N``; each subsequent
    knot makes its predecessor the geodesic midpoint of its two neighbors,
    enforced by solving the stationarity residual with Gauss-Newton.

    Returns the ``(N+1, P)`` path.  Raises :class:`SolverFailure` with the
    step index if a residual cannot be driven below tolerance, and
    propagates decode errors for degenerate knots.
    """
    alpha0 = basis.check_code(alpha0)
    beta = np.asarray(beta, dtype=np.float64)
    N = int(steps)
    if N < 2:
        raise ValueError("steps must be >= 2")
    P = basis.dim
    tol = residual_tolerance if residual_tolerance is not None else 1e-8 * P

    path = np.empty((N + 1, P))
    path[0] = alpha0
    path[1] = alpha0 + beta / N
    g_prev = gram(basis, path[0], coefficients)
    g_cur = gram(basis, path[1], coefficients)
    eye = np.eye(P)
    for k in range(1, N):
        d_tensor = np.stack(
            [
                gram_directional_derivative(basis, path[k], eye[i], coefficients)
                for i in range(P)
            ]
        )
        beta0 = path[k] - path[k - 1]
        bt, rn = _midpoint_residual_solve(g_prev, g_cur, d_tensor, beta0, beta0, tol)
        if rn > tol:
            raise SolverFailure(
                f"shooting residual {rn:.3e} above tolerance {tol:.3e} at step {k}"
            )
        path[k + 1] = path[k] + bt
        if k < N - 1:
            g_prev = g_cur
            g_cur = gram(basis, path[k + 1], coefficients)
    return path


# ---------------------------------------------------------------------------
# same-topology mesh geodesics
# ---------------------------------------------------------------------------


def parametrized_geodesic(q0, q1, time_steps, coefficients, config=None):
    """Geodesic between two meshes with identical face lists.

    Minimizes the discrete mesh path energy over the interior vertex
    configurations, starting from linear interpolation.  Returns the list of
    ``T+1`` meshes including the fixed endpoints.
    """
    if not q0.same_topology(q1):
        raise MeshError("parametrized geodesic endpoints must share topology")
    T = int(time_steps)
    if T < 1:
        raise ValueError("time_steps must be >= 1")
    faces = q0.faces
    v0 = q0.vertices
    v1 = q1.vertices
    if T == 1:
        return [q0, q1]

    n = q0.n_vertices
    ts = np.linspace(0.0, 1.0, T + 1)
    init = np.stack([(1.0 - t) * v0 + t * v1 for t in ts[1:T]])

    def fun(x):
        knots = [v0, *x.reshape(T - 1, n, 3), v1]
        total = 0.0
        grads = np.zeros((T + 1, n, 3))
        for t in range(T):
            geom = _geometry(TriangleMesh(knots[t], faces, validate=False))
            val, gl, gr = step_energy_discrete_with_grads(geom, knots[t + 1], coefficients)
            total += val
            grads[t] += gl
            grads[t + 1] += gr
        return T * total, T * grads[1:T].ravel()

    x, report = minimize(_guard(fun), init.ravel(), config)
    if report.reason == "line_search_failure" and report.value == np.inf:
        raise SolverFailure("mesh geodesic failed to start")
    knots = [v0, *x.reshape(T - 1, n, 3), v1]
    return [TriangleMesh(v, faces) for v in knots]
