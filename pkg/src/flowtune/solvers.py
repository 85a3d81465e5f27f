"""Tear-stream cycle solvers: direct substitution, Wegstein, Newton, BFGS.

All four operate on the flowsheet response function f and search for a
fixed point f(x) = x. Residuals are infinity norms on standard-deviation
scaled tear variables so mixed physical units compare meaningfully.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .flowsheet import FlowsheetGraph, ResponseFunction, SweepState, UnitEvaluationError

METHODS = ("direct", "wegstein", "newton", "bfgs")

DIVERGENCE_FACTOR = 1e6


class SolverError(Exception):
    pass


@dataclass
class SolveConfig:
    method: str = "direct"
    max_iterations: int = 50
    tolerance: float = 1e-8
    scale: np.ndarray | None = None
    wegstein_bounds: tuple[float, float] = (-5.0, 0.9)
    # below this scaled step size the secant slope is rounding noise and
    # the update falls back to direct substitution for that component
    wegstein_secant_floor: float = 1e-6
    newton_damping: float = 1.0
    bfgs_armijo_c1: float = 1e-4
    bfgs_max_halvings: int = 30

    def __post_init__(self):
        if self.method not in METHODS:
            raise SolverError(f"unknown method {self.method!r}, expected one of {METHODS}")
        if self.tolerance <= 0:
            raise SolverError("tolerance must be positive")
        if self.max_iterations < 1:
            raise SolverError("max_iterations must be >= 1")


@dataclass
class SolveTrace:
    """Per-iteration record of one cycle solve."""

    method: str
    xs: list[np.ndarray] = field(default_factory=list)
    fs: list[np.ndarray] = field(default_factory=list)
    residuals: list[float] = field(default_factory=list)
    converged: bool = False
    diverged: bool = False
    failed: bool = False
    message: str = ""

    @property
    def iterations(self) -> int:
        return len(self.xs) - 1

    def record(self, x: np.ndarray, fx: np.ndarray, residual: float) -> None:
        self.xs.append(np.array(x, dtype=np.float64))
        self.fs.append(np.array(fx, dtype=np.float64))
        self.residuals.append(float(residual))

    def best_x(self) -> np.ndarray:
        """Iterate with the smallest residual (fallback state for failures)."""
        i = int(np.argmin(self.residuals))
        return self.xs[i]

    def final_x(self) -> np.ndarray:
        return self.xs[-1]

    def to_csv(self, path, variable_names: list[str] | None = None) -> None:
        names = variable_names or [f"x{i}" for i in range(len(self.xs[0]))]
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["iteration", "residual"] + names)
            for k, (x, r) in enumerate(zip(self.xs, self.residuals)):
                writer.writerow([k, f"{r:.17g}"] + [f"{v:.17g}" for v in x])


def _scaled_residual(diff: np.ndarray, scale: np.ndarray | None) -> float:
    if scale is not None:
        diff = diff / scale
    return float(np.max(np.abs(diff))) if diff.size else 0.0


def _eval(f, x, trace: SolveTrace):
    """f(x) with non-finite results turned into a failed trace."""
    try:
        fx = np.asarray(f(x), dtype=np.float64)
    except UnitEvaluationError as exc:
        trace.failed = True
        trace.message = str(exc)
        return None
    if not np.all(np.isfinite(fx)):
        trace.failed = True
        trace.message = "non-finite response value"
        return None
    return fx


def _finish_step(trace: SolveTrace, cfg: SolveConfig, guard: float) -> bool:
    """Convergence / divergence bookkeeping; True means stop iterating."""
    r = trace.residuals[-1]
    if r < cfg.tolerance:
        trace.converged = True
        return True
    if not np.isfinite(r) or r > guard:
        trace.diverged = True
        trace.message = f"scaled residual {r:.3g} exceeded divergence guard"
        return True
    return False


def _guard_level(r0: float) -> float:
    return DIVERGENCE_FACTOR * max(r0, 1.0)


def direct_substitution(f, x0, cfg: SolveConfig) -> SolveTrace:
    """Fixed-point iteration x_{k+1} = f(x_k)."""
    trace = SolveTrace(method="direct")
    x = np.asarray(x0, dtype=np.float64).copy()
    fx = _eval(f, x, trace)
    if fx is None:
        trace.record(x, x, np.inf)
        return trace
    trace.record(x, fx, _scaled_residual(fx - x, cfg.scale))
    guard = _guard_level(trace.residuals[0])
    for _ in range(cfg.max_iterations):
        if _finish_step(trace, cfg, guard):
            return trace
        x = trace.fs[-1]
        fx = _eval(f, x, trace)
        if fx is None:
            return trace
        trace.record(x, fx, _scaled_residual(fx - x, cfg.scale))
    _finish_step(trace, cfg, guard)
    return trace


def wegstein(f, x0, cfg: SolveConfig) -> SolveTrace:
    """Secant-accelerated fixed-point iteration, applied componentwise.

    The first step is one direct substitution to seed the secant slope
    a = (f(x_k) - f(x_{k-1})) / (x_k - x_{k-1}); the update uses
    q = a / (a - 1) clamped to the configured bounds, with q = 0 (plain
    direct step) as the fallback for a singular a = 1.
    """
    trace = SolveTrace(method="wegstein")
    x = np.asarray(x0, dtype=np.float64).copy()
    fx = _eval(f, x, trace)
    if fx is None:
        trace.record(x, x, np.inf)
        return trace
    trace.record(x, fx, _scaled_residual(fx - x, cfg.scale))
    guard = _guard_level(trace.residuals[0])
    q_min, q_max = cfg.wegstein_bounds
    for k in range(cfg.max_iterations):
        if _finish_step(trace, cfg, guard):
            return trace
        if k == 0:
            x_new = trace.fs[-1]
        else:
            x_prev, x_cur = trace.xs[-2], trace.xs[-1]
            f_prev, f_cur = trace.fs[-2], trace.fs[-1]
            dx = x_cur - x_prev
            with np.errstate(divide="ignore", invalid="ignore"):
                a = (f_cur - f_prev) / dx
                q = a / (a - 1.0)
            # degenerate slope (a=1, dx=0, or dx at rounding level): fall
            # back to a direct step for that component
            q = np.where(np.isfinite(q), q, 0.0)
            dx_scaled = np.abs(dx / cfg.scale) if cfg.scale is not None else np.abs(dx)
            q = np.where(dx_scaled < cfg.wegstein_secant_floor, 0.0, q)
            q = np.clip(q, q_min, q_max)
            x_new = q * x_cur + (1.0 - q) * f_cur
        fx = _eval(f, x_new, trace)
        if fx is None:
            return trace
        trace.record(x_new, fx, _scaled_residual(fx - x_new, cfg.scale))
    _finish_step(trace, cfg, guard)
    return trace


def newton(f, x0, cfg: SolveConfig, jac=None) -> SolveTrace:
    """Newton root finding on F(x) = f(x) - x with damped LU-solved steps.

    The linear system is solved in standard-deviation-scaled coordinates
    (D^-1 (J_f - I) D with D = diag(scale)), which keeps the conditioning
    estimate meaningful for tear vectors mixing kelvins and mass fractions.
    The Jacobian health check runs before the convergence test, so a
    degenerate response with J_f = I (Newton's blind spot) is reported as
    a singular-Jacobian failure rather than silently accepted.
    """
    trace = SolveTrace(method="newton")
    x = np.asarray(x0, dtype=np.float64).copy()
    n = x.shape[0]
    s = np.ones(n) if cfg.scale is None else np.asarray(cfg.scale, dtype=np.float64)
    jac = jac if jac is not None else getattr(f, "jacobian", None)
    if jac is None:
        raise SolverError("newton requires a Jacobian (autograd or callable)")
    fx = _eval(f, x, trace)
    if fx is None:
        trace.record(x, x, np.inf)
        return trace
    trace.record(x, fx, _scaled_residual(fx - x, cfg.scale))
    guard = _guard_level(trace.residuals[0])
    eye = np.eye(n)
    for k in range(cfg.max_iterations):
        r = trace.residuals[-1]
        if not np.isfinite(r) or r > guard:
            trace.diverged = True
            trace.message = f"scaled residual {r:.3g} exceeded divergence guard"
            return trace
        jf = np.asarray(jac(trace.xs[-1]), dtype=np.float64)
        jf_scaled = jf * (s[None, :] / s[:, None]) - eye
        if not np.all(np.isfinite(jf_scaled)) or np.linalg.cond(jf_scaled) > 1e12:
            trace.failed = True
            trace.message = f"singular Jacobian at iteration {k}"
            return trace
        if r < cfg.tolerance:
            trace.converged = True
            return trace
        step_scaled = np.linalg.solve(jf_scaled, -(trace.fs[-1] - trace.xs[-1]) / s)
        x = trace.xs[-1] + cfg.newton_damping * (step_scaled * s)
        fx = _eval(f, x, trace)
        if fx is None:
            return trace
        trace.record(x, fx, _scaled_residual(fx - x, cfg.scale))
    _finish_step(trace, cfg, guard)
    return trace


def bfgs(f, x0, cfg: SolveConfig, jac=None) -> SolveTrace:
    """Full-memory BFGS on the objective phi = 0.5 ||f(x) - x||^2 computed in
    standard-deviation-scaled coordinates.

    Gradient from the response Jacobian: (J_s - I)^T (f(x) - x)/s with
    J_s the similarity-scaled Jacobian. Steps use a backtracking Armijo
    line search; updates violating the curvature condition skip the
    inverse-Hessian refresh. Convergence is judged on the same scaled
    fixed-point residual as the other methods.
    """
    trace = SolveTrace(method="bfgs")
    x = np.asarray(x0, dtype=np.float64).copy()
    n = x.shape[0]
    s = np.ones(n) if cfg.scale is None else np.asarray(cfg.scale, dtype=np.float64)
    jac = jac if jac is not None else getattr(f, "jacobian", None)
    if jac is None:
        raise SolverError("bfgs requires a Jacobian (autograd or callable)")
    fx = _eval(f, x, trace)
    if fx is None:
        trace.record(x, x, np.inf)
        return trace
    trace.record(x, fx, _scaled_residual(fx - x, cfg.scale))
    guard = _guard_level(trace.residuals[0])
    eye = np.eye(n)

    # internal iteration runs on y = x / s with response g(y) = f(y * s) / s
    def grad_phi(xk, fxk):
        jf_scaled = np.asarray(jac(xk)) * (s[None, :] / s[:, None]) - eye
        return jf_scaled.T @ ((fxk - xk) / s)

    def phi_of(fxk, xk):
        d = (fxk - xk) / s
        return 0.5 * float(np.dot(d, d))

    h_inv = np.eye(n)
    g = grad_phi(x, fx)
    phi = phi_of(fx, x)
    for k in range(cfg.max_iterations):
        if _finish_step(trace, cfg, guard):
            return trace
        if not np.all(np.isfinite(g)):
            trace.failed = True
            trace.message = "non-finite objective gradient"
            return trace
        p = -h_inv @ g
        slope = float(np.dot(g, p))
        if slope >= 0:  # not a descent direction; restart from steepest descent
            h_inv = np.eye(n)
            p = -g
            slope = -float(np.dot(g, g))
        alpha = 1.0
        x_cur = trace.xs[-1]
        accepted = None
        for _ in range(cfg.bfgs_max_halvings + 1):
            x_try = x_cur + alpha * (p * s)
            fx_try = _eval(f, x_try, trace)
            if fx_try is None:
                return trace
            phi_try = phi_of(fx_try, x_try)
            if phi_try <= phi + cfg.bfgs_armijo_c1 * alpha * slope:
                accepted = (x_try, fx_try, phi_try)
                break
            alpha *= 0.5
        if accepted is None:
            trace.failed = True
            trace.message = f"line search failed after {cfg.bfgs_max_halvings} halvings"
            return trace
        x_new, fx_new, phi_new = accepted
        g_new = grad_phi(x_new, fx_new)
        sk = (x_new - x_cur) / s
        yv = g_new - g
        sy = float(np.dot(sk, yv))
        if sy > 1e-12 * float(np.linalg.norm(sk) * np.linalg.norm(yv) + 1e-300):
            rho = 1.0 / sy
            left = eye - rho * np.outer(sk, yv)
            h_inv = left @ h_inv @ left.T + rho * np.outer(sk, sk)
        trace.record(x_new, fx_new, _scaled_residual(fx_new - x_new, cfg.scale))
        g, phi = g_new, phi_new
    _finish_step(trace, cfg, guard)
    return trace


_DISPATCH = {
    "direct": direct_substitution,
    "wegstein": wegstein,
    "newton": newton,
    "bfgs": bfgs,
}


def solve(f, x0, cfg: SolveConfig, jac=None) -> SolveTrace:
    """Dispatch to the configured method."""
    method = _DISPATCH[cfg.method]
    if cfg.method in ("newton", "bfgs"):
        return method(f, x0, cfg, jac=jac)
    return method(f, x0, cfg)


def solve_cycles(graph: FlowsheetGraph, feeds: dict[str, np.ndarray],
                 extras: dict[str, np.ndarray], cfg: SolveConfig,
                 initial_guess: np.ndarray | None = None,
                 ) -> tuple[SweepState, SolveTrace]:
    """Build the response function, run the configured method, and leave all
    streams consistent with the final tear values via one last sweep.

    A failed trace still yields a state, computed from the best-residual
    iterate found.
    """
    response = ResponseFunction(graph, feeds, extras, scale=cfg.scale,
                                initial_guess=initial_guess)
    if initial_guess is None:
        raise SolverError("solve_cycles requires an initial tear guess")
    trace = solve(response, initial_guess, cfg)
    x_final = trace.best_x() if trace.failed else trace.final_x()
    state = response.final_state(x_final)
    return state, trace


def export_trace_csv(trace: SolveTrace, graph: FlowsheetGraph, path) -> Path:
    path = Path(path)
    trace.to_csv(path, graph.tear_variable_names())
    return path
