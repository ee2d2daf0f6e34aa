"""First-order solvers for min_x 1/2 ||Hx - y||^2 + lambda/mu R(mu x).

All solvers share the same stopping rule: the relative change of consecutive
iterates drops below ``tol``.  When ``grad_tol`` is set, the solver also
requires the (projected) gradient norm to be below ``grad_tol * ||H^T y||``
before declaring convergence.
"""

import csv
import math
from dataclasses import dataclass, field

import numpy as np
import torch

from .errors import NumericalError
from .operators import simulate
from .signal_core import DEFAULT_DTYPE


@dataclass
class SolveConfig:
    lmbda: float
    mu: float
    tol: float = 1e-5
    max_iter: int = 2000
    positivity: bool = False
    diagnostics: bool = False
    grad_tol: float = None
    lipschitz: float = None  # bound on Lip(grad R); estimated when None

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if self.lmbda < 0 or not self.mu > 0:
            raise ValueError("lambda must be >= 0 and mu > 0")


@dataclass
class SolveResult:
    x: torch.Tensor
    converged: bool
    iterations: int
    grad_norm: float
    objective: float
    trace: list = field(default_factory=list)

    def __iter__(self):
        # allows ``x, trace = fista_solve(...)``
        yield self.x
        yield self.trace


TRACE_FIELDS = ("iter", "objective", "grad_norm", "relative_change")


def _norm(t):
    return float(torch.linalg.vector_norm(t))


def objective(y, op, model, cfg, x):
    """1/2 ||Hx - y||^2 + lambda/mu R(mu x), summed over the batch."""
    with torch.no_grad():
        fit = 0.5 * float(torch.sum(torch.abs(op.apply(x) - y) ** 2))
        if cfg.lmbda == 0:
            return fit
        return fit + cfg.lmbda / cfg.mu * float(model.cost(cfg.mu * x).sum())


def gradient(y, op, model, cfg, x):
    with torch.no_grad():
        g = op.adjoint(op.apply(x) - y)
        if cfg.lmbda != 0:
            g = g + cfg.lmbda * model.grad(cfg.mu * x)
        return g


def smoothness_constant(op, model, cfg, shape):
    """mu * lambda * Lip(grad R) + ||H||^2, the Lipschitz constant of the data-fit-plus-prior gradient."""
    if cfg.lmbda == 0:
        L = 0.0
    elif cfg.lipschitz is not None:
        L = float(cfg.lipschitz)
    else:
        with torch.no_grad():
            L = float(model.lipschitz_bound(shape, tol=1e-7, max_iter=3000).bound)
    return cfg.mu * cfg.lmbda * L + op.norm_sq


def _as4d(y, op):
    x0 = op.adjoint(y)
    if x0.dim() == 2:
        raise ValueError("images must carry batch and channel axes (N, 1, H, W)")
    return x0


def _grad_measure(x, g, alpha, positivity):
    if positivity:
        return _norm(x - (x - alpha * g).clamp(min=0)) / alpha
    return _norm(g)


class _Monitor:
    """Shared bookkeeping: trace rows and the stopping decision."""

    def __init__(self, y, op, model, cfg, alpha):
        self.y, self.op, self.model, self.cfg, self.alpha = y, op, model, cfg, alpha
        self.trace = []
        self.scale = _norm(op.adjoint(y)) or 1.0
        self.last_grad = math.nan

    def grad_norm(self, x):
        g = gradient(self.y, self.op, self.model, self.cfg, x)
        self.last_grad = _grad_measure(x, g, self.alpha, self.cfg.positivity)
        return self.last_grad

    def step(self, k, x_new, x_old):
        denom = _norm(x_old)
        rel = _norm(x_new - x_old) / denom if denom > 0 else _norm(x_new - x_old)
        if not math.isfinite(rel):
            raise NumericalError(f"non-finite iterate at iteration {k}")
        if self.cfg.diagnostics:
            self.trace.append({"iter": k, "objective": objective(self.y, self.op, self.model,
                                                                  self.cfg, x_new),
                               "grad_norm": self.grad_norm(x_new), "relative_change": rel})
        if rel >= self.cfg.tol:
            return False
        if self.cfg.grad_tol is None:
            return True
        gn = self.last_grad if self.cfg.diagnostics else self.grad_norm(x_new)
        return gn <= self.cfg.grad_tol * self.scale

    def result(self, x, converged, k):
        gn = self.grad_norm(x)
        return SolveResult(x, converged, k, gn,
                           objective(self.y, self.op, self.model, self.cfg, x), self.trace)


def fista_solve(y, op, model, cfg, x0=None):
    """Accelerated projected gradient with momentum (t_0 = 1).

    Stepsize ``1 / (mu * lambda * L + ||H||^2)``.  The positivity projection
    is applied when ``cfg.positivity`` is set.  The last iterate is returned,
    with ``converged`` false when ``max_iter`` is hit first.
    """
    x = torch.zeros_like(_as4d(y, op)) if x0 is None else x0.clone()
    alpha = 1.0 / smoothness_constant(op, model, cfg, x.shape[-2:])
    mon = _Monitor(y, op, model, cfg, alpha)
    z, t = x.clone(), 1.0
    with torch.no_grad():
        for k in range(1, cfg.max_iter + 1):
            x_new = z - alpha * gradient(y, op, model, cfg, z)
            if cfg.positivity:
                x_new = x_new.clamp(min=0)
            t_new = (1 + math.sqrt(4 * t * t + 1)) / 2
            z = x_new + ((t - 1) / t_new) * (x_new - x)
            done = mon.step(k, x_new, x)
            x, t = x_new, t_new
            if done:
                return mon.result(x, True, k)
    return mon.result(x, False, cfg.max_iter)


def gd_solve(y, op, model, cfg, x0=None, alpha=None):
    """Plain (projected) gradient descent with stepsize ``1 / (mu lambda L + ||H||^2)``."""
    x = torch.zeros_like(_as4d(y, op)) if x0 is None else x0.clone()
    if alpha is None:
        alpha = 1.0 / smoothness_constant(op, model, cfg, x.shape[-2:])
    mon = _Monitor(y, op, model, cfg, alpha)
    with torch.no_grad():
        for k in range(1, cfg.max_iter + 1):
            x_new = x - alpha * gradient(y, op, model, cfg, x)
            if cfg.positivity:
                x_new = x_new.clamp(min=0)
            done = mon.step(k, x_new, x)
            x = x_new
            if done:
                return mon.result(x, True, k)
    return mon.result(x, False, cfg.max_iter)


def adaptive_gd_solve(y, op, model, cfg, x0=None):
    """Gradient descent with the Malitsky-Mishchenko adaptive stepsize.

    ``a_k = min(sqrt(1 + theta_{k-1}) a_{k-1}, ||x_k - x_{k-1}|| / (2 ||g_k - g_{k-1}||))``
    with ``theta_k = a_k / a_{k-1}``.  The first step uses the global
    smoothness constant.  Only the unconstrained problem is supported.
    """
    if cfg.positivity:
        raise ValueError("adaptive_gd_solve does not support the positivity constraint")
    x_prev = torch.zeros_like(_as4d(y, op)) if x0 is None else x0.clone()
    a_prev = 1.0 / smoothness_constant(op, model, cfg, x_prev.shape[-2:])
    theta = math.inf
    mon = _Monitor(y, op, model, cfg, a_prev)
    with torch.no_grad():
        g_prev = gradient(y, op, model, cfg, x_prev)
        x = x_prev - a_prev * g_prev
        if mon.step(1, x, x_prev):
            return mon.result(x, True, 1)
        for k in range(2, cfg.max_iter + 1):
            g = gradient(y, op, model, cfg, x)
            dg = _norm(g - g_prev)
            local = _norm(x - x_prev) / (2 * dg) if dg > 0 else math.inf
            a = min(math.sqrt(1 + theta) * a_prev, local)
            if not math.isfinite(a):
                a = a_prev
            x_new = x - a * g
            theta, a_prev = a / a_prev, a
            x_prev, g_prev = x, g
            done = mon.step(k, x_new, x)
            x = x_new
            if done:
                return mon.result(x, True, k)
    return mon.result(x, False, cfg.max_iter)


SOLVERS = {"fista": fista_solve, "gd": gd_solve, "adaptive_gd": adaptive_gd_solve}


def stability_check(op, model, cfg, trials=10, rng=None, x_source=None, noise_sigma=1e-2,
                    solver=fista_solve):
    """Largest ||H x1 - H x2|| - ||y1 - y2|| over random measurement pairs.

    Each pair is built from one image (``x_source(rng)`` or uniform noise)
    measured twice with independent noise.
    """
    rng = np.random.default_rng(rng)
    shape = (1, 1) + tuple(op.image_shape)
    worst = -math.inf
    for _ in range(trials):
        if x_source is None:
            x = torch.as_tensor(rng.uniform(0, 1, shape), dtype=DEFAULT_DTYPE)
        else:
            x = x_source(rng)
        ys = [simulate(x, op, noise_sigma, rng) for _ in range(2)]
        sol = [solver(yq, op, model, cfg).x for yq in ys]
        gap = _norm(op.apply(sol[0]) - op.apply(sol[1])) - _norm(ys[0] - ys[1])
        worst = max(worst, gap)
    return worst


def write_trace(path, trace):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=TRACE_FIELDS)
        w.writeheader()
        for row in trace:
            w.writerow({k: row[k] for k in TRACE_FIELDS})
