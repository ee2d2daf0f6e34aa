"""Gradient-step, t-step and proximal denoisers built on a CrrModel."""

import numpy as np
import torch

from .errors import ConvergenceError
from .operators import IdentityOperator
from .solvers import SolveConfig, fista_solve

STEP_SAFETY = 0.95


def _scalar(v):
    return float(v.detach()) if torch.is_tensor(v) else float(v)


def convergence_window(lmbda, mu, L):
    """Upper end of the stepsizes for which gradient descent converges."""
    return 2.0 / (1.0 + lmbda * mu * L)


def averaged_window(lmbda, mu, L):
    """Upper end of the stepsizes for which every t-step denoiser is averaged."""
    return 2.0 / (2.0 + lmbda * mu * L)


def training_stepsize(lmbda, mu, L, safety=STEP_SAFETY):
    # works on tensors too, so the stepsize stays differentiable during training
    return 2.0 * safety / (2.0 + lmbda * mu * L)


def gradient_step(x, y, model, alpha, lmbda=None, mu=None, L=None, check=True):
    """One step x - alpha * ((x - y) + lambda * grad R(mu * x)).

    Raises ``ValueError`` when ``alpha`` lies outside the convergent window
    (``L`` is computed on the image shape if not supplied).
    """
    lmbda = model.lmbda if lmbda is None else lmbda
    mu = model.mu if mu is None else mu
    if check:
        if L is None:
            L = model.lipschitz_bound(x.shape[-2:], tol=1e-8, max_iter=1000).bound
        hi = convergence_window(_scalar(lmbda), _scalar(mu), _scalar(L))
        if not 0 < _scalar(alpha) < hi:
            raise ValueError(f"stepsize {_scalar(alpha):.4g} outside (0, {hi:.4g})")
    return x - alpha * ((x - y) + lmbda * model.grad(mu * x))


def t_step_denoise(y, model, t, alpha=None, L=None, differentiable=False, lipschitz_tol=1e-4):
    """Unrolled t-fold gradient step started at the noisy image.

    Without an explicit ``alpha`` the training stepsize
    ``2 * 0.95 / (2 + lambda * mu * L)`` is used, with ``L`` the model's
    Lipschitz bound on the image shape (differentiable when requested).
    """
    if t < 1:
        raise ValueError("t must be >= 1")
    lmbda, mu = model.lmbda, model.mu
    if alpha is None:
        if L is None:
            L = model.lipschitz_bound(y.shape[-2:], differentiable=differentiable,
                                      tol=lipschitz_tol).bound
        alpha = training_stepsize(lmbda, mu, L)
    x = y
    for _ in range(t):
        x = x - alpha * ((x - y) + lmbda * model.grad(mu * x))
    return x


def proximal_denoise(y, model, lmbda=None, mu=None, tol=1e-6, max_iter=5000, grad_tol=1e-4):
    """Minimizer of 1/2 ||x - y||^2 + lambda/mu R(mu x), solved with FISTA.

    Iterates until the relative change of consecutive iterates is below
    ``tol`` and the gradient of the objective is below ``grad_tol * ||y||``.
    Raises :class:`~crrnn.errors.ConvergenceError` otherwise.
    """
    lmbda = _scalar(model.lmbda) if lmbda is None else float(lmbda)
    mu = _scalar(model.mu) if mu is None else float(mu)
    cfg = SolveConfig(lmbda=lmbda, mu=mu, tol=tol, max_iter=max_iter,
                      positivity=False, grad_tol=grad_tol)
    res = fista_solve(y, IdentityOperator(tuple(y.shape)), model, cfg)
    if not res.converged:
        raise ConvergenceError(
            f"proximal denoiser stopped after {res.iterations} iterations "
            f"(gradient norm {res.grad_norm:.3e})", residual=res.grad_norm, x=res.x)
    return res.x


def empirical_averagedness_check(model, alpha, t=5, pairs=1000, rng=None,
                                 shape=(16, 16), batch=250):
    """Largest observed ||D(y1) - D(y2)|| / ||y1 - y2|| for the t-step denoiser D.

    ``y1`` is uniform on [0, 1]; ``y2`` adds Gaussian perturbations whose
    magnitudes are log-uniform in [1e-3, 1].
    """
    rng = np.random.default_rng(rng)
    worst = 0.0
    dtype = model.bank1.dtype
    with torch.no_grad():
        done = 0
        while done < pairs:
            n = min(batch, pairs - done)
            y1 = torch.as_tensor(rng.uniform(0, 1, (n, 1) + tuple(shape)), dtype=dtype)
            scale = 10 ** rng.uniform(-3, 0, (n, 1, 1, 1))
            y2 = y1 + torch.as_tensor(scale * rng.standard_normal(y1.shape), dtype=dtype)
            d1 = t_step_denoise(y1, model, t, alpha=alpha)
            d2 = t_step_denoise(y2, model, t, alpha=alpha)
            num = torch.linalg.vector_norm((d1 - d2).flatten(1), dim=1)
            den = torch.linalg.vector_norm((y1 - y2).flatten(1), dim=1)
            worst = max(worst, float((num / den).max()))
            done += n
    return worst
