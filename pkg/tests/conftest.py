import numpy as np
import pytest
import torch

from crrnn.model import CrrModel
from crrnn.splines import SplineGrid

torch.set_num_threads(1)

_acceptance_lines = []


def record_acceptance(number, title, passed, detail):
    """Collect one verdict line for the end-of-session summary."""
    line = f"[{'PASS' if passed else 'FAIL'}] criterion {number:>2}: {title} | {detail}"
    _acceptance_lines.append((number, line))
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if not _acceptance_lines:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(_acceptance_lines):
        terminalreporter.write_line(line)


def random_model(channels=(1, 4, 8), kernel_size=5, M=20, delta=0.01, seed=0, coeff_scale=1.0,
                 lmbda=1.0, mu=1.0):
    """Random kernels and random (possibly non-monotone) raw spline coefficients."""
    m = CrrModel(channels, kernel_size, SplineGrid(M, delta), lmbda=lmbda, mu=mu, seed=seed)
    g = torch.Generator().manual_seed(seed + 1)
    with torch.no_grad():
        raw = torch.randn(m.coeffs.shape, generator=g, dtype=m.coeffs.dtype)
        m.coeffs.copy_(coeff_scale * delta * raw.cumsum(-1))
    return m


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_model():
    return random_model(seed=3)


def rand_image(shape, seed=0, low=0.0, high=1.0):
    g = torch.Generator().manual_seed(seed)
    return low + (high - low) * torch.rand(shape, generator=g, dtype=torch.float64)


def finite_difference_check(model, clean, noisy, t, eta=1e-2, eps=1e-5):
    """Worst per-group relative error of training-loss gradients vs central differences.

    The power iteration is run to convergence so that the frozen eigenvector
    used by the analytic gradient is the true maximiser.
    """
    from crrnn.training import group_gradients, training_loss

    def loss():
        return training_loss(clean, noisy, model, t, eta, lipschitz_tol=1e-13,
                             lipschitz_iters=5000).loss

    groups = {"bank1": [model.bank1], "bank2": [model.bank2], "coeffs": [model.coeffs],
              "log_lambda": [model.log_lambda], "log_mu": [model.log_mu]}
    analytic = {k: v[0] for k, v in group_gradients(loss(), groups).items()}
    errors = {}
    for name, (p,) in groups.items():
        fd = torch.zeros_like(p)
        flat = p.data.view(-1)
        for i in range(flat.numel()):
            orig = float(flat[i])
            with torch.no_grad():
                flat[i] = orig + eps
                up = float(loss())
                flat[i] = orig - eps
                down = float(loss())
                flat[i] = orig
            fd.view(-1)[i] = (up - down) / (2 * eps)
        scale = float(analytic[name].abs().max())
        errors[name] = float((fd - analytic[name]).abs().max()) / max(scale, 1e-12)
    return errors


def tiny_model(seed=0, delta=0.1):
    """1 -> 2 -> 2 channels, 3x3 kernels, M = 4, random spline coefficients."""
    return random_model((1, 2, 2), 3, M=4, delta=delta, seed=seed, coeff_scale=2.0,
                        lmbda=2.0, mu=1.5)
