"""Dense image containers and convolution machinery.

Images travel as ``torch`` tensors shaped ``(N, C, H, W)``; a kernel bank is
a tensor shaped ``(out_channels, in_channels, k, k)`` with odd ``k``.  All
convolutions are cross-correlations (the deep-learning convention) with zero
padding chosen so that the spatial size is preserved.
"""

import torch
import torch.nn.functional as F

from .errors import NumericalError

DEFAULT_DTYPE = torch.float64


def _check_stack(x, name="input"):
    if x.ndim != 4:
        raise ValueError(f"{name} must be shaped (N, C, H, W), got {tuple(x.shape)}")


def _check_bank(bank):
    if bank.ndim != 4 or bank.shape[-1] != bank.shape[-2]:
        raise ValueError(f"kernel bank must be (out, in, k, k), got {tuple(bank.shape)}")
    if bank.shape[-1] % 2 != 1:
        raise ValueError(f"kernel size must be odd, got {bank.shape[-1]}")


def conv2d(x, bank):
    """Apply a kernel bank with zero padding; output keeps the input's H and W."""
    _check_stack(x)
    _check_bank(bank)
    if x.shape[1] != bank.shape[1]:
        raise ValueError(
            f"input has {x.shape[1]} channels but bank expects {bank.shape[1]}")
    return F.conv2d(x, bank, padding=bank.shape[-1] // 2)


def conv2d_adjoint(u, bank):
    """Exact adjoint of :func:`conv2d` for the same bank."""
    _check_stack(u)
    _check_bank(bank)
    if u.shape[1] != bank.shape[0]:
        raise ValueError(
            f"input has {u.shape[1]} channels but bank produces {bank.shape[0]}")
    return F.conv_transpose2d(u, bank, padding=bank.shape[-1] // 2)


def conv2d_valid(x, bank):
    """Correlation without padding (output shrinks by ``k - 1``)."""
    return F.conv2d(x, bank)


def conv2d_valid_adjoint(u, bank):
    return F.conv_transpose2d(u, bank)


def compose_banks(first, second):
    """Single bank whose action equals ``first`` followed by ``second``.

    The composed kernel is the full 2D convolution of the two kernels summed
    over the intermediate channels, so its size is ``k1 + k2 - 1``.  The
    identity is exact for unpadded (valid) correlations, hence also for the
    padded chain ``pad(x, (k1 + k2 - 2) / 2)`` -> valid -> valid.  Chaining two
    individually zero-padded convolutions differs from it near the border.
    Differentiable in both banks.
    """
    _check_bank(first)
    _check_bank(second)
    if second.shape[1] != first.shape[0]:
        raise ValueError(
            f"second bank expects {second.shape[1]} inputs, first yields {first.shape[0]}")
    k2 = second.shape[-1]
    # treat the in-channels of `first` as a batch of C1-channel images
    stacked = first.transpose(0, 1)
    out = F.conv2d(stacked, second.flip(-1, -2), padding=k2 - 1)
    return out.transpose(0, 1).contiguous()


def zero_mean_project(bank):
    """Subtract the per-slice mean so every 2D kernel sums to zero."""
    return bank - bank.mean(dim=(-2, -1), keepdim=True)


def power_iteration_norm(apply, adjoint, shape, warm_start=None, tol=1e-4,
                         max_iter=100, seed=0, dtype=DEFAULT_DTYPE):
    """Largest singular value of a linear operator given as an apply/adjoint pair.

    Iterates ``v <- A^T A v / ||A^T A v||`` and reports ``||A v||`` for the
    final unit vector ``v``; the estimate therefore never exceeds the true
    norm.  Stops once the relative change of the estimate drops below ``tol``.

    Parameters
    ----------
    apply, adjoint : callable
        ``A`` and ``A^T``.  ``adjoint(apply(v))`` must have the shape of ``v``.
    shape : tuple
        Shape of the domain vectors.
    warm_start : tensor, optional
        Initial vector; a fixed-seed Gaussian draw is used otherwise.

    Returns
    -------
    norm : float
    vec : tensor of unit Euclidean norm
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    with torch.no_grad():
        if warm_start is not None and warm_start.shape == torch.Size(shape):
            v = warm_start.detach().clone().to(dtype)
        else:
            gen = torch.Generator().manual_seed(seed)
            v = torch.randn(shape, generator=gen, dtype=dtype)
        nv = torch.linalg.vector_norm(v)
        if nv == 0:
            v = torch.ones(shape, dtype=dtype)
            nv = torch.linalg.vector_norm(v)
        v = v / nv
        est = 0.0
        for _ in range(max_iter):
            w = adjoint(apply(v))
            nw = torch.linalg.vector_norm(w)
            if not torch.isfinite(nw):
                raise NumericalError("power iteration produced non-finite values")
            if nw == 0:
                return 0.0, v
            v = w / nw
            new = float(torch.linalg.vector_norm(apply(v)))
            if abs(new - est) <= tol * new:
                est = new
                break
            est = new
    return est, v
