"""The convex-ridge regularizer R(x) = sum_i sum_k psi_i((W x)_i[k]).

``W`` is the composition of two zero-mean convolution banks (1 -> C1 -> C2
channels).  Each of the C2 output channels carries one learnable increasing
linear spline ``sigma_i = psi_i'``, so that ``grad R(x) = W^T sigma(W x)``.
Regularization strength and input scaling are stored as logarithms.
"""

import math
import struct
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from . import splines
from .errors import FormatError
from .signal_core import (DEFAULT_DTYPE, compose_banks, conv2d, conv2d_adjoint,
                     power_iteration_norm, zero_mean_project)
from .splines import SplineGrid

MAGIC = b"CRRNN001"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<8sIId4I")


@dataclass
class LipschitzEstimate:
    bound: object  # float, or a 0-dim tensor when built differentiably
    eigvec: torch.Tensor
    naive_bound: float

    def __float__(self):
        return float(self.bound)


class CrrModel(nn.Module):
    """Parameters and evaluation of a convex-ridge regularizer network.

    Parameters
    ----------
    channels : tuple of 3 ints
        ``(1, C1, C2)``; the image has one channel.
    kernel_size : int
        Odd size shared by both banks; the composed filters are
        ``2 * kernel_size - 1`` wide.
    grid : SplineGrid
    lmbda, mu : float
        Initial regularization strength and scaling.
    init : {"random", "zeros"}
        Random kernels are zero-mean Gaussian draws rescaled so that
        ``||W|| = 1`` on a ``norm_shape`` image.  Spline coefficients always
        start at zero.
    """

    def __init__(self, channels=(1, 4, 8), kernel_size=5, grid=None, lmbda=1.0,
                 mu=1.0, init="random", seed=0, dtype=DEFAULT_DTYPE, norm_shape=(40, 40)):
        super().__init__()
        if len(channels) != 3:
            raise ValueError("channels must be (in, mid, out)")
        if kernel_size % 2 != 1:
            raise ValueError("kernel_size must be odd")
        self.grid = grid or SplineGrid()
        c0, c1, c2 = channels
        gen = torch.Generator().manual_seed(seed)
        if init == "random":
            b1 = zero_mean_project(torch.randn(c1, c0, kernel_size, kernel_size,
                                               generator=gen, dtype=dtype))
            b2 = zero_mean_project(torch.randn(c2, c1, kernel_size, kernel_size,
                                               generator=gen, dtype=dtype))
        elif init == "zeros":
            b1 = torch.zeros(c1, c0, kernel_size, kernel_size, dtype=dtype)
            b2 = torch.zeros(c2, c1, kernel_size, kernel_size, dtype=dtype)
        else:
            raise ValueError(f"unknown init {init!r}")
        self.bank1 = nn.Parameter(b1)
        self.bank2 = nn.Parameter(b2)
        self.coeffs = nn.Parameter(torch.zeros(c2, self.grid.size, dtype=dtype))
        self.log_lambda = nn.Parameter(torch.tensor(math.log(lmbda), dtype=dtype))
        self.log_mu = nn.Parameter(torch.tensor(math.log(mu), dtype=dtype))
        self._warm = {}
        if init == "random":
            with torch.no_grad():
                norm = self.operator_norm(norm_shape)
                if norm > 0:
                    self.bank2.div_(norm)
            self._warm.clear()

    # structure -------------------------------------------------------------

    @property
    def channels(self):
        return (self.bank1.shape[1], self.bank1.shape[0], self.bank2.shape[0])

    @property
    def kernel_size(self):
        return self.bank1.shape[-1]

    @property
    def num_channels(self):
        return self.bank2.shape[0]

    @property
    def lmbda(self):
        return self.log_lambda.exp()

    @property
    def mu(self):
        return self.log_mu.exp()

    def parameter_groups(self):
        return {
            "lambda_mu": [self.log_lambda, self.log_mu],
            "kernels": [self.bank1, self.bank2],
            "splines": [self.coeffs],
        }

    # linear part -----------------------------------------------------------

    def composed_bank(self):
        return compose_banks(self.bank1, self.bank2)

    def W(self, x, bank=None):
        return conv2d(x, self.composed_bank() if bank is None else bank)

    def Wt(self, z, bank=None):
        return conv2d_adjoint(z, self.composed_bank() if bank is None else bank)

    # nonlinear part ---------------------------------------------------------

    def activations(self):
        """Projected (monotone, centred) knot values, shape (C2, M + 1)."""
        return splines.project_increasing(self.coeffs)

    def max_slopes(self):
        return splines.max_slope(self.activations(), self.grid.delta)

    def grad(self, x):
        """grad R(x) for a batch shaped (N, 1, H, W)."""
        bank = self.composed_bank()
        z = conv2d(x, bank)
        return conv2d_adjoint(splines.spline_eval(self.activations(), z, self.grid.delta), bank)

    def cost(self, x):
        """R(x) for each image of the batch, shape (N,)."""
        z = self.W(x)
        psi = splines.potential_eval(self.activations(), z, self.grid.delta)
        return psi.sum(dim=(1, 2, 3))

    def tv2(self):
        return splines.tv2_penalty(self.activations()).sum()

    # Lipschitz bound ---------------------------------------------------------

    def operator_norm(self, shape, tol=1e-6, max_iter=500):
        """Spectral norm of W on an image of the given (H, W)."""
        bank = self.composed_bank().detach()
        key = ("W", tuple(shape))
        norm, vec = power_iteration_norm(
            lambda v: conv2d(v, bank), lambda z: conv2d_adjoint(z, bank),
            (1, 1) + tuple(shape), warm_start=self._warm.get(key), tol=tol,
            max_iter=max_iter, dtype=bank.dtype)
        self._warm[key] = vec
        return norm

    def lipschitz_bound(self, shape=(40, 40), differentiable=False, tol=1e-4, max_iter=100):
        """Upper bound ||W^T S W|| on Lip(grad R), S the diagonal of max slopes.

        The top eigenvector ``u`` is found by warm-started power iteration
        outside gradient tracking.  With ``differentiable`` set, the bound is
        returned as the tensor ``||W^T S W u||`` so that it takes part in
        reverse-mode differentiation with ``u`` held constant.
        """
        shape = tuple(shape)
        bank = self.composed_bank()
        slopes = self.max_slopes()
        with torch.no_grad():
            b = bank.detach()
            root = slopes.detach().clamp(min=0).sqrt().view(1, -1, 1, 1)
            norm, u = power_iteration_norm(
                lambda v: root * conv2d(v, b), lambda z: conv2d_adjoint(root * z, b),
                (1, 1) + shape, warm_start=self._warm.get(shape), tol=tol,
                max_iter=max_iter, dtype=b.dtype)
            self._warm[shape] = u
            w_norm = self.operator_norm(shape, tol=min(tol, 1e-6), max_iter=max(max_iter, 500))
            naive = float(slopes.detach().max().clamp(min=0)) * w_norm ** 2
        s = slopes.view(1, -1, 1, 1)
        if differentiable:
            bound = torch.linalg.vector_norm(conv2d_adjoint(s * conv2d(u, bank), bank))
        else:
            with torch.no_grad():
                bound = float(torch.linalg.vector_norm(
                    conv2d_adjoint(s.detach() * conv2d(u, bank.detach()), bank.detach())))
        return LipschitzEstimate(bound, u, naive)

    # maintenance -------------------------------------------------------------

    def project_kernels(self):
        """Enforce zero-mean kernels in place."""
        with torch.no_grad():
            self.bank1.copy_(zero_mean_project(self.bank1))
            self.bank2.copy_(zero_mean_project(self.bank2))

    def prune(self, threshold=1e-4):
        """Copy of the model without channels whose activation stays within +-threshold."""
        if threshold < 0:
            raise ValueError("threshold must be non-negative")
        with torch.no_grad():
            keep = self.activations().abs().amax(dim=-1) > threshold
        c0, c1, _ = self.channels
        pruned = CrrModel((c0, c1, int(keep.sum())), self.kernel_size, self.grid,
                          init="zeros", dtype=self.bank1.dtype)
        with torch.no_grad():
            pruned.bank1.copy_(self.bank1)
            pruned.bank2.copy_(self.bank2[keep])
            pruned.coeffs.copy_(self.coeffs[keep])
            pruned.log_lambda.copy_(self.log_lambda)
            pruned.log_mu.copy_(self.log_mu)
        return pruned

    def copy(self):
        return deserialize(serialize(self))

    def extra_repr(self):
        return (f"channels={self.channels}, kernel_size={self.kernel_size}, "
                f"M={self.grid.M}, delta={self.grid.delta}")


def serialize(model):
    """Encode a model in the little-endian ``CRRNN001`` layout."""
    c0, c1, c2 = model.channels
    header = _HEADER.pack(MAGIC, FORMAT_VERSION, model.grid.M, model.grid.delta,
                          c0, c1, c2, model.kernel_size)
    arrays = [model.bank1, model.bank2, model.coeffs, model.log_lambda, model.log_mu]
    body = b"".join(a.detach().to(torch.float64).cpu().numpy().astype("<f8").tobytes()
                    for a in arrays)
    return header + body


def deserialize(data):
    if len(data) < _HEADER.size:
        raise FormatError("truncated model header")
    magic, version, M, delta, c0, c1, c2, k = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported model format version {version}")
    sizes = [c1 * c0 * k * k, c2 * c1 * k * k, c2 * (M + 1), 1, 1]
    expected = _HEADER.size + 8 * sum(sizes)
    if len(data) != expected:
        raise FormatError(f"model payload is {len(data)} bytes, expected {expected}")
    flat = np.frombuffer(data, dtype="<f8", offset=_HEADER.size)
    parts, pos = [], 0
    for n in sizes:
        parts.append(torch.from_numpy(flat[pos:pos + n].astype(np.float64)))
        pos += n
    model = CrrModel((c0, c1, c2), k, SplineGrid(M, delta), init="zeros")
    with torch.no_grad():
        model.bank1.copy_(parts[0].view_as(model.bank1))
        model.bank2.copy_(parts[1].view_as(model.bank2))
        model.coeffs.copy_(parts[2].view_as(model.coeffs))
        model.log_lambda.copy_(parts[3][0])
        model.log_mu.copy_(parts[4][0])
    return model


def save(model, path):
    with open(path, "wb") as fh:
        fh.write(serialize(model))


def load(path):
    with open(path, "rb") as fh:
        return deserialize(fh.read())
