"""Forward operators: identity, masked Fourier sampling (MRI), parallel-beam Radon (CT).

Operators act on real image batches shaped ``(..., H, W)``.  The adjoint is
taken with respect to the real inner products ``<x, z>`` on images and
``Re <y, u>`` on measurements, so that for the complex-valued Fourier
operator ``adjoint`` returns the real part of the zero-filled inverse.
"""

import warnings
from dataclasses import asdict, dataclass
from functools import cached_property

import numpy as np
import torch

from .signal_core import DEFAULT_DTYPE, power_iteration_norm

ACCELERATIONS = (2, 4, 8)


class LinearOperator:
    """Base class; subclasses define ``apply`` and ``adjoint``."""

    image_shape = None
    is_complex = False
    adjoint_tol = 1e-8  # relative discrepancy allowed in the dot-product test

    def apply(self, x):
        raise NotImplementedError

    def adjoint(self, y):
        raise NotImplementedError

    def restrict(self, y):
        """Zero the entries of a measurement-shaped array that are not acquired."""
        return y

    @cached_property
    def norm_sq(self):
        """||H||^2 by power iteration on H^T H (cached)."""
        norm, _ = power_iteration_norm(self.apply, self.adjoint, (1, 1) + tuple(self.image_shape),
                                       tol=1e-10, max_iter=2000)
        return norm ** 2

    def __call__(self, x):
        return self.apply(x)

    def dot_product_test(self, trials=20, rng=None):
        """Worst |<Hx, u> - <x, H^T u>| / max(|<Hx, u>|, ||Hx|| ||u||) over random draws."""
        rng = np.random.default_rng(rng)
        shape = (1, 1) + tuple(self.image_shape)
        worst = 0.0
        for _ in range(trials):
            x = torch.as_tensor(rng.standard_normal(shape), dtype=DEFAULT_DTYPE)
            hx = self.apply(x)
            u = torch.as_tensor(rng.standard_normal(hx.shape), dtype=DEFAULT_DTYPE)
            if self.is_complex:
                u = u + 1j * torch.as_tensor(rng.standard_normal(hx.shape), dtype=DEFAULT_DTYPE)
            lhs = float(torch.sum(hx.conj() * u).real) if hx.is_complex() else float(torch.sum(hx * u))
            rhs = float(torch.sum(x * self.adjoint(u)))
            scale = max(abs(lhs), float(torch.linalg.vector_norm(hx) * torch.linalg.vector_norm(u)))
            worst = max(worst, abs(lhs - rhs) / scale if scale > 0 else abs(lhs - rhs))
        return worst


class IdentityOperator(LinearOperator):
    adjoint_tol = 1e-14
    def __init__(self, image_shape, scale=1.0):
        self.image_shape = tuple(image_shape)[-2:]
        self.scale = float(scale)

    def apply(self, x):
        return self.scale * x

    def adjoint(self, y):
        return self.scale * y

    @property
    def norm_sq(self):
        return self.scale ** 2


class MatrixOperator(LinearOperator):
    """Dense matrix acting on flattened images; mainly for tests."""

    adjoint_tol = 1e-10

    def __init__(self, matrix, image_shape):
        self.matrix = torch.as_tensor(matrix, dtype=DEFAULT_DTYPE)
        self.image_shape = tuple(image_shape)
        if self.matrix.shape[1] != int(np.prod(self.image_shape)):
            raise ValueError("matrix columns must match the number of pixels")

    def apply(self, x):
        return x.reshape(*x.shape[:-2], -1) @ self.matrix.T

    def adjoint(self, y):
        return (y @ self.matrix).reshape(*y.shape[:-1], *self.image_shape)


# --- MRI ---------------------------------------------------------------------

@dataclass
class CartesianMask:
    """Column-sampling pattern in centred k-space."""

    kept: np.ndarray
    acceleration: int
    center_fraction: float

    @property
    def width(self):
        return self.kept.size

    @property
    def num_center(self):
        return int(np.floor(self.center_fraction * self.width))

    def to_dict(self):
        return {"acceleration": self.acceleration, "center_fraction": self.center_fraction,
                "kept": [int(i) for i in np.flatnonzero(self.kept)], "width": self.width}

    @classmethod
    def from_dict(cls, d):
        kept = np.zeros(d["width"], dtype=bool)
        kept[d["kept"]] = True
        return cls(kept, int(d["acceleration"]), float(d["center_fraction"]))


def center_fraction_for(acc):
    return 0.32 / acc


def make_mri_mask(width, acc, rng=None):
    """Random Cartesian mask: a fully sampled centre block plus random columns.

    The centre holds ``floor(0.32 / acc * width)`` columns; every other column
    is kept independently with the probability that makes the expected kept
    fraction (centre included) equal to ``1 / acc``.
    """
    if acc not in ACCELERATIONS:
        raise ValueError(f"acceleration must be one of {ACCELERATIONS}, got {acc}")
    rng = np.random.default_rng(rng)
    cf = center_fraction_for(acc)
    n_center = int(np.floor(cf * width))
    prob = (width / acc - n_center) / (width - n_center)
    kept = rng.uniform(size=width) < prob
    start = (width - n_center + 1) // 2
    kept[start:start + n_center] = True
    return CartesianMask(kept, acc, cf)


class MaskedFourierOperator(LinearOperator):
    """Single-coil MRI: column mask applied to the centred unitary 2D DFT."""

    is_complex = True
    adjoint_tol = 1e-8

    def __init__(self, mask, image_shape):
        self.image_shape = tuple(image_shape)
        if mask.width != self.image_shape[-1]:
            raise ValueError(f"mask width {mask.width} != image width {self.image_shape[-1]}")
        self.mask = mask
        self._m = torch.as_tensor(mask.kept)

    def restrict(self, y):
        return y * self._m

    def apply(self, x):
        k = torch.fft.fftshift(torch.fft.fft2(x, norm="ortho"), dim=(-2, -1))
        return k * self._m

    def adjoint(self, y):
        k = torch.fft.ifftshift(y * self._m, dim=(-2, -1))
        return torch.fft.ifft2(k, norm="ortho").real

    @property
    def norm_sq(self):
        return 1.0 if self.mask.kept.any() else 0.0


def make_identity_op(shape):
    return IdentityOperator(shape)


def make_mri_op(mask, image_shape=None):
    """Masked Fourier operator; square images of the mask width by default."""
    if image_shape is None:
        image_shape = (mask.width, mask.width)
    return MaskedFourierOperator(mask, image_shape)


# --- CT ----------------------------------------------------------------------

@dataclass
class RadonGeometry:
    num_angles: int = 60
    num_detectors: int = 96
    detector_spacing: float = None

    def angles(self):
        return np.pi * np.arange(self.num_angles) / self.num_angles

    def spacing_for(self, image_shape):
        if self.detector_spacing is not None:
            return float(self.detector_spacing)
        diag = float(np.hypot(*image_shape))
        return max(1.0, diag / self.num_detectors)

    def to_dict(self):
        return asdict(self)


def _footprint_cdf(t, a, b):
    """Mass of the unit-area trapezoid (plateau half-width b, support half-width a) below t."""
    h = 1.0 / (a + b)
    u = np.minimum(np.abs(t), a)
    ramp = np.maximum(a - b, 1e-12)
    inner = h * np.minimum(u, b)
    outer = np.where(u > b, h * ((a - b) ** 2 - (a - u) ** 2) / (2 * ramp), 0.0)
    return 0.5 + np.sign(t) * (inner + outer)


class RadonOperator(LinearOperator):
    """Parallel-beam projector built from exact square-pixel footprints.

    Pixel centres sit at integer offsets from the image centre (x to the
    right, y upwards); angle 0 integrates along columns.  At angle theta a
    unit pixel projects onto the detector axis as a trapezoid of unit area;
    each bin receives the part of that trapezoid falling inside it, divided
    by the bin width, so the projection is the bin-averaged line integral of
    the pixel-constant image.  The adjoint is the transpose of the same
    sparse matrix.
    """

    adjoint_tol = 1e-6

    def __init__(self, geometry, image_shape):
        self.geometry = geometry
        self.image_shape = tuple(image_shape)
        self.spacing = geometry.spacing_for(self.image_shape)
        self._A, self._At = self._build()

    @property
    def sinogram_shape(self):
        return (self.geometry.num_angles, self.geometry.num_detectors)

    def _build(self):
        h, w = self.image_shape
        nd = self.geometry.num_detectors
        ds = self.spacing
        rows_i, cols_i = np.mgrid[0:h, 0:w]
        xc = (cols_i - (w - 1) / 2).ravel()
        yc = ((h - 1) / 2 - rows_i).ravel()
        pix = np.arange(h * w)
        r, c, v = [], [], []
        for k, theta in enumerate(self.geometry.angles()):
            ct, st = abs(np.cos(theta)), abs(np.sin(theta))
            a, b = (ct + st) / 2, abs(ct - st) / 2
            s = xc * np.cos(theta) + yc * np.sin(theta)
            centre = s / ds + (nd - 1) / 2
            first = np.floor((s - a) / ds + (nd - 1) / 2 + 0.5).astype(np.int64)
            last = np.floor((s + a) / ds + (nd - 1) / 2 + 0.5).astype(np.int64)
            for off in range(int((last - first).max()) + 1):
                idx = first + off
                lo = (idx - 0.5 - centre) * ds
                wgt = _footprint_cdf(lo + ds, a, b) - _footprint_cdf(lo, a, b)
                ok = (idx <= last) & (idx >= 0) & (idx < nd) & (wgt > 1e-15)
                r.append(k * nd + idx[ok])
                c.append(pix[ok])
                v.append(wgt[ok] / ds)
        r, c, v = np.concatenate(r), np.concatenate(c), np.concatenate(v)
        shape = (self.geometry.num_angles * nd, h * w)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", UserWarning)  # beta-status notice for CSR
            A = torch.sparse_coo_tensor(np.stack([r, c]), v, shape, dtype=DEFAULT_DTYPE,
                                        check_invariants=False)
            At = torch.sparse_coo_tensor(np.stack([c, r]), v, shape[::-1], dtype=DEFAULT_DTYPE,
                                         check_invariants=False)
            return A.coalesce().to_sparse_csr(), At.coalesce().to_sparse_csr()

    def matrix(self):
        return self._A.to_dense()

    def apply(self, x):
        lead = x.shape[:-2]
        flat = x.reshape(-1, x.shape[-2] * x.shape[-1]).T
        return (self._A @ flat).T.reshape(*lead, *self.sinogram_shape)

    def adjoint(self, y):
        lead = y.shape[:-2]
        flat = y.reshape(-1, y.shape[-2] * y.shape[-1]).T
        return (self._At @ flat).T.reshape(*lead, *self.image_shape)


def make_ct_op(geometry, image_shape):
    if len(image_shape) != 2:
        raise ValueError("image_shape must be (H, W)")
    return RadonOperator(geometry, image_shape)


def simulate(x, op, noise_sigma, rng=None):
    """Measurements ``H x + sigma * eps`` with independent real/imaginary noise."""
    if noise_sigma < 0:
        raise ValueError("noise_sigma must be non-negative")
    rng = np.random.default_rng(rng)
    clean = op.apply(x)
    if noise_sigma == 0:
        return clean
    noise = torch.as_tensor(rng.standard_normal(clean.shape), dtype=DEFAULT_DTYPE)
    if clean.is_complex():
        imag = torch.as_tensor(rng.standard_normal(clean.shape), dtype=DEFAULT_DTYPE)
        noise = torch.complex(noise, imag)
    return op.restrict(clean + noise_sigma * noise)
