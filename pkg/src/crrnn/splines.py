"""Increasing linear-spline activations and their convex quadratic potentials.

A spline lives on ``M + 1`` uniform knots ``nu_m = (m - M/2) * delta`` and is
extended by constants outside ``[nu_0, nu_M]``.  The batched functions below
take a ``(C, M + 1)`` tensor of knot values (one spline per channel) and act
on ``(N, C, H, W)`` inputs; they are differentiable and used inside the
model's forward pass.  :class:`MonotoneSpline` and :class:`ConvexPotential`
wrap a single spline for scalar use.
"""

from dataclasses import dataclass

import numpy as np
import torch


@dataclass(frozen=True)
class SplineGrid:
    M: int = 20
    delta: float = 0.01

    def __post_init__(self):
        if self.M < 2 or self.M % 2:
            raise ValueError(f"M must be even and >= 2, got {self.M}")
        if not self.delta > 0:
            raise ValueError("delta must be positive")

    @property
    def size(self):
        return self.M + 1

    @property
    def center(self):
        return self.M // 2

    def knots(self):
        return (np.arange(self.M + 1) - self.M // 2) * self.delta


def project_increasing(c):
    """Map unconstrained coefficients to non-decreasing knot values centred at 0.

    Negative finite differences are zeroed, the rest are kept; the result is
    rebuilt with a cumulative sum and shifted so the middle knot is 0.  The
    clamp passes gradient through differences that sit exactly at 0, so the
    all-zero initialisation still receives a training signal.
    """
    c = torch.as_tensor(c)
    d = (c[..., 1:] - c[..., :-1]).clamp(min=0)
    v = torch.cat([torch.zeros_like(c[..., :1]), torch.cumsum(d, dim=-1)], dim=-1)
    mid = (c.shape[-1] - 1) // 2
    return v - v[..., mid:mid + 1]


def _locate(x, M, delta):
    u = x / delta + M / 2
    k = torch.floor(u.detach()).clamp(0, M - 1).long()
    return u, k


def _gather(values, k):
    """Pick ``values[c, k]`` for every element of a (N, C, H, W) index tensor."""
    C, size = values.shape
    offset = (torch.arange(C, device=k.device) * size).view(1, C, 1, 1)
    flat = values.reshape(-1)
    return flat[k + offset], flat[k + offset + 1]


def spline_eval(values, x, delta):
    """Per-channel linear interpolation with constant extension."""
    M = values.shape[-1] - 1
    u, k = _locate(x, M, delta)
    frac = (u - k).clamp(0.0, 1.0)
    lo, hi = _gather(values, k)
    return lo + frac * (hi - lo)


def potential_knots(values, delta):
    """Values of the integrated potential at the knots, anchored at psi(0) = 0."""
    inc = 0.5 * delta * (values[..., 1:] + values[..., :-1])
    psi = torch.cat([torch.zeros_like(values[..., :1]), torch.cumsum(inc, dim=-1)], dim=-1)
    mid = (values.shape[-1] - 1) // 2
    return psi - psi[..., mid:mid + 1]


def potential_eval(values, x, delta):
    """Evaluate the antiderivative of :func:`spline_eval` (closed-form quadratic pieces)."""
    M = values.shape[-1] - 1
    psi_knots = potential_knots(values, delta)
    _, k = _locate(x, M, delta)
    left = k.to(x.dtype) * delta - (M / 2) * delta
    s = (x - left).clamp(0.0, delta)
    lo, hi = _gather(values, k)
    p_lo, _ = _gather(psi_knots, k)
    quad = p_lo + lo * s + (hi - lo) / (2 * delta) * s * s
    C = values.shape[0]
    v0 = values[:, 0].view(1, C, 1, 1)
    vM = values[:, M].view(1, C, 1, 1)
    nu0, nuM = -(M / 2) * delta, (M / 2) * delta
    return quad + v0 * (x - nu0).clamp(max=0.0) + vM * (x - nuM).clamp(min=0.0)


def max_slope(values, delta):
    """Largest slope of each spline, shape (C,)."""
    return (values[..., 1:] - values[..., :-1]).max(dim=-1).values / delta


def tv2_penalty(values):
    """l1 norm of second finite differences of the knot values, per spline."""
    second = values[..., 2:] - 2 * values[..., 1:-1] + values[..., :-2]
    return second.abs().sum(dim=-1)


def _as_tensor(x):
    return torch.as_tensor(np.asarray(x, dtype=np.float64))


@dataclass(frozen=True)
class MonotoneSpline:
    """A single projected spline; ``values[M/2] == 0`` and non-decreasing."""

    grid: SplineGrid
    values: np.ndarray

    @classmethod
    def from_raw(cls, c, grid=None):
        c = np.asarray(c, dtype=np.float64)
        grid = grid or SplineGrid(M=c.size - 1)
        if c.size != grid.size:
            raise ValueError(f"expected {grid.size} coefficients, got {c.size}")
        return cls(grid, project_increasing(_as_tensor(c)).numpy())

    def _apply(self, fn, x):
        xt = _as_tensor(x)
        shape = xt.shape
        out = fn(_as_tensor(self.values).view(1, -1), xt.reshape(1, 1, 1, -1), self.grid.delta)
        out = out.reshape(shape).numpy()
        return float(out) if out.ndim == 0 else out

    def __call__(self, x):
        return self._apply(spline_eval, x)

    def max_slope(self):
        return float(max_slope(_as_tensor(self.values), self.grid.delta))

    def tv2(self):
        return float(tv2_penalty(_as_tensor(self.values)))

    def integrate(self):
        return ConvexPotential(self.grid, self.values)


@dataclass(frozen=True)
class ConvexPotential:
    """Quadratic-spline antiderivative of a :class:`MonotoneSpline`.

    Piecewise quadratic on the knot grid, linear outside it, C^1 and convex,
    with ``psi(0) = 0``.
    """

    grid: SplineGrid
    slopes: np.ndarray

    @property
    def knot_values(self):
        return potential_knots(_as_tensor(self.slopes), self.grid.delta).numpy()

    @property
    def boundary_slopes(self):
        return float(self.slopes[0]), float(self.slopes[-1])

    def __call__(self, x):
        return MonotoneSpline(self.grid, self.slopes)._apply(potential_eval, x)

    def derivative(self, x):
        return MonotoneSpline(self.grid, self.slopes)(x)
