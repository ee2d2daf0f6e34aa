"""Patch pipeline, the unrolled l1 training objective and the Adam loop."""

import csv
import math
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import torch

from .denoiser import convergence_window, t_step_denoise, training_stepsize
from .errors import NumericalError
from .model import CrrModel
from .signal_core import DEFAULT_DTYPE
from .splines import SplineGrid

LOG_FIELDS = ("iteration", "loss", "data_term", "tv2_term", "lipschitz_bound", "lambda", "mu")


@dataclass
class TrainConfig:
    t: int = 5
    noise_sigma: float = 25 / 255
    patch_size: int = 40
    stride: int = 40
    num_patches: int = 2000
    flips: bool = True
    batch_size: int = 32
    epochs: int = 10
    lr_lambda_mu: float = 5e-2
    lr_kernels: float = 5e-3
    lr_splines: float = 1e-3
    lr_decay: float = 0.75
    eta: Optional[float] = None  # defaults to 2e-3 * 255 * noise_sigma
    channels: tuple[int, ...] = (1, 4, 8)
    kernel_size: int = 5
    spline_knots: int = 21
    spline_delta: float = 0.01
    init_lambda: float = 1.0
    init_mu: float = 1.0
    lipschitz_tol: float = 1e-4
    lipschitz_iters: int = 100
    seed: int = 0

    def __post_init__(self):
        if self.t < 1:
            raise ValueError("t must be >= 1")
        if min(self.lr_lambda_mu, self.lr_kernels, self.lr_splines) <= 0:
            raise ValueError("learning rates must be positive")
        if self.eta is not None and self.eta < 0:
            raise ValueError("eta must be non-negative")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be non-negative")
        self.channels = tuple(int(c) for c in self.channels)

    @property
    def tv2_weight(self):
        return 2e-3 * 255 * self.noise_sigma if self.eta is None else self.eta

    @property
    def grid(self):
        return SplineGrid(self.spline_knots - 1, self.spline_delta)

    def learning_rates(self):
        return {"lambda_mu": self.lr_lambda_mu, "kernels": self.lr_kernels,
                "splines": self.lr_splines}

    def make_model(self):
        return CrrModel(self.channels, self.kernel_size, self.grid, lmbda=self.init_lambda,
                        mu=self.init_mu, seed=self.seed, norm_shape=(self.patch_size,) * 2)


# --- data ------------------------------------------------------------------------

@dataclass
class PatchDataset:
    """Clean patches (N, 1, p, p) plus a seed for per-epoch noise draws."""

    clean: torch.Tensor
    seed: int = 0
    skipped: int = 0

    def __post_init__(self):
        if self.clean.numel() and (self.clean.min() < 0 or self.clean.max() > 1):
            raise ValueError("patch values must lie in [0, 1]")

    def __len__(self):
        return self.clean.shape[0]

    def noisy(self, sigma, epoch=0):
        rng = np.random.default_rng([self.seed, epoch])
        return add_gaussian_noise(self.clean, sigma, rng)


def extract_patches(images, patch_size=40, stride=None, limit=None, seed=0, flips=False):
    """Cut a regular grid of patches out of each image.

    With ``flips`` every patch also contributes its horizontal and vertical
    mirror images.  ``limit`` keeps a seed-determined random subset (in
    extraction order).  Images smaller than the patch are skipped and counted.
    """
    stride = stride or patch_size
    patches, skipped = [], 0
    for img in images:
        img = np.asarray(img, dtype=np.float64)
        h, w = img.shape
        if h < patch_size or w < patch_size:
            skipped += 1
            continue
        for i in range(0, h - patch_size + 1, stride):
            for j in range(0, w - patch_size + 1, stride):
                p = img[i:i + patch_size, j:j + patch_size]
                patches.append(p)
                if flips:
                    patches.extend([p[:, ::-1], p[::-1, :]])
    if skipped:
        warnings.warn(f"skipped {skipped} image(s) smaller than {patch_size}x{patch_size}")
    if limit is not None and limit < len(patches):
        idx = np.sort(np.random.default_rng(seed).choice(len(patches), limit, replace=False))
        patches = [patches[i] for i in idx]
    arr = np.stack(patches)[:, None] if patches else np.zeros((0, 1, patch_size, patch_size))
    return PatchDataset(torch.as_tensor(np.ascontiguousarray(arr), dtype=DEFAULT_DTYPE),
                        seed=seed, skipped=skipped)


def add_gaussian_noise(x, sigma, rng=None):
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    if sigma == 0:
        return x.clone()
    rng = np.random.default_rng(rng)
    noise = torch.as_tensor(rng.standard_normal(tuple(x.shape)), dtype=x.dtype)
    return x + sigma * noise


# --- objective -------------------------------------------------------------------

@dataclass
class LossTerms:
    loss: torch.Tensor
    data_term: float
    tv2_term: float
    lipschitz_bound: float
    alpha: float


def training_loss(clean, noisy, model, t, eta, lipschitz_tol=1e-4, lipschitz_iters=100,
                  batch_index=None):
    """Sum of l1 errors of the t-step denoiser plus ``eta`` times the TV2 penalty.

    The stepsize is recomputed from a differentiable Lipschitz bound, so
    gradients flow through the unrolled steps, the spline projection and the
    bound (with its eigenvector frozen).  Call ``.backward()`` on ``loss``.
    """
    if clean.shape[0] == 0:
        raise ValueError("empty batch")
    est = model.lipschitz_bound(clean.shape[-2:], differentiable=True, tol=lipschitz_tol,
                                max_iter=lipschitz_iters)
    lmbda, mu = model.lmbda, model.mu
    alpha = training_stepsize(lmbda, mu, est.bound)
    window = convergence_window(float(lmbda.detach()), float(mu.detach()), float(est.bound.detach()))
    assert float(alpha.detach()) < window, "stepsize left the convergence window"
    denoised = t_step_denoise(noisy, model, t, alpha=alpha)
    data = (denoised - clean).abs().sum()
    tv2 = model.tv2()
    loss = data + eta * tv2
    if not torch.isfinite(loss):
        where = "" if batch_index is None else f" at batch {batch_index}"
        raise NumericalError(f"non-finite training loss{where}")
    return LossTerms(loss, float(data.detach()), float(tv2.detach()), float(est.bound.detach()),
                     float(alpha.detach()))


def group_gradients(loss, groups):
    """Reverse-mode gradients of ``loss`` arranged like ``groups``."""
    names = list(groups)
    flat = [p for n in names for p in groups[n]]
    grads = torch.autograd.grad(loss, flat, allow_unused=True)
    out, pos = {}, 0
    for n in names:
        out[n] = list(grads[pos:pos + len(groups[n])])
        pos += len(groups[n])
    return out


# --- Adam ------------------------------------------------------------------------

@dataclass
class AdamState:
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params, grads, state, lr_per_group, betas=(0.9, 0.999), eps=1e-8):
    """One bias-corrected Adam update, in place.

    ``params`` and ``grads`` map group names to lists of tensors;
    ``lr_per_group`` maps the same names to learning rates.
    """
    b1, b2 = betas
    state.step += 1
    c1 = 1 - b1 ** state.step
    c2 = 1 - b2 ** state.step
    with torch.no_grad():
        for name, group in params.items():
            lr = lr_per_group[name]
            for i, (p, g) in enumerate(zip(group, grads[name])):
                if g is None:
                    g = torch.zeros_like(p)
                key = (name, i)
                m = state.m.setdefault(key, torch.zeros_like(p))
                v = state.v.setdefault(key, torch.zeros_like(p))
                m.mul_(b1).add_(g, alpha=1 - b1)
                v.mul_(b2).addcmul_(g, g, value=1 - b2)
                p.sub_(lr * (m / c1) / ((v / c2).sqrt() + eps))
    return state


# --- loop ------------------------------------------------------------------------

@dataclass
class TrainHistory:
    rows: list = field(default_factory=list)

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=LOG_FIELDS)
            w.writeheader()
            w.writerows(self.rows)


def train(config, dataset, model=None, log=None, max_steps=None):
    """Adam on the unrolled objective; returns ``(model, history)``.

    Patches are reshuffled and noise is redrawn each epoch from the seed.
    Learning rates decay by ``lr_decay`` after every epoch and kernels are
    projected to zero mean after every step.
    """
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    torch.manual_seed(config.seed)
    model = model or config.make_model()
    groups = model.parameter_groups()
    lrs = config.learning_rates()
    state = AdamState()
    history = TrainHistory()
    eta = config.tv2_weight
    rng = np.random.default_rng(config.seed)
    it = 0
    for epoch in range(config.epochs):
        noisy_all = dataset.noisy(config.noise_sigma, epoch)
        order = rng.permutation(len(dataset))
        for start in range(0, len(order), config.batch_size):
            idx = torch.as_tensor(order[start:start + config.batch_size])
            terms = training_loss(dataset.clean[idx], noisy_all[idx], model, config.t, eta,
                                  config.lipschitz_tol, config.lipschitz_iters, batch_index=it)
            grads = group_gradients(terms.loss, groups)
            adam_step(groups, grads, state, lrs)
            model.project_kernels()
            it += 1
            row = {"iteration": it, "loss": float(terms.loss.detach()), "data_term": terms.data_term,
                   "tv2_term": terms.tv2_term, "lipschitz_bound": terms.lipschitz_bound,
                   "lambda": float(model.lmbda.detach()), "mu": float(model.mu.detach())}
            history.rows.append(row)
            if log is not None:
                log(row)
            if not all(math.isfinite(float(p.detach().abs().max())) for p in model.parameters()):
                raise NumericalError(f"non-finite parameters after iteration {it}")
            if max_steps is not None and it >= max_steps:
                return model, history
        lrs = {k: v * config.lr_decay for k, v in lrs.items()}
    return model, history
