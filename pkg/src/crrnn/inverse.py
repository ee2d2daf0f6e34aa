"""Reconstruction problems (denoising, MRI, CT) assembled from config values."""

from dataclasses import dataclass

import numpy as np
import torch

from . import metrics
from .operators import (IdentityOperator, RadonGeometry, make_ct_op, make_mri_mask, make_mri_op,
                        simulate)
from .signal_core import DEFAULT_DTYPE
from .solvers import SOLVERS, SolveConfig
from .tuning import TuneConfig, tune

MODALITIES = ("denoise", "mri", "ct")
DEFAULT_NOISE = {"denoise": 25 / 255, "mri": 2e-3, "ct": 0.5 * 64 / 512}


@dataclass
class ReconConfig:
    modality: str = "mri"
    lmbda: float = None  # None -> model's stored value
    mu: float = None
    solver: str = "fista"
    tol: float = 1e-5
    max_iter: int = 3000
    positivity: bool = True
    noise_sigma: float = None  # None -> modality default
    noise_seed: int = 0
    acceleration: int = 4
    mask_seed: int = 0
    num_angles: int = 60
    num_detectors: int = 96
    detector_spacing: float = None
    diagnostics: bool = True

    def __post_init__(self):
        if self.modality not in MODALITIES:
            raise ValueError(f"modality must be one of {MODALITIES}")
        if self.solver not in SOLVERS:
            raise ValueError(f"solver must be one of {tuple(SOLVERS)}")
        if self.solver == "adaptive_gd" and self.positivity:
            raise ValueError("adaptive_gd runs without the positivity constraint")

    @property
    def sigma(self):
        return DEFAULT_NOISE[self.modality] if self.noise_sigma is None else self.noise_sigma


def to_tensor(img):
    return torch.as_tensor(np.asarray(img, dtype=np.float64), dtype=DEFAULT_DTYPE)[None, None]


def build_operator(cfg, image_shape):
    if cfg.modality == "denoise":
        return IdentityOperator(image_shape)
    if cfg.modality == "mri":
        mask = make_mri_mask(image_shape[-1], cfg.acceleration, cfg.mask_seed)
        return make_mri_op(mask, image_shape)
    geom = RadonGeometry(cfg.num_angles, cfg.num_detectors, cfg.detector_spacing)
    return make_ct_op(geom, tuple(image_shape))


def describe_operator(op):
    """JSON-friendly record of an operator (mask or geometry included)."""
    info = {"image_shape": list(op.image_shape)}
    if hasattr(op, "mask"):
        info.update(modality="mri", mask=op.mask.to_dict())
    elif hasattr(op, "geometry"):
        info.update(modality="ct", geometry=op.geometry.to_dict(),
                    detector_spacing_used=op.spacing)
    else:
        info["modality"] = "denoise"
    return info


def baseline(y, op):
    """Adjoint (zero-filled) reconstruction."""
    return op.adjoint(y)


def solve_config(cfg, model, lmbda=None, mu=None, lipschitz=None):
    lmbda = lmbda if lmbda is not None else (cfg.lmbda if cfg.lmbda is not None
                                             else float(model.lmbda.detach()))
    mu = mu if mu is not None else (cfg.mu if cfg.mu is not None else float(model.mu.detach()))
    return SolveConfig(lmbda=lmbda, mu=mu, tol=cfg.tol, max_iter=cfg.max_iter,
                       positivity=cfg.positivity, diagnostics=cfg.diagnostics,
                       lipschitz=lipschitz)


def reconstruct(y, op, model, cfg, lmbda=None, mu=None, lipschitz=None):
    """Solve one problem; ``lipschitz`` reuses a precomputed Lip(grad R) for the image shape."""
    return SOLVERS[cfg.solver](y, op, model, solve_config(cfg, model, lmbda, mu, lipschitz))


def make_problems(images, cfg, seed=None):
    """Operator plus simulated measurements for each ground-truth image."""
    out = []
    seed = cfg.noise_seed if seed is None else seed
    for i, img in enumerate(images):
        x = to_tensor(img)
        op = build_operator(cfg, tuple(x.shape[-2:]))
        out.append((x, op, simulate(x, op, cfg.sigma, np.random.default_rng([seed, i]))))
    return out


def tune_parameters(problems, model, cfg, tune_cfg=None, log=None):
    """Coarse-to-fine (lambda, mu) search maximising mean PSNR over ``problems``."""
    quick = ReconConfig(**{**cfg.__dict__, "diagnostics": False})
    shapes = {tuple(op.image_shape) for _, op, _ in problems}
    with torch.no_grad():
        lip = {s: float(model.lipschitz_bound(s, tol=1e-7, max_iter=3000).bound) for s in shapes}

    def score(lmbda, mu):
        vals = [metrics.psnr(reconstruct(y, op, model, quick, lmbda, mu,
                                         lip[tuple(op.image_shape)]).x, x)
                for x, op, y in problems]
        return float(np.mean(vals))

    # start from (1, 1) unless the run config pins a value
    tune_cfg = tune_cfg or TuneConfig(lmbda=cfg.lmbda if cfg.lmbda is not None else 1.0,
                                      mu=cfg.mu if cfg.mu is not None else 1.0)
    return tune(score, tune_cfg, log=log)
