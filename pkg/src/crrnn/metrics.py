"""PSNR and SSIM on [0, 1] images."""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import gaussian_filter

SSIM_SIGMA = 1.5
SSIM_K1, SSIM_K2 = 0.01, 0.03
_TRUNCATE = 3.5  # radius 5 -> 11-tap window at sigma 1.5


def _np(x):
    if hasattr(x, "detach"):
        x = x.detach().cpu().numpy()
    return np.asarray(x, dtype=np.float64)


def psnr(x, ref, peak=1.0):
    """10 log10(peak^2 / MSE); ``math.inf`` for identical images."""
    x, ref = _np(x), _np(ref)
    if x.shape != ref.shape:
        raise ValueError(f"shape mismatch {x.shape} vs {ref.shape}")
    mse = float(np.mean((x - ref) ** 2))
    if mse == 0:
        return math.inf
    return 10 * math.log10(peak ** 2 / mse)


def ssim(x, ref, data_range=1.0):
    """Mean local SSIM with an 11-tap Gaussian window (sigma 1.5).

    Local statistics use population (biased) moments; the map is averaged
    over pixels whose window fits inside the image.
    """
    x, ref = np.squeeze(_np(x)), np.squeeze(_np(ref))
    if x.shape != ref.shape:
        raise ValueError(f"shape mismatch {x.shape} vs {ref.shape}")
    if x.ndim != 2:
        raise ValueError("ssim expects a single 2D image")
    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2

    def blur(a):
        return gaussian_filter(a, SSIM_SIGMA, truncate=_TRUNCATE, mode="reflect")

    mx, my = blur(x), blur(ref)
    vx = blur(x * x) - mx * mx
    vy = blur(ref * ref) - my * my
    cxy = blur(x * ref) - mx * my
    smap = ((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2))
    pad = int(_TRUNCATE * SSIM_SIGMA + 0.5)
    return float(smap[pad:-pad, pad:-pad].mean())


def format_db(value):
    return "inf" if math.isinf(value) else f"{value:.4f}"


@dataclass
class MetricReport:
    names: list = field(default_factory=list)
    psnr: list = field(default_factory=list)
    ssim: list = field(default_factory=list)

    def add(self, name, x, ref):
        self.names.append(name)
        self.psnr.append(psnr(x, ref))
        self.ssim.append(ssim(x, ref))

    @property
    def mean_psnr(self):
        return float(np.mean(self.psnr)) if self.psnr else math.nan

    @property
    def mean_ssim(self):
        return float(np.mean(self.ssim)) if self.ssim else math.nan

    def rows(self):
        out = [{"image": n, "psnr": format_db(p), "ssim": f"{s:.6f}"}
               for n, p, s in zip(self.names, self.psnr, self.ssim)]
        out.append({"image": "mean", "psnr": format_db(self.mean_psnr),
                    "ssim": f"{self.mean_ssim:.6f}"})
        return out
