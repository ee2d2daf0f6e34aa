import math

import numpy as np
import pytest
from skimage.metrics import structural_similarity

from crrnn.metrics import MetricReport, format_db, psnr, ssim


def test_psnr_examples(rng):
    ref = rng.uniform(0, 0.8, (32, 32))
    assert psnr(ref + 0.1, ref) == pytest.approx(20.0)
    assert psnr(ref, ref) == math.inf
    assert format_db(psnr(ref, ref)) == "inf"
    e = rng.standard_normal(ref.shape) * 0.05
    assert psnr(ref + e, ref) - psnr(ref + math.sqrt(2) * e, ref) == pytest.approx(
        10 * math.log10(2))
    with pytest.raises(ValueError):
        psnr(ref, ref[:5])


def test_ssim_identity_and_symmetry(rng):
    a, b = rng.uniform(0, 1, (2, 40, 40))
    assert ssim(a, a) == pytest.approx(1.0)
    assert ssim(a, b) == pytest.approx(ssim(b, a), abs=1e-15)
    assert -1 <= ssim(a, b) <= 1


def test_ssim_constant_offset_oracle():
    x = np.full((24, 24), 0.3)
    y = x + 0.2
    c1, c2 = 1e-4, 9e-4
    # constant images: zero variances, so only the luminance term survives
    expected = (2 * 0.3 * 0.5 + c1) / (0.3 ** 2 + 0.5 ** 2 + c1)
    assert ssim(x, y) == pytest.approx(expected, rel=1e-12)


def test_ssim_direct_window_oracle(rng):
    x = rng.uniform(0, 1, (20, 20))
    y = np.clip(x + 0.1 * rng.standard_normal(x.shape), 0, 1)
    # explicit 11x11 Gaussian window at each interior pixel
    r = 5
    g = np.exp(-np.arange(-r, r + 1) ** 2 / (2 * 1.5 ** 2))
    w = np.outer(g, g) / np.outer(g, g).sum()
    vals = []
    for i in range(r, 20 - r):
        for j in range(r, 20 - r):
            px, py = x[i - r:i + r + 1, j - r:j + r + 1], y[i - r:i + r + 1, j - r:j + r + 1]
            mx, my = (w * px).sum(), (w * py).sum()
            vx, vy = (w * px * px).sum() - mx ** 2, (w * py * py).sum() - my ** 2
            cxy = (w * px * py).sum() - mx * my
            vals.append((2 * mx * my + 1e-4) * (2 * cxy + 9e-4)
                        / ((mx ** 2 + my ** 2 + 1e-4) * (vx + vy + 9e-4)))
    assert ssim(x, y) == pytest.approx(np.mean(vals), rel=1e-10)


def test_ssim_close_to_skimage(rng):
    x = rng.uniform(0, 1, (64, 64))
    y = np.clip(x + 0.1 * rng.standard_normal(x.shape), 0, 1)
    ref = structural_similarity(x, y, data_range=1.0, gaussian_weights=True, sigma=1.5,
                                use_sample_covariance=False)
    assert ssim(x, y) == pytest.approx(ref, abs=1e-3)


def test_ssim_validation():
    with pytest.raises(ValueError):
        ssim(np.zeros((4, 4, 2)), np.zeros((4, 4, 2)))
    with pytest.raises(ValueError):
        ssim(np.zeros((12, 12)), np.zeros((12, 13)))


def test_metric_report(rng):
    ref = rng.uniform(0, 0.8, (16, 16))
    rep = MetricReport()
    rep.add("a", ref + 0.1, ref)
    rep.add("b", ref, ref)
    rows = rep.rows()
    assert rows[0]["psnr"] == "20.0000"
    assert rows[1]["psnr"] == "inf" and rows[1]["ssim"] == "1.000000"
    assert rows[-1]["image"] == "mean" and rows[-1]["psnr"] == "inf"
    assert math.isnan(MetricReport().mean_psnr)
