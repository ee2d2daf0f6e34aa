"""Bundled grayscale images and synthetic phantoms for desk-scale experiments."""

import numpy as np
from skimage import color, data as skdata, transform, util

# images shipped with scikit-image (no download needed)
TRAIN_IMAGES = ("astronaut", "chelsea", "moon", "brick", "grass", "gravel", "rocket",
                "immunohistochemistry", "hubble_deep_field", "retina", "page", "text", "clock")
VALIDATION_IMAGES = ("coffee",)
TEST_IMAGES = ("camera", "coins")


def load_gray(name, max_side=512):
    """A bundled image as float64 gray levels in [0, 1], downscaled so its longer side is at most ``max_side``."""
    img = getattr(skdata, name)()
    if img.ndim == 3:
        img = color.rgb2gray(img[..., :3])
    img = util.img_as_float64(img)
    scale = max_side / max(img.shape)
    if scale < 1:
        img = transform.rescale(img, scale, anti_aliasing=True)
    return np.clip(img, 0.0, 1.0)


def load_split(split, max_side=512):
    names = {"train": TRAIN_IMAGES, "validation": VALIDATION_IMAGES, "test": TEST_IMAGES}[split]
    return [load_gray(n, max_side) for n in names]


def shepp_logan(size=64):
    img = transform.resize(skdata.shepp_logan_phantom(), (size, size), anti_aliasing=True)
    return np.clip(img, 0.0, 1.0)


def random_ellipses(size=64, count=8, rng=None):
    """Piecewise-constant phantom: a body ellipse plus smaller overlapping ellipses."""
    rng = np.random.default_rng(rng)
    yy, xx = np.mgrid[-1:1:size * 1j, -1:1:size * 1j]
    img = np.zeros((size, size))

    def add(cx, cy, a, b, phi, value):
        c, s = np.cos(phi), np.sin(phi)
        u = (xx - cx) * c + (yy - cy) * s
        v = -(xx - cx) * s + (yy - cy) * c
        img[(u / a) ** 2 + (v / b) ** 2 <= 1] += value

    add(0, 0, rng.uniform(0.7, 0.9), rng.uniform(0.75, 0.95), rng.uniform(0, np.pi), 0.5)
    for _ in range(count):
        add(rng.uniform(-0.45, 0.45), rng.uniform(-0.45, 0.45), rng.uniform(0.05, 0.3),
            rng.uniform(0.05, 0.3), rng.uniform(0, np.pi), rng.uniform(-0.25, 0.4))
    return np.clip(img, 0.0, 1.0)


def phantoms(n, size=64, seed=0):
    """The Shepp-Logan phantom followed by ``n - 1`` seeded random-ellipse phantoms."""
    out = [shepp_logan(size)] if n > 0 else []
    rng = np.random.default_rng(seed)
    out += [random_ellipses(size, rng=rng) for _ in range(n - 1)]
    return out
