"""Figures written next to CSV outputs (Agg backend, files only)."""

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _save(fig, path):
    fig.savefig(path, dpi=120, bbox_inches="tight")
    plt.close(fig)
    return path


def plot_filters(impulse_responses, path, cols=8):
    """Grid of composed filter impulse responses, shape (C, k, k)."""
    resp = np.asarray(impulse_responses)
    n = resp.shape[0]
    cols = min(cols, n)
    rows = -(-n // cols)
    fig, axes = plt.subplots(rows, cols, figsize=(1.4 * cols, 1.4 * rows), squeeze=False)
    for ax in axes.flat:
        ax.axis("off")
    for i, ax in enumerate(axes.flat[:n]):
        lim = np.abs(resp[i]).max() or 1.0
        ax.imshow(resp[i], cmap="RdBu_r", vmin=-lim, vmax=lim)
        ax.set_title(str(i), fontsize=8)
    return _save(fig, path)


def plot_activations(knots, values, path, potentials=None):
    """Activation splines (and optionally their potentials) per channel."""
    values = np.asarray(values)
    ncols = 2 if potentials is not None else 1
    fig, axes = plt.subplots(1, ncols, figsize=(4.5 * ncols, 3.5), squeeze=False)
    for v in values:
        axes[0, 0].plot(knots, v, lw=1)
    axes[0, 0].set_title("activations")
    axes[0, 0].set_xlabel("filter response")
    if potentials is not None:
        xs, ps = potentials
        for p in np.asarray(ps):
            axes[0, 1].plot(xs, p, lw=1)
        axes[0, 1].set_title("potentials")
        axes[0, 1].set_xlabel("filter response")
    return _save(fig, path)


def plot_convergence(trace, path):
    """Objective and relative change per iteration from a solver trace."""
    it = [r["iter"] for r in trace]
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.5))
    obj = np.array([r["objective"] for r in trace])
    axes[0].semilogy(it, obj - obj.min() + 1e-16)
    axes[0].set_title("objective - min")
    axes[1].semilogy(it, [r["relative_change"] for r in trace])
    axes[1].set_title("relative change")
    for ax in axes:
        ax.set_xlabel("iteration")
    return _save(fig, path)


def plot_training(rows, path):
    it = [r["iteration"] for r in rows]
    fig, axes = plt.subplots(1, 3, figsize=(12, 3.2))
    axes[0].plot(it, [r["loss"] for r in rows])
    axes[0].set_title("loss")
    axes[1].plot(it, [r["lipschitz_bound"] for r in rows])
    axes[1].set_title("Lipschitz bound")
    axes[2].semilogy(it, [r["lambda"] for r in rows], label="lambda")
    axes[2].semilogy(it, [r["mu"] for r in rows], label="mu")
    axes[2].legend()
    for ax in axes:
        ax.set_xlabel("iteration")
    return _save(fig, path)


def plot_comparison(images, titles, path):
    """Side-by-side grayscale panels on a common [0, 1] scale."""
    fig, axes = plt.subplots(1, len(images), figsize=(3 * len(images), 3.2), squeeze=False)
    for ax, img, title in zip(axes.flat, images, titles):
        ax.imshow(np.squeeze(np.asarray(img)), cmap="gray", vmin=0, vmax=1)
        ax.set_title(title, fontsize=9)
        ax.axis("off")
    return _save(fig, path)


def plot_tuning(history, path, best=None):
    """Evaluated (lambda, mu) pairs on log axes, coloured by score."""
    hist = [(a, b, s) for a, b, s in history if np.isfinite(s)]
    fig, ax = plt.subplots(figsize=(4.8, 4))
    if hist:
        a, b, s = map(np.asarray, zip(*hist))
        sc = ax.scatter(a, b, c=s, cmap="viridis", s=14)
        fig.colorbar(sc, ax=ax, label="PSNR [dB]")
    if best is not None:
        ax.scatter([best[0]], [best[1]], marker="x", color="red", s=60)
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel("lambda")
    ax.set_ylabel("mu")
    return _save(fig, path)


def plot_metrics(rows, path):
    """PSNR and SSIM bars per image; infinite PSNR is drawn at the axis top."""
    names = [r["image"] for r in rows]
    psnr = np.array([float(r["psnr"]) for r in rows])
    ssim = [float(r["ssim"]) for r in rows]
    finite = psnr[np.isfinite(psnr)]
    top = (finite.max() if finite.size else 50.0) * 1.1 or 1.0
    fig, axes = plt.subplots(1, 2, figsize=(8, 3.2))
    axes[0].bar(names, np.where(np.isfinite(psnr), psnr, top))
    axes[0].set_ylim(0, top)
    axes[0].set_title("PSNR [dB]")
    axes[1].bar(names, ssim)
    axes[1].set_ylim(0, 1)
    axes[1].set_title("SSIM")
    for ax in axes:
        ax.tick_params(axis="x", labelrotation=45, labelsize=7)
    return _save(fig, path)
