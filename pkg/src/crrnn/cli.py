"""Command-line entry point: ``crrnn <command> [options]``.

Every command writes into a run directory (``--out``): the resolved config
(``config.txt``), a ``manifest.json`` with inputs, seeds, versions and
metrics, plus command-specific CSV files and figures.  Settings come from
defaults, then ``--config FILE`` (flat ``key = value``), then flags.
"""

import argparse
import csv
import dataclasses
import json
import platform
import sys
import typing
from pathlib import Path

import numpy as np
import torch

from . import __version__, config, data, imageio, metrics, plotting
from .denoiser import proximal_denoise, t_step_denoise
from .errors import ConvergenceError, FormatError, NumericalError
from .inverse import (ReconConfig, baseline, build_operator, describe_operator, make_problems,
                      reconstruct, to_tensor, tune_parameters)
from .model import load, save
from .operators import simulate
from .solvers import write_trace
from .splines import ConvexPotential
from .training import TrainConfig, extract_patches, train
from .tuning import TuneConfig


@dataclasses.dataclass
class DenoiseConfig:
    mode: str = "tstep"  # tstep | prox
    t: int = 5
    noise_sigma: float = 25 / 255
    noise_seed: int = 0
    add_noise: bool = False
    lmbda: float = None
    mu: float = None
    tol: float = 1e-6
    max_iter: int = 5000


@dataclasses.dataclass
class TuneRunConfig:
    modality: str = "mri"
    num_images: int = 2
    image_size: int = 64
    patches: int = 10
    seed: int = 100
    lmbda: float = 1.0
    mu: float = 1.0
    gamma: float = 4.0
    zeta: float = 0.5
    threshold: float = 1.01
    tol: float = 1e-4
    max_iter: int = 1000
    noise_sigma: float = None
    acceleration: int = 4
    num_angles: int = 60
    num_detectors: int = 96


# --- run directory helpers -----------------------------------------------------------

class Run:
    def __init__(self, out, command, cfg, inputs=None):
        self.dir = Path(out)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.manifest = {
            "command": command,
            "config": dataclasses.asdict(cfg) if cfg is not None else {},
            "inputs": {k: str(v) for k, v in (inputs or {}).items()},
            "versions": {"crrnn": __version__, "python": platform.python_version(),
                         "torch": torch.__version__, "numpy": np.__version__},
            "outputs": [],
            "metrics": {},
        }
        if cfg is not None:
            text = config.dump_kv(dataclasses.asdict(cfg))
            (self.dir / "config.txt").write_text(text)
            print(f"# resolved {command} config")
            print(text, end="")

    def path(self, name):
        self.manifest["outputs"].append(name)
        return self.dir / name

    def finish(self):
        with open(self.dir / "manifest.json", "w") as fh:
            json.dump(self.manifest, fh, indent=2, sort_keys=True, default=_json_default)
            fh.write("\n")


def _json_default(v):
    if isinstance(v, float) and not np.isfinite(v):
        return str(v)
    if isinstance(v, (np.integer, np.floating)):
        return v.item()
    if isinstance(v, tuple):
        return list(v)
    raise TypeError(type(v))


def _clean(v):
    return "inf" if isinstance(v, float) and np.isinf(v) else v


def _write_rows(path, rows, fields):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields)
        w.writeheader()
        w.writerows(rows)


def _add_config_flags(parser, cls, skip=()):
    hints = typing.get_type_hints(cls)
    for f in dataclasses.fields(cls):
        if f.name in skip:
            continue
        parser.add_argument("--" + f.name.replace("_", "-"), dest=f.name, default=None,
                            metavar=getattr(hints[f.name], "__name__", "VALUE").upper(),
                            help=f"(default: {config._fmt(f.default) if f.default is not dataclasses.MISSING else ''})")


def _resolve(cls, args):
    file_values = config.load_kv(args.config) if args.config else {}
    names = {f.name for f in dataclasses.fields(cls)}
    flags = {k: v for k, v in vars(args).items() if k in names}
    return config.merge(cls, file_values, flags)


def _image_arg(path):
    img = imageio.read_image(path)
    if np.iscomplexobj(img):
        raise FormatError(f"{path} holds complex data; an image was expected")
    return img


# --- commands -------------------------------------------------------------------------

def cmd_train(args):
    cfg = _resolve(TrainConfig, args)
    torch.manual_seed(cfg.seed)
    images = ([_image_arg(p) for p in args.images] if args.images
              else data.load_split("train"))
    ds = extract_patches(images, cfg.patch_size, cfg.stride, cfg.num_patches, cfg.seed, cfg.flips)
    run = Run(args.out, "train", cfg, {"images": args.images or "bundled"})
    model, history = train(cfg, ds, max_steps=args.max_steps,
                           log=(lambda r: print(f"iter {r['iteration']} loss {r['loss']:.4f}"))
                           if args.verbose else None)
    save(model, run.path("model.crr"))
    history.write_csv(run.path("train_log.csv"))
    plotting.plot_training(history.rows, run.path("training.png"))
    run.manifest["metrics"] = {"patches": len(ds), "iterations": len(history.rows),
                               "final_loss": history.rows[-1]["loss"],
                               "lambda": float(model.lmbda.detach()), "mu": float(model.mu.detach())}
    run.finish()
    print(f"model written to {run.dir / 'model.crr'}")


def cmd_denoise(args):
    cfg = _resolve(DenoiseConfig, args)
    model = load(args.model)
    clean = _image_arg(args.input)
    x = to_tensor(clean)
    y = x
    if cfg.add_noise:
        y = simulate(x, build_operator(ReconConfig("denoise"), x.shape[-2:]), cfg.noise_sigma,
                     np.random.default_rng(cfg.noise_seed))
    run = Run(args.out, "denoise", cfg, {"model": args.model, "input": args.input})
    with torch.no_grad():
        if cfg.mode == "tstep":
            out = t_step_denoise(y, model, cfg.t)
        elif cfg.mode == "prox":
            out = proximal_denoise(y, model, cfg.lmbda, cfg.mu, cfg.tol, cfg.max_iter)
        else:
            raise ValueError(f"unknown mode {cfg.mode!r}")
    y, out = y[0, 0], out[0, 0]
    imageio.write_image(run.path("denoised.raw"), out.numpy())
    imageio.write_pgm(run.path("denoised.pgm"), out.numpy())
    ref = _image_arg(args.reference) if args.reference else (clean if cfg.add_noise else None)
    if ref is not None:
        report = metrics.MetricReport()
        report.add("input", y, ref)
        report.add("denoised", out, ref)
        _write_rows(run.path("metrics.csv"), report.rows(), ["image", "psnr", "ssim"])
        run.manifest["metrics"] = {"psnr_input": _clean(report.psnr[0]),
                                   "psnr": _clean(report.psnr[1]), "ssim": report.ssim[1]}
        plotting.plot_comparison([ref, y, out], ["reference", "input", "denoised"],
                                 run.path("comparison.png"))
        print(f"PSNR {metrics.format_db(report.psnr[0])} -> {metrics.format_db(report.psnr[1])}")
    run.finish()


def cmd_reconstruct(args):
    cfg = _resolve(ReconConfig, args)
    model = load(args.model)
    run = Run(args.out, "reconstruct", cfg, {"model": args.model, "input": args.input,
                                             "measurements": args.measurements})
    if args.measurements:
        y_np = imageio.read_image(args.measurements)
        if args.input is None and args.image_size is None:
            raise ValueError("--image-size is required when only measurements are given")
        shape = (_image_arg(args.input).shape if args.input
                 else (args.image_size, args.image_size))
        op = build_operator(cfg, shape)
        y = torch.as_tensor(y_np)[None, None]
        x = to_tensor(_image_arg(args.input)) if args.input else None
    else:
        if args.input is None:
            raise ValueError("either --input or --measurements is required")
        x = to_tensor(_image_arg(args.input))
        op = build_operator(cfg, tuple(x.shape[-2:]))
        y = simulate(x, op, cfg.sigma, np.random.default_rng(cfg.noise_seed))
        imageio.write_raw(run.path("measurements.raw"), y[0, 0].numpy())
    run.manifest["operator"] = describe_operator(op)
    res = reconstruct(y, op, model, cfg)
    base = baseline(y, op)
    imageio.write_raw(run.path("reconstruction.raw"), res.x[0, 0].numpy())
    imageio.write_pgm(run.path("reconstruction.pgm"), res.x[0, 0].numpy())
    imageio.write_pgm(run.path("baseline.pgm"), base[0, 0].numpy())
    if res.trace:
        write_trace(run.path("trace.csv"), res.trace)
        plotting.plot_convergence(res.trace, run.path("convergence.png"))
    m = {"converged": res.converged, "iterations": res.iterations,
         "objective": res.objective, "grad_norm": res.grad_norm}
    if x is not None:
        m.update(psnr=_clean(metrics.psnr(res.x, x)), ssim=metrics.ssim(res.x, x),
                 psnr_baseline=_clean(metrics.psnr(base, x)))
        plotting.plot_comparison([x, base, res.x], ["reference", "adjoint", "reconstruction"],
                                 run.path("comparison.png"))
        print(f"PSNR baseline {metrics.format_db(metrics.psnr(base, x))} "
              f"-> reconstruction {metrics.format_db(metrics.psnr(res.x, x))}")
    run.manifest["metrics"] = m
    run.finish()
    if not res.converged:
        print(f"warning: solver stopped at max_iter={cfg.max_iter}", file=sys.stderr)


def cmd_tune(args):
    cfg = _resolve(TuneRunConfig, args)
    model = load(args.model)
    run = Run(args.out, "tune", cfg, {"model": args.model})
    recon = ReconConfig(modality=cfg.modality, tol=cfg.tol, max_iter=cfg.max_iter,
                        positivity=cfg.modality != "denoise", noise_sigma=cfg.noise_sigma,
                        noise_seed=cfg.seed, acceleration=cfg.acceleration,
                        mask_seed=cfg.seed, num_angles=cfg.num_angles,
                        num_detectors=cfg.num_detectors, diagnostics=False)
    if cfg.modality == "denoise":
        ds = extract_patches(data.load_split("validation"), 40, 40, cfg.patches, cfg.seed)
        images = [p[0].numpy() for p in ds.clean]
    else:
        images = data.phantoms(cfg.num_images + 1, cfg.image_size, cfg.seed)[1:]
    problems = make_problems(images, recon)
    tcfg = TuneConfig(cfg.lmbda, cfg.mu, cfg.gamma, cfg.gamma, cfg.zeta, cfg.threshold)
    res = tune_parameters(problems, model, recon, tcfg,
                          log=(lambda a, b, s: print(f"lambda {a:.5g} mu {b:.5g} psnr {s:.4f}"))
                          if args.verbose else None)
    _write_rows(run.path("tune_history.csv"),
                [{"lambda": a, "mu": b, "psnr": s} for a, b, s in res.history],
                ["lambda", "mu", "psnr"])
    plotting.plot_tuning(res.history, run.path("tuning.png"), (res.lmbda, res.mu))
    run.manifest["metrics"] = {"lambda": res.lmbda, "mu": res.mu, "psnr": res.score,
                               "evaluations": res.evaluations}
    run.finish()
    print(f"lambda = {res.lmbda:.6g}\nmu = {res.mu:.6g}\npsnr = {res.score:.4f}\n"
          f"evaluations = {res.evaluations}")


def cmd_eval(args):
    run = Run(args.out, "eval", None, {"input": args.input, "reference": args.reference})
    report = metrics.MetricReport()
    for path in args.input:
        report.add(Path(path).name, _image_arg(path), _image_arg(args.reference))
    rows = report.rows()
    _write_rows(run.path("metrics.csv"), rows, ["image", "psnr", "ssim"])
    plotting.plot_metrics(rows, run.path("metrics.png"))
    run.manifest["metrics"] = {"mean_psnr": _clean(report.mean_psnr),
                               "mean_ssim": report.mean_ssim}
    run.finish()
    for r in rows:
        print(f"{r['image']}\tPSNR {r['psnr']}\tSSIM {r['ssim']}")


def cmd_inspect(args):
    model = load(args.model)
    run = Run(args.out, "inspect", None, {"model": args.model})
    with torch.no_grad():
        bank = model.composed_bank()[:, 0].numpy()
        values = model.activations().numpy()
        L = model.lipschitz_bound((40, 40), tol=1e-8, max_iter=2000)
    knots = model.grid.knots()
    _write_rows(run.path("filters.csv"),
                [{"channel": c, "row": i, "col": j, "value": repr(float(bank[c, i, j]))}
                 for c in range(bank.shape[0]) for i in range(bank.shape[1])
                 for j in range(bank.shape[2])], ["channel", "row", "col", "value"])
    _write_rows(run.path("splines.csv"),
                [{"channel": c, "knot": m, "position": repr(float(knots[m])),
                  "value": repr(float(values[c, m]))}
                 for c in range(values.shape[0]) for m in range(values.shape[1])],
                ["channel", "knot", "position", "value"])
    for c in range(bank.shape[0]):
        imageio.write_raw(run.path(f"filter_{c:02d}.raw"), bank[c])
    plotting.plot_filters(bank, run.path("filters.png"))
    xs = np.linspace(knots[0] * 1.5, knots[-1] * 1.5, 301)
    pots = [ConvexPotential(model.grid, v)(xs) for v in values]
    plotting.plot_activations(knots, values, run.path("activations.png"), (xs, pots))
    info = {"channels": list(model.channels), "kernel_size": model.kernel_size,
            "num_channels": model.num_channels, "spline_knots": model.grid.size,
            "spline_delta": model.grid.delta, "lambda": float(model.lmbda.detach()),
            "mu": float(model.mu.detach()), "lipschitz_bound_40x40": L.bound,
            "naive_bound_40x40": L.naive_bound}
    run.manifest["metrics"] = info
    run.finish()
    for k, v in info.items():
        print(f"{k} = {config._fmt(v)}")


def cmd_prune(args):
    model = load(args.model)
    pruned = model.prune(args.threshold)
    save(pruned, args.output)
    print(f"channels {model.num_channels} -> {pruned.num_channels}; written to {args.output}")


# --- parser ---------------------------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(prog="crrnn", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, with_config=True):
        sp.add_argument("--out", default="runs/latest", help="run directory")
        if with_config:
            sp.add_argument("--config", help="flat key = value file")
        sp.add_argument("-v", "--verbose", action="store_true")

    sp = sub.add_parser("train", help="train a model on image patches")
    common(sp)
    sp.add_argument("--images", nargs="*", help="training images (PGM/raw); default bundled")
    sp.add_argument("--max-steps", type=int, default=None, help="stop after this many steps")
    _add_config_flags(sp, TrainConfig)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("denoise", help="denoise an image")
    common(sp)
    sp.add_argument("--model", required=True)
    sp.add_argument("--input", required=True)
    sp.add_argument("--reference")
    _add_config_flags(sp, DenoiseConfig)
    sp.set_defaults(func=cmd_denoise)

    sp = sub.add_parser("reconstruct", help="solve an MRI/CT/denoising inverse problem")
    common(sp)
    sp.add_argument("--model", required=True)
    sp.add_argument("--input", help="ground-truth image; measurements are simulated")
    sp.add_argument("--measurements", help="raw measurement file (CRRIMG01/02)")
    sp.add_argument("--image-size", type=int)
    _add_config_flags(sp, ReconConfig)
    sp.set_defaults(func=cmd_reconstruct)

    sp = sub.add_parser("tune", help="search (lambda, mu) on validation data")
    common(sp)
    sp.add_argument("--model", required=True)
    _add_config_flags(sp, TuneRunConfig)
    sp.set_defaults(func=cmd_tune)

    sp = sub.add_parser("eval", help="PSNR/SSIM of images against a reference")
    common(sp, with_config=False)
    sp.add_argument("--input", nargs="+", required=True)
    sp.add_argument("--reference", required=True)
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("inspect", help="export filters and activation tables")
    common(sp, with_config=False)
    sp.add_argument("--model", required=True)
    sp.set_defaults(func=cmd_inspect)

    sp = sub.add_parser("prune", help="drop channels with near-zero activations")
    sp.add_argument("--model", required=True)
    sp.add_argument("--output", required=True)
    sp.add_argument("--threshold", type=float, default=1e-4)
    sp.set_defaults(func=cmd_prune)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except (FileNotFoundError, FormatError, ValueError) as exc:
        print(f"crrnn {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (ConvergenceError, NumericalError) as exc:
        print(f"crrnn {args.command}: failed: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
