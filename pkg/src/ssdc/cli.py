"""Command-line surface: decompose, filterbank, train, sweep, eval.

Every command is deterministic given the same config and seed, and writes
a resolved copy of its configuration next to its outputs. Verbosity is
controlled by the SSDC_LOG environment variable (info or debug).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import config as cfgmod
from . import engine, filters, pgmio, said, spectral, svg
from .data import generate_dataset
from .model import Detector
from .trainer import METRIC_COLUMNS, evaluate, format_metric_row, run_training

log = logging.getLogger("ssdc.cli")

DEFAULT_SWEEPS = {
    "filter_count": [10, 20, 50, 100, 200, 500],
    "k": [1, 2, 3],
    "lambda_dcp": [5, 10, 50, 100],
    "ssm_step": [100, 250, 500, 1000],
}


def _setup_logging():
    level = {"debug": logging.DEBUG, "info": logging.INFO}.get(
        os.environ.get("SSDC_LOG", "").lower(), logging.WARNING)
    logging.basicConfig(level=level, format="%(name)s %(levelname)s %(message)s")


# ---------------------------------------------------------------------------
# decompose

def _build_frozen_filter(radial, mode, sigma_h, n_filters, weights):
    if mode == "hard":
        return filters.make_hard(radial, sigma_h)
    if mode == "soft":
        bank = filters.make_bank(radial, n_filters)
        if weights is None:
            w = np.full(n_filters, 0.5)
        else:
            w = np.asarray([float(x) for x in weights.split(",")])
        return filters.combine_soft(bank, w)
    if mode == "free":
        return filters.make_free(radial, filters.FreeFilterParams.zeros())
    raise ValueError(f"unknown mode {mode!r}")


def _ring_profile(radial_values, plane, n_rings=32):
    """Mean plane value per radial-distance ring; for the energy profile SVG."""
    edges = np.linspace(0.0, radial_values.max() + 1e-12, n_rings + 1)
    prof = []
    for i in range(n_rings):
        sel = (radial_values >= edges[i]) & (radial_values < edges[i + 1])
        if sel.any():
            prof.append((float(0.5 * (edges[i] + edges[i + 1])), float(plane[sel].mean())))
    return prof


def cmd_decompose(args) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    channels = pgmio.read_image(args.image)
    h, w = channels.shape[1], channels.shape[2]
    radial = spectral.radial_field(h, w)
    filt = _build_frozen_filter(radial, args.mode, args.sigma_h, args.n_filters, args.weights)

    mean_spec = spectral.spectrum_of_channels(channels)
    out = said.decouple(mean_spec, filt)
    said.save_output(out, out_dir / "chain")
    spectral.save_spectrum(mean_spec, out_dir / "spectrum.raw")
    filters.save_filter(filt, out_dir / "h_inv.raw")

    # apply per channel, reconstruct, average to gray (equals filtering the gray image)
    di_img = np.zeros((h, w))
    ds_img = np.zeros((h, w))
    for c in range(channels.shape[0]):
        spec = spectral.fft2d(spectral.ImagePlane.from_array(channels[c]))
        di_spec = spectral.Spectrum(h, w, spec.amplitude * filt.h_inv, spec.phase)
        ds_spec = spectral.Spectrum(h, w, spec.amplitude * filt.h_spe, spec.phase)
        di_img += spectral.ifft2d(di_spec).data
        ds_img += spectral.ifft2d(ds_spec).data
    di_img /= channels.shape[0]
    ds_img /= channels.shape[0]
    pgmio.write_pgm(out_dir / "di.pgm", di_img, rescale=False)
    pgmio.write_pgm(out_dir / "ds.pgm", ds_img, rescale=False)
    spectral.save_plane(di_img, out_dir / "di.raw", {"plane": "di_image", "center": "n/a"})
    spectral.save_plane(ds_img, out_dir / "ds.raw", {"plane": "ds_image", "center": "n/a"})

    amp = mean_spec.amplitude
    series = {
        "original": _ring_profile(radial.values, np.log1p(amp)),
        "di": _ring_profile(radial.values, np.log1p(amp * filt.h_inv)),
        "ds": _ring_profile(radial.values, np.log1p(amp * filt.h_spe)),
    }
    svg.line_plot(series, out_dir / "radial_energy.svg", title="radial energy profiles",
                  x_label="normalized radial frequency", y_label="log amplitude")
    meta = {"mode": args.mode, "sigma_h": args.sigma_h, "n_filters": args.n_filters,
            "pgm_scale": "clip(x,0,1)*255"}
    with open(out_dir / "decompose.json", "w") as fh:
        json.dump(meta, fh, indent=1, sort_keys=True)
    print(f"wrote DI/DS pair and spectra to {out_dir}")
    return 0


def cmd_filterbank(args) -> int:
    radial = spectral.radial_field(args.height, args.width)
    bank = filters.make_bank(radial, args.n_filters)
    filters.save_bank(bank, args.out)
    print(f"wrote {bank.n_filters}-band bank (delta_f={bank.delta_f:.6g}) to {args.out}")
    return 0


# ---------------------------------------------------------------------------
# train / eval / sweep

def _apply_overrides(cfg: cfgmod.RunConfig, args) -> cfgmod.RunConfig:
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, seed=args.seed)
    model = cfg.model
    if getattr(args, "mode", None):
        model = replace(model, said_mode=args.mode)
    if getattr(args, "no_said", False):
        model = replace(model, no_said=True)
    if getattr(args, "no_coupling", False):
        model = replace(model, no_coupling=True)
    train = cfg.train
    if getattr(args, "no_ssm", False):
        train = replace(train, no_ssm=True)
    return replace(cfg, model=model, train=train)


def run_one(cfg: cfgmod.RunConfig, out_dir: Path) -> dict:
    """Train per config into out_dir; returns the summary dict."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cfgmod.write_resolved(cfg, out_dir)
    data_cfg = cfg.data.to_data_cfg()
    dataset = generate_dataset(cfg.seed, cfg.data.n_per_subdomain, cfg.data.k_subdomains,
                               cfg.data.n_target, cfg.data.n_heldout, data_cfg)
    detector = Detector(cfg.model.to_model_cfg(cfg.data))
    train_cfg = cfg.train.to_train_cfg(cfg.said)

    rows = {"l_sup": [], "l_dcp": [], "l_mt": []}
    with open(out_dir / "metrics.csv", "w") as fh:
        fh.write(",".join(METRIC_COLUMNS) + "\n")

        def writer(row):
            fh.write(format_metric_row(row) + "\n")
            for key in rows:
                rows[key].append((row["iteration"], row[key]))

        state, summary = run_training(detector, dataset, train_cfg, cfg.seed, metrics_writer=writer)

    svg.line_plot(rows, out_dir / "losses.svg", title="training losses",
                  x_label="iteration", y_label="loss")
    engine.save_checkpoint(state.theta_s, out_dir / "checkpoint_student.bin")
    if state.teacher_ready:
        engine.save_checkpoint(state.theta_t, out_dir / "checkpoint_teacher.bin")
    summary["config"] = cfgmod.to_dict(cfg)
    with open(out_dir / "summary.json", "w") as fh:
        json.dump(summary, fh, indent=1, sort_keys=True)
    return summary


def cmd_train(args) -> int:
    cfg = _apply_overrides(cfgmod.load_config(args.config), args)
    summary = run_one(cfg, Path(args.out))
    acc = summary["final_eval"]["mean_accuracy"]
    print(f"final held-out mean accuracy: {acc:.4f} ({args.out})")
    return 0


def cmd_eval(args) -> int:
    cfg = _apply_overrides(cfgmod.load_config(args.config), args)
    data_cfg = cfg.data.to_data_cfg()
    dataset = generate_dataset(cfg.seed, cfg.data.n_per_subdomain, cfg.data.k_subdomains,
                               cfg.data.n_target, cfg.data.n_heldout, data_cfg)
    detector = Detector(cfg.model.to_model_cfg(cfg.data))
    loaded = engine.load_checkpoint(args.checkpoint)
    params = {k: engine.Tensor(v) for k, v in loaded.items()}
    expected = set(detector.init_params(cfg.seed))
    if set(params) != expected:
        raise ValueError(f"checkpoint parameters do not match the model "
                         f"(missing {sorted(expected - set(params))[:3]}...)")
    res = evaluate(detector, params, dataset.target_heldout)
    payload = {"mean_accuracy": res.mean_accuracy, "per_class": res.per_class,
               "n_per_class": res.n_per_class, "objectness_accuracy": res.objectness_accuracy}
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "eval.json", "w") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)
    print(json.dumps(payload, sort_keys=True))
    return 0


def _set_axis(cfg: cfgmod.RunConfig, axis: str, value) -> cfgmod.RunConfig:
    if axis == "filter_count":
        return replace(cfg, model=replace(cfg.model, n_filters=int(value)))
    if axis == "k":
        return replace(cfg, said=replace(cfg.said, k=int(value)))
    if axis == "lambda_dcp":
        return replace(cfg, said=replace(cfg.said, lambda_dcp=float(value)))
    if axis == "ssm_step":
        return replace(cfg, train=replace(cfg.train, ssm_step=int(value)))
    raise ValueError(f"unknown sweep axis {axis!r}")


def cmd_sweep(args) -> int:
    cfg = _apply_overrides(cfgmod.load_config(args.config), args)
    values = ([v for v in args.values.split(",") if v != ""] if args.values
              else list(DEFAULT_SWEEPS[args.axis]))
    if not values:
        raise ValueError("sweep needs at least one value")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    results = []
    for value in values:
        sub = _set_axis(cfg, args.axis, value)
        summary = run_one(sub, out / f"{args.axis}_{value}")
        results.append((float(value), summary["final_eval"]["mean_accuracy"]))
    results.sort(key=lambda r: r[0])
    with open(out / "sweep.csv", "w") as fh:
        fh.write(f"{args.axis},mean_accuracy\n")
        for value, acc in results:
            fh.write(f"{value:g},{repr(acc)}\n")
    svg.line_plot({args.axis: results}, out / "sweep.svg", title=f"sweep over {args.axis}",
                  x_label=args.axis, y_label="mean accuracy")
    print(f"swept {args.axis} over {len(results)} values -> {out / 'sweep.csv'}")
    return 0


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ssdc", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("decompose", help="split an image into DI/DS parts")
    p.add_argument("image", help="8-bit binary PGM or PPM")
    p.add_argument("--mode", choices=("hard", "soft", "free"), default="hard")
    p.add_argument("--sigma-h", type=float, default=0.1, dest="sigma_h")
    p.add_argument("--n-filters", type=int, default=100, dest="n_filters")
    p.add_argument("--weights", default=None, help="comma-separated soft weights in [0,1]")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_decompose)

    p = sub.add_parser("filterbank", help="export a difference-of-Gaussian bank")
    p.add_argument("--height", type=int, default=128)
    p.add_argument("--width", type=int, default=128)
    p.add_argument("--n-filters", type=int, default=100, dest="n_filters")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_filterbank)

    for name, fn in (("train", cmd_train), ("eval", cmd_eval), ("sweep", cmd_sweep)):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", required=True)
        p.add_argument("--mode", choices=("hard", "soft", "free"), default=None)
        p.add_argument("--no-said", action="store_true", dest="no_said")
        p.add_argument("--no-coupling", action="store_true", dest="no_coupling")
        p.add_argument("--no-ssm", action="store_true", dest="no_ssm")
        if name == "eval":
            p.add_argument("--checkpoint", required=True)
        if name == "sweep":
            p.add_argument("--axis", choices=tuple(DEFAULT_SWEEPS), required=True)
            p.add_argument("--values", default=None, help="comma-separated; default per axis")
        p.set_defaults(func=fn)
    return parser


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError, cfgmod.ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
