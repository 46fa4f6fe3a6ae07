"""Batch command-line interface.

Exit codes: 0 success, 1 runtime error, 2 usage error.
"""

from __future__ import annotations

import argparse
import csv
import itertools
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .core import MASK_MODES, BadConfig, DivergenceDetected, Gather, S2SWTVError, derive_stream
from .io import (
    dump_config,
    is_manifest,
    load_config,
    read_gather,
    read_group,
    read_manifest,
    write_grid,
    write_manifest,
)

log = logging.getLogger("s2swtv")


class UsageError(Exception):
    pass


def _set_threads():
    threads = os.environ.get("S2SWTV_THREADS")
    if threads:
        import torch

        torch.set_num_threads(max(1, int(threads)))


def _overrides(pairs) -> dict:
    out = {}
    for pair in pairs or []:
        key, sep, value = pair.partition("=")
        if not sep:
            raise UsageError(f"--set expects key=value, got {pair!r}")
        out[key.strip()] = value.strip()
    return out


def _config(args):
    overrides = _overrides(getattr(args, "set", None))
    if getattr(args, "seed", None) is not None:
        overrides["train.seed"] = args.seed
    if getattr(args, "samples", None) is not None:
        overrides["infer.samples"] = args.samples
    try:
        return load_config(args.config, overrides)
    except BadConfig as exc:
        if args.config is None:
            raise UsageError(str(exc)) from exc
        raise


def _load_inputs(path) -> tuple[list[Gather], list[str]]:
    if is_manifest(path):
        names = [p.name for p in read_manifest(path)]
        return read_group(path), names
    return [read_gather(path)], [Path(path).name]


def _stem(name: str) -> str:
    for suffix in (".f32", ".csv", ".grid", ".bin"):
        if name.endswith(suffix):
            return name[: -len(suffix)]
    return name


# --- commands -------------------------------------------------------------


def cmd_synth(args) -> int:
    from .synthgen import EventSpec, default_events, make_synthetic

    if args.events:
        doc = json.loads(Path(args.events).read_text())
        events = [EventSpec(**e) for e in (doc["events"] if isinstance(doc, dict) else doc)]
    elif args.random_events:
        from .synthgen import random_events

        events = random_events(args.height, args.width, args.random_events, derive_stream(args.seed, "events", 0))
    else:
        events = default_events(args.height, args.width)
    g = make_synthetic(args.height, args.width, events)
    write_grid(Gather(g.data, dt=args.dt, dx=args.dx), args.out)
    print(f"wrote {args.height}x{args.width} gather to {args.out}")
    return 0


def cmd_addnoise(args) -> int:
    from .synthgen import NoiseSpec, add_noise, estimate_band, usable_band

    g = read_gather(args.input)
    band = tuple(args.band) if args.band else None
    if args.kind == "bandpass" and band is None:
        band = usable_band(estimate_band(g, args.threshold), g.shape[0])
        print(f"estimated band: {band[0]:.4f}-{band[1]:.4f} cycles/sample")
    noisy = add_noise(g, NoiseSpec(args.kind, args.sigma, band), derive_stream(args.seed, "noise", args.index))
    write_grid(noisy, args.out)
    print(f"wrote noisy gather to {args.out}")
    return 0


def cmd_denoise(args) -> int:
    from .metrics import evaluate
    from .network import save_params
    from .trainer import denoise_group

    config = _config(args)
    group, names = _load_inputs(args.input)
    clean = _load_inputs(args.clean)[0] if args.clean else None
    if clean is not None and len(clean) != len(group):
        raise S2SWTVError("--clean must provide one slice per input slice")

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.json").write_text(json.dumps(dump_config(config), indent=2) + "\n")
    ckpt_dir = out_dir / "checkpoints"
    if args.checkpoint_every:
        ckpt_dir.mkdir(exist_ok=True)

    with open(out_dir / "train_log.jsonl", "w") as log_file:

        def record(entry):
            log_file.write(json.dumps(entry) + "\n")
            if "psnr" in entry:
                log.info("slice %d iter %d psnr %.2f dB", entry["slice"], entry["iter"] + 1, entry["psnr"])

        def checkpoint(k, t, model):
            save_params(model, ckpt_dir / f"slice{k}_iter{t}.pt")

        outputs, results = denoise_group(
            [g.data for g in group],
            config,
            clean=None if clean is None else [c.data for c in clean],
            callback=record,
            checkpoint=checkpoint,
            checkpoint_every=args.checkpoint_every,
        )
        for k, res in enumerate(results):
            log_file.write(json.dumps({"event": "slice_done", "slice": k, "iterations": res.run.iteration}) + "\n")

    reports = []
    paths = []
    for k, (name, out, res) in enumerate(zip(names, outputs, results)):
        path = out_dir / f"{_stem(name)}.denoised.f32"
        write_grid(Gather(out.astype(np.float32), dt=group[k].dt, dx=group[k].dx), path)
        paths.append(path)
        save_params(res.params, out_dir / f"params_slice{k}.pt")
        if args.std_out:
            std = res.ensemble.per_sample_std * _group_scale(group)
            write_grid(std, out_dir / f"{_stem(name)}.std.f32")
        report = evaluate(group[k].data, out, None if clean is None else clean[k].data, args.window)
        reports.append({"slice": name, **report.as_dict()})
    if len(paths) > 1:
        write_manifest(paths, out_dir / "denoised.json")
    (out_dir / "report.json").write_text(json.dumps(reports, indent=2) + "\n")
    for r in reports:
        print(json.dumps(r))
    return 0


def _group_scale(group) -> float:
    peak = max(float(np.abs(g.data).max()) for g in group)
    return peak if peak > 0 else 1.0


def cmd_eval(args) -> int:
    from .metrics import evaluate, local_similarity_map

    noisy = read_gather(args.noisy)
    denoised = read_gather(args.denoised)
    clean = read_gather(args.clean) if args.clean else None
    report = evaluate(noisy.data, denoised.data, None if clean is None else clean.data, args.window)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_grid(report.residual, out_dir / "residual.f32")
    write_grid(local_similarity_map(denoised.data, report.residual, args.window), out_dir / "ls_map.f32")
    (out_dir / "report.json").write_text(json.dumps(report.as_dict(), indent=2) + "\n")
    print(json.dumps(report.as_dict()))
    return 0


def _parse_sweep(items) -> list[tuple[str, list[str]]]:
    sweeps = []
    for item in items or []:
        key, sep, values = item.partition("=")
        if not sep or not values:
            raise UsageError(f"--sweep expects key=v1,v2,..., got {item!r}")
        sweeps.append((key.strip(), [v.strip() for v in values.split(",")]))
    return sweeps


def cmd_ablate(args) -> int:
    from .metrics import evaluate
    from .trainer import denoise_group

    base_overrides = _overrides(args.set)
    if args.seed is not None:
        base_overrides["train.seed"] = args.seed
    sweeps = _parse_sweep(args.sweep)
    noisy = read_gather(args.input)
    clean = read_gather(args.clean)

    rows = []
    for mode in args.modes:
        for combo in itertools.product(*[values for _, values in sweeps]):
            overrides = dict(base_overrides, **{"mask.mode": mode})
            overrides.update({key: value for (key, _), value in zip(sweeps, combo)})
            try:
                config = load_config(args.config, overrides)
            except BadConfig as exc:
                raise UsageError(str(exc)) from exc
            label = ",".join([f"mode={mode}"] + [f"{k}={v}" for (k, _), v in zip(sweeps, combo)])
            log.info("ablation variant %s", label)
            outputs, _ = denoise_group([noisy.data], config, clean=None)
            report = evaluate(noisy.data, outputs[0], clean.data, args.window)
            rows.append({"variant": label, "psnr": report.psnr, "ssim": report.ssim, "ls": report.ls})

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "ablation.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["variant", "psnr", "ssim", "ls"])
        writer.writeheader()
        writer.writerows(rows)
    (out_dir / "ablation.json").write_text(json.dumps(rows, indent=2) + "\n")
    print(f"{'variant':<40} {'PSNR':>8} {'SSIM':>7} {'LS':>7}")
    for r in rows:
        print(f"{r['variant']:<40} {r['psnr']:8.2f} {r['ssim']:7.4f} {r['ls']:7.4f}")
    return 0


def cmd_plot(args) -> int:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    grids = [read_gather(p) for p in args.input]
    panels = []
    if args.pairs:
        if len(grids) % 2:
            raise UsageError("--pairs needs an even number of inputs")
        for (pa, a), (pb, b) in zip(*[iter(list(zip(args.input, grids)))] * 2):
            if a.shape != b.shape:
                raise S2SWTVError(f"pair {pa}, {pb} has mismatched shapes {a.shape} vs {b.shape}")
            panels += [(Path(pa).name, a.data), (Path(pb).name, b.data), ("residual", a.data - b.data)]
    else:
        panels = [(Path(p).name, g.data) for p, g in zip(args.input, grids)]

    clip = max(float(np.abs(d).max()) for _, d in panels) or 1.0
    fig, axes = plt.subplots(1, len(panels), figsize=(3 * len(panels), 3.4), squeeze=False)
    for ax, (title, data) in zip(axes[0], panels):
        ax.imshow(data, cmap="gray", vmin=-clip, vmax=clip, aspect="auto", interpolation="nearest")
        ax.set_title(title, fontsize=8)
        ax.set_xlabel("trace")
        ax.set_ylabel("time sample")
    fig.tight_layout()
    fig.savefig(args.out, dpi=args.dpi)
    plt.close(fig)
    print(f"wrote {len(panels)} panel(s) to {args.out}")
    return 0


# --- parser ---------------------------------------------------------------


def _modes(text: str) -> list[str]:
    modes = [m.strip() for m in text.split(",") if m.strip()]
    bad = [m for m in modes if m not in MASK_MODES]
    if bad or not modes:
        raise argparse.ArgumentTypeError(f"unknown mask mode(s) {bad}; choose from {','.join(MASK_MODES)}")
    return modes


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="s2swtv", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a clean synthetic gather")
    p.add_argument("--height", type=int, required=True)
    p.add_argument("--width", type=int, required=True)
    p.add_argument("--events", help="JSON list of event specs")
    p.add_argument("--random-events", type=int, default=0, help="draw N random events instead")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--dt", type=float)
    p.add_argument("--dx", type=float)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("addnoise", help="add Gaussian or bandpass noise")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--kind", choices=["gaussian", "bandpass"], default="gaussian")
    p.add_argument("--sigma", type=float, required=True)
    p.add_argument("--band", type=float, nargs=2, metavar=("LOW", "HIGH"))
    p.add_argument("--threshold", type=float, default=0.05, help="band estimate threshold")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--index", type=int, default=0, help="noise realization index")
    p.set_defaults(func=cmd_addnoise)

    p = sub.add_parser("denoise", help="train and denoise a gather or slice group")
    p.add_argument("--in", dest="input", required=True, help="grid file or JSON manifest")
    p.add_argument("--config")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--clean", help="ground truth (grid or manifest) for a live PSNR trace")
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.add_argument("--seed", type=int)
    p.add_argument("--samples", type=int, help="ensemble size P")
    p.add_argument("--std-out", action="store_true", help="write per-sample std maps")
    p.add_argument("--checkpoint-every", type=int, default=0)
    p.add_argument("--window", type=int, default=9, help="LS window")
    p.set_defaults(func=cmd_denoise)

    p = sub.add_parser("eval", help="PSNR/SSIM/LS report")
    p.add_argument("--noisy", required=True)
    p.add_argument("--denoised", required=True)
    p.add_argument("--clean")
    p.add_argument("--window", type=int, default=9)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="compare masking modes and config variants")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--clean", required=True)
    p.add_argument("--modes", type=_modes, default=["trace"])
    p.add_argument("--config")
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.add_argument("--sweep", action="append", metavar="KEY=V1,V2")
    p.add_argument("--seed", type=int)
    p.add_argument("--window", type=int, default=9)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("plot", help="render gathers as grayscale panels")
    p.add_argument("--in", dest="input", nargs="+", required=True)
    p.add_argument("--pairs", action="store_true", help="treat inputs as (noisy, denoised) pairs")
    p.add_argument("--out", required=True)
    p.add_argument("--dpi", type=int, default=120)
    p.set_defaults(func=cmd_plot)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    _set_threads()
    try:
        return args.func(args)
    except UsageError as exc:
        parser.error(str(exc))
    except DivergenceDetected as exc:
        print(f"error: divergence at iteration {exc.iteration}: {exc}", file=sys.stderr)
        return 1
    except (S2SWTVError, OSError, ValueError, KeyError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
