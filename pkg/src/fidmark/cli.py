"""Command-line interface: marker generation, rendering, detection,
evaluation, and benchmarking as subcommands of one executable.

Precedence for settings: config file > flags > preset defaults. All
randomness is seeded (flag, config, or FIDMARK_SEED) for reproducibility.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np
from PIL import Image

from .detector import (DetectorParams, VARIANTS, detect_and_choose)
from .eval import (Thresholds, emit_report, evaluate_trace, run_benchmark,
                   summarize, write_rate_csv, RateResult)
from .marker import (MarkerSpec, canonicalize_necklace, enumerate_necklaces,
                     render_marker_bitmap, MarkerError)
from .presets import PRESETS, get_preset, preset_seed, render_preset
from .render import load_sequence, save_sequence
from .trace import PoseTrace


class CliError(ValueError):
    pass


def _detector_params(args) -> DetectorParams:
    params = DetectorParams()
    overrides = {}
    for name in ("diameter", "id_bits", "id_samples"):
        v = getattr(args, name, None)
        if v is not None:
            overrides[name] = v
    return replace(params, **overrides) if overrides else params


def cmd_marker_gen(args) -> int:
    out = Path(args.out)
    if args.codebook:
        ids = enumerate_necklaces(args.bits)
        out.parent.mkdir(parents=True, exist_ok=True)
        with out.open("w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["id", "bits"])
            for i in ids:
                w.writerow([i, format(i, f"0{args.bits}b")])
        print(f"wrote {len(ids)} canonical {args.bits}-bit ids to {out}")
        return 0
    if not args.id:
        raise CliError("provide --id (repeatable) or --codebook")
    out.mkdir(parents=True, exist_ok=True)
    for i in args.id:
        canon, _ = canonicalize_necklace(i, args.bits)
        if canon != i:
            raise CliError(
                f"id {i} is not canonical; use {canon} instead")
        spec = MarkerSpec(id=i, id_bits=args.bits, diameter=args.diameter
                          if args.diameter else 0.3)
        bmp = render_marker_bitmap(spec, args.size)
        path = out / f"marker_{i:03d}.png"
        Image.fromarray(bmp, mode="L").save(path)
        print(f"wrote {path}")
    return 0


def cmd_render(args) -> int:
    try:
        preset = get_preset(args.preset)
    except KeyError as exc:
        raise CliError(str(exc))
    seed = preset_seed(preset, args.seed)
    frames, records, cam = render_preset(preset, seed=seed)
    save_sequence(args.out, frames, records, cam,
                  rate=preset.trajectory.rate, seed=seed, case=preset.name)
    print(f"wrote {len(frames)} frames to {args.out} (case={preset.name}, "
          f"seed={seed})")
    return 0


def cmd_detect(args) -> int:
    frames, manifest, cam = load_sequence(args.frames)
    params = _detector_params(args)
    if args.variant == "multi" and len(params.bundle_ids) < 3:
        raise CliError("variant=multi requires a bundle id set of >= 3 ids")
    rate = manifest["frame_rate"]
    trace = PoseTrace(system=f"whycode-{args.variant}",
                      case=manifest.get("case", "case"))
    for i, img in enumerate(frames):
        for det in detect_and_choose(img, cam, params, args.variant,
                                     timestamp=i / rate, frame=i):
            trace.append(det.to_trace_record())
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    trace.save_jsonl(args.out)
    print(f"wrote {len(trace)} detections to {args.out}")
    return 0


def cmd_evaluate(args) -> int:
    th = Thresholds(theta_a=args.theta_a, theta_l=args.theta_l)
    traces = [PoseTrace.load_jsonl(p) for p in args.traces]
    rows = [evaluate_trace(t, th) for t in traces]
    written = emit_report(args.out, case_rows=rows, traces=traces,
                          thresholds=th)
    for s in summarize(rows, "r_d"):
        std = "n/a" if s["std"] is None else f"{s['std']:.4f}"
        print(f"{s['system']}: mean r_d={s['mean']:.4f} std={std} "
              f"(n={s['n_cases']})")
    print(f"wrote {len(written)} report files to {args.out}")
    return 0


def cmd_bench(args) -> int:
    frames, manifest, cam = load_sequence(args.frames)
    params = _detector_params(args)
    result = run_benchmark(frames, cam, params, variant=args.variant,
                           mode=args.mode,
                           frame_rate=manifest["frame_rate"])
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    if out.suffix == ".csv":
        write_rate_csv([RateResult(system=f"whycode-{args.variant}",
                                   case=manifest.get("case", "case"),
                                   len_s=result.t, n=result.n,
                                   F=result.F)], out)
    else:
        out.write_text(json.dumps(asdict(result), indent=2, sort_keys=True)
                       + "\n")
    print(f"mode={result.mode} n={result.n} t={result.t:.3f}s "
          f"F={result.F:.2f}/s latency mean={result.latency_mean*1e3:.1f}ms "
          f"p95={result.latency_p95*1e3:.1f}ms dropped={result.dropped}")
    return 0


def _apply_config(args) -> None:
    """Config-file values override flags (which override preset defaults)."""
    if not getattr(args, "config", None):
        return
    cfg = json.loads(Path(args.config).read_text())
    for key, val in cfg.items():
        attr = key.replace("-", "_")
        if not hasattr(args, attr):
            raise CliError(f"config key {key!r} unknown for this subcommand")
        setattr(args, attr, val)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="fidmark",
        description="Circular fiducial marker toolkit: generate, render, "
                    "detect, evaluate, benchmark.")
    sub = p.add_subparsers(dest="cmd", required=True)

    def common(sp):
        sp.add_argument("--config", help="JSON config file; overrides flags")

    g = sub.add_parser("marker-gen", help="render marker PNGs or codebook")
    g.add_argument("--id", type=int, action="append",
                   help="canonical marker id (repeatable)")
    g.add_argument("--bits", type=int, default=8)
    g.add_argument("--size", type=int, default=512)
    g.add_argument("--diameter", type=float)
    g.add_argument("--codebook", action="store_true",
                   help="write CSV of all canonical ids instead of PNGs")
    g.add_argument("--out", required=True)
    common(g)
    g.set_defaults(func=cmd_marker_gen)

    r = sub.add_parser("render", help="render a preset to frames + truth")
    r.add_argument("--preset", required=True)
    r.add_argument("--seed", type=int)
    r.add_argument("--out", required=True)
    common(r)
    r.set_defaults(func=cmd_render)

    d = sub.add_parser("detect", help="run detection over a frame directory")
    d.add_argument("frames", help="sequence directory with manifest.json")
    d.add_argument("--variant", choices=VARIANTS, default="orig")
    d.add_argument("--diameter", type=float)
    d.add_argument("--id-bits", type=int, dest="id_bits")
    d.add_argument("--id-samples", type=int, dest="id_samples")
    d.add_argument("--out", required=True, help="output trace JSONL")
    common(d)
    d.set_defaults(func=cmd_detect)

    e = sub.add_parser("evaluate", help="classify traces and emit reports")
    e.add_argument("traces", nargs="+", help="trace JSONL files")
    e.add_argument("--theta-a", type=float, default=1.0, dest="theta_a")
    e.add_argument("--theta-l", type=float, default=-0.8, dest="theta_l")
    e.add_argument("--out", required=True, help="report directory")
    common(e)
    e.set_defaults(func=cmd_evaluate)

    b = sub.add_parser("bench", help="benchmark detection rate")
    b.add_argument("frames", help="sequence directory with manifest.json")
    b.add_argument("--variant", choices=VARIANTS, default="orig")
    b.add_argument("--mode", choices=("paced", "throughput"),
                   default="throughput")
    b.add_argument("--diameter", type=float)
    b.add_argument("--out", required=True, help="output JSON or CSV")
    common(b)
    b.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        _apply_config(args)
        return args.func(args)
    except (CliError, MarkerError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
