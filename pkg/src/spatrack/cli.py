"""Command-line interface: track / eval / synth / selftest.

Exit codes: 0 success, 1 usage or config error, 2 data error, 3 numeric
failure.  All subcommands are deterministic for identical inputs; the only
run-dependent output value is runtime_seconds in metrics.json.
"""

import argparse
import json
import os
import sys
import time

import numpy as np

from .benchmark import (SynthSpec, evaluate_ope, load_sequence, save_results,
                        save_sequence, synthesize_sequence)
from .config import load_config
from .errors import (ConfigError, NumericError, ParseError, SequenceSpecError,
                     SingularityError)
from .selftest import run_selftest
from .tracker import track_sequence

USAGE_ERROR, DATA_ERROR, NUMERIC_ERROR = 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"error: {message}\n")
        sys.exit(USAGE_ERROR)


def _build_parser():
    parser = _Parser(prog="spatrack", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, sequence=True):
        p.add_argument("--config", metavar="PATH", help="JSON config file")
        if sequence:
            p.add_argument("--sequence", metavar="PATH", required=True,
                           help="sequence directory")
        p.add_argument("--output", "--out", metavar="PATH", required=True,
                       help="output directory")
        p.add_argument("--variant", metavar="NAME",
                       help="ablation variant: baseline|cps|srk|full")
        p.add_argument("--seed", metavar="N", type=int, help="override config seed")
        p.add_argument("--dump-heatmaps", action="store_true",
                       help="write per-frame heat maps as PGM files")

    common(sub.add_parser("track", help="track one sequence"))
    common(sub.add_parser("eval", help="track every sequence in a directory"))

    synth = sub.add_parser("synth", help="render a synthetic sequence")
    synth.add_argument("--spec", metavar="PATH", required=True,
                       help="JSON synthesis spec")
    synth.add_argument("--output", "--out", metavar="PATH", required=True)

    sub.add_parser("selftest", help="run the built-in oracle suites")
    return parser


def _dump_heatmaps(directory, maps):
    from .benchmark import _write_pnm

    for frame_no, frame_maps in enumerate(maps, start=1):
        if not frame_maps:
            continue
        for kind, hm in frame_maps.items():
            lo, hi = float(hm.min()), float(hm.max())
            norm = (hm - lo) / (hi - lo) if hi > lo else np.zeros_like(hm)
            _write_pnm(os.path.join(directory, f"heatmap_{frame_no:05d}_{kind}.pgm"),
                       norm)


def _track_one(sequence_dir, output_dir, config, dump_heatmaps):
    bundle = load_sequence(sequence_dir)
    start = time.perf_counter()
    boxes, scores, _, maps = track_sequence(bundle, config)
    runtime = time.perf_counter() - start
    metrics = evaluate_ope(boxes, bundle.gt)
    metrics["frames"] = len(bundle.frames)
    metrics["runtime_seconds"] = runtime
    os.makedirs(output_dir, exist_ok=True)
    save_results(list(zip(boxes, scores)), metrics, output_dir)
    if dump_heatmaps:
        _dump_heatmaps(output_dir, maps)
    return metrics


def _cmd_track(args):
    config = load_config(args.config, {"variant": args.variant, "seed": args.seed})
    metrics = _track_one(args.sequence, args.output, config, args.dump_heatmaps)
    print(f"tracked {metrics['frames']} frames in {metrics['runtime_seconds']:.1f}s: "
          f"precision_20={metrics['precision_20']:.3f} auc={metrics['auc']:.3f} "
          f"mean_center_error={metrics['mean_center_error']:.2f}px")
    return 0


def _cmd_eval(args):
    config = load_config(args.config, {"variant": args.variant, "seed": args.seed})
    seq_dirs = sorted(
        os.path.join(args.sequence, name) for name in os.listdir(args.sequence)
        if os.path.isdir(os.path.join(args.sequence, name)))
    if not seq_dirs:
        raise ParseError(f"no sequence directories under {args.sequence}")
    per_seq = {}
    for seq_dir in seq_dirs:
        name = os.path.basename(seq_dir)
        metrics = _track_one(seq_dir, os.path.join(args.output, name), config,
                             args.dump_heatmaps)
        per_seq[name] = metrics
        print(f"{name}: precision_20={metrics['precision_20']:.3f} "
              f"auc={metrics['auc']:.3f}")
    aggregate = {
        "precision_20": float(np.mean([m["precision_20"] for m in per_seq.values()])),
        "auc": float(np.mean([m["auc"] for m in per_seq.values()])),
        "mean_center_error": float(np.mean([m["mean_center_error"]
                                            for m in per_seq.values()])),
        "frames": int(sum(m["frames"] for m in per_seq.values())),
        "runtime_seconds": float(sum(m["runtime_seconds"] for m in per_seq.values())),
        "sequences": sorted(per_seq),
    }
    with open(os.path.join(args.output, "metrics.json"), "w") as fh:
        json.dump(aggregate, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"mean over {len(per_seq)} sequences: precision_20={aggregate['precision_20']:.3f} "
          f"auc={aggregate['auc']:.3f}")
    return 0


def _load_synth_spec(path):
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ParseError(f"cannot read spec file {path}: {exc}")
    except json.JSONDecodeError as exc:
        raise ParseError(f"spec file {path} is not valid JSON: {exc}")
    if not isinstance(doc, dict):
        raise ParseError(f"spec file {path} must hold a JSON object")
    known = set(SynthSpec.__dataclass_fields__)
    for key in doc:
        if key not in known:
            raise ParseError(f"unknown spec key {key!r} in {path}")
    if "path" in doc:
        doc["path"] = [tuple(p) for p in doc["path"]]
    return SynthSpec(**doc)


def _cmd_synth(args):
    spec = _load_synth_spec(args.spec)
    bundle = synthesize_sequence(spec)
    save_sequence(bundle, args.output)
    print(f"wrote {len(bundle.frames)} frames to {args.output}")
    return 0


def _cmd_selftest(args):
    return 0 if run_selftest() else NUMERIC_ERROR


def main(argv=None):
    parser = _build_parser()
    args = parser.parse_args(argv)
    handlers = {"track": _cmd_track, "eval": _cmd_eval,
                "synth": _cmd_synth, "selftest": _cmd_selftest}
    try:
        return handlers[args.command](args)
    except ConfigError as exc:
        sys.stderr.write(f"config error: {exc}\n")
        return USAGE_ERROR
    except (ParseError, SequenceSpecError, FileNotFoundError) as exc:
        sys.stderr.write(f"data error: {exc}\n")
        return DATA_ERROR
    except (NumericError, SingularityError) as exc:
        sys.stderr.write(f"numeric failure: {exc}\n")
        return NUMERIC_ERROR


if __name__ == "__main__":
    sys.exit(main())
