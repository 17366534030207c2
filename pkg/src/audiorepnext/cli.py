"""Command-line surface: spectrogram, reparam, infer, bench, flops, init.

Exit codes: 0 success, 1 usage/input error, 2 verification failure. Every
subcommand is deterministic under a fixed --seed. Human-readable text goes
to stdout; machine-readable reports are written to files, never mixed into
stdout.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import audio, metrics, model, reparam, weights
from .errors import GraphModeError, ShapeError, WavReadError, WeightFileError
from .tensor import Tensor4

_USAGE_ERRORS = (WavReadError, WeightFileError, ShapeError, GraphModeError,
                 FileNotFoundError, IsADirectoryError, ValueError)


class _VerificationFailure(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(1)


def _fmt_shape(shape) -> str:
    return "×".join(str(s) for s in shape)


def _parse_hw(text: str) -> tuple[int, int]:
    parts = text.replace("×", "x").lower().split("x")
    if len(parts) != 2:
        raise ValueError(f"bad shape {text!r}, expected e.g. 512x128")
    return int(parts[0]), int(parts[1])


def _mega(n: int) -> str:
    return f"{n / 1e6:.2f}M"


def _giga(n: int) -> str:
    return f"{n / 1e9:.2f}G"


def _model_from_args(args) -> model.ModelGraph:
    if getattr(args, "weights", None):
        return weights.load(args.weights)
    if getattr(args, "ablation", None):
        cfg = model.ablation_config(args.ablation, num_classes=args.classes)
    elif getattr(args, "variant", None):
        cfg = model.variant_config(args.variant, num_classes=args.classes)
    else:
        raise ValueError("pass --weights or --variant (or --ablation)")
    return model.build(cfg, mode=getattr(args, "mode", model.TRAIN), seed=args.seed)


def _spectrogram_tensor(args) -> Tensor4:
    wav_path = Path(args.input)
    wave = audio.read_wav(wav_path.read_bytes())
    policy = "random" if args.random_offset else "start"
    if args.preset:
        feat = audio.extract(wave, audio.PRESETS[args.preset], policy, args.seed)
    else:
        if args.window_ms is None or args.hop_ms is None or args.duration_s is None:
            raise ValueError("pass --preset or all of --window-ms/--hop-ms/--duration-s")
        cfg = audio.MelConfig(sample_rate=wave.sample_rate, window_ms=args.window_ms,
                              hop_ms=args.hop_ms, n_mels=args.mels)
        clip = audio.crop_or_pad(wave, args.duration_s, policy, args.seed)
        feat = audio.log_mel(clip, cfg)
    return feat


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_init(args) -> int:
    if args.ablation:
        cfg = model.ablation_config(args.ablation, num_classes=args.classes)
    else:
        cfg = model.variant_config(args.variant, num_classes=args.classes)
    g = model.build(cfg, mode=args.mode, seed=args.seed)
    weights.save(g, args.out)
    print(f"wrote {args.out}: {cfg.variant} {g.mode}-form, "
          f"{metrics.param_count(g):,} params ({_mega(metrics.param_count(g))})")
    return 0


def cmd_spectrogram(args) -> int:
    feat = _spectrogram_tensor(args)
    if args.out:
        weights.save_tensors(args.out, {"spectrogram": feat.data},
                             meta={"source": str(args.input), "preset": args.preset})
    print(_fmt_shape(feat.shape))
    return 0


def cmd_reparam(args) -> int:
    train_graph = weights.load(args.weights)
    if train_graph.mode == model.INFERENCE:
        raise GraphModeError(f"{args.weights}: already reparameterized (inference form)")
    inf_graph = reparam.reparameterize(train_graph)

    p0, p1 = metrics.param_count(train_graph), metrics.param_count(inf_graph)
    print(f"params {_mega(p0)} → {_mega(p1)}")
    shape = (1, train_graph.config.in_channels, *_parse_hw(args.shape))
    f0, f1 = metrics.flops(train_graph, shape), metrics.flops(inf_graph, shape)
    print(f"flops @ {args.shape}: {_giga(f0)} → {_giga(f1)}")

    if args.verify:
        diff = reparam.verify_equivalence(train_graph, inf_graph, n_inputs=args.verify_inputs,
                                          spatial=(64, 32), seed=args.seed)
        if diff > args.tol:
            raise _VerificationFailure(f"max|Δ| = {diff:.3e} exceeds tolerance {args.tol:g}")
        print(f"max|Δ| = {diff:.3e} < {args.tol:g}: PASS")

    if args.out:
        weights.save(inf_graph, args.out)
        print(f"wrote {args.out}")
    return 0


def cmd_infer(args) -> int:
    g = weights.load(args.weights)
    if str(args.input).endswith(".wav"):
        feat = _spectrogram_tensor(args)
    else:
        tensors = weights.load_tensors(args.input)
        if "spectrogram" in tensors:
            arr = tensors["spectrogram"]
        elif len(tensors) == 1:
            arr = next(iter(tensors.values()))
        else:
            raise ValueError(f"{args.input}: expected a 'spectrogram' tensor, found {sorted(tensors)}")
        feat = Tensor4.from_array(arr)

    logits = model.forward(g, feat)
    if args.logits_out:
        weights.save_tensors(args.logits_out, {"logits": logits.astype(np.float32)})

    labels = None
    if args.labels:
        labels = Path(args.labels).read_text(encoding="utf-8").splitlines()
    z = logits[0] - logits[0].max()
    probs = np.exp(z) / np.exp(z).sum()
    order = np.argsort(-probs)[: args.topk]
    for rank, idx in enumerate(order, start=1):
        name = f" {labels[idx]}" if labels and idx < len(labels) else ""
        print(f"{rank}. class {idx}  score {probs[idx]:.4f}{name}")
    return 0


def cmd_bench(args) -> int:
    g = _model_from_args(args)
    shape = (1, g.config.in_channels, *_parse_hw(args.shape))
    report = metrics.bench(g, input_shape=shape, batch=args.batch, warmup=args.warmup,
                           timed=args.timed, threads=args.threads, seed=args.seed)
    print(f"mode={g.mode} batch={report.batch_size} threads={report.threads} "
          f"warmup={report.warmup_batches} timed={report.timed_batches}")
    print(f"samples/sec: {report.samples_per_sec:.2f}")
    if args.report:
        metrics.write_report(report, args.report)
        print(f"wrote {args.report}")
    return 0


def cmd_flops(args) -> int:
    g = _model_from_args(args)
    shape = (1, g.config.in_channels, *_parse_hw(args.shape))
    rep = metrics.cost_report(g, shape)
    print(f"params: {rep.params:,} ({_mega(rep.params)})")
    print(f"flops @ {args.shape}: {rep.flops:,} ({_giga(rep.flops)})")
    if args.per_layer:
        for name, p, f in rep.rows:
            print(f"  {name:<32} params={p:<12,} flops={f:,}")
    if args.report:
        metrics.write_report(rep, args.report)
        print(f"wrote {args.report}")
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def _add_mel_flags(p: _Parser):
    p.add_argument("--preset", choices=sorted(audio.PRESETS), help="documented input pipeline")
    p.add_argument("--window-ms", type=float, help="analysis window (explicit pipeline)")
    p.add_argument("--hop-ms", type=float, help="hop length (explicit pipeline)")
    p.add_argument("--duration-s", type=float, help="crop/pad length (explicit pipeline)")
    p.add_argument("--mels", type=int, default=128)
    p.add_argument("--random-offset", action="store_true", help="random crop offset (seeded)")


def build_parser() -> _Parser:
    parser = _Parser(prog="arin", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("init", help="write a randomly initialized weight file")
    p.add_argument("--variant", choices=("b0", "b1"), default="b1")
    p.add_argument("--ablation", choices=sorted(model._ABLATIONS), help="Table-style structure instead of a variant")
    p.add_argument("--classes", type=int, default=309)
    p.add_argument("--mode", choices=(model.TRAIN, model.INFERENCE), default=model.TRAIN)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_init)

    p = sub.add_parser("spectrogram", help="extract a log-mel feature tensor from a wav")
    p.add_argument("--input", required=True)
    _add_mel_flags(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="tensor container output path")
    p.set_defaults(func=cmd_spectrogram)

    p = sub.add_parser("reparam", help="convert a train-form weight file to inference form")
    p.add_argument("--weights", required=True)
    p.add_argument("--out")
    p.add_argument("--verify", action="store_true", help="check outputs agree on random inputs")
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--verify-inputs", type=int, default=8)
    p.add_argument("--shape", default="512x128", help="input extent for the flop delta")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_reparam)

    p = sub.add_parser("infer", help="end-to-end logits from a wav or feature tensor")
    p.add_argument("--weights", required=True)
    p.add_argument("--input", required=True, help=".wav or tensor container")
    _add_mel_flags(p)
    p.add_argument("--topk", type=int, default=5)
    p.add_argument("--labels", help="optional file with one class name per line")
    p.add_argument("--logits-out", help="write raw logits as a tensor container")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("bench", help="timed forward passes (warmup then timed batches)")
    p.add_argument("--weights")
    p.add_argument("--variant", choices=("b0", "b1"))
    p.add_argument("--ablation", choices=sorted(model._ABLATIONS))
    p.add_argument("--mode", choices=(model.TRAIN, model.INFERENCE), default=model.TRAIN)
    p.add_argument("--classes", type=int, default=309)
    p.add_argument("--shape", default="512x128")
    p.add_argument("--batch", type=int, default=8)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--warmup", type=int, default=50)
    p.add_argument("--timed", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--report", help="write the machine-readable JSON report here")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("flops", help="analytical parameter/MAC cost")
    p.add_argument("--weights")
    p.add_argument("--variant", choices=("b0", "b1"))
    p.add_argument("--ablation", choices=sorted(model._ABLATIONS))
    p.add_argument("--mode", choices=(model.TRAIN, model.INFERENCE), default=model.INFERENCE)
    p.add_argument("--classes", type=int, default=309)
    p.add_argument("--shape", default="512x128")
    p.add_argument("--per-layer", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--report", help="write the machine-readable JSON report here")
    p.set_defaults(func=cmd_flops)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except _VerificationFailure as e:
        print(f"verification failed: {e}", file=sys.stderr)
        return 2
    except _USAGE_ERRORS as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
