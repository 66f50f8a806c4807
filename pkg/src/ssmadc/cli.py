"""Command-line entry point: ``ssmadc <subcommand> [options]``."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

log = logging.getLogger("ssmadc")


def _on_off(value: str) -> bool:
    if value not in ("on", "off"):
        raise argparse.ArgumentTypeError("expected 'on' or 'off'")
    return value == "on"


def _top_k(value: str):
    if value in ("all", "none"):
        return "all"
    k = int(value)
    if k < 1:
        raise argparse.ArgumentTypeError("top-k must be >= 1 or 'all'")
    return k


def parse_lengths(text: str) -> list[int]:
    """``"1024..65536"`` (doubling) or a comma-separated list."""
    try:
        if ".." in text:
            lo, hi = (int(v) for v in text.split(".."))
            if lo < 1 or hi < lo:
                raise ValueError
            out = []
            while lo <= hi:
                out.append(lo)
                lo *= 2
            return out
        out = [int(v) for v in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad length list {text!r}") from None
    if any(b <= a for a, b in zip(out, out[1:])) or min(out) < 1:
        raise argparse.ArgumentTypeError("lengths must be positive and strictly increasing")
    return out


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="TOML run configuration")
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int, help="max recordings processed concurrently")
    p.add_argument("-v", "--verbose", action="store_true")


def _segment_flags(p: argparse.ArgumentParser, cap: bool = False) -> None:
    p.add_argument("--max-segment-dur", type=float, help="segment length limit in seconds (360)")
    p.add_argument("--roles", choices=("both", "participant", "interviewer"))
    p.add_argument("--include-silence", type=_on_off, metavar="{on,off}")
    if cap:
        p.add_argument("--duration-cap", type=float, help="evaluation segment cap in seconds")


def _decision_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--top-k", type=_top_k, help="segments kept by the vote (int or 'all')")
    p.add_argument("--lambda", dest="lam", type=float, help="fusion weight of the text score")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ssmadc", description=__doc__)
    sub = parser.add_subparsers(dest="command", metavar="command", required=True)

    p = sub.add_parser("generate", help="write a synthetic interview corpus")
    _common(p)
    p.add_argument("--out", type=Path, required=True, help="output directory")
    p.add_argument("--classes", type=int, choices=(2, 3))
    p.add_argument("--per-class", type=int, help="recordings per class")
    p.add_argument("--duration", type=float, help="seconds per recording")

    p = sub.add_parser("segment", help="segment recordings and write segment JSONL")
    _common(p)
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True, help="segments JSONL")
    p.add_argument("--source", choices=("diarize", "vad"))
    p.add_argument("--split", help="restrict to one split")
    _segment_flags(p)

    p = sub.add_parser("train", help="train the audio model or the text classifier")
    _common(p)
    p.add_argument("branch", choices=("audio", "text"))
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True, help="output directory")
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--top-k", type=_top_k, help="vote size for validation AUC")
    _segment_flags(p)

    p = sub.add_parser("infer", help="write per-recording decisions")
    _common(p)
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--text-model", type=Path)
    p.add_argument("--split", default="test")
    p.add_argument("--out", type=Path, required=True, help="decisions JSONL")
    _segment_flags(p, cap=True)
    _decision_flags(p)

    p = sub.add_parser("eval", help="AUC tables, ablations and sweeps")
    _common(p)
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--text-model", type=Path)
    p.add_argument("--split", default="test")
    p.add_argument("--sweep", choices=("none", "duration", "lambda", "k"), default="none")
    p.add_argument("--out", type=Path, required=True, help="output directory")
    _segment_flags(p, cap=True)
    _decision_flags(p)

    p = sub.add_parser("bench", help="runtime and memory scaling against attention")
    _common(p)
    p.add_argument("--lengths", type=parse_lengths, default=parse_lengths("1024..65536"))
    p.add_argument("--attention-lengths", type=parse_lengths, default=parse_lengths("1024..8192"))
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--out", type=Path, required=True, help="report JSON")
    p.add_argument("--data", type=Path, help="optional gnuplot data file")

    p = sub.add_parser("gradcheck", help="finite-difference check of the backbone gradients")
    _common(p)
    p.add_argument("--samples", type=int, default=200)
    p.add_argument("--frames", type=int, default=32)
    p.add_argument("--tol", type=float, default=1e-4)
    return parser


def _run_config(args):
    from .config import RunConfig
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    over = {"seed": args.seed, "workers": args.workers}
    seg = {"max_dur": "max_segment_dur", "roles": "roles",
           "include_silence": "include_silence", "source": "source"}
    for key, attr in seg.items():
        over[f"segment.{key}"] = getattr(args, attr, None)
    ev = {"roles": "roles", "include_silence": "include_silence",
          "duration_cap": "duration_cap", "lam": "lam"}
    for key, attr in ev.items():
        over[f"eval.{key}"] = getattr(args, attr, None)
    k = getattr(args, "top_k", None)
    if k is not None:
        over["eval.top_k"] = None if k == "all" else k
    if args.command == "generate":
        over.update({"generate.classes": args.classes,
                     "generate.recordings_per_class": args.per_class,
                     "generate.duration": args.duration})
    if args.command == "train":
        over.update({"optim.epochs": args.epochs, "optim.lr0": args.lr})
    cfg = cfg.override(**over)
    if k == "all":
        cfg.eval["top_k"] = None
    return cfg


def _corpus(args, cfg):
    from .pipeline import Corpus
    return Corpus(args.manifest, cfg.fbank_config(), workers=cfg.workers)


def _text_model(path):
    if path is None:
        return None
    from .inference import BagOfWordsClassifier
    return BagOfWordsClassifier.load(path)


def cmd_generate(args, cfg) -> None:
    from .synthetic import generate_dataset
    manifest = generate_dataset(cfg.gen_config(), args.out, workers=cfg.workers)
    log.info("wrote %s", manifest)


def cmd_segment(args, cfg) -> None:
    from .segmentation import write_segments_jsonl
    corpus = _corpus(args, cfg)
    opts = cfg.segment_options()
    entries = corpus.split(args.split) if args.split else corpus.entries
    segs = [s for e in entries for s in corpus.segments(e, opts)]
    write_segments_jsonl(args.out, segs)
    log.info("wrote %d segments to %s", len(segs), args.out)


def cmd_train(args, cfg) -> None:
    from .training import train, train_text
    corpus = _corpus(args, cfg)
    args.out.mkdir(parents=True, exist_ok=True)
    if args.branch == "text":
        train_text(corpus, args.out / "text_model.json", cfg.segment_options().max_dur,
                   **cfg.text)
        log.info("wrote %s", args.out / "text_model.json")
        return
    result = train(corpus, cfg.model_config(), cfg.loss_config(), cfg.optim_config(),
                   cfg.segment_options(), args.out, seed=cfg.seed, k=cfg.eval_options().top_k)
    print(f"best validation AUC {result.best_val_auc:.4f} at epoch {result.best_epoch}; "
          f"checkpoint {result.checkpoint} sha256 {result.checkpoint_sha256}")


def cmd_infer(args, cfg) -> None:
    from .evaluation.runs import decide, resolve_params
    from .inference import write_decisions_jsonl
    corpus = _corpus(args, cfg)
    opts = cfg.eval_options()
    text = _text_model(args.text_model)
    entries = corpus.split(args.split)
    if not entries:
        raise ValueError(f"split {args.split!r} is empty")
    lam = opts.lam if opts.lam is not None else (0.5 if text is not None else 0.0)
    decisions = decide(corpus, entries, resolve_params(args.checkpoint), text, opts, lam)
    write_decisions_jsonl(args.out, decisions)
    log.info("wrote %d decisions to %s", len(decisions), args.out)


def cmd_eval(args, cfg) -> None:
    import dataclasses

    from .evaluation.runs import (duration_sweep, eval_run, lambda_sweep, resolve_params,
                                  write_metrics)
    from .inference import K_GRID
    corpus = _corpus(args, cfg)
    opts = cfg.eval_options()
    params = resolve_params(args.checkpoint)
    text = _text_model(args.text_model)
    if args.sweep == "duration":
        rows = duration_sweep(corpus, args.split, params, text, opts)
    elif args.sweep == "lambda":
        if text is None:
            raise ValueError("--sweep lambda needs --text-model")
        rows = lambda_sweep(corpus, args.split, params, text, opts)
    elif args.sweep == "k":
        rows = [r for k in K_GRID
                for r in eval_run(corpus, args.split, params, text,
                                  dataclasses.replace(opts, top_k=k))]
    else:
        rows = eval_run(corpus, args.split, params, text, opts)
    args.out.mkdir(parents=True, exist_ok=True)
    write_metrics(rows, args.out / "metrics.csv", args.out / "metrics.json")
    for r in rows:
        extra = f"  best {r['best_auc']:.4f}" if "best_auc" in r else ""
        print(f"{r['system']:6s} cap={r['duration_cap']:g} k={r['top_k']} "
              f"lambda={r['lambda']:g}  AUC {r['auc']:.4f}{extra}")


def cmd_bench(args, cfg) -> None:
    from .evaluation.bench import bench_scaling, write_bench
    reports = bench_scaling(cfg.model_config(), args.lengths, args.attention_lengths,
                            repeats=args.repeats, seed=cfg.seed)
    write_bench(args.out, reports, args.data)
    for name in ("ssm", "attention"):
        r = reports[name]
        failed = f"  (failed at T={r.failed_at})" if r.failed_at else ""
        print(f"{name:9s} slope {r.slope:.3f} over T={r.lengths[0]}..{r.lengths[-1]}{failed}")


def cmd_gradcheck(args, cfg) -> None:
    from .ssm.gradcheck import grad_check
    report = grad_check(cfg.model_config(), seed=cfg.seed, n_samples=args.samples,
                        n_frames=args.frames)
    print(f"max relative error {report.max_rel_error:.3e} over {report.n_checked} "
          f"of {report.n_parameters} parameters (worst {report.worst})")
    if not report.passed(args.tol):
        raise RuntimeError(f"gradient check failed: {report.max_rel_error:.3e} >= {args.tol:g}")


COMMANDS = {"generate": cmd_generate, "segment": cmd_segment, "train": cmd_train,
            "infer": cmd_infer, "eval": cmd_eval, "bench": cmd_bench,
            "gradcheck": cmd_gradcheck}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    from .config import ConfigError
    try:
        cfg = _run_config(args)
    except (ConfigError, OSError) as exc:
        parser.exit(2, f"ssmadc: error: {exc}\n")
    try:
        COMMANDS[args.command](args, cfg)
    except (ValueError, OSError, RuntimeError) as exc:
        log.error("%s", exc)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
