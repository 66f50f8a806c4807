"""Recording-level evaluation of the audio, text and fused systems, with segment ablations."""
from __future__ import annotations

import csv
import json
import logging
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..inference import (RecordingDecision, fuse, segment_probs, sweep_lambda,
                         text_score, top_k)
from ..pipeline import Corpus, SegmentOptions
from ..ssm.checkpoint import load_checkpoint
from ..ssm.model import ModelParams
from .metrics import recording_auc

log = logging.getLogger(__name__)

DURATION_CAPS = (30.0, 60.0, 120.0, 240.0, 360.0)
METRIC_FIELDS = ("system", "split", "roles", "include_silence", "duration_cap", "top_k",
                 "lambda", "auc", "n_recordings")


@dataclass(frozen=True)
class EvalOptions:
    roles: str = "both"
    include_silence: bool = True
    duration_cap: float = 360.0
    top_k: int | None = None
    lam: float | None = None  # None: report the best weight of the sweep

    def segment_options(self) -> SegmentOptions:
        return SegmentOptions("diarize", self.duration_cap, self.roles, self.include_silence)


def resolve_params(checkpoint) -> ModelParams:
    if isinstance(checkpoint, ModelParams):
        return checkpoint
    path = Path(checkpoint)
    if not path.is_file():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    return load_checkpoint(path)


def decide(corpus: Corpus, entries, params: ModelParams, text_model=None,
           opts: EvalOptions | None = None, lam: float = 0.0) -> list[RecordingDecision]:
    """One decision per recording, in manifest order."""
    opts = opts or EvalOptions()
    entries = list(entries)
    examples = corpus.examples(entries, opts.segment_options(), params.config.min_frames)
    preds = defaultdict(list)
    for ex, p in zip(examples, segment_probs(examples, params)):
        preds[ex.recording_id].append(p)
    texts = (corpus.text_segments(entries, opts.duration_cap, opts.roles)
             if text_model is not None else {})
    n_classes = params.config.n_classes
    out = []
    for e in entries:
        rec = preds.get(e.recording_id)
        if rec:
            chosen = top_k(rec, opts.top_k)
            p_audio = np.mean([p.probs for p in chosen], axis=0)
            selected = [[p.segment.start, p.segment.end] for p in chosen]
        else:
            log.warning("%s: no usable segments; using a uniform audio score", e.recording_id)
            p_audio, selected = np.full(n_classes, 1.0 / n_classes), []
        p_text = None
        if text_model is not None:
            p_text = text_score(texts[e.recording_id], text_model, opts.top_k)
        out.append(RecordingDecision(e.recording_id, p_audio, p_text, lam if p_text is not None
                                     else 0.0, selected, e.label))
    return out


def _row(system, split, opts, lam, auc, n):
    return {"system": system, "split": split, "roles": opts.roles,
            "include_silence": opts.include_silence, "duration_cap": opts.duration_cap,
            "top_k": opts.top_k, "lambda": lam, "auc": auc, "n_recordings": n}


def eval_run(corpus: Corpus, split: str, checkpoint, text_model=None,
             opts: EvalOptions | None = None) -> list[dict]:
    """Metric rows for audio-only, text-only and fused scores on one split."""
    opts = opts or EvalOptions()
    entries = corpus.split(split)
    if not entries:
        raise ValueError(f"split {split!r} is empty")
    params = resolve_params(checkpoint)
    decisions = decide(corpus, entries, params, text_model, opts)
    labels = np.array([d.label for d in decisions])
    p_audio = np.stack([d.p_audio for d in decisions])
    n = len(decisions)
    rows = [_row("audio", split, opts, 0.0, recording_auc(p_audio, labels), n)]
    if text_model is not None:
        p_text = np.stack([d.p_text for d in decisions])
        rows.append(_row("text", split, opts, 1.0, recording_auc(p_text, labels), n))
        if opts.lam is None:
            sweep, lam = sweep_lambda(p_audio, p_text, labels)
            auc = dict(sweep)[lam]
        else:
            lam = opts.lam
            auc = recording_auc(fuse(p_audio, p_text, lam), labels)
        rows.append(_row("fused", split, opts, lam, auc, n))
    return rows


def lambda_sweep(corpus: Corpus, split: str, checkpoint, text_model,
                 opts: EvalOptions | None = None, grid=None) -> list[dict]:
    opts = opts or EvalOptions()
    params = resolve_params(checkpoint)
    decisions = decide(corpus, corpus.split(split), params, text_model, opts)
    labels = np.array([d.label for d in decisions])
    sweep, _ = sweep_lambda(np.stack([d.p_audio for d in decisions]),
                            np.stack([d.p_text for d in decisions]), labels, grid)
    return [_row("fused", split, opts, lam, auc, len(decisions)) for lam, auc in sweep]


def duration_sweep(corpus: Corpus, split: str, checkpoint, text_model=None,
                   opts: EvalOptions | None = None, caps=DURATION_CAPS,
                   system: str = "audio") -> list[dict]:
    """AUC per duration cap, plus ``best_auc``: the maximum over all caps up to this one."""
    opts = opts or EvalOptions()
    caps = sorted(caps)
    params = resolve_params(checkpoint)
    rows, best = [], -np.inf
    for cap in caps:
        capped = EvalOptions(opts.roles, opts.include_silence, float(cap), opts.top_k, opts.lam)
        row = next(r for r in eval_run(corpus, split, params, text_model, capped)
                   if r["system"] == system)
        best = max(best, row["auc"])
        rows.append({**row, "best_auc": best})
    return rows


def write_metrics(rows, csv_path=None, json_path=None) -> None:
    rows = list(rows)
    if csv_path is not None:
        fields = list(METRIC_FIELDS) + sorted({k for r in rows for k in r} - set(METRIC_FIELDS))
        with open(csv_path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.DictWriter(fh, fieldnames=fields)
            writer.writeheader()
            writer.writerows(rows)
    if json_path is not None:
        with open(json_path, "w", encoding="utf-8") as fh:
            json.dump(rows, fh, indent=2)
