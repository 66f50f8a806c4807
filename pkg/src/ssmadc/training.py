"""Losses, Adam with warmup + per-epoch exponential decay, and the segment training loop."""
from __future__ import annotations

import dataclasses
import json
import logging
import time
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import expit, log_softmax, softmax

from .evaluation.metrics import recording_auc
from .inference import BagOfWordsClassifier, segment_probs, selective_vote
from .pipeline import Corpus, SegmentOptions
from .ssm.checkpoint import save_checkpoint
from .ssm.model import ModelConfig, ModelParams, backbone_backward, backbone_forward, init_params

log = logging.getLogger(__name__)

LOSS_KINDS = ("ce", "weighted_ce", "bce")


@dataclass(frozen=True)
class LossConfig:
    kind: str = "ce"
    class_weights: tuple | None = None  # None -> (1, 3, 3) for weighted_ce, ones otherwise

    def __post_init__(self):
        if self.kind not in LOSS_KINDS:
            raise ValueError(f"loss kind must be one of {LOSS_KINDS}, got {self.kind!r}")
        if self.class_weights is not None:
            object.__setattr__(self, "class_weights", tuple(float(w) for w in self.class_weights))
            if min(self.class_weights) <= 0:
                raise ValueError("class weights must be positive")

    def weights(self, n_classes: int) -> np.ndarray:
        if self.class_weights is not None:
            if len(self.class_weights) != n_classes:
                raise ValueError(f"{len(self.class_weights)} class weights for {n_classes} classes")
            return np.asarray(self.class_weights)
        if self.kind == "weighted_ce" and n_classes == 3:
            return np.array([1.0, 3.0, 3.0])
        return np.ones(n_classes)


@dataclass(frozen=True)
class OptimConfig:
    lr0: float = 1e-5
    beta1: float = 0.95
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 5e-7
    batch_size: int = 1
    epochs: int = 40
    warmup_steps: int = 1000
    decay_factor: float = 0.5
    decay_start_epoch: int = 10

    def __post_init__(self):
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("betas must lie in (0, 1)")
        if self.lr0 < 0 or self.eps <= 0 or self.weight_decay < 0:
            raise ValueError("lr0, eps and weight_decay must be non-negative (eps > 0)")
        if self.batch_size < 1 or self.epochs < 1 or self.warmup_steps < 0:
            raise ValueError("batch_size and epochs must be >= 1, warmup_steps >= 0")
        if not 0 < self.decay_factor <= 1:
            raise ValueError("decay_factor must lie in (0, 1]")


def loss(logits, label: int, cfg: LossConfig | None = None) -> tuple[float, np.ndarray]:
    """Loss value and its gradient w.r.t. the logits."""
    cfg = cfg or LossConfig()
    z = np.asarray(logits, dtype=np.float64)
    C = z.size
    if not 0 <= label < C:
        raise ValueError(f"label {label} out of range for {C} classes")
    w = cfg.weights(C)[label]
    if cfg.kind == "bce":
        if C != 2:
            raise ValueError("BCE needs exactly 2 classes")
        s = z[1]
        value = w * (np.logaddexp(0.0, s) - label * s)
        return float(value), np.array([0.0, w * (expit(s) - label)])
    logp = log_softmax(z)
    grad = softmax(z)
    grad[label] -= 1.0
    return float(-w * logp[label]), w * grad


def lr_at(step: int, epoch: int, cfg: OptimConfig) -> float:
    """Linear warmup over ``warmup_steps``, then halving once per epoch from ``decay_start_epoch``."""
    if step < 0:
        raise ValueError("step must be non-negative")
    if step < cfg.warmup_steps:
        return cfg.lr0 * (step + 1) / cfg.warmup_steps
    return cfg.lr0 * cfg.decay_factor ** max(0, epoch - cfg.decay_start_epoch + 1)


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0


def adam_step(params, grads: dict, state: AdamState, lr: float, cfg: OptimConfig) -> bool:
    """In-place Adam update with decoupled weight decay; returns False if the step was skipped.

    ``params`` is a :class:`ModelParams` or a plain dict of arrays.
    """
    tensors = params.tensors if isinstance(params, ModelParams) else params
    if any(not np.all(np.isfinite(g)) for g in grads.values()):
        log.warning("non-finite gradient at step %d; skipping update", state.step)
        return False
    state.step += 1
    t = state.step
    bc1 = 1.0 - cfg.beta1 ** t
    bc2 = 1.0 - cfg.beta2 ** t
    for name, g in grads.items():
        theta = tensors[name]
        if theta.shape != np.shape(g):
            raise ValueError(f"gradient shape {np.shape(g)} != parameter {name} {theta.shape}")
        m = state.m.setdefault(name, np.zeros_like(theta))
        v = state.v.setdefault(name, np.zeros_like(theta))
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * g * g
        theta -= lr * cfg.weight_decay * theta
        theta -= lr * (m / bc1) / (np.sqrt(v / bc2) + cfg.eps)
    if isinstance(params, ModelParams):
        params.bump()
    return True


@dataclass
class TrainResult:
    checkpoint: Path
    checkpoint_sha256: str
    metrics_log: Path
    best_val_auc: float
    best_epoch: int
    history: list
    params: ModelParams


def _check_splits(train, val):
    for name, split in (("train", train), ("validation", val)):
        if not split:
            raise ValueError(f"{name} split is empty")
        if len({e.label for e in split}) < 2:
            raise ValueError(f"{name} split contains a single class")
    shared = {e.participant_id for e in train} & {e.participant_id for e in val}
    if shared:
        raise ValueError(f"participants shared between train and validation: {sorted(shared)[:5]}")


def feature_stats(examples) -> tuple[float, float]:
    total = sum(float(np.sum(ex.features, dtype=np.float64)) for ex in examples)
    count = sum(ex.features.size for ex in examples)
    mean = total / count
    sq = sum(float(np.sum((ex.features.astype(np.float64) - mean) ** 2)) for ex in examples)
    return mean, float(np.sqrt(sq / count))


def evaluate_audio(examples, params: ModelParams, k: int | None = None):
    """Recording-level probabilities by selective vote; returns (ids, probs, labels)."""
    preds = segment_probs(examples, params)
    by_rec = defaultdict(list)
    labels = {}
    for ex, p in zip(examples, preds):
        by_rec[ex.recording_id].append(p)
        labels[ex.recording_id] = ex.label
    ids = sorted(by_rec)
    probs = np.stack([selective_vote(by_rec[r], k) for r in ids])
    return ids, probs, np.array([labels[r] for r in ids])


def train(corpus: Corpus, model_cfg: ModelConfig, loss_cfg: LossConfig, optim_cfg: OptimConfig,
          seg_opts: SegmentOptions, out_dir, seed: int = 0, k: int | None = None) -> TrainResult:
    """Segment-level training with best-validation-AUC checkpointing.

    Writes ``checkpoint.bin`` and ``metrics.jsonl`` under ``out_dir``.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    train_entries, val_entries = corpus.split("train"), corpus.split("validation")
    _check_splits(train_entries, val_entries)
    train_ex = corpus.examples(train_entries, seg_opts, model_cfg.min_frames)
    val_ex = corpus.examples(val_entries, seg_opts, model_cfg.min_frames)
    if not train_ex or not val_ex:
        raise ValueError("no usable segments in train or validation split")

    mean, std = feature_stats(train_ex)
    head = "sigmoid" if loss_cfg.kind == "bce" else "softmax"
    model_cfg = dataclasses.replace(model_cfg, feature_mean=round(mean, 6),
                                    feature_std=round(max(std, 1e-6), 6), head=head,
                                    n_classes=corpus.n_classes)
    params = init_params(model_cfg, seed)
    state = AdamState()
    rng = np.random.default_rng(seed)
    ckpt_path = out_dir / "checkpoint.bin"
    log_path = out_dir / "metrics.jsonl"
    log_path.write_text("")

    history = []
    best_auc, best_epoch, best_sha = -np.inf, -1, ""
    step = 0
    for epoch in range(optim_cfg.epochs):
        t0 = time.perf_counter()
        order = rng.permutation(len(train_ex))
        losses = []
        lr = lr_at(step, epoch, optim_cfg)
        for start in range(0, len(order), optim_cfg.batch_size):
            batch = order[start:start + optim_cfg.batch_size]
            grads: dict = {}
            for i in batch:
                ex = train_ex[i]
                logits, act = backbone_forward(ex.features, params, train=True)
                value, dlogits = loss(logits, ex.label, loss_cfg)
                losses.append(value)
                for name, g in backbone_backward(act, dlogits).items():
                    if name in grads:
                        grads[name] += g
                    else:
                        grads[name] = np.array(g)
            if len(batch) > 1:
                for g in grads.values():
                    g /= len(batch)
            lr = lr_at(step, epoch, optim_cfg)
            adam_step(params, grads, state, lr, optim_cfg)
            step += 1
        _, probs, labels = evaluate_audio(val_ex, params, k)
        val_auc = recording_auc(probs, labels)
        row = {"epoch": epoch, "step": step, "lr": lr,
               "train_loss": float(np.mean(losses)), "val_auc": val_auc}
        history.append(row)
        with open(log_path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(row) + "\n")
        if val_auc > best_auc:
            best_auc, best_epoch = val_auc, epoch
            best_sha = save_checkpoint(ckpt_path, params)
        log.info("epoch %d  loss %.4f  val_auc %.3f  (%.1fs)", epoch, row["train_loss"],
                 val_auc, time.perf_counter() - t0)
    return TrainResult(ckpt_path, best_sha, log_path, float(best_auc), best_epoch, history, params)


def train_text(corpus: Corpus, out_path, max_dur: float = 360.0,
               l2: float = 1e-3) -> BagOfWordsClassifier:
    """Fit the bag-of-words text classifier on train-split transcript segments."""
    entries = corpus.split("train")
    if not entries:
        raise ValueError("train split is empty")
    segs = corpus.text_segments(entries, max_dur)
    texts, labels = [], []
    for e in entries:
        for text in segs[e.recording_id]:
            texts.append(text)
            labels.append(e.label)
    clf = BagOfWordsClassifier(corpus.n_classes, l2).fit(texts, labels)
    clf.save(out_path)
    return clf
