"""Wall-clock and memory scaling of the scan backbone against softmax attention."""
from __future__ import annotations

import gc
import json
import time
import tracemalloc
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import softmax

from ..ssm.model import ModelConfig, backbone_forward, init_params
from ..ssm.scan import scan_state_bytes, selective_scan


@dataclass
class BenchReport:
    model: str
    lengths: list
    wall_times: list  # median seconds per forward
    peak_mem: list  # peak traced bytes during one forward
    slope: float = float("nan")
    state_bytes: list = field(default_factory=list)  # scan working state (SSM only)
    failed_at: int | None = None

    def to_json(self) -> dict:
        return asdict(self)


class AttentionBaseline:
    """Single softmax self-attention layer of matched width, mean-pooled to class logits."""

    def __init__(self, n_mels: int, width: int, n_classes: int = 2, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.W_embed = rng.uniform(-1, 1, (n_mels, width)) / np.sqrt(n_mels)
        self.W_q, self.W_k, self.W_v, self.W_o = (
            rng.uniform(-1, 1, (width, width)) / np.sqrt(width) for _ in range(4))
        self.W_head = rng.uniform(-1, 1, (width, n_classes)) / np.sqrt(width)
        self.width = width

    def __call__(self, features):
        h = np.asarray(features, dtype=np.float64) @ self.W_embed
        q, k, v = h @ self.W_q, h @ self.W_k, h @ self.W_v
        scores = q @ k.T
        scores *= 1.0 / np.sqrt(self.width)
        attn = softmax(scores, axis=1)
        del scores
        out = h + (attn @ v) @ self.W_o
        return out.mean(axis=0) @ self.W_head


def loglog_slope(lengths, times) -> float:
    return float(np.polyfit(np.log(lengths), np.log(times), 1)[0])


def _time(fn, x, repeats: int, warmup: int) -> float:
    for _ in range(warmup):
        fn(x)
    samples = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(x)
        samples.append(time.perf_counter() - t0)
    return float(np.median(samples))


def _peak(fn, x) -> int:
    gc.collect()
    tracemalloc.start()
    try:
        fn(x)
        return tracemalloc.get_traced_memory()[1]
    finally:
        tracemalloc.stop()


def scan_peak_bytes(length: int, d_inner: int, n: int, seed: int = 0) -> int:
    """Peak traced allocation of one selective_scan call, excluding its (L, d) output."""
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(length, d_inner))
    dt = rng.uniform(0.001, 0.1, size=(length, d_inner))
    A = -np.exp(rng.normal(size=(d_inner, n)))
    B = rng.normal(size=(length, n))
    C = rng.normal(size=(length, n))
    D = rng.normal(size=d_inner)
    selective_scan(x, dt, A, B, C, D)  # compile outside the traced region
    gc.collect()
    tracemalloc.start()
    try:
        y = selective_scan(x, dt, A, B, C, D)
        peak = tracemalloc.get_traced_memory()[1]
    finally:
        tracemalloc.stop()
    return peak - y.nbytes


def bench_model(name: str, fn, lengths, n_mels: int, repeats: int = 5, warmup: int = 1,
                seed: int = 0, measure_memory: bool = True) -> BenchReport:
    rng = np.random.default_rng(seed)
    report = BenchReport(name, [], [], [])
    for T in lengths:
        x = rng.normal(size=(T, n_mels))
        try:
            t = _time(fn, x, repeats, warmup)
            mem = _peak(fn, x) if measure_memory else 0
        except MemoryError:
            report.failed_at = int(T)
            break
        report.lengths.append(int(T))
        report.wall_times.append(t)
        report.peak_mem.append(int(mem))
    if len(report.lengths) >= 2:
        report.slope = loglog_slope(report.lengths, report.wall_times)
    return report


def bench_scaling(config: ModelConfig, ssm_lengths=None, attention_lengths=None,
                  repeats: int = 5, warmup: int = 1, seed: int = 0,
                  measure_memory: bool = True) -> dict:
    """Time ``backbone_forward`` and the attention baseline over increasing lengths."""
    ssm_lengths = ssm_lengths or [1024 * 2 ** i for i in range(7)]
    attention_lengths = attention_lengths or [1024 * 2 ** i for i in range(4)]
    params = init_params(config, seed)
    ssm = bench_model("ssm", lambda x: backbone_forward(x, params), ssm_lengths,
                      config.n_mels, repeats, warmup, seed, measure_memory)
    d_inner = config.expand * config.d_model
    ssm.state_bytes = [scan_peak_bytes(T, d_inner, config.d_state) for T in ssm.lengths]
    attention = AttentionBaseline(config.n_mels, config.d_model, config.n_classes, seed)
    att = bench_model("attention", attention, attention_lengths, config.n_mels,
                      repeats, warmup, seed, measure_memory)
    return {"ssm": ssm, "attention": att,
            "expected_state_bytes": scan_state_bytes(d_inner, config.d_state)}


def write_bench(path, reports: dict, data_path=None) -> None:
    payload = {k: (v.to_json() if isinstance(v, BenchReport) else v) for k, v in reports.items()}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2)
    if data_path is not None:
        with open(data_path, "w", encoding="utf-8") as fh:
            for key, rep in reports.items():
                if not isinstance(rep, BenchReport):
                    continue
                fh.write(f"# {rep.model}  slope={rep.slope:.3f}\n# T seconds peak_bytes\n")
                for T, t, m in zip(rep.lengths, rep.wall_times, rep.peak_mem):
                    fh.write(f"{T} {t:.6e} {m}\n")
                fh.write("\n\n")
