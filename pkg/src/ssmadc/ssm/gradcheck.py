"""Finite-difference verification of :func:`backbone_backward`."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import ModelConfig, backbone_backward, backbone_forward, init_params

# Gradients below this magnitude are compared in absolute terms: central
# differences at eps=1e-5 carry ~1e-11 of round-off, which swamps a true
# relative comparison for near-zero entries.
GRAD_FLOOR = 1e-5


@dataclass
class GradCheckReport:
    max_rel_error: float
    n_checked: int
    n_parameters: int
    worst: tuple = ()  # (name, index, analytic, numeric)
    per_tensor: dict = field(default_factory=dict)

    def passed(self, tol: float = 1e-4) -> bool:
        return self.max_rel_error < tol


def relative_error(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), GRAD_FLOOR)


def sample_indices(params, n_samples: int, rng) -> list[tuple[str, tuple]]:
    """At least one entry from every tensor, the rest drawn proportionally to size."""
    names = params.names()
    picks = [(name, tuple(int(rng.integers(s)) for s in params[name].shape)) for name in names]
    sizes = np.array([params[name].size for name in names], dtype=np.float64)
    for k in rng.choice(len(names), size=max(0, n_samples - len(picks)), p=sizes / sizes.sum()):
        name = names[k]
        picks.append((name, tuple(int(rng.integers(s)) for s in params[name].shape)))
    return picks


def grad_check(config: ModelConfig, seed: int = 0, n_samples: int = 200, n_frames: int = 32,
               eps: float = 1e-5, features=None, backward=backbone_backward) -> GradCheckReport:
    """Compare analytic gradients of ``logits . w`` (random ``w``) with central differences."""
    rng = np.random.default_rng(seed)
    params = init_params(config, seed)
    f = rng.normal(size=(n_frames, config.n_mels)) if features is None else np.asarray(features)
    w = rng.normal(size=config.n_classes)
    _, act = backbone_forward(f, params, train=True)
    grads = backward(act, w)

    report = GradCheckReport(0.0, 0, params.num_parameters())
    for name, idx in sample_indices(params, n_samples, rng):
        arr = params[name]
        old = arr[idx]
        arr[idx] = old + eps
        plus = backbone_forward(f, params) @ w
        arr[idx] = old - eps
        minus = backbone_forward(f, params) @ w
        arr[idx] = old
        numeric = (plus - minus) / (2 * eps)
        analytic = float(grads[name][idx])
        if not (np.isfinite(analytic) and np.isfinite(numeric)):
            err = np.inf
        else:
            err = relative_error(analytic, numeric)
        report.n_checked += 1
        report.per_tensor[name] = max(report.per_tensor.get(name, 0.0), err)
        if err >= report.max_rel_error:
            report.max_rel_error = err
            report.worst = (name, idx, analytic, numeric)
    return report
