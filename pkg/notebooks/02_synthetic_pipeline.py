"""
Synthetic corpus to recording-level AUC
=======================================

A scaled-down run: 6 recordings per class, 30 s each, one epoch.
The full-size version lives in tests/test_acceptance.py.
"""

# %%
import tempfile
from pathlib import Path

from ssmadc.evaluation.runs import EvalOptions, duration_sweep, eval_run
from ssmadc.pipeline import Corpus, SegmentOptions
from ssmadc.ssm.model import preset
from ssmadc.synthetic import GenConfig, generate_dataset
from ssmadc.training import LossConfig, OptimConfig, train, train_text

work = Path(tempfile.mkdtemp())
manifest = generate_dataset(GenConfig(recordings_per_class=6, duration=30.0, seed=1), work / "data")
corpus = Corpus(manifest)
print({s: len(corpus.split(s)) for s in ("train", "validation", "test")})

# %%
# segments for one recording: diarized turns packed into <= 10 s spans
entry = corpus.entries[0]
for seg in corpus.segments(entry, SegmentOptions(max_dur=10.0))[:4]:
    print(f"{seg.start:6.2f} {seg.end:6.2f}", sorted(seg.roles_included))

# %%
optim = OptimConfig(lr0=1e-3, epochs=1, warmup_steps=8)
result = train(corpus, preset("tiny"), LossConfig(), optim, SegmentOptions(max_dur=10.0),
               work / "run", seed=1)
text = train_text(corpus, work / "run" / "text_model.json")
print("best validation AUC", result.best_val_auc)

# %%
for row in eval_run(corpus, "test", result.checkpoint, text, EvalOptions(duration_cap=10.0)):
    print(f"{row['system']:6s} lambda={row['lambda']:.1f} AUC={row['auc']:.3f}")

# %%
for row in duration_sweep(corpus, "test", result.checkpoint, caps=(5.0, 10.0, 30.0)):
    print(f"cap {row['duration_cap']:5.0f}s  AUC {row['auc']:.3f}  best {row['best_auc']:.3f}")
