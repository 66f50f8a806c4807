"""
Selective voting and late fusion
================================

"""

# %%
import numpy as np

from ssmadc.evaluation import roc_auc
from ssmadc.inference import SegmentPrediction, fuse, merge_3to2, selective_vote, sweep_lambda

segs = [SegmentPrediction(np.array(p), None, i)
        for i, p in enumerate([(0.1, 0.9), (0.6, 0.4), (0.7, 0.3), (0.5, 0.5)])]

# %%
# the two most confident segments outvote the rest
for k in (1, 2, 4):
    print(k, selective_vote(segs, k))

# %%
# three-class outputs collapse to normal vs impaired
print(merge_3to2([0.5, 0.2, 0.3]))

# %%
# fusing two imperfect scorers; lambda = 0 and 1 give back each one alone
rng = np.random.default_rng(3)
labels = np.r_[np.zeros(20, int), np.ones(20, int)]
audio = np.clip(0.5 + 0.25 * (labels - 0.5) + rng.normal(0, 0.2, 40), 0, 1)
text = np.clip(0.5 + 0.25 * (labels - 0.5) + rng.normal(0, 0.2, 40), 0, 1)
for lam in (0.0, 0.5, 1.0):
    print(lam, roc_auc(fuse(audio, text, lam), labels))

# %%
pa = np.stack([1 - audio, audio], 1)
pt = np.stack([1 - text, text], 1)
print(sweep_lambda(pa, pt, labels))
