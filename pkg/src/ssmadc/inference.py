"""Recording-level decisions from segment scores, transcripts and late fusion."""
from __future__ import annotations

import json
import re
import urllib.request
from dataclasses import dataclass, field
from typing import Callable, Protocol, Sequence

import numpy as np
from scipy.optimize import minimize
from scipy.special import expit, log_softmax, softmax

from .evaluation.metrics import recording_auc
from .segmentation import Segment
from .ssm.model import ModelParams, backbone_forward

TASK_DESCRIPTION = ("You are a helpful assistant that classifies if a participant "
                    "in an interview has dementia")
ROLE_LABELS = {"interviewer": "Interviewer", "participant": "Participant"}
K_GRID = (1, 3, 5, 9, None)  # None = all segments


@dataclass(frozen=True)
class SegmentPrediction:
    probs: np.ndarray
    segment: Segment | None = None
    index: int = 0

    @property
    def peak(self) -> float:
        return float(np.max(self.probs))

    @property
    def start(self) -> float:
        return self.segment.start if self.segment is not None else float(self.index)


@dataclass
class RecordingDecision:
    recording_id: str
    p_audio: np.ndarray
    p_text: np.ndarray | None = None
    lam: float = 0.0
    selected_segments: list = field(default_factory=list)
    label: int | None = None

    @property
    def p_fused(self) -> np.ndarray:
        if self.p_text is None:
            return self.p_audio
        return fuse(self.p_audio, self.p_text, self.lam)

    def to_json(self) -> dict:
        def arr(a):
            return None if a is None else [float(x) for x in a]
        return {"recording_id": self.recording_id, "p_audio": arr(self.p_audio),
                "p_text": arr(self.p_text), "lambda": self.lam, "p_fused": arr(self.p_fused),
                "selected_segments": self.selected_segments, "label": self.label}


def write_decisions_jsonl(path, decisions) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for d in decisions:
            fh.write(json.dumps(d.to_json()) + "\n")


def read_decisions_jsonl(path) -> list[RecordingDecision]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            d = json.loads(line)
            p_text = None if d["p_text"] is None else np.array(d["p_text"])
            out.append(RecordingDecision(d["recording_id"], np.array(d["p_audio"]), p_text,
                                         d["lambda"], d["selected_segments"], d["label"]))
    return out


# ------------------------------------------------------------- audio branch

def logits_to_probs(logits, head: str = "softmax") -> np.ndarray:
    logits = np.asarray(logits, dtype=np.float64)
    if head == "sigmoid":
        p = expit(logits[1])
        return np.array([1.0 - p, p])
    return softmax(logits)


def segment_probs(segments, params: ModelParams) -> list[SegmentPrediction]:
    """Class probabilities per segment, in input order.

    ``segments`` holds feature matrices or objects with ``.features`` (and
    optionally ``.segment``).
    """
    preds = []
    for i, item in enumerate(segments):
        feats = getattr(item, "features", item)
        logits = backbone_forward(feats, params)
        preds.append(SegmentPrediction(logits_to_probs(logits, params.config.head),
                                       getattr(item, "segment", None), i))
    return preds


def top_k(preds: Sequence[SegmentPrediction], k: int | None) -> list[SegmentPrediction]:
    """Highest-peak predictions first; equal peaks go to the earlier segment."""
    if not preds:
        raise ValueError("no segment predictions to vote over")
    if k is not None and k < 1:
        raise ValueError("k must be >= 1")
    ranked = sorted(preds, key=lambda p: (-p.peak, p.start))
    return ranked if k is None else ranked[:k]


def selective_vote(preds: Sequence[SegmentPrediction], k: int | None = None) -> np.ndarray:
    """Soft vote (mean probability) over the ``k`` most confident segments; ``None`` = all."""
    chosen = top_k(preds, k)
    if len(chosen) == len(preds):
        chosen = preds  # keep input order so k >= N is the plain mean bit for bit
    return np.mean([p.probs for p in chosen], axis=0)


def merge_3to2(p3) -> np.ndarray:
    """(normal, MCI, dementia) -> (normal, impaired)."""
    p3 = np.asarray(p3, dtype=np.float64)
    if p3.shape[-1] != 3:
        raise ValueError("expected a 3-class probability vector")
    return np.stack([p3[..., 0], p3[..., 1] + p3[..., 2]], axis=-1)


def fuse(p_audio, p_text, lam: float) -> np.ndarray:
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"fusion weight must lie in [0, 1], got {lam}")
    p_audio = np.asarray(p_audio, dtype=np.float64)
    p_text = np.asarray(p_text, dtype=np.float64)
    if lam == 0.0:
        return p_audio.copy()
    if lam == 1.0:
        return p_text.copy()
    return (1.0 - lam) * p_audio + lam * p_text


def sweep_lambda(p_audio, p_text, labels, grid=None) -> tuple[list[tuple[float, float]], float]:
    """AUC of the fused scores for each fusion weight; returns (rows, best weight).

    Ties in AUC resolve to the smaller weight.
    """
    grid = np.round(np.linspace(0.0, 1.0, 11), 10) if grid is None else grid
    labels = np.asarray(labels)
    if np.unique(labels).size < 2:
        raise ValueError("need at least two classes among labels")
    p_audio = np.asarray(p_audio, dtype=np.float64)
    p_text = np.asarray(p_text, dtype=np.float64)
    rows = [(float(lam), recording_auc(fuse(p_audio, p_text, float(lam)), labels))
            for lam in grid]
    best = max(rows, key=lambda r: (r[1], -r[0]))[0]
    return rows, best


def tune_k(preds_by_recording: dict, labels: dict, grid=K_GRID):
    """Pick the vote size with the best validation AUC (ties -> earlier grid entry)."""
    ids = sorted(preds_by_recording)
    y = [labels[r] for r in ids]
    best_k, best_auc = grid[0], -1.0
    for k in grid:
        probs = np.stack([selective_vote(preds_by_recording[r], k) for r in ids])
        auc = recording_auc(probs, y)
        if auc > best_auc:
            best_k, best_auc = k, auc
    return best_k, best_auc


# -------------------------------------------------------------- text branch

@dataclass
class Transcript:
    lines: list = field(default_factory=list)  # (role label, text)

    def render(self) -> str:
        return "\n".join(f"{role}: {text}".rstrip() for role, text in self.lines)


def build_transcript(turns, texts: Sequence[str] | None = None) -> Transcript:
    """Time-ordered ``Role: text`` lines; roles come from role assignment, not speaker ids."""
    texts = [getattr(t, "text", "") for t in turns] if texts is None else list(texts)
    if len(texts) != len(turns):
        raise ValueError("need exactly one text per turn")
    lines = []
    for turn, text in sorted(zip(turns, texts), key=lambda p: p[0].start):
        if turn.role not in ROLE_LABELS:
            raise ValueError(f"turn at {turn.start:.2f}s has no assigned role")
        lines.append((ROLE_LABELS[turn.role], text))
    return Transcript(lines)


def build_prompt(transcript, labels: Sequence[str]) -> str:
    if not labels:
        raise ValueError("label set must not be empty")
    body = transcript.render() if isinstance(transcript, Transcript) else str(transcript)
    return "\n".join([TASK_DESCRIPTION, body, ", ".join(labels), "Answer:"])


def tokenize(text: str) -> list[str]:
    return re.findall(r"[a-z0-9']+", text.lower())


class TextClassifier(Protocol):
    n_classes: int

    def predict_proba(self, text: str) -> np.ndarray: ...


class BagOfWordsClassifier:
    """Multinomial logistic regression on length-normalized unigram counts."""

    def __init__(self, n_classes: int = 2, l2: float = 1e-3):
        self.n_classes = n_classes
        self.l2 = l2
        self.vocab: dict = {}
        self.W: np.ndarray | None = None
        self.b: np.ndarray | None = None

    def _features(self, texts) -> np.ndarray:
        X = np.zeros((len(texts), len(self.vocab)))
        for i, text in enumerate(texts):
            toks = tokenize(text)
            for tok in toks:
                j = self.vocab.get(tok)
                if j is not None:
                    X[i, j] += 1.0
            if toks:
                X[i] /= len(toks)
        return X

    def fit(self, texts: Sequence[str], labels: Sequence[int]) -> "BagOfWordsClassifier":
        labels = np.asarray(labels, dtype=int)
        if len(texts) == 0 or np.unique(labels).size < 2:
            raise ValueError("need texts from at least two classes")
        self.vocab = {tok: i for i, tok in enumerate(sorted({t for s in texts for t in tokenize(s)}))}
        X = self._features(texts)
        Y = np.eye(self.n_classes)[labels]
        n, d = X.shape
        C = self.n_classes

        def objective(theta):
            W = theta[:d * C].reshape(d, C)
            b = theta[d * C:]
            logp = log_softmax(X @ W + b, axis=1)
            loss = -np.sum(Y * logp) / n + 0.5 * self.l2 * np.sum(W * W)
            G = (np.exp(logp) - Y) / n
            return loss, np.concatenate([(X.T @ G + self.l2 * W).ravel(), G.sum(axis=0)])

        res = minimize(objective, np.zeros(d * C + C), jac=True, method="L-BFGS-B",
                       options={"maxiter": 500})
        self.W = res.x[:d * C].reshape(d, C)
        self.b = res.x[d * C:]
        return self

    def predict_proba(self, text) -> np.ndarray:
        if self.W is None:
            raise RuntimeError("text classifier has not been trained")
        text = text.render() if isinstance(text, Transcript) else text
        if not tokenize(text):
            return np.full(self.n_classes, 1.0 / self.n_classes)
        return softmax(self._features([text])[0] @ self.W + self.b)

    def to_json(self) -> dict:
        vocab = sorted(self.vocab, key=self.vocab.get)
        return {"kind": "bag_of_words", "n_classes": self.n_classes, "l2": self.l2,
                "vocab": vocab, "W": self.W.tolist(), "b": self.b.tolist()}

    @classmethod
    def from_json(cls, d: dict) -> "BagOfWordsClassifier":
        clf = cls(d["n_classes"], d["l2"])
        clf.vocab = {tok: i for i, tok in enumerate(d["vocab"])}
        clf.W = np.asarray(d["W"], dtype=np.float64).reshape(len(clf.vocab), clf.n_classes)
        clf.b = np.asarray(d["b"], dtype=np.float64)
        return clf

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json(), fh)

    @classmethod
    def load(cls, path) -> "BagOfWordsClassifier":
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(json.load(fh))


class PromptTextClassifier:
    """Scores transcripts through an external completion backend.

    ``backend(prompt, labels)`` returns a log-score per label (e.g. the
    log-probability of each label's first token); scores are normalized with
    a softmax over the label set.  Backend errors propagate.
    """

    def __init__(self, backend: Callable[[str, list], dict], labels: Sequence[str]):
        self.backend = backend
        self.labels = list(labels)
        self.n_classes = len(self.labels)

    def predict_proba(self, text) -> np.ndarray:
        prompt = build_prompt(text, self.labels)
        scores = self.backend(prompt, self.labels)
        missing = [lab for lab in self.labels if lab not in scores]
        if missing:
            raise ValueError(f"backend returned no score for labels {missing}")
        return softmax(np.array([float(scores[lab]) for lab in self.labels]))


class HttpCompletionBackend:
    """POSTs ``{"prompt", "labels"}`` as JSON; expects ``{"scores": {label: log_score}}``."""

    def __init__(self, url: str, timeout: float = 30.0):
        self.url = url
        self.timeout = timeout

    def __call__(self, prompt: str, labels: list) -> dict:
        body = json.dumps({"prompt": prompt, "labels": list(labels)}).encode()
        req = urllib.request.Request(self.url, data=body,
                                     headers={"Content-Type": "application/json"})
        with urllib.request.urlopen(req, timeout=self.timeout) as resp:
            payload = json.loads(resp.read())
        if "scores" not in payload:
            raise ValueError(f"malformed completion response: {payload!r}")
        return payload["scores"]


def text_score(transcripts, classifier: TextClassifier, k: int | None = None) -> np.ndarray:
    """Recording-level text probabilities: one transcript, or a selective vote over segments."""
    if isinstance(transcripts, (str, Transcript)):
        return classifier.predict_proba(transcripts)
    transcripts = list(transcripts)
    if not transcripts:
        return np.full(classifier.n_classes, 1.0 / classifier.n_classes)
    preds = [SegmentPrediction(classifier.predict_proba(t), None, i)
             for i, t in enumerate(transcripts)]
    return selective_vote(preds, k)
