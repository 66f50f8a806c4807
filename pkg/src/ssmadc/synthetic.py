"""Deterministic synthetic "interview recordings" with class-dependent cues.

Each recording alternates interviewer and participant turns separated by
pauses.  Speech is a harmonic tone complex with syllable-rate amplitude
modulation plus noise; pauses carry a faint noise floor.  Class cues:

* pause fraction of the recording (strongest, audio),
* participant pitch centre (weak, audio),
* interviewer syllable rate, slower for impaired classes (weak, audio),
* filler-token rate in the participant's transcript (text).

Everything is a function of ``(label, seed, config)``.
"""
from __future__ import annotations

import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .audio import Waveform, write_wav

CLASS_NAMES = {2: ("normal", "dementia"), 3: ("normal", "mci", "dementia")}
SPLITS = ("train", "validation", "test")


@dataclass(frozen=True)
class ClassProfile:
    pause_fraction: float
    pitch_center: float  # Hz
    filler_rate: float  # fraction of participant tokens that are fillers
    prompt_rate: float  # interviewer syllables per second


DEFAULT_PROFILES = {
    "normal": ClassProfile(0.10, 150.0, 0.05, 5.0),
    "mci": ClassProfile(0.25, 140.0, 0.12, 4.25),
    "dementia": ClassProfile(0.40, 130.0, 0.20, 3.5),
}

CONTENT_WORDS = (
    "the a house garden river window doctor morning table chair remember went "
    "store bought bread yesterday sister brother car drove city park walked dog "
    "kitchen cooked dinner friends visited summer winter picture boy girl cookie "
    "jar mother sink water overflowing stool falling reaching plate curtain "
    "outside tree grass sunny school read book letter phone called name street"
).split()
QUESTION_WORDS = (
    "can you tell me what do see here please describe picture now next "
    "repeat these words after how many remember the story again try"
).split()
FILLERS = ("uh", "um", "er", "hmm")


@dataclass(frozen=True)
class GenConfig:
    classes: int = 2
    recordings_per_class: int = 40
    duration: float = 120.0
    sample_rate: int = 16000
    seed: int = 0
    profiles: dict = field(default_factory=lambda: dict(DEFAULT_PROFILES))
    turn_period: float = 6.0  # mean speech-turn length, seconds
    pitch_jitter: float = 8.0  # per-recording std of participant pitch, Hz
    interviewer_pitches: tuple = (190.0, 205.0, 215.0, 225.0, 240.0, 255.0)
    speech_rms: float = 0.1
    speech_snr_db: float = 20.0
    noise_floor: float = 2e-4  # std of the pause noise
    words_per_second: float = 2.0
    recordings_per_participant: int = 1
    split_fractions: tuple = (0.8, 0.1, 0.1)

    def __post_init__(self):
        if self.classes not in CLASS_NAMES:
            raise ValueError(f"classes must be 2 or 3, got {self.classes}")
        missing = set(self.class_names) - set(self.profiles)
        if missing:
            raise ValueError(f"no profile for classes {sorted(missing)}")
        pauses = [self.profiles[c].pause_fraction for c in self.class_names]
        if any(not 0 <= p < 1 for p in pauses):
            raise ValueError("pause_fraction must lie in [0, 1)")
        if len(set(pauses)) != len(pauses):
            raise ValueError("pause fractions must differ between classes")
        if self.duration <= 0 or self.sample_rate <= 0 or self.recordings_per_class < 1:
            raise ValueError("duration, sample_rate and recordings_per_class must be positive")

    @property
    def class_names(self) -> tuple:
        return CLASS_NAMES[self.classes]

    def profile(self, label: int) -> ClassProfile:
        if not 0 <= label < self.classes:
            raise ValueError(f"label {label} invalid for a {self.classes}-class corpus")
        return self.profiles[self.class_names[label]]


@dataclass
class ManifestEntry:
    recording_id: str
    wav: str
    label: int
    label_name: str
    split: str
    participant_id: str
    interviewer_id: str
    duration: float
    sample_rate: int
    turns: list  # dicts with start, end, speaker_id, text

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, d: dict) -> "ManifestEntry":
        return cls(**d)

    @property
    def silence_fraction(self) -> float:
        speech = sum(t["end"] - t["start"] for t in self.turns)
        return 1.0 - speech / self.duration


def recording_seed(global_seed: int, index: int) -> int:
    return int(np.random.SeedSequence([global_seed, index]).generate_state(1)[0])


def _timeline(rng, cfg: GenConfig, pause_fraction: float) -> list[tuple[float, float]]:
    """Turn (start, end) times whose pauses add up to the requested fraction."""
    total_speech = (1.0 - pause_fraction) * cfg.duration
    n_turns = max(2, int(round(total_speech / cfg.turn_period)))
    speech = total_speech * rng.dirichlet(np.full(n_turns, 4.0))
    gaps = pause_fraction * cfg.duration * rng.dirichlet(np.full(n_turns + 1, 2.0))
    bounds = []
    t = 0.0
    for k in range(n_turns):
        t += gaps[k]
        start = round(t, 3)
        t += speech[k]
        bounds.append((float(start), float(round(t, 3))))
    return [(s, e) for s, e in bounds if e > s]


def _wavetable(f0: float, sr: int, size: int = 2048) -> np.ndarray:
    phase = np.arange(size) / size * 2 * np.pi
    table = np.zeros(size)
    for h in range(1, int(min(4000.0, sr / 2 - 1) // f0) + 1):
        table += np.sin(h * phase) / h
    return table / np.sqrt(np.mean(table ** 2))


def _voice(rng, n: int, f0: float, syllable_rate: float, cfg: GenConfig) -> np.ndarray:
    sr = cfg.sample_rate
    t = np.arange(n) / sr
    inst_f0 = f0 * (1.0 + 0.02 * np.sin(2 * np.pi * 0.7 * t + rng.uniform(0, 2 * np.pi)))
    phase = (np.cumsum(inst_f0) / sr + rng.uniform()) % 1.0
    table = _wavetable(f0, sr)
    tone = np.interp(phase * table.size, np.arange(table.size + 1), np.append(table, table[0]))
    envelope = 0.55 + 0.45 * np.sin(2 * np.pi * syllable_rate * t + rng.uniform(0, 2 * np.pi))
    voiced = cfg.speech_rms * tone * envelope
    noise_std = cfg.speech_rms * 10 ** (-cfg.speech_snr_db / 20)
    return voiced + rng.normal(0.0, noise_std, n)


def _words(rng, n: int, vocab) -> list[str]:
    return [vocab[i] for i in rng.integers(len(vocab), size=n)]


def generate_recording(label: int, seed: int, cfg: GenConfig | None = None,
                       recording_id: str = "rec", participant_id: str = "P0",
                       ) -> tuple[Waveform, ManifestEntry]:
    cfg = cfg or GenConfig()
    prof = cfg.profile(label)
    rng = np.random.default_rng(seed)
    sr = cfg.sample_rate
    n_total = int(round(cfg.duration * sr))
    interviewer_idx = int(rng.integers(len(cfg.interviewer_pitches)))
    interviewer_id = f"I{interviewer_idx:02d}"
    pitch = prof.pitch_center + rng.normal(0.0, cfg.pitch_jitter)
    syllable_rate = rng.uniform(3.5, 4.5)

    samples = rng.normal(0.0, cfg.noise_floor, n_total)
    bounds = _timeline(rng, cfg, prof.pause_fraction)
    speakers = []
    for k, (start, end) in enumerate(bounds):
        i0, i1 = int(round(start * sr)), min(n_total, int(round(end * sr)))
        if k % 2 == 0:
            speakers.append(interviewer_id)
            voice = _voice(rng, i1 - i0, cfg.interviewer_pitches[interviewer_idx],
                           prof.prompt_rate, cfg)
        else:
            speakers.append(participant_id)
            voice = _voice(rng, i1 - i0, pitch, syllable_rate, cfg)
        samples[i0:i1] = voice
    samples = np.clip(samples, -1.0, 32767 / 32768)

    # Text: participant fillers placed at an exact count over the whole recording.
    n_tokens = [max(1, int(round(cfg.words_per_second * (e - s)))) for s, e in bounds]
    part_idx = [k for k, spk in enumerate(speakers) if spk == participant_id]
    n_part = sum(n_tokens[k] for k in part_idx)
    is_filler = np.zeros(n_part, dtype=bool)
    is_filler[rng.choice(n_part, size=int(round(prof.filler_rate * n_part)), replace=False)] = True
    part_tokens = [FILLERS[rng.integers(len(FILLERS))] if f else CONTENT_WORDS[rng.integers(len(CONTENT_WORDS))]
                   for f in is_filler]
    texts, offset = [], 0
    for k, spk in enumerate(speakers):
        if spk == participant_id:
            texts.append(" ".join(part_tokens[offset:offset + n_tokens[k]]))
            offset += n_tokens[k]
        else:
            texts.append(" ".join(_words(rng, n_tokens[k], QUESTION_WORDS)))

    turns = [{"start": s, "end": e, "speaker_id": spk, "text": txt}
             for (s, e), spk, txt in zip(bounds, speakers, texts)]
    entry = ManifestEntry(recording_id, "", label, cfg.class_names[label], "", participant_id,
                          interviewer_id, n_total / sr, sr, turns)
    return Waveform(samples, sr), entry


def filler_fraction(entry: ManifestEntry) -> float:
    tokens = [tok for t in entry.turns if t["speaker_id"] == entry.participant_id
              for tok in t["text"].split()]
    return sum(tok in FILLERS for tok in tokens) / max(1, len(tokens))


def assign_splits(participants_by_class: dict, fractions, seed: int) -> dict:
    """Map participant id -> split, stratified by class."""
    rng = np.random.default_rng([seed, 7])
    out = {}
    for label in sorted(participants_by_class):
        ids = sorted(participants_by_class[label])
        ids = [ids[i] for i in rng.permutation(len(ids))]
        n = len(ids)
        n_train = int(round(fractions[0] * n))
        n_val = int(round(fractions[1] * n))
        if n >= 3:
            n_val = max(1, n_val)
            n_train = min(n_train, n - n_val - 1)
        for i, pid in enumerate(ids):
            out[pid] = SPLITS[0] if i < n_train else SPLITS[1] if i < n_train + n_val else SPLITS[2]
    return out


def _plan(cfg: GenConfig) -> list[tuple[int, int, str, str]]:
    """(index, label, recording_id, participant_id) for every recording."""
    plan = []
    for label in range(cfg.classes):
        for j in range(cfg.recordings_per_class):
            i = label * cfg.recordings_per_class + j
            pid = f"P{label}{j // cfg.recordings_per_participant:04d}"
            plan.append((i, label, f"rec{i:04d}", pid))
    return plan


def _generate_one(args):
    cfg, out_dir, (i, label, rec_id, pid) = args
    w, entry = generate_recording(label, recording_seed(cfg.seed, i), cfg, rec_id, pid)
    rel = f"wav/{rec_id}.wav"
    write_wav(Path(out_dir) / rel, w)
    entry.wav = rel
    return entry


def generate_dataset(cfg: GenConfig, out_dir, workers: int = 1) -> Path:
    """Write ``wav/*.wav`` and ``manifest.jsonl`` under ``out_dir``; returns the manifest path."""
    out_dir = Path(out_dir)
    (out_dir / "wav").mkdir(parents=True, exist_ok=True)
    plan = _plan(cfg)
    jobs = [(cfg, str(out_dir), p) for p in plan]
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            entries = list(pool.map(_generate_one, jobs))
    else:
        entries = [_generate_one(j) for j in jobs]
    by_class: dict = {}
    for _, label, _, pid in plan:
        by_class.setdefault(label, set()).add(pid)
    splits = assign_splits(by_class, cfg.split_fractions, cfg.seed)
    entries = [replace(e, split=splits[e.participant_id]) for e in entries]
    manifest = out_dir / "manifest.jsonl"
    write_manifest(manifest, entries)
    return manifest


def write_manifest(path, entries) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for e in entries:
            fh.write(json.dumps(e.to_json(), sort_keys=True) + "\n")


def read_manifest(path) -> list[ManifestEntry]:
    with open(path, encoding="utf-8") as fh:
        return [ManifestEntry.from_json(json.loads(line)) for line in fh if line.strip()]
