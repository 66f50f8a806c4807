"""Speech chunking, speaker roles and bounded-length segment packing.

A recording is first cut into chunks (energy VAD, or speaker turns from a
diarizer), then consecutive chunks are packed greedily into segments no
longer than ``max_dur`` seconds of wall-clock span.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Sequence

import numpy as np

from .audio import Waveform

ROLES = ("interviewer", "participant")
INTERVIEWER_MIN_DUR = 0.020
_EPS = 1e-9


@dataclass(frozen=True)
class Chunk:
    start: float
    end: float
    kind: str = "speech"  # speech | silence

    def __post_init__(self):
        if not (0 <= self.start < self.end):
            raise ValueError(f"invalid chunk bounds [{self.start}, {self.end}]")
        if self.kind not in ("speech", "silence"):
            raise ValueError(f"unknown chunk kind {self.kind!r}")

    @property
    def duration(self) -> float:
        return self.end - self.start


@dataclass(frozen=True)
class SpeakerTurn:
    start: float
    end: float
    speaker_id: str
    role: str = "unassigned"
    text: str = ""

    def __post_init__(self):
        if not self.start < self.end:
            raise ValueError(f"invalid turn bounds [{self.start}, {self.end}]")
        if self.role not in ROLES + ("unassigned",):
            raise ValueError(f"unknown role {self.role!r}")

    kind = "speech"

    @property
    def duration(self) -> float:
        return self.end - self.start


@dataclass(frozen=True)
class Segment:
    start: float
    end: float
    source_chunks: tuple = ()
    roles_included: frozenset = frozenset()
    recording_id: str = ""

    @property
    def duration(self) -> float:
        return self.end - self.start

    @property
    def spans(self) -> list[tuple[float, float]]:
        """Time ranges that carry the segment's audio (gaps between filtered chunks excluded)."""
        return [(c.start, c.end) for c in self.source_chunks]

    @property
    def kind(self) -> str:
        kinds = {c.kind for c in self.source_chunks}
        return kinds.pop() if len(kinds) == 1 else "mixed"

    def to_json(self) -> dict:
        return {"recording_id": self.recording_id, "start": self.start, "end": self.end,
                "roles": sorted(self.roles_included), "kind": self.kind}


@dataclass(frozen=True)
class VadConfig:
    frame: float = 0.03
    energy_threshold: float = 0.1  # fraction of the median active-frame energy
    hangover: int = 10  # silence runs of at most this many frames inside speech are bridged
    min_speech: float = 0.1
    abs_floor: float = 1e-7  # frames at or below this mean-square energy never count as speech

    def __post_init__(self):
        if min(self.frame, self.energy_threshold, self.hangover,
               self.min_speech, self.abs_floor) <= 0:
            raise ValueError("all VadConfig fields must be positive")


def _runs(mask: np.ndarray) -> list[tuple[int, int, bool]]:
    """Maximal runs of equal values as (start, stop, value)."""
    if mask.size == 0:
        return []
    change = np.flatnonzero(mask[1:] != mask[:-1]) + 1
    bounds = np.concatenate([[0], change, [mask.size]])
    return [(int(a), int(b), bool(mask[a])) for a, b in zip(bounds[:-1], bounds[1:])]


def energy_vad(w: Waveform, cfg: VadConfig | None = None) -> list[Chunk]:
    """Label fixed frames as speech when their energy clears a median-relative threshold.

    The reference level is the median energy over frames above ``abs_floor``;
    digitally silent frames would otherwise drag the median to zero.
    """
    cfg = cfg or VadConfig()
    sr = w.sample_rate
    hop = max(1, int(round(cfg.frame * sr)))
    n = w.samples.size
    n_frames = -(-n // hop)
    padded = np.zeros(n_frames * hop)
    padded[:n] = w.samples
    counts = np.full(n_frames, hop, dtype=np.float64)
    counts[-1] = n - (n_frames - 1) * hop
    energy = (padded.reshape(n_frames, hop) ** 2).sum(axis=1) / counts

    active = energy > cfg.abs_floor
    if active.any():
        thr = max(cfg.energy_threshold * float(np.median(energy[active])), cfg.abs_floor)
        speech = energy > thr
    else:
        speech = np.zeros(n_frames, dtype=bool)

    for a, b, val in _runs(speech):
        if not val and a > 0 and b < n_frames and b - a <= cfg.hangover:
            speech[a:b] = True
    min_frames = cfg.min_speech / cfg.frame
    for a, b, val in _runs(speech):
        if val and b - a < min_frames - _EPS:
            speech[a:b] = False

    duration = n / sr
    chunks = []
    for a, b, val in _runs(speech):
        end = duration if b == n_frames else b * hop / sr
        chunks.append(Chunk(a * hop / sr, end, "speech" if val else "silence"))
    return chunks


def assign_roles(turns: Sequence[SpeakerTurn]) -> list[SpeakerTurn]:
    """First speaker whose turn lasts more than 20 ms is the interviewer; everyone else participates."""
    interviewer = next((t.speaker_id for t in turns
                        if t.duration > INTERVIEWER_MIN_DUR + _EPS), None)
    return [replace(t, role="interviewer" if t.speaker_id == interviewer else "participant")
            for t in turns]


def validate_turns(turns: Sequence[SpeakerTurn]) -> None:
    for prev, cur in zip(turns, turns[1:]):
        if cur.start < prev.end - _EPS:
            raise ValueError(f"turns overlap or are out of order: {prev} / {cur}")


def oracle_diarize(entry) -> list[SpeakerTurn]:
    """Ground-truth turns from a manifest entry (dict or object with ``turns``)."""
    raw = entry.get("turns") if isinstance(entry, dict) else getattr(entry, "turns", None)
    if raw is None:
        raise ValueError("manifest entry carries no turn annotations")
    turns = []
    for t in raw:
        if isinstance(t, SpeakerTurn):
            turns.append(replace(t, role="unassigned"))
        elif isinstance(t, dict):
            turns.append(SpeakerTurn(float(t["start"]), float(t["end"]),
                                     str(t["speaker_id"]), text=t.get("text", "")))
        else:
            start, end, speaker, *rest = t
            turns.append(SpeakerTurn(float(start), float(end), str(speaker),
                                     text=rest[0] if rest else ""))
    validate_turns(turns)
    return turns


def with_silence_gaps(turns: Sequence[SpeakerTurn], duration: float) -> list:
    """Interleave silence chunks into the gaps between (and around) speaker turns."""
    out: list = []
    t = 0.0
    for turn in turns:
        if turn.start > t + _EPS:
            out.append(Chunk(t, turn.start, "silence"))
        out.append(turn)
        t = turn.end
    if duration > t + _EPS:
        out.append(Chunk(t, duration, "silence"))
    return out


def chunk_filter(roles: str = "both", include_silence: bool = True) -> Callable:
    """Predicate for the silence and speaker-role ablations."""
    if roles not in ("both",) + ROLES:
        raise ValueError(f"roles must be both|interviewer|participant, got {roles!r}")

    def keep(c) -> bool:
        if c.kind == "silence":
            return include_silence
        if roles == "both":
            return True
        if not isinstance(c, SpeakerTurn):
            raise ValueError("role filtering needs diarized speaker turns")
        return c.role == roles

    return keep


def merge_segments(chunks: Iterable, max_dur: float = 360.0,
                   keep: Callable | None = None, recording_id: str = "") -> list[Segment]:
    """Greedy left-to-right packing of consecutive chunks into segments of span <= max_dur.

    Chunks rejected by ``keep`` are skipped; their time still counts toward
    the span of a segment that straddles them.  A chunk longer than
    ``max_dur`` is cut at ``max_dur`` boundaries.
    """
    if max_dur <= 0:
        raise ValueError("max_dur must be positive")
    segments: list[Segment] = []
    current: list = []

    def close():
        if current:
            roles = frozenset(c.role if isinstance(c, SpeakerTurn) else "unassigned"
                              for c in current if c.kind == "speech")
            segments.append(Segment(current[0].start, current[-1].end, tuple(current),
                                    roles, recording_id))
            current.clear()

    for c in chunks:
        if keep is not None and not keep(c):
            continue
        if current and c.end - current[0].start <= max_dur + _EPS:
            current.append(c)
            continue
        close()
        start = c.start
        while c.end - start > max_dur + _EPS:
            current.append(replace(c, start=start, end=start + max_dur))
            close()
            start += max_dur
        current.append(c if start == c.start else replace(c, start=start))
    close()
    return segments


def write_segments_jsonl(path, segments: Iterable[Segment]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for s in segments:
            fh.write(json.dumps(s.to_json()) + "\n")


def read_segments_jsonl(path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]
