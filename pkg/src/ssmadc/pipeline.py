"""Manifest recordings -> segments -> feature matrices (and transcripts)."""
from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .audio import (FbankConfig, FbankMatrix, compute_fbank, load_fbank_cache, read_wav,
                    save_fbank_cache)
from .segmentation import (Segment, SpeakerTurn, VadConfig, assign_roles, chunk_filter,
                           energy_vad, merge_segments, oracle_diarize, with_silence_gaps)
from .synthetic import ManifestEntry, read_manifest

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SegmentOptions:
    source: str = "diarize"  # diarize | vad
    max_dur: float = 360.0
    roles: str = "both"
    include_silence: bool = True
    vad: VadConfig = field(default_factory=VadConfig)

    def __post_init__(self):
        if self.source not in ("diarize", "vad"):
            raise ValueError(f"segment source must be diarize|vad, got {self.source!r}")
        chunk_filter(self.roles, self.include_silence)
        if not self.max_dur > 0:
            raise ValueError(f"max_dur must be positive, got {self.max_dur}")
        if self.source == "vad" and self.roles != "both":
            raise ValueError("speaker-role filtering needs diarized segments (source='diarize')")


@dataclass
class SegmentExample:
    recording_id: str
    label: int
    segment: Segment
    features: np.ndarray  # (T, n_mels) float32
    text: str = ""


def frame_range(start: float, end: float, cfg: FbankConfig, n_frames: int) -> tuple[int, int]:
    """Frames lying entirely inside [start, end)."""
    i0 = math.ceil(start / cfg.frame_shift - 1e-6)
    i1 = math.floor((end - cfg.frame_length) / cfg.frame_shift + 1e-6) + 1
    return max(0, i0), min(n_frames, max(i1, 0))


def segment_features(fbank: FbankMatrix, segment: Segment, cfg: FbankConfig) -> np.ndarray:
    parts = []
    for start, end in segment.spans:
        i0, i1 = frame_range(start, end, cfg, fbank.n_frames)
        if i1 > i0:
            parts.append(fbank.values[i0:i1])
    if not parts:
        return np.zeros((0, fbank.values.shape[1]), dtype=fbank.values.dtype)
    return parts[0] if len(parts) == 1 else np.concatenate(parts)


def segment_text(segment: Segment) -> str:
    """Speaker-tagged transcript lines for the turns inside a segment."""
    from .inference import build_transcript
    turns = [c for c in segment.source_chunks if isinstance(c, SpeakerTurn)]
    return build_transcript(turns).render()


class Corpus:
    """Manifest-backed access to recordings, with per-recording fbank caching."""

    def __init__(self, manifest_path, fbank: FbankConfig | None = None, cache_dir=None,
                 workers: int = 1):
        self.manifest_path = Path(manifest_path)
        self.root = self.manifest_path.parent
        self.entries = read_manifest(self.manifest_path)
        self.by_id = {e.recording_id: e for e in self.entries}
        self.fbank_cfg = fbank or FbankConfig()
        self.cache_dir = Path(cache_dir) if cache_dir else None
        self.workers = max(1, workers)
        self._fbanks: dict = {}

    def split(self, name: str) -> list[ManifestEntry]:
        return [e for e in self.entries if e.split == name]

    @property
    def n_classes(self) -> int:
        return 1 + max(e.label for e in self.entries)

    def waveform(self, entry: ManifestEntry):
        return read_wav(self.root / entry.wav)

    def fbank(self, entry: ManifestEntry) -> FbankMatrix:
        if entry.recording_id in self._fbanks:
            return self._fbanks[entry.recording_id]
        cache = self.cache_dir / f"{entry.recording_id}.fbank" if self.cache_dir else None
        if cache is not None and cache.exists():
            fb = load_fbank_cache(cache, self.fbank_cfg.frame_shift)
        else:
            w = self.waveform(entry)
            if w.sample_rate != entry.sample_rate:
                raise ValueError(f"{entry.wav}: sample rate {w.sample_rate} != manifest "
                                 f"{entry.sample_rate}; resampling is not supported")
            fb = compute_fbank(w, self.fbank_cfg)
            if cache is not None:
                self.cache_dir.mkdir(parents=True, exist_ok=True)
                save_fbank_cache(cache, fb)
        fb = FbankMatrix(fb.values.astype(np.float32), fb.frame_times)
        self._fbanks[entry.recording_id] = fb
        return fb

    def prefetch(self, entries) -> None:
        todo = [e for e in entries if e.recording_id not in self._fbanks]
        if self.workers > 1 and len(todo) > 1:
            with ThreadPoolExecutor(self.workers) as pool:
                list(pool.map(self.fbank, todo))
        else:
            for e in todo:
                self.fbank(e)

    def chunks(self, entry: ManifestEntry, opts: SegmentOptions) -> list:
        if opts.source == "diarize":
            turns = assign_roles(oracle_diarize(entry))
            return with_silence_gaps(turns, entry.duration)
        return energy_vad(self.waveform(entry), opts.vad)

    def segments(self, entry: ManifestEntry, opts: SegmentOptions) -> list[Segment]:
        keep = chunk_filter(opts.roles, opts.include_silence)
        return merge_segments(self.chunks(entry, opts), opts.max_dur, keep, entry.recording_id)

    def examples(self, entries, opts: SegmentOptions, min_frames: int = 16,
                 with_text: bool = False) -> list[SegmentExample]:
        """Segments with their feature slices; segments shorter than ``min_frames`` are dropped."""
        entries = list(entries)
        self.prefetch(entries)
        out = []
        for e in entries:
            fb = self.fbank(e)
            for seg in self.segments(e, opts):
                feats = segment_features(fb, seg, self.fbank_cfg)
                if feats.shape[0] < min_frames:
                    log.debug("dropping %s segment [%.2f, %.2f]: %d frames",
                              e.recording_id, seg.start, seg.end, feats.shape[0])
                    continue
                text = segment_text(seg) if with_text else ""
                out.append(SegmentExample(e.recording_id, e.label, seg, feats, text))
        return out

    def text_segments(self, entries, max_dur: float = 360.0, roles: str = "both") -> dict:
        """recording_id -> list of transcript strings, one per speech-only diarized segment."""
        opts = SegmentOptions("diarize", max_dur, roles, include_silence=False)
        return {e.recording_id: [segment_text(s) for s in self.segments(e, opts)]
                for e in entries}
