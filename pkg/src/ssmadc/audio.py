"""Waveform I/O and log-mel filterbank features.

Features follow the usual fbank recipe: Hann-windowed frames, power
spectrum, HTK-mel triangular filters, natural log with a floor.  Frames
that would run past the end of the signal are dropped, so the frame count
is ``floor((N - frame_len) / hop) + 1``.
"""
from __future__ import annotations

import struct
import wave
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class WavFormatError(ValueError):
    """Raised for WAV files outside the supported PCM 16-bit mono format."""


@dataclass(frozen=True)
class Waveform:
    samples: np.ndarray
    sample_rate: int = 16000

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1 or samples.size == 0:
            raise ValueError("waveform must be a non-empty 1-D array")
        if not np.all(np.isfinite(samples)):
            raise ValueError("waveform contains non-finite samples")
        if self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        object.__setattr__(self, "samples", samples)

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate

    def slice(self, start: float, end: float) -> "Waveform":
        i0 = int(round(start * self.sample_rate))
        i1 = int(round(end * self.sample_rate))
        return Waveform(self.samples[i0:i1], self.sample_rate)


@dataclass(frozen=True)
class FbankConfig:
    n_mels: int = 128
    frame_shift: float = 0.010
    frame_length: float = 0.025
    window: str = "hann"
    fmin: float = 0.0
    fmax: float | None = None  # None -> Nyquist
    log_floor: float = 1e-10

    def __post_init__(self):
        if not (self.frame_length >= self.frame_shift > 0):
            raise ValueError("need frame_length >= frame_shift > 0")
        if self.n_mels < 1:
            raise ValueError("n_mels must be >= 1")
        if self.window != "hann":
            raise ValueError(f"unsupported window {self.window!r}")
        if self.log_floor <= 0:
            raise ValueError("log_floor must be positive")
        if self.fmin < 0 or (self.fmax is not None and self.fmax <= self.fmin):
            raise ValueError(f"invalid band [{self.fmin}, {self.fmax}]")

    def frame_samples(self, sample_rate: int) -> tuple[int, int]:
        """(frame length, hop) in samples."""
        return (int(round(self.frame_length * sample_rate)),
                int(round(self.frame_shift * sample_rate)))

    def n_fft(self, sample_rate: int) -> int:
        win, _ = self.frame_samples(sample_rate)
        return 1 << (win - 1).bit_length()

    def band_edges(self, sample_rate: int) -> tuple[float, float]:
        fmax = sample_rate / 2 if self.fmax is None else self.fmax
        if not (self.fmin < fmax <= sample_rate / 2):
            raise ValueError(f"invalid band [{self.fmin}, {fmax}] for sr={sample_rate}")
        return self.fmin, fmax


@dataclass
class FbankMatrix:
    values: np.ndarray  # (T, n_mels)
    frame_times: np.ndarray = field(repr=False)  # (T,) frame start times, seconds

    @property
    def n_frames(self) -> int:
        return self.values.shape[0]


def read_wav(path) -> Waveform:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    try:
        with wave.open(str(path), "rb") as wf:
            channels = wf.getnchannels()
            width = wf.getsampwidth()
            rate = wf.getframerate()
            n = wf.getnframes()
            raw = wf.readframes(n)
    except (wave.Error, EOFError, struct.error) as exc:
        raise WavFormatError(f"{path}: {exc}") from exc
    if channels != 1:
        raise WavFormatError(f"{path}: expected mono, got {channels} channels")
    if width != 2:
        raise WavFormatError(f"{path}: expected 16-bit PCM, got {8 * width}-bit")
    if len(raw) != 2 * n or n == 0:
        raise WavFormatError(f"{path}: truncated data ({len(raw)} bytes for {n} frames)")
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    return Waveform(samples, rate)


def write_wav(path, w: Waveform) -> None:
    pcm = np.clip(np.round(w.samples * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(w.sample_rate)
        wf.writeframes(pcm.tobytes())


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(n_mels: int, n_fft: int, sample_rate: int,
                   fmin: float, fmax: float) -> np.ndarray:
    """Triangular HTK-mel filters, peak height 1, shape (n_mels, n_fft//2 + 1).

    Low filters narrower than one FFT bin can end up all-zero; their
    energies then sit at the log floor.
    """
    edges = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))
    freqs = np.arange(n_fft // 2 + 1) * sample_rate / n_fft
    lo, center, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs - lo) / (center - lo)
    falling = (hi - freqs) / (hi - center)
    return np.maximum(0.0, np.minimum(rising, falling))


def mel_centers(cfg: FbankConfig, sample_rate: int) -> np.ndarray:
    fmin, fmax = cfg.band_edges(sample_rate)
    return mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), cfg.n_mels + 2))[1:-1]


def num_frames(n_samples: int, cfg: FbankConfig, sample_rate: int) -> int:
    win, hop = cfg.frame_samples(sample_rate)
    if n_samples < win:
        return 0
    return (n_samples - win) // hop + 1


def compute_fbank(w: Waveform, cfg: FbankConfig | None = None) -> FbankMatrix:
    cfg = cfg or FbankConfig()
    sr = w.sample_rate
    win, hop = cfg.frame_samples(sr)
    n_frames = num_frames(w.samples.size, cfg, sr)
    if n_frames == 0:
        raise ValueError(f"waveform of {w.samples.size} samples is shorter than "
                         f"one frame ({win} samples)")
    n_fft = cfg.n_fft(sr)
    fmin, fmax = cfg.band_edges(sr)

    frames = np.lib.stride_tricks.sliding_window_view(w.samples, win)[::hop][:n_frames]
    spec = np.fft.rfft(frames * np.hanning(win), n=n_fft, axis=1)
    power = spec.real ** 2 + spec.imag ** 2
    energies = power @ mel_filterbank(cfg.n_mels, n_fft, sr, fmin, fmax).T
    values = np.log(np.maximum(energies, cfg.log_floor))
    return FbankMatrix(values, np.arange(n_frames) * (hop / sr))


# Feature cache: magic, version, T, n_mels, then row-major float32.
_CACHE_MAGIC = b"FBNK"
_CACHE_VERSION = 1
_CACHE_HEADER = struct.Struct("<4sIII")


def save_fbank_cache(path, fb: FbankMatrix) -> None:
    values = np.ascontiguousarray(fb.values, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(_CACHE_HEADER.pack(_CACHE_MAGIC, _CACHE_VERSION, *values.shape))
        fh.write(values.tobytes())


def load_fbank_cache(path, frame_shift: float = 0.010) -> FbankMatrix:
    with open(path, "rb") as fh:
        header = fh.read(_CACHE_HEADER.size)
        if len(header) != _CACHE_HEADER.size:
            raise ValueError(f"{path}: truncated feature cache header")
        magic, version, t, n_mels = _CACHE_HEADER.unpack(header)
        if magic != _CACHE_MAGIC or version != _CACHE_VERSION:
            raise ValueError(f"{path}: not a feature cache (magic={magic!r}, version={version})")
        data = fh.read()
    if len(data) != 4 * t * n_mels:
        raise ValueError(f"{path}: expected {t}x{n_mels} floats, got {len(data)} bytes")
    values = np.frombuffer(data, dtype="<f4").reshape(t, n_mels).astype(np.float64)
    return FbankMatrix(values, np.arange(t) * frame_shift)
