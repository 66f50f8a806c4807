import math
import struct
import wave

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ssmadc.audio import (FbankConfig, WavFormatError, Waveform, compute_fbank,
                          load_fbank_cache, mel_centers, num_frames, read_wav,
                          save_fbank_cache, write_wav)
from oracles import naive_fbank


def _write_raw(path, data: bytes, channels=1, width=2, rate=16000):
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(channels)
        wf.setsampwidth(width)
        wf.setframerate(rate)
        wf.writeframes(data)


def test_silence_roundtrip(tmp_path):
    p = tmp_path / "z.wav"
    _write_raw(p, b"\x00\x00" * 16000)
    w = read_wav(p)
    assert w.sample_rate == 16000
    assert w.samples.shape == (16000,) and not w.samples.any()


def test_max_sample_scaling(tmp_path):
    p = tmp_path / "m.wav"
    _write_raw(p, struct.pack("<hh", 32767, -32768))
    w = read_wav(p)
    assert w.samples[0] == 32767 / 32768
    assert w.samples[1] == -1.0


def test_stereo_rejected(tmp_path):
    p = tmp_path / "s.wav"
    _write_raw(p, b"\x00\x00" * 20, channels=2)
    with pytest.raises(WavFormatError):
        read_wav(p)


def test_8bit_rejected(tmp_path):
    p = tmp_path / "b.wav"
    _write_raw(p, b"\x80" * 20, width=1)
    with pytest.raises(WavFormatError):
        read_wav(p)


def test_truncated_header(tmp_path):
    p = tmp_path / "t.wav"
    _write_raw(p, b"\x00\x00" * 100)
    p.write_bytes(p.read_bytes()[:20])
    with pytest.raises(WavFormatError):
        read_wav(p)


def test_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        read_wav(tmp_path / "nope.wav")


def test_write_read_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    pcm = rng.integers(-32768, 32768, 500)
    w = Waveform(pcm / 32768.0)
    write_wav(tmp_path / "r.wav", w)
    assert np.array_equal(read_wav(tmp_path / "r.wav").samples, w.samples)


def test_waveform_invariants():
    with pytest.raises(ValueError):
        Waveform(np.array([]))
    with pytest.raises(ValueError):
        Waveform(np.array([0.0, np.nan]))
    with pytest.raises(ValueError):
        Waveform(np.zeros(4), sample_rate=0)


def test_frame_count_example():
    fb = compute_fbank(Waveform(np.zeros(16000)))
    assert fb.values.shape == (98, 128)
    assert np.allclose(fb.frame_times[:3], [0.0, 0.01, 0.02])


@given(st.integers(400, 5000))
@settings(max_examples=40, deadline=None)
def test_frame_count_formula(n):
    cfg = FbankConfig()
    expected = (n - 400) // 160 + 1
    assert num_frames(n, cfg, 16000) == expected
    assert compute_fbank(Waveform(np.zeros(n)), cfg).n_frames == expected


def test_too_short():
    with pytest.raises(ValueError):
        compute_fbank(Waveform(np.zeros(399)))


def test_zero_waveform_is_floor():
    fb = compute_fbank(Waveform(np.zeros(1600)))
    assert np.all(fb.values == math.log(1e-10))


def test_sine_argmax_at_nearest_center():
    sr = 16000
    t = np.arange(sr) / sr
    fb = compute_fbank(Waveform(0.5 * np.sin(2 * np.pi * 1000 * t)))
    target = int(np.argmin(np.abs(mel_centers(FbankConfig(), sr) - 1000.0)))
    assert np.all(fb.values.argmax(axis=1) == target)
    assert np.all(naive_fbank(0.5 * np.sin(2 * np.pi * 1000 * t)).argmax(axis=1) == target)


def test_matches_naive_dft_oracle():
    rng = np.random.default_rng(3)
    for _ in range(2):
        x = rng.uniform(-0.5, 0.5, 16000)
        got = compute_fbank(Waveform(x)).values
        want = naive_fbank(x)
        live = want > math.log(1e-10)
        assert np.allclose(got[live], want[live], rtol=1e-6, atol=0)
        assert np.all(got[~live] == want[~live])


@given(st.floats(1.1, 20.0), st.integers(0, 2 ** 31))
@settings(max_examples=25, deadline=None)
def test_energy_scaling(c, seed):
    x = np.random.default_rng(seed).uniform(-0.04, 0.04, 2000)
    a = compute_fbank(Waveform(x)).values
    b = compute_fbank(Waveform(c * x)).values
    live = a > math.log(1e-10) + 1.0
    assert np.allclose(b[live] - a[live], 2 * math.log(c), atol=1e-9)


def test_deterministic():
    x = np.random.default_rng(1).normal(0, 0.1, 4000)
    assert compute_fbank(Waveform(x)).values.tobytes() == compute_fbank(Waveform(x)).values.tobytes()


def test_config_invariants():
    with pytest.raises(ValueError):
        FbankConfig(frame_shift=0.03, frame_length=0.025)
    with pytest.raises(ValueError):
        FbankConfig(n_mels=0)
    with pytest.raises(ValueError):
        FbankConfig(fmin=4000, fmax=2000)
    cfg = FbankConfig()
    assert cfg.n_fft(16000) == 512
    assert cfg.frame_samples(16000) == (400, 160)


def test_feature_cache_roundtrip(tmp_path):
    fb = compute_fbank(Waveform(np.random.default_rng(2).normal(0, 0.1, 4000)))
    path = tmp_path / "f.fbank"
    save_fbank_cache(path, fb)
    blob = path.read_bytes()
    assert blob[:4] == b"FBNK"
    assert struct.unpack("<III", blob[4:16]) == (1, fb.n_frames, 128)
    back = load_fbank_cache(path)
    assert np.array_equal(back.values, fb.values.astype(np.float32))
    assert np.allclose(back.frame_times, fb.frame_times)
    path.write_bytes(blob[:-4])
    with pytest.raises(ValueError):
        load_fbank_cache(path)
