import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ssmadc.audio import Waveform
from ssmadc.segmentation import (Chunk, SpeakerTurn, VadConfig, assign_roles, chunk_filter,
                                 energy_vad, merge_segments, oracle_diarize,
                                 read_segments_jsonl, with_silence_gaps, write_segments_jsonl)

SR = 16000


def _tone(seconds, f=440.0, amp=0.5):
    t = np.arange(int(seconds * SR)) / SR
    return amp * np.sin(2 * np.pi * f * t)


def _covers(chunks, duration):
    assert chunks[0].start == 0.0
    assert chunks[-1].end == pytest.approx(duration)
    for a, b in zip(chunks, chunks[1:]):
        assert a.end == pytest.approx(b.start)
        assert a.kind != b.kind


# --- VAD

def test_vad_zero_is_one_silence():
    chunks = energy_vad(Waveform(np.zeros(SR * 2)))
    assert [(c.start, c.end, c.kind) for c in chunks] == [(0.0, 2.0, "silence")]


def test_vad_full_scale_sine_is_one_speech():
    chunks = energy_vad(Waveform(_tone(2.0, amp=1.0)))
    assert [(c.start, c.kind) for c in chunks] == [(0.0, "speech")]
    assert chunks[0].end == pytest.approx(2.0)


def test_vad_tone_gap_tone():
    x = np.concatenate([_tone(1.0), np.zeros(SR), _tone(1.0)])
    chunks = energy_vad(Waveform(x), VadConfig(hangover=10))
    assert [c.kind for c in chunks] == ["speech", "silence", "speech"]
    frame = 0.03
    assert chunks[0].end == pytest.approx(1.0, abs=frame)
    assert chunks[2].start == pytest.approx(2.0, abs=frame)
    assert chunks[2].end == pytest.approx(3.0)


def test_vad_hangover_bridges_short_gap():
    x = np.concatenate([_tone(1.0), np.zeros(int(0.1 * SR)), _tone(1.0)])
    assert [c.kind for c in energy_vad(Waveform(x), VadConfig(hangover=10))] == ["speech"]


def test_vad_min_speech_demotes_blips():
    x = np.concatenate([np.zeros(SR), _tone(0.03), np.zeros(SR), _tone(1.0)])
    kinds = [c.kind for c in energy_vad(Waveform(x), VadConfig(hangover=1, min_speech=0.1))]
    assert kinds == ["silence", "speech"]


def test_vad_config_positive():
    with pytest.raises(ValueError):
        VadConfig(frame=0)
    with pytest.raises(ValueError):
        VadConfig(hangover=-1)


@given(st.lists(st.tuples(st.booleans(), st.floats(0.01, 0.6)), min_size=1, max_size=8),
       st.integers(0, 1000))
@settings(max_examples=30, deadline=None)
def test_vad_covers_duration(pieces, seed):
    rng = np.random.default_rng(seed)
    parts = [rng.normal(0, 0.2, int(d * SR)) if on else np.zeros(int(d * SR)) for on, d in pieces]
    x = np.concatenate(parts + [np.zeros(10)])
    w = Waveform(x)
    _covers(energy_vad(w), w.duration)


# --- roles

def test_roles_short_first_turn_skipped():
    turns = [SpeakerTurn(0.0, 0.01, "A"), SpeakerTurn(0.05, 3.0, "B"), SpeakerTurn(3.1, 4.0, "A")]
    assert [t.role for t in assign_roles(turns)] == ["participant", "interviewer", "participant"]


def test_roles_first_speaker_interviewer():
    out = assign_roles([SpeakerTurn(0, 5, "A"), SpeakerTurn(6, 9, "B")])
    assert [t.role for t in out] == ["interviewer", "participant"]


def test_roles_single_speaker():
    out = assign_roles([SpeakerTurn(0, 1, "A"), SpeakerTurn(2, 3, "A")])
    assert all(t.role == "interviewer" for t in out)


def test_roles_exactly_20ms_is_not_enough():
    out = assign_roles([SpeakerTurn(0.0, 0.02, "A"), SpeakerTurn(0.1, 0.2, "B")])
    assert [t.role for t in out] == ["participant", "interviewer"]


def test_roles_empty():
    assert assign_roles([]) == []


@given(st.lists(st.tuples(st.floats(0.005, 2.0), st.sampled_from("ABC")), min_size=1,
                max_size=10))
def test_roles_relabeling_equivariant(plan):
    t, turns = 0.0, []
    for dur, spk in plan:
        turns.append(SpeakerTurn(t, t + dur, spk))
        t += dur + 0.1
    perm = {"A": "X", "B": "Y", "C": "Z"}
    renamed = [SpeakerTurn(x.start, x.end, perm[x.speaker_id]) for x in turns]
    assert [x.role for x in assign_roles(turns)] == [x.role for x in assign_roles(renamed)]


# --- merge

def _chunks(durations, kind="speech"):
    t, out = 0.0, []
    for d in durations:
        out.append(Chunk(t, t + d, kind))
        t += d
    return out


def test_merge_greedy_example():
    segs = merge_segments(_chunks([100, 150, 200]), 360)
    assert [s.end - s.start for s in segs] == [250, 200]


def test_merge_single_chunk():
    segs = merge_segments(_chunks([10]), 360)
    assert [(s.start, s.end) for s in segs] == [(0, 10)]


def test_merge_splits_long_chunk():
    segs = merge_segments(_chunks([400]), 360)
    assert [s.end - s.start for s in segs] == [360, 40]


def test_merge_role_filter_keeps_time_order():
    turns = assign_roles([SpeakerTurn(0, 5, "I"), SpeakerTurn(5, 20, "P"),
                          SpeakerTurn(20, 25, "I"), SpeakerTurn(25, 40, "P")])
    segs = merge_segments(turns, 360, chunk_filter("participant"))
    assert len(segs) == 1
    assert segs[0].spans == [(5, 20), (25, 40)]
    assert segs[0].roles_included == frozenset({"participant"})


def test_silence_filter():
    turns = assign_roles([SpeakerTurn(1, 5, "I"), SpeakerTurn(7, 9, "P")])
    chunks = with_silence_gaps(turns, 10.0)
    assert [c.kind for c in chunks] == ["silence", "speech", "silence", "speech", "silence"]
    speech = merge_segments(chunks, 360, chunk_filter("both", include_silence=False))
    assert speech[0].spans == [(1, 5), (7, 9)] and speech[0].kind == "speech"
    both = merge_segments(chunks, 360, chunk_filter("both", include_silence=True))
    assert (both[0].start, both[0].end, both[0].kind) == (0, 10, "mixed")


def test_role_filter_needs_turns():
    with pytest.raises(ValueError):
        merge_segments(_chunks([5]), 360, chunk_filter("participant"))


@given(st.lists(st.floats(0.5, 500.0), min_size=1, max_size=12), st.floats(5.0, 400.0))
@settings(max_examples=80)
def test_merge_invariants(durations, max_dur):
    chunks = _chunks(durations)
    segs = merge_segments(chunks, max_dur)
    assert all(s.end - s.start <= max_dur + 1e-6 for s in segs)
    covered = [span for s in segs for span in s.spans]
    for a, b in zip(covered, covered[1:]):
        assert a[1] == pytest.approx(b[0])
    assert covered[0][0] == 0.0
    assert covered[-1][1] == pytest.approx(sum(durations))
    for a, b in zip(segs, segs[1:]):
        assert a.end <= b.start + 1e-9


def test_segments_jsonl_roundtrip(tmp_path):
    turns = assign_roles([SpeakerTurn(0, 5, "I"), SpeakerTurn(6, 9, "P")])
    segs = merge_segments(with_silence_gaps(turns, 10.0), 360, recording_id="r1")
    write_segments_jsonl(tmp_path / "s.jsonl", segs)
    rows = read_segments_jsonl(tmp_path / "s.jsonl")
    assert rows == [{"recording_id": "r1", "start": 0, "end": 10.0,
                     "roles": ["interviewer", "participant"], "kind": "mixed"}]


# --- oracle diarization

def test_oracle_identity():
    entry = {"turns": [{"start": 0, "end": 1, "speaker_id": "a"},
                       {"start": 1.5, "end": 2, "speaker_id": "b"},
                       {"start": 3, "end": 4, "speaker_id": "a"}]}
    turns = oracle_diarize(entry)
    assert [(t.start, t.end, t.speaker_id, t.role) for t in turns] == [
        (0, 1, "a", "unassigned"), (1.5, 2, "b", "unassigned"), (3, 4, "a", "unassigned")]


def test_oracle_empty_and_missing():
    assert oracle_diarize({"turns": []}) == []
    with pytest.raises(ValueError):
        oracle_diarize({})


def test_oracle_overlap_rejected():
    with pytest.raises(ValueError):
        oracle_diarize({"turns": [(0, 2, "a"), (1, 3, "b")]})


def test_turn_invariants():
    with pytest.raises(ValueError):
        SpeakerTurn(2, 1, "a")
    with pytest.raises(ValueError):
        Chunk(-1, 1, "speech")
