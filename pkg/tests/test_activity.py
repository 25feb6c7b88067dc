import logging

import numpy as np
import pytest

from gsskit import (
    SAMPLE_RATE,
    SessionActivity,
    StftConfig,
    Utterance,
    activity_to_frames,
    build_activity,
    extend_context,
    num_frames,
    overlap_fraction,
    overlap_histogram,
    parse_annotations,
    parse_chime5_annotations,
    refine_with_asr,
    speaker_class_order,
)
from gsskit.activity import (
    format_time,
    intersect_intervals,
    merge_intervals,
    parse_time,
    subtract_intervals,
)


def rasterize(intervals, length):
    dense = np.zeros(length, bool)
    for a, b in intervals:
        dense[max(0, a) : min(length, b)] = True
    return dense


def intervals_from_dense(dense):
    spans = []
    start = None
    for i, on in enumerate(dense):
        if on and start is None:
            start = i
        if not on and start is not None:
            spans.append((start, i))
            start = None
    if start is not None:
        spans.append((start, len(dense)))
    return tuple(spans)


def test_parse_time_known_values():
    assert parse_time("0:00:00.00") == 0
    assert parse_time("0:00:01.00") == SAMPLE_RATE
    assert parse_time("0:00:00.01") == 160
    assert parse_time("1:02:03.45") == int(3723.45 * SAMPLE_RATE)
    assert parse_time("0:01:00") == 60 * SAMPLE_RATE


@pytest.mark.parametrize(
    "text", ["", "12.5", "0:00:61.00", "0:61:00.00", "x:00:00.00", "0:00:00.0001"]
)
def test_parse_time_rejects(text):
    with pytest.raises(ValueError, match="malformed timestamp"):
        parse_time(text)


def test_format_time_round_trip():
    rng = np.random.default_rng(0)
    for _ in range(50):
        samples = int(rng.integers(0, 10 * 3600 * 100)) * (SAMPLE_RATE // 100)
        assert parse_time(format_time(samples)) == samples
    assert format_time(0) == "0:00:00.00"
    assert format_time(int(3723.45 * SAMPLE_RATE)) == "1:02:03.45"


def test_format_time_rejects_off_grid():
    with pytest.raises(ValueError, match="centisecond"):
        format_time(161)
    with pytest.raises(ValueError, match="negative"):
        format_time(-1)


def test_utterance_validation_and_words():
    u = Utterance("S1", "A", 0, 16000, ("hello", "world"))
    assert u.duration_samples == 16000
    assert u.word_count == 2
    with pytest.raises(ValueError):
        Utterance("S1", "A", -5, 100, ())
    with pytest.raises(ValueError):
        Utterance("S1", "A", 200, 100, ())


def test_interval_ops_match_dense_oracle():
    rng = np.random.default_rng(1)
    length = 400
    for _ in range(30):
        a = [(int(lo), int(lo + d)) for lo, d in
             zip(rng.integers(0, 280, 6), rng.integers(1, 40, 6))]
        b = [(int(lo), int(lo + d)) for lo, d in
             zip(rng.integers(0, 280, 6), rng.integers(1, 40, 6))]
        da, db = rasterize(a, length), rasterize(b, length)
        ca, cb = merge_intervals(a), merge_intervals(b)
        assert ca == intervals_from_dense(da)
        assert intersect_intervals(ca, cb) == intervals_from_dense(da & db)
        assert subtract_intervals(ca, cb) == intervals_from_dense(da & ~db)


def test_interval_ops_drop_empty_spans():
    assert merge_intervals([(5, 5), (7, 3)]) == ()
    assert merge_intervals([(1, 4), (4, 9)]) == ((1, 9),)


def test_parse_annotations_native():
    doc = [
        {
            "session_id": "S1",
            "speaker_id": "A",
            "start_time": "0:00:01.00",
            "end_time": "0:00:02.50",
            "words": "hello [noise] world",
        },
        {
            "session_id": "S1",
            "speaker_id": "B",
            "start_time": "0:00:02.00",
            "end_time": "0:00:03.00",
            "words": "[inaudible]",
        },
    ]
    utts = parse_annotations(doc)
    assert len(utts) == 2
    assert utts[0].words == ("hello", "world")
    assert utts[0].start_samples == SAMPLE_RATE
    assert utts[0].end_samples == int(2.5 * SAMPLE_RATE)
    assert utts[1].words == ()


def test_parse_annotations_errors():
    with pytest.raises(ValueError, match="JSON array"):
        parse_annotations({"not": "a list"})
    with pytest.raises(ValueError, match="entry 0 lacks key"):
        parse_annotations([{"speaker_id": "A"}])
    with pytest.raises(ValueError, match="entry 1"):
        parse_annotations(
            [
                {
                    "session_id": "S1",
                    "speaker_id": "A",
                    "start_time": "0:00:00.00",
                    "end_time": "0:00:01.00",
                },
                {
                    "session_id": "S1",
                    "speaker_id": "A",
                    "start_time": "bogus",
                    "end_time": "0:00:01.00",
                },
            ]
        )


def test_parse_chime5_annotations_device_clocks():
    doc = [
        {
            "session_id": "S1",
            "speaker": "P01",
            "start_time": {"U01": "0:00:01.00", "original": "0:00:02.00"},
            "end_time": {"U01": "0:00:03.00", "original": "0:00:04.00"},
            "words": "ok",
        },
        {
            "session_id": "S1",
            "speaker": None,
            "start_time": "0:00:05.00",
            "end_time": "0:00:06.00",
        },
    ]
    with_device = parse_chime5_annotations(doc, array_id="U01")
    assert len(with_device) == 1
    assert with_device[0].start_samples == SAMPLE_RATE
    fallback = parse_chime5_annotations(doc, array_id="U99")
    assert fallback[0].start_samples == 2 * SAMPLE_RATE
    assert fallback[0].speaker_id == "P01"


def test_build_activity_merges_and_sizes():
    utts = [
        Utterance("S1", "A", 0, 16000, ()),
        Utterance("S1", "A", 8000, 24000, ()),
        Utterance("S1", "B", 32000, 48000, ()),
    ]
    activity = build_activity(utts, session_seconds=4.0)
    assert activity.session_id == "S1"
    assert activity.session_samples == 64000
    assert activity.intervals["A"] == ((0, 24000),)
    assert activity.intervals["B"] == ((32000, 48000),)
    assert speaker_class_order(activity) == ("A", "B")


def test_build_activity_errors():
    with pytest.raises(ValueError, match="empty"):
        build_activity([])
    with pytest.raises(ValueError, match="multiple sessions"):
        build_activity(
            [Utterance("S1", "A", 0, 10, ()), Utterance("S2", "A", 0, 10, ())]
        )
    with pytest.raises(ValueError, match="session length"):
        build_activity([Utterance("S1", "A", 0, 32000, ())], session_seconds=1.0)


def test_refine_with_asr_subtracts_and_stays_inside():
    utts = [
        Utterance("S1", "A", 0, 48000, ()),
        Utterance("S1", "B", 16000, 64000, ()),
    ]
    activity = build_activity(utts, session_seconds=5.0)
    refined = refine_with_asr(activity, {"A": [(1.0, 2.0)]})
    assert refined.intervals["A"] == ((0, 16000), (32000, 48000))
    assert refined.intervals["B"] == activity.intervals["B"]
    for speaker in refined.intervals:
        before = rasterize(activity.intervals[speaker], activity.session_samples)
        after = rasterize(refined.intervals[speaker], activity.session_samples)
        assert not np.any(after & ~before)


def test_refine_with_asr_unknown_speaker_warns(caplog):
    activity = build_activity([Utterance("S1", "A", 0, 16000, ())])
    with caplog.at_level(logging.WARNING):
        refined = refine_with_asr(activity, {"Z": [(0.0, 0.5)]})
    assert refined.intervals == activity.intervals
    assert any("Z" in record.message for record in caplog.records)


def test_extend_context_clips_to_session():
    u = Utterance("S1", "A", 16 * SAMPLE_RATE, 20 * SAMPLE_RATE, ())
    session = 120 * SAMPLE_RATE
    ext = extend_context(u, 15.0, session)
    assert ext.context_start == SAMPLE_RATE
    assert ext.context_end == 35 * SAMPLE_RATE
    early = extend_context(Utterance("S1", "A", 0, SAMPLE_RATE, ()), 15.0, session)
    assert early.context_start == 0
    late = extend_context(
        Utterance("S1", "A", 110 * SAMPLE_RATE, 119 * SAMPLE_RATE, ()), 15.0, session
    )
    assert late.context_end == session
    with pytest.raises(ValueError, match="context"):
        extend_context(u, -1.0, session)
    with pytest.raises(ValueError, match="session"):
        extend_context(u, 15.0, 18 * SAMPLE_RATE)


def test_core_frame_range_matches_span_oracle():
    config = StftConfig(fft_size=64, shift=16)
    rng = np.random.default_rng(2)
    for _ in range(40):
        core_start = int(rng.integers(0, 3000))
        core_len = int(rng.integers(1, 2000))
        context = int(rng.integers(0, 500))
        u = Utterance("S1", "A", core_start, core_start + core_len, ())
        ext = extend_context(u, context / SAMPLE_RATE, 10**7)
        total = num_frames(ext.num_samples, config)
        lo, hi = ext.core_start_local, ext.core_end_local
        oracle = [t for t in range(total) if lo <= t * config.shift < hi]
        got = ext.core_frame_range(config)
        if oracle:
            assert got == range(oracle[0], oracle[-1] + 1)
        else:
            assert len(got) == 1


def test_activity_to_frames_matches_span_oracle():
    config = StftConfig(fft_size=64, shift=16)
    utts = [
        Utterance("S1", "A", 200, 900, ()),
        Utterance("S1", "B", 600, 1500, ()),
        Utterance("S1", "A", 1800, 2100, ()),
    ]
    activity = build_activity(utts, session_seconds=0.2)
    target = utts[1]
    ext = extend_context(target, 0.02, activity.session_samples)
    mask = activity_to_frames(activity, ext, config)
    order = speaker_class_order(activity)
    total = num_frames(ext.num_samples, config)
    assert mask.active.shape == (1 + len(order), total)
    assert mask.active[0].all()

    core = ext.core_frame_range(config)
    for row, speaker in enumerate(order, start=1):
        # Annotations outside the extended window are invisible to the
        # segment, so the oracle clips them before testing span overlap.
        clipped = [
            (max(a, ext.context_start), min(b, ext.context_end))
            for a, b in activity.intervals[speaker]
        ]
        for t in range(total):
            span = (
                ext.context_start + t * config.shift,
                ext.context_start + t * config.shift + config.fft_size,
            )
            covered = any(max(span[0], a) < min(span[1], b) for a, b in clipped)
            forced = speaker == target.speaker_id and t in core
            assert mask.active[row, t] == (covered or forced), (speaker, t)


def test_activity_to_frames_needs_target_speaker():
    config = StftConfig(fft_size=64, shift=16)
    activity = build_activity([Utterance("S1", "A", 0, 1600, ())])
    ghost = extend_context(Utterance("S1", "Z", 0, 800, ()), 0.0, 1600)
    with pytest.raises(ValueError, match="Z"):
        activity_to_frames(activity, ghost, config)


def overlap_fraction_oracle(utterance, activity):
    length = activity.session_samples
    others = np.zeros(length, bool)
    for speaker, intervals in activity.intervals.items():
        if speaker != utterance.speaker_id:
            others |= rasterize(intervals, length)
    covered = int(others[utterance.start_samples : utterance.end_samples].sum())
    return 100.0 * covered / utterance.duration_samples


def test_overlap_fraction_matches_dense_oracle():
    rng = np.random.default_rng(3)
    for _ in range(10):
        utts = []
        for speaker in "ABC":
            for _ in range(3):
                start = int(rng.integers(0, 30000))
                utts.append(
                    Utterance("S1", speaker, start, start + int(rng.integers(1, 8000)), ())
                )
        activity = build_activity(utts, session_seconds=3.0)
        for u in utts:
            np.testing.assert_allclose(
                overlap_fraction(u, activity), overlap_fraction_oracle(u, activity)
            )


def test_overlap_histogram_matches_dense_oracle():
    rng = np.random.default_rng(4)
    utts = []
    for speaker in "AB":
        cursor = 0
        for _ in range(6):
            start = cursor + int(rng.integers(0, 4000))
            end = start + int(rng.integers(400, 6000))
            words = tuple("w" for _ in range(int(rng.integers(0, 6))))
            utts.append(Utterance("S1", speaker, start, end, words))
            cursor = end
    activity = build_activity(utts, session_seconds=5.0)
    hist = overlap_histogram(utts, activity)

    counts = np.zeros(5, int)
    for u in utts:
        length = activity.session_samples
        others = np.zeros(length, bool)
        for speaker, intervals in activity.intervals.items():
            if speaker != u.speaker_id:
                others |= rasterize(intervals, length)
        covered = int(others[u.start_samples : u.end_samples].sum())
        bin_index = min(covered * 5 // u.duration_samples, 4)
        counts[bin_index] += u.word_count
    np.testing.assert_array_equal(hist.word_counts, counts)
    if counts.sum():
        np.testing.assert_allclose(hist.frequencies, counts / counts.sum())


def test_overlap_histogram_zero_words_warns(caplog):
    utts = [Utterance("S1", "A", 0, 16000, ())]
    activity = build_activity(utts)
    with caplog.at_level(logging.WARNING):
        hist = overlap_histogram(utts, activity)
    assert hist.word_counts.sum() == 0
    np.testing.assert_array_equal(hist.frequencies, np.zeros(5))


def test_session_activity_canonicalizes_and_bounds():
    activity = SessionActivity("S1", {"A": [(10, 5), (0, 4), (2, 8)]}, 16000)
    assert activity.intervals["A"] == ((0, 8),)
    assert activity.speakers == ("A",)
    with pytest.raises(ValueError, match="session bounds"):
        SessionActivity("S1", {"A": [(0, 20000)]}, 16000)
