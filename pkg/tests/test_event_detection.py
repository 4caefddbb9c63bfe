"""Tests for angular velocity, head segmentation and head-gated I-VT detection."""
import logging
from dataclasses import replace

import numpy as np
import pytest

from config import PRESETS, DetectionConfig
from errors import DataError
from event_detection import (
    above,
    angular_velocity,
    below,
    detect_events,
    detect_fixations,
    detect_saccades,
    events_frame,
    head_segments,
    majority_aoi,
)
from recording_io import interpolate_gaps
from synth_oracle import (
    Blink,
    EventScript,
    Fixation,
    HeadTurn,
    Saccade,
    generate_recording,
    random_script,
)
from tests.conftest import direction


def matched(planted, detected, tol_ms):
    """Planted events paired one-for-one with detected events within tol_ms at both ends."""
    used = set()
    pairs = 0
    for p in planted:
        for k, d in enumerate(detected):
            if k in used:
                continue
            if abs(d.onset_ms - p.onset_ms) <= tol_ms and abs(d.offset_ms - p.offset_ms) <= tol_ms:
                used.add(k)
                pairs += 1
                break
    return pairs


def test_three_event_script(three_event_recording, classroom):
    """Test the fixation-saccade-fixation script yields exactly those events."""
    rec, truth = three_event_recording
    events = detect_events(rec, classroom)
    dt = rec.sample_period_ms
    assert len(events.fixations) == 2
    assert len(events.saccades) == 1
    assert matched(truth.of("fixation"), events.fixations, dt + 1e-9) == 2
    sac = events.saccades[0]
    assert sac.onset_ms == pytest.approx(300.0)
    assert sac.offset_ms == pytest.approx(350.0)
    assert sac.amplitude_deg == pytest.approx(6.0)
    assert sac.peak_velocity == pytest.approx(120.0)
    assert events.fixations[0].aoi == "teacher"
    assert events.fixations[1].aoi == "screen"


def test_event_boundaries_follow_sample_intervals(three_event_recording, classroom):
    """Test fixation members include the sample before the first velocity sample."""
    rec, _ = three_event_recording
    fixations = detect_fixations(rec, classroom)
    assert fixations[0].first_sample == 0
    assert fixations[0].last_sample == 36
    assert fixations[1].first_sample == 42
    assert fixations[0].duration_ms == pytest.approx(300.0)


@pytest.mark.parametrize("preset", sorted(PRESETS))
def test_random_script_oracle(preset):
    """Test planted events are recovered with recall and precision 1 and one-sample boundaries."""
    cfg = PRESETS[preset]
    rng = np.random.default_rng(2024)
    for _ in range(200):
        script = random_script(rng, cfg, n_fixations=int(rng.integers(2, 6)))
        rec, truth = generate_recording(script)
        events = detect_events(rec, cfg)
        tol = rec.sample_period_ms + 1e-9
        assert len(events.fixations) == len(truth.of("fixation"))
        assert len(events.saccades) == len(truth.of("saccade"))
        assert matched(truth.of("fixation"), events.fixations, tol) == len(events.fixations)
        assert matched(truth.of("saccade"), events.saccades, tol) == len(events.saccades)


@pytest.mark.parametrize("shift_ms", [-250.0, 1000.0, 65536.0])
@pytest.mark.parametrize("preset", sorted(PRESETS))
def test_detection_ignores_time_origin(preset, shift_ms):
    """Test moving the whole recording in time moves every event by the same amount."""
    cfg = PRESETS[preset]
    rng = np.random.default_rng(99)
    for _ in range(20):
        script = random_script(rng, cfg, n_fixations=int(rng.integers(2, 5)), sample_rate=100.0)
        rec, _ = generate_recording(script, seed=int(rng.integers(1 << 16)))
        base = detect_events(rec, cfg)
        moved = detect_events(replace(rec, t=rec.t + shift_ms), cfg)
        for kind in ("fixations", "saccades", "head_segments"):
            back = [
                replace(e, onset_ms=e.onset_ms - shift_ms, offset_ms=e.offset_ms - shift_ms)
                for e in getattr(moved, kind)
            ]
            assert back == list(getattr(base, kind)), kind


@pytest.mark.parametrize(
    "preset,rate,expect_fixation",
    [
        ("classroom", 5.0, True),
        ("classroom", 6.5, True),
        ("classroom", 6.9, True),
        ("classroom", 7.1, False),
        ("classroom", 7.5, False),
        ("classroom", 10.0, False),
        ("classroom", 12.5, False),
        ("teacher", 6.5, True),
        ("teacher", 7.5, True),
        ("teacher", 11.9, True),
        ("teacher", 12.1, False),
        ("teacher", 15.0, False),
        ("locomotion", 10.0, True),
        ("locomotion", 11.5, True),
        ("locomotion", 12.5, False),
        ("locomotion", 20.0, False),
    ],
)
def test_head_gate(preset, rate, expect_fixation):
    """Test stable gaze yields a fixation only while the head is below the preset gate."""
    script = EventScript(segments=(HeadTurn(300.0, deg=rate * 0.3),), sample_rate=120.0)
    rec, _ = generate_recording(script)
    fixations = detect_fixations(rec, PRESETS[preset])
    assert (len(fixations) == 1) == expect_fixation


def test_head_segments_partition(classroom):
    """Test still-moving-still head motion gives three segments covering the recording."""
    script = EventScript(
        segments=(Fixation(1000.0), HeadTurn(1000.0, deg=20.0), Fixation(1000.0)),
        sample_rate=100.0,
    )
    rec, _ = generate_recording(script)
    segments = head_segments(rec, classroom)
    assert [s.state for s in segments] == ["stationary", "moving", "stationary"]
    assert segments[1].onset_ms == pytest.approx(1000.0)
    assert segments[1].offset_ms == pytest.approx(2000.0, abs=10.0)
    assert segments[0].onset_ms == rec.start_ms


def test_single_sample_head_blip_absorbed(classroom):
    """Test a one-sample head movement does not create a segment."""
    script = EventScript(segments=(Fixation(500.0), HeadTurn(10.0, deg=1.0), Fixation(500.0)), sample_rate=100.0)
    rec, _ = generate_recording(script)
    assert [s.state for s in head_segments(rec, classroom)] == ["stationary"]


def test_threshold_ties_are_strict():
    """Test values at a bound are neither below nor above it."""
    values = np.array([29.999, 30.0, 30.0 * (1 + 1e-12), 30.001, np.nan])
    assert below(values, 30.0).tolist() == [True, False, False, False, False]
    assert above(values, 30.0).tolist() == [False, False, False, True, False]


def test_saccade_at_threshold_not_detected():
    """Test a saccade whose velocity equals the threshold is not detected."""
    cfg = DetectionConfig(
        name="classroom",
        head_stationary_max=7.0,
        fixation_gaze_max=30.0,
        fixation_dur=(100.0, 500.0),
        saccade_gaze_min=120.0,
        saccade_dur=(30.0, 80.0),
    )
    script = EventScript(segments=(Fixation(300.0), Saccade(50.0, direction(0.0, 6.0)), Fixation(300.0)), sample_rate=120.0)
    rec, _ = generate_recording(script)
    assert detect_saccades(rec, cfg) == []


def test_duration_bounds_drop_runs(classroom):
    """Test over-long fixations are dropped, not split."""
    script = EventScript(segments=(Fixation(800.0), Saccade(50.0, direction(90.0, 6.0)), Fixation(300.0)), sample_rate=120.0)
    rec, _ = generate_recording(script)
    fixations = detect_fixations(rec, classroom)
    assert len(fixations) == 1
    assert fixations[0].onset_ms == pytest.approx(850.0)


def test_unfilled_gap_breaks_fixation(classroom):
    """Test a long tracking gap splits stable gaze into two fixations."""
    script = EventScript(
        segments=(Fixation(300.0), Blink(150.0, ramp_ms=0.0), Fixation(300.0)),
        sample_rate=120.0,
    )
    rec, _ = generate_recording(script)
    filled = interpolate_gaps(rec, 75.0)
    assert len(detect_fixations(filled, classroom)) == 2

    short = EventScript(
        segments=(Fixation(200.0), Blink(50.0, ramp_ms=0.0), Fixation(200.0)),
        sample_rate=120.0,
    )
    rec, _ = generate_recording(short)
    assert len(detect_fixations(interpolate_gaps(rec, 75.0), classroom)) == 1


def test_angular_velocity_errors_and_warning(caplog):
    """Test non-increasing timestamps fail and long steps warn."""
    dirs = np.tile([0.0, 0.0, 1.0], (4, 1))
    with pytest.raises(DataError, match="non-increasing"):
        angular_velocity(dirs, np.array([0.0, 10.0, 10.0, 20.0]))
    with caplog.at_level(logging.WARNING):
        v = angular_velocity(dirs, np.array([0.0, 10.0, 50.0, 60.0]), nominal_rate=100.0)
    assert np.all(v == 0.0)
    assert any("Irregular" in r.message for r in caplog.records)


def test_angular_velocity_first_sample_copies_second():
    """Test velocity is per step with the first sample copying the second."""
    a = np.array([0.0, 0.0, 1.0])
    b = direction(0.0, 1.0)
    v = angular_velocity(np.vstack([a, b, b]), np.array([0.0, 10.0, 20.0]))
    assert v[1] == pytest.approx(100.0)
    assert v[0] == v[1]
    assert v[2] == 0.0


def test_majority_aoi_ties_go_to_first_hit():
    """Test the most frequent label wins and ties go to the earliest."""
    assert majority_aoi(["a", "b", "b", None]) == "b"
    assert majority_aoi([None, "b", "a", "a", "b"]) == "b"
    assert majority_aoi([None, None]) is None


def test_slow_saccade_warns(caplog):
    """Test scripting an undetectable saccade logs a warning."""
    script = EventScript(segments=(Fixation(200.0), Saccade(80.0, direction(0.0, 2.0)), Fixation(200.0)))
    with caplog.at_level(logging.WARNING):
        generate_recording(script)
    assert any("too slow" in r.message for r in caplog.records)


def test_events_frame_order(three_event_recording, classroom):
    """Test the events table is sorted by onset with a recording column first."""
    rec, _ = three_event_recording
    frame = events_frame(detect_events(rec, classroom))
    assert frame.columns[0] == "recording"
    assert frame["onset_ms"].is_monotonic_increasing
    assert frame["type"].tolist() == ["head", "fixation", "saccade", "fixation"]
