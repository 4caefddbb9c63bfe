"""Tests for AOI statistics, click joins and event-locked change scores."""
import logging

import numpy as np
import pytest

from aoi_analysis import (
    aoi_frame,
    aoi_matches,
    aoi_stats,
    check_epoch,
    distinct_aoi_count,
    dwell_ms,
    event_locked_change,
    join_clicks,
    skipped_onsets,
    summarize_change_scores,
    window_metric,
)
from errors import DataError
from models import ClickEvent, EventStream, Fixation, PupilSeries, Recording, Saccade


def recording(labels):
    """100 Hz recording, one frame per label."""
    n = len(labels)
    return Recording(
        id="r1",
        trial="0",
        t=np.arange(n) * 10.0,
        gaze=np.tile([0.0, 0.0, 1.0], (n, 1)),
        head=np.tile([1.0, 0.0, 0.0, 0.0], (n, 1)),
        pupil_left=np.full(n, 3.0),
        pupil_right=np.full(n, 3.0),
        valid=np.ones(n, dtype=bool),
        aoi=tuple(labels),
        nominal_rate=100.0,
    )


def fix(onset, offset, aoi):
    return Fixation(onset, offset, (0.0, 0.0, 1.0), int(onset // 10), int(offset // 10), aoi=aoi)


@pytest.fixture
def scene():
    labels = [None] * 100
    for i in range(10, 30):
        labels[i] = "teacher"
    for i in range(40, 50):
        labels[i] = "peer_1"
    for i in range(60, 90):
        labels[i] = "teacher"
    for i in range(92, 97):
        labels[i] = "peer_2"
    rec = recording(labels)
    fixations = (
        fix(100.0, 300.0, "teacher"),
        fix(400.0, 500.0, "peer_1"),
        fix(600.0, 900.0, "teacher"),
        fix(920.0, 970.0, "peer_2"),
    )
    return rec, fixations


def test_aoi_matches_exact_and_prefix():
    """Test exact ids and trailing-star groups."""
    assert aoi_matches("peer_3", "peer_*")
    assert aoi_matches("teacher", "teacher")
    assert not aoi_matches("teacher_desk", "teacher")
    assert not aoi_matches(None, "peer_*")


def test_aoi_stats_whole_recording(scene):
    """Test counts, duration statistics, dwell and first-fixation timing."""
    rec, fixations = scene
    stats = aoi_stats(fixations, rec, ["teacher", "peer_*", "screen"])
    teacher = stats["teacher"]
    assert teacher.n_fixations == 2
    assert teacher.fixation_duration.mean == pytest.approx(250.0)
    assert teacher.fixation_duration.sum == pytest.approx(500.0)
    assert teacher.fixation_duration.sd == pytest.approx(np.sqrt(5000.0))
    assert teacher.dwell_ms == pytest.approx(500.0)
    assert teacher.ttff_ms == pytest.approx(100.0)
    assert teacher.ffd_ms == pytest.approx(200.0)
    assert stats["peer_*"].n_fixations == 2
    assert stats["peer_*"].dwell_ms == pytest.approx(150.0)


def test_aoi_stats_empty_aoi_is_zero(scene):
    """Test an AOI never fixated gets zero statistics and no first fixation."""
    rec, fixations = scene
    screen = aoi_stats(fixations, rec, ["screen"])["screen"]
    assert screen.n_fixations == 0
    assert screen.fixation_duration.mean == 0.0
    assert screen.dwell_ms == 0.0
    assert screen.ttff_ms is None
    assert screen.ffd_ms is None


def test_epoch_uses_onset_and_truncates_first_fixation(scene):
    """Test fixations belong to the epoch of their onset and FFD is cut at the epoch end."""
    rec, fixations = scene
    teacher = aoi_stats(fixations, rec, ["teacher"], epoch=(200.0, 700.0))["teacher"]
    assert teacher.n_fixations == 1
    assert teacher.ttff_ms == pytest.approx(400.0)
    assert teacher.ffd_ms == pytest.approx(100.0)
    assert teacher.dwell_ms == pytest.approx(100.0 + 100.0)


def test_dwell_clips_partial_frames(scene):
    """Test dwell counts only the part of a frame inside the epoch."""
    rec, _ = scene
    assert dwell_ms(rec, "teacher", (105.0, 150.0)) == pytest.approx(45.0)


def test_check_epoch_rejects_bad_ranges(scene):
    """Test empty and out-of-range epochs are data errors."""
    rec, _ = scene
    with pytest.raises(DataError, match="empty epoch"):
        check_epoch(rec, (500.0, 500.0))
    with pytest.raises(DataError, match="outside recording"):
        check_epoch(rec, (0.0, 2000.0))
    assert check_epoch(rec, (0.0, 1000.0)) == (0.0, 1000.0)


def test_distinct_aoi_count(scene):
    """Test distinct prefixed AOIs are counted once each."""
    _, fixations = scene
    assert distinct_aoi_count(fixations, "peer_", (0.0, 1000.0)) == 2
    assert distinct_aoi_count(fixations, "peer_", (0.0, 450.0)) == 1
    assert distinct_aoi_count(fixations, "student_", (0.0, 1000.0)) == 0


def test_join_clicks_restricts_to_clicked_targets(scene):
    """Test C-AOI statistics use only fixations on AOIs clicked in the epoch."""
    _, fixations = scene
    events = EventStream(recording_id="r1", preset="teacher", fixations=fixations)
    clicks = [ClickEvent(50.0, "peer_1"), ClickEvent(450.0, "peer_2"), ClickEvent(1500.0, "teacher")]
    stats = join_clicks(events, clicks, (0.0, 1000.0))
    assert stats.n_clicks == 2
    assert stats.targets == ("peer_1", "peer_2")
    assert stats.n_fixations == 2
    assert stats.fixation_duration.mean == pytest.approx(75.0)

    attached = EventStream(recording_id="r1", preset="teacher", fixations=fixations, clicks=tuple(clicks))
    assert join_clicks(attached, None, (0.0, 300.0)).targets == ("peer_1",)


def step_pupil(rec, switch_ms):
    value = np.where(rec.t < switch_ms, 1.0, 2.0)
    return PupilSeries(t=rec.t, value=value, missing_mask=np.zeros(rec.n_frames, dtype=bool), normalized=True, baseline=3.0)


def test_event_locked_change_scores(scene, caplog):
    """Test before/after windows around onsets and skipping of boundary onsets."""
    rec, fixations = scene
    events = EventStream(recording_id="r1", preset="classroom", fixations=fixations)
    pupil = step_pupil(rec, 500.0)
    with caplog.at_level(logging.WARNING):
        scores = event_locked_change(rec, events, [100.0, 500.0, 800.0], window_ms=200.0, pupil=pupil)
    assert [s.onset_ms for s in scores] == [500.0, 800.0]
    assert scores[0].value_before == pytest.approx(1.0)
    assert scores[0].value_after == pytest.approx(2.0)
    assert scores[0].change == pytest.approx(1.0)
    assert scores[1].change == pytest.approx(0.0)
    assert any("skipped" in r.message for r in caplog.records)
    assert skipped_onsets(rec, [100.0, 500.0, 800.0, 900.0], 200.0) == [100.0, 900.0]


def test_onset_with_exact_full_windows_is_kept(scene):
    """Test windows touching the recording bounds still count as full."""
    rec, fixations = scene
    events = EventStream(recording_id="r1", preset="classroom", fixations=fixations)
    scores = event_locked_change(rec, events, [500.0], window_ms=500.0, metrics=("fixation_duration_mean",))
    assert len(scores) == 1
    assert scores[0].value_before == pytest.approx(150.0)
    assert scores[0].value_after == pytest.approx(175.0)


def test_window_metrics(scene):
    """Test saccade, dwell and distinct-AOI metrics and metric errors."""
    rec, fixations = scene
    saccades = (Saccade(300.0, 350.0, 6.0, 120.0, 110.0, 30, 35), Saccade(550.0, 590.0, 4.0, 100.0, 90.0, 55, 59))
    events = EventStream(recording_id="r1", preset="classroom", fixations=fixations, saccades=saccades)
    assert window_metric("saccade_count", rec, events, (0.0, 1000.0)) == 2.0
    assert window_metric("saccade_amplitude_mean", rec, events, (0.0, 1000.0)) == pytest.approx(5.0)
    assert window_metric("saccade_duration_mean", rec, events, (0.0, 500.0)) == pytest.approx(50.0)
    assert window_metric("dwell:teacher", rec, events, (0.0, 500.0)) == pytest.approx(200.0)
    assert window_metric("distinct:peer_", rec, events, (0.0, 1000.0)) == 2.0
    with pytest.raises(DataError, match="unknown"):
        window_metric("blink_rate", rec, events, (0.0, 1000.0))
    with pytest.raises(DataError, match="pupil"):
        window_metric("pupil_mean", rec, events, (0.0, 1000.0))


def test_summarize_change_scores(scene):
    """Test the per-metric mean change."""
    rec, fixations = scene
    events = EventStream(recording_id="r1", preset="classroom", fixations=fixations)
    scores = event_locked_change(
        rec, events, [400.0, 600.0], window_ms=300.0, metrics=("pupil_mean", "saccade_count"), pupil=step_pupil(rec, 500.0)
    )
    summary = summarize_change_scores(scores)
    assert list(summary) == ["pupil_mean", "saccade_count"]
    assert summary["saccade_count"] == 0.0
    # onset 400: 1 -> 5/3; onset 600: 4/3 -> 2
    assert summary["pupil_mean"] == pytest.approx(2.0 / 3.0)


def test_aoi_frame_rows(scene):
    """Test one row per epoch and AOI."""
    rec, fixations = scene
    epochs = [(0.0, 500.0), (500.0, 1000.0)]
    per_epoch = [aoi_stats(fixations, rec, ["teacher", "peer_*"], epoch=e) for e in epochs]
    frame = aoi_frame("r1", epochs, per_epoch)
    assert len(frame) == 4
    assert frame["aoi"].tolist() == ["peer_*", "teacher", "peer_*", "teacher"]
    assert frame["epoch_idx"].tolist() == [0, 0, 1, 1]
