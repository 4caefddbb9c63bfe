"""Angular velocities, head-motion segments and head-gated I-VT fixation/saccade detection."""
from __future__ import annotations

import logging
from collections import Counter
from typing import List, Optional, Tuple

import numpy as np
import pandas as pd

from config import DetectionConfig
from errors import DataError
from models import EventStream, Fixation, HeadSegment, PupilSeries, Recording, Saccade
from recording_io import true_runs

logger = logging.getLogger(__name__)

# Values within this relative distance of a threshold count as equal to it
THRESHOLD_RTOL = 1e-9
DURATION_ATOL_MS = 1e-6
IRREGULAR_STEP_FACTOR = 3.0

STATIONARY = "stationary"
MOVING = "moving"


def below(values: np.ndarray, bound: float) -> np.ndarray:
    """Strict ``values < bound``; NaN compares False."""
    with np.errstate(invalid="ignore"):
        return values < bound * (1.0 - THRESHOLD_RTOL)


def above(values: np.ndarray, bound: float) -> np.ndarray:
    """Strict ``values > bound``; NaN compares False."""
    with np.errstate(invalid="ignore"):
        return values > bound * (1.0 + THRESHOLD_RTOL)


def angle_between(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Row-wise angle in degrees between unit vectors."""
    cross = np.linalg.norm(np.cross(a, b), axis=-1)
    dot = np.sum(a * b, axis=-1)
    return np.degrees(np.arctan2(cross, dot))


def quaternion_angle(q1: np.ndarray, q2: np.ndarray) -> np.ndarray:
    """Row-wise rotation angle in degrees between unit quaternions (w, x, y, z)."""
    w1, v1 = q1[..., :1], q1[..., 1:]
    w2, v2 = q2[..., :1], q2[..., 1:]
    # relative rotation conj(q1) * q2
    w = w1[..., 0] * w2[..., 0] + np.sum(v1 * v2, axis=-1)
    v = w1 * v2 - w2 * v1 - np.cross(v1, v2)
    return np.degrees(2.0 * np.arctan2(np.linalg.norm(v, axis=-1), np.abs(w)))


def angular_velocity(directions: np.ndarray, t: np.ndarray, nominal_rate: Optional[float] = None) -> np.ndarray:
    """
    Per-sample angular speed in deg/s from unit vectors (n, 3) or quaternions (n, 4).

    velocity[i] covers the step from sample i-1 to i; the first sample copies
    the second. Missing (NaN) inputs yield NaN velocities.
    """
    directions = np.asarray(directions, dtype=float)
    t = np.asarray(t, dtype=float)
    if len(t) < 2:
        raise DataError("angular velocity needs at least two samples")
    dt = np.diff(t)
    if np.any(dt <= 0):
        bad = int(np.flatnonzero(dt <= 0)[0]) + 1
        raise DataError(f"non-increasing timestamp at sample {bad} ({t[bad]:g} ms)")
    if nominal_rate:
        period = 1000.0 / nominal_rate
        irregular = int(np.sum(dt > IRREGULAR_STEP_FACTOR * period))
        if irregular:
            logger.warning(
                "Irregular sampling interval",
                extra={"n_events": irregular, "result": f"dt > {IRREGULAR_STEP_FACTOR:g}x nominal"},
            )
    if directions.shape[1] == 4:
        angles = quaternion_angle(directions[:-1], directions[1:])
    elif directions.shape[1] == 3:
        angles = angle_between(directions[:-1], directions[1:])
    else:
        raise DataError(f"expected (n, 3) vectors or (n, 4) quaternions, got shape {directions.shape}")
    velocity = np.empty(len(t))
    velocity[1:] = angles / (dt / 1000.0)
    velocity[0] = velocity[1]
    return velocity


def _span(t: np.ndarray, first: int, last: int) -> Tuple[float, float]:
    """Time span of velocity samples first..last: from sample first-1 to sample last."""
    return float(t[max(first - 1, 0)]), float(t[last])


def _within(duration: float, bounds: Tuple[float, float]) -> bool:
    lo, hi = bounds
    return lo - DURATION_ATOL_MS <= duration <= hi + DURATION_ATOL_MS


def head_states(rec: Recording, cfg: DetectionConfig) -> Tuple[np.ndarray, np.ndarray]:
    """Per-sample head velocity and stationary mask after absorbing one-sample segments."""
    velocity = angular_velocity(rec.head, rec.t, rec.nominal_rate)
    stationary = below(velocity, cfg.head_stationary_max)
    runs = _state_runs(stationary)
    for k, (s, e, state) in enumerate(runs):
        if e - s + 1 >= 2:
            continue
        if k > 0:
            stationary[s : e + 1] = stationary[runs[k - 1][0]]
        elif k + 1 < len(runs):
            stationary[s : e + 1] = runs[k + 1][2]
    return velocity, stationary


def _state_runs(mask: np.ndarray) -> List[Tuple[int, int, bool]]:
    change = np.flatnonzero(mask[1:] != mask[:-1]) + 1
    starts = np.concatenate(([0], change))
    ends = np.concatenate((change - 1, [len(mask) - 1]))
    return [(int(s), int(e), bool(mask[s])) for s, e in zip(starts, ends)]


def head_segments(rec: Recording, cfg: DetectionConfig) -> List[HeadSegment]:
    """
    Partition the recording into stationary/moving head segments.

    A sample is stationary when head velocity is strictly below
    ``head_stationary_max``; segments shorter than two samples are absorbed
    into their neighbours.
    """
    _, stationary = head_states(rec, cfg)
    segments = []
    for s, e, state in _state_runs(stationary):
        onset, offset = _span(rec.t, s, e)
        segments.append(
            HeadSegment(
                onset_ms=onset,
                offset_ms=offset,
                state=STATIONARY if state else MOVING,
                first_sample=s,
                last_sample=e,
            )
        )
    return segments


def gaze_velocity(rec: Recording) -> np.ndarray:
    """Gaze angular velocity; samples without usable gaze on either side are NaN."""
    gaze = np.where(rec.usable_gaze[:, None], rec.gaze, np.nan)
    return angular_velocity(gaze, rec.t, rec.nominal_rate)


def _usable_steps(rec: Recording) -> np.ndarray:
    usable = rec.usable_gaze
    steps = usable.copy()
    steps[1:] &= usable[:-1]
    return steps


def majority_aoi(labels: List[Optional[str]]) -> Optional[str]:
    """Most frequent non-empty label; ties go to the label hit first."""
    hits = [label for label in labels if label]
    if not hits:
        return None
    counts = Counter(hits)
    best = max(counts.values())
    for label in hits:
        if counts[label] == best:
            return label
    return None


def detect_fixations(
    rec: Recording,
    cfg: DetectionConfig,
    pupil: Optional[PupilSeries] = None,
    velocity: Optional[np.ndarray] = None,
) -> List[Fixation]:
    """
    Head-gated I-VT fixations.

    Candidates are maximal runs where the head is stationary and gaze
    velocity is strictly below ``fixation_gaze_max``; gaze still missing after
    interpolation breaks a run. Runs outside ``fixation_dur`` are dropped,
    not split.
    """
    v = gaze_velocity(rec) if velocity is None else velocity
    _, stationary = head_states(rec, cfg)
    candidate = below(v, cfg.fixation_gaze_max) & stationary & _usable_steps(rec)
    fixations = []
    for s, e in true_runs(candidate):
        onset, offset = _span(rec.t, s, e)
        if not _within(offset - onset, cfg.fixation_dur):
            continue
        members = np.arange(max(s - 1, 0), e + 1)
        mean_dir = np.mean(rec.gaze[members], axis=0)
        centroid = mean_dir / np.linalg.norm(mean_dir)
        mean_pupil = None
        if pupil is not None:
            member_pupil = pupil.value[members][~pupil.missing_mask[members]]
            if member_pupil.size:
                mean_pupil = float(np.mean(member_pupil))
        fixations.append(
            Fixation(
                onset_ms=onset,
                offset_ms=offset,
                centroid_dir=tuple(float(c) for c in centroid),
                first_sample=int(members[0]),
                last_sample=int(members[-1]),
                mean_pupil=mean_pupil,
                aoi=majority_aoi([rec.aoi[i] for i in members]),
            )
        )
    return fixations


def detect_saccades(rec: Recording, cfg: DetectionConfig, velocity: Optional[np.ndarray] = None) -> List[Saccade]:
    """
    Plain I-VT saccades: runs of gaze velocity strictly above
    ``saccade_gaze_min``, with no head gate, filtered by ``saccade_dur``.
    Amplitude is the start-to-end angle.
    """
    v = gaze_velocity(rec) if velocity is None else velocity
    candidate = above(v, cfg.saccade_gaze_min) & _usable_steps(rec)
    saccades = []
    for s, e in true_runs(candidate):
        onset, offset = _span(rec.t, s, e)
        if not _within(offset - onset, cfg.saccade_dur):
            continue
        start = max(s - 1, 0)
        amplitude = float(angle_between(rec.gaze[start], rec.gaze[e]))
        run = v[s : e + 1]
        saccades.append(
            Saccade(
                onset_ms=onset,
                offset_ms=offset,
                amplitude_deg=amplitude,
                peak_velocity=float(np.max(run)),
                mean_velocity=float(np.mean(run)),
                first_sample=start,
                last_sample=e,
            )
        )
    return saccades


def detect_events(rec: Recording, cfg: DetectionConfig, pupil: Optional[PupilSeries] = None) -> EventStream:
    """Head segments, fixations and saccades for an interpolated recording."""
    velocity = gaze_velocity(rec)
    fixations = detect_fixations(rec, cfg, pupil=pupil, velocity=velocity)
    saccades = detect_saccades(rec, cfg, velocity=velocity)
    segments = head_segments(rec, cfg)
    logger.info(
        "Detected events",
        extra={
            "recording": rec.id,
            "preset": cfg.name,
            "n_fixations": len(fixations),
            "n_saccades": len(saccades),
        },
    )
    return EventStream(
        recording_id=rec.id,
        preset=cfg.name,
        fixations=tuple(fixations),
        saccades=tuple(saccades),
        head_segments=tuple(segments),
        gaze_velocity=velocity,
    )


def events_frame(events: EventStream) -> pd.DataFrame:
    """One row per event with type, timing and the type-specific columns."""
    rows = []
    for f in events.fixations:
        rows.append(
            {
                "type": "fixation",
                "onset_ms": f.onset_ms,
                "offset_ms": f.offset_ms,
                "duration_ms": f.duration_ms,
                "centroid_x": f.centroid_dir[0],
                "centroid_y": f.centroid_dir[1],
                "centroid_z": f.centroid_dir[2],
                "mean_pupil": f.mean_pupil,
                "aoi": f.aoi,
            }
        )
    for s in events.saccades:
        rows.append(
            {
                "type": "saccade",
                "onset_ms": s.onset_ms,
                "offset_ms": s.offset_ms,
                "duration_ms": s.duration_ms,
                "amplitude_deg": s.amplitude_deg,
                "peak_velocity": s.peak_velocity,
                "mean_velocity": s.mean_velocity,
            }
        )
    for b in events.blinks:
        rows.append(
            {
                "type": "blink",
                "onset_ms": b.onset_ms,
                "offset_ms": b.offset_ms,
                "duration_ms": b.duration_ms,
                "core_gap_ms": b.core_gap_ms,
            }
        )
    for h in events.head_segments:
        rows.append(
            {
                "type": "head",
                "onset_ms": h.onset_ms,
                "offset_ms": h.offset_ms,
                "duration_ms": h.duration_ms,
                "state": h.state,
            }
        )
    columns = [
        "type",
        "onset_ms",
        "offset_ms",
        "duration_ms",
        "centroid_x",
        "centroid_y",
        "centroid_z",
        "mean_pupil",
        "aoi",
        "amplitude_deg",
        "peak_velocity",
        "mean_velocity",
        "core_gap_ms",
        "state",
    ]
    frame = pd.DataFrame(rows, columns=columns)
    order = {"head": 0, "blink": 1, "fixation": 2, "saccade": 3}
    frame["_order"] = frame["type"].map(order)
    frame = frame.sort_values(["onset_ms", "_order"], kind="mergesort").drop(columns="_order")
    frame.insert(0, "recording", events.recording_id)
    return frame.reset_index(drop=True)
