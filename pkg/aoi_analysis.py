"""Area-of-interest statistics, click-joined C-AOI statistics and event-locked change scores."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from errors import DataError
from models import ClickEvent, EventStream, Fixation, PupilSeries, Recording, Summary

logger = logging.getLogger(__name__)

Epoch = Tuple[float, float]

EPOCH_TOL_MS = 1e-9


@dataclass(frozen=True)
class AoiStats:
    aoi: str
    n_fixations: int
    fixation_duration: Summary
    dwell_ms: float
    ttff_ms: Optional[float] = None
    ffd_ms: Optional[float] = None


@dataclass(frozen=True)
class CAoiStats:
    """Fixation statistics restricted to the AOIs that were clicked in the epoch."""

    n_clicks: int
    targets: Tuple[str, ...]
    n_fixations: int
    fixation_duration: Summary


@dataclass(frozen=True)
class ChangeScore:
    metric: str
    onset_ms: float
    value_before: float
    value_after: float
    change: float
    window_ms: float


def aoi_matches(label: Optional[str], key: str) -> bool:
    """``key`` is an exact AOI id, or a prefix group when it ends in ``*``."""
    if not label:
        return False
    if key.endswith("*"):
        return label.startswith(key[:-1])
    return label == key


def check_epoch(rec: Recording, epoch: Epoch) -> Epoch:
    t0, t1 = float(epoch[0]), float(epoch[1])
    if not t0 < t1:
        raise DataError(f"recording {rec.id!r}: empty epoch [{t0:g}, {t1:g})")
    if t0 < rec.start_ms - EPOCH_TOL_MS or t1 > rec.end_ms + EPOCH_TOL_MS:
        raise DataError(
            f"recording {rec.id!r}: epoch [{t0:g}, {t1:g}) outside recording "
            f"[{rec.start_ms:g}, {rec.end_ms:g})"
        )
    return t0, t1


def in_epoch(onset_ms: float, epoch: Epoch) -> bool:
    return epoch[0] <= onset_ms < epoch[1]


def epoch_fixations(fixations: Iterable[Fixation], epoch: Epoch) -> List[Fixation]:
    """Fixations whose onset falls in the half-open epoch."""
    return [f for f in fixations if in_epoch(f.onset_ms, epoch)]


def dwell_ms(rec: Recording, key: str, epoch: Epoch) -> float:
    """Total frame time whose hit label matches ``key``, clipped to the epoch."""
    starts = rec.t
    ends = np.append(rec.t[1:], rec.end_ms)
    overlap = np.clip(np.minimum(ends, epoch[1]) - np.maximum(starts, epoch[0]), 0.0, None)
    hits = np.fromiter((aoi_matches(label, key) for label in rec.aoi), dtype=bool, count=rec.n_frames)
    return float(np.sum(overlap[hits]))


def aoi_stats(
    fixations: Sequence[Fixation],
    rec: Recording,
    aoi_set: Iterable[str],
    epoch: Optional[Epoch] = None,
) -> Dict[str, AoiStats]:
    """
    Per-AOI fixation counts, duration statistics, dwell, TTFF and FFD.

    Fixations count toward the epoch holding their onset. Dwell sums raw frame
    hits, saccade samples included. The first fixation's duration is cut at
    the epoch end.
    """
    t0, t1 = check_epoch(rec, epoch or (rec.start_ms, rec.end_ms))
    inside = epoch_fixations(fixations, (t0, t1))
    result = {}
    for key in aoi_set:
        matched = [f for f in inside if aoi_matches(f.aoi, key)]
        ttff = ffd = None
        if matched:
            first = min(matched, key=lambda f: f.onset_ms)
            ttff = first.onset_ms - t0
            ffd = min(first.offset_ms, t1) - first.onset_ms
        result[key] = AoiStats(
            aoi=key,
            n_fixations=len(matched),
            fixation_duration=Summary.of([f.duration_ms for f in matched]),
            dwell_ms=dwell_ms(rec, key, (t0, t1)),
            ttff_ms=ttff,
            ffd_ms=ffd,
        )
    return result


def distinct_aoi_count(fixations: Sequence[Fixation], aoi_prefix: str, epoch: Epoch) -> int:
    """Number of distinct AOI ids starting with ``aoi_prefix`` fixated in the epoch."""
    return len({f.aoi for f in epoch_fixations(fixations, epoch) if f.aoi and f.aoi.startswith(aoi_prefix)})


def join_clicks(events: EventStream, clicks: Optional[Sequence[ClickEvent]], epoch: Epoch) -> CAoiStats:
    """Fixation statistics over the AOIs clicked inside the epoch."""
    clicks = events.clicks if clicks is None else clicks
    inside = [c for c in clicks if in_epoch(c.t_ms, epoch)]
    targets = tuple(sorted({c.target for c in inside}))
    matched = [f for f in epoch_fixations(events.fixations, epoch) if f.aoi in targets]
    return CAoiStats(
        n_clicks=len(inside),
        targets=targets,
        n_fixations=len(matched),
        fixation_duration=Summary.of([f.duration_ms for f in matched]),
    )


def window_metric(
    metric: str,
    rec: Recording,
    events: EventStream,
    epoch: Epoch,
    pupil: Optional[PupilSeries] = None,
) -> float:
    """Value of one change-score metric over an epoch."""
    if metric == "pupil_mean":
        if pupil is None:
            raise DataError(f"recording {rec.id!r}: metric 'pupil_mean' needs a pupil series")
        keep = (pupil.t >= epoch[0]) & (pupil.t < epoch[1]) & ~pupil.missing_mask
        return float(np.mean(pupil.value[keep])) if keep.any() else 0.0
    if metric == "fixation_duration_mean":
        return Summary.of([f.duration_ms for f in epoch_fixations(events.fixations, epoch)]).mean
    saccades = [s for s in events.saccades if in_epoch(s.onset_ms, epoch)]
    if metric == "saccade_count":
        return float(len(saccades))
    if metric == "saccade_duration_mean":
        return Summary.of([s.duration_ms for s in saccades]).mean
    if metric == "saccade_amplitude_mean":
        return Summary.of([s.amplitude_deg for s in saccades]).mean
    kind, _, key = metric.partition(":")
    if kind == "dwell" and key:
        return dwell_ms(rec, key, epoch)
    if kind == "distinct" and key:
        return float(distinct_aoi_count(events.fixations, key, epoch))
    raise DataError(f"unknown change-score metric {metric!r}")


def onset_fits(rec: Recording, onset_ms: float, window_ms: float) -> bool:
    return onset_ms - window_ms >= rec.start_ms - EPOCH_TOL_MS and onset_ms + window_ms <= rec.end_ms + EPOCH_TOL_MS


def event_locked_change(
    rec: Recording,
    events: EventStream,
    events_at: Sequence[float],
    window_ms: float = 2500.0,
    metrics: Sequence[str] = ("pupil_mean",),
    pupil: Optional[PupilSeries] = None,
) -> List[ChangeScore]:
    """
    Before/after change scores around each onset.

    The before window is [onset - window_ms, onset) and the after window
    [onset, onset + window_ms). Onsets without a full window on both sides
    are skipped with a warning.
    """
    scores = []
    for onset in events_at:
        onset = float(onset)
        if not onset_fits(rec, onset, window_ms):
            logger.warning(
                "Onset too close to recording boundary, skipped",
                extra={"recording": rec.id, "onset_ms": onset},
            )
            continue
        before = (onset - window_ms, onset)
        after = (onset, onset + window_ms)
        for metric in metrics:
            value_before = window_metric(metric, rec, events, before, pupil)
            value_after = window_metric(metric, rec, events, after, pupil)
            scores.append(
                ChangeScore(
                    metric=metric,
                    onset_ms=onset,
                    value_before=value_before,
                    value_after=value_after,
                    change=value_after - value_before,
                    window_ms=window_ms,
                )
            )
    return scores


def skipped_onsets(rec: Recording, events_at: Sequence[float], window_ms: float) -> List[float]:
    return [float(o) for o in events_at if not onset_fits(rec, float(o), window_ms)]


def summarize_change_scores(scores: Sequence[ChangeScore]) -> Dict[str, float]:
    """Mean change per metric, in first-seen metric order."""
    grouped: Dict[str, List[float]] = {}
    for score in scores:
        grouped.setdefault(score.metric, []).append(score.change)
    return {metric: float(np.mean(changes)) for metric, changes in grouped.items()}


def aoi_frame(recording_id: str, epochs: Sequence[Epoch], per_epoch: Sequence[Dict[str, AoiStats]]) -> pd.DataFrame:
    """One row per (recording, epoch, AOI)."""
    rows = []
    for idx, (epoch, stats) in enumerate(zip(epochs, per_epoch)):
        for key in sorted(stats):
            s = stats[key]
            rows.append(
                {
                    "recording": recording_id,
                    "epoch_idx": idx,
                    "t0_ms": epoch[0],
                    "t1_ms": epoch[1],
                    "aoi": key,
                    "n_fixations": s.n_fixations,
                    "fix_dur_mean": s.fixation_duration.mean,
                    "fix_dur_min": s.fixation_duration.min,
                    "fix_dur_max": s.fixation_duration.max,
                    "fix_dur_sum": s.fixation_duration.sum,
                    "fix_dur_sd": s.fixation_duration.sd,
                    "dwell_ms": s.dwell_ms,
                    "ttff_ms": s.ttff_ms,
                    "ffd_ms": s.ffd_ms,
                }
            )
    return pd.DataFrame(rows)


def change_scores_frame(recording_id: str, participant: str, scores: Sequence[ChangeScore]) -> pd.DataFrame:
    columns = ["recording", "participant", "metric", "onset_ms", "value_before", "value_after", "change", "window_ms"]
    rows = [
        {
            "recording": recording_id,
            "participant": participant,
            "metric": s.metric,
            "onset_ms": s.onset_ms,
            "value_before": s.value_before,
            "value_after": s.value_after,
            "change": s.change,
            "window_ms": s.window_ms,
        }
        for s in scores
    ]
    return pd.DataFrame(rows, columns=columns)
