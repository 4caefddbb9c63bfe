"""Pupil cleaning: left/right fusion, Savitzky-Golay smoothing, divisive baseline correction and blink detection."""
from __future__ import annotations

import logging
from dataclasses import replace
from typing import List, Optional, Tuple

import numpy as np
import pandas as pd
from numpy.lib.stride_tricks import sliding_window_view
from scipy.signal import savgol_coeffs

from config import BlinkConfig, PupilConfig
from errors import BaselineError, DataError
from models import Blink, PupilSeries, Recording
from recording_io import true_runs

logger = logging.getLogger(__name__)


class SmoothingConfigError(DataError):
    """Savitzky-Golay window/order combination is unusable."""


def fuse_pupils(rec: Recording) -> PupilSeries:
    """Mean of the valid eyes per frame; a single valid eye is used as is."""
    both = np.vstack([rec.pupil_left, rec.pupil_right])
    counts = np.sum(np.isfinite(both), axis=0)
    total = np.nansum(both, axis=0)
    value = np.where(counts > 0, total / np.maximum(counts, 1), np.nan)
    return PupilSeries(t=rec.t.copy(), value=value, missing_mask=counts == 0, recording_id=rec.id)


def savitzky_golay(series: PupilSeries, window_len: int = 11, poly_order: int = 3) -> PupilSeries:
    """
    Smooth with a local least-squares polynomial, skipping missing samples.

    Each present sample is replaced by the value at its own timestamp of the
    degree-``poly_order`` polynomial fitted over the centered window. Windows
    are truncated at the series edges, and missing samples are left out of the
    fit; when fewer than ``poly_order + 1`` samples remain the raw value passes
    through. Complete, evenly spaced windows use the precomputed convolution
    kernel; everything else is fitted directly.
    """
    if window_len % 2 == 0:
        raise SmoothingConfigError(f"window_len must be odd, got {window_len}")
    if poly_order >= window_len:
        raise SmoothingConfigError(f"poly_order ({poly_order}) must be below window_len ({window_len})")
    if window_len < poly_order + 2:
        raise SmoothingConfigError(f"window_len must be at least poly_order + 2 = {poly_order + 2}")

    t = series.t
    y = series.value
    missing = series.missing_mask
    n = len(t)
    half = window_len // 2
    out = y.copy()
    if n == 0:
        return replace(series, value=out)

    steps = np.diff(t)
    step = float(np.median(steps)) if steps.size else 1.0
    fast = np.zeros(n, dtype=bool)
    if n >= window_len and step > 0:
        kernel = savgol_coeffs(window_len, poly_order, use="dot")
        t_win = sliding_window_view(t, window_len)
        m_win = sliding_window_view(missing, window_len)
        expected = (np.arange(window_len) - half) * step
        offsets = t_win - t_win[:, half : half + 1]
        regular = np.all(np.abs(offsets - expected) <= 1e-9 * max(step, 1.0), axis=1)
        complete = ~np.any(m_win, axis=1)
        ok = regular & complete
        centers = np.arange(half, n - half)
        values = sliding_window_view(np.where(missing, 0.0, y), window_len) @ kernel
        out[centers[ok]] = values[ok]
        fast[centers[ok]] = True

    for i in np.flatnonzero(~fast & ~missing):
        lo, hi = max(0, i - half), min(n, i + half + 1)
        idx = np.arange(lo, hi)
        idx = idx[~missing[lo:hi]]
        if idx.size < poly_order + 1:
            continue
        x = (t[idx] - t[i]) / step
        vander = np.vander(x, poly_order + 1, increasing=True)
        coef, *_ = np.linalg.lstsq(vander, y[idx], rcond=None)
        out[i] = coef[0]
    return replace(series, value=out)


def baseline_correct_divisive(
    series: PupilSeries,
    baseline_window_ms: float = 1000.0,
    estimator: str = "median",
    anchor_ms: Optional[float] = None,
) -> PupilSeries:
    """
    Divide the whole series by a baseline taken from a leading window.

    The baseline window is [anchor, anchor + baseline_window_ms), where the
    anchor defaults to the first sample (per-recording normalization); pass
    ``anchor_ms`` to normalize against a later phase onset instead.
    """
    if series.normalized:
        raise DataError(f"recording {series.recording_id!r}: pupil series is already normalized")
    start = float(series.t[0]) if anchor_ms is None else float(anchor_ms)
    in_window = (series.t >= start) & (series.t < start + baseline_window_ms) & ~series.missing_mask
    if not in_window.any():
        raise BaselineError(
            f"recording {series.recording_id!r}: no valid pupil samples in the "
            f"{baseline_window_ms:g} ms baseline window starting at {start:g} ms"
        )
    values = series.value[in_window]
    if estimator == "median":
        baseline = float(np.median(values))
    elif estimator == "mean":
        baseline = float(np.mean(values))
    else:
        raise ValueError(f"unknown baseline estimator {estimator!r}")
    if not baseline > 0:
        raise BaselineError(f"recording {series.recording_id!r}: non-positive baseline {baseline!r}")
    return replace(series, value=series.value / baseline, normalized=True, baseline=baseline)


def restore_scale(series: PupilSeries) -> PupilSeries:
    """Undo divisive normalization using the stored baseline."""
    if not series.normalized:
        return series
    return replace(series, value=series.value * series.baseline, normalized=False, baseline=None)


def clean_pupil(rec: Recording, cfg: PupilConfig) -> Tuple[PupilSeries, PupilSeries]:
    """Return (raw fused series, smoothed and normalized series)."""
    raw = fuse_pupils(rec)
    smoothed = savitzky_golay(raw, cfg.sg_window, cfg.sg_order)
    cleaned = baseline_correct_divisive(smoothed, cfg.baseline_window_ms, cfg.estimator)
    return raw, cleaned


def _run_span(t: np.ndarray, start: int, end: int, step: float) -> Tuple[float, float]:
    onset = float(t[start])
    offset = float(t[end + 1]) if end + 1 < len(t) else float(t[end]) + step
    return onset, offset


def detect_blinks(raw: PupilSeries, cfg: Optional[BlinkConfig] = None) -> List[Blink]:
    """
    Find blinks from missing pupil runs and the steep transients around them.

    A missing run of at least ``min_core_ms`` is a blink core. Its onset moves
    back over samples reached by a slope steeper than ``slope_threshold``
    (mm/s) and its offset forward over samples left by one, so the flanking
    eyelid ramps belong to the blink. Blinks closer than ``merge_gap_ms`` are
    merged, then kept only if their duration lies in [min_dur_ms, max_dur_ms].
    """
    cfg = cfg or BlinkConfig()
    t = raw.t
    n = len(t)
    if n == 0:
        return []
    steps = np.diff(t)
    step = float(np.median(steps)) if steps.size else 0.0
    value = raw.value
    missing = raw.missing_mask

    slope = np.full(max(n - 1, 0), np.nan)
    if n > 1:
        with np.errstate(invalid="ignore", divide="ignore"):
            slope = np.diff(value) / (steps / 1000.0)
    steep = np.abs(np.nan_to_num(slope, nan=0.0)) > cfg.slope_threshold

    spans: List[List[float]] = []
    for s, e in true_runs(missing):
        core_onset, core_offset = _run_span(t, s, e, step)
        core = core_offset - core_onset
        if core + 1e-9 < cfg.min_core_ms:
            continue
        # Sample k joins the onset ramp when the slope arriving at it is steep
        first = s
        while first >= 2 and not missing[first - 1] and not missing[first - 2] and steep[first - 2]:
            first -= 1
        # and the offset ramp when the slope leaving it is steep
        last = e + 1
        while last < n - 1 and not missing[last] and not missing[last + 1] and steep[last]:
            last += 1
        onset = float(t[first])
        offset = float(t[last]) if last < n else float(t[-1]) + step
        if spans and onset - spans[-1][1] < cfg.merge_gap_ms:
            spans[-1][1] = max(spans[-1][1], offset)
            spans[-1][2] += core
        else:
            spans.append([onset, offset, core])

    return [
        Blink(onset_ms=o, offset_ms=f, core_gap_ms=c)
        for o, f, c in spans
        if cfg.min_dur_ms - 1e-9 <= f - o <= cfg.max_dur_ms + 1e-9
    ]


def export_pupil_csv(series: PupilSeries) -> pd.DataFrame:
    """Cleaned series as a frame with t_ms, value and missing columns."""
    return pd.DataFrame({"t_ms": series.t, "value": series.value, "missing": series.missing_mask})
