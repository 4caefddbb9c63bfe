"""Sliding windows, the published feature catalogs and feature-matrix normalization."""
from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from aoi_analysis import Epoch, aoi_matches, distinct_aoi_count, dwell_ms, in_epoch, join_clicks
from config import STUDY_DEFAULTS
from errors import DataError, PresetMismatchError
from models import AnalyzedRecording, EventStream, PupilSeries, Recording, Summary

logger = logging.getLogger(__name__)

META_COLUMNS = ("group_id", "trial_id", "window_idx", "label")
EMPTY_COLUMN = "empty_sources"
WINDOW_TOL_MS = 1e-6


@dataclass(frozen=True)
class FeatureDescriptor:
    """One catalog column: ``statistic`` of ``source`` values inside a window."""

    id: str
    unit: str
    source: str
    statistic: str
    aoi: Optional[str] = None


@dataclass(frozen=True)
class FeatureCatalog:
    name: str
    preset: str
    descriptors: Tuple[FeatureDescriptor, ...]
    rate_per_s: float = 1.0

    def __post_init__(self) -> None:
        ids = [d.id for d in self.descriptors]
        if len(set(ids)) != len(ids):
            raise ValueError(f"catalog {self.name!r} has duplicate feature ids")

    @property
    def ids(self) -> Tuple[str, ...]:
        return tuple(d.id for d in self.descriptors)

    @property
    def size(self) -> int:
        return len(self.descriptors)


def _stats(prefix: str, unit: str, source: str, statistics: Sequence[str], aoi: Optional[str] = None) -> List[FeatureDescriptor]:
    return [FeatureDescriptor(f"{prefix}_{stat}", unit, source, stat, aoi) for stat in statistics]


FULL = ("mean", "min", "max", "sum", "sd")
NO_SUM = ("mean", "min", "max", "sd")
SUM_NO_SD = ("mean", "min", "max", "sum")


def _classroom() -> FeatureCatalog:
    d: List[FeatureDescriptor] = [
        FeatureDescriptor("hmd_move_rate", "1/s", "head_moving", "rate"),
        FeatureDescriptor("fixation_rate", "1/s", "fixation", "rate"),
    ]
    d += _stats("fixation_duration", "ms", "fixation_duration", FULL)
    groups = (("peer", "peer_*"), ("teacher", "teacher"), ("screen", "screen"))
    d += [FeatureDescriptor(f"fixation_count_{name}", "count", "aoi_fixation", "count", key) for name, key in groups]
    for name, key in groups:
        d += _stats(f"fixation_duration_{name}", "ms", "aoi_fixation_duration", NO_SUM, key)
    d += [FeatureDescriptor(f"dwell_{name}", "ms", "dwell", "value", key) for name, key in groups]
    d.append(FeatureDescriptor("saccade_rate", "1/s", "saccade", "rate"))
    d += _stats("saccade_duration", "ms", "saccade_duration", FULL)
    d += _stats("saccade_amplitude", "deg", "saccade_amplitude", FULL)
    d += _stats("saccade_peak_velocity", "deg/s", "saccade_peak_velocity", NO_SUM)
    d += _stats("pupil", "normalized", "pupil", ("mean", "sd"))
    d.append(FeatureDescriptor("fixated_peer_count", "count", "distinct_aoi", "value", "peer_"))
    return FeatureCatalog("classroom-gender-43", "classroom", tuple(d))


def _teacher() -> FeatureCatalog:
    d: List[FeatureDescriptor] = [FeatureDescriptor("fixation_count", "count", "fixation", "count")]
    d += _stats("fixation_duration", "ms", "fixation_duration", SUM_NO_SD)
    d.append(FeatureDescriptor("aoi_fixation_count", "count", "aoi_fixation", "count", "student_*"))
    d += _stats("aoi_fixation_duration", "ms", "aoi_fixation_duration", SUM_NO_SD, "student_*")
    d.append(FeatureDescriptor("saccade_count", "count", "saccade", "count"))
    d += _stats("saccade_duration", "ms", "saccade_duration", SUM_NO_SD)
    d += _stats("saccade_amplitude", "deg", "saccade_amplitude", SUM_NO_SD)
    d += _stats("saccade_peak_velocity", "deg/s", "saccade_peak_velocity", ("mean", "min", "max"))
    d.append(FeatureDescriptor("sacc_fixa_ratio", "ratio", "sacc_fixa_ratio", "value"))
    d.append(FeatureDescriptor("blink_count", "count", "blink", "count"))
    d += _stats("blink_duration", "ms", "blink_duration", ("mean", "min", "max"))
    d += _stats("pupil", "normalized", "pupil", ("mean", "min", "max"))
    d.append(FeatureDescriptor("click_count", "count", "click", "count"))
    d.append(FeatureDescriptor("caoi_fixation_count", "count", "caoi_fixation", "count"))
    d += _stats("caoi_fixation_duration", "ms", "caoi_fixation_duration", SUM_NO_SD)
    return FeatureCatalog("teacher-expertise-36", "teacher", tuple(d))


def _locomotion() -> FeatureCatalog:
    ordered = ("mean", "sd", "min", "max")
    ordered_sum = ("mean", "sd", "min", "max", "sum")
    d = _stats("pupil", "normalized", "pupil", ordered)
    d += _stats("pupil_fixation", "normalized", "pupil_fixation", ordered)
    d.append(FeatureDescriptor("fixation_rate", "1/min", "fixation", "rate"))
    d += _stats("fixation_duration", "ms", "fixation_duration", ordered_sum)
    d.append(FeatureDescriptor("saccade_rate", "1/min", "saccade", "rate"))
    d += _stats("saccade_duration", "ms", "saccade_duration", ordered_sum)
    d += _stats("saccade_amplitude", "deg", "saccade_amplitude", ordered_sum)
    d += _stats("saccade_velocity", "deg/s", "saccade_velocity", ordered)
    d += _stats("saccade_peak_velocity", "deg/s", "saccade_peak_velocity", ordered)
    return FeatureCatalog("locomotion-ux-33", "locomotion", tuple(d), rate_per_s=60.0)


CATALOGS: Dict[str, FeatureCatalog] = {c.name: c for c in (_classroom(), _teacher(), _locomotion())}


def get_catalog(name: str) -> FeatureCatalog:
    try:
        return CATALOGS[name]
    except KeyError:
        raise DataError(f"unknown catalog {name!r}; expected one of {sorted(CATALOGS)}")


def sliding_windows(rec: Recording, window_s: float, step_s: Optional[float] = None) -> List[Epoch]:
    """
    Windows of ``window_s`` seconds every ``step_s`` seconds, fully inside the
    recording; the trailing remainder is dropped. ``step_s`` defaults to the
    window length.
    """
    if window_s <= 0:
        raise ValueError("window_s must be > 0")
    step_s = window_s if step_s is None else step_s
    if step_s <= 0:
        raise ValueError("step_s must be > 0")
    width = window_s * 1000.0
    step = step_s * 1000.0
    span = rec.duration_ms
    if width > span + WINDOW_TOL_MS:
        logger.warning(
            "Window longer than recording",
            extra={"recording": rec.id, "window_s": window_s, "result": f"duration {span / 1000.0:g} s"},
        )
        return []
    count = int(np.floor((span - width + WINDOW_TOL_MS) / step)) + 1
    return [(rec.start_ms + k * step, rec.start_ms + k * step + width) for k in range(count)]


@dataclass(frozen=True)
class WindowFeatures:
    values: np.ndarray
    empty_sources: Tuple[str, ...] = ()


def _pupil_values(pupil: PupilSeries, window: Epoch) -> np.ndarray:
    keep = (pupil.t >= window[0]) & (pupil.t < window[1]) & ~pupil.missing_mask
    return pupil.value[keep]


def _source_values(
    source: str,
    aoi: Optional[str],
    rec: Recording,
    events: EventStream,
    window: Epoch,
    pupil: Optional[PupilSeries],
    pooled_velocity: bool,
) -> Union[List[float], np.ndarray, float]:
    fixations = [f for f in events.fixations if in_epoch(f.onset_ms, window)]
    saccades = [s for s in events.saccades if in_epoch(s.onset_ms, window)]
    if source == "fixation" or source == "fixation_duration":
        return [f.duration_ms for f in fixations]
    if source in ("aoi_fixation", "aoi_fixation_duration"):
        return [f.duration_ms for f in fixations if aoi_matches(f.aoi, aoi)]
    if source == "head_moving":
        return [h.duration_ms for h in events.head_segments if h.state == "moving" and in_epoch(h.onset_ms, window)]
    if source in ("saccade", "saccade_duration"):
        return [s.duration_ms for s in saccades]
    if source == "saccade_amplitude":
        return [s.amplitude_deg for s in saccades]
    if source == "saccade_peak_velocity":
        return [s.peak_velocity for s in saccades]
    if source == "saccade_velocity":
        if pooled_velocity and events.gaze_velocity is not None:
            pooled = [events.gaze_velocity[s.first_sample + 1 : s.last_sample + 1] for s in saccades]
            return np.concatenate(pooled) if pooled else []
        return [s.mean_velocity for s in saccades]
    if source in ("blink", "blink_duration"):
        return [b.duration_ms for b in events.blinks if in_epoch(b.onset_ms, window)]
    if source == "click":
        return [c.t_ms for c in events.clicks if in_epoch(c.t_ms, window)]
    if source in ("caoi_fixation", "caoi_fixation_duration"):
        caoi = join_clicks(events, None, window)
        return [f.duration_ms for f in fixations if f.aoi in caoi.targets]
    if source == "dwell":
        return dwell_ms(rec, aoi, window)
    if source == "distinct_aoi":
        return float(distinct_aoi_count(events.fixations, aoi, window))
    if source == "sacc_fixa_ratio":
        fix_sum = sum(f.duration_ms for f in fixations)
        return sum(s.duration_ms for s in saccades) / fix_sum if fix_sum > 0 else 0.0
    if source in ("pupil", "pupil_fixation"):
        if pupil is None:
            raise DataError(f"recording {rec.id!r}: pupil features need a cleaned pupil series")
        if source == "pupil":
            return _pupil_values(pupil, window)
        members = np.zeros(len(pupil.t), dtype=bool)
        for f in fixations:
            members[f.first_sample : f.last_sample + 1] = True
        return pupil.value[members & ~pupil.missing_mask]
    raise DataError(f"unknown feature source {source!r}")


def extract_features(
    rec: Recording,
    events: EventStream,
    window: Epoch,
    catalog: FeatureCatalog,
    pupil: Optional[PupilSeries] = None,
    preset: Optional[str] = None,
    pooled_velocity: bool = False,
) -> WindowFeatures:
    """
    Compute one catalog row for a window.

    Events belong to the window holding their onset. Statistics over an empty
    event set are 0 and the source is listed in ``empty_sources``. ``preset``
    is the detection preset the caller declared; it defaults to the catalog's.
    """
    declared = preset or catalog.preset
    if events.preset != declared:
        raise PresetMismatchError(
            f"recording {rec.id!r}: events detected with preset {events.preset!r}, "
            f"but {declared!r} was declared for catalog {catalog.name!r}"
        )
    window_seconds = (window[1] - window[0]) / 1000.0
    cache: Dict[Tuple[str, Optional[str]], object] = {}
    empty: List[str] = []
    values = np.zeros(catalog.size)
    for i, d in enumerate(catalog.descriptors):
        key = (d.source, d.aoi)
        if key not in cache:
            cache[key] = _source_values(d.source, d.aoi, rec, events, window, pupil, pooled_velocity)
        raw = cache[key]
        if d.statistic == "value":
            values[i] = float(raw)
            continue
        arr = np.asarray(raw, dtype=float)
        if d.statistic == "count":
            values[i] = float(arr.size)
        elif d.statistic == "rate":
            values[i] = arr.size / window_seconds * catalog.rate_per_s
        else:
            if arr.size == 0:
                label = d.source if d.aoi is None else f"{d.source}:{d.aoi}"
                if label not in empty:
                    empty.append(label)
            values[i] = getattr(Summary.of(arr), d.statistic)
    return WindowFeatures(values=values, empty_sources=tuple(empty))


@dataclass(frozen=True)
class Normalization:
    """x' = (x - offset) / scale per feature; a zero scale maps the feature to 0."""

    method: str
    offset: np.ndarray
    scale: np.ndarray

    def to_dict(self) -> dict:
        return {"method": self.method, "offset": self.offset.tolist(), "scale": self.scale.tolist()}


@dataclass(frozen=True, eq=False)
class FeatureMatrix:
    catalog: str
    feature_ids: Tuple[str, ...]
    X: np.ndarray
    group_ids: Tuple[str, ...]
    trial_ids: Tuple[str, ...]
    window_idx: np.ndarray
    labels: np.ndarray
    classes: Tuple[str, ...] = ("0", "1")
    empty_sources: Tuple[Tuple[str, ...], ...] = ()
    normalization: Optional[Normalization] = None
    window_s: Optional[float] = None

    def __post_init__(self) -> None:
        n = self.X.shape[0]
        if self.X.ndim != 2 or self.X.shape[1] != len(self.feature_ids):
            raise ValueError(f"feature matrix width {self.X.shape} does not match {len(self.feature_ids)} ids")
        if not (len(self.group_ids) == len(self.trial_ids) == len(self.window_idx) == len(self.labels) == n):
            raise ValueError("feature matrix row metadata lengths differ")
        if n and (self.labels.min() < 0 or self.labels.max() >= len(self.classes)):
            raise ValueError("labels outside the declared class set")

    @property
    def n_rows(self) -> int:
        return int(self.X.shape[0])

    @property
    def n_features(self) -> int:
        return int(self.X.shape[1])

    @property
    def groups(self) -> np.ndarray:
        return np.asarray(self.group_ids, dtype=object)

    def subset(self, rows: np.ndarray) -> "FeatureMatrix":
        rows = np.asarray(rows)
        if rows.dtype == bool:
            rows = np.flatnonzero(rows)
        return replace(
            self,
            X=self.X[rows],
            group_ids=tuple(self.group_ids[i] for i in rows),
            trial_ids=tuple(self.trial_ids[i] for i in rows),
            window_idx=self.window_idx[rows],
            labels=self.labels[rows],
            empty_sources=tuple(self.empty_sources[i] for i in rows) if self.empty_sources else (),
        )

    def select_features(self, columns: Sequence[int]) -> "FeatureMatrix":
        columns = list(columns)
        norm = self.normalization
        if norm is not None:
            norm = Normalization(norm.method, norm.offset[columns], norm.scale[columns])
        return replace(
            self,
            X=self.X[:, columns],
            feature_ids=tuple(self.feature_ids[c] for c in columns),
            normalization=norm,
        )


def build_feature_matrix(
    samples: Sequence[AnalyzedRecording],
    catalog: FeatureCatalog,
    window_s: float,
    step_s: Optional[float] = None,
    label_key: str = "class",
    classes: Optional[Sequence[str]] = None,
    group_key: str = "participant",
    preset: Optional[str] = None,
    label_override: Optional[Dict[str, str]] = None,
    pooled_velocity: bool = False,
) -> FeatureMatrix:
    """Rows in (recording, window) order for every window of every recording."""
    raw_labels = []
    for sample in samples:
        rec = sample.recording
        label = (label_override or {}).get(rec.id, rec.labels.get(label_key))
        if label is None:
            raise DataError(f"recording {rec.id!r} has no {label_key!r} label")
        raw_labels.append(str(label))
    classes = tuple(classes) if classes else tuple(sorted(set(raw_labels)))
    index = {c: i for i, c in enumerate(classes)}

    rows, groups, trials, widx, labels, empties = [], [], [], [], [], []
    for sample, label in zip(samples, raw_labels):
        rec = sample.recording
        if label not in index:
            raise DataError(f"recording {rec.id!r}: label {label!r} not in classes {list(classes)}")
        for k, window in enumerate(sliding_windows(rec, window_s, step_s)):
            features = extract_features(
                rec, sample.events, window, catalog, pupil=sample.pupil, preset=preset, pooled_velocity=pooled_velocity
            )
            rows.append(features.values)
            groups.append(rec.group_id(group_key))
            trials.append(rec.trial)
            widx.append(k)
            labels.append(index[label])
            empties.append(features.empty_sources)
    X = np.vstack(rows) if rows else np.zeros((0, catalog.size))
    logger.info(
        "Built feature matrix",
        extra={"catalog": catalog.name, "window_s": window_s, "n_events": len(rows)},
    )
    return FeatureMatrix(
        catalog=catalog.name,
        feature_ids=catalog.ids,
        X=X,
        group_ids=tuple(groups),
        trial_ids=tuple(trials),
        window_idx=np.asarray(widx, dtype=int),
        labels=np.asarray(labels, dtype=int),
        classes=classes,
        empty_sources=tuple(empties),
        window_s=window_s,
    )


def normalize(matrix: FeatureMatrix, method: str, fit_rows: Optional[np.ndarray] = None) -> FeatureMatrix:
    """
    Scale features with parameters fit on ``fit_rows`` only, then apply them
    to every row. Values outside the fitted range are not clipped.
    """
    if matrix.normalization is not None:
        raise DataError("feature matrix is already normalized")
    fit = matrix.X if fit_rows is None else matrix.X[np.asarray(fit_rows)]
    if fit.shape[0] == 0:
        raise DataError("normalization needs at least one fit row")
    if method == "max_abs":
        offset = np.zeros(matrix.n_features)
        scale = np.max(np.abs(fit), axis=0)
    elif method == "min_max":
        offset = np.min(fit, axis=0)
        scale = np.max(fit, axis=0) - offset
    else:
        raise ValueError(f"unknown normalization {method!r}")
    constant = scale == 0
    for j in np.flatnonzero(constant):
        logger.warning(
            "Constant feature mapped to 0",
            extra={"feature": matrix.feature_ids[j], "result": method},
        )
    safe = np.where(constant, 1.0, scale)
    X = np.where(constant, 0.0, (matrix.X - offset) / safe)
    return replace(matrix, X=X, normalization=Normalization(method, offset, scale))


def denormalize(matrix: FeatureMatrix) -> FeatureMatrix:
    """Invert a stored normalization; constant features come back as their offset."""
    norm = matrix.normalization
    if norm is None:
        return matrix
    return replace(matrix, X=matrix.X * norm.scale + norm.offset, normalization=None)


def median_split_labels(scores: Sequence[float]) -> List[int]:
    """Scores strictly below the median are class 0, the rest class 1."""
    arr = np.asarray(scores, dtype=float)
    if arr.size == 0:
        return []
    median = float(np.median(arr))
    return [0 if s < median else 1 for s in arr]


def window_grid(study: str) -> Tuple[float, ...]:
    """Window sizes swept for a study."""
    return STUDY_DEFAULTS[study].window_sweep


def feature_frame(matrix: FeatureMatrix) -> pd.DataFrame:
    """group_id, trial_id, window_idx, label, the catalog ids, then the empty-source flags."""
    frame = pd.DataFrame(matrix.X, columns=list(matrix.feature_ids))
    frame.insert(0, "group_id", list(matrix.group_ids))
    frame.insert(1, "trial_id", list(matrix.trial_ids))
    frame.insert(2, "window_idx", matrix.window_idx)
    frame.insert(3, "label", matrix.labels)
    empties = matrix.empty_sources or tuple(() for _ in range(matrix.n_rows))
    frame[EMPTY_COLUMN] = [";".join(e) for e in empties]
    return frame


def matrix_from_frame(
    frame: pd.DataFrame,
    catalog: str,
    classes: Optional[Sequence[str]] = None,
    window_s: Optional[float] = None,
) -> FeatureMatrix:
    missing = [c for c in META_COLUMNS if c not in frame.columns]
    if missing:
        raise DataError(f"feature table missing column(s): {', '.join(missing)}")
    feature_ids = [c for c in frame.columns if c not in META_COLUMNS and c != EMPTY_COLUMN]
    expected = get_catalog(catalog).ids
    if tuple(feature_ids) != expected:
        unknown = sorted(set(feature_ids) ^ set(expected))
        raise DataError(f"feature table does not match catalog {catalog!r}: {', '.join(unknown) or 'column order'}")
    labels = frame["label"].to_numpy(dtype=int)
    if classes is None:
        classes = tuple(str(c) for c in range(int(labels.max()) + 1)) if labels.size else ("0", "1")
    empties = ()
    if EMPTY_COLUMN in frame.columns:
        empties = tuple(tuple(s for s in str(v).split(";") if s) if isinstance(v, str) else () for v in frame[EMPTY_COLUMN])
    return FeatureMatrix(
        catalog=catalog,
        feature_ids=tuple(feature_ids),
        X=frame[feature_ids].to_numpy(dtype=float),
        group_ids=tuple(str(g) for g in frame["group_id"]),
        trial_ids=tuple(str(t) for t in frame["trial_id"]),
        window_idx=frame["window_idx"].to_numpy(dtype=int),
        labels=labels,
        classes=tuple(classes),
        empty_sources=empties,
        window_s=window_s,
    )


def write_feature_csv(store, matrix: FeatureMatrix, name: str = "features.csv"):
    """Write the matrix through an ArtifactStore."""
    return store.write_csv(name, feature_frame(matrix))


def read_feature_csv(store, name: str, catalog: str, classes: Optional[Sequence[str]] = None) -> FeatureMatrix:
    """Read a matrix back, rejecting tables written under another config."""
    return matrix_from_frame(store.read_csv(name, dtype={"group_id": str, "trial_id": str}), catalog, classes)
