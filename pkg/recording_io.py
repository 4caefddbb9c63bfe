"""Parse, validate and repair raw sensor logs into canonical recordings."""
from __future__ import annotations

import csv
import io
import json
import logging
from collections import Counter
from dataclasses import dataclass, replace
from pathlib import Path
from typing import IO, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ValidationError, field_validator

from errors import RecordingFormatError
from models import ClickEvent, Recording, TrackingQuality

logger = logging.getLogger(__name__)

DEFAULT_RATE = 120.0
DEFAULT_MAX_GAP_MS = 75.0
# Vectors this close to unit norm are stored untouched so re-parsing is exact
_NORM_TOLERANCE = 1e-12

CSV_COLUMNS = (
    "t_ms",
    "gaze_x",
    "gaze_y",
    "gaze_z",
    "head_w",
    "head_x",
    "head_y",
    "head_z",
    "pupil_l",
    "pupil_r",
    "valid",
    "aoi",
)
CSV_MANDATORY = ("t_ms", "head_w", "head_x", "head_y", "head_z", "valid")

Source = Union[bytes, str, IO[bytes], IO[str]]


class FrameRow(BaseModel):
    """Wire format of one sensor frame."""

    t_ms: float
    gaze: Optional[List[float]] = None
    head: List[float]
    pupil_l: Optional[float] = None
    pupil_r: Optional[float] = None
    valid: bool
    aoi: Optional[str] = None

    @field_validator("t_ms")
    @classmethod
    def validate_time(cls, v: float) -> float:
        if not np.isfinite(v):
            raise ValueError("must be finite")
        return v

    @field_validator("gaze")
    @classmethod
    def validate_gaze(cls, v: Optional[List[float]]) -> Optional[List[float]]:
        if v is None:
            return v
        return _unit(v, 3)

    @field_validator("head")
    @classmethod
    def validate_head(cls, v: List[float]) -> List[float]:
        return _unit(v, 4)

    @field_validator("aoi")
    @classmethod
    def validate_aoi(cls, v: Optional[str]) -> Optional[str]:
        return v or None


class RecordingMeta(BaseModel):
    """Wire format of the ``.meta.json`` sidecar; unknown keys are ignored."""

    id: Optional[str] = None
    trial: str = "0"
    nominal_rate: Optional[float] = None
    labels: Dict[str, str] = {}

    @field_validator("id", "trial", mode="before")
    @classmethod
    def coerce_scalar(cls, v: object) -> object:
        if isinstance(v, (int, float)) and not isinstance(v, bool):
            return str(v)
        return v

    @field_validator("nominal_rate")
    @classmethod
    def validate_rate(cls, v: Optional[float]) -> Optional[float]:
        if v is not None and (not np.isfinite(v) or v <= 0):
            raise ValueError("must be a positive number")
        return v

    @field_validator("labels", mode="before")
    @classmethod
    def coerce_labels(cls, v: object) -> object:
        if not isinstance(v, dict):
            raise ValueError("must be an object")
        out = {}
        for key, value in v.items():
            if value is None or isinstance(value, (dict, list)):
                raise ValueError(f"label {key!r} must be a scalar")
            out[str(key)] = str(value)
        return out


def _unit(values: List[float], size: int) -> List[float]:
    if len(values) != size:
        raise ValueError(f"must have {size} components")
    arr = np.asarray(values, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ValueError("must be finite")
    norm = float(np.linalg.norm(arr))
    if norm == 0.0:
        raise ValueError("zero-length vector")
    if abs(norm - 1.0) > _NORM_TOLERANCE:
        arr = arr / norm
    return [float(x) for x in arr]


def true_runs(mask: np.ndarray) -> List[Tuple[int, int]]:
    """Inclusive (start, end) index pairs of the True runs in a boolean mask."""
    m = np.asarray(mask, dtype=bool)
    if not m.any():
        return []
    padded = np.concatenate(([False], m, [False])).astype(np.int8)
    d = np.diff(padded)
    starts = np.flatnonzero(d == 1)
    ends = np.flatnonzero(d == -1) - 1
    return list(zip(starts.tolist(), ends.tolist()))


def _read_text(source: Source, source_name: Optional[str] = None) -> str:
    if hasattr(source, "read"):
        source = source.read()
    if isinstance(source, bytes):
        try:
            return source.decode("utf-8")
        except UnicodeDecodeError as e:
            raise RecordingFormatError(f"not UTF-8 text at byte {e.start}", source=source_name)
    return source


def parse_recording(
    source: Source,
    format: str = "jsonl",
    recording_id: str = "recording",
    trial: str = "0",
    nominal_rate: Optional[float] = None,
    labels: Optional[Dict[str, str]] = None,
    source_name: Optional[str] = None,
) -> Recording:
    """
    Parse a sensor log into a canonical Recording.

    Frames are sorted by timestamp and duplicate timestamps collapse to the
    last frame in file order. Raises RecordingFormatError naming the line of
    the first malformed row.
    """
    name = source_name or recording_id
    text = _read_text(source, name)
    if format == "jsonl":
        rows = _parse_jsonl_rows(text, name)
    elif format == "csv":
        rows = _parse_csv_rows(text, name)
    else:
        raise RecordingFormatError(f"unsupported format {format!r}", source=name)
    if not rows:
        raise RecordingFormatError("empty file", source=name)

    t = np.array([r.t_ms for r in rows], dtype=float)
    order = np.lexsort((np.arange(len(rows)), t))
    t_sorted = t[order]
    keep = np.ones(len(order), dtype=bool)
    keep[:-1] = t_sorted[:-1] != t_sorted[1:]
    order = order[keep]
    if int((~keep).sum()):
        logger.info(
            "Collapsed duplicate timestamps",
            extra={"recording": recording_id, "n_frames": int((~keep).sum())},
        )
    kept = [rows[i] for i in order]

    rate = nominal_rate if nominal_rate is not None else estimate_rate(t[order])
    return Recording(
        id=recording_id,
        trial=trial,
        t=t[order],
        gaze=np.array([r.gaze if r.gaze is not None else [np.nan] * 3 for r in kept], dtype=float),
        head=np.array([r.head for r in kept], dtype=float),
        pupil_left=np.array([_pupil(r.pupil_l) for r in kept], dtype=float),
        pupil_right=np.array([_pupil(r.pupil_r) for r in kept], dtype=float),
        valid=np.array([r.valid for r in kept], dtype=bool),
        aoi=tuple(r.aoi for r in kept),
        nominal_rate=float(rate),
        labels=dict(labels or {}),
    )


def _pupil(value: Optional[float]) -> float:
    if value is None or not np.isfinite(value) or value <= 0:
        return np.nan
    return float(value)


def estimate_rate(t: np.ndarray) -> float:
    """Samples per second from the median positive timestamp step."""
    steps = np.diff(t)
    steps = steps[steps > 0]
    if steps.size == 0:
        return DEFAULT_RATE
    return float(round(1000.0 / float(np.median(steps))))


def _parse_jsonl_rows(text: str, name: str) -> List[FrameRow]:
    rows: List[FrameRow] = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as e:
            raise RecordingFormatError(f"invalid JSON: {e.msg}", line=lineno, source=name)
        if not isinstance(obj, dict):
            raise RecordingFormatError("expected a JSON object", line=lineno, source=name)
        rows.append(_validate_row(obj, lineno, name))
    return rows


def _parse_csv_rows(text: str, name: str) -> List[FrameRow]:
    reader = csv.DictReader(io.StringIO(text))
    header = reader.fieldnames or []
    missing = [c for c in CSV_MANDATORY if c not in header]
    if header and missing:
        raise RecordingFormatError(f"missing mandatory column(s): {', '.join(missing)}", line=1, source=name)
    rows: List[FrameRow] = []
    for record in reader:
        lineno = reader.line_num
        cell = {k: (v.strip() if isinstance(v, str) else v) for k, v in record.items() if k is not None}
        gaze_cells = [cell.get(c) or "" for c in ("gaze_x", "gaze_y", "gaze_z")]
        if all(c == "" for c in gaze_cells):
            gaze = None
        elif any(c == "" for c in gaze_cells):
            raise RecordingFormatError("partial gaze vector", line=lineno, source=name)
        else:
            gaze = gaze_cells
        obj = {
            "t_ms": cell.get("t_ms"),
            "gaze": gaze,
            "head": [cell.get(c) for c in ("head_w", "head_x", "head_y", "head_z")],
            "pupil_l": cell.get("pupil_l") or None,
            "pupil_r": cell.get("pupil_r") or None,
            "valid": _parse_bool(cell.get("valid")),
            "aoi": cell.get("aoi") or None,
        }
        rows.append(_validate_row(obj, lineno, name))
    return rows


def _parse_bool(value: Optional[str]) -> Optional[object]:
    if value is None:
        return None
    lowered = value.lower()
    if lowered in ("true", "1"):
        return True
    if lowered in ("false", "0"):
        return False
    return value


def _validate_row(obj: dict, lineno: int, name: str) -> FrameRow:
    try:
        return FrameRow.model_validate(obj)
    except ValidationError as e:
        first = e.errors()[0]
        field = ".".join(str(p) for p in first["loc"])
        if first["type"] == "missing":
            message = f"missing mandatory field {field!r}"
        else:
            message = f"field {field!r}: {first['msg']}"
        raise RecordingFormatError(message, line=lineno, source=name)


def serialize_recording(rec: Recording, format: str = "jsonl") -> bytes:
    """Canonical byte form of a recording; parse_recording inverts it."""
    if format == "jsonl":
        lines = []
        for frame in rec.frames():
            lines.append(
                json.dumps(
                    {
                        "t_ms": frame.t,
                        "gaze": list(frame.gaze_dir) if frame.gaze_dir is not None else None,
                        "head": list(frame.head_quat),
                        "pupil_l": frame.pupil_left,
                        "pupil_r": frame.pupil_right,
                        "valid": frame.valid,
                        "aoi": frame.hit_aoi,
                    }
                )
            )
        return ("\n".join(lines) + "\n").encode("utf-8")
    if format == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for frame in rec.frames():
            gaze = [repr(v) for v in frame.gaze_dir] if frame.gaze_dir is not None else ["", "", ""]
            writer.writerow(
                [repr(frame.t), *gaze, *(repr(v) for v in frame.head_quat)]
                + [_cell(frame.pupil_left), _cell(frame.pupil_right)]
                + ["true" if frame.valid else "false", frame.hit_aoi or ""]
            )
        return buf.getvalue().encode("utf-8")
    raise RecordingFormatError(f"unsupported format {format!r}")


def _cell(value: Optional[float]) -> str:
    return "" if value is None else repr(value)


def parse_clicks(source: Source, source_name: str = "clicks") -> List[ClickEvent]:
    """Parse the click sidecar: one {"t_ms", "target"} object per line."""
    clicks: List[ClickEvent] = []
    for lineno, line in enumerate(_read_text(source, source_name).splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            clicks.append(ClickEvent(t_ms=float(obj["t_ms"]), target=str(obj["target"] or "")))
        except json.JSONDecodeError as e:
            raise RecordingFormatError(f"invalid JSON: {e.msg}", line=lineno, source=source_name)
        except KeyError as e:
            raise RecordingFormatError(f"missing mandatory field {e.args[0]!r}", line=lineno, source=source_name)
        except (TypeError, ValueError) as e:
            raise RecordingFormatError(str(e), line=lineno, source=source_name)
    return sorted(clicks, key=lambda c: c.t_ms)


def parse_onsets(source: Source, source_name: str = "onsets") -> List[float]:
    """Parse an onsets sidecar: one {"t_ms"} object per line."""
    onsets: List[float] = []
    for lineno, line in enumerate(_read_text(source, source_name).splitlines(), start=1):
        if not line.strip():
            continue
        try:
            onsets.append(float(json.loads(line)["t_ms"]))
        except (json.JSONDecodeError, KeyError, TypeError, ValueError):
            raise RecordingFormatError("expected {\"t_ms\": number}", line=lineno, source=source_name)
    return sorted(onsets)


def _split_gaps(
    rec: Recording, missing: np.ndarray, max_gap_ms: float
) -> Tuple[List[Tuple[int, int]], List[Tuple[float, float]]]:
    """Missing runs short enough to fill (as index pairs) and the rest (as time spans)."""
    t = rec.t
    n = rec.n_frames
    fillable: List[Tuple[int, int]] = []
    unfilled: List[Tuple[float, float]] = []
    for s, e in true_runs(missing):
        after = e + 1
        offset = float(t[after]) if after < n else rec.end_ms
        if s == 0 or after >= n or offset - float(t[s]) > max_gap_ms + 1e-9:
            unfilled.append((float(t[s]), offset))
        else:
            fillable.append((s, e))
    return fillable, unfilled


def quality_report(rec: Recording, max_gap_ms: float = DEFAULT_MAX_GAP_MS) -> TrackingQuality:
    """
    Tracking ratio and missing-run histogram on the logged validity flags.

    Interpolated samples still count as missing, so the report is the same
    before and after ``interpolate_gaps``.
    """
    present = rec.gaze_present
    runs = true_runs(~present)
    histogram = Counter(e - s + 1 for s, e in runs)
    _, long_gaps = _split_gaps(rec, ~present, max_gap_ms)
    return TrackingQuality(
        tracking_ratio=float(present.mean()),
        gap_histogram=dict(sorted(histogram.items())),
        duration_ms=rec.duration_ms,
        n_frames=rec.n_frames,
        long_gaps=tuple(long_gaps),
    )


def slerp(a: np.ndarray, b: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Spherical interpolation between unit vectors a and b at fractions u."""
    u = np.atleast_1d(np.asarray(u, dtype=float))[:, None]
    omega = float(np.arctan2(np.linalg.norm(np.cross(a, b)), np.dot(a, b)))
    sin_omega = np.sin(omega)
    if sin_omega < 1e-12:
        # Coincident or antipodal endpoints
        out = (1.0 - u) * a + u * b
        norms = np.linalg.norm(out, axis=1, keepdims=True)
        return np.where(norms > 1e-12, out / np.where(norms > 1e-12, norms, 1.0), a)
    out = (np.sin((1.0 - u) * omega) * a + np.sin(u * omega) * b) / sin_omega
    return out / np.linalg.norm(out, axis=1, keepdims=True)


def interpolate_gaps(rec: Recording, max_gap_ms: float = DEFAULT_MAX_GAP_MS) -> Recording:
    """
    Fill short missing-gaze runs by slerp between the flanking directions.

    A run's duration runs from its first missing sample to the next present
    one. Runs longer than max_gap_ms, or touching either end of the
    recording, stay missing and are listed in ``unfilled_gaps``. Pupil
    columns are left alone.
    """
    if max_gap_ms <= 0:
        raise ValueError("max_gap_ms must be > 0")
    t = rec.t
    gaze = rec.gaze.copy()
    interpolated = rec.interpolated.copy() if rec.interpolated is not None else np.zeros(rec.n_frames, dtype=bool)
    fillable, unfilled = _split_gaps(rec, ~rec.usable_gaze, max_gap_ms)
    for s, e in fillable:
        before, after = s - 1, e + 1
        u = (t[s : e + 1] - t[before]) / (t[after] - t[before])
        gaze[s : e + 1] = slerp(gaze[before], gaze[after], u)
        interpolated[s : e + 1] = True
    if unfilled:
        logger.info(
            "Gaze gaps left unfilled",
            extra={"recording": rec.id, "n_events": len(unfilled)},
        )
    return replace(rec, gaze=gaze, interpolated=interpolated, unfilled_gaps=tuple(unfilled))


@dataclass(frozen=True, eq=False)
class LoadedRecording:
    """A recording plus whatever sidecars sat next to it on disk."""

    recording: Recording
    clicks: Tuple[ClickEvent, ...] = ()
    onsets: Tuple[float, ...] = ()
    path: Optional[Path] = None


def sidecar(path: Path, suffix: str) -> Path:
    return path.with_name(f"{path.stem}{suffix}")


def load_meta(path: Path) -> RecordingMeta:
    """Read and validate a meta sidecar."""
    text = _read_text(path.read_bytes(), str(path))
    try:
        document = json.loads(text)
    except json.JSONDecodeError as e:
        raise RecordingFormatError(f"invalid JSON: {e.msg}", line=e.lineno, source=str(path))
    try:
        return RecordingMeta.model_validate(document)
    except ValidationError as e:
        err = e.errors()[0]
        field = ".".join(str(x) for x in err["loc"]) or "meta"
        raise RecordingFormatError(f"{field}: {err['msg']}", source=str(path))


def load_recording(path: Union[str, Path]) -> LoadedRecording:
    """Read a recording and its optional meta, clicks and onsets sidecars."""
    path = Path(path)
    fmt = {".jsonl": "jsonl", ".csv": "csv"}.get(path.suffix.lower())
    if fmt is None:
        raise RecordingFormatError(f"unsupported recording extension {path.suffix!r}", source=str(path))
    try:
        data = path.read_bytes()
    except OSError as e:
        raise RecordingFormatError(f"cannot read: {e.strerror}", source=str(path))

    meta = RecordingMeta()
    meta_path = sidecar(path, ".meta.json")
    if meta_path.exists():
        meta = load_meta(meta_path)

    rec = parse_recording(
        data,
        format=fmt,
        recording_id=meta.id or path.stem,
        trial=meta.trial,
        nominal_rate=meta.nominal_rate,
        labels=meta.labels,
        source_name=str(path),
    )
    clicks_path = sidecar(path, ".clicks.jsonl")
    clicks = parse_clicks(clicks_path.read_bytes(), str(clicks_path)) if clicks_path.exists() else []
    onsets_path = sidecar(path, ".onsets.jsonl")
    onsets = parse_onsets(onsets_path.read_bytes(), str(onsets_path)) if onsets_path.exists() else []
    return LoadedRecording(recording=rec, clicks=tuple(clicks), onsets=tuple(onsets), path=path)


def write_recording(
    rec: Recording,
    path: Union[str, Path],
    clicks: Sequence[ClickEvent] = (),
    onsets: Sequence[float] = (),
) -> Path:
    """Write a recording and its sidecars; the format follows the extension."""
    path = Path(path)
    fmt = "csv" if path.suffix.lower() == ".csv" else "jsonl"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(serialize_recording(rec, fmt))
    meta = {"id": rec.id, "trial": rec.trial, "nominal_rate": rec.nominal_rate, "labels": rec.labels}
    sidecar(path, ".meta.json").write_text(json.dumps(meta, sort_keys=True, indent=2) + "\n")
    if clicks:
        lines = [json.dumps({"t_ms": c.t_ms, "target": c.target}) for c in clicks]
        sidecar(path, ".clicks.jsonl").write_text("\n".join(lines) + "\n")
    if onsets:
        lines = [json.dumps({"t_ms": float(t)}) for t in onsets]
        sidecar(path, ".onsets.jsonl").write_text("\n".join(lines) + "\n")
    return path
