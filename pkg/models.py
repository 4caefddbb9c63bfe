"""Domain records shared across the analysis stages."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Iterator, Optional, Sequence, Tuple

import numpy as np

Vector3 = Tuple[float, float, float]
Quaternion = Tuple[float, float, float, float]


@dataclass(frozen=True)
class SensorFrame:
    """One row of a sensor log, in canonical (normalized) form."""

    t: float
    head_quat: Quaternion
    gaze_dir: Optional[Vector3] = None
    pupil_left: Optional[float] = None
    pupil_right: Optional[float] = None
    hit_aoi: Optional[str] = None
    valid: bool = True


@dataclass(frozen=True, eq=False)
class Recording:
    """Time-ordered sensor frames for one participant-trial.

    Frames are stored column-wise. Missing gaze vectors and pupil readings
    are NaN. ``interpolated`` marks gaze samples filled in by gap
    interpolation; ``unfilled_gaps`` lists missing runs that were too long
    to fill, as (onset_ms, offset_ms).
    """

    id: str
    trial: str
    t: np.ndarray
    gaze: np.ndarray
    head: np.ndarray
    pupil_left: np.ndarray
    pupil_right: np.ndarray
    valid: np.ndarray
    aoi: Tuple[Optional[str], ...]
    nominal_rate: float
    labels: Dict[str, str] = field(default_factory=dict)
    interpolated: Optional[np.ndarray] = None
    unfilled_gaps: Tuple[Tuple[float, float], ...] = ()

    def __post_init__(self) -> None:
        if len(self.t) == 0:
            raise ValueError(f"recording {self.id!r} has no frames")
        if self.nominal_rate <= 0:
            raise ValueError(f"recording {self.id!r}: nominal_rate must be > 0")

    @property
    def n_frames(self) -> int:
        return int(len(self.t))

    @property
    def sample_period_ms(self) -> float:
        return 1000.0 / self.nominal_rate

    @property
    def start_ms(self) -> float:
        return float(self.t[0])

    @property
    def end_ms(self) -> float:
        """End of the covered timeline (last sample plus one period)."""
        return float(self.t[-1]) + self.sample_period_ms

    @property
    def duration_ms(self) -> float:
        return self.end_ms - self.start_ms

    @property
    def gaze_present(self) -> np.ndarray:
        """Frames with a valid flag and a logged gaze vector."""
        present = self.valid & np.all(np.isfinite(self.gaze), axis=1)
        if self.interpolated is not None:
            present = present & ~self.interpolated
        return present

    @property
    def usable_gaze(self) -> np.ndarray:
        """Frames the detectors may use: logged or interpolated gaze."""
        usable = self.valid & np.all(np.isfinite(self.gaze), axis=1)
        if self.interpolated is not None:
            usable = usable | self.interpolated
        return usable

    def frames(self) -> Iterator[SensorFrame]:
        for i in range(self.n_frames):
            gaze = self.gaze[i]
            yield SensorFrame(
                t=float(self.t[i]),
                head_quat=tuple(float(v) for v in self.head[i]),
                gaze_dir=tuple(float(v) for v in gaze) if np.all(np.isfinite(gaze)) else None,
                pupil_left=_optional(self.pupil_left[i]),
                pupil_right=_optional(self.pupil_right[i]),
                hit_aoi=self.aoi[i],
                valid=bool(self.valid[i]),
            )

    def group_id(self, group_key: str = "participant") -> str:
        return self.labels.get(group_key, self.id)


def _optional(value: float) -> Optional[float]:
    return float(value) if np.isfinite(value) else None


@dataclass(frozen=True)
class TrackingQuality:
    tracking_ratio: float
    gap_histogram: Dict[int, int]
    duration_ms: float
    n_frames: int
    long_gaps: Tuple[Tuple[float, float], ...] = ()

    def passes(self, gate: float) -> bool:
        return self.tracking_ratio >= gate


@dataclass(frozen=True, eq=False)
class PupilSeries:
    """Fused pupil diameter trace; ``value`` is NaN wherever ``missing_mask`` is set."""

    t: np.ndarray
    value: np.ndarray
    missing_mask: np.ndarray
    normalized: bool = False
    baseline: Optional[float] = None
    recording_id: str = ""

    def __post_init__(self) -> None:
        if self.normalized and (self.baseline is None or not self.baseline > 0):
            raise ValueError("a normalized pupil series needs a positive baseline")


@dataclass(frozen=True)
class Blink:
    onset_ms: float
    offset_ms: float
    core_gap_ms: float

    @property
    def duration_ms(self) -> float:
        return self.offset_ms - self.onset_ms


@dataclass(frozen=True)
class Fixation:
    onset_ms: float
    offset_ms: float
    centroid_dir: Vector3
    first_sample: int
    last_sample: int
    mean_pupil: Optional[float] = None
    aoi: Optional[str] = None

    @property
    def duration_ms(self) -> float:
        return self.offset_ms - self.onset_ms


@dataclass(frozen=True)
class Saccade:
    onset_ms: float
    offset_ms: float
    amplitude_deg: float
    peak_velocity: float
    mean_velocity: float
    first_sample: int
    last_sample: int

    @property
    def duration_ms(self) -> float:
        return self.offset_ms - self.onset_ms


@dataclass(frozen=True)
class HeadSegment:
    onset_ms: float
    offset_ms: float
    state: str  # "stationary" | "moving"
    first_sample: int
    last_sample: int

    @property
    def duration_ms(self) -> float:
        return self.offset_ms - self.onset_ms


@dataclass(frozen=True)
class ClickEvent:
    t_ms: float
    target: str

    def __post_init__(self) -> None:
        if not self.target:
            raise ValueError("click target must be non-empty")


@dataclass(frozen=True, eq=False)
class EventStream:
    """Everything the detectors found in one recording."""

    recording_id: str
    preset: str
    fixations: Tuple[Fixation, ...] = ()
    saccades: Tuple[Saccade, ...] = ()
    blinks: Tuple[Blink, ...] = ()
    head_segments: Tuple[HeadSegment, ...] = ()
    gaze_velocity: Optional[np.ndarray] = None
    clicks: Tuple[ClickEvent, ...] = ()


@dataclass(frozen=True)
class Summary:
    """Count, mean, min, max, sum and sample SD of a set of values.

    Empty input yields zeros everywhere; SD uses the n-1 denominator and is
    0 for a single value.
    """

    count: int
    mean: float
    min: float
    max: float
    sum: float
    sd: float

    @classmethod
    def of(cls, values: Sequence[float]) -> "Summary":
        arr = np.asarray(values, dtype=float)
        if arr.size == 0:
            return cls(0, 0.0, 0.0, 0.0, 0.0, 0.0)
        sd = float(np.std(arr, ddof=1)) if arr.size > 1 else 0.0
        return cls(
            count=int(arr.size),
            mean=float(np.mean(arr)),
            min=float(np.min(arr)),
            max=float(np.max(arr)),
            sum=float(np.sum(arr)),
            sd=sd,
        )


@dataclass(frozen=True, eq=False)
class AnalyzedRecording:
    """A recording with its detected events and cleaned pupil series."""

    recording: Recording
    events: EventStream
    pupil: Optional[PupilSeries] = None
