"""Scripted synthetic recordings with exact ground truth, and planted-effect datasets."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from config import PRESETS, DetectionConfig, SynthConfig
from errors import DataError
from models import ClickEvent, Recording

logger = logging.getLogger(__name__)

FORWARD = np.array([0.0, 0.0, 1.0])
IDENTITY = np.array([1.0, 0.0, 0.0, 0.0])
UNIT_TOL = 1e-9

PLANTABLE = ("saccade_amplitude", "fixation_duration", "saccade_duration")

Vector = Tuple[float, float, float]


def _unit(v: Sequence[float], what: str) -> np.ndarray:
    arr = np.asarray(v, dtype=float)
    if arr.shape != (3,) or abs(np.linalg.norm(arr) - 1.0) > UNIT_TOL:
        raise DataError(f"{what} must be a unit 3-vector, got {list(arr)}")
    return arr


def _positive(duration_ms: float, what: str) -> None:
    if not duration_ms > 0:
        raise DataError(f"{what} duration must be > 0, got {duration_ms}")


@dataclass(frozen=True)
class Fixation:
    duration_ms: float
    direction: Optional[Vector] = None  # None holds the current direction
    aoi: Optional[str] = None


@dataclass(frozen=True)
class Saccade:
    duration_ms: float
    to_dir: Vector
    from_dir: Optional[Vector] = None
    profile: str = "constant"
    aoi: Optional[str] = None


@dataclass(frozen=True)
class Blink:
    duration_ms: float
    ramp_ms: float = 25.0
    depth: float = 0.5


@dataclass(frozen=True)
class HeadTurn:
    duration_ms: float
    axis: Vector = (0.0, 1.0, 0.0)
    deg: float = 10.0
    aoi: Optional[str] = None


@dataclass(frozen=True)
class Idle:
    """Gaze and head at rest without a planted event."""

    duration_ms: float
    aoi: Optional[str] = None


Segment = Union[Fixation, Saccade, Blink, HeadTurn, Idle]


@dataclass(frozen=True)
class PupilStep:
    t_ms: float
    duration_ms: float
    delta_mm: float


@dataclass(frozen=True)
class EventScript:
    segments: Tuple[Segment, ...]
    sample_rate: float = 120.0
    jitter_deg: float = 0.0
    pupil_noise_mm: float = 0.0
    pupil_base_mm: float = 3.5
    clicks: Tuple[ClickEvent, ...] = ()
    pupil_steps: Tuple[PupilStep, ...] = ()
    onsets: Tuple[float, ...] = ()
    labels: Dict[str, str] = field(default_factory=dict)
    recording_id: str = "synth"
    trial: str = "0"

    @property
    def duration_ms(self) -> float:
        return float(sum(s.duration_ms for s in self.segments))

    def validate(self) -> None:
        if not self.segments:
            raise DataError("script has no segments")
        if self.sample_rate <= 0:
            raise DataError("sample_rate must be > 0")
        for seg in self.segments:
            _positive(seg.duration_ms, type(seg).__name__.lower())
            if isinstance(seg, Fixation) and seg.direction is not None:
                _unit(seg.direction, "fixation direction")
            if isinstance(seg, Saccade):
                _unit(seg.to_dir, "saccade to_dir")
                if seg.from_dir is not None:
                    _unit(seg.from_dir, "saccade from_dir")
                if seg.profile not in ("constant", "bell"):
                    raise DataError(f"unknown saccade profile {seg.profile!r}")
            if isinstance(seg, HeadTurn):
                _unit(seg.axis, "head-turn axis")
            if isinstance(seg, Blink) and not 0 <= seg.depth <= 1:
                raise DataError("blink depth must be in [0, 1]")


@dataclass(frozen=True)
class PlantedEvent:
    kind: str
    onset_ms: float
    offset_ms: float
    attrs: Dict[str, Any] = field(default_factory=dict)

    @property
    def duration_ms(self) -> float:
        return self.offset_ms - self.onset_ms


@dataclass(frozen=True)
class GroundTruth:
    events: Tuple[PlantedEvent, ...]
    label: Optional[str] = None
    effect: Dict[str, Any] = field(default_factory=dict)

    def of(self, kind: str) -> List[PlantedEvent]:
        return [e for e in self.events if e.kind == kind]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "label": self.label,
            "effect": self.effect,
            "events": [
                {"kind": e.kind, "onset_ms": e.onset_ms, "offset_ms": e.offset_ms, **e.attrs} for e in self.events
            ],
        }


def angle_deg(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.degrees(np.arctan2(np.linalg.norm(np.cross(a, b)), np.dot(a, b))))


def great_circle(a: np.ndarray, b: np.ndarray, f: np.ndarray) -> np.ndarray:
    """Points at fractions f of the arc from a to b."""
    omega = np.arctan2(np.linalg.norm(np.cross(a, b)), np.dot(a, b))
    f = np.asarray(f, dtype=float)[:, None]
    if np.sin(omega) < 1e-12:
        return np.repeat(a[None, :], len(f), axis=0)
    out = (np.sin((1 - f) * omega) * a + np.sin(f * omega) * b) / np.sin(omega)
    return out / np.linalg.norm(out, axis=1, keepdims=True)


def bell_fraction(u: np.ndarray) -> np.ndarray:
    """Arc fraction under a raised-cosine velocity profile."""
    return u - np.sin(2 * np.pi * u) / (2 * np.pi)


def quat_multiply(q: np.ndarray, r: np.ndarray) -> np.ndarray:
    w1, x1, y1, z1 = q
    w2, x2, y2, z2 = r
    return np.array(
        [
            w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
            w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
            w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
            w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
        ]
    )


def axis_angle(axis: np.ndarray, deg: float) -> np.ndarray:
    half = np.radians(deg) / 2.0
    return np.concatenate(([np.cos(half)], np.sin(half) * axis))


def tangent_basis(v: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    ref = np.array([0.0, 1.0, 0.0]) if abs(v[1]) < 0.9 else np.array([1.0, 0.0, 0.0])
    e1 = np.cross(v, ref)
    e1 /= np.linalg.norm(e1)
    return e1, np.cross(v, e1)


def rotate_towards(v: np.ndarray, azimuth: float, amplitude_deg: float) -> np.ndarray:
    """Rotate ``v`` by ``amplitude_deg`` along the tangent direction at ``azimuth`` radians."""
    e1, e2 = tangent_basis(v)
    w = np.cos(azimuth) * e1 + np.sin(azimuth) * e2
    theta = np.radians(amplitude_deg)
    out = np.cos(theta) * v + np.sin(theta) * w
    return out / np.linalg.norm(out)


def peak_velocity(seg: Saccade, from_dir: np.ndarray) -> float:
    amplitude = angle_deg(from_dir, np.asarray(seg.to_dir, dtype=float))
    mean = amplitude / (seg.duration_ms / 1000.0)
    return 2.0 * mean if seg.profile == "bell" else mean


def generate_recording(script: EventScript, seed: int = 0) -> Tuple[Recording, GroundTruth]:
    """
    Realize a script as a sensor stream at ``sample_rate`` with its ground truth.

    Samples sit at t_k = k / rate. Segments follow each other; each sample
    belongs to the segment holding its timestamp. Blink cores null gaze and
    pupils; the linear eyelid ramps dip the pupil on the samples just before
    and after the core.
    """
    script.validate()
    rng = np.random.default_rng(seed)
    dt = 1000.0 / script.sample_rate
    total = script.duration_ms
    n = int(np.ceil(total / dt - 1e-9))
    t = np.arange(n) * 1000.0 / script.sample_rate

    gaze = np.zeros((n, 3))
    head = np.zeros((n, 4))
    pupil = np.full(n, script.pupil_base_mm)
    valid = np.ones(n, dtype=bool)
    aoi: List[Optional[str]] = [None] * n
    events: List[PlantedEvent] = []
    fixation_max = max(p.fixation_gaze_max for p in PRESETS.values())

    direction = FORWARD.copy()
    orientation = IDENTITY.copy()
    start = 0.0
    for seg in script.segments:
        end = start + seg.duration_ms
        idx = np.flatnonzero((t >= start - 1e-9) & (t < end - 1e-9))
        u = (t[idx] - start) / seg.duration_ms
        if isinstance(seg, Fixation):
            if seg.direction is not None:
                direction = np.asarray(seg.direction, dtype=float)
            gaze[idx] = direction
            head[idx] = orientation
            events.append(PlantedEvent("fixation", start, end, {"direction": direction.tolist(), "aoi": seg.aoi}))
        elif isinstance(seg, Saccade):
            origin = np.asarray(seg.from_dir, dtype=float) if seg.from_dir is not None else direction
            target = np.asarray(seg.to_dir, dtype=float)
            peak = peak_velocity(seg, origin)
            if peak <= fixation_max:
                logger.warning(
                    "Saccade too slow to detect",
                    extra={"onset_ms": start, "score": peak, "result": f"peak <= {fixation_max:g} deg/s"},
                )
            fraction = bell_fraction(u) if seg.profile == "bell" else u
            gaze[idx] = great_circle(origin, target, fraction)
            head[idx] = orientation
            events.append(
                PlantedEvent(
                    "saccade",
                    start,
                    end,
                    {"amplitude_deg": angle_deg(origin, target), "peak_velocity": peak, "profile": seg.profile},
                )
            )
            direction = target
        elif isinstance(seg, Blink):
            gaze[idx] = np.nan
            head[idx] = orientation
            valid[idx] = False
            pupil[idx] = np.nan
            ramp = int(round(seg.ramp_ms / dt))
            if ramp and idx.size:
                drop = seg.depth * script.pupil_base_mm
                first, last = int(idx[0]), int(idx[-1])
                for k in range(ramp):
                    before = first - ramp + k
                    after = last + 1 + k
                    if before >= 0:
                        pupil[before] -= drop * (k + 1) / ramp
                    if after < n:
                        pupil[after] -= drop * (ramp - k) / ramp
            ramp_ms = ramp * dt
            events.append(
                PlantedEvent(
                    "blink",
                    max(start - ramp_ms, 0.0),
                    min(end + ramp_ms, total),
                    {"core_onset_ms": start, "core_offset_ms": end, "n_missing": int(idx.size)},
                )
            )
        elif isinstance(seg, HeadTurn):
            axis = np.asarray(seg.axis, dtype=float)
            gaze[idx] = direction
            if idx.size:
                head[idx] = [quat_multiply(orientation, axis_angle(axis, seg.deg * ui)) for ui in u]
            events.append(PlantedEvent("head_turn", start, end, {"deg": seg.deg, "rate_deg_s": seg.deg / (seg.duration_ms / 1000.0)}))
            orientation = quat_multiply(orientation, axis_angle(axis, seg.deg))
        else:
            gaze[idx] = direction
            head[idx] = orientation
        for i in idx:
            aoi[i] = getattr(seg, "aoi", None)
        start = end

    if script.jitter_deg > 0:
        present = np.flatnonzero(valid)
        sigma = np.radians(script.jitter_deg)
        for i in present:
            e1, e2 = tangent_basis(gaze[i])
            g = gaze[i] + sigma * (rng.normal() * e1 + rng.normal() * e2)
            gaze[i] = g / np.linalg.norm(g)
    for step in script.pupil_steps:
        pupil[(t >= step.t_ms) & (t < step.t_ms + step.duration_ms)] += step.delta_mm
    left = pupil.copy()
    right = pupil.copy()
    if script.pupil_noise_mm > 0:
        left = left + rng.normal(0.0, script.pupil_noise_mm, n)
        right = right + rng.normal(0.0, script.pupil_noise_mm, n)

    rec = Recording(
        id=script.recording_id,
        trial=script.trial,
        t=t,
        gaze=gaze,
        head=head,
        pupil_left=left,
        pupil_right=right,
        valid=valid,
        aoi=tuple(aoi),
        nominal_rate=float(script.sample_rate),
        labels=dict(script.labels),
    )
    truth = GroundTruth(events=tuple(events), label=script.labels.get("class"))
    return rec, truth


def _samples(rng: np.random.Generator, lo_ms: float, hi_ms: float, dt: float) -> float:
    """Random whole-sample duration in [lo_ms, hi_ms]."""
    lo = int(np.ceil(lo_ms / dt - 1e-9))
    hi = int(np.floor(hi_ms / dt + 1e-9))
    return float(rng.integers(lo, hi + 1)) * dt


def _next_direction(rng: np.random.Generator, current: np.ndarray, amplitude_deg: float, cone_deg: float = 20.0) -> np.ndarray:
    """New direction ``amplitude_deg`` away, steering back once outside the cone."""
    if angle_deg(current, FORWARD) > cone_deg:
        e1, e2 = tangent_basis(current)
        back = FORWARD - np.dot(FORWARD, current) * current
        azimuth = np.arctan2(np.dot(back, e2), np.dot(back, e1)) + rng.uniform(-np.pi / 4, np.pi / 4)
    else:
        azimuth = rng.uniform(0, 2 * np.pi)
    return rotate_towards(current, azimuth, amplitude_deg)


def random_script(
    rng: np.random.Generator,
    preset: DetectionConfig,
    n_fixations: int = 4,
    sample_rate: float = 120.0,
    margin_samples: int = 2,
) -> EventScript:
    """
    Detectable fixation/saccade alternation for ``preset``.

    Durations are whole samples at least ``margin_samples`` inside the
    preset bounds, and constant-rate saccades run between 1.5 and 3 times the
    saccade threshold.
    """
    dt = 1000.0 / sample_rate
    margin = margin_samples * dt
    fix_lo, fix_hi = preset.fixation_dur
    sac_lo, sac_hi = preset.saccade_dur
    direction = FORWARD.copy()
    segments: List[Segment] = []
    for i in range(n_fixations):
        # the last fixation ends one sample early in the detector output
        extra = dt if i == n_fixations - 1 else 0.0
        segments.append(Fixation(_samples(rng, fix_lo + margin + extra, fix_hi - margin, dt), tuple(direction)))
        if i == n_fixations - 1:
            break
        duration = _samples(rng, sac_lo + margin, sac_hi - margin, dt)
        velocity = rng.uniform(1.5, 3.0) * preset.saccade_gaze_min
        amplitude = velocity * duration / 1000.0
        target = _next_direction(rng, direction, amplitude)
        segments.append(Saccade(duration, tuple(target)))
        direction = target
    return EventScript(segments=tuple(segments), sample_rate=sample_rate)


@dataclass(frozen=True)
class PlantedRecording:
    recording: Recording
    truth: GroundTruth
    clicks: Tuple[ClickEvent, ...] = ()
    onsets: Tuple[float, ...] = ()


def aoi_pool(study: str) -> Tuple[Optional[str], ...]:
    if study == "classroom":
        return tuple(f"peer_{i}" for i in range(1, 6)) + ("teacher", "screen")
    if study == "teacher":
        return tuple(f"student_{i}" for i in range(1, 6)) + (None,)
    return (None,)


def _effect_base(feature: str) -> str:
    for base in PLANTABLE:
        if feature.startswith(base):
            return base
    raise DataError(f"feature {feature!r} cannot be planted; supported: {', '.join(PLANTABLE)} statistics")


def stimulus_onsets(cfg: SynthConfig, sample_rate: float) -> Tuple[float, ...]:
    """``onsets_per_window`` evenly spaced onsets inside every window, snapped to the sample grid."""
    n = cfg.onsets_per_window
    window = cfg.window_s * 1000.0
    return tuple(
        round((w + (k + 1) / (n + 1)) * window * sample_rate / 1000.0) * 1000.0 / sample_rate
        for w in range(cfg.windows_per_group)
        for k in range(n)
    )


def plant_recordings(
    cfg: SynthConfig,
    preset: DetectionConfig,
    study: str,
    seed: int,
    sample_rate: float = 120.0,
) -> List[PlantedRecording]:
    """
    One scripted recording per group, classes 0 and 1, with the planted
    effect shifting class 1's draws of the effect feature by ``effect_sd``
    standard deviations. Every other draw uses the same distribution in
    both classes.
    """
    base = _effect_base(cfg.effect_feature)
    dt = 1000.0 / sample_rate
    duration = cfg.windows_per_group * cfg.window_s * 1000.0
    pool = aoi_pool(study)
    students = [a for a in pool if a and a.startswith("student_")]
    sac_lo, sac_hi = preset.saccade_dur
    planted = []
    for cls in (0, 1):
        for g in range(cfg.n_groups_per_class):
            rng = np.random.default_rng(np.random.SeedSequence([seed, cls, g]))
            shift = cfg.effect_sd if cls == 1 else 0.0
            pid = f"p{cls}{g:03d}"
            segments: List[Segment] = []
            direction = FORWARD.copy()
            elapsed = 0.0
            while True:
                mean_fix = 250.0 + (shift * 60.0 if base == "fixation_duration" else 0.0)
                fix = float(np.clip(rng.normal(mean_fix, 60.0), 120.0, 450.0))
                fix = max(round(fix / dt), 1) * dt
                if base == "saccade_duration":
                    sac = float(np.clip(rng.normal(45.0 + shift * 8.0, 8.0), sac_lo + 5.0, sac_hi - 5.0))
                else:
                    sac = 50.0
                sac = max(round(sac / dt), 1) * dt
                mean_amp = 8.0 + (shift * 2.0 if base == "saccade_amplitude" else 0.0)
                amplitude = float(np.clip(rng.normal(mean_amp, 2.0), 4.5, 20.0))
                if elapsed + fix + sac + 120.0 > duration:
                    break
                segments.append(Fixation(fix, tuple(direction), aoi=pool[rng.integers(len(pool))]))
                direction = _next_direction(rng, direction, amplitude)
                segments.append(Saccade(sac, tuple(direction)))
                elapsed += fix + sac
            segments.append(Fixation(duration - elapsed, tuple(direction), aoi=pool[rng.integers(len(pool))]))
            clicks: Tuple[ClickEvent, ...] = ()
            if students:
                times = np.sort(rng.uniform(0.0, duration, size=int(rng.integers(0, 2 * cfg.windows_per_group + 1))))
                clicks = tuple(ClickEvent(float(round(tc, 3)), students[rng.integers(len(students))]) for tc in times)
            onsets = stimulus_onsets(cfg, sample_rate)
            script = EventScript(
                segments=tuple(segments),
                sample_rate=sample_rate,
                jitter_deg=cfg.jitter_deg,
                pupil_noise_mm=cfg.pupil_noise_mm,
                clicks=clicks,
                pupil_steps=tuple(PupilStep(o, cfg.pupil_response_ms, cfg.pupil_response_mm) for o in onsets),
                onsets=onsets,
                labels={"participant": pid, "class": str(cls)},
                recording_id=pid,
            )
            rec, truth = generate_recording(script, seed=int(rng.integers(2**31)))
            effect = {"feature": cfg.effect_feature, "effect_sd": cfg.effect_sd, "shift_sd": shift}
            planted.append(
                PlantedRecording(
                    recording=rec,
                    truth=GroundTruth(events=truth.events, label=str(cls), effect=effect),
                    clicks=clicks,
                    onsets=onsets,
                )
            )
    logger.info("Planted recordings", extra={"n_events": len(planted), "feature": cfg.effect_feature})
    return planted


def plant_dataset(
    cfg: SynthConfig,
    catalog_name: str,
    seed: int,
    preset: Optional[DetectionConfig] = None,
    study: Optional[str] = None,
):
    """
    Planted recordings pushed through the standard analysis into a feature
    matrix with one group per participant. Returns (matrix, truths).
    """
    from feature_extraction import build_feature_matrix, get_catalog
    from pipeline import analyze_recording

    catalog = get_catalog(catalog_name)
    if cfg.effect_feature not in catalog.ids:
        raise DataError(f"effect feature {cfg.effect_feature!r} is not in catalog {catalog_name!r}")
    study = study or catalog.preset
    preset = preset or PRESETS[catalog.preset]
    planted = plant_recordings(cfg, preset, study, seed)
    samples = [analyze_recording(p.recording, preset, clicks=p.clicks, study=study) for p in planted]
    matrix = build_feature_matrix(samples, catalog, cfg.window_s, preset=preset.name, classes=("0", "1"))
    return matrix, [p.truth for p in planted]
