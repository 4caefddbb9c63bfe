"""Configuration management: runtime settings, presets and the pipeline config."""
import hashlib
import json
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from errors import UsageError

TOOL_VERSION = "1.0.0"


class Settings(BaseSettings):
    """
    Runtime settings populated from environment variables.

    Only the output directory and the worker count may be overridden from
    the environment; neither changes what the artifacts contain.
    """

    model_config = SettingsConfigDict(env_prefix="GAZELAB_")

    output_dir: Optional[str] = None
    workers: int = Field(1, ge=1)
    log_level: str = Field("INFO", validation_alias="LOG_LEVEL")


class DetectionConfig(BaseModel):
    """Velocity and duration thresholds for head, fixation and saccade detection."""

    model_config = ConfigDict(frozen=True)

    name: str
    head_stationary_max: float = Field(..., gt=0)
    fixation_gaze_max: float = Field(..., gt=0)
    fixation_dur: Tuple[float, float]
    saccade_gaze_min: float = Field(..., gt=0)
    saccade_dur: Tuple[float, float]

    @field_validator("fixation_dur", "saccade_dur")
    @classmethod
    def validate_bounds(cls, v: Tuple[float, float]) -> Tuple[float, float]:
        lo, hi = v
        if not 0 < lo < hi:
            raise ValueError("duration bounds must satisfy 0 < min < max")
        return v


PRESETS: Dict[str, DetectionConfig] = {
    "classroom": DetectionConfig(
        name="classroom",
        head_stationary_max=7.0,
        fixation_gaze_max=30.0,
        fixation_dur=(100.0, 500.0),
        saccade_gaze_min=60.0,
        saccade_dur=(30.0, 80.0),
    ),
    "teacher": DetectionConfig(
        name="teacher",
        head_stationary_max=12.0,
        fixation_gaze_max=40.0,
        fixation_dur=(80.0, 600.0),
        saccade_gaze_min=50.0,
        saccade_dur=(30.0, 80.0),
    ),
    "locomotion": DetectionConfig(
        name="locomotion",
        head_stationary_max=12.0,
        fixation_gaze_max=40.0,
        fixation_dur=(100.0, 500.0),
        saccade_gaze_min=80.0,
        saccade_dur=(30.0, 80.0),
    ),
}


class BlinkConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    min_core_ms: float = Field(30.0, gt=0)
    slope_threshold: float = Field(4.0, gt=0)  # mm/s
    merge_gap_ms: float = Field(50.0, ge=0)
    min_dur_ms: float = Field(50.0, ge=0)
    max_dur_ms: float = Field(600.0, gt=0)

    @model_validator(mode="after")
    def validate_duration_bounds(self) -> "BlinkConfig":
        if self.min_dur_ms >= self.max_dur_ms:
            raise ValueError("min_dur_ms must be below max_dur_ms")
        return self


class PupilConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    sg_window: int = 11
    sg_order: int = 3
    baseline_window_ms: float = Field(1000.0, gt=0)
    estimator: Literal["median", "mean"] = "median"
    max_gap_ms: float = Field(75.0, gt=0)


class StudyDefaults(BaseModel):
    """Per-study defaults that travel with a preset."""

    model_config = ConfigDict(frozen=True)

    baseline_window_ms: float
    quality_gate: float
    catalog: str
    window_s: float
    window_sweep: Tuple[float, ...]
    outer_repeats: int
    normalization: Literal["max_abs", "min_max"]


STUDY_DEFAULTS: Dict[str, StudyDefaults] = {
    "classroom": StudyDefaults(
        baseline_window_ms=1000.0,
        quality_gate=0.90,
        catalog="classroom-gender-43",
        window_s=60.0,
        window_sweep=tuple(float(w) for w in range(10, 101, 10)),
        outer_repeats=10,
        normalization="max_abs",
    ),
    "teacher": StudyDefaults(
        baseline_window_ms=1000.0,
        quality_gate=0.85,
        catalog="teacher-expertise-36",
        window_s=30.0,
        window_sweep=(30.0,),
        outer_repeats=20,
        normalization="min_max",
    ),
    "locomotion": StudyDefaults(
        baseline_window_ms=1500.0,
        quality_gate=0.90,
        catalog="locomotion-ux-33",
        window_s=10.0,
        window_sweep=tuple(float(w) for w in range(5, 31, 5)),
        outer_repeats=50,
        normalization="min_max",
    ),
}


class FeatureConfig(BaseModel):
    catalog: Optional[str] = None
    window_s: Optional[float] = Field(None, gt=0)
    step_s: Optional[float] = Field(None, gt=0)
    window_sweep: Optional[List[float]] = None
    pooled_saccade_velocity: bool = False


class ModelConfig(BaseModel):
    family: Literal["random_forest", "logistic"] = "random_forest"
    grid: Dict[str, List[Any]] = Field(default_factory=dict)
    normalization: Optional[Literal["max_abs", "min_max"]] = None

    @field_validator("grid")
    @classmethod
    def validate_grid(cls, v: Dict[str, List[Any]]) -> Dict[str, List[Any]]:
        for key, values in v.items():
            if not values:
                raise ValueError(f"grid entry {key!r} has no values")
        return v


class CvProtocol(BaseModel):
    inner_k: int = Field(5, ge=2)
    outer_repeats: Optional[int] = Field(None, ge=1)
    test_ratio: float = Field(0.2, gt=0, lt=1)


class StatsPlan(BaseModel):
    test: Literal["mann_whitney", "wilcoxon", "paired_t", "kruskal_wallis"] = "mann_whitney"
    source: Literal["features", "change_scores"] = "features"
    by: str = "label"
    features: Optional[List[str]] = None
    alternative: Literal["two-sided", "greater", "less"] = "two-sided"
    correction: Literal["bonferroni", "none"] = "bonferroni"
    continuity: bool = True


class ChangeScoreConfig(BaseModel):
    window_ms: float = Field(2500.0, gt=0)
    metrics: List[str] = Field(
        default_factory=lambda: [
            "pupil_mean",
            "fixation_duration_mean",
            "saccade_count",
            "saccade_duration_mean",
            "saccade_amplitude_mean",
            "dwell:peer_*",
            "dwell:teacher",
            "dwell:screen",
            "distinct:peer_",
        ]
    )


class SynthConfig(BaseModel):
    n_groups_per_class: int = Field(10, ge=1)
    windows_per_group: int = Field(6, ge=1)
    window_s: float = Field(10.0, gt=0)
    effect_feature: str = "saccade_amplitude_mean"
    effect_sd: float = 2.0
    jitter_deg: float = Field(0.02, ge=0)
    pupil_noise_mm: float = Field(0.01, ge=0)
    # Scripted stimulus onsets, each followed by the same pupil step in both classes
    onsets_per_window: int = Field(0, ge=0)
    pupil_response_mm: float = 0.07
    pupil_response_ms: float = Field(2500.0, gt=0)


class PipelineConfig(BaseModel):
    """The single JSON document that drives every subcommand."""

    model_config = ConfigDict(extra="forbid")

    seed: int
    inputs: List[str] = Field(default_factory=list)
    preset: Union[str, DetectionConfig] = "classroom"
    study: Optional[Literal["classroom", "teacher", "locomotion"]] = None
    blink: BlinkConfig = Field(default_factory=BlinkConfig)
    pupil: Optional[PupilConfig] = None
    quality_gate: Optional[float] = Field(None, ge=0, le=1)
    features: FeatureConfig = Field(default_factory=FeatureConfig)
    model: ModelConfig = Field(default_factory=ModelConfig)
    cv: CvProtocol = Field(default_factory=CvProtocol)
    stats: StatsPlan = Field(default_factory=StatsPlan)
    change_scores: Optional[ChangeScoreConfig] = None
    synth: SynthConfig = Field(default_factory=SynthConfig)
    label_key: str = "class"
    group_key: str = "participant"
    classes: Optional[List[str]] = None
    median_split_key: Optional[str] = None
    output_dir: str = "out"
    overrides: Dict[str, Any] = Field(default_factory=dict)

    @field_validator("preset")
    @classmethod
    def validate_preset(cls, v: Union[str, DetectionConfig]) -> Union[str, DetectionConfig]:
        if isinstance(v, str) and v not in PRESETS:
            raise ValueError(f"unknown preset {v!r}; expected one of {sorted(PRESETS)}")
        return v

    @model_validator(mode="after")
    def validate_catalog(self) -> "PipelineConfig":
        from feature_extraction import CATALOGS

        catalog = self.features.catalog
        if catalog is not None and catalog not in CATALOGS:
            raise ValueError(f"unknown catalog {catalog!r}; expected one of {sorted(CATALOGS)}")
        if self.study is None and isinstance(self.preset, DetectionConfig) and self.preset.name not in STUDY_DEFAULTS:
            raise ValueError("an explicit DetectionConfig needs 'study' to pick pupil and CV defaults")
        return self

    @property
    def study_name(self) -> str:
        if self.study is not None:
            return self.study
        if isinstance(self.preset, str):
            return self.preset
        return self.preset.name

    def detection(self) -> DetectionConfig:
        if isinstance(self.preset, DetectionConfig):
            return self.preset
        return PRESETS[self.preset]

    def defaults(self) -> StudyDefaults:
        return STUDY_DEFAULTS[self.study_name]

    def pupil_config(self) -> PupilConfig:
        if self.pupil is not None:
            return self.pupil
        return PupilConfig(baseline_window_ms=self.defaults().baseline_window_ms)

    def gate(self) -> float:
        return self.quality_gate if self.quality_gate is not None else self.defaults().quality_gate

    def catalog_name(self) -> str:
        return self.features.catalog or self.defaults().catalog

    def window_s(self) -> float:
        return self.features.window_s or self.defaults().window_s

    def outer_repeats(self) -> int:
        return self.cv.outer_repeats or self.defaults().outer_repeats

    def normalization(self) -> str:
        return self.model.normalization or self.defaults().normalization

    def config_hash(self) -> str:
        """Hash of everything that can change an artifact's contents."""
        payload = self.model_dump(mode="json", exclude={"output_dir"})
        canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode()).hexdigest()[:16]


def load_config(path: Union[str, Path], overrides: Optional[Dict[str, Any]] = None) -> PipelineConfig:
    """Load and validate a pipeline config, applying flag overrides on top."""
    try:
        raw = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise UsageError(f"config file not found: {path}")
    except json.JSONDecodeError as e:
        raise UsageError(f"{path}: invalid JSON at line {e.lineno}: {e.msg}")
    return build_config(raw, overrides, source=str(path))


def build_config(raw: Dict[str, Any], overrides: Optional[Dict[str, Any]] = None, source: str = "<config>") -> PipelineConfig:
    raw = dict(raw)
    applied: Dict[str, Any] = {}
    for dotted, value in (overrides or {}).items():
        if value is None:
            continue
        _set_dotted(raw, dotted, value)
        applied[dotted] = value
    if applied:
        raw["overrides"] = {**raw.get("overrides", {}), **applied}
    try:
        return PipelineConfig(**raw)
    except ValidationError as e:
        first = e.errors()[0]
        field = ".".join(str(p) for p in first["loc"])
        raise UsageError(f"{source}: invalid config field {field!r}: {first['msg']}")


def _set_dotted(target: Dict[str, Any], dotted: str, value: Any) -> None:
    parts = dotted.split(".")
    node = target
    for part in parts[:-1]:
        node = node.setdefault(part, {})
    node[parts[-1]] = value


# Global settings instance
settings = Settings()
