"""Stage orchestration behind the CLI: detect, features, train, explain, stats, synth, pipeline."""
import glob
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from aoi_analysis import ChangeScore, change_scores_frame, event_locked_change, skipped_onsets
from config import STUDY_DEFAULTS, TOOL_VERSION, BlinkConfig, DetectionConfig, PipelineConfig, PupilConfig
from errors import DataError, QualityGateError, UsageError
from event_detection import detect_events, events_frame
from feature_extraction import (
    FeatureMatrix,
    build_feature_matrix,
    feature_frame,
    get_catalog,
    median_split_labels,
    normalize,
    read_feature_csv,
    write_feature_csv,
)
from metrics import record_events, record_recording, record_stage
from model_lab import (
    ModelReport,
    RfeResult,
    derive_seed,
    explain,
    fit_model,
    model_to_dict,
    nested_cv,
    repeat_record,
    shap_rfe,
    window_sweep,
)
from models import AnalyzedRecording, ClickEvent, Recording, TrackingQuality
from pupil_pipeline import clean_pupil, detect_blinks, export_pupil_csv
from recording_io import interpolate_gaps, load_recording, quality_report, serialize_recording
from stats_tests import group_comparison_table, paired_comparison_table, pairwise_mann_whitney
from storage import ArtifactStore
from synth_oracle import PlantedRecording, plant_recordings

logger = logging.getLogger(__name__)

SIDECAR_SUFFIXES = (".clicks.jsonl", ".onsets.jsonl")
RECORDING_SUFFIXES = (".jsonl", ".csv")
ROC_GRID = np.linspace(0.0, 1.0, 101)
FINAL_MODEL_STREAM = 10_000
RFE_STREAM = 20_000


@dataclass(frozen=True, eq=False)
class ProcessedRecording:
    path: str
    recording_id: str
    participant: str
    quality: TrackingQuality
    gate: float
    analyzed: Optional[AnalyzedRecording] = None
    change_scores: Tuple[ChangeScore, ...] = ()
    skipped_onsets: Tuple[float, ...] = ()

    @property
    def passed(self) -> bool:
        return self.analyzed is not None


@dataclass(frozen=True, eq=False)
class DetectOutcome:
    processed: Tuple[ProcessedRecording, ...]
    exit_code: int = 0

    @property
    def excluded(self) -> List[ProcessedRecording]:
        return [p for p in self.processed if not p.passed]


@contextmanager
def stage(name: str, cfg: PipelineConfig) -> Iterator[None]:
    started = time.perf_counter()
    logger.info("Stage started", extra={"stage": name, "config_hash": cfg.config_hash()})
    yield
    elapsed = time.perf_counter() - started
    record_stage(name, elapsed)
    logger.info("Stage finished", extra={"stage": name, "config_hash": cfg.config_hash()})


def artifact_store(cfg: PipelineConfig, output_dir: Optional[str] = None) -> ArtifactStore:
    return ArtifactStore(output_dir or cfg.output_dir, cfg.config_hash(), TOOL_VERSION)


# ---------------------------------------------------------------- recordings


def discover_inputs(patterns: Sequence[str]) -> List[Path]:
    """Recording files matched by the input globs, sidecars skipped, in path order."""
    if not patterns:
        raise UsageError("config lists no inputs")
    found = set()
    for pattern in patterns:
        matches = glob.glob(pattern, recursive=True)
        if not matches and not glob.has_magic(pattern):
            raise UsageError(f"input not found: {pattern}")
        for match in matches:
            path = Path(match)
            if path.name.endswith(SIDECAR_SUFFIXES) or path.suffix.lower() not in RECORDING_SUFFIXES:
                continue
            found.add(path)
    if not found:
        raise UsageError(f"no recordings matched {list(patterns)}")
    return sorted(found, key=str)


def analyze_recording(
    rec: Recording,
    preset: DetectionConfig,
    pupil_cfg: Optional[PupilConfig] = None,
    blink_cfg: Optional[BlinkConfig] = None,
    clicks: Sequence[ClickEvent] = (),
    study: Optional[str] = None,
) -> AnalyzedRecording:
    """
    The standard per-recording analysis: fill short gaze gaps, clean the
    pupil trace, detect head/eye events on the filled recording and blinks on
    the raw pupil trace, then attach the clicks.
    """
    if pupil_cfg is None:
        defaults = STUDY_DEFAULTS.get(study or preset.name)
        pupil_cfg = PupilConfig(baseline_window_ms=defaults.baseline_window_ms) if defaults else PupilConfig()
    filled = interpolate_gaps(rec, pupil_cfg.max_gap_ms)
    raw, cleaned = clean_pupil(filled, pupil_cfg)
    events = detect_events(filled, preset, pupil=cleaned)
    blinks = detect_blinks(raw, blink_cfg or BlinkConfig())
    events = replace(events, blinks=tuple(blinks), clicks=tuple(clicks))
    return AnalyzedRecording(recording=filled, events=events, pupil=cleaned)


def process_recording(path: str, cfg: PipelineConfig) -> ProcessedRecording:
    """Load, gate and analyze one recording file."""
    loaded = load_recording(path)
    rec = loaded.recording
    quality = quality_report(rec, cfg.pupil_config().max_gap_ms)
    gate = cfg.gate()
    participant = rec.group_id(cfg.group_key)
    if not quality.passes(gate):
        logger.warning(
            "Recording below quality gate",
            extra={"recording": rec.id, "path": path, "ratio": quality.tracking_ratio, "gate": gate},
        )
        return ProcessedRecording(path, rec.id, participant, quality, gate)
    analyzed = analyze_recording(rec, cfg.detection(), cfg.pupil_config(), cfg.blink, loaded.clicks, cfg.study_name)
    scores: List[ChangeScore] = []
    skipped: List[float] = []
    if cfg.change_scores is not None and loaded.onsets:
        window_ms = cfg.change_scores.window_ms
        scores = event_locked_change(
            analyzed.recording,
            analyzed.events,
            loaded.onsets,
            window_ms=window_ms,
            metrics=cfg.change_scores.metrics,
            pupil=analyzed.pupil,
        )
        skipped = skipped_onsets(analyzed.recording, loaded.onsets, window_ms)
    return ProcessedRecording(path, rec.id, participant, quality, gate, analyzed, tuple(scores), tuple(skipped))


def process_inputs(cfg: PipelineConfig, workers: int = 1) -> List[ProcessedRecording]:
    """Every input recording, in path order whatever the worker count."""
    paths = [str(p) for p in discover_inputs(cfg.inputs)]
    try:
        if workers > 1 and len(paths) > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                processed = list(pool.map(process_recording, paths, [cfg] * len(paths)))
        else:
            processed = [process_recording(p, cfg) for p in paths]
    except DataError:
        record_recording("error")
        raise

    seen: Dict[str, str] = {}
    for p in processed:
        if p.recording_id in seen:
            raise DataError(f"duplicate recording id {p.recording_id!r} in {seen[p.recording_id]} and {p.path}")
        seen[p.recording_id] = p.path
        record_recording("ok" if p.passed else "excluded")
        if p.passed:
            events = p.analyzed.events
            record_events("fixation", len(events.fixations))
            record_events("saccade", len(events.saccades))
            record_events("blink", len(events.blinks))
            record_events("head_moving", sum(1 for h in events.head_segments if h.state == "moving"))
    return processed


def quality_frame(processed: Sequence[ProcessedRecording]) -> pd.DataFrame:
    columns = ["recording", "participant", "path", "tracking_ratio", "gate", "passed", "n_frames", "duration_ms", "long_gaps"]
    rows = [
        {
            "recording": p.recording_id,
            "participant": p.participant,
            "path": p.path,
            "tracking_ratio": p.quality.tracking_ratio,
            "gate": p.gate,
            "passed": p.passed,
            "n_frames": p.quality.n_frames,
            "duration_ms": p.quality.duration_ms,
            "long_gaps": json.dumps([list(g) for g in p.quality.long_gaps]),
        }
        for p in processed
    ]
    return pd.DataFrame(rows, columns=columns)


def exclusions_frame(processed: Sequence[ProcessedRecording]) -> pd.DataFrame:
    columns = ["recording", "path", "tracking_ratio", "gate", "reason"]
    rows = [
        {
            "recording": p.recording_id,
            "path": p.path,
            "tracking_ratio": p.quality.tracking_ratio,
            "gate": p.gate,
            "reason": "tracking_ratio_below_gate",
        }
        for p in processed
        if not p.passed
    ]
    return pd.DataFrame(rows, columns=columns)


def _concat(frames: List[pd.DataFrame], columns: Sequence[str]) -> pd.DataFrame:
    frames = [f for f in frames if not f.empty]
    if not frames:
        return pd.DataFrame(columns=list(columns))
    return pd.concat(frames, ignore_index=True)


# -------------------------------------------------------------------- stages


def run_detect(cfg: PipelineConfig, store: ArtifactStore, workers: int = 1, export_pupil: bool = False) -> DetectOutcome:
    """Events, quality and exclusions tables; change scores and pupil traces when asked for."""
    with stage("detect", cfg):
        processed = process_inputs(cfg, workers)
        passed = [p for p in processed if p.passed]
        frames = [events_frame(p.analyzed.events) for p in passed]
        columns = list(frames[0].columns) if frames else ["recording", "type", "onset_ms", "offset_ms", "duration_ms"]
        store.write_csv("events.csv", _concat(frames, columns))
        store.write_csv("quality.csv", quality_frame(processed))
        store.write_csv("exclusions.csv", exclusions_frame(processed))
        if cfg.change_scores is not None:
            score_frames = [change_scores_frame(p.recording_id, p.participant, p.change_scores) for p in passed]
            empty = change_scores_frame("", "", [])
            store.write_csv("change_scores.csv", _concat(score_frames, list(empty.columns)))
            skipped = [
                {"recording": p.recording_id, "onset_ms": onset} for p in passed for onset in p.skipped_onsets
            ]
            store.write_csv("skipped_onsets.csv", pd.DataFrame(skipped, columns=["recording", "onset_ms"]))
        if export_pupil:
            for p in passed:
                store.write_csv(f"pupil/{p.recording_id}.csv", export_pupil_csv(p.analyzed.pupil))

        outcome = DetectOutcome(processed=tuple(processed), exit_code=3 if len(passed) < len(processed) else 0)
        if outcome.excluded:
            logger.warning(
                "Recordings excluded by the quality gate",
                extra={"n_events": len(outcome.excluded), "gate": cfg.gate(), "exit_code": outcome.exit_code},
            )
    return outcome


def _class_names(cfg: PipelineConfig) -> Optional[Tuple[str, ...]]:
    if cfg.median_split_key:
        return ("0", "1")
    return tuple(cfg.classes) if cfg.classes else None


def _label_override(cfg: PipelineConfig, samples: Sequence[AnalyzedRecording]) -> Optional[Dict[str, str]]:
    """Median-split labels from a numeric score label, when configured."""
    key = cfg.median_split_key
    if not key:
        return None
    scores = []
    for sample in samples:
        rec = sample.recording
        try:
            scores.append(float(rec.labels[key]))
        except (KeyError, ValueError):
            raise DataError(f"recording {rec.id!r}: label {key!r} missing or not numeric")
    labels = median_split_labels(scores)
    return {s.recording.id: str(label) for s, label in zip(samples, labels)}


def build_matrix(cfg: PipelineConfig, samples: Sequence[AnalyzedRecording], window_s: float) -> FeatureMatrix:
    return build_feature_matrix(
        samples,
        get_catalog(cfg.catalog_name()),
        window_s,
        step_s=cfg.features.step_s,
        label_key=cfg.label_key,
        classes=_class_names(cfg),
        group_key=cfg.group_key,
        preset=cfg.detection().name,
        label_override=_label_override(cfg, samples),
        pooled_velocity=cfg.features.pooled_saccade_velocity,
    )


def _write_matrix(store: ArtifactStore, matrix: FeatureMatrix, name: str) -> None:
    write_feature_csv(store, matrix, f"{name}.csv")
    store.write_json(
        f"{name}.json",
        {"catalog": matrix.catalog, "classes": list(matrix.classes), "window_s": matrix.window_s, "n_rows": matrix.n_rows},
    )


def _read_matrix(store: ArtifactStore, name: str) -> FeatureMatrix:
    meta = store.read_json(f"{name}.json")
    matrix = read_feature_csv(store, f"{name}.csv", meta["catalog"], meta["classes"])
    return replace(matrix, window_s=meta["window_s"])


def _kept(processed: Sequence[ProcessedRecording]) -> List[AnalyzedRecording]:
    kept = [p.analyzed for p in processed if p.passed]
    if not kept:
        excluded = [p.recording_id for p in processed]
        raise QualityGateError("every recording failed the quality gate", excluded=excluded)
    return kept


def run_features(
    cfg: PipelineConfig,
    store: ArtifactStore,
    workers: int = 1,
    processed: Optional[Sequence[ProcessedRecording]] = None,
) -> FeatureMatrix:
    """Feature matrix over the recordings that pass the gate; failing ones go to exclusions.csv."""
    with stage("features", cfg):
        if processed is None:
            processed = process_inputs(cfg, workers)
        store.write_csv("exclusions.csv", exclusions_frame(processed))
        matrix = build_matrix(cfg, _kept(processed), cfg.window_s())
        _write_matrix(store, matrix, "features")
    return matrix


def mean_roc(curves: Sequence[Sequence[Tuple[float, float]]]) -> List[List[float]]:
    """
    Vertical average of ROC curves on a fixed false-positive-rate grid.

    A vertical step (several points at one fpr) counts at its highest tpr.
    """
    if not curves:
        return []
    tprs = []
    for points in curves:
        fpr = np.array([p[0] for p in points])
        tpr = np.array([p[1] for p in points])
        order = np.argsort(fpr, kind="mergesort")
        fpr, tpr = fpr[order], tpr[order]
        steps, starts = np.unique(fpr, return_index=True)
        tprs.append(np.interp(ROC_GRID, steps, np.maximum.reduceat(tpr, starts)))
    mean = np.mean(np.vstack(tprs), axis=0)
    return [[float(f), float(t)] for f, t in zip(ROC_GRID, mean)]


def run_train(
    cfg: PipelineConfig,
    store: ArtifactStore,
    workers: int = 1,
    samples: Optional[Sequence[AnalyzedRecording]] = None,
) -> ModelReport:
    """Nested CV, final fit on every row, SHAP of the final model, report."""
    with stage("train", cfg):
        family = cfg.model.family
        normalization = cfg.normalization()
        cv_kwargs: Dict[str, Any] = {
            "family": family,
            "grid": cfg.model.grid or None,
            "inner_k": cfg.cv.inner_k,
            "outer_repeats": cfg.outer_repeats(),
            "test_ratio": cfg.cv.test_ratio,
            "seed": cfg.seed,
            "workers": workers,
        }
        window_scores: Dict[str, float] = {}
        matrix_name = "features"
        if cfg.features.window_sweep:
            if samples is None:
                samples = _kept(process_inputs(cfg, workers))
            sweep = window_sweep(
                lambda w: build_matrix(cfg, samples, w), cfg.features.window_sweep, normalization=normalization, **cv_kwargs
            )
            window_scores = {f"{w:g}": s for w, s in sweep.scores.items()}
            matrix = build_matrix(cfg, samples, sweep.best_window_s)
            matrix_name = "features_selected"
            _write_matrix(store, matrix, matrix_name)
            result = sweep.results[sweep.best_window_s]
        else:
            matrix = _read_matrix(store, "features")
            result = nested_cv(matrix, normalization=normalization, **cv_kwargs)

        data = normalize(matrix, normalization)
        final_seed = derive_seed(cfg.seed, FINAL_MODEL_STREAM)
        model = fit_model(family, data.X, data.labels, result.best_params, final_seed, workers)
        phi, base = explain(model, data.X, data.X)
        store.write_json(
            "model.json",
            {
                "model": model_to_dict(model),
                "normalization": data.normalization.to_dict(),
                "feature_ids": list(matrix.feature_ids),
                "classes": list(matrix.classes),
            },
        )

        shap_frame = pd.DataFrame(phi, columns=list(matrix.feature_ids))
        meta = feature_frame(matrix)[["group_id", "trial_id", "window_idx", "label"]]
        shap_frame = pd.concat([meta, shap_frame], axis=1)
        shap_frame["base_value"] = base
        store.write_csv("shap.csv", shap_frame)

        roc_rows = [
            {"repeat": r.repeat, "fpr": f, "tpr": t} for r in result.repeats if r.roc is not None for f, t in r.roc
        ]
        store.write_csv("roc.csv", pd.DataFrame(roc_rows, columns=["repeat", "fpr", "tpr"]))

        mean_abs = np.mean(np.abs(phi), axis=0) if len(phi) else np.zeros(matrix.n_features)
        report = ModelReport(
            family=family,
            catalog=matrix.catalog,
            classes=list(matrix.classes),
            feature_ids=list(matrix.feature_ids),
            window_s=matrix.window_s,
            hyperparameters=result.best_params,
            metrics=result.summary(),
            repeats=[repeat_record(r) for r in result.repeats],
            roc=mean_roc([r.roc for r in result.repeats if r.roc is not None]),
            mean_abs_shap={f: float(v) for f, v in zip(matrix.feature_ids, mean_abs)},
            base_value=base,
            window_scores=window_scores,
            overrides=cfg.overrides,
            seeds={"master": cfg.seed, "final_model": final_seed, "repeats": [r.seed for r in result.repeats]},
            failed_grid_points=list(result.failed),
            leakage_violations=result.leakage_violations,
        )
        store.write_json("report.json", {**report.model_dump(mode="json"), "features_artifact": f"{matrix_name}.csv"})
        logger.info(
            "Model trained",
            extra={"stage": "train", "params": result.best_params, "score": report.metrics["accuracy"]["mean"]},
        )
    return report


def run_explain(cfg: PipelineConfig, store: ArtifactStore, workers: int = 1) -> RfeResult:
    """SHAP-RFE with the tuned hyperparameters; SHAP summary and elimination curve."""
    with stage("explain", cfg):
        report = store.read_json("report.json")
        name = Path(report.get("features_artifact", "features.csv")).stem
        matrix = _read_matrix(store, name)
        rfe = shap_rfe(
            matrix,
            family=report["family"],
            params=report["hyperparameters"],
            k=cfg.cv.inner_k,
            seed=derive_seed(cfg.seed, RFE_STREAM),
            normalization=cfg.normalization(),
            workers=workers,
        )
        importance = rfe.steps[0].importance
        ranked = sorted(importance, key=lambda f: (-importance[f], f))
        summary = pd.DataFrame(
            {
                "rank": range(1, len(ranked) + 1),
                "feature": ranked,
                "mean_abs_shap": [importance[f] for f in ranked],
            }
        )
        store.write_csv("shap_summary.csv", summary)
        curve = pd.DataFrame(
            [{"n_features": s.n_features, "score": s.score, "dropped": s.dropped or ""} for s in rfe.steps],
            columns=["n_features", "score", "dropped"],
        )
        store.write_csv("rfe_curve.csv", curve)
        store.write_json(
            "explain.json",
            {
                "best_features": list(rfe.best_features),
                "best_score": rfe.best_score,
                "elimination_order": [s.dropped for s in rfe.steps if s.dropped],
                "final_feature": rfe.steps[-1].features[0],
            },
        )
    return rfe


def participant_table(frame: pd.DataFrame, features: Sequence[str], by: str) -> pd.DataFrame:
    """Mean of each feature over a participant's windows; ``by`` must be constant per participant."""
    grouped = frame.groupby("group_id", sort=True)
    inconsistent = grouped[by].nunique()
    bad = inconsistent[inconsistent > 1]
    if len(bad):
        raise DataError(f"participant {bad.index[0]!r} has more than one {by!r} value")
    table = grouped[list(features)].mean()
    table[by] = grouped[by].first()
    return table.reset_index()


def run_stats(cfg: PipelineConfig, store: ArtifactStore) -> pd.DataFrame:
    """Group comparison of per-participant features, or before/after change scores."""
    plan = cfg.stats
    with stage("stats", cfg):
        if plan.source == "features":
            matrix = _read_matrix(store, "features")
            frame = feature_frame(matrix)
            frame["label"] = [matrix.classes[i] for i in matrix.labels]
            if plan.by not in frame.columns:
                raise DataError(f"grouping column {plan.by!r} not in the feature table")
            features = plan.features or list(matrix.feature_ids)
            per_participant = participant_table(frame, features, plan.by)
            table, _ = group_comparison_table(
                per_participant,
                features,
                plan.by,
                test=plan.test,
                alternative=plan.alternative,
                correction=plan.correction,
                continuity=plan.continuity,
            )
            levels = sorted(per_participant[plan.by].unique().tolist())
            if plan.test == "kruskal_wallis" and len(levels) > 2 and not table.empty:
                rows = []
                for feature in table.loc[table["p_adjusted"] < 0.05, "feature"]:
                    groups = {
                        str(level): per_participant.loc[per_participant[plan.by] == level, feature].to_numpy(dtype=float)
                        for level in levels
                    }
                    for a, b, r in pairwise_mann_whitney(groups, plan.alternative, continuity=plan.continuity):
                        rows.append({"feature": feature, "group_a": a, "group_b": b, "statistic": r.statistic, "p_adjusted": r.p_value})
                store.write_csv(
                    "stats_pairwise.csv",
                    pd.DataFrame(rows, columns=["feature", "group_a", "group_b", "statistic", "p_adjusted"]),
                )
        else:
            scores = store.read_csv("change_scores.csv", dtype={"participant": str, "recording": str})
            if scores.empty:
                raise DataError("change_scores.csv has no scores")
            means = scores.groupby(["metric", "participant"], sort=True)[["value_before", "value_after"]].mean()
            metrics = plan.features or list(dict.fromkeys(scores["metric"]))
            pairs = {}
            for metric in metrics:
                if metric not in means.index.get_level_values(0):
                    raise DataError(f"change-score metric {metric!r} not in change_scores.csv")
                sub = means.loc[metric]
                pairs[metric] = (sub["value_before"].to_numpy(), sub["value_after"].to_numpy())
            table, _ = paired_comparison_table(
                pairs,
                test=plan.test,
                alternative=plan.alternative,
                correction=plan.correction,
                continuity=plan.continuity,
            )
        store.write_csv("stats.csv", table)
    return table


def run_synth(cfg: PipelineConfig, store: ArtifactStore) -> List[PlantedRecording]:
    """Planted recordings with meta, clicks, onsets and ground-truth sidecars under synth/."""
    with stage("synth", cfg):
        planted = plant_recordings(cfg.synth, cfg.detection(), cfg.study_name, cfg.seed)
        for p in planted:
            rec = p.recording
            base = f"synth/{rec.id}"
            store.write_bytes(f"{base}.jsonl", serialize_recording(rec, "jsonl"))
            store.write_json(
                f"{base}.meta.json",
                {"id": rec.id, "trial": rec.trial, "nominal_rate": rec.nominal_rate, "labels": rec.labels},
            )
            if p.clicks:
                lines = "".join(json.dumps({"t_ms": c.t_ms, "target": c.target}) + "\n" for c in p.clicks)
                store.write_bytes(f"{base}.clicks.jsonl", lines.encode())
            if p.onsets:
                lines = "".join(json.dumps({"t_ms": float(o)}) + "\n" for o in p.onsets)
                store.write_bytes(f"{base}.onsets.jsonl", lines.encode())
            store.write_json(f"{base}.truth.json", p.truth.to_dict())
    return planted


def run_pipeline(cfg: PipelineConfig, store: ArtifactStore, workers: int = 1, export_pupil: bool = False) -> int:
    """detect, features, train, explain and stats in sequence, sharing the per-recording analysis."""
    detected = run_detect(cfg, store, workers, export_pupil)
    run_features(cfg, store, workers, processed=detected.processed)
    samples = [p.analyzed for p in detected.processed if p.passed]
    run_train(cfg, store, workers, samples=samples)
    run_explain(cfg, store, workers)
    if cfg.stats.source == "features" or cfg.change_scores is not None:
        run_stats(cfg, store)
    return 0


def run_stage(command: str, cfg: PipelineConfig, store: ArtifactStore, workers: int = 1, export_pupil: bool = False) -> int:
    """Run one subcommand and return its exit code."""
    if command == "detect":
        return run_detect(cfg, store, workers, export_pupil).exit_code
    if command == "features":
        run_features(cfg, store, workers)
    elif command == "train":
        run_train(cfg, store, workers)
    elif command == "explain":
        run_explain(cfg, store, workers)
    elif command == "stats":
        run_stats(cfg, store)
    elif command == "synth":
        run_synth(cfg, store)
    elif command == "pipeline":
        return run_pipeline(cfg, store, workers, export_pupil)
    else:
        raise UsageError(f"unknown subcommand {command!r}")
    return 0
