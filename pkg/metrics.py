"""Prometheus metrics helpers."""
from pathlib import Path
from typing import Union

from prometheus_client import CollectorRegistry, Counter, Histogram, write_to_textfile

registry = CollectorRegistry()

# Recording-level outcomes
recordings_total = Counter(
    "gazelab_recordings_total",
    "Recordings processed",
    ["result"],  # ok, excluded, error
    registry=registry,
)

events_total = Counter(
    "gazelab_events_total",
    "Detected eye and head events",
    ["type"],  # fixation, saccade, blink, head_moving
    registry=registry,
)

artifacts_total = Counter(
    "gazelab_artifacts_total",
    "Artifacts written",
    ["kind"],  # csv, json, raw
    registry=registry,
)

models_trained_total = Counter(
    "gazelab_models_trained_total",
    "Classifier fits",
    ["family"],
    registry=registry,
)

stage_latency = Histogram(
    "gazelab_stage_latency_seconds",
    "Wall time per pipeline stage",
    ["stage"],
    buckets=[0.01, 0.05, 0.1, 0.5, 1.0, 2.5, 5.0, 10.0, 30.0, 60.0, 300.0],
    registry=registry,
)


def record_recording(result: str) -> None:
    recordings_total.labels(result=result).inc()


def record_events(event_type: str, count: int) -> None:
    if count:
        events_total.labels(type=event_type).inc(count)


def record_artifact(kind: str) -> None:
    artifacts_total.labels(kind=kind).inc()


def record_model(family: str) -> None:
    models_trained_total.labels(family=family).inc()


def record_stage(stage: str, seconds: float) -> None:
    stage_latency.labels(stage=stage).observe(seconds)


def write_metrics(path: Union[str, Path]) -> None:
    """Write the registry in node-exporter textfile format."""
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    write_to_textfile(str(path), registry)
