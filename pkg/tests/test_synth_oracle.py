"""Tests for scripted recordings, ground truth and planted datasets."""
import numpy as np
import pytest

from config import PRESETS, SynthConfig
from errors import DataError
from feature_extraction import normalize
from model_lab import explain, fit_model, nested_cv, shap_rfe
from synth_oracle import (
    Blink,
    EventScript,
    Fixation,
    HeadTurn,
    Idle,
    PupilStep,
    Saccade,
    aoi_pool,
    angle_deg,
    generate_recording,
    plant_dataset,
    plant_recordings,
    random_script,
)
from tests.conftest import direction

FORWARD = np.array([0.0, 0.0, 1.0])


def small_synth(**overrides):
    values = {"n_groups_per_class": 3, "windows_per_group": 2, "window_s": 10.0}
    values.update(overrides)
    return SynthConfig(**values)


def test_same_seed_is_bit_identical():
    """Test a script and seed always give the same recording."""
    script = EventScript(
        segments=(Fixation(200.0), Saccade(50.0, direction(30.0, 6.0)), Blink(150.0), Fixation(300.0)),
        jitter_deg=0.05,
        pupil_noise_mm=0.02,
    )
    a, truth_a = generate_recording(script, seed=4)
    b, truth_b = generate_recording(script, seed=4)
    np.testing.assert_array_equal(a.gaze, b.gaze)
    np.testing.assert_array_equal(a.pupil_left, b.pupil_left)
    assert truth_a == truth_b
    c, _ = generate_recording(script, seed=5)
    assert not np.array_equal(np.nan_to_num(a.gaze), np.nan_to_num(c.gaze))


def test_sample_timing():
    """Test samples sit at k / rate and cover the script."""
    script = EventScript(segments=(Fixation(100.0), Idle(45.0)), sample_rate=120.0)
    rec, truth = generate_recording(script)
    assert rec.n_frames == int(np.ceil(145.0 / (1000.0 / 120.0)))
    np.testing.assert_allclose(rec.t, np.arange(rec.n_frames) * 1000.0 / 120.0)
    assert [e.kind for e in truth.events] == ["fixation"]


@pytest.mark.parametrize(
    "segments, sample_rate, match",
    [
        ((), 120.0, "no segments"),
        ((Fixation(100.0),), 0.0, "sample_rate"),
        ((Fixation(0.0),), 120.0, "duration"),
        ((Fixation(100.0, (0.0, 0.0, 2.0)),), 120.0, "unit"),
        ((Saccade(50.0, (0.0, 0.0, 1.0), profile="ramp"),), 120.0, "profile"),
        ((Blink(100.0, depth=1.5),), 120.0, "depth"),
        ((HeadTurn(100.0, axis=(0.0, 0.0, 0.0)),), 120.0, "unit"),
    ],
)
def test_invalid_scripts(segments, sample_rate, match):
    """Test malformed scripts are rejected before generation."""
    with pytest.raises(DataError, match=match):
        generate_recording(EventScript(segments=segments, sample_rate=sample_rate))


def test_saccade_profiles():
    """Test constant and bell profiles sweep the same arc at different rates."""
    target = direction(0.0, 10.0)
    for profile in ("constant", "bell"):
        script = EventScript(
            segments=(Fixation(100.0), Saccade(100.0, target, profile=profile), Fixation(100.0)),
            sample_rate=100.0,
        )
        rec, truth = generate_recording(script)
        assert angle_deg(rec.gaze[10], FORWARD) == pytest.approx(0.0, abs=1e-9)
        assert angle_deg(rec.gaze[15], FORWARD) == pytest.approx(5.0, abs=1e-9)
        expected = 2.0 if profile == "constant" else 10.0 * (0.2 - np.sin(0.4 * np.pi) / (2 * np.pi))
        assert angle_deg(rec.gaze[12], FORWARD) == pytest.approx(expected, abs=1e-9)
        saccade = truth.of("saccade")[0]
        assert saccade.attrs["amplitude_deg"] == pytest.approx(10.0)
        assert saccade.attrs["peak_velocity"] == pytest.approx(100.0 if profile == "constant" else 200.0)


def test_head_turn_rotates_at_constant_rate():
    """Test the head quaternion turns one degree per sample and then holds."""
    script = EventScript(
        segments=(Fixation(100.0), HeadTurn(300.0, deg=30.0), Fixation(100.0)),
        sample_rate=100.0,
    )
    rec, truth = generate_recording(script)
    for k in (10, 20, 39):
        assert rec.head[k, 0] == pytest.approx(np.cos(np.radians(k - 10) / 2))
    assert rec.head[45, 0] == pytest.approx(np.cos(np.radians(30.0) / 2))
    np.testing.assert_allclose(rec.gaze, np.tile(FORWARD, (rec.n_frames, 1)))
    assert truth.of("head_turn")[0].attrs["rate_deg_s"] == pytest.approx(100.0)


def test_pupil_steps_and_blink_truth():
    """Test pupil steps add to the base and blinks report their core."""
    script = EventScript(
        segments=(Fixation(300.0), Blink(100.0, ramp_ms=20.0), Fixation(300.0)),
        sample_rate=100.0,
        pupil_steps=(PupilStep(t_ms=100.0, duration_ms=100.0, delta_mm=0.5),),
    )
    rec, truth = generate_recording(script)
    np.testing.assert_allclose(rec.pupil_left[10:20], 4.0)
    assert rec.pupil_left[5] == pytest.approx(3.5)
    assert not rec.valid[30:40].any()
    blink = truth.of("blink")[0]
    assert (blink.onset_ms, blink.offset_ms) == (280.0, 420.0)
    assert blink.attrs["core_onset_ms"] == 300.0
    assert blink.attrs["n_missing"] == 10


def test_ground_truth_to_dict():
    """Test the sidecar form flattens event attributes."""
    script = EventScript(segments=(Fixation(100.0, aoi="teacher"),), labels={"class": "1"})
    _, truth = generate_recording(script)
    data = truth.to_dict()
    assert data["label"] == "1"
    assert data["events"][0]["kind"] == "fixation"
    assert data["events"][0]["aoi"] == "teacher"
    assert data["events"][0]["offset_ms"] == 100.0


@pytest.mark.parametrize("name", ["classroom", "teacher", "locomotion"])
def test_random_script_respects_preset(name):
    """Test scripted durations and saccade rates stay inside the preset bounds."""
    preset = PRESETS[name]
    dt = 1000.0 / 120.0
    for seed in range(20):
        script = random_script(np.random.default_rng(seed), preset)
        for seg in script.segments:
            assert seg.duration_ms / dt == pytest.approx(round(seg.duration_ms / dt))
            if isinstance(seg, Fixation):
                assert preset.fixation_dur[0] + 2 * dt - 1e-9 <= seg.duration_ms <= preset.fixation_dur[1] - 2 * dt + 1e-9
            else:
                assert preset.saccade_dur[0] + 2 * dt - 1e-9 <= seg.duration_ms <= preset.saccade_dur[1] - 2 * dt + 1e-9
        _, truth = generate_recording(script)
        for saccade in truth.of("saccade"):
            ratio = saccade.attrs["peak_velocity"] / preset.saccade_gaze_min
            assert 1.5 - 1e-9 <= ratio <= 3.0 + 1e-9


def test_aoi_pool():
    """Test each study draws from its own AOI set."""
    assert "teacher" in aoi_pool("classroom")
    assert "peer_5" in aoi_pool("classroom")
    assert "student_1" in aoi_pool("teacher")
    assert aoi_pool("locomotion") == (None,)


def test_plant_recordings_layout():
    """Test participants, labels, lengths and clicks of planted recordings."""
    cfg = small_synth()
    planted = plant_recordings(cfg, PRESETS["classroom"], "classroom", seed=1)
    assert [p.recording.id for p in planted] == ["p0000", "p0001", "p0002", "p1000", "p1001", "p1002"]
    assert [p.recording.labels["class"] for p in planted] == ["0"] * 3 + ["1"] * 3
    assert all(p.recording.n_frames == 2400 for p in planted)
    assert all(p.clicks == () for p in planted)
    assert planted[3].truth.effect["shift_sd"] == 2.0
    assert planted[0].truth.effect["shift_sd"] == 0.0

    again = plant_recordings(cfg, PRESETS["classroom"], "classroom", seed=1)
    np.testing.assert_array_equal(planted[4].recording.gaze, again[4].recording.gaze)

    teacher = plant_recordings(cfg, PRESETS["teacher"], "teacher", seed=1)
    clicks = [c for p in teacher for c in p.clicks]
    assert all(c.target.startswith("student_") for c in clicks)


def test_planted_amplitudes_shift_with_class():
    """Test class 1 draws larger saccade amplitudes and other draws stay matched."""
    planted = plant_recordings(small_synth(), PRESETS["classroom"], "classroom", seed=2)

    def amplitudes(cls):
        return [
            s.attrs["amplitude_deg"]
            for p in planted
            if p.truth.label == cls
            for s in p.truth.of("saccade")
        ]

    zero, one = amplitudes("0"), amplitudes("1")
    assert min(zero + one) >= 4.5 - 1e-9
    assert max(zero + one) <= 20.0 + 1e-9
    assert np.mean(one) - np.mean(zero) > 2.0


def test_plant_rejects_unknown_effects():
    """Test effects on features that cannot be planted or are not in the catalog."""
    with pytest.raises(DataError, match="cannot be planted"):
        plant_recordings(small_synth(effect_feature="pupil_mean"), PRESETS["classroom"], "classroom", seed=0)
    with pytest.raises(DataError, match="not in catalog"):
        plant_dataset(small_synth(effect_feature="head_rotation_mean"), "classroom-gender-43", seed=0)


def test_plant_dataset_matrix():
    """Test the planted matrix has one group per participant and binary classes."""
    cfg = small_synth(n_groups_per_class=2)
    matrix, truths = plant_dataset(cfg, "classroom-gender-43", seed=3)
    assert matrix.classes == ("0", "1")
    assert len(set(matrix.group_ids)) == 4
    assert matrix.X.shape == (8, 43)
    assert sorted(t.label for t in truths) == ["0", "0", "1", "1"]
    assert set(matrix.labels.tolist()) == {0, 1}


# ------------------------------------------------------------ Monte-Carlo runs

SEEDS = range(50)


def cv_accuracy(effect_sd, seed):
    cfg = SynthConfig(effect_sd=effect_sd)
    matrix, _ = plant_dataset(cfg, "classroom-gender-43", seed=seed)
    result = nested_cv(
        matrix,
        family="logistic",
        grid={"l2_lambda": [1.0]},
        inner_k=3,
        outer_repeats=5,
        seed=seed,
        normalization="max_abs",
    )
    return result.summary()["accuracy"]["mean"]


@pytest.mark.slow
def test_null_effect_is_chance():
    """Test a zero planted effect gives chance accuracy on average."""
    accuracy = np.mean([cv_accuracy(0.0, seed) for seed in SEEDS])
    assert 0.4 <= accuracy <= 0.6


@pytest.mark.slow
def test_planted_effect_is_learned():
    """Test a 2 SD amplitude shift is classified accurately."""
    accuracy = np.mean([cv_accuracy(2.0, seed) for seed in SEEDS])
    assert accuracy >= 0.9


@pytest.mark.slow
def test_accuracy_grows_with_effect():
    """Test mean accuracy is non-decreasing over the effect grid."""
    means = [np.mean([cv_accuracy(effect, seed) for seed in SEEDS]) for effect in (0.0, 0.5, 1.0, 2.0)]
    for lower, higher in zip(means, means[1:]):
        assert higher >= lower - 0.03


@pytest.mark.slow
def test_planted_feature_ranks_high_in_shap():
    """Test the planted feature is among the top three by mean |SHAP|."""
    hits = 0
    for seed in SEEDS:
        matrix, _ = plant_dataset(SynthConfig(), "classroom-gender-43", seed=seed)
        matrix = normalize(matrix, "max_abs")
        model = fit_model("random_forest", matrix.X, matrix.labels, {"n_trees": 50, "max_depth": 6}, seed=seed)
        phi, _ = explain(model, matrix.X, matrix.X)
        ranked = [matrix.feature_ids[i] for i in np.argsort(-np.abs(phi).mean(axis=0), kind="stable")]
        hits += "saccade_amplitude_mean" in ranked[:3]
    assert hits >= 0.9 * len(SEEDS)


@pytest.mark.slow
def test_planted_feature_survives_elimination():
    """Test SHAP-RFE keeps the planted feature among the last three standing."""
    hits = 0
    for seed in SEEDS:
        matrix, _ = plant_dataset(SynthConfig(), "classroom-gender-43", seed=seed)
        rfe = shap_rfe(matrix, family="logistic", params={"l2_lambda": 1.0}, k=3, seed=seed, normalization="max_abs")
        assert len(rfe.steps) == matrix.n_features
        final_three = next(s.features for s in rfe.steps if s.n_features == 3)
        hits += "saccade_amplitude_mean" in final_three
    assert hits >= 0.95 * len(SEEDS)
