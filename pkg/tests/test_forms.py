import csv
import io
from pathlib import Path

import pytest

from forms import load_synth_spec, load_train_config
from services.config import TrainConfig, load_settings
from services.errors import ConfigError
from services.metrics import VideoMetrics, aggregate_report
from services.synth import SynthSpec
from services.vocabulary import suturing_vocabulary
from utils import (
    atomic_write_text, format_duration, format_per_class, format_table, generate_csv_report, new_run_id,
    read_key_value_file, render_key_value,
)


# =====================
# Training configuration
# =====================
def test_defaults_round_trip_through_the_form():
    assert load_train_config() == TrainConfig()


def test_file_then_flags(tmp_path):
    path = tmp_path / "train.cfg"
    path.write_text("# tiny run\nepochs = 3\ninitial_lr = 1e-3  # faster\naugment = false\narch = resnet2d\n")
    config = load_train_config(path, epochs=5, width=None)
    assert config.epochs == 5
    assert config.initial_lr == pytest.approx(1e-3)
    assert config.augment is False
    assert config.arch == "resnet2d"
    assert config.width == 64


def test_rendered_config_reads_back(tmp_path):
    config = TrainConfig(epochs=7, hflip=True, init_mode="inflate", pretrained_path="")
    path = tmp_path / "config.txt"
    path.write_text(render_key_value(config.as_dict()))
    assert load_train_config(path) == config


def test_unknown_key(tmp_path):
    path = tmp_path / "train.cfg"
    path.write_text("epoch = 3\n")
    with pytest.raises(ConfigError) as info:
        load_train_config(path)
    assert "epoch" in info.value.field_errors


@pytest.mark.parametrize("overrides, field", [
    ({"epochs": "many"}, "epochs"),
    ({"batch_size": 0}, "batch_size"),
    ({"init_mode": "magic"}, "init_mode"),
    ({"input_size": 300}, "input_size"),
    ({"shortcut": "C"}, "shortcut"),
])
def test_invalid_values(overrides, field):
    with pytest.raises(ConfigError) as info:
        load_train_config(**overrides)
    assert field in info.value.field_errors


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigError):
        load_train_config(tmp_path / "absent.cfg")


def test_line_without_assignment(tmp_path):
    path = tmp_path / "train.cfg"
    path.write_text("epochs 3\n")
    with pytest.raises(ConfigError):
        read_key_value_file(path)


def test_synth_spec_form():
    assert load_synth_spec() == SynthSpec()
    assert load_synth_spec(num_classes=3, seed=9) == SynthSpec(num_classes=3, seed=9)
    with pytest.raises(ConfigError):
        load_synth_spec(num_classes=40)


def test_settings_from_environment():
    settings = load_settings({"GESTURE_DATA_ROOT": "/data/jigsaws", "GESTURE_LOG_LEVEL": "debug",
                              "GESTURE_FRAME_CACHE": "0"})
    assert settings.data_root == Path("/data/jigsaws")
    assert settings.runs_root == Path("runs")
    assert settings.device == "auto"
    assert settings.log_level == "DEBUG"
    assert settings.frame_cache_size == 0


# =====================
# Utilities
# =====================
def test_run_ids_are_safe_and_unique():
    first, second = new_run_id("train 3d/random"), new_run_id("train 3d/random")
    assert first != second
    assert "/" not in first and " " not in first
    assert first.startswith("train_3d_random-")


def test_atomic_write(tmp_path):
    path = atomic_write_text(tmp_path / "out" / "table.txt", "hello\n")
    assert path.read_text() == "hello\n"
    assert [p.name for p in path.parent.iterdir()] == ["table.txt"]


def test_format_duration():
    assert format_duration(3725.9) == "1:02:05"


def _report():
    videos = [VideoMetrics("Suturing_B001", 80.0, 70.0, 60.0, 50.0, {0: 90.0}, fold="B"),
              VideoMetrics("Suturing_C001", 90.0, 80.0, 70.0, 60.0, {0: 70.0, 5: 40.0}, fold="C")]
    return aggregate_report(videos)


def test_text_table():
    table = format_table([("3D CNN (R)", 15, 5, _report())], title="LOUO")
    lines = table.splitlines()
    assert lines[0] == "LOUO"
    assert "F1@10" in lines[2]
    assert lines[-1].startswith("3D CNN (R)")
    assert lines[-1].split()[-4:] == ["85.0", "75.0", "65.0", "55.0"]


def test_csv_report():
    rows = list(csv.reader(io.StringIO(generate_csv_report([("2D ResNet-18", "-", 5, _report())]))))
    assert rows[0] == ["method", "look_ahead", "fps", "fold", "video", "accuracy", "average_f1", "edit_score",
                       "f1_at_10"]
    assert [r[3] for r in rows[1:]] == ["B", "C", "mean"]
    assert rows[-1][5:] == ["85.0000", "75.0000", "65.0000", "55.0000"]


def test_per_class_table():
    text = format_per_class(_report(), suturing_vocabulary())
    assert "G1" in text and "G6" in text
    assert "80.0" in text and "40.0" in text
