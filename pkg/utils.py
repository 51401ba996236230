from datetime import datetime
import csv
import io
import os
from pathlib import Path
from uuid import uuid4

from werkzeug.utils import secure_filename

from services.errors import ConfigError


# =====================
# FILE UTILITIES
# =====================
def atomic_write_text(path, text):
    """Write via a temp file and rename so readers never see partial reports."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(f".{path.name}.{uuid4().hex[:8]}.tmp")
    tmp.write_text(text)
    os.replace(tmp, path)
    return path


def atomic_write_bytes(path, data):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(f".{path.name}.{uuid4().hex[:8]}.tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)
    return path


def new_run_id(name="run"):
    """Unique, filesystem-safe run id: <name>-<timestamp>-<random>."""
    stamp = datetime.now().strftime("%Y%m%d-%H%M%S")
    return secure_filename(f"{name}-{stamp}-{uuid4().hex[:6]}")


# =====================
# KEY=VALUE CONFIG FILES
# =====================
def read_key_value_file(path):
    """Yield (key, value) pairs from 'key = value' lines; '#' starts a comment."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"Configuration file {path} not found")
    pairs = []
    for lineno, raw in enumerate(path.read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        pairs.append((key, value))
    return pairs


def render_key_value(mapping):
    return "".join(f"{key} = {value}\n" for key, value in mapping.items())


# =====================
# METRIC REPORTS
# =====================
MEASURE_HEADERS = [("accuracy", "Acc"), ("average_f1", "Avg. F1"), ("edit_score", "Edit"), ("f1_at_10", "F1@10")]


def format_table(rows, title=None):
    """Human-readable table; rows are (method, look_ahead, fps, MetricsReport)."""
    header = f"{'Method':<28}{'Look ahead':>11}{'fps':>5}" + "".join(f"{h:>9}" for _, h in MEASURE_HEADERS)
    lines = [title, "=" * len(header)] if title else []
    lines += [header, "-" * len(header)]
    for method, look_ahead, fps, report in rows:
        values = "".join(f"{getattr(report, m):>9.1f}" for m, _ in MEASURE_HEADERS)
        lines.append(f"{method:<28}{look_ahead:>11}{fps:>5}{values}")
    return "\n".join(lines) + "\n"


def generate_csv_report(rows):
    """CSV with one row per (fold, video) and a mean row per method; rows as in format_table."""
    output = io.StringIO()
    writer = csv.writer(output)
    writer.writerow(["method", "look_ahead", "fps", "fold", "video"] + [m for m, _ in MEASURE_HEADERS])
    for method, look_ahead, fps, report in rows:
        for video in report.per_video:
            writer.writerow([method, look_ahead, fps, video.fold, video.video_id]
                            + [f"{getattr(video, m):.4f}" for m, _ in MEASURE_HEADERS])
        writer.writerow([method, look_ahead, fps, "mean", "mean"]
                        + [f"{getattr(report, m):.4f}" for m, _ in MEASURE_HEADERS])
    output.seek(0)
    return output.read()


def format_per_class(report, vocab):
    lines = [f"{'Gesture':<8}{'F1':>8}  Description"]
    for index, value in sorted(report.per_class_f1.items()):
        entry = vocab.entries[index]
        lines.append(f"{entry.gesture_id:<8}{value:>8.1f}  {entry.display_name}")
    return "\n".join(lines) + "\n"


def format_duration(seconds):
    minutes, secs = divmod(int(seconds), 60)
    hours, minutes = divmod(minutes, 60)
    return f"{hours:d}:{minutes:02d}:{secs:02d}"
