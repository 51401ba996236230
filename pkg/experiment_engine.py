"""Cross-validation runs, look-ahead sweeps and latency benchmarks."""
import json
import logging
import time
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from pdf_generator import generate_metrics_report
from services.config import SNIPPET_LENGTH, TrainConfig, resolve_device
from services.data import build_louo_folds
from services.errors import ConfigError, EmptyInput, MissingDump
from services.inference import full_window, label_track, load_score_dump, predict_video, save_score_dump
from services.metrics import aggregate_report, evaluate_video, mean_of_reports
from services.training import initial_model, train
from utils import atomic_write_bytes, atomic_write_text, format_per_class, format_table, generate_csv_report

logger = logging.getLogger(__name__)

METHOD_NAMES = {"random": "3D CNN (R)", "inflate": "3D CNN (B)", "external": "3D CNN (K)"}
BASELINE_NAME = "2D ResNet-18"
WINDOW_SUFFIX = " + window"
NO_LOOK_AHEAD = "-"


@dataclass
class ExperimentRecord:
    run_id: str
    config: TrainConfig
    folds: list = field(default_factory=list)
    seeds: list = field(default_factory=list)
    checkpoints: list = field(default_factory=list)
    reports: list = field(default_factory=list)
    report_paths: list = field(default_factory=list)
    wall_times: dict = field(default_factory=dict)

    def write(self, run_dir):
        return atomic_write_text(Path(run_dir) / "experiment.json",
                                 json.dumps(asdict(self), indent=2, default=str) + "\n")


# =====================
# SCORING
# =====================
def score_stream(stream, ground_truth, look_ahead=None, tau=0.10, overlap="iou", fold=""):
    track = label_track(stream, look_ahead)
    return evaluate_video(track.final_labels, ground_truth, stream.video_id, tau, overlap, fold)


def predict_fold(model, fold, collection, config, dump_dir, eval_rates=(5,), progress=False):
    """Run the model over the fold's test videos; dumps scores and returns {fps: [(stream, gt)]}."""
    model.to(resolve_device(config.device))
    streams = defaultdict(list)
    for fps in eval_rates:
        for video_id in fold.test_videos:
            labels = collection.labels(video_id, fps)
            stream = predict_video(model, collection.record(video_id), labels, fps, config.batch_size,
                                   config.load_size, config.input_size, progress)
            ground_truth = labels.labels[labels.region]
            save_score_dump(Path(dump_dir) / f"{fps}fps" / f"{video_id}.npz", stream, ground_truth)
            streams[fps].append((stream, ground_truth))
    return streams


def evaluate_dumps(dump_paths, look_ahead=None, tau=0.10, overlap="iou"):
    per_video = []
    for path in dump_paths:
        stream, ground_truth = load_score_dump(path)
        k = None if look_ahead is None else min(look_ahead, full_window(stream))
        per_video.append(score_stream(stream, ground_truth, k, tau, overlap))
    return aggregate_report(per_video)


# =====================
# CROSS-VALIDATION
# =====================
def _train_and_predict(config, fold, collection, out_dir, record, eval_rates, model2d=None, progress=False):
    started = time.perf_counter()
    model = initial_model(config, len(collection.vocab), model2d)
    model, log = train(config, fold, collection, model, out_dir, progress)
    streams = predict_fold(model, fold, collection, config, Path(out_dir) / "dumps", eval_rates, progress)
    record.checkpoints.extend(log.checkpoints)
    record.wall_times["/".join(Path(out_dir).parts[-3:])] = time.perf_counter() - started
    return model, streams


def run_crossval(config, collection, run_dir, repetitions=1, eval_rates=(5,), with_baseline=False,
                 tau=0.10, overlap="iou", progress=False):
    """LOUO cross-validation repeated `repetitions` times.

    Returns (rows, record); rows are (method, look_ahead, fps, MetricsReport) averaged over videos,
    then over repetitions. init_mode=inflate always trains the 2D baseline of the same fold and repetition.
    """
    if repetitions < 1:
        raise ConfigError(f"repetitions must be positive, got {repetitions}")
    run_dir = Path(run_dir)
    folds = build_louo_folds(collection.records.values())
    with_baseline = with_baseline or config.init_mode == "inflate"
    method = METHOD_NAMES[config.init_mode]
    record = ExperimentRecord(run_dir.name, config, [f.held_out_subject for f in folds])
    logger.info("Cross-validating %s over %d folds x %d repetitions", method, len(folds), repetitions)

    per_repetition = defaultdict(list)
    for rep in range(repetitions):
        rep_config = config.with_overrides(seed=config.seed + rep)
        record.seeds.append(rep_config.seed)
        per_video = defaultdict(list)
        for fold in folds:
            fold_dir = run_dir / f"rep{rep}" / f"fold_{fold.held_out_subject}"
            model2d = None
            if with_baseline:
                config2d = rep_config.with_overrides(arch="resnet2d", init_mode="random")
                model2d, streams = _train_and_predict(config2d, fold, collection, fold_dir / "resnet2d", record,
                                                      eval_rates, progress=progress)
                for fps, pairs in streams.items():
                    for stream, gt in pairs:
                        per_video[(BASELINE_NAME, NO_LOOK_AHEAD, fps)].append(
                            score_stream(stream, gt, None, tau, overlap, fold.held_out_subject))

            config3d = rep_config.with_overrides(arch="dense3d")
            _, streams = _train_and_predict(config3d, fold, collection, fold_dir / "dense3d", record, eval_rates,
                                            model2d, progress)
            for fps, pairs in streams.items():
                for stream, gt in pairs:
                    k = full_window(stream)
                    per_video[(method, NO_LOOK_AHEAD, fps)].append(
                        score_stream(stream, gt, None, tau, overlap, fold.held_out_subject))
                    per_video[(method + WINDOW_SUFFIX, k, fps)].append(
                        score_stream(stream, gt, k, tau, overlap, fold.held_out_subject))

        for key, videos in per_video.items():
            per_repetition[key].append(aggregate_report(videos))

    rows = [(name, k, fps, mean_of_reports(reports)) for (name, k, fps), reports in per_repetition.items()]
    record.reports = [{"method": name, "look_ahead": k, "fps": fps, **report.as_row()}
                      for name, k, fps, report in rows]
    record.write(run_dir)
    return rows, record


# =====================
# LOOK-AHEAD SWEEP
# =====================
def sweep_lookahead(dump_paths, k_list=None, tau=0.10, overlap="iou"):
    """Re-accumulate stored scores for every k; returns [(k, MetricsReport)]."""
    dump_paths = list(dump_paths)
    if not dump_paths:
        raise MissingDump("No score dumps to sweep")
    loaded = [load_score_dump(p) for p in dump_paths]
    rates = {stream.eval_fps for stream, _ in loaded}
    if len(rates) != 1:
        raise ConfigError(f"Score dumps mix evaluation rates {sorted(rates)}")
    max_k = min(full_window(stream) for stream, _ in loaded)
    k_list = list(range(SNIPPET_LENGTH) if k_list is None else k_list)
    if any(not 0 <= k <= max_k for k in k_list):
        raise ConfigError(f"Look-ahead values must lie in [0, {max_k}], got {k_list}")

    rows = []
    for k in k_list:
        rows.append((k, aggregate_report([score_stream(s, gt, k, tau, overlap) for s, gt in loaded])))
        logger.debug("look-ahead %d: accuracy %.2f", k, rows[-1][1].accuracy)
    return rows


# =====================
# LATENCY
# =====================
@dataclass
class BenchResult:
    arch: str
    batch: int
    n: int
    mean_ms: float
    std_ms: float
    output_shape: tuple


def _synchronize(device):
    if device.type == "cuda":
        torch.cuda.synchronize(device)


def benchmark(model, batch=1, n=2500, warmup=10, input_size=224, device="auto"):
    """Mean and standard deviation of n timed forward passes after `warmup` untimed ones."""
    if n < 1 or batch < 1:
        raise ConfigError("Benchmark needs n >= 1 and batch >= 1")
    device = resolve_device(device)
    model.to(device).eval()
    if model.meta.arch == "resnet2d":
        shape = (batch, 3, input_size, input_size)
    else:
        shape = (batch, 3, SNIPPET_LENGTH, input_size, input_size)
    x = torch.randn(shape, device=device)

    timings = []
    with torch.no_grad():
        for _ in range(warmup):
            model(x)
        for _ in range(n):
            _synchronize(device)
            started = time.perf_counter()
            out = model(x)
            _synchronize(device)
            timings.append(time.perf_counter() - started)
    timings = 1000.0 * np.asarray(timings)
    return BenchResult(model.meta.arch, batch, n, float(timings.mean()), float(timings.std()),
                       tuple(out.shape[1:]))


# =====================
# REPORT FILES
# =====================
def write_reports(rows, out_dir, title, vocab=None):
    """table.txt, metrics.csv and report.pdf for (method, look_ahead, fps, report) rows."""
    if not rows:
        raise EmptyInput("No report rows to write")
    out_dir = Path(out_dir)
    text = format_table(rows, title)
    if vocab is not None:
        for method, look_ahead, fps, report in rows:
            text += f"\n{method} (look ahead {look_ahead}, {fps} fps)\n" + format_per_class(report, vocab)
    paths = [
        atomic_write_text(out_dir / "table.txt", text),
        atomic_write_text(out_dir / "metrics.csv", generate_csv_report(rows)),
        atomic_write_bytes(out_dir / "report.pdf", generate_metrics_report(title, rows, vocab).getvalue()),
    ]
    return [str(p) for p in paths]
