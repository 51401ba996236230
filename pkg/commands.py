import logging
from pathlib import Path

import click

from experiment_engine import (
    ExperimentRecord, benchmark, evaluate_dumps, run_crossval, sweep_lookahead, write_reports,
)
from forms import load_synth_spec, load_train_config
from plotting import plot_legend, plot_lookahead_sweep, plot_ribbons
from services.config import ARCHITECTURES, INIT_MODES, resolve_device
from services.data import FoldSpec, VideoCollection, prepare_jigsaws
from services.errors import ConfigError, EmptyInput, MissingDump, UnknownVideo
from services.inference import (
    EVAL_RATES, label_track, load_score_dump, predict_video, read_label_file, save_score_dump, write_label_file,
)
from services.metrics import aggregate_report, evaluate_video
from services.middleware import exit_codes
from services.model import build_model, load_checkpoint, save_checkpoint
from services.synth import generate_dataset
from services.training import initial_model, train
from services.vocabulary import load_vocabulary, suturing_vocabulary, write_vocabulary
from utils import atomic_write_text, format_duration, format_table, new_run_id, render_key_value

logger = logging.getLogger(__name__)

# (flag, TrainConfig field, click type, help)
TRAIN_FLAGS = [
    ("--epochs", "epochs", int, "Training epochs."),
    ("--batch-size", "batch_size", int, "Snippets per optimisation step."),
    ("--lr", "initial_lr", float, "Initial Adam learning rate."),
    ("--lr-decay-every", "lr_decay_every", int, "Epochs between learning-rate decays."),
    ("--snippets-per-epoch", "snippets_per_epoch", int, "Class-balanced snippets drawn per epoch."),
    ("--seed", "seed", int, "Base random seed."),
    ("--init-mode", "init_mode", click.Choice(INIT_MODES), "3D initialisation."),
    ("--arch", "arch", click.Choice(ARCHITECTURES), "Network architecture."),
    ("--width", "width", int, "Base channel count (64 = ResNet-18)."),
    ("--load-size", "load_size", int, "Shorter frame side after loading."),
    ("--input-size", "input_size", int, "Crop side fed to the network."),
    ("--workers", "num_workers", int, "DataLoader worker processes."),
    ("--checkpoint-every", "checkpoint_every", int, "Epochs between checkpoints."),
    ("--shortcut", "shortcut", click.Choice(["A", "B"]), "Residual shortcut type."),
    ("--pretrained", "pretrained_path", str, "External checkpoint for init-mode external."),
    ("--device", "device", str, "auto, cpu or cuda[:n]; defaults to GESTURE_DEVICE."),
]
TRAIN_SWITCHES = [
    ("--augment/--no-augment", "augment", "Scale jitter and corner cropping."),
    ("--hflip/--no-hflip", "hflip", "Random horizontal flips."),
    ("--imagenet/--no-imagenet", "imagenet_pretrained", "ImageNet weights for the 2D baseline."),
]
TRAIN_FIELDS = [name for _, name, _, _ in TRAIN_FLAGS] + [name for _, name, _ in TRAIN_SWITCHES]

SYNTH_FLAGS = [
    ("--subjects", "n_subjects"), ("--videos-per-subject", "videos_per_subject"), ("--classes", "num_classes"),
    ("--segment-len", "mean_segment_len"), ("--jitter", "segment_jitter"), ("--cycles", "cycles"),
    ("--frame-size", "frame_size"), ("--object-size", "object_size"), ("--seed", "seed"),
]


# =====================
# Shared options
# =====================
def train_options(f):
    for flag, name, kind, help_text in reversed(TRAIN_FLAGS):
        f = click.option(flag, name, type=kind, default=None, help=help_text)(f)
    for flag, name, help_text in reversed(TRAIN_SWITCHES):
        f = click.option(flag, name, default=None, help=help_text)(f)
    return click.option("--config", "config_path", type=click.Path(dir_okay=False, path_type=Path),
                        default=None, help="key = value run configuration file.")(f)


def synth_options(f):
    for flag, name in reversed(SYNTH_FLAGS):
        f = click.option(flag, name, type=int, default=None)(f)
    return f


def dataset_options(f):
    f = click.option("--vocab", "vocab_path", type=click.Path(dir_okay=False, path_type=Path), default=None,
                     help="Vocabulary CSV; defaults to vocabulary.csv next to the manifest.")(f)
    return click.option("--manifest", type=click.Path(dir_okay=False, path_type=Path), default=None,
                        help="Dataset manifest; defaults to $GESTURE_DATA_ROOT/manifest.csv.")(f)


def _config(settings, config_path, options):
    overrides = {name: options.pop(name) for name in TRAIN_FIELDS}
    if overrides["device"] is None and settings.device != "auto":
        overrides["device"] = settings.device
    return load_train_config(config_path, **overrides)


def _vocabulary(manifest, vocab_path):
    if vocab_path is not None:
        return load_vocabulary(vocab_path)
    sibling = manifest.parent / "vocabulary.csv"
    return load_vocabulary(sibling) if sibling.is_file() else suturing_vocabulary()


def _collection(settings, manifest, vocab_path):
    manifest = manifest or settings.data_root / "manifest.csv"
    return VideoCollection.from_manifest(manifest, _vocabulary(manifest, vocab_path))


def _run_dir(settings, name, out):
    run_dir = Path(out) if out else settings.runs_root / new_run_id(name)
    run_dir.mkdir(parents=True, exist_ok=True)
    return run_dir


def _fold(collection, subject):
    """Fold holding out `subject`; all videos train when subject is None."""
    records = list(collection.records.values())
    if subject is None:
        return FoldSpec("none", [r.video_id for r in records], [])
    test = [r.video_id for r in records if r.subject_id == subject]
    if not test:
        raise UnknownVideo(f"No videos of subject '{subject}' in the manifest")
    return FoldSpec(subject, [r.video_id for r in records if r.subject_id != subject], test)


def _dump_paths(dumps):
    paths = sorted(Path(dumps).rglob("*.npz")) if Path(dumps).is_dir() else [Path(dumps)]
    if not paths or not paths[0].is_file():
        raise MissingDump(f"No score dumps under {dumps}")
    return paths


def _parse_k_list(text):
    values = []
    for part in text.split(","):
        lo, _, hi = part.partition("-")
        try:
            values.extend(range(int(lo), int(hi or lo) + 1))
        except ValueError:
            raise ConfigError(f"Cannot parse look-ahead list '{text}'") from None
    return values


# =====================
# Ingestion
# =====================
@click.command()
@click.option("--jigsaws-dir", required=True, type=click.Path(file_okay=False, path_type=Path),
              help="Unpacked JIGSAWS release (containing Suturing/).")
@click.option("--out", type=click.Path(file_okay=False, path_type=Path), default=None,
              help="Output dataset directory; defaults to $GESTURE_DATA_ROOT.")
@click.option("--keep-every", default=3, show_default=True, help="Keep every n-th native frame.")
@click.option("--capture", default="capture1", show_default=True, help="Camera stream to decode.")
@click.pass_obj
@exit_codes
def prepare(settings, jigsaws_dir, out, keep_every, capture):
    """Decode JIGSAWS suturing videos into frames and write a manifest."""
    out = out or settings.data_root
    vocab = suturing_vocabulary()
    records = prepare_jigsaws(jigsaws_dir, out, vocab, keep_every, capture)
    write_vocabulary(vocab, Path(out) / "vocabulary.csv")
    click.echo(f"Prepared {len(records)} videos in {out}")


@click.command()
@synth_options
@click.option("--config", "config_path", type=click.Path(dir_okay=False, path_type=Path), default=None,
              help="key = value dataset settings.")
@click.option("--out", type=click.Path(file_okay=False, path_type=Path), default=None,
              help="Output directory; defaults to $GESTURE_DATA_ROOT/synth.")
@click.option("--overwrite", is_flag=True, help="Replace a non-empty output directory.")
@click.pass_obj
@exit_codes
def synth(settings, config_path, out, overwrite, **flags):
    """Generate a synthetic gesture dataset in the manifest layout."""
    spec = load_synth_spec(config_path, **flags)
    manifest = generate_dataset(spec, out or settings.data_root / "synth", overwrite, progress=True)
    click.echo(f"Wrote {len(spec.video_ids())} videos; manifest {manifest}")


# =====================
# Training and prediction
# =====================
@click.command("train")
@dataset_options
@train_options
@click.option("--holdout", default=None, help="Subject to leave out; trains on every video when omitted.")
@click.option("--init-from", type=click.Path(dir_okay=False, path_type=Path), default=None,
              help="Trained 2D checkpoint to inflate (init-mode inflate).")
@click.option("--out", type=click.Path(file_okay=False, path_type=Path), default=None, help="Run directory.")
@click.pass_obj
@exit_codes
def train_command(settings, manifest, vocab_path, config_path, holdout, init_from, out, **options):
    """Train one model on the training videos of a fold."""
    config = _config(settings, config_path, options)
    collection = _collection(settings, manifest, vocab_path)
    fold = _fold(collection, holdout)
    run_dir = _run_dir(settings, f"train-{config.arch}", out)
    atomic_write_text(run_dir / "config.txt", render_key_value(config.as_dict()))

    model2d = load_checkpoint(init_from) if init_from else None
    model = initial_model(config, len(collection.vocab), model2d)
    record = ExperimentRecord(run_dir.name, config, [fold.held_out_subject], [config.seed])
    model, log = train(config, fold, collection, model, run_dir)
    final = save_checkpoint(model, run_dir / "model.pt")
    record.checkpoints = log.checkpoints + [str(final)]
    record.wall_times["train"] = sum(r.wall_time for r in log.epochs)
    record.write(run_dir)
    click.echo(f"Trained {config.arch} in {format_duration(record.wall_times['train'])}; checkpoint {final}")


@click.command()
@dataset_options
@click.option("--checkpoint", required=True, type=click.Path(dir_okay=False, path_type=Path))
@click.option("--video", "videos", multiple=True, help="Video id; repeatable.")
@click.option("--holdout", default=None, help="Predict every video of this subject.")
@click.option("--eval-fps", type=click.Choice([str(r) for r in EVAL_RATES]), default="5", show_default=True,
              help="Evaluation rate in Hz.")
@click.option("--look-ahead", type=int, default=None, help="Sliding-window look-ahead; snippet-wise when omitted.")
@click.option("--batch-size", default=16, show_default=True)
@click.option("--load-size", default=256, show_default=True)
@click.option("--input-size", default=224, show_default=True)
@click.option("--out", type=click.Path(file_okay=False, path_type=Path), default=None)
@click.pass_obj
@exit_codes
def predict(settings, manifest, vocab_path, checkpoint, videos, holdout, eval_fps, look_ahead, batch_size,
            load_size, input_size, out):
    """Write per-frame label files and score dumps for the given videos."""
    collection = _collection(settings, manifest, vocab_path)
    videos = list(videos) + (_fold(collection, holdout).test_videos if holdout else [])
    if not videos:
        raise EmptyInput("Name at least one --video or a --holdout subject")
    model = load_checkpoint(checkpoint)
    model.to(resolve_device(settings.device))
    run_dir = _run_dir(settings, "predict", out)
    fps = int(eval_fps)
    for video_id in videos:
        labels = collection.labels(video_id, fps)
        stream = predict_video(model, collection.record(video_id), labels, fps, batch_size, load_size,
                               input_size, progress=True)
        save_score_dump(run_dir / f"{video_id}.npz", stream, labels.labels[labels.region])
        track = label_track(stream, look_ahead)
        write_label_file(run_dir / f"{video_id}.txt", track.final_labels, collection.vocab)
    click.echo(f"Predicted {len(videos)} videos into {run_dir}")


# =====================
# Evaluation
# =====================
@click.command()
@dataset_options
@click.option("--dumps", type=click.Path(path_type=Path), default=None, help="Score dump file or directory.")
@click.option("--labels", "labels_dir", type=click.Path(file_okay=False, path_type=Path), default=None,
              help="Directory of <video_id>.txt label files, scored against the manifest.")
@click.option("--eval-fps", type=click.Choice([str(r) for r in EVAL_RATES]), default="5", show_default=True,
              help="Rate of the label files; dumps carry their own.")
@click.option("--look-ahead", type=int, default=None, help="Re-accumulate dumps with this look-ahead.")
@click.option("--tau", default=0.10, show_default=True, help="Segmental F1 overlap threshold.")
@click.option("--overlap", type=click.Choice(["iou", "gt"]), default="iou", show_default=True)
@click.option("--name", default="prediction", show_default=True, help="Method name in the report.")
@click.option("--out", type=click.Path(file_okay=False, path_type=Path), default=None)
@click.pass_obj
@exit_codes
def evaluate(settings, manifest, vocab_path, dumps, labels_dir, eval_fps, look_ahead, tau, overlap, name, out):
    """Score dumps or label files; writes table, CSV and PDF reports."""
    fps = int(eval_fps)
    if dumps is not None:
        fps = _dump_rate(dumps)
        vocab = _vocabulary(manifest, vocab_path) if manifest or vocab_path else None
        report = evaluate_dumps(_dump_paths(dumps), look_ahead, tau, overlap)
    elif labels_dir is not None:
        collection = _collection(settings, manifest, vocab_path)
        vocab = collection.vocab
        per_video = []
        for path in sorted(labels_dir.glob("*.txt")):
            labels = collection.labels(path.stem, fps)
            per_video.append(evaluate_video(read_label_file(path, vocab), labels.region_labels(), path.stem,
                                            tau, overlap))
        report = aggregate_report(per_video)
    else:
        raise ConfigError("Pass --dumps or --labels")

    rows = [(name, "-" if look_ahead is None else look_ahead, fps, report)]
    run_dir = _run_dir(settings, "evaluate", out)
    write_reports(rows, run_dir, f"Evaluation of {name}", vocab)
    click.echo(format_table(rows))


@click.command()
@dataset_options
@train_options
@click.option("--repetitions", default=1, show_default=True, help="Independent repetitions of every fold.")
@click.option("--eval-fps", "eval_rates", type=click.Choice([str(r) for r in EVAL_RATES]), multiple=True,
              default=("5",), show_default=True)
@click.option("--baseline/--no-baseline", default=False, help="Also train and score the 2D baseline.")
@click.option("--tau", default=0.10, show_default=True)
@click.option("--overlap", type=click.Choice(["iou", "gt"]), default="iou", show_default=True)
@click.option("--out", type=click.Path(file_okay=False, path_type=Path), default=None)
@click.pass_obj
@exit_codes
def crossval(settings, manifest, vocab_path, config_path, repetitions, eval_rates, baseline, tau, overlap, out,
             **options):
    """Leave-one-user-out cross-validation with averaged reports."""
    config = _config(settings, config_path, options)
    collection = _collection(settings, manifest, vocab_path)
    run_dir = _run_dir(settings, f"crossval-{config.init_mode}", out)
    atomic_write_text(run_dir / "config.txt", render_key_value(config.as_dict()))
    rows, record = run_crossval(config, collection, run_dir, repetitions, tuple(int(r) for r in eval_rates),
                                baseline, tau, overlap, progress=True)
    record.report_paths = write_reports(rows, run_dir, f"LOUO cross-validation ({repetitions} repetitions)",
                                        collection.vocab)
    record.write(run_dir)
    click.echo(format_table(rows))


@click.command()
@click.option("--dumps", required=True, type=click.Path(path_type=Path), help="Score dump file or directory.")
@click.option("--k", "k_text", default="0-15", show_default=True, help="Look-ahead values, e.g. 0-15 or 0,5,15.")
@click.option("--tau", default=0.10, show_default=True)
@click.option("--overlap", type=click.Choice(["iou", "gt"]), default="iou", show_default=True)
@click.option("--out", type=click.Path(file_okay=False, path_type=Path), default=None)
@click.pass_obj
@exit_codes
def sweep(settings, dumps, k_text, tau, overlap, out):
    """Re-score stored predictions for a range of look-ahead values."""
    table = sweep_lookahead(_dump_paths(dumps), _parse_k_list(k_text), tau, overlap)
    fps = _dump_rate(dumps)
    rows = [("sliding window", k, fps, report) for k, report in table]
    run_dir = _run_dir(settings, "sweep", out)
    write_reports(rows, run_dir, "Look-ahead sweep")
    plot_lookahead_sweep(table, run_dir / "lookahead.png", fps)
    click.echo(format_table(rows))


def _dump_rate(dumps):
    rates = {load_score_dump(path)[0].eval_fps for path in _dump_paths(dumps)}
    if len(rates) != 1:
        raise ConfigError(f"Score dumps mix evaluation rates {sorted(rates)}")
    return rates.pop()


@click.command()
@click.option("--arch", type=click.Choice(ARCHITECTURES), default="dense3d", show_default=True)
@click.option("--checkpoint", type=click.Path(dir_okay=False, path_type=Path), default=None,
              help="Benchmark a trained model instead of a fresh one.")
@click.option("--classes", default=10, show_default=True)
@click.option("--width", default=64, show_default=True)
@click.option("--batch", default=1, show_default=True)
@click.option("-n", "n", default=2500, show_default=True, help="Timed forward passes.")
@click.option("--warmup", default=10, show_default=True)
@click.option("--input-size", default=224, show_default=True)
@click.option("--device", default=None, help="Defaults to GESTURE_DEVICE.")
@click.pass_obj
@exit_codes
def bench(settings, arch, checkpoint, classes, width, batch, n, warmup, input_size, device):
    """Time forward passes of a model."""
    model = load_checkpoint(checkpoint) if checkpoint else build_model(arch, classes, width)
    result = benchmark(model, batch, n, warmup, input_size, device or settings.device)
    click.echo(f"{result.arch}: batch {result.batch}, output {' x '.join(map(str, result.output_shape))}, "
               f"{result.mean_ms:.2f} ± {result.std_ms:.2f} ms over {result.n} passes")


@click.command()
@click.option("--gt", "gt_path", required=True, type=click.Path(dir_okay=False, path_type=Path),
              help="Ground-truth label file.")
@click.option("--pred", "preds", multiple=True, help="Prediction label file, optionally NAME=FILE; repeatable.")
@click.option("--vocab", "vocab_path", type=click.Path(dir_okay=False, path_type=Path), default=None)
@click.option("--title", default=None)
@click.option("--out", required=True, type=click.Path(dir_okay=False, path_type=Path), help="Image file.")
@click.option("--legend-out", type=click.Path(dir_okay=False, path_type=Path), default=None,
              help="Also render the gesture legend on its own.")
@click.pass_obj
@exit_codes
def plot(settings, gt_path, preds, vocab_path, title, out, legend_out):
    """Render ground truth and predictions as color ribbons."""
    vocab = load_vocabulary(vocab_path) if vocab_path else suturing_vocabulary()
    rows = [("ground truth", read_label_file(gt_path, vocab))]
    for entry in preds:
        name, _, path = entry.rpartition("=")
        rows.append((name or Path(path).stem, read_label_file(path, vocab)))
    plot_ribbons(rows, vocab, out, title)
    if legend_out:
        plot_legend(vocab, legend_out)
    click.echo(f"Wrote {out}")


def register_commands(cli):
    for command in (prepare, synth, train_command, predict, evaluate, crossval, sweep, bench, plot):
        cli.add_command(command)
