"""Video ingestion: transcripts, label sequences, LOUO folds, snippets and sampling."""
import csv
import logging
import os
import re
import shutil
import warnings
from dataclasses import dataclass
from fractions import Fraction
from functools import cached_property, lru_cache
from pathlib import Path

import numpy as np
import torch
import torchvision.transforms.functional as TF
from PIL import Image
from sklearn.model_selection import LeaveOneGroupOut
from torch.utils.data import Dataset

from .config import DEFAULT_FRAME_CACHE, NATIVE_FPS, NORMALIZE_MEAN, NORMALIZE_STD, SNIPPET_LENGTH, WORKING_FPS
from .errors import (
    AnchorOutOfRange, ClassAbsent, ConfigError, DataError, EmptyTrainSet, EmptyTranscript, IOFailure,
    MalformedLine, OverlappingSegments, RateMismatch, SingleSubject, UnknownVideo,
)

logger = logging.getLogger(__name__)

UNLABELED = -1

# fractions of the smaller frame side
JITTER_SCALES = (1.0, 0.875, 0.75, 0.66)
CROP_POSITIONS = ("top_left", "top_right", "bottom_left", "bottom_right", "center")


# =====================
# DOMAIN TYPES
# =====================
@dataclass(frozen=True)
class VideoRecord:
    video_id: str
    subject_id: str
    frame_count_native: int
    native_fps: Fraction
    frame_source: Path
    transcript_path: Path = None
    frame_ext: str = "png"

    def __post_init__(self):
        if self.frame_count_native <= 0:
            raise DataError(f"Video {self.video_id}: frame count must be positive")
        if Fraction(self.native_fps) <= 0:
            raise DataError(f"Video {self.video_id}: fps must be positive")

    def frame_path(self, native_index):
        return Path(self.frame_source) / f"{native_index:06d}.{self.frame_ext}"


@dataclass
class LabelSequence:
    video_id: str
    fps: Fraction
    labels: np.ndarray
    labeled_start: int
    labeled_end: int
    stride: int = 1

    def __len__(self):
        return len(self.labels)

    @property
    def region(self):
        return np.arange(self.labeled_start, self.labeled_end + 1)

    def region_labels(self):
        return self.labels[self.labeled_start:self.labeled_end + 1]

    @cached_property
    def filled(self):
        """Labels with intra-region gaps forward-filled from the last labeled frame."""
        filled = self.labels.copy()
        for t in range(self.labeled_start + 1, self.labeled_end + 1):
            if filled[t] == UNLABELED:
                filled[t] = filled[t - 1]
        return filled


@dataclass
class Snippet:
    frames: torch.Tensor  # (L, 3, H, W), oldest first
    labels: torch.Tensor  # (L,)
    anchor_t: int


@dataclass(frozen=True)
class FoldSpec:
    held_out_subject: str
    train_videos: list
    test_videos: list


# =====================
# TRANSCRIPTS AND LABELS
# =====================
def parse_transcript(text, vocab):
    """Parse JIGSAWS 'start end Gk' lines into sorted (start, end, class) triples."""
    segments = []
    for lineno, line in enumerate(text.splitlines(), 1):
        parts = line.split()
        if not parts:
            continue
        if len(parts) != 3:
            raise MalformedLine(f"line {lineno}: expected 'start end gesture', got {line.strip()!r}")
        try:
            start, end = int(parts[0]), int(parts[1])
        except ValueError:
            raise MalformedLine(f"line {lineno}: non-integer frame bounds in {line.strip()!r}") from None
        if start < 0 or end < start:
            raise MalformedLine(f"line {lineno}: invalid interval [{start}, {end}]")
        segments.append((start, end, vocab.index_of(parts[2])))

    segments.sort(key=lambda s: s[0])
    for prev, cur in zip(segments, segments[1:]):
        if cur[0] <= prev[1]:
            raise OverlappingSegments(f"segment starting at {cur[0]} overlaps segment ending at {prev[1]}")
    return segments


def render_transcript(segments, vocab):
    return "".join(f"{start} {end} {vocab.gesture_id(cls)}\n" for start, end, cls in segments)


def frame_stride(native_fps, working_fps):
    stride = Fraction(native_fps) / Fraction(working_fps)
    if stride.denominator != 1 or stride < 1:
        raise RateMismatch(f"{working_fps} fps does not evenly divide native {native_fps} fps")
    return int(stride)


def build_label_sequence(segments, frame_count_native, native_fps=NATIVE_FPS, working_fps=WORKING_FPS,
                         video_id=""):
    """Sample segment labels at the working rate, starting at native frame 0."""
    stride = frame_stride(native_fps, working_fps)
    if not segments:
        raise EmptyTranscript(f"Video {video_id or '?'} has an empty transcript")

    count = -(-frame_count_native // stride)
    native = np.arange(count) * stride
    labels = np.full(count, UNLABELED, dtype=np.int64)
    for start, end, cls in segments:
        labels[(native >= start) & (native <= end)] = cls

    labeled = np.flatnonzero(labels != UNLABELED)
    if labeled.size == 0:
        raise EmptyTranscript(f"Video {video_id or '?'}: no {working_fps} fps frame falls inside a segment")
    return LabelSequence(video_id, Fraction(working_fps), labels, int(labeled[0]), int(labeled[-1]), stride)


# =====================
# MANIFEST
# =====================
MANIFEST_FIELDS = ["video_id", "subject_id", "frame_count", "fps", "transcript", "frames", "frame_ext"]


def _resolve(base, value):
    if not value:
        return None
    path = Path(value)
    return path if path.is_absolute() else base / path


def load_manifest(path):
    path = Path(path)
    if not path.is_file():
        raise IOFailure(f"Manifest {path} not found")
    base = path.parent
    records = []
    with path.open(newline="") as fh:
        for row in csv.DictReader(fh):
            try:
                records.append(VideoRecord(
                    video_id=row["video_id"],
                    subject_id=row["subject_id"],
                    frame_count_native=int(row["frame_count"]),
                    native_fps=Fraction(row["fps"]),
                    frame_source=_resolve(base, row["frames"]),
                    transcript_path=_resolve(base, row.get("transcript")),
                    frame_ext=row.get("frame_ext") or "png",
                ))
            except (KeyError, ValueError) as e:
                raise DataError(f"Malformed manifest row in {path}: {row} ({e})") from e
    return records


def write_manifest(records, path):
    path = Path(path)
    base = path.parent

    def rel(p):
        if p is None:
            return ""
        p = Path(p)
        try:
            return p.relative_to(base).as_posix()
        except ValueError:
            return str(p)

    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(MANIFEST_FIELDS)
        for r in records:
            writer.writerow([r.video_id, r.subject_id, r.frame_count_native, str(r.native_fps),
                             rel(r.transcript_path), rel(r.frame_source), r.frame_ext])


class VideoCollection:
    """Records of one manifest with their parsed transcripts; label sequences built on demand."""

    def __init__(self, records, vocab):
        self.records = {r.video_id: r for r in records}
        self.vocab = vocab
        self._segments = {}
        self._labels = {}

    @classmethod
    def from_manifest(cls, path, vocab):
        return cls(load_manifest(path), vocab)

    def __len__(self):
        return len(self.records)

    def record(self, video_id):
        try:
            return self.records[video_id]
        except KeyError:
            raise UnknownVideo(f"Video '{video_id}' is not in the manifest") from None

    def segments(self, video_id):
        if video_id not in self._segments:
            record = self.record(video_id)
            if record.transcript_path is None or not Path(record.transcript_path).is_file():
                raise IOFailure(f"Transcript for {video_id} not found")
            text = Path(record.transcript_path).read_text()
            self._segments[video_id] = parse_transcript(text, self.vocab)
        return self._segments[video_id]

    def labels(self, video_id, fps=WORKING_FPS):
        key = (video_id, fps)
        if key not in self._labels:
            record = self.record(video_id)
            self._labels[key] = build_label_sequence(
                self.segments(video_id), record.frame_count_native, record.native_fps, fps, video_id)
        return self._labels[key]

    def items(self, video_ids, fps=WORKING_FPS):
        return [(self.record(v), self.labels(v, fps)) for v in video_ids]


# =====================
# LOUO FOLDS
# =====================
def build_louo_folds(records):
    """One fold per subject; the held-out subject owns every test video."""
    records = list(records)
    subjects = [r.subject_id for r in records]
    if len(set(subjects)) < 2:
        raise SingleSubject(f"LOUO needs at least two subjects, got {sorted(set(subjects))}")

    folds = []
    splitter = LeaveOneGroupOut()
    for train_idx, test_idx in splitter.split(np.zeros(len(records)), groups=subjects):
        folds.append(FoldSpec(
            held_out_subject=subjects[test_idx[0]],
            train_videos=[records[i].video_id for i in train_idx],
            test_videos=[records[i].video_id for i in test_idx],
        ))
    return folds


# =====================
# FRAMES AND SNIPPETS
# =====================
def _decode_frame(path, mtime_ns, load_size):
    try:
        with Image.open(path) as img:
            img = img.convert("RGB")
            w, h = img.size
            if min(w, h) != load_size:
                scale = load_size / min(w, h)
                img = img.resize((round(w * scale), round(h * scale)), Image.Resampling.BILINEAR)
            return TF.pil_to_tensor(img)
    except OSError as e:
        raise IOFailure(f"Cannot read frame {path}: {e}") from e


_cached_decode = lru_cache(maxsize=DEFAULT_FRAME_CACHE)(_decode_frame)


def configure_frame_cache(maxsize):
    """Replace the decoded-frame cache with an empty one holding at most `maxsize` frames (0 disables it)."""
    global _cached_decode
    if maxsize < 0:
        raise ConfigError(f"Frame cache size must be >= 0, got {maxsize}")
    _cached_decode = lru_cache(maxsize=maxsize)(_decode_frame)


def frame_cache_info():
    return _cached_decode.cache_info()


def load_frame(path, load_size):
    """Load one RGB frame as a uint8 (3, H, W) tensor, shorter side resized to load_size.

    Decoded frames are cached per (path, modification time), so a rewritten file is decoded again.
    """
    try:
        mtime_ns = os.stat(path).st_mtime_ns
    except OSError as e:
        raise IOFailure(f"Cannot read frame {path}: {e}") from e
    return _cached_decode(str(path), mtime_ns, load_size)


def snippet_native_indices(anchor_native, first_native, length=SNIPPET_LENGTH, stride=6):
    """Native frame numbers of a snippet ending at anchor_native, clamped to the first labeled frame."""
    idx = anchor_native - stride * np.arange(length - 1, -1, -1)
    return np.maximum(idx, first_native)


def load_frames(video, native_indices, load_size):
    return torch.stack([load_frame(str(video.frame_path(int(n))), load_size) for n in native_indices])


def extract_snippet(video, labels, anchor_t, length=SNIPPET_LENGTH, load_size=256):
    """Frames v_{t-L+1}..v_t and their labels; positions before the labeled region replicate its first frame."""
    if not labels.labeled_start <= anchor_t <= labels.labeled_end:
        raise AnchorOutOfRange(
            f"Anchor {anchor_t} outside labeled region [{labels.labeled_start}, {labels.labeled_end}] "
            f"of {labels.video_id}")
    steps = np.maximum(np.arange(anchor_t - length + 1, anchor_t + 1), labels.labeled_start)
    frames = load_frames(video, steps * labels.stride, load_size)
    return Snippet(frames, torch.as_tensor(labels.filled[steps], dtype=torch.long), anchor_t)


# =====================
# AUGMENTATION
# =====================
@dataclass(frozen=True)
class AugmentParams:
    scale: float = 1.0
    position: str = "center"
    flip: bool = False


def draw_augmentation(rng, scales=JITTER_SCALES, flip=False):
    """Draw one set of geometric parameters for a whole snippet."""
    scale = float(scales[rng.integers(len(scales))])
    position = CROP_POSITIONS[rng.integers(len(CROP_POSITIONS))]
    return AugmentParams(scale, position, flip and bool(rng.integers(2)))


def crop_box(height, width, scale, position):
    """(top, left, side) of a square crop of scale x the smaller side."""
    side = int(scale * min(height, width))
    if position == "center":
        return (height - side) // 2, (width - side) // 2, side
    top = 0 if position.startswith("top") else height - side
    left = 0 if position.endswith("left") else width - side
    return top, left, side


def apply_augmentation(snippet, params, output_size=224):
    frames = snippet.frames.float().div(255.0) if snippet.frames.dtype == torch.uint8 else snippet.frames
    top, left, side = crop_box(frames.shape[-2], frames.shape[-1], params.scale, params.position)
    out = TF.resized_crop(frames, top, left, side, side, [output_size, output_size], antialias=True)
    if params.flip:
        out = TF.hflip(out)
    return Snippet(out, snippet.labels, snippet.anchor_t)


def augment_snippet(snippet, rng, enabled=True, output_size=224, scales=JITTER_SCALES, flip=False):
    """Scale jitter + corner crop, drawn once and applied to all frames; center crop when disabled."""
    params = draw_augmentation(rng, scales, flip) if enabled else AugmentParams()
    return apply_augmentation(snippet, params, output_size)


def to_model_input(snippet, mean=NORMALIZE_MEAN, std=NORMALIZE_STD):
    """(L, 3, S, S) in [0, 1] -> normalised (3, L, S, S)."""
    frames = TF.normalize(snippet.frames, mean, std)
    return frames.permute(1, 0, 2, 3).contiguous()


# =====================
# CLASS-BALANCED SAMPLING
# =====================
def split_quota(total, parts):
    """floor(total/parts) each, remainder to the first entries."""
    base, remainder = divmod(total, parts)
    return [base + (1 if i < remainder else 0) for i in range(parts)]


def anchor_pools(fold_train, num_classes):
    pools = {g: [] for g in range(num_classes)}
    for record, seq in fold_train:
        region = seq.region
        region_labels = seq.labels[region]
        for t, g in zip(region, region_labels):
            if g != UNLABELED:
                pools[int(g)].append((record.video_id, int(t)))
    return pools


def sample_balanced_epoch(fold_train, n_target=3000, rng_seed=0, num_classes=None, report_absent=True):
    """Draw anchors so every present class gets an equal share (+-1) of n_target."""
    if num_classes is None:
        num_classes = 1 + max(int(seq.labels.max()) for _, seq in fold_train) if fold_train else 0
    pools = anchor_pools(fold_train, num_classes)
    present = [g for g in range(num_classes) if pools[g]]
    if not present:
        raise EmptyTrainSet("No labeled anchors in the training videos")

    absent = [g for g in range(num_classes) if not pools[g]]
    if absent and report_absent:
        message = f"Classes {absent} have no anchors in this fold; quota redistributed over {len(present)} classes"
        logger.warning(message)
        warnings.warn(message, ClassAbsent, stacklevel=2)

    rng = np.random.default_rng(rng_seed)
    anchors = []
    for g, quota in zip(present, split_quota(n_target, len(present))):
        pool = pools[g]
        picks = rng.choice(len(pool), size=quota, replace=len(pool) < quota)
        anchors.extend(pool[i] for i in picks)
    return [anchors[i] for i in rng.permutation(len(anchors))]


class SnippetDataset(Dataset):
    """Snippets for a fixed anchor list; augmentation RNG is keyed by (seed, epoch, position)."""

    def __init__(self, items, anchors, length=SNIPPET_LENGTH, load_size=256, input_size=224,
                 augment=False, seed=0, epoch=0, hflip=False):
        self.items = {record.video_id: (record, seq) for record, seq in items}
        self.anchors = list(anchors)
        self.length = length
        self.load_size = load_size
        self.input_size = input_size
        self.augment = augment
        self.seed = seed
        self.epoch = epoch
        self.hflip = hflip

    def __len__(self):
        return len(self.anchors)

    def __getitem__(self, index):
        video_id, anchor_t = self.anchors[index]
        record, seq = self.items[video_id]
        snippet = extract_snippet(record, seq, anchor_t, self.length, self.load_size)
        rng = np.random.default_rng([self.seed, self.epoch, index])
        snippet = augment_snippet(snippet, rng, self.augment, self.input_size, flip=self.hflip)
        return to_model_input(snippet), snippet.labels


# =====================
# JIGSAWS INGESTION
# =====================
_JIGSAWS_NAME = re.compile(r"^(?P<task>[A-Za-z_]+?)_(?P<subject>[A-Z])(?P<trial>\d{3})$")


def _decode_video(video_path, frames_dir, keep_every):
    import cv2

    capture = cv2.VideoCapture(str(video_path))
    if not capture.isOpened():
        raise IOFailure(f"Cannot open video {video_path}")
    fps = capture.get(cv2.CAP_PROP_FPS) or NATIVE_FPS
    frames_dir.mkdir(parents=True, exist_ok=True)
    count = 0
    while True:
        ok, frame = capture.read()
        if not ok:
            break
        if count % keep_every == 0:
            cv2.imwrite(str(frames_dir / f"{count:06d}.jpg"), frame)
        count += 1
    capture.release()
    return count, Fraction(round(fps))


def prepare_jigsaws(jigsaws_dir, out_dir, vocab, keep_every=3, capture="capture1"):
    """Decode suturing videos into frame directories and write a manifest; returns the records."""
    jigsaws_dir, out_dir = Path(jigsaws_dir), Path(out_dir)
    task_dir = jigsaws_dir / "Suturing" if (jigsaws_dir / "Suturing").is_dir() else jigsaws_dir
    transcripts = task_dir / "transcriptions"
    if not transcripts.is_dir():
        raise IOFailure(f"No transcriptions directory under {task_dir}")

    (out_dir / "transcriptions").mkdir(parents=True, exist_ok=True)
    records = []
    for transcript in sorted(transcripts.glob("*.txt")):
        match = _JIGSAWS_NAME.match(transcript.stem)
        video_path = task_dir / "video" / f"{transcript.stem}_{capture}.avi"
        if not match or not video_path.is_file():
            logger.warning("Skipping %s: no matching %s video", transcript.name, capture)
            continue
        parse_transcript(transcript.read_text(), vocab)
        frames_dir = out_dir / "frames" / transcript.stem
        count, fps = _decode_video(video_path, frames_dir, keep_every)
        target = out_dir / "transcriptions" / transcript.name
        shutil.copyfile(transcript, target)
        records.append(VideoRecord(transcript.stem, match["subject"], count, fps, frames_dir, target, "jpg"))
        logger.info("Decoded %s: %d frames at %s fps", transcript.stem, count, fps)

    write_manifest(records, out_dir / "manifest.csv")
    return records
