"""Deterministic synthetic gesture videos in the JIGSAWS manifest/transcript/frame layout."""
import logging
import shutil
import string
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw
from tqdm import tqdm

from .data import LabelSequence, VideoRecord, frame_stride, render_transcript, write_manifest
from .errors import ConfigError, IOFailure, UnknownVideo
from .vocabulary import Gesture, GestureVocabulary, write_vocabulary

logger = logging.getLogger(__name__)

BACKGROUND = (128, 128, 128)


@dataclass(frozen=True)
class VisualCode:
    name: str
    shape: str
    color: tuple
    motion: tuple  # pixels per native frame (dx, dy)


# Classes 0 and 1 look identical and differ only in motion direction.
VISUAL_CODES = (
    VisualCode("red square right", "square", (255, 0, 0), (1, 0)),
    VisualCode("red square left", "square", (255, 0, 0), (-1, 0)),
    VisualCode("green circle down", "circle", (0, 255, 0), (0, 1)),
    VisualCode("blue triangle up", "triangle", (0, 0, 255), (0, -1)),
    VisualCode("yellow square diagonal", "square", (255, 255, 0), (1, 1)),
    VisualCode("magenta circle still", "circle", (255, 0, 255), (0, 0)),
    VisualCode("cyan triangle", "triangle", (0, 255, 255), (-1, 1)),
    VisualCode("orange square", "square", (255, 128, 0), (1, -1)),
    VisualCode("purple circle", "circle", (128, 0, 255), (-1, -1)),
    VisualCode("black triangle", "triangle", (0, 0, 0), (2, 0)),
    VisualCode("white circle", "circle", (255, 255, 255), (0, 2)),
)
MOTION_PAIR = (0, 1)


@dataclass(frozen=True)
class SynthSpec:
    n_subjects: int = 2
    videos_per_subject: int = 2
    num_classes: int = 10
    native_fps: int = 30
    working_fps: int = 5
    mean_segment_len: int = 12  # working frames
    segment_jitter: int = 4
    cycles: int = 2
    frame_size: int = 112
    object_size: int = 20
    seed: int = 0

    def __post_init__(self):
        if not 2 <= self.num_classes <= len(VISUAL_CODES):
            raise ConfigError(f"num_classes must lie in [2, {len(VISUAL_CODES)}], got {self.num_classes}")
        if self.mean_segment_len - self.segment_jitter < 1:
            raise ConfigError("Segment durations must stay positive (mean_segment_len > segment_jitter)")
        if self.n_subjects < 1 or self.videos_per_subject < 1 or self.n_subjects > len(string.ascii_uppercase):
            raise ConfigError("Need between 1 and 26 subjects and at least one video per subject")
        if self.object_size >= self.frame_size:
            raise ConfigError("object_size must be smaller than frame_size")
        frame_stride(self.native_fps, self.working_fps)

    @property
    def stride(self):
        return frame_stride(self.native_fps, self.working_fps)

    def video_ids(self):
        return [f"Synth_{string.ascii_uppercase[s + 1]}{k + 1:03d}"
                for s in range(self.n_subjects) for k in range(self.videos_per_subject)]

    def subject_of(self, video_id):
        return video_id.split("_")[1][0]


def synth_vocabulary(num_classes):
    return GestureVocabulary(
        Gesture(f"G{i + 1}", i, VISUAL_CODES[i].name, VISUAL_CODES[i].color) for i in range(num_classes)
    )


# =====================
# SEGMENT PLANS
# =====================
def plan_video(spec, index):
    """[(class, duration in working frames)] for video `index`; every class occurs once per cycle."""
    rng = np.random.default_rng([spec.seed, index])
    order = []
    for _ in range(spec.cycles):
        perm = [int(c) for c in rng.permutation(spec.num_classes)]
        if order and perm[0] == order[-1]:
            perm[0], perm[1] = perm[1], perm[0]
        order.extend(perm)
    jitter = rng.integers(-spec.segment_jitter, spec.segment_jitter + 1, size=len(order))
    return [(cls, int(spec.mean_segment_len + j)) for cls, j in zip(order, jitter)]


def plan_segments(spec, index):
    """Native-frame (start, end, class) triples of the plan."""
    segments, start = [], 0
    for cls, duration in plan_video(spec, index):
        end = start + duration * spec.stride - 1
        segments.append((start, end, cls))
        start = end + 1
    return segments


def _video_index(spec, video_id):
    try:
        return spec.video_ids().index(video_id)
    except ValueError:
        raise UnknownVideo(f"Video '{video_id}' is not generated by this spec") from None


def oracle_labels(spec, video_id):
    """Exact working-rate ground truth straight from the plan."""
    plan = plan_video(spec, _video_index(spec, video_id))
    labels = np.repeat([c for c, _ in plan], [d for _, d in plan]).astype(np.int64)
    return LabelSequence(video_id, Fraction(spec.working_fps), labels, 0, len(labels) - 1, spec.stride)


# =====================
# RENDERING
# =====================
def render_frame(spec, code, position):
    img = Image.new("RGB", (spec.frame_size, spec.frame_size), BACKGROUND)
    draw = ImageDraw.Draw(img)
    x, y = position
    s = spec.object_size - 1
    if code.shape == "square":
        draw.rectangle([x, y, x + s, y + s], fill=code.color)
    elif code.shape == "circle":
        draw.ellipse([x, y, x + s, y + s], fill=code.color)
    else:
        draw.polygon([(x + s // 2, y), (x, y + s), (x + s, y + s)], fill=code.color)
    return img


def _render_video(spec, index, frames_dir, keep_every):
    rng = np.random.default_rng([spec.seed, index, 1])
    travel = spec.frame_size - spec.object_size + 1
    frames_dir.mkdir(parents=True, exist_ok=True)
    for start, end, cls in plan_segments(spec, index):
        code = VISUAL_CODES[cls]
        origin = rng.integers(0, travel, size=2)
        for n in range(-(-start // keep_every) * keep_every, end + 1, keep_every):
            offset = n - start
            position = ((origin + np.array(code.motion) * offset) % travel).astype(int)
            render_frame(spec, code, tuple(int(p) for p in position)).save(frames_dir / f"{n:06d}.png")


def generate_dataset(spec, out_dir, overwrite=False, keep_every=3, progress=False):
    """Write frames, transcripts, vocabulary.csv and manifest.csv under out_dir; returns the manifest path."""
    out_dir = Path(out_dir)
    if out_dir.exists() and any(out_dir.iterdir()):
        if not overwrite:
            raise IOFailure(f"{out_dir} is not empty; pass overwrite to replace it")
        shutil.rmtree(out_dir)

    vocab = synth_vocabulary(spec.num_classes)
    records = []
    try:
        (out_dir / "transcriptions").mkdir(parents=True, exist_ok=True)
        write_vocabulary(vocab, out_dir / "vocabulary.csv")
        for index, video_id in enumerate(tqdm(spec.video_ids(), desc="synth", disable=not progress)):
            segments = plan_segments(spec, index)
            transcript = out_dir / "transcriptions" / f"{video_id}.txt"
            transcript.write_text(render_transcript(segments, vocab))
            frames_dir = out_dir / "frames" / video_id
            _render_video(spec, index, frames_dir, keep_every)
            records.append(VideoRecord(video_id, spec.subject_of(video_id), segments[-1][1] + 1,
                                       Fraction(spec.native_fps), frames_dir, transcript, "png"))
        manifest = out_dir / "manifest.csv"
        write_manifest(records, manifest)
    except OSError as e:
        raise IOFailure(f"Cannot write synthetic dataset to {out_dir}: {e}") from e
    logger.info("Generated %d synthetic videos in %s", len(records), out_dir)
    return manifest


# =====================
# PROBES
# =====================
def color_histogram(frame, bins=4):
    quantised = (np.asarray(frame, dtype=np.int64) * bins) // 256
    codes = (quantised[..., 0] * bins + quantised[..., 1]) * bins + quantised[..., 2]
    hist = np.bincount(codes.ravel(), minlength=bins ** 3).astype(np.float64)
    return hist / hist.sum()


@dataclass
class ProbeResult:
    per_class_accuracy: dict
    centroids: dict


def color_histogram_probe(frames, labels, bins=4):
    """Nearest-centroid single-frame classifier on color histograms, fit and scored on the same frames."""
    hists = np.stack([color_histogram(f, bins) for f in frames])
    labels = np.asarray(labels)
    classes = np.unique(labels)
    centroids = np.stack([hists[labels == c].mean(axis=0) for c in classes])
    distances = ((hists[:, None, :] - centroids[None]) ** 2).sum(axis=2)
    predicted = classes[np.argmin(distances, axis=1)]
    accuracy = {int(c): float(np.mean(predicted[labels == c] == c)) for c in classes}
    return ProbeResult(accuracy, {int(c): centroids[i] for i, c in enumerate(classes)})
