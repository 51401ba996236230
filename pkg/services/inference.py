"""Per-frame estimates: snippet-wise, sliding-window accumulation and 10 Hz upsampling."""
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from tqdm import tqdm

from .config import NORMALIZE_MEAN, NORMALIZE_STD, SNIPPET_LENGTH, WORKING_FPS
from .data import Snippet, augment_snippet, frame_stride, load_frames, snippet_native_indices, to_model_input
from .errors import ConfigError, EmptySequence, MissingDump, RateMismatch
from .model import predict_probabilities

logger = logging.getLogger(__name__)

EVAL_RATES = (5, 10)


@dataclass
class PredictionStream:
    """Dense predictions of one video, one per anchor; scores is (N, G, L), column 0 = oldest."""
    video_id: str
    eval_fps: int
    anchors: np.ndarray
    scores: np.ndarray

    def __len__(self):
        return len(self.anchors)


@dataclass
class PredictionTrack:
    video_id: str
    eval_fps: int
    stream: PredictionStream
    accumulated: np.ndarray  # (N, G)
    final_labels: np.ndarray


# =====================
# MODEL EVALUATION
# =====================
def predict_video(model, video, labels, eval_fps=WORKING_FPS, batch_size=16, load_size=256, input_size=224,
                  progress=False):
    """One dense prediction per anchor of the labeled region of `labels` (sampled at eval_fps).

    Snippet frames are always spaced at the 5 fps working rate, also when anchors step at 10 Hz.
    """
    if eval_fps not in EVAL_RATES or int(labels.fps) != eval_fps:
        raise RateMismatch(f"Evaluation needs labels at {EVAL_RATES} fps, got {labels.fps} for eval_fps={eval_fps}")
    length = 1 if model.meta.arch == "resnet2d" else SNIPPET_LENGTH
    snippet_stride = frame_stride(video.native_fps, WORKING_FPS)
    first_native = labels.labeled_start * labels.stride
    anchors = labels.region

    device = next(model.parameters()).device
    model.eval()
    outputs = []
    batches = range(0, len(anchors), batch_size)
    with torch.no_grad():
        for start in tqdm(batches, desc=f"predict[{video.video_id}]", disable=not progress):
            inputs = []
            for t in anchors[start:start + batch_size]:
                natives = snippet_native_indices(int(t) * labels.stride, first_native, SNIPPET_LENGTH, snippet_stride)
                snippet = Snippet(load_frames(video, natives[-length:], load_size), None, int(t))
                snippet = augment_snippet(snippet, None, enabled=False, output_size=input_size)
                inputs.append(to_model_input(snippet, NORMALIZE_MEAN, NORMALIZE_STD))
            probs = predict_probabilities(model, torch.stack(inputs).to(device))
            outputs.append(probs.float().cpu().numpy())
    return PredictionStream(video.video_id, eval_fps, anchors, np.concatenate(outputs))


# =====================
# LABELING
# =====================
def snippetwise_labels(scores):
    """argmax of the newest column of each prediction; ties go to the lowest class index."""
    scores = _as_scores(scores)
    if len(scores) == 0:
        raise EmptySequence("Prediction stream is empty")
    return np.argmax(scores[:, :, -1], axis=1)


def accumulated_scores(scores, k):
    """Row t sums the columns estimating t from anchors t..t+k (those that exist)."""
    scores = _as_scores(scores)
    n, g, length = scores.shape
    if not 0 <= k < length:
        raise ConfigError(f"Look-ahead must lie in [0, {length - 1}], got {k}")
    acc = np.zeros((n, g), dtype=np.float64)
    for i in range(min(k, n - 1) + 1):
        acc[:n - i] += scores[i:, :, length - 1 - i]
    return acc


def accumulate_sliding_window(scores, k=SNIPPET_LENGTH - 1):
    return np.argmax(accumulated_scores(scores, k), axis=1)


def upsample_prediction(gamma):
    """(…, G, L) -> (…, G, 2L): column 0 kept, column j averages columns floor/ceil((j-1)/2)."""
    gamma = np.asarray(gamma, dtype=np.float64)
    length = gamma.shape[-1]
    j = np.arange(1, 2 * length)
    lo, hi = (j - 1) // 2, -(-(j - 1) // 2)
    out = np.empty(gamma.shape[:-1] + (2 * length,), dtype=np.float64)
    out[..., 0] = gamma[..., 0]
    out[..., 1:] = 0.5 * gamma[..., lo] + 0.5 * gamma[..., hi]
    return out


def _as_scores(scores):
    return scores.scores if isinstance(scores, PredictionStream) else np.asarray(scores)


def window_scores(stream):
    """Scores on the stream's own time grid: 10 Hz streams of 5 fps snippets are upsampled."""
    if stream.eval_fps == 10 and stream.scores.shape[-1] == SNIPPET_LENGTH:
        return upsample_prediction(stream.scores)
    return stream.scores


def label_track(stream, look_ahead=None):
    """Snippet-wise labels when look_ahead is None, else sliding-window labels."""
    if look_ahead is None:
        accumulated = stream.scores[:, :, -1].astype(np.float64)
    else:
        accumulated = accumulated_scores(window_scores(stream), look_ahead)
    return PredictionTrack(stream.video_id, stream.eval_fps, stream, accumulated, np.argmax(accumulated, axis=1))


def full_window(stream):
    """Largest look-ahead supported by the stream (15 at 5 fps, 31 at 10 Hz)."""
    return window_scores(stream).shape[-1] - 1


# =====================
# DUMPS
# =====================
def save_score_dump(path, stream, ground_truth):
    """npz layout: scores (N, G, L) float32, anchors (N,), gt (N,), eval_fps, video_id."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savez_compressed(
        path, scores=stream.scores.astype(np.float32), anchors=np.asarray(stream.anchors),
        gt=np.asarray(ground_truth), eval_fps=np.int64(stream.eval_fps), video_id=np.str_(stream.video_id),
    )
    return path


def load_score_dump(path):
    path = Path(path)
    if not path.is_file():
        raise MissingDump(f"Score dump {path} not found")
    with np.load(path) as data:
        stream = PredictionStream(str(data["video_id"]), int(data["eval_fps"]), data["anchors"], data["scores"])
        return stream, data["gt"]


def write_label_file(path, labels, vocab):
    Path(path).write_text("".join(f"{vocab.gesture_id(int(g))}\n" for g in labels))


def read_label_file(path, vocab):
    lines = [line.strip() for line in Path(path).read_text().splitlines() if line.strip()]
    if not lines:
        raise EmptySequence(f"Label file {path} is empty")
    return np.array([vocab.index_of(g) for g in lines], dtype=np.int64)


def predict_track(model, video, labels, eval_fps=WORKING_FPS, look_ahead=None, **predict_options):
    """predict_video followed by snippet-wise (look_ahead None) or sliding-window labeling."""
    stream = predict_video(model, video, labels, eval_fps, **predict_options)
    return label_track(stream, look_ahead)
