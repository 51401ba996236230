"""Color-ribbon plots of label sequences and the look-ahead sweep curve."""
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from matplotlib.patches import Patch  # noqa: E402

from services.errors import EmptySequence, LengthMismatch  # noqa: E402
from services.metrics import UNLABELED  # noqa: E402

BLANK = (1.0, 1.0, 1.0)


def ribbon_image(labels, vocab):
    """(1, T, 3) float RGB row; unlabeled frames are white."""
    palette = np.array([c for c in vocab.colors()], dtype=np.float64) / 255.0
    labels = np.asarray(labels)
    rgb = np.tile(np.array(BLANK), (len(labels), 1))
    known = labels != UNLABELED
    rgb[known] = palette[labels[known]]
    return rgb[None]


def plot_ribbons(rows, vocab, out_path, title=None, legend=True):
    """One horizontal ribbon per (name, labels) row, ground truth first by convention."""
    rows = list(rows)
    if not rows:
        raise EmptySequence("Nothing to plot")
    lengths = {len(labels) for _, labels in rows}
    if 0 in lengths:
        raise EmptySequence("Cannot plot an empty label sequence")
    if len(lengths) != 1:
        raise LengthMismatch(f"Ribbon rows have different lengths: {sorted(lengths)}")

    fig, axes = plt.subplots(len(rows), 1, sharex=True, squeeze=False, figsize=(12, 0.6 * len(rows) + 1.2))
    for ax, (name, labels) in zip(axes[:, 0], rows):
        ax.imshow(ribbon_image(labels, vocab), aspect="auto", interpolation="nearest")
        ax.set_yticks([])
        ax.set_ylabel(name, rotation=0, ha="right", va="center")
    axes[-1, 0].set_xlabel("frame")
    if title:
        fig.suptitle(title)
    if legend:
        handles = [Patch(facecolor=np.array(e.color) / 255.0, label=e.gesture_id) for e in vocab]
        fig.legend(handles=handles, loc="lower center", ncol=min(len(handles), 10), frameon=False)
        plt.tight_layout(rect=[0, 0.12, 1, 1])
    else:
        plt.tight_layout()

    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out_path, dpi=150)
    plt.close(fig)
    return out_path


def plot_legend(vocab, out_path):
    fig, ax = plt.subplots(figsize=(6, 0.35 * len(vocab) + 0.4))
    handles = [Patch(facecolor=np.array(e.color) / 255.0, label=f"{e.gesture_id}  {e.display_name}") for e in vocab]
    ax.legend(handles=handles, loc="center left", frameon=False)
    ax.axis("off")
    fig.savefig(out_path, dpi=150, bbox_inches="tight")
    plt.close(fig)
    return Path(out_path)


def plot_lookahead_sweep(rows, out_path, fps=5):
    """Measures vs look-ahead time in seconds for [(k, MetricsReport)] rows."""
    ks = np.array([k for k, _ in rows])
    fig, ax = plt.subplots(1, 1, figsize=(7, 4))
    for measure, label in (("accuracy", "Acc"), ("average_f1", "Avg. F1"), ("edit_score", "Edit"),
                           ("f1_at_10", "F1@10")):
        ax.plot(ks / fps, [getattr(r, measure) for _, r in rows], marker="o", label=label)
    ax.set_xlabel("look ahead [s]")
    ax.set_ylabel("%")
    ax.legend()
    plt.tight_layout()
    fig.savefig(out_path, dpi=150)
    plt.close(fig)
    return Path(out_path)
