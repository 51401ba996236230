import csv
from dataclasses import dataclass
from pathlib import Path

from .errors import ConfigError, IOFailure, UnknownGesture


@dataclass(frozen=True)
class Gesture:
    gesture_id: str
    index: int
    display_name: str
    color: tuple

    @property
    def hex_color(self):
        return "#{:02x}{:02x}{:02x}".format(*self.color)


class GestureVocabulary:
    """Ordered gesture set; indices are contiguous 0..G-1."""

    def __init__(self, entries):
        entries = list(entries)
        indices = [e.index for e in entries]
        if sorted(indices) != list(range(len(entries))):
            raise ConfigError(f"Vocabulary indices must be contiguous 0..{len(entries) - 1}, got {indices}")
        ids = [e.gesture_id for e in entries]
        if len(set(ids)) != len(ids):
            raise ConfigError(f"Duplicate gesture ids in vocabulary: {ids}")
        self.entries = sorted(entries, key=lambda e: e.index)
        self._by_id = {e.gesture_id: e for e in self.entries}

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def __contains__(self, gesture_id):
        return gesture_id in self._by_id

    def index_of(self, gesture_id):
        try:
            return self._by_id[gesture_id].index
        except KeyError:
            raise UnknownGesture(f"Gesture '{gesture_id}' is not in the vocabulary") from None

    def gesture_id(self, index):
        return self.entries[index].gesture_id

    def colors(self):
        return [e.color for e in self.entries]

    @classmethod
    def from_ids(cls, gesture_ids):
        """Vocabulary with default names and palette colors for the given ids."""
        return cls(
            Gesture(gid, i, gid, _PALETTE[i % len(_PALETTE)])
            for i, gid in enumerate(gesture_ids)
        )


def _parse_color(text):
    text = text.strip().lstrip("#")
    if len(text) != 6:
        raise ConfigError(f"Color must be a 6-digit hex value, got '{text}'")
    return tuple(int(text[i:i + 2], 16) for i in (0, 2, 4))


# =====================
# VOCABULARY FILES
# =====================
def load_vocabulary(path):
    """Read a CSV vocabulary file (gesture_id, display_name, color)."""
    path = Path(path)
    if not path.is_file():
        raise IOFailure(f"Vocabulary file {path} not found")
    with path.open(newline="") as fh:
        rows = [row for row in csv.DictReader(fh) if row.get("gesture_id")]
    if not rows:
        raise ConfigError(f"Vocabulary file {path} is empty")
    return GestureVocabulary(
        Gesture(row["gesture_id"].strip(), i, row.get("display_name", "").strip(), _parse_color(row["color"]))
        for i, row in enumerate(rows)
    )


def write_vocabulary(vocab, path):
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["gesture_id", "display_name", "color"])
        for entry in vocab:
            writer.writerow([entry.gesture_id, entry.display_name, entry.hex_color])


_PALETTE = [
    (31, 119, 180), (255, 127, 14), (44, 160, 44), (214, 39, 40), (148, 103, 189),
    (140, 86, 75), (227, 119, 194), (127, 127, 127), (188, 189, 34), (23, 190, 207),
    (174, 199, 232), (255, 187, 120),
]

# JIGSAWS suturing task: G7 does not occur, leaving G = 10
SUTURING_GESTURES = [
    ("G1", "Reaching for needle with right hand"),
    ("G2", "Positioning needle"),
    ("G3", "Pushing needle through tissue"),
    ("G4", "Transferring needle from left to right"),
    ("G5", "Moving to center with needle in grip"),
    ("G6", "Pulling suture with left hand"),
    ("G8", "Orienting needle"),
    ("G9", "Using right hand to help tighten suture"),
    ("G10", "Loosening more suture"),
    ("G11", "Dropping suture at end and moving to end points"),
]


def suturing_vocabulary():
    return GestureVocabulary(
        Gesture(gid, i, name, _PALETTE[i]) for i, (gid, name) in enumerate(SUTURING_GESTURES)
    )
