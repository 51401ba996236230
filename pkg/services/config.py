# services/config.py
import os
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

import torch

# Per-channel input normalisation (ImageNet statistics, the 2D baseline's pretraining data)
NORMALIZE_MEAN = (0.485, 0.456, 0.406)
NORMALIZE_STD = (0.229, 0.224, 0.225)

SNIPPET_LENGTH = 16
NATIVE_FPS = 30
WORKING_FPS = 5

# decoded frames kept per process (about 200 kB each at 256 x 341)
DEFAULT_FRAME_CACHE = 512

INIT_MODES = ("random", "inflate", "external")
ARCHITECTURES = ("dense3d", "resnet2d")


# =====================
# ENVIRONMENT SETTINGS
# =====================
@dataclass(frozen=True)
class Settings:
    data_root: Path
    runs_root: Path
    device: str
    log_level: str
    frame_cache_size: int = DEFAULT_FRAME_CACHE


def load_settings(environ=None):
    """Read settings from the environment, falling back to local defaults."""
    env = os.environ if environ is None else environ
    return Settings(
        data_root=Path(env.get("GESTURE_DATA_ROOT", "data")),
        runs_root=Path(env.get("GESTURE_RUNS_ROOT", "runs")),
        device=env.get("GESTURE_DEVICE", "auto"),
        log_level=env.get("GESTURE_LOG_LEVEL", "INFO").upper(),
        frame_cache_size=int(env.get("GESTURE_FRAME_CACHE", DEFAULT_FRAME_CACHE)),
    )


def resolve_device(name="auto"):
    if name == "auto":
        return torch.device("cuda" if torch.cuda.is_available() else "cpu")
    return torch.device(name)


# =====================
# TRAINING CONFIGURATION
# =====================
@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 250
    batch_size: int = 32
    initial_lr: float = 2.5e-4
    lr_decay_factor: float = 5.0
    lr_decay_every: int = 50
    snippets_per_epoch: int = 3000
    snippet_length: int = SNIPPET_LENGTH
    seed: int = 0
    init_mode: str = "random"
    arch: str = "dense3d"
    width: int = 64
    working_fps: int = WORKING_FPS
    load_size: int = 256
    input_size: int = 224
    augment: bool = True
    hflip: bool = False
    num_workers: int = 0
    checkpoint_every: int = 50
    shortcut: str = "B"
    pretrained_path: str = ""
    imagenet_pretrained: bool = False
    device: str = "auto"

    def with_overrides(self, **overrides):
        """Return a copy with every non-None override applied."""
        known = {f.name for f in fields(self)}
        return replace(self, **{k: v for k, v in overrides.items() if k in known and v is not None})

    def as_dict(self):
        return asdict(self)

    @property
    def effective_length(self):
        # the 2D baseline trains on single frames
        return 1 if self.arch == "resnet2d" else self.snippet_length
