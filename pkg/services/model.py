"""3D dense-prediction ResNet-18, its 2D frame-wise counterpart, inflation and checkpoints."""
import logging
import os
import pickle
import zipfile
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .config import SNIPPET_LENGTH
from .errors import ConfigError, IOFailure, MissingKey, ShapeMismatch

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "gesture-checkpoint/1"
STAGE_STRIDES = (1, 2, 2, 2)


# =====================
# LAYER SPECS / SHAPE LEDGER
# =====================
@dataclass(frozen=True)
class LayerSpec:
    name: str
    kind: str
    kernel: tuple
    stride: tuple
    out_channels: int
    repeat: int = 1
    padding: tuple = (0, 0, 0)


def dense_net_layer_specs(num_classes, width=64):
    specs = [
        LayerSpec("conv1", "conv3d", (7, 7, 7), (1, 2, 2), width, padding=(3, 3, 3)),
        LayerSpec("maxpool", "maxpool3d", (1, 3, 3), (1, 2, 2), width, padding=(0, 1, 1)),
    ]
    for i, stride in enumerate(STAGE_STRIDES):
        specs.append(LayerSpec(f"layer{i + 1}", "residual_block3d", (3, 3, 3), (stride,) * 3,
                               width * 2 ** i, repeat=2, padding=(1, 1, 1)))
    specs += [
        LayerSpec("avgpool", "avgpool3d", (1, 7, 7), (1, 1, 1), width * 8),
        LayerSpec("head", "transposed_conv1d", (11,), (5,), num_classes, padding=(0,)),
    ]
    return specs


def propagate_shapes(specs, input_shape=(3, SNIPPET_LENGTH, 224, 224)):
    """Symbolic output sizes, one (name, (C, *dims)) entry per spec."""
    dims = list(input_shape[1:])
    ledger = []
    for spec in specs:
        if spec.kind == "transposed_conv1d":
            if any(d != 1 for d in dims[1:]):
                raise ShapeMismatch(f"{spec.name}: spatial dims must be collapsed, got {dims}")
            dims = [(dims[0] - 1) * spec.stride[0] + spec.kernel[0] - 2 * spec.padding[0]]
        else:
            # later blocks of a residual stage keep the size of the first one
            dims = [(d + 2 * p - k) // s + 1 for d, k, s, p in zip(dims, spec.kernel, spec.stride, spec.padding)]
        ledger.append((spec.name, (spec.out_channels, *dims)))
    return ledger


# =====================
# BUILDING BLOCKS
# =====================
def _conv(dims, in_planes, planes, kernel, stride=1, padding=0):
    conv = nn.Conv3d if dims == 3 else nn.Conv2d
    return conv(in_planes, planes, kernel, stride=stride, padding=padding, bias=False)


def _norm(dims, planes):
    return nn.BatchNorm3d(planes) if dims == 3 else nn.BatchNorm2d(planes)


class ZeroPadShortcut(nn.Module):
    """Parameter-free shortcut: strided subsampling plus zero channels."""

    def __init__(self, planes, stride, dims):
        super().__init__()
        self.planes = planes
        self.stride = stride
        self.dims = dims

    def forward(self, x):
        pool = F.avg_pool3d if self.dims == 3 else F.avg_pool2d
        out = pool(x, kernel_size=1, stride=self.stride)
        pad = out.new_zeros((out.shape[0], self.planes - out.shape[1], *out.shape[2:]))
        return torch.cat([out, pad], dim=1)


class BasicBlock(nn.Module):
    def __init__(self, dims, in_planes, planes, stride=1, shortcut="B"):
        super().__init__()
        self.conv1 = _conv(dims, in_planes, planes, 3, stride, 1)
        self.bn1 = _norm(dims, planes)
        self.relu = nn.ReLU(inplace=True)
        self.conv2 = _conv(dims, planes, planes, 3, 1, 1)
        self.bn2 = _norm(dims, planes)
        self.downsample = None
        if stride != 1 or in_planes != planes:
            if shortcut == "A":
                self.downsample = ZeroPadShortcut(planes, stride, dims)
            else:
                self.downsample = nn.Sequential(_conv(dims, in_planes, planes, 1, stride), _norm(dims, planes))

    def forward(self, x):
        identity = x if self.downsample is None else self.downsample(x)
        out = self.relu(self.bn1(self.conv1(x)))
        out = self.bn2(self.conv2(out))
        return self.relu(out + identity)


class _ResNetBackbone(nn.Module):
    def __init__(self, dims, width, shortcut, stem_kernel, stem_stride, stem_padding,
                 pool_kernel, pool_stride, pool_padding):
        super().__init__()
        self.conv1 = _conv(dims, 3, width, stem_kernel, stem_stride, stem_padding)
        self.bn1 = _norm(dims, width)
        self.relu = nn.ReLU(inplace=True)
        pool = nn.MaxPool3d if dims == 3 else nn.MaxPool2d
        self.maxpool = pool(pool_kernel, stride=pool_stride, padding=pool_padding)

        in_planes = width
        for i, stride in enumerate(STAGE_STRIDES):
            planes = width * 2 ** i
            stage = nn.Sequential(
                BasicBlock(dims, in_planes, planes, stride, shortcut),
                BasicBlock(dims, planes, planes, 1, shortcut),
            )
            self.add_module(f"layer{i + 1}", stage)
            in_planes = planes

        for m in self.modules():
            if isinstance(m, (nn.Conv2d, nn.Conv3d)):
                nn.init.kaiming_normal_(m.weight, mode="fan_out", nonlinearity="relu")
            elif isinstance(m, (nn.BatchNorm2d, nn.BatchNorm3d)):
                nn.init.ones_(m.weight)
                nn.init.zeros_(m.bias)

    def features(self, x):
        x = self.maxpool(self.relu(self.bn1(self.conv1(x))))
        return self.layer4(self.layer3(self.layer2(self.layer1(x))))


@dataclass
class ModelMeta:
    arch: str
    num_classes: int
    width: int = 64
    shortcut: str = "B"
    source: str = "random"
    epoch: int = 0


class DenseNet3D(_ResNetBackbone):
    """3D ResNet-18 with temporal-preserving max pooling and a transposed 1D conv head.

    Input (B, 3, 16, H, W); output logits (B, G, 16), column 0 = oldest frame.
    """

    def __init__(self, num_classes, width=64, shortcut="B"):
        super().__init__(3, width, shortcut, (7, 7, 7), (1, 2, 2), (3, 3, 3), (1, 3, 3), (1, 2, 2), (0, 1, 1))
        # equals the 1x7x7 stride-1 pooling at 224 input
        self.avgpool = nn.AdaptiveAvgPool3d((None, 1, 1))
        self.head = nn.ConvTranspose1d(width * 8, num_classes, kernel_size=11, stride=5)
        nn.init.uniform_(self.head.weight, -0.01, 0.01)
        nn.init.zeros_(self.head.bias)
        self.layer_specs = dense_net_layer_specs(num_classes, width)
        self.meta = ModelMeta("dense3d", num_classes, width, shortcut)

    def forward(self, x):
        x = self.avgpool(self.features(x))
        return self.head(x.flatten(2))


class ResNet2D(_ResNetBackbone):
    """Frame-wise ResNet-18; parameter names follow torchvision."""

    def __init__(self, num_classes, width=64, shortcut="B"):
        super().__init__(2, width, shortcut, 7, 2, 3, 3, 2, 1)
        self.avgpool = nn.AdaptiveAvgPool2d(1)
        self.fc = nn.Linear(width * 8, num_classes)
        self.meta = ModelMeta("resnet2d", num_classes, width, shortcut)

    def forward(self, x):
        return self.fc(self.avgpool(self.features(x)).flatten(1))


# =====================
# CONSTRUCTION
# =====================
def _check_classes(num_classes):
    if num_classes < 2:
        raise ConfigError(f"Need at least two gesture classes, got {num_classes}")


def build_3d_dense_net(num_classes, width=64, shortcut="B"):
    _check_classes(num_classes)
    return DenseNet3D(num_classes, width, shortcut)


def build_2d_baseline(num_classes, width=64, shortcut="B", imagenet_pretrained=False):
    _check_classes(num_classes)
    model = ResNet2D(num_classes, width, shortcut)
    if imagenet_pretrained:
        if width != 64 or shortcut != "B":
            raise ConfigError("ImageNet weights need the full-width projection-shortcut ResNet-18")
        from torchvision.models import ResNet18_Weights, resnet18

        state = resnet18(weights=ResNet18_Weights.IMAGENET1K_V1).state_dict()
        state = {k: v for k, v in state.items() if not k.startswith("fc.")}
        model.load_state_dict(state, strict=False)
        model.meta.source = "imagenet"
    return model


def build_model(arch, num_classes, width=64, shortcut="B", imagenet_pretrained=False):
    if arch == "dense3d":
        return build_3d_dense_net(num_classes, width, shortcut)
    if arch == "resnet2d":
        return build_2d_baseline(num_classes, width, shortcut, imagenet_pretrained)
    raise ConfigError(f"Unknown architecture '{arch}'")


# =====================
# INFLATION
# =====================
def inflate_kernel(weight2d, time_kernel):
    """N x N kernel -> N x N x N kernel: repeat along time and divide by N."""
    return weight2d.unsqueeze(2).repeat(1, 1, time_kernel, 1, 1) / time_kernel


def inflate_conv(conv2d, time_kernel=None, time_stride=1, time_padding=None):
    """Inflated nn.Conv3d counterpart of an nn.Conv2d."""
    time_kernel = time_kernel or conv2d.kernel_size[0]
    time_padding = time_kernel // 2 if time_padding is None else time_padding
    conv3d = nn.Conv3d(
        conv2d.in_channels, conv2d.out_channels, (time_kernel, *conv2d.kernel_size),
        stride=(time_stride, *conv2d.stride), padding=(time_padding, *conv2d.padding),
        bias=conv2d.bias is not None,
    )
    with torch.no_grad():
        conv3d.weight.copy_(inflate_kernel(conv2d.weight, time_kernel))
        if conv2d.bias is not None:
            conv3d.bias.copy_(conv2d.bias)
    return conv3d


def inflate_weights(model2d, model3d):
    """Bootstrap model3d from a trained 2D baseline; the head keeps its fresh initialisation."""
    state2d = model2d.state_dict()
    inflated = {}
    for name, param3d in model3d.state_dict().items():
        if name.startswith("head."):
            inflated[name] = param3d
            continue
        if name not in state2d:
            raise ShapeMismatch(f"{name} has no 2D counterpart")
        param2d = state2d[name]
        if param3d.dim() == 5:
            if param2d.dim() != 4 or param2d.shape != param3d.shape[:2] + param3d.shape[3:]:
                raise ShapeMismatch(f"Cannot inflate {name}: {tuple(param2d.shape)} -> {tuple(param3d.shape)}")
            inflated[name] = inflate_kernel(param2d, param3d.shape[2])
            logger.debug("Inflated %s: %s -> %s", name, tuple(param2d.shape), tuple(param3d.shape))
        elif param2d.shape == param3d.shape:
            inflated[name] = param2d.clone()
        else:
            raise ShapeMismatch(f"Shape mismatch in {name}: {tuple(param2d.shape)} vs {tuple(param3d.shape)}")

    model3d.load_state_dict(inflated)
    model3d.meta.source = "inflated"
    return model3d


# =====================
# FORWARD
# =====================
@dataclass
class DensePrediction:
    scores: np.ndarray  # (G, L), softmax per column, column 0 = oldest
    anchor_t: int = -1


def predict_probabilities(model, batch):
    """(B, 3, L, H, W) -> (B, G, L) probabilities; the 2D baseline yields L = 1."""
    if model.meta.arch == "resnet2d":
        return F.softmax(model(batch[:, :, -1]), dim=1).unsqueeze(-1)
    return F.softmax(model(batch), dim=1)


def forward_dense(model, snippet_frames, anchor_t=-1):
    """Dense G x 16 estimate for one (3, 16, H, W) snippet."""
    if snippet_frames.dim() != 4 or snippet_frames.shape[0] != 3 or snippet_frames.shape[1] != SNIPPET_LENGTH:
        raise ShapeMismatch(f"Expected a (3, {SNIPPET_LENGTH}, H, W) snippet, got {tuple(snippet_frames.shape)}")
    device = next(model.parameters()).device
    model.eval()
    with torch.no_grad():
        probs = predict_probabilities(model, snippet_frames.unsqueeze(0).to(device))
    return DensePrediction(probs[0].double().cpu().numpy(), anchor_t)


# =====================
# CHECKPOINTS
# =====================
def save_checkpoint(model, path, epoch=None):
    """Write {format, arch, meta, state_dict} atomically."""
    if epoch is not None:
        model.meta.epoch = epoch
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "format": CHECKPOINT_FORMAT,
        "arch": model.meta.arch,
        "meta": asdict(model.meta),
        "state_dict": model.state_dict(),
    }
    tmp = path.with_name(path.name + ".tmp")
    torch.save(payload, tmp)
    os.replace(tmp, path)
    return path


def _read_archive(path):
    path = Path(path)
    if not path.is_file():
        raise IOFailure(f"Checkpoint {path} not found")
    try:
        return torch.load(path, map_location="cpu", weights_only=True)
    except OSError as e:
        raise IOFailure(f"Cannot read checkpoint {path}: {e}") from e
    except (RuntimeError, EOFError, pickle.UnpicklingError, zipfile.BadZipFile) as e:
        # truncated or corrupt archive
        raise MissingKey(f"Checkpoint {path} is truncated or corrupt: {e}") from e



def load_checkpoint(path):
    payload = _read_archive(path)
    if "meta" not in payload or "state_dict" not in payload:
        raise MissingKey(f"{path} is not a toolkit checkpoint (missing meta/state_dict)")
    meta = ModelMeta(**payload["meta"])
    model = build_model(meta.arch, meta.num_classes, meta.width, meta.shortcut)
    try:
        model.load_state_dict(payload["state_dict"])
    except RuntimeError as e:
        raise ShapeMismatch(f"Checkpoint {path} does not fit its own architecture: {e}") from e
    model.meta = meta
    return model


def load_external_pretrained(path, model):
    """Copy backbone parameters from an external checkpoint; mismatching heads stay freshly initialised."""
    payload = _read_archive(path)
    state = payload.get("state_dict", payload) if isinstance(payload, dict) else payload
    state = {k.removeprefix("module."): v for k, v in state.items()}

    loaded = {}
    for name, param in model.state_dict().items():
        source = state.get(name)
        if name.startswith(("head.", "fc.")):
            if source is not None and source.shape == param.shape:
                loaded[name] = source
            else:
                logger.info("Reinitialising %s (checkpoint has %s)", name,
                            None if source is None else tuple(source.shape))
                loaded[name] = param
            continue
        if source is None:
            raise MissingKey(f"Checkpoint {path} lacks parameter '{name}'")
        if source.shape != param.shape:
            raise ShapeMismatch(f"{name}: checkpoint {tuple(source.shape)} vs model {tuple(param.shape)}")
        loaded[name] = source

    model.load_state_dict(loaded)
    model.meta.source = "external-pretrained"
    return model
