"""Temporally weighted cross-entropy and the optimisation loop."""
import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from torch.optim import Adam
from torch.optim.lr_scheduler import StepLR
from torch.utils.data import DataLoader
from tqdm import tqdm

from .config import TrainConfig, resolve_device
from .data import SnippetDataset, sample_balanced_epoch
from .errors import ConfigError, EmptyTrainSet, NonFiniteLoss
from .model import build_model, inflate_weights, load_external_pretrained, predict_probabilities, save_checkpoint

logger = logging.getLogger(__name__)

PROBABILITY_EPS = 1e-8


# =====================
# LOSS
# =====================
def loss_weights(length=16, dtype=torch.float64):
    """omega_i = (L - i)^2 / sum_j (L - j)^2, index i = distance from the newest frame."""
    if length < 1:
        raise ConfigError(f"Snippet length must be positive, got {length}")
    squares = torch.arange(length, 0, -1, dtype=dtype) ** 2
    return squares / squares.sum()


def column_weights(length, dtype=torch.float64, device=None):
    # prediction column c (0 = oldest) is at distance L-1-c from the newest frame
    return loss_weights(length, dtype).flip(0).to(device)


def weighted_ce_loss(probs, labels, eps=PROBABILITY_EPS):
    """sum_i omega_i * -log p(label_i), averaged over the batch. probs: (G, L) or (B, G, L)."""
    probs = torch.as_tensor(probs)
    labels = torch.as_tensor(labels, dtype=torch.long, device=probs.device)
    if probs.dim() == 2:
        probs, labels = probs.unsqueeze(0), labels.unsqueeze(0)
    picked = probs.gather(1, labels.unsqueeze(1)).squeeze(1)
    nll = -torch.log(picked.clamp_min(eps))
    weights = column_weights(probs.shape[-1], probs.dtype, probs.device)
    return (nll * weights).sum(dim=1).mean()


def weighted_ce_from_logits(logits, labels):
    """Same loss from pre-softmax scores (B, G, L), computed with log-softmax."""
    nll = F.cross_entropy(logits, labels, reduction="none")
    weights = column_weights(logits.shape[-1], logits.dtype, logits.device)
    return (nll * weights).sum(dim=1).mean()


def batch_loss(model, frames, labels):
    if model.meta.arch == "resnet2d":
        return F.cross_entropy(model(frames[:, :, -1]), labels[:, -1])
    return weighted_ce_from_logits(model(frames), labels)


def learning_rate(config, epoch):
    """Piecewise-constant schedule: divided by lr_decay_factor every lr_decay_every epochs."""
    return config.initial_lr / config.lr_decay_factor ** (epoch // config.lr_decay_every)


# =====================
# TRAINING LOG
# =====================
@dataclass
class EpochRecord:
    epoch: int
    mean_loss: float
    lr: float
    class_counts: list
    wall_time: float


@dataclass
class TrainLog:
    epochs: list = field(default_factory=list)
    checkpoints: list = field(default_factory=list)

    def append(self, record):
        if self.epochs and record.epoch != self.epochs[-1].epoch + 1:
            raise ValueError(f"Epoch {record.epoch} does not follow {self.epochs[-1].epoch}")
        self.epochs.append(record)

    @property
    def losses(self):
        return [r.mean_loss for r in self.epochs]

    def write_jsonl(self, path):
        with Path(path).open("w") as fh:
            for record in self.epochs:
                fh.write(json.dumps(asdict(record)) + "\n")


# =====================
# INITIALISATION
# =====================
def initial_model(config, num_classes, model2d=None):
    """Model for config.arch initialised per config.init_mode."""
    model = build_model(config.arch, num_classes, config.width, config.shortcut, config.imagenet_pretrained)
    if config.init_mode == "inflate":
        if model2d is None:
            raise ConfigError("init_mode=inflate needs a trained 2D baseline")
        inflate_weights(model2d, model)
    elif config.init_mode == "external":
        if not config.pretrained_path:
            raise ConfigError("init_mode=external needs pretrained_path")
        load_external_pretrained(config.pretrained_path, model)
    return model


# =====================
# OPTIMISATION LOOP
# =====================
def _loader(dataset, config, device):
    drop_last = len(dataset) > config.batch_size
    return DataLoader(dataset, batch_size=config.batch_size, shuffle=False, drop_last=drop_last,
                      num_workers=config.num_workers, pin_memory=device.type == "cuda")


def train(config: TrainConfig, fold, collection, model, run_dir=None, progress=True):
    """Train model on the fold's training videos; returns (model, TrainLog)."""
    log = TrainLog()
    if config.epochs == 0:
        return model, log

    items = collection.items(fold.train_videos, config.working_fps)
    if not items:
        raise EmptyTrainSet(f"Fold holding out {fold.held_out_subject} has no training videos")

    torch.manual_seed(config.seed)
    if config.num_workers == 0:
        torch.use_deterministic_algorithms(True, warn_only=True)

    device = resolve_device(config.device)
    model.to(device)
    num_classes = model.meta.num_classes
    sequences = {record.video_id: seq for record, seq in items}

    optimizer = Adam(model.parameters(), lr=config.initial_lr, betas=(0.9, 0.999), eps=1e-8)
    scheduler = StepLR(optimizer, step_size=config.lr_decay_every, gamma=1.0 / config.lr_decay_factor)

    epochs = tqdm(range(config.epochs), desc=f"train[{fold.held_out_subject}]", disable=not progress)
    for epoch in epochs:
        started = time.perf_counter()
        anchors = sample_balanced_epoch(items, config.snippets_per_epoch, [config.seed, epoch],
                                        num_classes, report_absent=epoch == 0)
        dataset = SnippetDataset(items, anchors, config.effective_length, config.load_size, config.input_size,
                                 config.augment, config.seed, epoch, config.hflip)

        model.train()
        total, seen = 0.0, 0
        for frames, labels in _loader(dataset, config, device):
            frames, labels = frames.to(device), labels.to(device)
            loss = batch_loss(model, frames, labels)
            if not torch.isfinite(loss):
                raise NonFiniteLoss(f"Epoch {epoch}: loss became {loss.item()} after {seen} snippets")
            optimizer.zero_grad(set_to_none=True)
            loss.backward()
            optimizer.step()
            total += loss.item() * len(labels)
            seen += len(labels)

        lr = optimizer.param_groups[0]["lr"]
        scheduler.step()
        counts = np.bincount([sequences[v].labels[t] for v, t in anchors], minlength=num_classes)
        record = EpochRecord(epoch, total / max(seen, 1), lr, counts.tolist(), time.perf_counter() - started)
        log.append(record)
        epochs.set_postfix(loss=f"{record.mean_loss:.4f}", lr=f"{lr:.2e}")
        logger.debug("epoch %d loss %.5f lr %.2e", epoch, record.mean_loss, lr)

        if run_dir is not None and ((epoch + 1) % config.checkpoint_every == 0 or epoch + 1 == config.epochs):
            path = save_checkpoint(model, Path(run_dir) / f"checkpoint_{epoch + 1:04d}.pt", epoch + 1)
            log.checkpoints.append(str(path))

    model.meta.epoch = config.epochs
    if run_dir is not None:
        log.write_jsonl(Path(run_dir) / "train_log.jsonl")
    logger.info("Trained %s for fold %s: final loss %.4f", model.meta.arch, fold.held_out_subject,
                log.losses[-1])
    return model, log


def snippet_accuracy(model, items, anchors, config, batch_size=16):
    """Frame accuracy over every position of the given training snippets (no augmentation)."""
    device = next(model.parameters()).device
    dataset = SnippetDataset(items, anchors, config.effective_length, config.load_size, config.input_size)
    model.eval()
    correct, total = 0, 0
    with torch.no_grad():
        for frames, labels in DataLoader(dataset, batch_size=batch_size):
            probs = predict_probabilities(model, frames.to(device))
            predicted = probs.argmax(dim=1).cpu()
            correct += int((predicted == labels[:, -predicted.shape[1]:]).sum())
            total += predicted.numel()
    return correct / max(total, 1)
