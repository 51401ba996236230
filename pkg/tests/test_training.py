import json
import math

import pytest
import torch
import torch.nn as nn
import torch.nn.functional as F
from torch.optim import Adam
from torch.optim.lr_scheduler import StepLR

from services import training
from services.config import TrainConfig
from services.data import FoldSpec, build_louo_folds
from services.errors import ConfigError, EmptyTrainSet, NonFiniteLoss
from services.model import build_2d_baseline, build_3d_dense_net, load_checkpoint
from services.training import (
    initial_model, learning_rate, loss_weights, snippet_accuracy, train, weighted_ce_from_logits, weighted_ce_loss,
)


def _one_hot_probs(labels, num_classes=10):
    return F.one_hot(torch.as_tensor(labels), num_classes).T.double()


# =====================
# Loss
# =====================
def test_loss_weights():
    omega = loss_weights(16)
    assert abs(omega.sum().item() - 1.0) < 1e-12
    assert abs(omega[0].item() - 256 / 1496) < 1e-12
    assert abs(omega[15].item() - 1 / 1496) < 1e-12
    assert torch.all(omega[:-1] > omega[1:])


def test_perfect_prediction_costs_nothing():
    labels = torch.arange(16) % 10
    assert weighted_ce_loss(_one_hot_probs(labels), labels).item() == pytest.approx(0.0, abs=1e-12)


def test_uniform_prediction_costs_log_g():
    probs = torch.full((10, 16), 0.1, dtype=torch.float64)
    labels = torch.zeros(16, dtype=torch.long)
    assert abs(weighted_ce_loss(probs, labels).item() - math.log(10)) < 1e-9


def test_only_newest_column_wrong():
    labels = torch.zeros(16, dtype=torch.long)
    probs = _one_hot_probs(labels)
    probs[:, -1] = 0.1
    loss = weighted_ce_loss(probs, labels).item()
    assert loss == pytest.approx(256 / 1496 * math.log(10), abs=1e-9)
    assert loss == pytest.approx(0.394, abs=1e-3)


def test_oldest_column_weighs_least():
    labels = torch.zeros(16, dtype=torch.long)
    newest, oldest = _one_hot_probs(labels), _one_hot_probs(labels)
    newest[:, -1] = 0.1
    oldest[:, 0] = 0.1
    assert weighted_ce_loss(oldest, labels) < weighted_ce_loss(newest, labels)


def test_loss_is_invariant_under_class_relabeling():
    torch.manual_seed(0)
    probs = torch.softmax(torch.randn(2, 6, 16, dtype=torch.float64), dim=1)
    labels = torch.randint(0, 6, (2, 16))
    perm = torch.randperm(6)
    permuted = torch.empty_like(probs)
    permuted[:, perm] = probs
    assert torch.allclose(weighted_ce_loss(permuted, perm[labels]), weighted_ce_loss(probs, labels))


def test_logits_and_probability_forms_agree():
    torch.manual_seed(1)
    logits = torch.randn(3, 10, 16, dtype=torch.float64)
    labels = torch.randint(0, 10, (3, 16))
    expected = weighted_ce_loss(torch.softmax(logits, dim=1), labels)
    assert torch.allclose(weighted_ce_from_logits(logits, labels), expected, atol=1e-9)


def test_zero_probability_is_clamped():
    labels = torch.zeros(16, dtype=torch.long)
    probs = _one_hot_probs(torch.ones(16, dtype=torch.long))
    loss = weighted_ce_loss(probs, labels)
    assert torch.isfinite(loss)
    assert loss.item() == pytest.approx(-math.log(1e-8), rel=1e-6)


def test_gradient_through_transposed_head():
    torch.manual_seed(0)
    head = nn.ConvTranspose1d(4, 3, kernel_size=11, stride=5).double()
    features = torch.randn(2, 4, 2, dtype=torch.float64, requires_grad=True)
    labels = torch.randint(0, 3, (2, 16))
    assert torch.autograd.gradcheck(lambda x: weighted_ce_from_logits(head(x), labels), (features,))


def _tiny_stack_loss(frames, conv1, conv2, head, labels):
    # two 3D convolutions, spatial mean, transposed temporal head: (B, 3, 4, 8, 8) -> (B, G, 4)
    x = torch.tanh(F.conv3d(frames, conv1, padding=1))
    x = torch.tanh(F.conv3d(x, conv2, padding=1, stride=(2, 1, 1)))
    return weighted_ce_from_logits(F.conv_transpose1d(x.mean(dim=(3, 4)), head, stride=2), labels)


def test_gradient_through_small_conv_stack():
    torch.manual_seed(0)
    inputs = (
        torch.randn(2, 3, 4, 8, 8, dtype=torch.float64, requires_grad=True),
        (0.3 * torch.randn(4, 3, 3, 3, 3, dtype=torch.float64)).requires_grad_(),
        (0.3 * torch.randn(4, 4, 3, 3, 3, dtype=torch.float64)).requires_grad_(),
        torch.randn(4, 3, 2, dtype=torch.float64, requires_grad=True),
    )
    labels = torch.randint(0, 3, (2, 4))
    assert _tiny_stack_loss(*inputs, labels).dim() == 0
    assert torch.autograd.gradcheck(lambda *args: _tiny_stack_loss(*args, labels), inputs,
                                    eps=1e-6, atol=1e-8, rtol=1e-3)



# =====================
# Schedule
# =====================
def test_learning_rate_steps():
    config = TrainConfig()
    assert learning_rate(config, 0) == pytest.approx(2.5e-4)
    assert learning_rate(config, 49) == pytest.approx(2.5e-4)
    assert learning_rate(config, 50) == pytest.approx(5e-5)
    assert learning_rate(config, 120) == pytest.approx(1e-5)


def test_learning_rate_matches_step_scheduler():
    config = TrainConfig()
    optimizer = Adam([nn.Parameter(torch.zeros(1))], lr=config.initial_lr)
    scheduler = StepLR(optimizer, step_size=config.lr_decay_every, gamma=1 / config.lr_decay_factor)
    for epoch in range(160):
        assert optimizer.param_groups[0]["lr"] == pytest.approx(learning_rate(config, epoch), rel=1e-9)
        optimizer.step()
        scheduler.step()


# =====================
# Initialisation
# =====================
def test_inflate_mode_needs_a_baseline():
    with pytest.raises(ConfigError):
        initial_model(TrainConfig(init_mode="inflate", width=4), 3)
    model = initial_model(TrainConfig(init_mode="inflate", width=4), 3, build_2d_baseline(3, width=4))
    assert model.meta.source == "inflated"


def test_external_mode_needs_a_path():
    with pytest.raises(ConfigError):
        initial_model(TrainConfig(init_mode="external", width=4), 3)


# =====================
# Optimisation loop
# =====================
def _fold(collection):
    return build_louo_folds(collection.records.values())[0]


def test_zero_epochs_leaves_model_untouched():
    model = build_3d_dense_net(3, width=4)
    before = {k: v.clone() for k, v in model.state_dict().items()}
    _, log = train(TrainConfig(epochs=0), FoldSpec("B", [], []), None, model, progress=False)
    assert log.epochs == []
    for name, value in model.state_dict().items():
        assert torch.equal(value, before[name])


def test_two_epoch_run(tiny_collection, tiny_config, tmp_path):
    config = tiny_config.with_overrides(epochs=2)
    model, log = train(config, _fold(tiny_collection), tiny_collection, build_3d_dense_net(3, width=4),
                       run_dir=tmp_path, progress=False)

    assert [r.epoch for r in log.epochs] == [0, 1]
    assert all(math.isfinite(loss) for loss in log.losses)
    assert all(sum(r.class_counts) == 8 for r in log.epochs)
    assert sorted(p.name for p in tmp_path.glob("checkpoint_*.pt")) == ["checkpoint_0001.pt", "checkpoint_0002.pt"]
    assert load_checkpoint(tmp_path / "checkpoint_0002.pt").meta.epoch == 2
    lines = (tmp_path / "train_log.jsonl").read_text().splitlines()
    assert [json.loads(line)["epoch"] for line in lines] == [0, 1]
    assert model.meta.epoch == 2


def test_training_is_reproducible(tiny_collection, tiny_config):
    fold = _fold(tiny_collection)
    config = tiny_config.with_overrides(augment=False)
    torch.manual_seed(0)
    _, first = train(config, fold, tiny_collection, build_3d_dense_net(3, width=4), progress=False)
    torch.manual_seed(0)
    _, second = train(config, fold, tiny_collection, build_3d_dense_net(3, width=4), progress=False)
    assert first.losses == pytest.approx(second.losses, rel=1e-5)


def test_loss_falls_over_the_first_ten_epochs(tiny_collection, tiny_config):
    config = tiny_config.with_overrides(epochs=10, batch_size=16, snippets_per_epoch=64, initial_lr=1e-3,
                                        augment=False, checkpoint_every=10)
    torch.manual_seed(0)
    _, log = train(config, _fold(tiny_collection), tiny_collection, build_3d_dense_net(3, width=8), progress=False)

    losses = log.losses
    assert len(losses) == 10
    assert sum(later > earlier for earlier, later in zip(losses, losses[1:])) <= 2
    assert losses[-1] < losses[0]



def test_2d_baseline_trains_on_single_frames(tiny_collection, tiny_config):
    config = tiny_config.with_overrides(arch="resnet2d")
    model, log = train(config, _fold(tiny_collection), tiny_collection, build_2d_baseline(3, width=4),
                       progress=False)
    assert len(log.epochs) == 1
    assert math.isfinite(log.losses[0])

    items = tiny_collection.items(_fold(tiny_collection).train_videos)
    anchors = [(items[0][0].video_id, items[0][1].labeled_start)]
    assert 0.0 <= snippet_accuracy(model, items, anchors, config) <= 1.0


def test_fold_without_training_videos(tiny_collection, tiny_config):
    with pytest.raises(EmptyTrainSet):
        train(tiny_config, FoldSpec("B", [], ["Synth_B001"]), tiny_collection, build_3d_dense_net(3, width=4),
              progress=False)


def test_non_finite_loss_aborts(tiny_collection, tiny_config, monkeypatch):
    monkeypatch.setattr(training, "batch_loss", lambda model, frames, labels: torch.tensor(float("nan")))
    with pytest.raises(NonFiniteLoss):
        train(tiny_config, _fold(tiny_collection), tiny_collection, build_3d_dense_net(3, width=4), progress=False)
