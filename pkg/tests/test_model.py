import numpy as np
import pytest
import torch
import torch.nn as nn

from services.errors import IOFailure, MissingKey, ShapeMismatch
from services.model import (
    build_2d_baseline, build_3d_dense_net, build_model, dense_net_layer_specs, forward_dense, inflate_conv,
    inflate_kernel, inflate_weights, load_checkpoint, load_external_pretrained, predict_probabilities,
    propagate_shapes, save_checkpoint,
)


def test_shape_ledger():
    ledger = dict(propagate_shapes(dense_net_layer_specs(10)))
    assert ledger["conv1"] == (64, 16, 112, 112)
    assert ledger["maxpool"] == (64, 16, 56, 56)
    assert ledger["layer1"] == (64, 16, 56, 56)
    assert ledger["layer2"] == (128, 8, 28, 28)
    assert ledger["layer3"] == (256, 4, 14, 14)
    assert ledger["layer4"] == (512, 2, 7, 7)
    assert ledger["avgpool"] == (512, 2, 1, 1)
    assert ledger["head"] == (10, 16)


def test_ledger_rejects_uncollapsed_head_input():
    specs = [s for s in dense_net_layer_specs(10) if s.name != "avgpool"]
    with pytest.raises(ShapeMismatch):
        propagate_shapes(specs)


def test_full_size_forward_shape():
    torch.manual_seed(0)
    model = build_3d_dense_net(10, width=8)
    assert model.head.in_channels == 64 and model.head.out_channels == 10
    prediction = forward_dense(model, torch.randn(3, 16, 224, 224))
    assert prediction.scores.shape == (10, 16)


def test_dense_columns_are_distributions():
    torch.manual_seed(0)
    model = build_3d_dense_net(5, width=4)
    x = torch.randn(3, 16, 32, 32)
    prediction = forward_dense(model, x, anchor_t=7)
    assert prediction.scores.shape == (5, 16)
    assert prediction.anchor_t == 7
    np.testing.assert_allclose(prediction.scores.sum(axis=0), 1.0, atol=1e-5)
    np.testing.assert_array_equal(forward_dense(model, x).scores, prediction.scores)


def test_forward_rejects_short_snippet():
    with pytest.raises(ShapeMismatch):
        forward_dense(build_3d_dense_net(5, width=4), torch.randn(3, 8, 32, 32))


def test_2d_baseline():
    assert build_2d_baseline(10).fc.in_features == 512
    model = build_2d_baseline(10, width=4).eval()
    assert model.fc.out_features == 10
    with torch.no_grad():
        probs = predict_probabilities(model, torch.zeros(1, 3, 1, 32, 32))
    assert probs.shape == (1, 10, 1)
    assert torch.isfinite(probs).all()
    assert probs.sum().item() == pytest.approx(1.0, abs=1e-5)


def test_zero_pad_shortcut_has_no_projection_weights():
    model = build_model("dense3d", 4, width=4, shortcut="A")
    assert not any("downsample" in name for name in model.state_dict())
    with torch.no_grad():
        assert model(torch.randn(2, 3, 16, 32, 32)).shape == (2, 4, 16)


# =====================
# Inflation
# =====================
def test_constant_kernel_inflation():
    inflated = inflate_kernel(torch.ones(2, 3, 3, 3), 3)
    assert inflated.shape == (2, 3, 3, 3, 3)
    assert torch.allclose(inflated, torch.full_like(inflated, 1 / 3))


def test_first_layer_gets_seven_scaled_copies():
    model2d, model3d = build_2d_baseline(4, width=4), build_3d_dense_net(4, width=4)
    head = model3d.head.weight.detach().clone()
    inflate_weights(model2d, model3d)

    assert model3d.conv1.weight.shape == (4, 3, 7, 7, 7)
    for t in range(7):
        torch.testing.assert_close(model3d.conv1.weight[:, :, t], model2d.conv1.weight / 7)
    assert torch.equal(model3d.head.weight, head)
    assert torch.equal(model3d.layer3[0].bn1.weight, model2d.layer3[0].bn1.weight)
    assert model3d.meta.source == "inflated"


def test_inflated_conv_responds_like_2d_on_static_input():
    torch.manual_seed(0)
    conv2d = nn.Conv2d(3, 5, 3, padding=1).double()
    conv3d = inflate_conv(conv2d, 3).double()
    x = torch.randn(2, 3, 8, 8, dtype=torch.float64)
    with torch.no_grad():
        out2d = conv2d(x)
        out3d = conv3d(x.unsqueeze(2).repeat(1, 1, 6, 1, 1))
    for t in range(1, 5):
        torch.testing.assert_close(out3d[:, :, t], out2d, atol=1e-5, rtol=0)


def test_inflated_network_layers_match_2d_on_static_input():
    torch.manual_seed(0)
    model2d = build_2d_baseline(4, width=4).double().eval()
    model3d = inflate_weights(model2d, build_3d_dense_net(4, width=4).double()).eval()

    x = torch.randn(1, 3, 32, 32, dtype=torch.float64)
    features = torch.randn(1, 4, 8, 8, dtype=torch.float64)
    with torch.no_grad():
        stem2d = model2d.bn1(model2d.conv1(x))
        stem3d = model3d.bn1(model3d.conv1(x.unsqueeze(2).repeat(1, 1, 16, 1, 1)))
        block2d = model2d.layer1[0](features)
        block3d = model3d.layer1[0](features.unsqueeze(2).repeat(1, 1, 8, 1, 1))
    # positions whose temporal receptive field lies inside the clip
    for t in range(3, 13):
        torch.testing.assert_close(stem3d[:, :, t], stem2d, atol=1e-5, rtol=0)
    for t in range(2, 6):
        torch.testing.assert_close(block3d[:, :, t], block2d, atol=1e-5, rtol=0)


def test_inflation_width_mismatch():
    with pytest.raises(ShapeMismatch):
        inflate_weights(build_2d_baseline(4, width=4), build_3d_dense_net(4, width=8))


# =====================
# Checkpoints
# =====================
@pytest.mark.parametrize("arch", ["dense3d", "resnet2d"])
def test_checkpoint_round_trip(tmp_path, arch):
    model = build_model(arch, 6, width=4)
    path = save_checkpoint(model, tmp_path / "model.pt", epoch=3)
    loaded = load_checkpoint(path)
    assert loaded.meta == model.meta
    assert loaded.meta.epoch == 3
    for name, value in model.state_dict().items():
        assert torch.equal(loaded.state_dict()[name], value)
    assert not list(tmp_path.glob("*.tmp"))


def _external(tmp_path, model, prefix="module.", drop=()):
    state = {f"{prefix}{k}": v for k, v in model.state_dict().items() if not k.startswith(drop)}
    path = tmp_path / "external.pth"
    torch.save({"state_dict": state}, path)
    return path


def test_external_checkpoint_with_foreign_head(tmp_path):
    source = build_3d_dense_net(400, width=4)
    target = build_3d_dense_net(10, width=4)
    head = target.head.weight.detach().clone()
    load_external_pretrained(_external(tmp_path, source), target)

    assert torch.equal(target.conv1.weight, source.conv1.weight)
    assert torch.equal(target.layer4[1].conv2.weight, source.layer4[1].conv2.weight)
    assert torch.equal(target.head.weight, head)
    assert target.meta.source == "external-pretrained"


def test_external_checkpoint_with_matching_shapes_is_copied_exactly(tmp_path):
    source = build_3d_dense_net(10, width=4)
    target = build_3d_dense_net(10, width=4)
    load_external_pretrained(_external(tmp_path, source, prefix=""), target)
    for name, value in source.state_dict().items():
        assert torch.equal(target.state_dict()[name], value)


def test_external_checkpoint_missing_parameters(tmp_path):
    path = _external(tmp_path, build_3d_dense_net(10, width=4), drop=("layer4.",))
    with pytest.raises(MissingKey):
        load_external_pretrained(path, build_3d_dense_net(10, width=4))


def test_missing_checkpoint_file(tmp_path):
    with pytest.raises(IOFailure):
        load_checkpoint(tmp_path / "absent.pt")


def test_garbage_checkpoint(tmp_path):
    path = tmp_path / "broken.pt"
    path.write_bytes(b"not a torch archive")
    with pytest.raises(MissingKey):
        load_checkpoint(path)


def test_truncated_checkpoint(tmp_path):
    path = save_checkpoint(build_3d_dense_net(10, width=4), tmp_path / "model.pt")
    data = path.read_bytes()
    path.write_bytes(data[:len(data) // 2])
    with pytest.raises(MissingKey):
        load_checkpoint(path)
    with pytest.raises(MissingKey):
        load_external_pretrained(path, build_3d_dense_net(10, width=4))

