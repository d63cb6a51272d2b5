import numpy as np
import pytest
import torch
from hypothesis import given
from hypothesis import strategies as st

from atara_lab.idm.config import (
    AugmentConfig,
    DadConfig,
    EncoderConfig,
    ModelConfig,
    TrainConfig,
    default_loss_weights,
)
from atara_lab.idm.model import (
    IdmModel,
    PatchEncoder,
    action_bounds,
    assemble_action,
    clamp_grippers,
    split_action,
)
from atara_lab.idm.preprocess import augment, eval_transform, resize_uint8, weighted_smooth_l1


# ---------------------------------------------------------------- configuration


def test_encoder_grid():
    assert EncoderConfig(input_size=126, patch_size=14).grid == 9
    assert EncoderConfig(input_size=518, patch_size=14).grid == 37
    assert 2 * EncoderConfig(input_size=518, patch_size=14).grid ** 2 == 2738
    with pytest.raises(ValueError):
        EncoderConfig(input_size=100, patch_size=14)


def test_head_widths():
    dad = DadConfig()
    assert len(dad.dilations) * dad.branch_channels == 256
    assert dad.head_width == 256
    assert dad.hidden == 512


def test_training_defaults():
    cfg = TrainConfig()
    assert cfg.batch_size == 8 and cfg.iterations == 96000 and cfg.warmup == 9600
    assert cfg.betas == (0.9, 0.999) and cfg.eps == 0.01 and cfg.weight_decay == 0.01
    assert (cfg.lr_encoder, cfg.lr_head, cfg.loss_beta) == (5e-5, 5e-4, 0.1)
    w = default_loss_weights()
    assert [i for i, v in enumerate(w) if v == 2.0] == [4, 11]
    assert cfg.scaled(2000).warmup == 200


def test_augment_defaults():
    cfg = AugmentConfig()
    assert cfg.background_prob == 0.4 and cfg.sharpness == 1.8 and cfg.sharpness_prob == 0.7


def test_model_config_roundtrip_and_hash():
    cfg = ModelConfig(head="mlp", decoupled=False)
    again = ModelConfig.from_dict(cfg.to_dict())
    assert again == cfg and again.hash() == cfg.hash()
    assert cfg.variant == "mlp-coupled"
    with pytest.raises(ValueError):
        ModelConfig(head="cnn")
    with pytest.raises(ValueError):
        ModelConfig.from_dict({"heads": "dad"})


# ---------------------------------------------------------------- loss


def test_loss_unit_values():
    w1 = np.ones(1)
    assert weighted_smooth_l1([0.05], [0.0], w1, 0.1) == pytest.approx(0.0125, abs=1e-15)
    assert weighted_smooth_l1([0.2], [0.0], [2.0], 0.1) == pytest.approx(0.3, abs=1e-15)
    for w in (1.0, 2.0):
        assert weighted_smooth_l1([0.1], [0.0], [w], 0.1) == pytest.approx(0.05 * w, abs=1e-15)


def test_loss_torch_matches_numpy(rng):
    p, t = rng.normal(size=(5, 14)), rng.normal(size=(5, 14))
    w = default_loss_weights()
    ref = weighted_smooth_l1(p, t, w)
    got = weighted_smooth_l1(torch.as_tensor(p), torch.as_tensor(t), w).item()
    assert got == pytest.approx(ref, rel=1e-12)
    with pytest.raises(ValueError):
        weighted_smooth_l1(p, t, w, beta=0.0)


_DELTA = st.one_of(st.just(0.0), st.floats(1e-6, 1))  # avoid squaring into float underflow


@given(_DELTA, _DELTA, st.floats(0.5, 3))
def test_loss_properties(a, b, w):
    lo, hi = sorted((a, b))
    fa = weighted_smooth_l1([lo], [0.0], [w])
    fb = weighted_smooth_l1([hi], [0.0], [w])
    assert 0 <= fa <= fb
    assert (fa == 0) == (lo == 0)
    left = weighted_smooth_l1([0.1 - 1e-12], [0.0], [w])
    assert abs(left - 0.05 * w) < 1e-10


# ---------------------------------------------------------------- assembly


def test_assemble_and_split():
    z = assemble_action(np.zeros(6), 0.0, np.zeros(6), 0.0)
    np.testing.assert_array_equal(z, np.zeros(14))
    a = assemble_action(np.arange(6), 0.3, np.arange(6) + 10, 0.9)
    assert a[6] == 0.3 and a[13] == 0.9
    l6, lg, r6, rg = split_action(a)
    np.testing.assert_array_equal(assemble_action(l6, lg, r6, rg), a)
    t = assemble_action(torch.zeros(2, 6), torch.ones(2, 1), torch.zeros(2, 6), torch.zeros(2, 1))
    assert t.shape == (2, 14) and t[0, 6] == 1


def test_gripper_clamp():
    a = np.zeros(14)
    a[6], a[13], a[0] = -0.2, 1.4, -3.0
    c = clamp_grippers(a)
    assert c[6] == 0 and c[13] == 1 and c[0] == -3.0
    torch.testing.assert_close(clamp_grippers(torch.as_tensor(a)), torch.as_tensor(c))


def test_action_bounds(chains):
    lo, hi = action_bounds(chains)
    assert lo[6] == 0 and hi[13] == 1
    np.testing.assert_array_equal(lo[0:6], chains[0].lo)


# ---------------------------------------------------------------- networks


def test_encoder_shapes_and_determinism(tiny_cfg):
    torch.manual_seed(0)
    enc = PatchEncoder(tiny_cfg().encoder).eval()
    x = torch.randn(2, 3, 28, 28)
    y = enc(x)
    assert y.shape == (2, 16, 2, 2)
    torch.testing.assert_close(enc(x), y, rtol=0, atol=0)
    with pytest.raises(ValueError):
        enc(torch.randn(1, 3, 30, 30))


@pytest.mark.parametrize("head,decoupled", [("dad", True), ("mlp", True), ("dad", False), ("mlp", False)])
def test_model_variants(chains, tiny_cfg, head, decoupled):
    torch.manual_seed(0)
    model = IdmModel(tiny_cfg(head, decoupled), chains).eval()
    batch = {k: torch.randn(3, 3, 28, 28) for k in model.inputs}
    out = model(batch)
    assert out.shape == (3, 14)
    enc = {id(p) for p in model.encoder_parameters()}
    head_ids = {id(p) for p in model.head_parameters()}
    assert enc and head_ids and not enc & head_ids
    assert enc | head_ids == {id(p) for p in model.parameters()}


def test_arm_head_output_width(chains, tiny_cfg):
    model = IdmModel(tiny_cfg(), chains).eval()
    y = torch.randn(1, 3, 28, 28)
    assert model.left_arm(y).shape == (1, 6)
    assert model.left_wrist(y).shape == (1, 1)


def test_feature_maps_can_be_supplied(chains, tiny_cfg):
    model = IdmModel(tiny_cfg(), chains).eval()
    x = torch.randn(1, 3, 28, 28)
    torch.testing.assert_close(model.left_arm.from_features(model.left_arm.encoder(x)), model.left_arm(x))


# ---------------------------------------------------------------- preprocessing


def test_resize_identity_and_size():
    img = np.random.default_rng(0).integers(0, 256, (20, 20, 3), dtype=np.uint8)
    np.testing.assert_array_equal(resize_uint8(img, 20), img)
    assert resize_uint8(img, 14).shape == (14, 14, 3)


def test_eval_augment_is_normalize_only():
    img = np.random.default_rng(1).integers(0, 256, (2, 8, 8, 3), dtype=np.uint8)
    cfg = AugmentConfig()
    torch.testing.assert_close(augment(img, cfg, None, train=False), eval_transform(img, cfg), rtol=0, atol=0)


def test_identity_jitter_is_normalize_only():
    img = np.random.default_rng(2).integers(60, 256, (2, 8, 8, 3), dtype=np.uint8)
    cfg = AugmentConfig(brightness=(1, 1), contrast=(1, 1), saturation=(1, 1), hue=0.0,
                        background_prob=0.0, sharpness_prob=0.0)
    out = augment(img, cfg, torch.Generator().manual_seed(0))
    torch.testing.assert_close(out, eval_transform(img, cfg), atol=1e-5, rtol=0)


def test_background_randomization_spares_arm():
    img = np.full((1, 16, 16, 3), 255, np.uint8)
    img[0, 4:12, 4:12] = 20
    cfg = AugmentConfig(brightness=(1, 1), contrast=(1, 1), saturation=(1, 1), hue=0.0,
                        background_prob=1.0, sharpness_prob=0.0)
    out = augment(img, cfg, torch.Generator().manual_seed(0))
    ref = eval_transform(img, cfg)
    arm = torch.zeros(16, 16, dtype=torch.bool)
    arm[4:12, 4:12] = True
    torch.testing.assert_close(out[0][:, arm], ref[0][:, arm], atol=1e-5, rtol=0)
    assert (out[0][:, ~arm] != ref[0][:, ~arm]).all(0).float().mean() > 0.99
