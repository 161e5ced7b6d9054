"""Feature-divergence and smoothness objectives against hand oracles."""
import logging

import pytest
import torch

from advcamo.errors import ShapeMismatch
from advcamo.losses import (
    AttackConfig,
    KeyFeatureSet,
    feature_divergence_loss,
    row_cosine,
    select_key_features,
    smoothness_loss,
    total_objective,
)
from advcamo.victims import FeatureStack


def _stack(*tensors, names=("encoder", "projector")):
    return FeatureStack({n: t for n, t in zip(names, tensors)})


# -- config ------------------------------------------------------------------


def test_attack_config_defaults():
    cfg = AttackConfig()
    assert cfg.delta == 0.8
    assert cfg.layer_weights == {"encoder": 0.4, "projector": 0.6}
    assert cfg.lambda_smooth == 1e-4
    assert cfg.smooth_on == "render"
    assert cfg.reselect_every == 1


def test_attack_config_validation():
    with pytest.raises(ShapeMismatch):
        AttackConfig(delta=1.5)
    with pytest.raises(ShapeMismatch):
        AttackConfig(delta=-1.5)
    with pytest.raises(ShapeMismatch):
        AttackConfig(lambda_smooth=-1.0)
    with pytest.raises(ShapeMismatch):
        AttackConfig(smooth_on="paint")
    with pytest.raises(ShapeMismatch):
        AttackConfig(reselect_every=0)
    with pytest.raises(ShapeMismatch):
        AttackConfig(layer_weights={})
    # negative delta is legal: cosines live in [-1, 1]
    AttackConfig(delta=-0.5)


# -- cosine and key selection --------------------------------------------------


def test_row_cosine_basic():
    a = torch.tensor([[1.0, 0.0], [0.0, 2.0], [1.0, 1.0]])
    b = torch.tensor([[1.0, 0.0], [0.0, -3.0], [1.0, -1.0]])
    cos = row_cosine(a, b)
    assert torch.allclose(cos, torch.tensor([1.0, -1.0, 0.0]), atol=1e-6)


def test_row_cosine_clamped():
    a = torch.full((2, 4), 1e-30)
    b = torch.full((2, 4), 1e-30)
    cos = row_cosine(a, b)
    assert torch.all(cos <= 1.0) and torch.all(cos >= -1.0)


def test_identical_stacks_key_selection():
    t = torch.randn(10, 6)
    clean = _stack(t, torch.randn(4, 3))
    adv = _stack(t.clone(), clean["projector"].clone())
    # identical features: every cosine is 1, so nothing clears delta < 1
    keys = select_key_features(clean, adv, delta=0.8, iteration=0)
    assert all(len(v) == 0 for v in keys.indices.values())
    # delta = 1 admits everything
    keys = select_key_features(clean, adv, delta=1.0, iteration=3)
    assert [len(keys.indices[n]) for n in ("encoder", "projector")] == [10, 4]
    assert keys.snapshot_iteration == 3


def test_key_selection_threshold_boundary():
    clean = _stack(torch.tensor([[1.0, 0.0], [1.0, 0.0], [1.0, 0.0]]),
                   torch.ones(1, 2))
    # cosines against clean rows: 1.0, 0.0, -1.0
    adv = _stack(torch.tensor([[2.0, 0.0], [0.0, 5.0], [-1.0, 0.0]]),
                 torch.ones(1, 2))
    keys = select_key_features(clean, adv, delta=0.0, iteration=0)
    # rows with cos <= 0: the orthogonal and the opposite one
    assert keys.indices["encoder"].tolist() == [1, 2]


def test_key_selection_monotone_in_delta():
    g = torch.Generator().manual_seed(42)
    for _ in range(20):
        clean = _stack(torch.randn(30, 8, generator=g), torch.randn(12, 5, generator=g))
        adv = _stack(torch.randn(30, 8, generator=g), torch.randn(12, 5, generator=g))
        prev = None
        for delta in (0.0, 0.25, 0.5, 0.75, 1.0):
            keys = select_key_features(clean, adv, delta, 0)
            size = sum(len(v) for v in keys.indices.values())
            if prev is not None:
                assert size >= prev
            prev = size


def test_key_sizes():
    keys = KeyFeatureSet(
        indices={"encoder": torch.tensor([1, 2, 3]), "projector": torch.tensor([], dtype=torch.long)},
        snapshot_iteration=0,
    )
    assert keys.sizes() == {"encoder": 3, "projector": 0}


# -- divergence loss -----------------------------------------------------------


def test_divergence_weighted_arithmetic():
    """Forced mean cosines (0.2, 0.5) with weights (0.4, 0.6) give 0.38."""
    clean = _stack(torch.tensor([[1.0, 0.0]]), torch.tensor([[1.0, 0.0]]))
    # encoder row at cos 0.2, projector row at cos 0.5 against clean
    adv = _stack(
        torch.tensor([[0.2, float((1 - 0.2**2) ** 0.5)]]),
        torch.tensor([[0.5, float((1 - 0.5**2) ** 0.5)]]),
    )
    keys = KeyFeatureSet(
        indices={"encoder": torch.tensor([0]), "projector": torch.tensor([0])},
        snapshot_iteration=0,
    )
    loss = feature_divergence_loss(clean, adv, keys, {"encoder": 0.4, "projector": 0.6})
    assert abs(float(loss) - 0.38) <= 1e-6


def test_divergence_float64_precision():
    clean = _stack(
        torch.tensor([[1.0, 0.0]], dtype=torch.float64),
        torch.tensor([[1.0, 0.0]], dtype=torch.float64),
    )
    adv = _stack(
        torch.tensor([[0.2, (1 - 0.04) ** 0.5]], dtype=torch.float64),
        torch.tensor([[0.5, (1 - 0.25) ** 0.5]], dtype=torch.float64),
    )
    keys = KeyFeatureSet(
        indices={"encoder": torch.tensor([0]), "projector": torch.tensor([0])},
        snapshot_iteration=0,
    )
    loss = feature_divergence_loss(clean, adv, keys, {"encoder": 0.4, "projector": 0.6})
    assert abs(float(loss) - 0.38) <= 1e-12


def test_divergence_means_over_key_rows_only():
    clean = _stack(torch.eye(4), torch.ones(1, 2))
    adv = _stack(torch.eye(4), torch.ones(1, 2))
    # only rows 0 and 2 count; they are identical so mean cosine is 1
    keys = KeyFeatureSet(
        indices={"encoder": torch.tensor([0, 2]), "projector": torch.tensor([], dtype=torch.long)},
        snapshot_iteration=0,
    )
    loss = feature_divergence_loss(clean, adv, keys, {"encoder": 1.0, "projector": 1.0})
    assert float(loss) == pytest.approx(1.0, abs=1e-6)


def test_divergence_empty_key_set_warns(caplog):
    clean = _stack(torch.randn(5, 3), torch.randn(2, 2))
    adv = _stack(torch.randn(5, 3), torch.randn(2, 2))
    keys = KeyFeatureSet(
        indices={
            "encoder": torch.tensor([], dtype=torch.long),
            "projector": torch.tensor([], dtype=torch.long),
        },
        snapshot_iteration=0,
    )
    with caplog.at_level(logging.WARNING):
        loss = feature_divergence_loss(clean, adv, keys, {"encoder": 0.4, "projector": 0.6})
    assert float(loss) == 0.0
    assert any("empty" in r.message.lower() for r in caplog.records)


def test_divergence_missing_layer_entry():
    clean = _stack(torch.randn(5, 3), torch.randn(2, 2))
    adv = _stack(torch.randn(5, 3), torch.randn(2, 2))
    keys = KeyFeatureSet(indices={"encoder": torch.tensor([0])}, snapshot_iteration=0)
    with pytest.raises(ShapeMismatch):
        feature_divergence_loss(clean, adv, keys, {"encoder": 0.5, "projector": 0.5})


def test_divergence_index_out_of_range():
    clean = _stack(torch.randn(3, 2), torch.randn(2, 2))
    adv = _stack(torch.randn(3, 2), torch.randn(2, 2))
    keys = KeyFeatureSet(
        indices={"encoder": torch.tensor([7]), "projector": torch.tensor([], dtype=torch.long)},
        snapshot_iteration=0,
    )
    with pytest.raises(ShapeMismatch):
        feature_divergence_loss(clean, adv, keys, {"encoder": 1.0})


def test_divergence_gradient_flows():
    clean = _stack(torch.randn(6, 4), torch.randn(3, 4))
    adv_e = torch.randn(6, 4, requires_grad=True)
    adv_p = torch.randn(3, 4, requires_grad=True)
    adv = _stack(adv_e, adv_p)
    keys = select_key_features(clean, adv, delta=1.0, iteration=0)
    loss = feature_divergence_loss(clean, adv, keys, {"encoder": 0.4, "projector": 0.6})
    loss.backward()
    assert adv_e.grad is not None and adv_p.grad is not None


# -- smoothness ----------------------------------------------------------------


def test_smoothness_hand_oracle():
    img = torch.tensor([[0.0, 1.0], [0.0, 1.0]])
    assert float(smoothness_loss(img)) == 2.0


def test_smoothness_constant_is_zero():
    for c in (0.0, 0.5, 1.0):
        img = torch.full((5, 7, 3), c)
        assert float(smoothness_loss(img)) == 0.0


def test_smoothness_multichannel_sums_channels():
    img = torch.zeros(2, 2, 3)
    img[:, 1, :] = 1.0  # each channel is the 2x2 oracle
    assert float(smoothness_loss(img)) == 6.0


def test_smoothness_known_3x3():
    img = torch.tensor([[0.0, 1.0, 0.0],
                        [1.0, 0.0, 1.0],
                        [0.0, 1.0, 0.0]])
    # every horizontal neighbor pair differs by 1 (6 pairs), same vertically
    assert float(smoothness_loss(img)) == 12.0


def test_smoothness_mask_needs_both_endpoints():
    img = torch.tensor([[0.0, 1.0], [0.0, 1.0]])
    mask = torch.tensor([[True, False], [True, False]])
    # only the left column survives; its vertical neighbors are equal
    assert float(smoothness_loss(img, mask)) == 0.0
    mask_all = torch.ones(2, 2, dtype=torch.bool)
    assert float(smoothness_loss(img, mask_all)) == 2.0


def test_smoothness_rejects_bad_shapes():
    with pytest.raises(ShapeMismatch):
        smoothness_loss(torch.zeros(5))
    with pytest.raises(ShapeMismatch):
        smoothness_loss(torch.zeros(2, 2), torch.zeros(3, 3, dtype=torch.bool))


def test_smoothness_gradient():
    img = torch.rand(6, 6, 3, requires_grad=True)
    smoothness_loss(img).backward()
    assert img.grad is not None and img.grad.abs().sum() > 0


# -- total objective -------------------------------------------------------------


def test_total_objective_composition():
    cfg = AttackConfig(lambda_smooth=0.5)
    clean = _stack(torch.tensor([[1.0, 0.0]]), torch.tensor([[1.0, 0.0]]))
    adv = _stack(torch.tensor([[1.0, 0.0]]), torch.tensor([[1.0, 0.0]]))
    keys = KeyFeatureSet(
        indices={"encoder": torch.tensor([0]), "projector": torch.tensor([0])},
        snapshot_iteration=0,
    )
    img = torch.tensor([[0.0, 1.0], [0.0, 1.0]]).unsqueeze(-1).expand(2, 2, 3).contiguous()
    total = total_objective(clean, adv, keys, img, cfg)
    # divergence 0.4*1 + 0.6*1 = 1, smoothness 6, lambda 0.5
    assert float(total) == pytest.approx(1.0 + 0.5 * 6.0, abs=1e-6)


def test_total_objective_respects_mask():
    cfg = AttackConfig(lambda_smooth=1.0)
    clean = _stack(torch.randn(2, 2), torch.randn(2, 2))
    adv = _stack(torch.randn(2, 2), torch.randn(2, 2))
    img = torch.tensor([[0.0, 1.0], [0.0, 1.0]]).unsqueeze(-1).expand(2, 2, 3).contiguous()
    mask = torch.tensor([[True, False], [True, False]])
    none_keys = KeyFeatureSet(
        indices={"encoder": torch.tensor([], dtype=torch.long),
                 "projector": torch.tensor([], dtype=torch.long)},
        snapshot_iteration=0,
    )
    total = total_objective(clean, adv, none_keys, img, cfg, mask=mask)
    assert float(total) == 0.0
