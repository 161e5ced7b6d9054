"""Surrogate vision-language victim: determinism, shapes, routing."""
import numpy as np
import pytest
import torch

from advcamo.errors import EmptyText, LayerNotExposed, ShapeMismatch
from advcamo.victims import (
    CAPTION_BANKS,
    SCENARIOS,
    FeatureStack,
    SurrogateVictim,
    available_victims,
    extract_features,
    feature_stats,
    generate,
    get_victim,
    load_victim,
    route_scenario,
    save_victim,
)


def _img(seed=0):
    rng = np.random.default_rng(seed)
    return torch.from_numpy(rng.random((224, 224, 3))).to(torch.float32)


def test_scenarios_and_banks():
    assert SCENARIOS == ("planning", "prediction", "perception")
    for s in SCENARIOS:
        assert len(CAPTION_BANKS[s]) == 8
        assert len(set(CAPTION_BANKS[s])) == 8


def test_route_scenario():
    assert route_scenario("What should the ego vehicle do next?") == "planning"
    assert route_scenario("Predict what the car ahead will do.") == "prediction"
    assert route_scenario("Describe the scene ahead.") == "perception"
    # no keywords: default to perception
    assert route_scenario("hmm") == "perception"
    # prediction keywords outrank planning ones when both appear
    assert route_scenario("what will happen if we plan this") == "prediction"


def test_feature_shapes(victim):
    stack = victim.extract_features(_img())
    assert list(stack.layers) == ["encoder", "projector"]
    assert stack["encoder"].shape == (196, 64)
    assert stack["projector"].shape == (32, 128)
    with pytest.raises(LayerNotExposed):
        stack["pixels"]


def test_layer_subset(victim):
    stack = victim.extract_features(_img(), layers=("projector",))
    assert list(stack.layers) == ["projector"]
    with pytest.raises(LayerNotExposed):
        victim.extract_features(_img(), layers=("logits",))


def test_weights_frozen(victim):
    for w in victim.weights.values():
        assert not w.requires_grad


def test_same_seed_same_victim():
    a = SurrogateVictim.create(seed=7)
    b = SurrogateVictim.create(seed=7)
    img = _img(3)
    fa = a.extract_features(img)
    fb = b.extract_features(img)
    assert torch.equal(fa["encoder"], fb["encoder"])
    assert torch.equal(fa["projector"], fb["projector"])


def test_different_seed_different_victim():
    img = _img(3)
    fa = SurrogateVictim.create(seed=1).extract_features(img)
    fb = SurrogateVictim.create(seed=2).extract_features(img)
    assert not torch.equal(fa["projector"], fb["projector"])


def test_features_differentiable(victim):
    img = _img().clone().requires_grad_(True)
    stack = victim.extract_features(img)
    stack["projector"].sum().backward()
    assert img.grad is not None
    assert torch.isfinite(img.grad).all()
    assert img.grad.abs().sum() > 0


def test_input_size_enforced(victim):
    with pytest.raises(ShapeMismatch):
        victim.extract_features(torch.rand(100, 100, 3))


def test_generate_closed_set(victim):
    img = _img(5)
    for prompt, scenario in [
        ("What should the car do?", "planning"),
        ("What will the vehicle ahead do?", "prediction"),
        ("Describe what you see.", "perception"),
    ]:
        text = victim.generate(img, prompt)
        assert text in CAPTION_BANKS[scenario]


def test_generate_deterministic(victim):
    img = _img(9)
    a = victim.generate(img, "Describe the scene.")
    b = victim.generate(img, "Describe the scene.")
    assert a == b


def test_generate_empty_prompt(victim):
    with pytest.raises(EmptyText):
        victim.generate(_img(), "   ")


def test_generate_depends_on_image(victim):
    """Across many random images each scenario should produce at least two
    different captions, otherwise the closed-set metric is vacuous."""
    seen = set()
    for seed in range(24):
        seen.add(victim.generate(_img(seed), "Describe the scene."))
    assert len(seen) >= 2


def test_module_level_wrappers(victim):
    img = _img(2)
    stack = extract_features(victim, img)
    assert "encoder" in stack.layers
    text = generate(victim, img, "What should we do?")
    assert isinstance(text, str) and text
    stats = feature_stats(victim, [img, _img(3)])
    assert set(stats) == {"encoder", "projector"}
    for layer in stats.values():
        assert "mean" in layer and "variance" in layer
        assert np.isfinite(layer["mean"]) and layer["variance"] > 0


def test_feature_stats_empty(victim):
    with pytest.raises(ShapeMismatch):
        victim.feature_stats([])


def test_provenance_tagged(victim):
    img = _img(4)
    s1 = victim.extract_features(img)
    s2 = victim.extract_features(img + 0.25)
    assert s1.provenance and s2.provenance
    assert s1.provenance != s2.provenance
    assert victim.spec.name in s1.provenance


def test_save_load_round_trip(tmp_path, victim):
    p = tmp_path / "victim.bin"
    save_victim(victim, p)
    back = load_victim(p)
    img = _img(6)
    a = victim.extract_features(img)
    b = back.extract_features(img)
    assert torch.equal(a["projector"], b["projector"])
    assert back.spec.name == victim.spec.name


def test_load_rejects_junk(tmp_path):
    from advcamo.errors import FormatError

    p = tmp_path / "bad.bin"
    p.write_bytes(b"NOTAVICTIMFILE----")
    with pytest.raises(FormatError):
        load_victim(p)


def test_registry():
    assert "surrogate-vlm" in available_victims()
    v = get_victim("surrogate-vlm", seed=0)
    assert v.spec.input_size == (224, 224)
    assert v.spec.attack_layers == ("encoder", "projector")
    from advcamo.errors import VictimUnavailable

    with pytest.raises(VictimUnavailable, match="gpt-17"):
        get_victim("gpt-17")


def test_feature_stack_detach():
    t = torch.rand(3, 3, requires_grad=True)
    stack = FeatureStack({"a": t * 2})
    d = stack.detach()
    assert not d["a"].requires_grad
