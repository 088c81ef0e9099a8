import json
import shutil

import numpy as np
import pytest

import oracles
from dynorm.cabn import Mode, NormalizerConfig, NormLayerState, mix_stats, normalize_with_stats
from dynorm.errors import DimensionError, FormatError, ValidationError
from dynorm.model import (
    Conv2d,
    Dense,
    GlobalAvgPool,
    ModelSpec,
    NormSlot,
    PrototypeHead,
    ReLU,
    conv2d_apply,
    describe,
    forward,
    forward_traced,
    global_avg_pool_apply,
    load_model,
    relu_apply,
    save_model,
)
from dynorm.presets import prototype_classifier, two_class_means
from dynorm.stats import SbnStore, instance_stats, load_sbn
from dynorm.tensor import ChannelStats, FeatureMap

pytestmark = pytest.mark.usefixtures("backend")


@pytest.fixture
def edit_minimal(tmp_path, fixtures_dir):
    """Copy the minimal fixture, apply ``fn`` to its manifest dict, return the new path."""

    def make(fn):
        shutil.copy(fixtures_dir / "minimal.bin", tmp_path / "minimal.bin")
        manifest = json.loads((fixtures_dir / "minimal.json").read_text())
        fn(manifest)
        path = tmp_path / "edited.json"
        path.write_text(json.dumps(manifest))
        return path

    return make


def test_load_minimal(fixtures_dir):
    model, store = load_model(fixtures_dir / "minimal.json")
    assert model.input_dims == (2, 2, 2)
    assert [l.kind for l in model.layers] == ["norm_slot", "global_avg_pool", "prototype_head"]
    assert len(store) == 1
    np.testing.assert_array_equal(model.layers[2].prototypes, [[1, 0], [0, 1]])


def test_blob_layout(fixtures_dir):
    raw = (fixtures_dir / "minimal.bin").read_bytes()
    values = np.frombuffer(raw, dtype="<f4")
    assert len(raw) == 48
    assert values.tolist() == [0.5, -0.25, 1.0, 2.0, 1.0, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 1.0]


def test_missing_sbn_mean(edit_minimal):
    path = edit_minimal(lambda m: m["layers"][0]["tensors"].pop("sbn_mean"))
    with pytest.raises(FormatError):
        load_model(path)


def test_negative_std(edit_minimal, tmp_path):
    path = edit_minimal(lambda m: None)
    blob = bytearray((tmp_path / "minimal.bin").read_bytes())
    blob[8:12] = np.float32(-1.0).tobytes()
    (tmp_path / "minimal.bin").write_bytes(bytes(blob))
    with pytest.raises(ValidationError):
        load_sbn(path)


def test_slot_channel_mismatch(edit_minimal):
    path = edit_minimal(lambda m: m["layers"][0].update(channels=3))
    with pytest.raises(FormatError):
        load_sbn(path)


def test_gamma_beta_default(edit_minimal):
    def drop(m):
        del m["layers"][0]["tensors"]["gamma"]
        del m["layers"][0]["tensors"]["beta"]

    model, _ = load_model(edit_minimal(drop))
    assert model.layers[0].gamma.tolist() == [1.0, 1.0]
    assert model.layers[0].beta.tolist() == [0.0, 0.0]


@pytest.mark.parametrize(
    "edit",
    [
        lambda m: m.update(colour="blue"),
        lambda m: m["layers"][0].update(momentum=0.1),
        lambda m: m["layers"][2]["tensors"]["prototypes"].update(offset=2),
        lambda m: m["layers"][2]["tensors"]["prototypes"].update(offset=40),
        lambda m: m["layers"].append({"kind": "softmax"}),
        lambda m: m.update(version=2),
    ],
)
def test_manifest_rejects(edit_minimal, edit):
    with pytest.raises(FormatError):
        load_model(edit_minimal(edit))


def test_dense_dim_mismatch():
    with pytest.raises(DimensionError):
        ModelSpec((2, 2, 2), (GlobalAvgPool(), Dense(np.zeros((3, 5), np.float32), np.zeros(3, np.float32))), 3)


def test_norm_slot_channel_mismatch():
    slot = NormSlot("bn0", 3, np.ones(3), np.zeros(3))
    with pytest.raises(DimensionError):
        ModelSpec((2, 1, 1), (slot, GlobalAvgPool(), PrototypeHead(np.eye(3, dtype=np.float32))), 3)


def test_save_load_round_trip(tmp_path, fixtures_dir):
    model, store = load_model(fixtures_dir / "minimal.json")
    save_model(model, store, tmp_path / "copy.json")
    assert (tmp_path / "copy.bin").read_bytes() == (fixtures_dir / "minimal.bin").read_bytes()
    again, store2 = load_model(tmp_path / "copy.json")
    assert store2["bn0"] == store["bn0"]
    assert describe(again, store2) == describe(model, store)


def test_prototype_head_example():
    # identity slot: zero mean, unit std, so the pooled feature reaches the head unchanged up to eps
    slot = NormSlot("bn0", 2, np.ones(2, np.float32), np.zeros(2, np.float32))
    model = ModelSpec((2, 1, 1), (slot, GlobalAvgPool(), PrototypeHead(np.eye(2, dtype=np.float32))), 2)
    store = SbnStore({"bn0": ChannelStats([0.0, 0.0], [1.0, 1.0])})
    fm = FeatureMap(np.array([0.9, 0.1]).reshape(1, 2, 1, 1))
    preds = forward(model, store, fm, NormalizerConfig(Mode.SBN))
    assert preds[0].label == 0
    np.testing.assert_allclose(preds[0].scores, [0.9, 0.1], rtol=1e-5)


def test_constant_features_same_class(rng):
    beta = np.array([0.0, 1.0], np.float32)  # p_1 direction
    slot = NormSlot("bn0", 2, np.zeros(2, np.float32), beta)
    model = ModelSpec((2, 3, 3), (slot, GlobalAvgPool(), PrototypeHead(np.eye(2, dtype=np.float32))), 2)
    store = SbnStore({"bn0": ChannelStats([0.0, 0.0], [1.0, 1.0])})
    fm = FeatureMap(rng.normal(size=(7, 2, 3, 3)))
    for mode in Mode:
        assert {p.label for p in forward(model, store, fm, NormalizerConfig(mode))} == {1}


def test_single_sample_dyn_is_sbn_in_mix(fixtures_dir, rng):
    model, store = load_model(fixtures_dir / "minimal.json")
    fm = FeatureMap(rng.normal(size=(1, 2, 2, 2)))
    cfg = NormalizerConfig(Mode.DYN, 0.8)
    preds, clusters = forward_traced(model, store, fm, cfg)
    assert clusters == {"bn0": 1}
    mixed = mix_stats(store["bn0"], instance_stats(fm, 0), 0.8)
    out = normalize_with_stats(fm, mixed, np.ones(2), np.zeros(2), cfg.epsilon)
    expected = global_avg_pool_apply(out) @ model.layers[2].prototypes.T.astype(np.float64)
    np.testing.assert_allclose(preds[0].scores, expected[0], atol=1e-6)


def test_forward_input_mismatch(fixtures_dir):
    model, store = load_model(fixtures_dir / "minimal.json")
    with pytest.raises(DimensionError):
        forward(model, store, FeatureMap(np.zeros((1, 2, 3, 3))), NormalizerConfig())


@pytest.mark.parametrize("mode", list(Mode))
def test_forward_deterministic(mode, rng):
    model, store = prototype_classifier(two_class_means(4, 5.0), 0.5, 2, 2)
    fm = FeatureMap(rng.normal(size=(16, 4, 2, 2)))
    a = [p.scores for p in forward(model, store, fm, NormalizerConfig(mode))]
    b = [p.scores for p in forward(model, store, fm, NormalizerConfig(mode))]
    assert all(np.array_equal(u, v) for u, v in zip(a, b))


def test_sbn_per_sample_independent(rng):
    model, store = prototype_classifier(two_class_means(4, 5.0), 0.5, 2, 2)
    x = rng.normal(size=(12, 4, 2, 2)).astype(np.float32)
    cfg = NormalizerConfig(Mode.SBN)
    full = forward(model, store, FeatureMap(x), cfg)
    perm = rng.permutation(12)
    shuffled = forward(model, store, FeatureMap(x[perm]), cfg)
    for pos, i in enumerate(perm):
        assert np.array_equal(shuffled[pos].scores, full[i].scores)
        alone = forward(model, store, FeatureMap(x[i : i + 1]), cfg)[0]
        np.testing.assert_allclose(alone.scores, full[i].scores, atol=1e-12)


def test_identity_conv():
    x = FeatureMap(np.random.default_rng(1).normal(size=(2, 3, 4, 4)))
    w = np.eye(3, dtype=np.float32).reshape(3, 3, 1, 1)
    assert conv2d_apply(x, Conv2d(w, np.zeros(3, np.float32))) == x


def test_relu_and_pool():
    assert not relu_apply(FeatureMap(-np.ones((1, 2, 2, 2)))).data.any()
    np.testing.assert_array_equal(global_avg_pool_apply(FeatureMap(np.full((2, 3, 2, 2), 1.25))), np.full((2, 3), 1.25))


@pytest.mark.parametrize("stride,pad,k", [(1, 0, 3), (2, 1, 3), (1, 2, 5), (3, 0, 1)])
def test_conv_matches_loop_oracle(stride, pad, k):
    # integer-valued inputs keep every partial sum exact in float32
    r = np.random.default_rng(stride * 10 + pad)
    x = r.integers(-3, 4, size=(2, 3, 6, 7)).astype(np.float32)
    w = r.integers(-2, 3, size=(4, 3, k, k)).astype(np.float32)
    b = r.integers(-2, 3, size=4).astype(np.float32)
    out = conv2d_apply(FeatureMap(x), Conv2d(w, b, stride, pad)).data
    expected = np.array(oracles.conv2d(x.tolist(), w.tolist(), b.tolist(), stride, pad), dtype=np.float32)
    assert np.array_equal(out, expected)


def test_deeper_chain_runs(rng):
    C = 3
    layers = (
        NormSlot("bn0", C, np.ones(C), np.zeros(C)),
        Conv2d(rng.normal(size=(4, C, 3, 3)).astype(np.float32), np.zeros(4, np.float32), 1, 1),
        NormSlot("bn1", 4, np.ones(4), np.zeros(4)),
        ReLU(),
        GlobalAvgPool(),
        Dense(rng.normal(size=(5, 4)).astype(np.float32), np.zeros(5, np.float32)),
    )
    model = ModelSpec((C, 5, 5), layers, 5)
    store = SbnStore({"bn0": ChannelStats(np.zeros(C), np.ones(C)), "bn1": ChannelStats(np.zeros(4), np.ones(4))})
    preds, clusters = forward_traced(model, store, FeatureMap(rng.normal(size=(9, C, 5, 5))), NormalizerConfig())
    assert len(preds) == 9 and set(clusters) == {"bn0", "bn1"}
