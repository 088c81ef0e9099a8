import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dynorm.cabn import (
    Mode,
    NormalizerConfig,
    NormLayerState,
    mix_stats,
    normalize,
    normalize_cabn,
    normalize_with_stats,
    tcn_stats,
)
from dynorm.errors import DimensionError, ValidationError
from dynorm.lisc import ClusterAssignment, lisc_cluster
from dynorm.stats import batch_stats, instance_stats
from dynorm.tensor import ChannelStats, FeatureMap

pytestmark = pytest.mark.usefixtures("backend")


def state_for(C, mode=Mode.DYN, alpha=0.8, rng=None, **kw):
    rng = rng or np.random.default_rng(7)
    sbn = ChannelStats(rng.normal(size=C), rng.uniform(0.5, 2.0, size=C))
    return NormLayerState(sbn, rng.uniform(0.5, 1.5, size=C), rng.normal(size=C), NormalizerConfig(mode, alpha, **kw))


def cluster_moments(out, labels):
    for c in np.unique(labels):
        block = out[labels == c].astype(np.float64)
        yield block.mean(axis=(0, 2, 3)), block.var(axis=(0, 2, 3))


def test_mode_parse():
    assert Mode.parse("alpha_bn") is Mode.ALPHA_BN
    with pytest.raises(ValidationError):
        Mode.parse("GN")


@pytest.mark.parametrize("kw", [{"alpha": 1.5}, {"alpha": -0.1}, {"epsilon": 0.0}, {"mix": "geo"}])
def test_config_validation(kw):
    with pytest.raises(ValidationError):
        NormalizerConfig(**kw)


def test_state_channel_mismatch():
    with pytest.raises(DimensionError):
        NormLayerState(ChannelStats([0.0, 0.0], [1.0, 1.0]), [1.0], [0.0, 0.0])


def test_tcn_singleton_is_instance_stats(rng):
    fm = FeatureMap(rng.normal(size=(4, 3, 3, 3)))
    ca = ClusterAssignment([0, 1, 2, 3], 4)
    for i in range(4):
        t, s = tcn_stats(fm, ca, i), instance_stats(fm, i)
        np.testing.assert_allclose(t.mean, s.mean, atol=1e-12)
        np.testing.assert_allclose(t.std, s.std, atol=1e-12)


def test_tcn_whole_batch_is_tbn(rng):
    fm = FeatureMap(rng.normal(size=(5, 3, 2, 2)))
    assert tcn_stats(fm, ClusterAssignment([0] * 5, 1), 0) == batch_stats(fm)


def test_tcn_pair():
    fm = FeatureMap(np.array([1.0, 3.0]).reshape(2, 1, 1, 1))
    t = tcn_stats(fm, ClusterAssignment([0, 0], 1), 0)
    assert t.mean.tolist() == [2.0] and t.std.tolist() == [1.0]


def test_tcn_out_of_range():
    fm = FeatureMap(np.zeros((2, 1, 1, 1)))
    with pytest.raises(IndexError):
        tcn_stats(fm, ClusterAssignment([0, 0], 1), 1)


def test_mix_examples():
    sbn = ChannelStats([1.0], [2.0])
    tcn = ChannelStats([0.0], [1.0])
    assert mix_stats(sbn, tcn, 1.0) == sbn
    assert mix_stats(sbn, tcn, 0.0) == tcn
    m = mix_stats(sbn, tcn, 0.8)
    np.testing.assert_allclose(m.mean, [0.8], atol=1e-15)
    np.testing.assert_allclose(m.std, [1.8], atol=1e-15)
    with pytest.raises(ValidationError):
        mix_stats(sbn, tcn, 1.01)


def test_variance_mixing_diagnostic():
    m = mix_stats(ChannelStats([1.0], [2.0]), ChannelStats([0.0], [1.0]), 0.8, mix="var")
    np.testing.assert_allclose(m.std, [np.sqrt(0.8 * 4 + 0.2 * 1)])


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 6), st.integers(0, 2**32 - 1))
def test_mix_monotone_in_alpha(C, seed):
    r = np.random.default_rng(seed)
    tcn = ChannelStats(r.normal(size=C), r.uniform(0, 1, size=C))
    sbn = ChannelStats(tcn.mean + r.uniform(0, 2, size=C), tcn.std + r.uniform(0, 2, size=C))
    prev = None
    for a in np.linspace(0, 1, 11):
        m = mix_stats(sbn, tcn, a)
        if prev is not None:
            assert (m.mean >= prev.mean - 1e-12).all() and (m.std >= prev.std - 1e-12).all()
        prev = m


def test_normalize_with_exact_batch_stats(rng):
    fm = FeatureMap(rng.normal(2.0, 3.0, size=(8, 4, 5, 5)))
    s = batch_stats(fm)
    out = batch_stats(normalize_with_stats(fm, s, np.ones(4), np.zeros(4), 1e-5))
    np.testing.assert_allclose(out.mean, 0.0, atol=1e-5)
    np.testing.assert_allclose(out.std, np.sqrt(s.std**2 / (s.std**2 + 1e-5)), atol=1e-5)
    assert (out.std <= 1.0 + 1e-6).all()


def test_gamma_zero_gives_beta(rng):
    fm = FeatureMap(rng.normal(size=(3, 2, 2, 2)))
    out = normalize_with_stats(fm, batch_stats(fm), [0.0, 0.0], [0.25, -1.5], 1e-5)
    assert (out.data[:, 0] == np.float32(0.25)).all() and (out.data[:, 1] == np.float32(-1.5)).all()


def test_epsilon_guard():
    x = np.array([1.0, 2.0]).reshape(2, 1, 1, 1)
    out = normalize_with_stats(FeatureMap(x), ChannelStats([1.5], [0.0]), [1.0], [0.0], 1e-5)
    assert np.isfinite(out.data).all()
    np.testing.assert_allclose(out.data.ravel(), [-0.5 / np.sqrt(1e-5), 0.5 / np.sqrt(1e-5)], rtol=1e-6)


def test_affine_identity_is_near_noop(rng):
    x = rng.normal(size=(4, 3, 4, 4))
    out = normalize_with_stats(FeatureMap(x), ChannelStats(np.zeros(3), np.ones(3)), np.ones(3), np.zeros(3), 1e-5)
    assert np.abs(out.data - x.astype(np.float32)).max() <= 1e-4


def test_normalize_channel_mismatch(rng):
    fm = FeatureMap(rng.normal(size=(2, 3, 1, 1)))
    with pytest.raises(DimensionError):
        normalize_with_stats(fm, ChannelStats([0.0], [1.0]), [1.0], [0.0])
    with pytest.raises(DimensionError):
        normalize(fm, state_for(2))


def test_cabn_alpha_one_is_sbn(rng):
    fm = FeatureMap(rng.normal(size=(10, 3, 2, 2)))
    st_ = state_for(3, alpha=1.0)
    expected = normalize_with_stats(fm, st_.sbn, st_.gamma, st_.beta, st_.config.epsilon)
    for labels, k in [([0] * 10, 1), (list(range(5)) * 2, 5)]:
        out = normalize_cabn(fm, ClusterAssignment(labels, k), st_)
        np.testing.assert_allclose(out.data, expected.data, atol=1e-6)


def test_cabn_alpha_zero_one_cluster_is_tbn(rng):
    fm = FeatureMap(rng.normal(size=(6, 3, 2, 2)))
    st_ = state_for(3, alpha=0.0)
    out = normalize_cabn(fm, ClusterAssignment([0] * 6, 1), st_)
    tbn = normalize(fm, state_for(3, Mode.TBN))
    np.testing.assert_allclose(out.data, tbn.data, atol=1e-6)


def test_cabn_pairs_of_identical_samples(rng):
    base = rng.normal(size=(3, 2, 3, 3))
    x = np.repeat(base, 2, axis=0)
    st_ = NormLayerState.identity(ChannelStats(np.zeros(2), np.ones(2)), NormalizerConfig(alpha=0.0))
    labels = np.repeat(np.arange(3), 2)
    out = normalize_cabn(FeatureMap(x), ClusterAssignment(labels, 3), st_)
    for mean, _ in cluster_moments(out.data, labels):
        np.testing.assert_allclose(mean, 0.0, atol=1e-5)


def test_cabn_label_length_mismatch(rng):
    fm = FeatureMap(rng.normal(size=(4, 2, 1, 1)))
    with pytest.raises(DimensionError):
        normalize_cabn(fm, ClusterAssignment([0, 0], 1), state_for(2))


def test_tbn_on_constant_batch():
    st_ = state_for(2, Mode.TBN)
    out = normalize(FeatureMap(np.full((3, 2, 2, 2), 4.0)), st_)
    for c in range(2):
        np.testing.assert_allclose(out.data[:, c], st_.beta[c], atol=1e-6)


def test_alpha_bn_collapses(rng):
    fm = FeatureMap(rng.normal(size=(6, 3, 2, 2)))
    np.testing.assert_allclose(
        normalize(fm, state_for(3, Mode.ALPHA_BN, 1.0)).data, normalize(fm, state_for(3, Mode.SBN)).data, atol=1e-6
    )
    np.testing.assert_allclose(
        normalize(fm, state_for(3, Mode.ALPHA_BN, 0.0)).data, normalize(fm, state_for(3, Mode.TBN)).data, atol=1e-6
    )


def test_in_mode_normalizes_each_sample(rng):
    fm = FeatureMap(rng.normal(1.0, 2.0, size=(4, 3, 5, 5)))
    st_ = NormLayerState.identity(ChannelStats(np.zeros(3), np.ones(3)), NormalizerConfig(Mode.IN))
    out = normalize(fm, st_)
    for i in range(4):
        np.testing.assert_allclose(out.data[i].mean(axis=(1, 2)), 0.0, atol=1e-5)


def test_dyn_equals_hand_piped_composition():
    r = np.random.default_rng(0)
    centers = np.array([[5.0, 0.0]] * 4 + [[0.0, 5.0]] * 4)
    fm = FeatureMap(centers[:, :, None, None] + 0.1 * r.standard_normal((8, 2, 2, 2)))
    st_ = state_for(2)
    ca = lisc_cluster(fm)
    assert ca.k == 2
    assert tcn_stats(fm, ca, 0) != batch_stats(fm)
    assert normalize(fm, st_) == normalize_cabn(fm, ca, st_)
    assert normalize(fm, st_, clusters=ca) == normalize_cabn(fm, ca, st_)


def test_cluster_moments_after_cabn(rng):
    eps = 1e-5
    st_ = NormLayerState.identity(ChannelStats(np.zeros(3), np.ones(3)), NormalizerConfig(alpha=0.0, epsilon=eps))
    for _ in range(10):
        fm = FeatureMap(rng.normal(rng.normal(size=3), rng.uniform(0.1, 3.0, size=3), size=(16, 3, 3, 3)))
        ca = lisc_cluster(fm)
        out = normalize_cabn(fm, ca, st_)
        for c, (mean, var) in enumerate(cluster_moments(out.data, ca.labels)):
            sigma2 = tcn_stats(fm, ca, c).std ** 2
            np.testing.assert_allclose(mean, 0.0, atol=1e-4)
            np.testing.assert_allclose(var, sigma2 / (sigma2 + eps), atol=1e-4)


@settings(max_examples=40, deadline=None)
@given(st.sampled_from(list(Mode)), st.integers(2, 20), st.integers(0, 2**32 - 1))
def test_normalize_permutation_equivariant(mode, B, seed):
    r = np.random.default_rng(seed)
    x = r.normal(size=(B, 3, 2, 2)).astype(np.float32)
    perm = r.permutation(B)
    st_ = state_for(3, mode)
    a = normalize(FeatureMap(x), st_).data[perm]
    b = normalize(FeatureMap(x[perm]), st_).data
    np.testing.assert_allclose(a, b, atol=1e-6)
