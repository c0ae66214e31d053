import numpy as np
import pytest

from picedit.adapters import (
    HOOK_CROSS_ATTENTION,
    HOOK_FEATURES,
    HOOK_SELF_ATTENTION,
)
from picedit.errors import ValidationError
from picedit.integrations import (
    AttentionSnapshot,
    GuidanceConfig,
    attention_loss,
    capture_snapshot,
    p2p_correction,
    p2p_guidance_step,
    pnp_corrected_predict,
    ptp_corrected_predict,
)
from picedit.prompts import PromptEmbedding
from picedit.stubs import AttentionStubDenoiser


def make_embedding(value, shape=(2, 2)):
    return PromptEmbedding(tokens=np.full(shape, value, dtype=np.float64),
                           meaningful_len=shape[0])


@pytest.fixture()
def model():
    return AttentionStubDenoiser(seed=3)


@pytest.fixture()
def y_src():
    return make_embedding(0.4)


@pytest.fixture()
def y_t():
    return make_embedding(-0.7)


def test_snapshot_rejects_unnormalized_rows():
    with pytest.raises(ValidationError):
        AttentionSnapshot(cross_maps={"cross_attention": np.full((2, 3), 0.5)})
    # normalized rows pass
    AttentionSnapshot(cross_maps={"cross_attention": np.full((2, 4), 0.25)})


def test_capture_snapshot_collects_all_hook_families(model, y_src):
    x = np.linspace(-1, 1, model.latent_dim)
    snap = capture_snapshot(model, x, 7, y_src)
    assert snap.step == 7
    assert HOOK_CROSS_ATTENTION in snap.cross_maps
    assert HOOK_SELF_ATTENTION in snap.self_maps
    assert HOOK_FEATURES in snap.features
    assert np.allclose(snap.cross_maps[HOOK_CROSS_ATTENTION],
                       model.cross_attention(x, 7, y_src))
    # capture leaves no scope behind
    assert model._scope is None


def test_capture_step_mismatch_rejected(model, y_src, y_t):
    x = np.zeros(model.latent_dim)
    snap = capture_snapshot(model, x, 5, y_src)
    with pytest.raises(ValidationError, match="step"):
        ptp_corrected_predict(x, 6, y_t, y_src, snap, model)


def test_ptp_injects_source_maps_into_edit_pass(model, y_src, y_t):
    rng = np.random.default_rng(0)
    x_src = rng.standard_normal(model.latent_dim)
    x_tgt = rng.standard_normal(model.latent_dim)
    snap = capture_snapshot(model, x_src, 9, y_src)
    eps_edit, eps_src_cond = ptp_corrected_predict(x_tgt, 9, y_t, y_src, snap, model)

    # oracle: rebuild the injected prediction from the stub's linear readouts
    feats = model.feat_proj @ x_tgt
    expected = (
        0.1 * x_tgt
        + model.readout_cross @ snap.cross_maps[HOOK_CROSS_ATTENTION].reshape(-1)
        + model.readout_self @ snap.self_maps[HOOK_SELF_ATTENTION].reshape(-1)
        + model.readout_feat @ feats
        + 0.05 * 9
    )
    assert np.allclose(eps_edit, expected, rtol=1e-12)
    # the source-prompt pass is clean
    assert np.allclose(eps_src_cond, model.predict(x_tgt, 9, y_src), rtol=1e-12)


def test_pnp_injects_self_maps_and_features(model, y_src, y_t):
    rng = np.random.default_rng(1)
    x_src = rng.standard_normal(model.latent_dim)
    x_tgt = rng.standard_normal(model.latent_dim)
    snap = capture_snapshot(model, x_src, 4, y_src)
    eps_edit, _ = pnp_corrected_predict(x_tgt, 4, y_t, y_src, snap, model)

    # cross-attention stays the edit pass's own
    expected = (
        0.1 * x_tgt
        + model.readout_cross @ model.cross_attention(x_tgt, 4, y_t).reshape(-1)
        + model.readout_self @ snap.self_maps[HOOK_SELF_ATTENTION].reshape(-1)
        + model.readout_feat @ snap.features[HOOK_FEATURES]
        + 0.05 * 4
    )
    assert np.allclose(eps_edit, expected, rtol=1e-12)


def test_empty_snapshot_means_no_injection(model, y_src, y_t):
    x = np.linspace(0, 1, model.latent_dim)
    snap = AttentionSnapshot(step=-1)
    assert snap.empty
    eps_edit, eps_src = ptp_corrected_predict(x, 3, y_t, y_src, snap, model)
    assert np.allclose(eps_edit, model.predict(x, 3, y_t), rtol=1e-12)


def test_vjp_matches_finite_differences(model, y_t):
    rng = np.random.default_rng(7)
    for _ in range(20):
        x = rng.standard_normal(model.latent_dim)
        g = rng.standard_normal((model.num_queries, model.num_keys))
        analytic = model.cross_attention_vjp(x, 2, y_t, g)
        h = 1e-6
        numeric = np.zeros_like(x)
        for i in range(x.size):
            xp, xm = x.copy(), x.copy()
            xp[i] += h
            xm[i] -= h
            mp = model.cross_attention(xp, 2, y_t)
            mm = model.cross_attention(xm, 2, y_t)
            numeric[i] = np.sum(g * (mp - mm)) / (2 * h)
        assert np.allclose(analytic, numeric, rtol=1e-5, atol=1e-8)


def test_guidance_step_zero_lambda_is_identity(model, y_src, y_t):
    x = np.linspace(-1, 1, model.latent_dim)
    snap = capture_snapshot(model, x, 2, y_src)
    out = p2p_guidance_step(x, 2, y_t, y_src, snap, GuidanceConfig(lambda_xa=0.0), model)
    assert np.array_equal(out, x)


def test_guidance_step_decreases_attention_loss(model, y_src, y_t):
    rng = np.random.default_rng(2)
    x_src = rng.standard_normal(model.latent_dim)
    x_tgt = rng.standard_normal(model.latent_dim)
    snap = capture_snapshot(model, x_src, 6, y_src)
    m_src = snap.cross_maps[HOOK_CROSS_ATTENTION]

    before = attention_loss(model.cross_attention(x_tgt, 6, y_t), m_src)
    x_new = p2p_guidance_step(
        x_tgt, 6, y_t, y_src, snap, GuidanceConfig(lambda_xa=0.05), model
    )
    after = attention_loss(model.cross_attention(x_new, 6, y_t), m_src)
    assert after < before


def test_guidance_step_matches_explicit_gradient(model, y_src, y_t):
    rng = np.random.default_rng(4)
    x_src = rng.standard_normal(model.latent_dim)
    x_tgt = rng.standard_normal(model.latent_dim)
    snap = capture_snapshot(model, x_src, 8, y_src)
    m_src = snap.cross_maps[HOOK_CROSS_ATTENTION]
    lam = 0.07
    out = p2p_guidance_step(x_tgt, 8, y_t, y_src, snap, GuidanceConfig(lambda_xa=lam), model)

    m_tgt = model.cross_attention(x_tgt, 8, y_t)
    grad = model.cross_attention_vjp(x_tgt, 8, y_t, 2.0 * (m_tgt - m_src))
    assert np.allclose(out, x_tgt - lam * grad, rtol=1e-14)


def test_p2p_correction_is_plain_prediction_difference(model, y_src, y_t):
    x = np.linspace(-0.5, 0.5, model.latent_dim)
    delta = p2p_correction(x, 5, y_t, y_src, model)
    expected = model.predict(x, 5, y_t) - model.predict(x, 5, y_src)
    assert np.allclose(delta, expected, rtol=1e-12)


def test_guidance_config_validation():
    with pytest.raises(ValidationError):
        GuidanceConfig(lambda_xa=-0.1)
    with pytest.raises(ValidationError):
        GuidanceConfig(injection_window=1.5)


def test_attention_loss_is_squared_frobenius():
    a = np.array([[1.0, 0.0], [0.0, 1.0]])
    b = np.array([[0.0, 1.0], [1.0, 0.0]])
    assert attention_loss(a, b) == pytest.approx(4.0)
    assert attention_loss(a, a) == 0.0
