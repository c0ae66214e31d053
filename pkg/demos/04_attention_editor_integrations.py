"""Graft the correction term onto the three attention-editor styles.

An instrumented stub denoiser exposes its cross-attention, self-attention,
and feature tensors through hooks, so injection is observable: whatever the
source pass recorded shows up verbatim in the edit pass arithmetic.  The
guidance style instead nudges the latent down the cross-attention alignment
gradient before the two correction predictions are taken.
"""

import numpy as np

from picedit.adapters import HOOK_CROSS_ATTENTION
from picedit.integrations import (
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

model = AttentionStubDenoiser(seed=0)
y_src = PromptEmbedding(tokens=np.full((2, 2), 0.4), meaningful_len=2)
y_t = PromptEmbedding(tokens=np.full((2, 2), -0.7), meaningful_len=2)

rng = np.random.default_rng(1)
x_src = rng.standard_normal(model.latent_dim)
x_tgt = rng.standard_normal(model.latent_dim)
t = 12

snap = capture_snapshot(model, x_src, t, y_src)
print("captured from the source pass:")
print("  cross maps:", list(snap.cross_maps))
print("  self maps: ", list(snap.self_maps))
print("  features:  ", list(snap.features))
print()

eps_plain = model.predict(x_tgt, t, y_t)
eps_ptp, eps_src_cond = ptp_corrected_predict(x_tgt, t, y_t, y_src, snap, model)
eps_pnp, _ = pnp_corrected_predict(x_tgt, t, y_t, y_src, snap, model)
print("prediction with no injection:      ", np.round(eps_plain[:3], 3))
print("with source attention maps swapped:", np.round(eps_ptp[:3], 3))
print("with self maps + features swapped: ", np.round(eps_pnp[:3], 3))
print("the downstream correction is the same arithmetic either way:")
print("  delta =", np.round((eps_ptp - eps_src_cond)[:3], 3))
print()

m_src = snap.cross_maps[HOOK_CROSS_ATTENTION]
before = attention_loss(model.cross_attention(x_tgt, t, y_t), m_src)
x_hat = p2p_guidance_step(x_tgt, t, y_t, y_src, snap, GuidanceConfig(lambda_xa=0.05), model)
after = attention_loss(model.cross_attention(x_hat, t, y_t), m_src)
print("guidance step on the latent:")
print(f"  attention loss before = {before:.5f}")
print(f"  attention loss after  = {after:.5f}")
print("  correction at the shifted latent:", np.round(p2p_correction(x_hat, t, y_t, y_src, model)[:3], 3))
