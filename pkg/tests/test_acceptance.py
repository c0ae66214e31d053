"""Acceptance suite: one test per release criterion, one pass/fail line each.

Criteria 1-10 run on CPU against the analytic oracle and the instrumented
stubs.  Criterion 11 needs a real diffusion backbone with local weights and
is reported as skipped unless one is configured.
"""

import contextlib
import os

import numpy as np
import pytest

from picedit.adapters import CallCountingDenoiser
from picedit.correction import (
    EditConfig,
    Variant,
    corrected_noise,
    correction_term,
    naive_reverse,
    reconstruct_source,
    run_variant,
)
from picedit.integrations import GuidanceConfig, p2p_guidance_step, capture_snapshot
from picedit.metrics import (
    HashImageEmbedder,
    HashTextSimEmbedder,
    CenterBoxDetector,
    PatchAffinityAttention,
    PatchPerceptualDistance,
    background_distance,
    select_task_images,
    structure_distance,
)
from picedit.prompts import (
    EditKind,
    InterpolationPlan,
    PromptEmbedding,
    interpolate_insertion,
    interpolate_replacement,
    mixing_coefficient,
)
from picedit.schedule import LatentState, build_schedule, forward_step, invert_source, reverse_step
from picedit.stubs import AttentionStubDenoiser
from picedit.toy import (
    GaussianDenoiser,
    averaged_ablation,
    toy_schedule,
    two_domain_scenario,
)


@contextlib.contextmanager
def criterion(num, description):
    try:
        yield
    except BaseException:
        print(f"[FAIL] criterion {num:>2}: {description}")
        raise
    print(f"[PASS] criterion {num:>2}: {description}")


def test_criterion_01_ddim_algebraic_inverse():
    with criterion(1, "forward/reverse round trip within 1e-6 over 1000 triples"):
        sched = build_schedule(1000, 50, "scaled_linear")
        rng = np.random.default_rng(0)
        worst = 0.0
        for _ in range(1000):
            t = int(rng.integers(0, 50))
            x = LatentState(data=rng.standard_normal(8), t=t)
            eps = rng.standard_normal(8)
            back = reverse_step(forward_step(x, eps, sched), eps, sched)
            rel = np.abs(back.data - x.data) / np.maximum(np.abs(x.data), 1e-12)
            worst = max(worst, float(rel.max()))
        assert worst <= 1e-6, worst


def test_criterion_02_inversion_consistency():
    with criterion(2, "reconstruction error decreases over T in {25,50,100}, <1% at 100"):
        scn = two_domain_scenario()
        errors = {}
        for T in (25, 50, 100):
            sched = toy_schedule(T)
            den = GaussianDenoiser(scn.world, sched)
            x0 = scn.sample_source(0)
            cache = invert_source(x0, scn.y_src, den, sched)
            rec = reconstruct_source(cache, model=den, y_src=scn.y_src)
            errors[T] = float(
                np.linalg.norm(rec - x0)
                / (scn.world.data_std * np.sqrt(scn.world.latent_dim))
            )
        assert errors[25] > errors[50] > errors[100], errors
        assert errors[100] < 0.01, errors


def test_criterion_03_gamma_zero_collapse():
    with criterion(3, "gamma=0: zero target-latent evaluations, bitwise reconstruction"):
        scn = two_domain_scenario()
        x0 = scn.sample_source(0)
        counter = CallCountingDenoiser(scn.denoiser)
        cache = invert_source(x0, scn.y_src, counter, scn.sched)
        rec = reconstruct_source(cache, model=counter, y_src=scn.y_src)

        counter.calls = 0
        # full-length window: every step is corrected, and with gamma=0 each
        # correction degenerates to the cached source prediction
        cfg = EditConfig(gamma=0.0, tau=50, num_steps=50)
        out, ledger = run_variant(
            Variant.PIC, cache, scn.y_src, scn.y_tgt, scn.plan, cfg, counter, scn.sched
        )
        assert ledger.corrected_calls == 0
        assert counter.calls == 0
        assert np.array_equal(out, rec)


def test_criterion_04_interpolation_exactness():
    with criterion(4, "mixing endpoints exact; blend endpoints bitwise; 500-span brute force"):
        assert mixing_coefficient(50, 50, 0.3) == 0.3
        assert mixing_coefficient(0, 50, 0.3) == 1.0
        assert mixing_coefficient(40, 40, 0.8) == 0.8
        assert mixing_coefficient(0, 40, 0.8) == 1.0

        rng = np.random.default_rng(1)
        src = PromptEmbedding(tokens=rng.standard_normal((8, 4)), meaningful_len=8)
        tgt = PromptEmbedding(tokens=rng.standard_normal((8, 4)), meaningful_len=8)
        assert np.array_equal(interpolate_replacement(src, tgt, 0.0).tokens, src.tokens)
        assert np.array_equal(interpolate_replacement(src, tgt, 1.0).tokens, tgt.tokens)

        for trial in range(500):
            L = int(rng.integers(3, 12))
            D = int(rng.integers(1, 5))
            ls = int(rng.integers(0, L))
            lf = int(rng.integers(ls, L))
            b = float(rng.random())
            a = PromptEmbedding(tokens=rng.standard_normal((L, D)), meaningful_len=L)
            c = PromptEmbedding(tokens=rng.standard_normal((L, D)), meaningful_len=L)
            plan = InterpolationPlan(
                kind=EditKind.INSERTION, span_start=ls, span_end=lf, beta=0.8, total_steps=50
            )
            got = interpolate_insertion(a, c, plan, b).tokens
            # brute-force three-branch re-implementation, clamp included
            want = np.empty_like(c.tokens)
            for pos in range(L):
                if pos < ls:
                    want[pos] = a.tokens[pos]
                elif pos <= lf:
                    want[pos] = c.tokens[pos]
                else:
                    shifted = pos - (lf - ls + 1)
                    if shifted < L:
                        want[pos] = b * c.tokens[pos] + (1 - b) * a.tokens[shifted]
                    else:
                        want[pos] = c.tokens[pos]
            assert np.array_equal(got, want), trial


def test_criterion_05_correction_algebra():
    with criterion(5, "zero correction for matching prompts; affine in gamma over the grid"):
        scn = two_domain_scenario()
        x = scn.sample_source(2)
        eps_src = scn.denoiser.predict(x, 30, scn.y_src)
        assert np.array_equal(correction_term(eps_src, eps_src), np.zeros_like(eps_src))

        rng = np.random.default_rng(2)
        for _ in range(50):
            saved = rng.standard_normal(8)
            delta = rng.standard_normal(8)
            unit = corrected_noise(saved, delta, 1.0) - saved
            for gamma in (0.0, 0.5, 1.0, 2.5):
                want = saved + gamma * unit
                assert np.allclose(corrected_noise(saved, delta, gamma), want, rtol=1e-15)


def test_criterion_06_variant_collapse():
    with criterion(6, "all four variants identical bitwise at tau=0"):
        scn = two_domain_scenario()
        x0 = scn.sample_source(3)
        cache = invert_source(x0, scn.y_src, scn.denoiser, scn.sched)
        cfg = EditConfig(tau=0, num_steps=50)
        outs = [
            run_variant(v, cache, scn.y_src, scn.y_tgt, scn.plan, cfg, scn.denoiser, scn.sched)[0]
            for v in (Variant.PIC, Variant.DDIM_PI, Variant.DDIM_NC, Variant.DDIM)
        ]
        for out in outs[1:]:
            assert np.array_equal(outs[0], out)
        plain = naive_reverse(cache.latents[50], 50, scn.y_tgt, scn.denoiser, scn.sched)
        assert np.array_equal(outs[0], plain)


def test_criterion_07_ablation_ordering():
    with criterion(7, "100-seed surrogate ordering PIC<=DDIM_NC<=DDIM_PI<=DDIM, CS within 5%"):
        scn = two_domain_scenario()
        cfg = EditConfig(gamma=1.0, tau=25, beta=0.3, num_steps=50)
        avg = averaged_ablation(scn, cfg, num_seeds=100)
        bd = {v: avg[v]["background_distance"] for v in avg}
        assert bd["PIC"] <= bd["DDIM_NC"] <= bd["DDIM_PI"] <= bd["DDIM"], bd
        assert bd["PIC"] < bd["DDIM"], bd
        best = max(avg[v]["target_alignment"] for v in avg)
        assert -avg["PIC"]["target_alignment"] <= 1.05 * -best, avg


def test_criterion_08_call_ledger_formula():
    with criterion(8, "forward=T, corrected=2*tau, plain=T-tau; doubled under guidance"):
        from picedit.adapters import GuidedDenoiser, HashTextEncoder, encode_prompt
        from picedit.prompts import InterpolationPlan

        for T, tau in ((10, 0), (10, 4), (10, 10), (20, 7)):
            scn = two_domain_scenario(num_steps=T, tau=tau)
            x0 = scn.sample_source(4)
            counter = CallCountingDenoiser(scn.denoiser)
            cache = invert_source(x0, scn.y_src, counter, scn.sched)
            assert counter.calls == T

            counter.calls = 0
            cfg = EditConfig(tau=tau, num_steps=T)
            _, ledger = run_variant(
                Variant.PIC, cache, scn.y_src, scn.y_tgt, scn.plan, cfg, counter, scn.sched
            )
            assert ledger.forward_calls == T
            assert ledger.corrected_calls == 2 * tau
            assert ledger.plain_calls == T - tau
            plain_total = counter.calls

            # classifier-free guidance doubles every raw evaluation
            null = PromptEmbedding(tokens=np.zeros_like(scn.y_src.tokens), meaningful_len=1)
            guided = GuidedDenoiser(inner=counter, null_embedding=null, scale=2.0)
            cache2 = invert_source(x0, scn.y_src, guided, scn.sched)
            counter.calls = 0
            run_variant(
                Variant.PIC, cache2, scn.y_src, scn.y_tgt, scn.plan, cfg, guided, scn.sched
            )
            assert counter.calls == 2 * plain_total


def test_criterion_09_guidance_gradient_check():
    with criterion(9, "guidance gradient matches finite differences within 1e-5 over 100 probes"):
        model = AttentionStubDenoiser(seed=5)
        y_t = PromptEmbedding(tokens=np.full((2, 2), -0.3), meaningful_len=2)
        rng = np.random.default_rng(6)
        h = 1e-6
        for _ in range(100):
            x = rng.standard_normal(model.latent_dim)
            g = rng.standard_normal((model.num_queries, model.num_keys))
            analytic = model.cross_attention_vjp(x, 3, y_t, g)
            numeric = np.zeros_like(x)
            for i in range(x.size):
                xp, xm = x.copy(), x.copy()
                xp[i] += h
                xm[i] -= h
                numeric[i] = np.sum(
                    g * (model.cross_attention(xp, 3, y_t) - model.cross_attention(xm, 3, y_t))
                ) / (2 * h)
            rel = np.linalg.norm(analytic - numeric) / max(np.linalg.norm(numeric), 1e-12)
            assert rel <= 1e-5, rel


def test_criterion_10_metric_oracles():
    with criterion(10, "metric zeros, Frobenius oracle, masked-edit fixture, top-k selection"):
        rng = np.random.default_rng(7)
        img = rng.random((16, 16))
        bd, flagged = background_distance(
            img, img, CenterBoxDetector(), PatchPerceptualDistance()
        )
        assert bd == 0.0 and flagged is False
        assert structure_distance(img, img, PatchAffinityAttention()) == 0.0

        class PairAttention:
            def __init__(self, a, b):
                self.maps = [a, b]

            def self_attention(self, image):
                return self.maps.pop(0)

        for _ in range(20):
            a = rng.random((6, 6))
            b = rng.random((6, 6))
            want = float(np.sqrt(np.sum((a - b) ** 2)) / np.sqrt(a.size))
            got = structure_distance(None, None, PairAttention(a, b))
            assert got == pytest.approx(want, rel=1e-12)

        # masked edit: perturb only the detected region
        edited = img.copy()
        edited[6:10, 6:10] += 3.0
        bd_masked, _ = background_distance(
            img, edited, CenterBoxDetector(fraction=0.5), PatchPerceptualDistance()
        )
        full = PatchPerceptualDistance().distance(img, edited)
        assert bd_masked == 0.0
        assert full > 0.0

        # selection matches a brute-force sort on synthetic embeddings
        class OneHotImage:
            def __init__(self, v):
                self.v = v

        class E:
            def embed_image(self, image):
                return image.v

            def embed_text(self, text):
                return np.array([1.0, 0.0])

        pool = []
        for i in range(30):
            theta = rng.random() * np.pi
            pool.append((f"img{i:03d}", OneHotImage(np.array([np.cos(theta), np.sin(theta)]))))
        picked, flagged = select_task_images(pool, "domain", 10, E(), E())
        assert flagged is False
        scores = {pid: img.v[0] / np.linalg.norm(img.v) for pid, img in pool}
        want_ids = [pid for pid, _ in sorted(pool, key=lambda p: (-scores[p[0]], p[0]))][:10]
        assert [row[1] for row in picked] == want_ids


def test_criterion_11_gpu_reproduction_report():
    backbone = os.environ.get("PICEDIT_GPU_BACKBONE")
    if not backbone:
        print(
            "[SKIP] criterion 11: GPU reproduction (set PICEDIT_GPU_BACKBONE to a local "
            "checkpoint; reported, not asserted)"
        )
        pytest.skip("no GPU backbone configured")
    from picedit.adapters import load_backbone

    load_backbone(backbone)
