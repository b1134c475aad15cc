import warnings

import numpy as np
import pytest
import torch
from scipy import stats

from styledistill.diffusion.core import predict_noise, to_image_space, to_model_space
from styledistill.diffusion.sampling import ddim_sample
from styledistill.diffusion.schedule import ContractError
from styledistill.diffusion.unet import HookStateError
from styledistill.pipeline import build_style_reference, load_style_image
from styledistill.seeding import param_checksum
from styledistill.style import (DEFAULT_SWAP_LAYERS, AttentionCache, IncompleteCacheError,
                                MissingTimestepError, ReconstructionWarning, StyleReference,
                                capture_style_features, invert_style_image, load_style_reference,
                                modified_predict_noise, save_style_reference)
from styledistill.style.injection import modified_cfg_combine


@pytest.fixture
def tiny_ref(tiny_denoiser):
    img = torch.rand(3, 32, 32, generator=torch.Generator().manual_seed(1))
    return StyleReference(image=img, origin="generated",
                          style_prompt=tiny_denoiser.embed_prompt("stripes", kind="style"))


# ---------------------------------------------------------------- reference and cache contracts
def test_style_reference_invariants(tiny_denoiser):
    img = torch.rand(3, 32, 32)
    with pytest.raises(ValueError):
        StyleReference(image=img, origin="generated")
    with pytest.raises(ValueError):
        StyleReference(image=img, origin="inverted")
    with pytest.raises(ValueError):
        StyleReference(image=img, origin="painted", style_prompt=tiny_denoiser.empty_prompt())
    ref = StyleReference(image=img, origin="inverted", trajectory={0: img[None], 500: img[None]})
    assert ref.covers([0, 500]) and not ref.covers([0, 499])
    with pytest.raises(MissingTimestepError) as err:
        ref.latent_at(tiny_denoiser.schedule, 499)
    assert err.value.t == 499 and "499" in str(err.value)


def test_capture_covers_exactly_swap_layers(tiny_denoiser, tiny_ref):
    cache = AttentionCache(denoiser=tiny_denoiser, reference=tiny_ref)
    cache.ensure(400)
    assert cache.keys() == {(lid, 400) for lid in DEFAULT_SWAP_LAYERS}
    assert cache.timesteps() == {400}
    assert not tiny_denoiser.hooks_active


def test_capture_is_deterministic(tiny_denoiser, tiny_ref):
    a = capture_style_features(tiny_denoiser, tiny_ref, 250)
    b = capture_style_features(tiny_denoiser, tiny_ref, 250)
    assert a.keys() == b.keys()
    for k in a:
        assert torch.equal(a[k][0], b[k][0]) and torch.equal(a[k][1], b[k][1])


def test_cache_rejects_overwrite_and_incomplete(tiny_denoiser, tiny_ref):
    cache = AttentionCache(denoiser=tiny_denoiser, reference=tiny_ref)
    cache.ensure(100)
    k, v = cache.kv_at(100)["mid8"]
    with pytest.raises(ContractError):
        cache.store("mid8", 100, k, v)
    with pytest.raises(IncompleteCacheError):
        cache.kv_at(101)
    with pytest.raises(IncompleteCacheError):
        AttentionCache().ensure(5)
    with pytest.raises(ValueError):
        AttentionCache(swap_layers=())


def test_self_swap_identity_and_immutability(tiny_denoiser):
    d = tiny_denoiser
    z = torch.randn(1, 3, 32, 32, generator=torch.Generator().manual_seed(3))
    y = d.embed_prompt("red cube")
    t = 321
    cache = AttentionCache()
    with d.capture_attention(cache.swap_layers) as sink:
        base = predict_noise(d, z, t, y)
    for lid in cache.swap_layers:
        cache.store(lid, t, *sink[lid])
    digest, checksum = cache.digest(), param_checksum(d)
    outs = [modified_predict_noise(d, z, t, y, cache) for _ in range(100)]
    assert max(float((o - base).abs().max()) for o in outs) <= 1e-5
    assert cache.digest() == digest and param_checksum(d) == checksum
    assert not d.hooks_active


def test_modified_prediction_restores_hooks_on_error(tiny_denoiser, tiny_ref):
    cache = AttentionCache(denoiser=tiny_denoiser, reference=tiny_ref)
    cache.ensure(200)
    with pytest.raises(RuntimeError):  # wrong channel count fails inside the swapped pass
        modified_predict_noise(tiny_denoiser, torch.zeros(5, 32, 32), 200,
                               tiny_denoiser.empty_prompt(), cache)
    assert not tiny_denoiser.hooks_active
    with tiny_denoiser.capture_attention():
        with pytest.raises(HookStateError):
            modified_predict_noise(tiny_denoiser, torch.zeros(3, 32, 32), 200,
                                   tiny_denoiser.empty_prompt(), cache)


def test_modified_cfg_endpoints(tiny_denoiser, tiny_ref):
    d = tiny_denoiser
    cache = AttentionCache(denoiser=d, reference=tiny_ref)
    cache.ensure(600)
    z, y = torch.randn(3, 32, 32), d.embed_prompt("green cone")
    assert torch.equal(modified_cfg_combine(d, z, 600, y, cache, 1.0),
                       modified_predict_noise(d, z, 600, y, cache))
    assert torch.equal(modified_cfg_combine(d, z, 600, y, cache, 0.0),
                       modified_predict_noise(d, z, 600, d.empty_prompt(), cache))


# ---------------------------------------------------------------- trained model behaviour
def _refs(d, style, seeds):
    img = load_style_image(f"builtin:{style}", 32, 0)
    return [build_style_reference(d, img, style, "generated", s) for s in seeds]


def test_distinct_styles_have_distinct_deep_value_features(trained_denoiser):
    d = trained_denoiser
    deepest = "mid8"
    means = {}
    for style in ("stripes", "fire"):
        means[style] = [float(capture_style_features(d, r, 300, layers=(deepest,))[(deepest, 300)][1].mean())
                        for r in _refs(d, style, range(4))]
    a, b = np.array(means["stripes"]), np.array(means["fire"])
    pooled = np.sqrt((a.var(ddof=1) + b.var(ddof=1)) / 2)
    assert abs(a.mean() - b.mean()) > 5 * pooled
    assert stats.ttest_ind(a, b, equal_var=False).pvalue < 1e-3


def test_foreign_style_cache_changes_prediction(trained_denoiser):
    d = trained_denoiser
    ref = _refs(d, "fire", [0])[0]
    cache = AttentionCache(denoiser=d, reference=ref)
    z = torch.randn(1, 3, 32, 32, generator=torch.Generator().manual_seed(0))
    y = d.embed_prompt("blue sphere")
    before = param_checksum(d)
    for t in (200, 500, 800):
        cache.ensure(t)
        diff = modified_predict_noise(d, z, t, y, cache) - predict_noise(d, z, t, y)
        assert diff.norm() > 1e-2
    assert param_checksum(d) == before


# ---------------------------------------------------------------- inversion
def test_ddim_inversion_roundtrip_trained(trained_denoiser):
    d = trained_denoiser
    img = load_style_image("builtin:stripes", 32, 0)
    before = param_checksum(d)
    with warnings.catch_warnings():
        warnings.simplefilter("error", ReconstructionWarning)
        ref = invert_style_image(d, img, caption="stripes")
    assert ref.origin == "inverted" and ref.info["reconstruction_mae"] < 0.05
    lo, hi = d.schedule.t_range()
    assert ref.covers(range(lo, hi + 1))
    assert param_checksum(d) == before
    again = invert_style_image(d, img, caption="stripes")
    assert all(torch.equal(ref.trajectory[t], again.trajectory[t]) for t in (0, 500, 1000))


def test_inversion_recovers_generating_noise(trained_denoiser):
    d = trained_denoiser
    p = d.embed_prompt("stripes", kind="style")
    z_T = torch.randn(1, 3, 32, 32, generator=torch.Generator().manual_seed(7))
    x0 = ddim_sample(d, p, z_T, steps=100, guidance=1.0, clip=False)
    img = to_image_space(x0)[0]
    ref = invert_style_image(d, img, caption="stripes", steps=100, threshold=1.0)
    corr = np.corrcoef(ref.trajectory[1000].flatten().numpy(), z_T.flatten().numpy())[0, 1]
    assert corr > 0


def test_inversion_warns_above_threshold_and_checks_size(tiny_denoiser):
    img = torch.rand(3, 32, 32)
    with pytest.warns(ReconstructionWarning):
        ref = invert_style_image(tiny_denoiser, img, steps=10, threshold=0.0)
    assert "reconstruction_mae" in ref.info
    with pytest.raises(ContractError):
        invert_style_image(tiny_denoiser, torch.rand(3, 16, 16))
    with pytest.raises(ValueError):
        invert_style_image(tiny_denoiser, img, mode="magic")


def test_textual_inversion_mode(tiny_denoiser):
    img = torch.rand(3, 32, 32)
    ref = invert_style_image(tiny_denoiser, img, mode="textual-inversion", ti_steps=2, caption="fire")
    assert ref.origin == "generated" and ref.style_prompt.text == "<h>"
    assert ref.info["mode"] == "textual-inversion"


def test_style_reference_persistence(tiny_denoiser, tmp_path):
    img = torch.rand(3, 32, 32)
    ref = invert_style_image(tiny_denoiser, img, steps=5, threshold=10.0, caption="dots")
    save_style_reference(ref, tmp_path / "ckpt.pt")
    back = load_style_reference(tmp_path / "ckpt.pt", ref.key)
    assert back.key == ref.key and back.origin == "inverted"
    assert all(torch.equal(back.trajectory[t], ref.trajectory[t]) for t in ref.trajectory)
    assert back.style_prompt.text == "dots"


def test_generated_latent_noise_is_per_timestep(tiny_ref, tiny_denoiser):
    s = tiny_denoiser.schedule
    a, b = tiny_ref.latent_at(s, 300), tiny_ref.latent_at(s, 300)
    assert torch.equal(a, b) and a.shape == (1, 3, 32, 32)
    assert not torch.equal(a, tiny_ref.latent_at(s, 301))
    assert torch.allclose(tiny_ref.latent_at(s, 0), to_model_space(tiny_ref.image)[None])
