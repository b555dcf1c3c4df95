import numpy as np
import pytest
import torch

from facediff.models import (
    ControlAdapter,
    Denoiser,
    DenoiserConfig,
    control_features,
    denoise,
    init_adapter_from_denoiser,
    sinusoidal_embedding,
)


@pytest.fixture(scope="module")
def small():
    torch.manual_seed(0)
    d = Denoiser(DenoiserConfig(base_channels=16, time_dim=32))
    torch.manual_seed(0)
    a = init_adapter_from_denoiser(d)
    return d, a


def test_sinusoidal_embedding_shape_and_range():
    emb = sinusoidal_embedding(torch.tensor([0, 5, 99]), 32)
    assert emb.shape == (3, 32)
    assert emb.abs().max() <= 1.0
    assert not torch.equal(emb[0], emb[1])


def test_forward_shape(small):
    d, _ = small
    out = d(torch.randn(2, 192, 8, 8), torch.tensor([3, 7]))
    assert out.shape == (2, 192, 8, 8)


def test_non_square_latent(small):
    d, _ = small
    out = d(torch.randn(1, 192, 8, 16), torch.tensor([0]))
    assert out.shape == (1, 192, 8, 16)


def test_indivisible_latent_rejected(small):
    d, _ = small
    with pytest.raises(ValueError, match="divisible"):
        d(torch.randn(1, 192, 8, 6), torch.tensor([0]))


def test_tag_conditioning_changes_output(small):
    d, _ = small
    z = torch.randn(1, 192, 8, 8)
    t = torch.tensor([5])
    base = d(z, t, tags=[])
    tagged = d(z, t, tags=["smiling"])
    assert not torch.allclose(base, tagged)


def test_per_sample_tag_lists(small):
    d, _ = small
    z = torch.randn(2, 192, 8, 8)
    t = torch.tensor([5, 5])
    mixed = d(z, t, tags=[["smiling"], []])
    single = d(z[:1], t[:1], tags=["smiling"])
    null = d(z[1:], t[1:], tags=[])
    assert torch.allclose(mixed[0], single[0], atol=1e-6)
    assert torch.allclose(mixed[1], null[0], atol=1e-6)


def test_unknown_tag_rejected(small):
    d, _ = small
    with pytest.raises(ValueError):
        d(torch.randn(1, 192, 8, 8), torch.tensor([0]), tags=["halo"])


def test_fresh_adapter_is_exact_noop(small):
    d, a = small
    g = torch.Generator().manual_seed(2)
    for _ in range(20):
        z = torch.randn(1, 192, 8, 8, generator=g)
        deg = torch.rand(1, 3, 64, 64, generator=g)
        t = torch.tensor([int(torch.randint(0, 100, (1,), generator=g))])
        ctrl = a(deg, z, t)
        with_ctrl = d(z, t, ctrl=ctrl)
        without = d(z, t)
        assert (with_ctrl - without).abs().max().item() < 1e-6


def test_adapter_encoder_is_value_copy(small):
    d, a = small
    for k, v in d.encoder.state_dict().items():
        assert torch.equal(a.encoder.state_dict()[k], v)
    # and a true copy, not shared storage
    ptr_d = {v.data_ptr() for v in d.encoder.state_dict().values()}
    ptr_a = {v.data_ptr() for v in a.encoder.state_dict().values()}
    assert ptr_d.isdisjoint(ptr_a)


def test_adapter_feature_count_and_shapes(small):
    d, a = small
    z = torch.randn(1, 192, 8, 8)
    feats = a(torch.rand(1, 3, 64, 64), z, torch.tensor([0]))
    assert len(feats) == 4
    assert feats[0].shape[-2:] == (8, 8)
    assert feats[-1].shape[-2:] == (2, 2)


def test_ctrl_count_mismatch_rejected(small):
    d, a = small
    z = torch.randn(1, 192, 8, 8)
    feats = a(torch.rand(1, 3, 64, 64), z, torch.tensor([0]))
    with pytest.raises(ValueError):
        d(z, torch.tensor([0]), ctrl=feats[:2])


def test_adapter_size_mismatch_rejected(small):
    _, a = small
    with pytest.raises(ValueError, match="factor"):
        a(torch.rand(1, 3, 32, 32), torch.randn(1, 192, 8, 8), torch.tensor([0]))


def test_nonzero_adapter_changes_output(small):
    d, _ = small
    torch.manual_seed(1)
    a2 = init_adapter_from_denoiser(d)
    with torch.no_grad():
        for zc in a2.zero_convs:
            zc.weight.add_(0.01)
    z = torch.randn(1, 192, 8, 8)
    t = torch.tensor([3])
    ctrl = a2(torch.rand(1, 3, 64, 64), z, t)
    assert not torch.allclose(d(z, t, ctrl=ctrl), d(z, t))


def test_freeze_contract(small):
    torch.manual_seed(0)
    d = Denoiser(DenoiserConfig(base_channels=16, time_dim=32))
    assert not d.frozen
    d.freeze()
    assert d.frozen
    assert all(not p.requires_grad for p in d.parameters())


def test_single_sample_wrappers(small):
    d, a = small
    z = torch.randn(192, 8, 8)
    out = denoise(d, z, 4)
    assert out.shape == (192, 8, 8)
    deg = np.random.default_rng(0).random((64, 64, 3)).astype(np.float32)
    feats = control_features(a, deg, z, 4)
    assert feats[0].dim() == 3
    out2 = denoise(d, z, 4, ctrl=feats)
    assert (out2 - out).abs().max().item() < 1e-6  # fresh adapter: still no-op


def test_null_prompt_embedding_distinct(small):
    d, _ = small
    t = torch.tensor([0])
    z = torch.randn(1, 192, 8, 8)
    assert not torch.allclose(d(z, t, tags=[]), d(z, t, tags=["no makeup"]))
