import itertools

import pytest
import torch
import torch.nn.functional as F

from conftest import finite_diff_grad, rel_error
from gknet.errors import ConfigurationError, ContractViolationError
from gknet.lre import (LongDistanceReferenceExtractor, TransformerConfig,
                       TransformerLayer)


def _lre(channels=16, hw=8, layers=1, heads=4, seed=0):
    torch.manual_seed(seed)
    return LongDistanceReferenceExtractor(
        channels, hw * hw, TransformerConfig(layers=layers, heads=heads))


def test_output_shape_preserved():
    lre = _lre()
    x = torch.randn(2, 16, 8, 8)
    assert lre(x).shape == x.shape


def test_token_count_mismatch_rejected():
    lre = _lre()
    with pytest.raises(ContractViolationError):
        lre(torch.randn(1, 16, 4, 4))


def test_heads_must_divide_dim():
    with pytest.raises(ConfigurationError):
        TransformerConfig(heads=3).validate(16)


def test_attention_rows_sum_to_one():
    lre = _lre(seed=1)
    tokens = torch.randn(1, 64, 16) + lre.pos
    attn = lre.layers[0].attn.attention(lre.layers[0].norm1(tokens))
    sums = attn.sum(dim=-1)
    assert (sums - 1.0).abs().max().item() < 1e-6


def test_attention_maps_contract():
    lre = _lre(heads=4, seed=2)
    maps = lre.attention_maps(torch.randn(16, 8, 8), (3, 5))
    assert maps.shape == (4, 8, 8)
    assert (maps.sum(dim=(-2, -1)) - 1.0).abs().max().item() < 1e-6
    with pytest.raises(ContractViolationError):
        lre.attention_maps(torch.randn(16, 8, 8), (8, 0))


def test_identical_tokens_give_uniform_attention():
    lre = _lre(seed=3)
    with torch.no_grad():
        lre.pos.zero_()
    feat = torch.ones(16, 8, 8) * 0.37  # all tokens identical
    maps = lre.attention_maps(feat, (0, 0))
    assert torch.allclose(maps, torch.full_like(maps, 1.0 / 64), atol=1e-6)


def test_single_token_reduces_to_residual_mlp():
    torch.manual_seed(4)
    lre = LongDistanceReferenceExtractor(8, 1, TransformerConfig(layers=1, heads=2))
    feat = torch.randn(1, 8, 1, 1)
    maps = lre.attention_maps(feat, (0, 0))
    assert torch.allclose(maps, torch.ones_like(maps))
    # hand evaluation: attention context is just the value projection of the token
    layer = lre.layers[0]
    x = feat.flatten(2).transpose(1, 2) + lre.pos
    normed = layer.norm1(x)
    qkv = layer.attn.qkv(normed).view(1, 1, 3, 8)
    v = qkv[:, :, 2]
    after_attn = x + layer.attn.out(v)
    manual = after_attn + layer.ff(layer.norm2(after_attn))
    assert torch.allclose(lre.tokens_forward(x), manual, atol=1e-6)


def test_permutation_equivariance_without_positions():
    torch.manual_seed(5)
    layer = TransformerLayer(4, 2, 2).double()
    tokens = torch.randn(1, 4, 4, dtype=torch.float64)
    base = layer(tokens)
    for perm in itertools.permutations(range(4)):
        idx = torch.tensor(perm)
        assert torch.allclose(layer(tokens[:, idx]), base[:, idx], atol=1e-10)


def test_gradient_finite_differences():
    torch.manual_seed(6)
    layer = TransformerLayer(4, 2, 2).double()
    tokens = torch.randn(1, 2, 4, dtype=torch.float64, requires_grad=True)
    proj = torch.randn(1, 2, 4, dtype=torch.float64)

    def loss():
        return (layer(tokens) * proj).sum()

    loss().backward()
    fd = finite_diff_grad(lambda: loss().detach(), tokens.data)
    assert rel_error(tokens.grad, fd) < 1e-3
