import pytest
import torch
import torch.nn as nn

from conftest import finite_diff_grad, rel_error
from gknet.errors import ConfigurationError, ContractViolationError
from gknet.scf import (AttentionVector, SelectiveCorrelationFusion, relation,
                       selective_weights)


def test_attention_vector_zero_input_zero_params():
    av = AttentionVector(4, 8)
    with torch.no_grad():
        for p in av.parameters():
            p.zero_()
    out = av(torch.zeros(1, 4, 6, 6))
    assert torch.equal(out, torch.zeros(1, 8))


def test_attention_vector_output_length():
    torch.manual_seed(0)
    for c_in in (3, 8, 12):
        av = AttentionVector(c_in, 16)
        assert av(torch.randn(2, c_in, 5, 5)).shape == (2, 16)


def test_attention_vector_constant_input_permutation_invariant():
    torch.manual_seed(1)
    av = AttentionVector(3, 8)
    const = torch.full((1, 3, 4, 4), 0.5)
    v1 = av(const)
    # any spatial permutation of a constant field is the same field
    v2 = av(const.flip(-1).flip(-2))
    assert torch.allclose(v1, v2)


def test_relation_identity_product():
    a = torch.tensor([[1.0, 2.0], [3.0, 4.0]])
    eye = torch.eye(2)
    assert torch.equal(relation(a, eye), a)


def test_relation_one_hot_rows():
    e = torch.eye(3)
    a = e[[0, 2, 1]]
    b = e[[1, 1, 0]]
    expected = a @ b.T
    assert torch.equal(relation(a, b), expected)
    assert set(expected.flatten().tolist()) <= {0.0, 1.0}


def test_relation_matches_triple_loop():
    torch.manual_seed(2)
    a = torch.randn(4, 8, dtype=torch.float64)
    b = torch.randn(4, 8, dtype=torch.float64)
    got = relation(a, b)
    for i in range(4):
        for j in range(4):
            acc = sum(a[i, k].item() * b[j, k].item() for k in range(8))
            assert abs(got[i, j].item() - acc) < 1e-12


def test_relation_shape_mismatch():
    with pytest.raises(ContractViolationError):
        relation(torch.zeros(2, 3), torch.zeros(3, 2))


def test_selective_weights_b_zero():
    torch.manual_seed(3)
    alpha = torch.randn(6)
    fc = nn.Linear(6, 6)
    s = selective_weights(alpha, torch.randn(6), torch.zeros(()), fc)
    assert torch.allclose(s, torch.sigmoid(alpha))
    s0 = selective_weights(torch.zeros(6), torch.randn(6), torch.zeros(()), fc)
    assert torch.allclose(s0, torch.full((6,), 0.5))


def test_selective_weights_matches_formula():
    torch.manual_seed(4)
    alpha, sel = torch.randn(5), torch.randn(5)
    fc = nn.Linear(5, 5)
    b = torch.ones(())
    got = selective_weights(alpha, sel, b, fc)
    want = torch.sigmoid(alpha + fc(sel))
    assert torch.allclose(got, want)


def _fusion(groups=4, c_prev=4, c_out=4, upsample=True, seed=0):
    torch.manual_seed(seed)
    return SelectiveCorrelationFusion(c_prev, c_out, groups=groups,
                                      upsample=upsample)


def test_fuse_output_shape():
    scf = _fusion()
    out = scf(torch.randn(1, 4, 8, 8), torch.randn(1, 4, 4, 4))
    assert out.shape == (1, 4, 8, 8)


def test_fuse_resolution_contract():
    scf = _fusion()
    with pytest.raises(ContractViolationError):
        scf(torch.randn(1, 4, 8, 8), torch.randn(1, 4, 8, 8))
    same = _fusion(upsample=False)
    with pytest.raises(ContractViolationError):
        same(torch.randn(1, 4, 8, 8), torch.randn(1, 4, 4, 4))


def test_groups_must_divide_channels():
    with pytest.raises(ConfigurationError):
        SelectiveCorrelationFusion(4, 6, groups=4)


def test_gates_in_open_interval():
    scf = _fusion(seed=5)
    s_enc, s_prev = scf.gates(torch.randn(2, 4, 8, 8) * 10,
                              torch.randn(2, 4, 4, 4) * 10)
    for s in (s_enc, s_prev):
        assert (s > 0).all() and (s < 1).all()


def test_forced_zero_gates_zero_output():
    scf = _fusion(seed=6)
    with torch.no_grad():
        # drive both attention MLPs to a large negative constant
        for av in (scf.att_enc, scf.att_prev):
            av.fc2.weight.zero_()
            av.fc2.bias.fill_(-60.0)
        scf.b.zero_()
    out = scf(torch.randn(1, 4, 8, 8), torch.randn(1, 4, 4, 4))
    assert out.abs().max().item() < 1e-20


def test_b_zero_relation_path_has_no_influence():
    scf = _fusion(seed=7)
    with torch.no_grad():
        scf.b.zero_()
    f_enc, f_prev = torch.randn(1, 4, 8, 8), torch.randn(1, 4, 4, 4)
    base = scf(f_enc, f_prev)
    with torch.no_grad():
        scf.rel_conv.weight.mul_(5.0)
        scf.rel_conv.bias.add_(3.0)
        scf.fc_enc.weight.mul_(-2.0)
    assert torch.equal(scf(f_enc, f_prev), base)


def test_branch_decomposition():
    scf = _fusion(seed=8)
    f_enc, f_prev = torch.randn(1, 4, 8, 8), torch.randn(1, 4, 4, 4)
    full = scf(f_enc, f_prev)
    s_enc, s_prev = scf.gates(f_enc, f_prev)
    branch_e = s_enc[:, :, None, None] * scf.proj_enc(f_enc)
    branch_p = torch.nn.functional.interpolate(
        s_prev[:, :, None, None] * scf.proj_prev(f_prev), scale_factor=2,
        mode="bilinear", align_corners=False)
    assert torch.allclose(full, branch_e + branch_p, atol=1e-6)


def test_fuse_gradient_finite_differences():
    torch.manual_seed(9)
    scf = _fusion().double()
    f_enc = torch.randn(1, 4, 4, 4, dtype=torch.float64, requires_grad=True)
    f_prev = torch.randn(1, 4, 2, 2, dtype=torch.float64, requires_grad=True)
    proj = torch.randn(1, 4, 4, 4, dtype=torch.float64)

    def loss():
        return (scf(f_enc, f_prev) * proj).sum()

    loss().backward()
    fd_e = finite_diff_grad(lambda: loss().detach(), f_enc.data)
    fd_p = finite_diff_grad(lambda: loss().detach(), f_prev.data)
    assert rel_error(f_enc.grad, fd_e) < 1e-3
    assert rel_error(f_prev.grad, fd_p) < 1e-3
