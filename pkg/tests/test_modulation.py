import pytest
import torch

from conftest import finite_diff_grad, rel_error
from gknet.errors import ContractViolationError
from gknet.modulation import (dump_kernels, kernel_modulate,
                              kernel_modulate_oracle, load_kernels)


def identity_kernels(c, n, h, w):
    k = torch.zeros(c, n * n, h, w)
    k[:, (n * n - 1) // 2] = 1.0
    return k


def test_identity_kernel_is_exact():
    torch.manual_seed(0)
    feat = torch.randn(3, 6, 7)
    k = identity_kernels(3, 3, 6, 7)
    assert torch.equal(kernel_modulate(feat, k), feat)
    assert torch.equal(kernel_modulate_oracle(feat, k), feat)


def test_zero_kernel_gives_zeros():
    feat = torch.randn(2, 4, 4)
    k = torch.zeros(2, 9, 4, 4)
    assert torch.equal(kernel_modulate(feat, k), torch.zeros_like(feat))
    assert torch.equal(kernel_modulate_oracle(feat, k), torch.zeros_like(feat))


def test_matches_oracle_on_ramp_input():
    torch.manual_seed(7)
    feat = torch.arange(16, dtype=torch.float64).view(1, 4, 4)
    k = torch.randn(1, 9, 4, 4, dtype=torch.float64)
    fast = kernel_modulate(feat, k)
    slow = kernel_modulate_oracle(feat, k)
    assert (fast - slow).abs().max().item() <= 1e-6


def test_constant_input_sums_kernel_weights():
    c_val = 0.7
    feat = torch.full((1, 5, 5), c_val, dtype=torch.float64)
    k = torch.rand(1, 9, 5, 5, dtype=torch.float64)
    out = kernel_modulate(feat, k)
    # interior pixel: all 9 taps land inside, so out = c * sum of weights
    expected = c_val * k[0, :, 2, 2].sum()
    assert abs(out[0, 2, 2].item() - expected.item()) < 1e-12


def test_linearity():
    torch.manual_seed(1)
    f1, f2 = torch.randn(2, 6, 6), torch.randn(2, 6, 6)
    k = torch.randn(2, 9, 6, 6)
    a, b = 1.7, -0.3
    lhs = kernel_modulate(a * f1 + b * f2, k)
    rhs = a * kernel_modulate(f1, k) + b * kernel_modulate(f2, k)
    assert (lhs - rhs).abs().max().item() < 1e-5


def test_locality():
    torch.manual_seed(2)
    feat = torch.randn(1, 7, 7)
    k = torch.randn(1, 9, 7, 7)
    base = kernel_modulate(feat, k)
    bumped = feat.clone()
    qy, qx = 3, 3
    bumped[0, qy, qx] += 1.0
    diff = (kernel_modulate(bumped, k) - base)[0].abs()
    for py in range(7):
        for px in range(7):
            if max(abs(py - qy), abs(px - qx)) > 1:
                assert diff[py, px].item() == 0.0


def test_channel_independence():
    torch.manual_seed(3)
    feat = torch.randn(3, 5, 5)
    k = torch.randn(3, 9, 5, 5)
    base = kernel_modulate(feat, k)
    zeroed = feat.clone()
    zeroed[1] = 0.0
    out = kernel_modulate(zeroed, k)
    assert torch.equal(out[1], torch.zeros(5, 5))
    assert torch.equal(out[0], base[0])
    assert torch.equal(out[2], base[2])


@pytest.mark.parametrize("n", [1, 3, 5])
def test_oracle_agreement_random(n):
    torch.manual_seed(10 + n)
    for _ in range(10):
        c = int(torch.randint(1, 5, (1,)))
        h = int(torch.randint(n, 9, (1,)))
        w = int(torch.randint(n, 9, (1,)))
        feat = torch.randn(c, h, w, dtype=torch.float64)
        k = torch.randn(c, n * n, h, w, dtype=torch.float64)
        fast = kernel_modulate(feat, k)
        slow = kernel_modulate_oracle(feat, k)
        assert (fast - slow).abs().max().item() <= 1e-6


def test_gradients_match_finite_differences():
    torch.manual_seed(4)
    feat = torch.randn(1, 5, 5, dtype=torch.float64, requires_grad=True)
    k = torch.randn(1, 9, 5, 5, dtype=torch.float64, requires_grad=True)
    proj = torch.randn(1, 5, 5, dtype=torch.float64)

    def loss():
        return (kernel_modulate(feat, k) * proj).sum()

    loss().backward()
    fd_f = finite_diff_grad(lambda: loss().detach(), feat.data)
    fd_k = finite_diff_grad(lambda: loss().detach(), k.data)
    assert rel_error(feat.grad, fd_f) < 1e-4
    assert rel_error(k.grad, fd_k) < 1e-4


def test_even_kernel_rejected():
    with pytest.raises(ContractViolationError):
        kernel_modulate(torch.zeros(1, 4, 4), torch.zeros(1, 4, 4, 4))


def test_shape_mismatch_rejected():
    with pytest.raises(ContractViolationError):
        kernel_modulate(torch.zeros(1, 4, 4), torch.zeros(2, 9, 4, 4))
    with pytest.raises(ContractViolationError):
        kernel_modulate(torch.zeros(1, 4, 4), torch.zeros(1, 9, 5, 4))


def test_kernel_dump_round_trip(tmp_path):
    torch.manual_seed(5)
    k = torch.randn(2, 9, 4, 4)
    path = tmp_path / "k.bin"
    dump_kernels(path, k)
    back = load_kernels(path)
    assert torch.equal(back, k)
