import numpy as np
import pytest
import torch

from gknet.data import SynthesisConfig, generate_real_image, synthesize_composite
from gknet.lre import TransformerConfig
from gknet.model import NetworkConfig


def finite_diff_grad(fn, tensor: torch.Tensor, step: float = 1e-4) -> torch.Tensor:
    """Central finite differences of scalar fn() w.r.t. tensor (in place probes)."""
    grad = torch.zeros_like(tensor)
    flat, gflat = tensor.view(-1), grad.view(-1)
    with torch.no_grad():
        for i in range(flat.numel()):
            orig = flat[i].item()
            flat[i] = orig + step
            fp = float(fn())
            flat[i] = orig - step
            fm = float(fn())
            flat[i] = orig
            gflat[i] = (fp - fm) / (2.0 * step)
    return grad


def rel_error(a: torch.Tensor, b: torch.Tensor) -> float:
    denom = max(a.norm().item(), b.norm().item(), 1e-12)
    return (a - b).norm().item() / denom


def tiny_network_config(resolution: int = 16, depth: int = 2) -> NetworkConfig:
    return NetworkConfig(depth=depth, base_channels=8, resolution=resolution,
                         scf_groups=4,
                         transformer=TransformerConfig(layers=1, heads=2))


def make_triples(count: int, resolution: int, seed: int = 0):
    rng = np.random.default_rng(seed)
    cfg = SynthesisConfig(seed=seed)
    return [synthesize_composite(generate_real_image(resolution, rng), cfg, rng,
                                 triple_id=f"t{i:03d}")
            for i in range(count)]


@pytest.fixture
def rng():
    return np.random.default_rng(0)
