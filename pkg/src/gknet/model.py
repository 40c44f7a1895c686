"""Full harmonization network.

A U-Net takes the composite RGB image concatenated with the foreground mask
(4 channels). The deepest encoder feature passes through the long-distance
reference extractor; a chain of kernel-prediction blocks (deepest first)
fuses each encoder level with the previous block's feature and emits one set
of per-pixel kernels per modulated decoder level. The decoder applies kernel
modulation to its incoming feature before each up-convolution, adds
(optionally mask-gated) encoder skips, and ends in a zero-initialised
3-channel head whose output is added to the input composite, so the freshly
initialised network is an exact identity.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

import torch
import torch.nn as nn
import torch.nn.functional as F

from .checkpoint import load_container, save_container
from .errors import ConfigurationError, ContractViolationError
from .lre import LongDistanceReferenceExtractor, TransformerConfig
from .modulation import kernel_modulate
from .scf import SelectiveCorrelationFusion

__all__ = ["NetworkConfig", "GKNet", "blend", "build_model",
           "save_checkpoint", "load_checkpoint"]


@dataclass
class NetworkConfig:
    depth: int = 4
    base_channels: int = 16
    kernel_size: int = 3
    modulation_levels: int | None = None  # deepest decoder levels modulated; default min(3, depth)
    scf_groups: int = 8
    transformer: TransformerConfig = field(default_factory=TransformerConfig)
    skip_attention: bool = True
    resolution: int = 256

    def __post_init__(self):
        if self.modulation_levels is None:
            self.modulation_levels = min(3, self.depth)
        self.validate()

    def channels(self, level: int) -> int:
        """Channel count at a level, level 1 being the deepest."""
        return self.base_channels * 2 ** (self.depth - level)

    def validate(self) -> None:
        if self.depth < 2:
            raise ConfigurationError("depth must be >= 2")
        if self.kernel_size % 2 == 0 or self.kernel_size < 1:
            raise ConfigurationError("kernel size must be odd and positive")
        if not 1 <= self.modulation_levels <= self.depth:
            raise ConfigurationError("modulation level count must be in [1, depth]")
        if self.resolution % 2 ** (self.depth - 1) != 0:
            raise ConfigurationError(
                f"resolution {self.resolution} not divisible by 2^{self.depth - 1}"
            )
        for level in range(1, self.modulation_levels + 1):
            if self.channels(level) % self.scf_groups != 0:
                raise ConfigurationError(
                    f"group count {self.scf_groups} must divide C={self.channels(level)} "
                    f"at level {level}"
                )
        self.transformer.validate(self.channels(1))

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkConfig":
        d = dict(d)
        if isinstance(d.get("transformer"), dict):
            d["transformer"] = TransformerConfig(**d["transformer"])
        return cls(**d)


class Encoder(nn.Module):
    """Strided-conv pyramid; returns features deepest-first."""

    def __init__(self, cfg: NetworkConfig):
        super().__init__()
        self.depth = cfg.depth
        self.stem = nn.Sequential(
            nn.Conv2d(4, cfg.channels(cfg.depth), 3, padding=1),
            nn.LeakyReLU(0.2, inplace=True),
        )
        downs = []
        for level in range(cfg.depth - 1, 0, -1):
            downs.append(nn.Sequential(
                nn.Conv2d(cfg.channels(level + 1), cfg.channels(level), 3,
                          stride=2, padding=1),
                nn.LeakyReLU(0.2, inplace=True),
                nn.Conv2d(cfg.channels(level), cfg.channels(level), 3, padding=1),
                nn.LeakyReLU(0.2, inplace=True),
            ))
        self.downs = nn.ModuleList(downs)

    def forward(self, x: torch.Tensor) -> list[torch.Tensor]:
        feats = [self.stem(x)]
        for down in self.downs:
            feats.append(down(feats[-1]))
        return feats[::-1]


class KernelPredictionBlock(nn.Module):
    """Fuse an encoder feature with the previous block's feature and emit kernels.

    The kernel head's final convolution starts with zero weights and a
    one-hot-center bias, so all predicted kernels are exact identity filters
    at initialisation.
    """

    def __init__(self, prev_channels: int, channels: int, kernel_size: int,
                 groups: int, deepest: bool):
        super().__init__()
        self.channels = channels
        self.kernel_size = kernel_size
        self.fuse = SelectiveCorrelationFusion(prev_channels, channels,
                                               groups=groups, upsample=not deepest)
        self.res_stack = nn.Sequential(
            nn.Conv2d(channels, channels, 3, padding=1),
            nn.LeakyReLU(0.2, inplace=True),
            nn.Conv2d(channels, channels, 3, padding=1),
        )
        self.kernel_pre = nn.Sequential(
            nn.Conv2d(channels, channels, 3, padding=1),
            nn.LeakyReLU(0.2, inplace=True),
        )
        n_sq = kernel_size * kernel_size
        self.kernel_head = nn.Conv2d(channels, channels * n_sq, 1)
        with torch.no_grad():
            self.kernel_head.weight.zero_()
            bias = torch.zeros(channels * n_sq)
            bias[torch.arange(channels) * n_sq + (n_sq - 1) // 2] = 1.0
            self.kernel_head.bias.copy_(bias)

    def forward(self, f_enc: torch.Tensor, f_prev: torch.Tensor):
        fused = self.fuse(f_enc, f_prev)
        f_kpb = fused + self.res_stack(fused)
        raw = self.kernel_head(self.kernel_pre(f_kpb))
        b, _, h, w = raw.shape
        kernels = raw.view(b, self.channels, self.kernel_size ** 2, h, w)
        return kernels, f_kpb


class GKNet(nn.Module):
    def __init__(self, cfg: NetworkConfig):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        self.encoder = Encoder(cfg)
        bottleneck_hw = cfg.resolution // 2 ** (cfg.depth - 1)
        self.lre = LongDistanceReferenceExtractor(
            cfg.channels(1), bottleneck_hw * bottleneck_hw, cfg.transformer)
        blocks = []
        for level in range(1, cfg.modulation_levels + 1):
            prev_c = cfg.channels(1) if level == 1 else cfg.channels(level - 1)
            blocks.append(KernelPredictionBlock(
                prev_c, cfg.channels(level), cfg.kernel_size, cfg.scf_groups,
                deepest=(level == 1)))
        self.kpb_blocks = nn.ModuleList(blocks)
        ups, gates = [], []
        for level in range(1, cfg.depth):
            ups.append(nn.Sequential(
                nn.ConvTranspose2d(cfg.channels(level), cfg.channels(level + 1),
                                   4, stride=2, padding=1),
                nn.LeakyReLU(0.2, inplace=True),
            ))
            gates.append(nn.Conv2d(cfg.channels(level + 1) + 1,
                                   cfg.channels(level + 1), 3, padding=1))
        self.ups = nn.ModuleList(ups)
        self.skip_gates = nn.ModuleList(gates)
        self.head = nn.Conv2d(cfg.channels(cfg.depth), 3, 3, padding=1)
        with torch.no_grad():
            self.head.weight.zero_()
            self.head.bias.zero_()

    def _check_input(self, x: torch.Tensor) -> None:
        if x.dim() != 4 or x.shape[1] != 4:
            raise ContractViolationError(
                f"expected [B, 4, H, W] input, got {tuple(x.shape)}")
        div = 2 ** (self.cfg.depth - 1)
        if x.shape[-2] % div or x.shape[-1] % div:
            raise ContractViolationError(
                f"spatial size {tuple(x.shape[-2:])} not divisible by {div}")

    def predict_kernels(self, features: list[torch.Tensor],
                        f_lr: torch.Tensor) -> dict[int, torch.Tensor]:
        """Run the KPB chain; returns {level: kernels} for modulated levels."""
        kernels: dict[int, torch.Tensor] = {}
        f_prev = f_lr
        for level, block in enumerate(self.kpb_blocks, start=1):
            k, f_prev = block(features[level - 1], f_prev)
            kernels[level] = k
        return kernels

    def forward(self, x: torch.Tensor, modulate: bool = True):
        """Returns (raw output [B, 3, H, W], kernels per level, diagnostics)."""
        self._check_input(x)
        mask = x[:, 3:4]
        features = self.encoder(x)
        f_lr = self.lre(features[0])
        kernels = self.predict_kernels(features, f_lr)
        d = features[0]
        for level in range(1, self.cfg.depth):
            if modulate and level in kernels:
                d = kernel_modulate(d, kernels[level])
            d = self.ups[level - 1](d)
            skip = features[level]
            if self.cfg.skip_attention:
                mask_l = F.interpolate(mask, size=skip.shape[-2:], mode="nearest")
                gate = torch.sigmoid(self.skip_gates[level - 1](
                    torch.cat([skip, mask_l], dim=1)))
                skip = gate * skip
            d = d + skip
        if modulate and self.cfg.depth in kernels:
            d = kernel_modulate(d, kernels[self.cfg.depth])
        out = x[:, :3] + self.head(d)
        diagnostics = {"f_lr": f_lr, "feature_shapes": [tuple(f.shape) for f in features]}
        return out, kernels, diagnostics


def blend(output: torch.Tensor, composite: torch.Tensor,
          mask: torch.Tensor) -> torch.Tensor:
    """Foreground from the network output, background copied bit-exactly."""
    if output.shape != composite.shape:
        raise ContractViolationError(
            f"output {tuple(output.shape)} vs composite {tuple(composite.shape)}")
    if mask.shape[-2:] != output.shape[-2:]:
        raise ContractViolationError("mask resolution mismatch")
    return torch.where(mask.to(torch.bool), output, composite)


def build_model(cfg: NetworkConfig, seed: int | None = None) -> GKNet:
    if seed is not None:
        torch.manual_seed(seed)
    return GKNet(cfg)


def save_checkpoint(model: GKNet, path) -> None:
    tensors = {name: t for name, t in model.state_dict().items()}
    save_container(path, tensors, {"kind": "model", "config": model.cfg.to_dict()})


def load_checkpoint(path, expected_config: NetworkConfig | None = None) -> GKNet:
    tensors, meta = load_container(path)
    if meta.get("kind") == "train":
        cfg_dict = meta["network_config"]
        tensors = {n[len("model."):]: t for n, t in tensors.items()
                   if n.startswith("model.")}
    elif meta.get("kind") == "model":
        cfg_dict = meta["config"]
    else:
        raise ConfigurationError(f"{path}: unknown checkpoint kind {meta.get('kind')}")
    cfg = NetworkConfig.from_dict(cfg_dict)
    if expected_config is not None and cfg.to_dict() != expected_config.to_dict():
        raise ConfigurationError("checkpoint network config does not match expected config")
    model = GKNet(cfg)
    model.load_state_dict(tensors)
    return model
