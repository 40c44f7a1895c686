"""Selective correlation fusion of a shallow encoder feature with the
previous (deeper) kernel-prediction feature.

Both branches produce a channel-attention vector (3x3 conv, global average
pooling, small MLP). The vectors are grouped into an n x m layout, their
matrix product forms an n x n relation map, and a small convolution over that
map yields per-branch selective factors. Each branch's gate is

    S = sigmoid(alpha + b * FC(selective_factor))

with a learnable scalar b (initialised to 0, so training starts from plain
per-branch channel attention). The fused output is

    S_E * Conv(F_E) + Upsample(S_prev * Conv(F_prev))

with bilinear x2 upsampling (skipped for the deepest block, where both
inputs share a resolution).
"""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ConfigurationError, ContractViolationError

__all__ = ["AttentionVector", "relation", "selective_weights", "SelectiveCorrelationFusion"]


class AttentionVector(nn.Module):
    """3x3 conv -> global average pool -> two-layer MLP to out_channels."""

    def __init__(self, in_channels: int, out_channels: int):
        super().__init__()
        self.conv = nn.Conv2d(in_channels, in_channels, 3, padding=1)
        self.fc1 = nn.Linear(in_channels, out_channels)
        self.fc2 = nn.Linear(out_channels, out_channels)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h = self.conv(x).mean(dim=(-2, -1))
        return self.fc2(F.relu(self.fc1(h)))


def relation(grouped_a: torch.Tensor, grouped_b: torch.Tensor) -> torch.Tensor:
    """Channel-group relation matrix: A = grouped_a @ grouped_b^T ([.., n, n])."""
    if grouped_a.shape != grouped_b.shape:
        raise ContractViolationError(
            f"group shape mismatch: {tuple(grouped_a.shape)} vs {tuple(grouped_b.shape)}"
        )
    return grouped_a @ grouped_b.transpose(-1, -2)


def selective_weights(alpha: torch.Tensor, selective: torch.Tensor, b: torch.Tensor,
                      fc: nn.Module) -> torch.Tensor:
    """Gate vector S = sigmoid(alpha + b * fc(selective)), values in (0, 1)."""
    return torch.sigmoid(alpha + b * fc(selective))


class SelectiveCorrelationFusion(nn.Module):
    def __init__(self, prev_channels: int, out_channels: int, groups: int = 8,
                 upsample: bool = True):
        super().__init__()
        if out_channels % groups != 0:
            raise ConfigurationError(
                f"group count {groups} must divide channel count {out_channels}"
            )
        self.groups = groups
        self.group_len = out_channels // groups
        self.upsample = upsample
        self.att_enc = AttentionVector(out_channels, out_channels)
        self.att_prev = AttentionVector(prev_channels, out_channels)
        # relation map -> 2 channels, split between the two branches
        self.rel_conv = nn.Conv2d(1, 2, 3, padding=1)
        self.fc_enc = nn.Linear(groups, out_channels)
        self.fc_prev = nn.Linear(groups, out_channels)
        self.proj_enc = nn.Conv2d(out_channels, out_channels, 3, padding=1)
        self.proj_prev = nn.Conv2d(prev_channels, out_channels, 3, padding=1)
        self.b = nn.Parameter(torch.zeros(()))

    def gates(self, f_enc: torch.Tensor, f_prev: torch.Tensor):
        """Per-branch gate vectors (S_enc, S_prev), each [B, C] in (0, 1)."""
        a_enc = self.att_enc(f_enc)
        a_prev = self.att_prev(f_prev)
        bsz = a_enc.shape[0]
        g_enc = a_enc.view(bsz, self.groups, self.group_len)
        g_prev = a_prev.view(bsz, self.groups, self.group_len)
        rel = relation(g_prev, g_enc)
        split = self.rel_conv(rel.unsqueeze(1))
        sel_prev = split[:, 0].mean(dim=-1)
        sel_enc = split[:, 1].mean(dim=-1)
        s_enc = selective_weights(a_enc, sel_enc, self.b, self.fc_enc)
        s_prev = selective_weights(a_prev, sel_prev, self.b, self.fc_prev)
        return s_enc, s_prev

    def forward(self, f_enc: torch.Tensor, f_prev: torch.Tensor) -> torch.Tensor:
        if self.upsample:
            if (f_enc.shape[-2] != 2 * f_prev.shape[-2]
                    or f_enc.shape[-1] != 2 * f_prev.shape[-1]):
                raise ContractViolationError(
                    f"previous feature {tuple(f_prev.shape[-2:])} must be half the "
                    f"resolution of the encoder feature {tuple(f_enc.shape[-2:])}"
                )
        elif f_enc.shape[-2:] != f_prev.shape[-2:]:
            raise ContractViolationError(
                "deepest-block fusion requires equal resolutions, got "
                f"{tuple(f_enc.shape[-2:])} vs {tuple(f_prev.shape[-2:])}"
            )
        s_enc, s_prev = self.gates(f_enc, f_prev)
        branch_enc = s_enc[:, :, None, None] * self.proj_enc(f_enc)
        branch_prev = s_prev[:, :, None, None] * self.proj_prev(f_prev)
        if self.upsample:
            branch_prev = F.interpolate(branch_prev, scale_factor=2, mode="bilinear",
                                        align_corners=False)
        return branch_enc + branch_prev
