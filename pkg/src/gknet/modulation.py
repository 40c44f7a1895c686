"""Per-pixel, per-channel dynamic filtering of feature maps.

A kernel tensor K of shape [C, N^2, H, W] stores one NxN filter per channel
and per pixel. The output at pixel p is

    out[c, p] = sum_{q in NxN neighborhood of p} K[c, idx(p - q), p] * F_pad[c, q]

where F_pad is the feature map zero-padded by (N-1)//2 on each spatial side
and idx linearizes the (dy, dx) offset row-major with dy, dx in
[-(N-1)//2, (N-1)//2]. Channels never mix, and the operation is linear (and
differentiable) in both F and K.
"""

from __future__ import annotations

import math
import struct

import torch
import torch.nn.functional as F

from .errors import ContractViolationError

__all__ = ["kernel_modulate", "kernel_modulate_oracle", "dump_kernels", "load_kernels"]


def _check_shapes(feat: torch.Tensor, kernels: torch.Tensor) -> int:
    """Validate shapes and return the kernel size N."""
    if feat.shape[-2:] != kernels.shape[-2:]:
        raise ContractViolationError(
            f"spatial shape mismatch: feature {tuple(feat.shape)} vs kernels {tuple(kernels.shape)}"
        )
    if feat.shape[-3] != kernels.shape[-4]:
        raise ContractViolationError(
            f"channel mismatch: feature has {feat.shape[-3]}, kernels have {kernels.shape[-4]}"
        )
    n_sq = kernels.shape[-3]
    n = math.isqrt(n_sq)
    if n * n != n_sq:
        raise ContractViolationError(f"kernel dim {n_sq} is not a perfect square")
    if n % 2 == 0:
        raise ContractViolationError(f"kernel size N={n} must be odd")
    return n


def kernel_modulate(feat: torch.Tensor, kernels: torch.Tensor) -> torch.Tensor:
    """Apply per-pixel kernels to a feature map.

    feat: [C, H, W] or [B, C, H, W]; kernels: matching [C, N^2, H, W] or
    [B, C, N^2, H, W]. Returns a tensor shaped like feat.
    """
    batched = feat.dim() == 4
    if not batched:
        feat = feat.unsqueeze(0)
        kernels = kernels.unsqueeze(0)
    n = _check_shapes(feat[0], kernels[0])
    b, c, h, w = feat.shape
    pad = (n - 1) // 2
    # patches[b, c, j, p] = F_pad[b, c, p + off_j] with off_j row-major from
    # (-pad, -pad); the contract indexes K by p - q, so flip the kernel axis.
    patches = F.unfold(feat, kernel_size=n, padding=pad).view(b, c, n * n, h, w)
    out = (kernels.flip(2) * patches).sum(dim=2)
    return out if batched else out.squeeze(0)


def kernel_modulate_oracle(feat: torch.Tensor, kernels: torch.Tensor) -> torch.Tensor:
    """Reference implementation with explicit scalar loops.

    Intended only for small tensors in tests; identical contract to
    kernel_modulate.
    """
    if feat.dim() != 3:
        raise ContractViolationError("oracle expects an unbatched [C, H, W] feature")
    n = _check_shapes(feat, kernels)
    c_dim, h, w = feat.shape
    pad = (n - 1) // 2
    out = torch.zeros_like(feat)
    for c in range(c_dim):
        for py in range(h):
            for px in range(w):
                acc = 0.0
                for dy in range(-pad, pad + 1):
                    for dx in range(-pad, pad + 1):
                        qy, qx = py + dy, px + dx
                        if not (0 <= qy < h and 0 <= qx < w):
                            continue  # zero padding
                        oy, ox = py - qy, px - qx
                        idx = (oy + pad) * n + (ox + pad)
                        acc += kernels[c, idx, py, px].item() * feat[c, qy, qx].item()
                out[c, py, px] = acc
    return out


_MAGIC = b"GKTENSOR1\n"


def dump_kernels(path, tensor: torch.Tensor) -> None:
    """Write a tensor as a portable binary blob: shape header + row-major float32."""
    t = tensor.detach().to(torch.float32).contiguous()
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", t.dim()))
        fh.write(struct.pack(f"<{t.dim()}I", *t.shape))
        fh.write(t.numpy().tobytes())


def load_kernels(path) -> torch.Tensor:
    with open(path, "rb") as fh:
        if fh.read(len(_MAGIC)) != _MAGIC:
            raise ContractViolationError(f"{path}: not a kernel dump")
        (ndim,) = struct.unpack("<I", fh.read(4))
        shape = struct.unpack(f"<{ndim}I", fh.read(4 * ndim))
        data = fh.read()
    flat = torch.frombuffer(bytearray(data), dtype=torch.float32)
    return flat.view(*shape).clone()
