"""Interpretability dumps: kernel clustering label maps and attention heatmaps."""

from __future__ import annotations

import numpy as np
import torch
from PIL import Image
from sklearn.cluster import KMeans

from .errors import ContractViolationError

__all__ = ["cluster_kernel_labels", "label_map_image", "heatmap_image"]


def cluster_kernel_labels(kernels: torch.Tensor, k: int, seed: int = 0,
                          iterations: int = 50) -> np.ndarray:
    """K-means over per-pixel kernel vectors.

    kernels: [C, N^2, H, W] (or batched with B=1). Each pixel contributes a
    length C*N^2 vector; Euclidean distance over the raw weights, k-means++
    init, fixed iteration budget. Returns an [H, W] int label map.
    """
    if k < 1:
        raise ContractViolationError("cluster count must be >= 1")
    if kernels.dim() == 5:
        kernels = kernels[0]
    c, n_sq, h, w = kernels.shape
    vectors = kernels.detach().reshape(c * n_sq, h * w).T.numpy().astype(np.float64)
    distinct = np.unique(vectors, axis=0).shape[0]
    eff_k = min(k, distinct)
    km = KMeans(n_clusters=eff_k, init="k-means++", n_init=1, max_iter=iterations,
                random_state=seed)
    labels = km.fit_predict(vectors)
    return labels.reshape(h, w)


def label_map_image(labels: np.ndarray, k: int) -> Image.Image:
    """Render a label map as an 8-bit grayscale PNG-ready image."""
    if k > 1:
        arr = np.rint(labels.astype(np.float64) * 255.0 / (k - 1))
    else:
        arr = np.zeros_like(labels, dtype=np.float64)
    return Image.fromarray(arr.astype(np.uint8), mode="L")


def heatmap_image(heat: torch.Tensor) -> Image.Image:
    """Normalise a nonnegative map to [0, 255] grayscale."""
    arr = heat.detach().numpy().astype(np.float64)
    peak = arr.max()
    if peak > 0:
        arr = arr / peak
    return Image.fromarray(np.rint(arr * 255.0).astype(np.uint8), mode="L")
