"""Training objective and evaluation metrics.

The reconstruction loss normalises the whole-image squared error by the
foreground pixel count (floored at a minimum area), so copying the background
contributes nothing once predictions are blended. Metrics are computed on the
[0, 255] scale: MSE averages squared error over all pixels and channels, PSNR
is 10*log10(255^2 / MSE) capped at 100 dB, and fMSE divides the squared error
accumulated over foreground pixels by 3 * (#foreground pixels). An empty mask
makes fMSE undefined (None); such samples are excluded from aggregates.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import torch

from .data import BUCKETS
from .errors import ConfigurationError

__all__ = ["LossConfig", "fn_mse_loss", "mse", "psnr", "fmse",
           "SampleMetrics", "MetricsReport", "PSNR_CAP_DB"]

PSNR_CAP_DB = 100.0
_PSNR_CAP_MSE = 255.0 ** 2 * 1e-10


@dataclass
class LossConfig:
    min_area: float = 100.0  # pixel-count floor in the loss denominator

    def __post_init__(self):
        if self.min_area <= 0:
            raise ConfigurationError("min_area must be positive")


def fn_mse_loss(pred: torch.Tensor, real: torch.Tensor, mask: torch.Tensor,
                cfg: LossConfig | None = None) -> torch.Tensor:
    """Foreground-normalised MSE; pred is the blended output in [0, 1].

    Accepts [3, H, W] or [B, 3, H, W]; batches are averaged.
    """
    cfg = cfg or LossConfig()
    if pred.dim() == 3:
        pred, real, mask = pred.unsqueeze(0), real.unsqueeze(0), mask.unsqueeze(0)
    num = ((pred - real) ** 2).sum(dim=(1, 2, 3))
    area = mask.sum(dim=(1, 2, 3)).clamp(min=cfg.min_area)
    return (num / area).mean()


def _to_255(t: torch.Tensor) -> torch.Tensor:
    return t.clamp(0.0, 1.0) * 255.0


def mse(pred: torch.Tensor, real: torch.Tensor) -> float:
    return ((_to_255(pred) - _to_255(real)) ** 2).mean().item()


def psnr(pred: torch.Tensor, real: torch.Tensor) -> float:
    m = mse(pred, real)
    if m < _PSNR_CAP_MSE:
        return PSNR_CAP_DB
    return 10.0 * math.log10(255.0 ** 2 / m)


def fmse(pred: torch.Tensor, real: torch.Tensor, mask: torch.Tensor) -> float | None:
    fg = mask.sum().item()
    if fg == 0:
        return None
    err = ((_to_255(pred) - _to_255(real)) ** 2 * mask).sum().item()
    return err / (3.0 * fg)


@dataclass
class SampleMetrics:
    id: str
    ratio: float
    bucket: str
    psnr: float
    mse: float
    fmse: float | None


@dataclass
class MetricsReport:
    samples: list[SampleMetrics] = field(default_factory=list)

    def add(self, sample: SampleMetrics) -> None:
        self.samples.append(sample)

    def _aggregate(self, subset: list[SampleMetrics]) -> dict:
        fm = [s.fmse for s in subset if s.fmse is not None]
        return {
            "count": len(subset),
            "psnr": sum(s.psnr for s in subset) / len(subset) if subset else float("nan"),
            "mse": sum(s.mse for s in subset) / len(subset) if subset else float("nan"),
            "fmse": sum(fm) / len(fm) if fm else float("nan"),
        }

    def overall(self) -> dict:
        return self._aggregate(self.samples)

    def per_bucket(self) -> dict[str, dict]:
        return {b: self._aggregate([s for s in self.samples if s.bucket == b])
                for b in BUCKETS}

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf)
        writer.writerow(["id", "ratio", "bucket", "psnr", "mse", "fmse"])
        for s in self.samples:
            writer.writerow([s.id, f"{s.ratio:.8f}", s.bucket, repr(s.psnr),
                             repr(s.mse), "" if s.fmse is None else repr(s.fmse)])
        return buf.getvalue()

    def summary_text(self) -> str:
        lines = [f"{'group':>8} {'count':>6} {'PSNR':>10} {'MSE':>12} {'fMSE':>12}"]
        rows = [("ALL", self.overall())]
        rows += list(self.per_bucket().items())
        for name, agg in rows:
            lines.append(f"{name:>8} {agg['count']:>6d} {agg['psnr']:>10.4f} "
                         f"{agg['mse']:>12.4f} {agg['fmse']:>12.4f}")
        return "\n".join(lines) + "\n"
