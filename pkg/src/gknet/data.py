"""Dataset loading and desk-scale composite synthesis.

Real datasets follow the iHarmony4-style directory layout::

    root/
      composite_images/{stem}_{maskid}_{variant}.{ext}
      masks/{stem}_{maskid}.png
      real_images/{stem}.{ext}

Synthetic data is produced by drawing a random foreground mask (ellipses and
polygons) over a generated background image and colour-jittering the masked
region; the background stays bit-exact, so every synthesized triple satisfies
the composite-equals-real-outside-the-mask invariant exactly.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np
import torch
from PIL import Image, ImageDraw

from .errors import ConfigurationError, ContractViolationError

__all__ = ["ImageTriple", "SynthesisConfig", "DatasetIndex", "index_dataset",
           "load_triple", "synthesize_composite", "foreground_ratio", "bucket_of",
           "BUCKETS", "generate_real_image", "write_synthetic_dataset",
           "read_manifest"]

BUCKETS = ("B1", "B2", "B3")


@dataclass
class ImageTriple:
    composite: torch.Tensor  # [3, H, W] in [0, 1]
    mask: torch.Tensor       # [1, H, W] in {0, 1}
    real: torch.Tensor       # [3, H, W] in [0, 1]
    id: str

    def validate(self, background_tol: float = 0.0) -> None:
        if self.composite.shape[-2:] != self.mask.shape[-2:] \
                or self.composite.shape != self.real.shape:
            raise ContractViolationError(f"{self.id}: component shapes disagree")
        vals = torch.unique(self.mask)
        if not all(v in (0.0, 1.0) for v in vals.tolist()):
            raise ContractViolationError(f"{self.id}: mask is not binary")
        bg = self.mask == 0
        diff = (self.composite - self.real).abs() * bg
        if diff.max().item() > background_tol:
            raise ContractViolationError(
                f"{self.id}: composite differs from real on background "
                f"(max {diff.max().item():.4g} > tol {background_tol:.4g})")


@dataclass
class SynthesisConfig:
    gain_range: tuple[float, float] = (0.6, 1.5)
    gamma_range: tuple[float, float] = (0.7, 1.4)
    brightness_range: tuple[float, float] = (-0.15, 0.15)
    saturation_range: tuple[float, float] = (0.6, 1.5)
    shape_count_range: tuple[int, int] = (1, 3)
    area_range: tuple[float, float] = (0.02, 0.60)
    seed: int = 0

    def __post_init__(self):
        for name in ("gain_range", "gamma_range", "brightness_range",
                     "saturation_range", "area_range"):
            lo, hi = getattr(self, name)
            if hi < lo:
                raise ConfigurationError(f"{name} is empty: ({lo}, {hi})")
        if self.gain_range[0] <= 0:
            raise ConfigurationError("gains must be positive")
        if self.gamma_range[0] <= 0:
            raise ConfigurationError("gamma must be positive")
        if self.shape_count_range[0] < 1:
            raise ConfigurationError("at least one mask shape required")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class DatasetIndex:
    entries: list[tuple[Path, Path, Path, str]]  # composite, mask, real, id
    source_kind: str = "directory-triples"
    skipped: int = 0

    def __len__(self) -> int:
        return len(self.entries)


def index_dataset(root) -> DatasetIndex:
    root = Path(root)
    comp_dir, mask_dir, real_dir = (root / "composite_images", root / "masks",
                                    root / "real_images")
    for d in (comp_dir, mask_dir, real_dir):
        if not d.is_dir():
            raise ConfigurationError(f"missing dataset directory {d}")
    entries, skipped, seen = [], 0, set()
    for comp in sorted(comp_dir.iterdir()):
        parts = comp.stem.rsplit("_", 2)
        if len(parts) != 3:
            skipped += 1
            continue
        stem, maskid, _variant = parts
        mask = mask_dir / f"{stem}_{maskid}.png"
        real = real_dir / f"{stem}{comp.suffix}"
        if not (mask.is_file() and real.is_file()):
            skipped += 1
            continue
        if comp.stem in seen:
            raise ConfigurationError(f"duplicate id {comp.stem}")
        seen.add(comp.stem)
        entries.append((comp, mask, real, comp.stem))
    if skipped:
        warnings.warn(f"{skipped} composites skipped (missing mask or real image)")
    if not entries:
        raise ConfigurationError(f"no usable triples under {root}")
    return DatasetIndex(entries=entries, skipped=skipped)


def _load_rgb(path, resolution: int | None) -> torch.Tensor:
    img = Image.open(path).convert("RGB")
    if resolution is not None and img.size != (resolution, resolution):
        img = img.resize((resolution, resolution), Image.BILINEAR)
    arr = np.asarray(img, dtype=np.float32) / 255.0
    return torch.from_numpy(arr).permute(2, 0, 1)


def load_triple(entry, resolution: int | None = None) -> ImageTriple:
    comp_path, mask_path, real_path, triple_id = entry
    composite = _load_rgb(comp_path, resolution)
    real = _load_rgb(real_path, resolution)
    mask_img = Image.open(mask_path).convert("L")
    if resolution is not None and mask_img.size != (resolution, resolution):
        mask_img = mask_img.resize((resolution, resolution), Image.BILINEAR)
    mask = torch.from_numpy(
        (np.asarray(mask_img, dtype=np.float32) / 255.0 > 0.5).astype(np.float32)
    ).unsqueeze(0)
    triple = ImageTriple(composite=composite, mask=mask, real=real, id=triple_id)
    triple.validate(background_tol=1.0 / 255.0 + 1e-6)
    return triple


def foreground_ratio(mask: torch.Tensor) -> float:
    return mask.sum().item() / (mask.shape[-2] * mask.shape[-1])


def bucket_of(ratio: float) -> str:
    """Foreground-ratio bucket; the boundary value goes to the lower bucket."""
    if not 0.0 <= ratio <= 1.0:
        raise ContractViolationError(f"ratio {ratio} outside [0, 1]")
    if ratio <= 0.05:
        return "B1"
    if ratio <= 0.15:
        return "B2"
    return "B3"


def _draw_random_mask(h: int, w: int, cfg: SynthesisConfig,
                      rng: np.random.Generator) -> torch.Tensor:
    img = Image.new("L", (w, h), 0)
    draw = ImageDraw.Draw(img)
    count = int(rng.integers(cfg.shape_count_range[0], cfg.shape_count_range[1] + 1))
    for _ in range(count):
        frac = rng.uniform(*cfg.area_range) / count
        cy, cx = rng.uniform(0.15, 0.85) * h, rng.uniform(0.15, 0.85) * w
        if rng.random() < 0.5:
            # ellipse with the target area and a random aspect ratio
            aspect = rng.uniform(0.5, 2.0)
            ry = math.sqrt(frac * h * w / math.pi * aspect)
            rx = math.sqrt(frac * h * w / math.pi / aspect)
            draw.ellipse([cx - rx, cy - ry, cx + rx, cy + ry], fill=255)
        else:
            k = int(rng.integers(3, 8))
            radius = math.sqrt(frac * h * w / math.pi)
            angles = np.sort(rng.uniform(0, 2 * math.pi, size=k))
            pts = [(cx + radius * rng.uniform(0.6, 1.3) * math.cos(a),
                    cy + radius * rng.uniform(0.6, 1.3) * math.sin(a))
                   for a in angles]
            draw.polygon(pts, fill=255)
    arr = (np.asarray(img, dtype=np.float32) > 127).astype(np.float32)
    return torch.from_numpy(arr).unsqueeze(0)


def _jitter(real: torch.Tensor, cfg: SynthesisConfig,
            rng: np.random.Generator) -> torch.Tensor:
    gains = torch.tensor(rng.uniform(*cfg.gain_range, size=3), dtype=real.dtype)
    gamma = float(rng.uniform(*cfg.gamma_range))
    shift = float(rng.uniform(*cfg.brightness_range))
    sat = float(rng.uniform(*cfg.saturation_range))
    # identity parameter values leave the tensor bit-exact
    x = real.clamp(0, 1)
    if gamma != 1.0:
        x = x ** gamma
    if not torch.all(gains == 1.0):
        x = x * gains[:, None, None]
    if sat != 1.0:
        gray = x.mean(dim=0, keepdim=True)
        x = gray + sat * (x - gray)
    if shift != 0.0:
        x = x + shift
    return x.clamp(0.0, 1.0)


def synthesize_composite(real: torch.Tensor, cfg: SynthesisConfig,
                         rng: np.random.Generator,
                         triple_id: str = "synthetic") -> ImageTriple:
    if real.min() < 0 or real.max() > 1:
        raise ContractViolationError("real image values must lie in [0, 1]")
    _, h, w = real.shape
    for _ in range(10):
        mask = _draw_random_mask(h, w, cfg, rng)
        if mask.sum() > 0:
            break
    else:
        raise ContractViolationError("mask generator produced 10 empty masks in a row")
    jittered = _jitter(real, cfg, rng)
    composite = torch.where(mask.to(torch.bool), jittered, real)
    triple = ImageTriple(composite=composite, mask=mask, real=real, id=triple_id)
    triple.validate(background_tol=0.0)
    return triple


def generate_real_image(resolution: int, rng: np.random.Generator) -> torch.Tensor:
    """Smooth random colour field used as a stand-in for a real photograph."""
    coarse = rng.uniform(0.05, 0.95, size=(3, 4, 4)).astype(np.float32)
    t = torch.from_numpy(coarse).unsqueeze(0)
    up = torch.nn.functional.interpolate(t, size=(resolution, resolution),
                                         mode="bilinear", align_corners=False)[0]
    noise = torch.from_numpy(
        rng.normal(0.0, 0.02, size=up.shape).astype(np.float32))
    return (up + noise).clamp(0.0, 1.0)


def _to_png(t: torch.Tensor) -> Image.Image:
    arr = np.rint(t.numpy() * 255.0).astype(np.uint8)
    if arr.shape[0] == 1:
        return Image.fromarray(arr[0], mode="L")
    return Image.fromarray(arr.transpose(1, 2, 0), mode="RGB")


def write_synthetic_dataset(out_dir, count: int, resolution: int,
                            cfg: SynthesisConfig) -> DatasetIndex:
    """Write `count` PNG triples plus a manifest; deterministic in cfg.seed."""
    if count < 1:
        raise ConfigurationError("count must be >= 1")
    out_dir = Path(out_dir)
    for sub in ("composite_images", "masks", "real_images"):
        (out_dir / sub).mkdir(parents=True, exist_ok=True)
    lines = []
    histogram = dict.fromkeys(BUCKETS, 0)
    for i in range(count):
        seed_i = cfg.seed * 100003 + i
        rng = np.random.default_rng(seed_i)
        real = generate_real_image(resolution, rng)
        stem = f"syn{i:04d}"
        triple = synthesize_composite(real, cfg, rng, triple_id=f"{stem}_1_1")
        _to_png(triple.composite).save(out_dir / "composite_images" / f"{stem}_1_1.png")
        _to_png(triple.mask).save(out_dir / "masks" / f"{stem}_1.png")
        _to_png(triple.real).save(out_dir / "real_images" / f"{stem}.png")
        ratio = foreground_ratio(triple.mask)
        histogram[bucket_of(ratio)] += 1
        lines.append(f"{triple.id} {ratio:.8f} {seed_i}")
    manifest = out_dir / "manifest.txt"
    with open(manifest, "w") as fh:
        fh.write(f"# synthetic dataset: count={count} resolution={resolution} "
                 f"seed={cfg.seed}\n")
        fh.write("# columns: id ratio seed\n")
        fh.write("\n".join(lines) + "\n")
        fh.write("# buckets: " + " ".join(f"{b}={histogram[b]}" for b in BUCKETS) + "\n")
    index = index_dataset(out_dir)
    index.source_kind = "synthetic"
    return index


def read_manifest(path) -> tuple[list[tuple[str, float, int]], dict[str, int]]:
    """Parse a manifest back into (id, ratio, seed) rows and the bucket histogram."""
    rows, histogram = [], {}
    for line in Path(path).read_text().splitlines():
        if line.startswith("# buckets:"):
            for tok in line.split(":", 1)[1].split():
                name, val = tok.split("=")
                histogram[name] = int(val)
        elif line.startswith("#") or not line.strip():
            continue
        else:
            triple_id, ratio, seed = line.split()
            rows.append((triple_id, float(ratio), int(seed)))
    return rows, histogram
