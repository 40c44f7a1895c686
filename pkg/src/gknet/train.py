"""Training loop: Adam over the foreground-normalised MSE of blended outputs.

Determinism contract: a fixed TrainConfig (including the seed) produces a
bit-identical loss trace, and a training state serialized at any step resumes
into exactly the run that would have happened without the interruption. To
make that hold, the batch order is driven by a serialisable numpy PCG64
generator, the current epoch permutation and cursor are part of the state,
and Adam moments are stored in full precision.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np
import torch

from .checkpoint import load_container, save_container
from .data import ImageTriple, bucket_of, foreground_ratio
from .errors import ConfigurationError
from .model import GKNet, NetworkConfig, blend, build_model
from .objectives import (LossConfig, MetricsReport, SampleMetrics, fmse,
                         fn_mse_loss, mse, psnr)

__all__ = ["TrainConfig", "TrainState", "train", "evaluate", "resume",
           "save_train_state", "paper_preset", "desk_preset",
           "format_log_line", "parse_log_line"]


@dataclass
class TrainConfig:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    epochs: int = 120
    batch_size: int = 16
    seed: int = 0
    eval_interval: int = 0          # steps between evaluations; 0 disables
    checkpoint_dir: str | None = None
    resolution: int = 256
    grad_clip: float | None = None
    loss: LossConfig = field(default_factory=LossConfig)
    network: NetworkConfig = field(default_factory=NetworkConfig)

    def __post_init__(self):
        if self.lr <= 0 or self.batch_size < 1 or self.epochs < 0:
            raise ConfigurationError("lr, batch size and epochs must be positive")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ConfigurationError("Adam betas must lie in (0, 1)")
        if self.network.resolution != self.resolution:
            raise ConfigurationError(
                f"train resolution {self.resolution} differs from network "
                f"resolution {self.network.resolution}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("network")
        return d

    @classmethod
    def from_dict(cls, d: dict, network: NetworkConfig) -> "TrainConfig":
        d = dict(d)
        if isinstance(d.get("loss"), dict):
            d["loss"] = LossConfig(**d["loss"])
        return cls(network=network, **d)


def paper_preset(**overrides) -> TrainConfig:
    """Published training recipe: Adam(1e-4, 0.9, 0.999, 1e-8), 120 epochs, batch 16."""
    base = dict(lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8, epochs=120,
                batch_size=16, resolution=256)
    base.update(overrides)
    if "network" not in base:
        base["network"] = NetworkConfig(resolution=base["resolution"])
    return TrainConfig(**base)


def desk_preset(**overrides) -> TrainConfig:
    """CPU-scale recipe: 64x64, depth 3, base 16, batch 4."""
    base = dict(lr=1e-3, epochs=1000, batch_size=4, resolution=64)
    base.update(overrides)
    if "network" not in base:
        base["network"] = NetworkConfig(depth=3, base_channels=16,
                                        resolution=base["resolution"])
    return TrainConfig(**base)


@dataclass
class TrainState:
    model: GKNet
    optimizer: torch.optim.Adam
    config: TrainConfig
    step: int = 0
    rng: np.random.Generator = None
    permutation: list[int] = field(default_factory=list)
    cursor: int = 0
    best_fmse: float = float("inf")
    loss_trace: list[float] = field(default_factory=list)


def _stack_batch(triples: list[ImageTriple], idx: list[int]):
    comp = torch.stack([triples[i].composite for i in idx])
    mask = torch.stack([triples[i].mask for i in idx])
    real = torch.stack([triples[i].real for i in idx])
    return torch.cat([comp, mask], dim=1), comp, mask, real


def format_log_line(step: int, loss: float, lr: float, wall: float) -> str:
    return f"step {step} loss {loss:.10e} lr {lr:.3e} time {wall:.3f}"


def parse_log_line(line: str) -> tuple[int, float]:
    toks = line.split()
    if len(toks) < 4 or toks[0] != "step" or toks[2] != "loss":
        raise ValueError(f"unparseable log line: {line!r}")
    return int(toks[1]), float(toks[3])


def _init_state(cfg: TrainConfig) -> TrainState:
    model = build_model(cfg.network, seed=cfg.seed)
    opt = torch.optim.Adam(model.parameters(), lr=cfg.lr,
                           betas=(cfg.beta1, cfg.beta2), eps=cfg.eps)
    return TrainState(model=model, optimizer=opt, config=cfg,
                      rng=np.random.default_rng(cfg.seed))


def train(triples: list[ImageTriple], cfg: TrainConfig,
          state: TrainState | None = None, max_steps: int | None = None,
          log_fn=None, eval_triples: list[ImageTriple] | None = None) -> TrainState:
    """Run (or continue) training; returns the final state."""
    if not triples:
        raise ConfigurationError("training dataset is empty")
    if state is None:
        state = _init_state(cfg)
    model, opt = state.model, state.optimizer
    n = len(triples)
    steps_per_epoch = (n + cfg.batch_size - 1) // cfg.batch_size
    total_steps = cfg.epochs * steps_per_epoch
    if max_steps is not None:
        total_steps = min(total_steps, state.step + max_steps)
    model.train()
    start = time.monotonic()
    while state.step < total_steps:
        if state.cursor >= len(state.permutation):
            state.permutation = state.rng.permutation(n).tolist()
            state.cursor = 0
        idx = state.permutation[state.cursor:state.cursor + cfg.batch_size]
        state.cursor += len(idx)
        x, comp, mask, real = _stack_batch(triples, idx)
        out, _, _ = model(x)
        loss = fn_mse_loss(blend(out, comp, mask), real, mask, cfg.loss)
        if not torch.isfinite(loss):
            batch_ids = [triples[i].id for i in idx]
            raise RuntimeError(f"non-finite loss at step {state.step} on batch {batch_ids}")
        opt.zero_grad()
        loss.backward()
        if cfg.grad_clip is not None:
            torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.grad_clip)
        opt.step()
        state.step += 1
        state.loss_trace.append(loss.item())
        if log_fn is not None:
            log_fn(format_log_line(state.step, loss.item(), cfg.lr,
                                   time.monotonic() - start))
        if cfg.eval_interval and state.step % cfg.eval_interval == 0:
            report = evaluate(state, eval_triples or triples)
            agg = report.overall()
            if agg["fmse"] < state.best_fmse:
                state.best_fmse = agg["fmse"]
            if cfg.checkpoint_dir:
                save_train_state(Path(cfg.checkpoint_dir) / f"state_{state.step:08d}.gk",
                                 state)
    return state


@torch.no_grad()
def evaluate(state_or_model, triples: list[ImageTriple]) -> MetricsReport:
    """Deterministic metric pass: blend the clamped output, score against real."""
    if not triples:
        raise ConfigurationError("evaluation dataset is empty")
    model = state_or_model.model if isinstance(state_or_model, TrainState) \
        else state_or_model
    model.eval()
    report = MetricsReport()
    for t in triples:
        x = torch.cat([t.composite, t.mask], dim=0).unsqueeze(0)
        out, _, _ = model(x)
        pred = blend(out[0].clamp(0.0, 1.0), t.composite, t.mask)
        ratio = foreground_ratio(t.mask)
        report.add(SampleMetrics(
            id=t.id, ratio=ratio, bucket=bucket_of(ratio),
            psnr=psnr(pred, t.real), mse=mse(pred, t.real),
            fmse=fmse(pred, t.real, t.mask)))
    model.train()
    return report


def save_train_state(path, state: TrainState) -> None:
    tensors = {f"model.{k}": v for k, v in state.model.state_dict().items()}
    adam_steps = {}
    for group_idx, group in enumerate(state.optimizer.param_groups):
        for p_idx, p in enumerate(group["params"]):
            st = state.optimizer.state.get(p, None)
            name = f"adam.{group_idx}.{p_idx}"
            if st:
                tensors[f"{name}.exp_avg"] = st["exp_avg"]
                tensors[f"{name}.exp_avg_sq"] = st["exp_avg_sq"]
                adam_steps[name] = int(st["step"])
    meta = {
        "kind": "train",
        "network_config": state.config.network.to_dict(),
        "train_config": state.config.to_dict(),
        "step": state.step,
        "permutation": state.permutation,
        "cursor": state.cursor,
        "best_fmse": state.best_fmse,
        "adam_steps": adam_steps,
        "rng_state": state.rng.bit_generator.state,
        "loss_trace": state.loss_trace,
    }
    save_container(path, tensors, meta)


def resume(path, expected_config: TrainConfig | None = None) -> TrainState:
    tensors, meta = load_container(path)
    if meta.get("kind") != "train":
        raise ConfigurationError(f"{path} is not a training-state checkpoint")
    network = NetworkConfig.from_dict(meta["network_config"])
    cfg = TrainConfig.from_dict(meta["train_config"], network)
    if expected_config is not None:
        if expected_config.network.to_dict() != network.to_dict():
            raise ConfigurationError("resumed network config differs from requested one")
    model = GKNet(network)
    model.load_state_dict({k[len("model."):]: v for k, v in tensors.items()
                           if k.startswith("model.")})
    opt = torch.optim.Adam(model.parameters(), lr=cfg.lr,
                           betas=(cfg.beta1, cfg.beta2), eps=cfg.eps)
    for group_idx, group in enumerate(opt.param_groups):
        for p_idx, p in enumerate(group["params"]):
            name = f"adam.{group_idx}.{p_idx}"
            if name in meta["adam_steps"]:
                opt.state[p] = {
                    "step": torch.tensor(float(meta["adam_steps"][name])),
                    "exp_avg": tensors[f"{name}.exp_avg"],
                    "exp_avg_sq": tensors[f"{name}.exp_avg_sq"],
                }
    rng = np.random.default_rng()
    rng.bit_generator.state = meta["rng_state"]
    return TrainState(model=model, optimizer=opt, config=cfg, step=meta["step"],
                      rng=rng, permutation=list(meta["permutation"]),
                      cursor=meta["cursor"], best_fmse=meta["best_fmse"],
                      loss_trace=list(meta["loss_trace"]))
