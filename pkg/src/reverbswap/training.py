"""Losses and the alternating optimization loop.

The generator objective sums, over both conversion directions, a spectrogram
term (mean absolute + mean squared error against the ground truth), a latent
term penalizing reverb-half differences between encodings that share a
reverb, and — from the adversarial start epoch onward — the saturating GAN
generator term. The discriminator is trained in a separate step on ground
truths vs detached outputs, only while the adversarial phase is active.

Both networks use the rectified Adam optimizer at lr 0.001, betas (0.9,
0.999). Checkpoints are written once per epoch (atomically) and every step
appends one JSON record to the loss log, so a run is reproducible from
(manifest, config, seed).
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch

from .audio import Waveform, load_canonical
from .databus import GAMMA_GRID, QuadSpec, TrainingQuad, build_quad
from .model import (
    Discriminator,
    LatentStack,
    ModelConfig,
    ReverbConversionNet,
    build_models,
    load_checkpoint,
    reverb_half,
    save_checkpoint,
)
from .reverb import ReverbPreset
from .stft import StftConfig, stft

_PROB_EPS = 1e-7


class TrainingDiverged(RuntimeError):
    """Raised when a loss goes non-finite; the last good checkpoint survives."""


@dataclass
class TrainConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adv_start_epoch: int = 20
    total_epochs: int = 100
    batch_size: int = 4
    w_spec: float = 1.0
    w_latent: float = 1.0
    w_adv: float = 1.0
    seed: int = 0
    grad_clip: float | None = 5.0
    redraw_gamma: bool = True
    clip_frames: int = 640  # STFT frames per training example

    def __post_init__(self):
        if self.lr < 0:
            raise ValueError("lr must be >= 0")
        if not 0 <= self.adv_start_epoch:
            raise ValueError("adv_start_epoch must be >= 0")


@dataclass
class LossReport:
    epoch: int
    step: int
    l_spec: float
    l_latent: float
    l_gen_adv: float
    l_disc: float
    adv_active: bool

    def __post_init__(self):
        for name in ("l_spec", "l_latent", "l_gen_adv", "l_disc"):
            if not math.isfinite(getattr(self, name)):
                raise TrainingDiverged(
                    f"non-finite {name} at epoch {self.epoch} step {self.step}: {getattr(self, name)}"
                )

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


def spec_loss(pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """mean|d| + mean(d^2) over all elements."""
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {tuple(pred.shape)} vs {tuple(target.shape)}")
    diff = pred - target
    return diff.abs().mean() + (diff * diff).mean()


def latent_loss(stack_x: LatentStack, stack_y: LatentStack) -> torch.Tensor:
    """Summed per-layer distance between reverb halves; source halves untouched.

    Valid when the two encodings come from tracks sharing a reverb.
    """
    if len(stack_x) != len(stack_y):
        raise ValueError("latent stacks have different depths")
    total = None
    for lx, ly in zip(stack_x.layers, stack_y.layers):
        if lx.shape != ly.shape:
            raise ValueError(f"layer shape mismatch: {tuple(lx.shape)} vs {tuple(ly.shape)}")
        diff = reverb_half(lx) - reverb_half(ly)
        term = diff.abs().mean() + (diff * diff).mean()
        total = term if total is None else total + term
    return total


def _saturating_gen_term(d_fake: torch.Tensor) -> torch.Tensor:
    return torch.log(1.0 - d_fake.clamp(_PROB_EPS, 1.0 - _PROB_EPS)).mean()


def adversarial_losses(d_real: torch.Tensor, d_fake: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """Original GAN losses on sigmoid probabilities, clamped away from {0, 1}.

    l_disc is the negated discriminator objective (minimize it to maximize
    the paper's L_D); l_gen is the saturating generator term log(1 - D(fake)).
    """
    d_real = d_real.clamp(_PROB_EPS, 1.0 - _PROB_EPS)
    l_disc = -torch.log(d_real).mean() - _saturating_gen_term(d_fake)
    return l_disc, _saturating_gen_term(d_fake)


@dataclass
class QuadBatch:
    """Magnitude tensors [batch, 2, freq, time] for the four quad roles."""

    in_a: torch.Tensor
    in_b: torch.Tensor
    gt_a: torch.Tensor
    gt_b: torch.Tensor


def quad_magnitudes(quad: TrainingQuad, cfg: StftConfig | None = None,
                    dtype: torch.dtype = torch.float32) -> QuadBatch:
    """STFT-encode a rendered quad into network-ready magnitude tensors."""
    cfg = cfg or StftConfig()

    def mag(track):
        m, _ = stft(track.audio, cfg)
        return torch.as_tensor(m.values, dtype=dtype)[None]

    return QuadBatch(in_a=mag(quad.in_a), in_b=mag(quad.in_b),
                     gt_a=mag(quad.gt_a), gt_b=mag(quad.gt_b))


def generator_loss(
    net: ReverbConversionNet,
    disc: Discriminator,
    batch: QuadBatch,
    cfg: TrainConfig,
    adv_active: bool,
) -> tuple[torch.Tensor, dict[str, float]]:
    """Total generator objective and its component values."""
    stack_in_a = net.encode(batch.in_a)
    stack_in_b = net.encode(batch.in_b)
    out_a = net.swap_and_decode(stack_in_a, stack_in_b)
    out_b = net.swap_and_decode(stack_in_b, stack_in_a)

    l_spec = spec_loss(out_a, batch.gt_a) + spec_loss(out_b, batch.gt_b)
    # in_a shares reverb (preset_1, gamma_1) with gt_b; in_b shares with gt_a
    l_latent = latent_loss(stack_in_a, net.encode(batch.gt_b)) + latent_loss(
        stack_in_b, net.encode(batch.gt_a)
    )
    total = cfg.w_spec * l_spec + cfg.w_latent * l_latent
    l_gen_adv = torch.zeros((), dtype=total.dtype)
    if adv_active:
        l_gen_adv = _saturating_gen_term(disc(out_a)) + _saturating_gen_term(disc(out_b))
        total = total + cfg.w_adv * l_gen_adv
    parts = {
        "l_spec": float(l_spec.detach()),
        "l_latent": float(l_latent.detach()),
        "l_gen_adv": float(l_gen_adv.detach()),
    }
    return total, parts


def make_optimizers(net, disc, cfg: TrainConfig):
    betas = (cfg.beta1, cfg.beta2)
    return (
        torch.optim.RAdam(net.parameters(), lr=cfg.lr, betas=betas),
        torch.optim.RAdam(disc.parameters(), lr=cfg.lr, betas=betas),
    )


def train_step(
    batch: QuadBatch,
    net: ReverbConversionNet,
    disc: Discriminator,
    opt_gen: torch.optim.Optimizer,
    opt_disc: torch.optim.Optimizer,
    cfg: TrainConfig,
    epoch: int,
    step: int = 0,
) -> LossReport:
    """One generator update, plus one discriminator update when adversarial."""
    adv_active = epoch >= cfg.adv_start_epoch

    opt_gen.zero_grad(set_to_none=True)
    total, parts = generator_loss(net, disc, batch, cfg, adv_active)
    total.backward()
    if cfg.grad_clip is not None:
        torch.nn.utils.clip_grad_norm_(net.parameters(), cfg.grad_clip)
    opt_gen.step()

    l_disc_val = 0.0
    if adv_active:
        with torch.no_grad():
            out_a, out_b = net.convert(batch.in_a, batch.in_b)
        opt_disc.zero_grad(set_to_none=True)
        d_real = disc(torch.cat([batch.gt_a, batch.gt_b]))
        d_fake = disc(torch.cat([out_a, out_b]))
        l_disc, _ = adversarial_losses(d_real, d_fake)
        l_disc.backward()
        if cfg.grad_clip is not None:
            torch.nn.utils.clip_grad_norm_(disc.parameters(), cfg.grad_clip)
        opt_disc.step()
        l_disc_val = float(l_disc.detach())

    return LossReport(
        epoch=epoch,
        step=step,
        l_spec=parts["l_spec"],
        l_latent=parts["l_latent"],
        l_gen_adv=parts["l_gen_adv"],
        l_disc=l_disc_val,
        adv_active=adv_active,
    )


class QuadLoader:
    """Materializes manifest records into magnitude batches, rendering audio
    on demand and caching the (few) dry sources in memory."""

    def __init__(
        self,
        quads: list[QuadSpec],
        presets: dict[str, ReverbPreset],
        cfg: TrainConfig,
        stft_cfg: StftConfig | None = None,
    ):
        if not quads:
            raise ValueError("empty dataset manifest")
        self.quads = quads
        self.presets = presets
        self.cfg = cfg
        self.stft_cfg = stft_cfg or StftConfig()
        self.clip_len = cfg.clip_frames * self.stft_cfg.hop
        self._sources: dict[str, Waveform] = {}

    def _source(self, path: str) -> Waveform:
        if path not in self._sources:
            self._sources[path] = load_canonical(path)
        return self._sources[path]

    def _clip(self, path: str, offset: int) -> Waveform:
        w = self._source(path)
        seg = w.samples[:, offset : offset + self.clip_len]
        if seg.shape[1] < self.clip_len:
            seg = np.pad(seg, ((0, 0), (0, self.clip_len - seg.shape[1])))
        return Waveform(samples=seg, sample_rate=w.sample_rate)

    def gammas(self, spec: QuadSpec, index: int, epoch: int) -> tuple[float, float]:
        """Manifest gammas, or a per-epoch redraw from the grid when enabled."""
        if not self.cfg.redraw_gamma or epoch == 0:
            return spec.gamma_1, spec.gamma_2
        rng = np.random.default_rng([self.cfg.seed, epoch, index])
        g1, g2 = (GAMMA_GRID[i] for i in rng.integers(0, len(GAMMA_GRID), size=2))
        return g1, g2

    def build(self, spec: QuadSpec, index: int, epoch: int) -> QuadBatch:
        g1, g2 = self.gammas(spec, index, epoch)
        quad = build_quad(
            self._clip(spec.source_a, spec.segment_offset),
            self._clip(spec.source_b, spec.segment_offset),
            self.presets[spec.preset_1],
            self.presets[spec.preset_2],
            g1,
            g2,
            source_a=spec.source_a,
            source_b=spec.source_b,
        )
        return quad_magnitudes(quad, self.stft_cfg)

    def epoch_batches(self, epoch: int):
        """Deterministically shuffled batches for one epoch."""
        order = np.random.default_rng([self.cfg.seed, epoch]).permutation(len(self.quads))
        for start in range(0, len(order), self.cfg.batch_size):
            idx = order[start : start + self.cfg.batch_size]
            built = [self.build(self.quads[i], int(i), epoch) for i in idx]
            yield QuadBatch(
                in_a=torch.cat([b.in_a for b in built]),
                in_b=torch.cat([b.in_b for b in built]),
                gt_a=torch.cat([b.gt_a for b in built]),
                gt_b=torch.cat([b.gt_b for b in built]),
            )


def _checkpoint_path(out_dir: Path, epoch: int) -> Path:
    return out_dir / f"epoch_{epoch:04d}.ckpt"


def latest_checkpoint(out_dir) -> Path | None:
    out_dir = Path(out_dir)
    found = sorted(out_dir.glob("epoch_*.ckpt"))
    return found[-1] if found else None


def train(
    quads: list[QuadSpec],
    presets: dict[str, ReverbPreset],
    cfg: TrainConfig,
    out_dir,
    model_cfg: ModelConfig | None = None,
    resume: bool = False,
) -> Path:
    """Run the full loop; returns the final checkpoint path.

    Writes epoch_NNNN.ckpt per epoch plus loss_log.jsonl, appending on
    resume. Epoch 0 parameters are checkpointed before any update so a
    total_epochs=0 run still leaves a loadable initial checkpoint.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if model_cfg is None:
        model_cfg = ModelConfig(time_frames=cfg.clip_frames)

    start_epoch = 0
    resumed = latest_checkpoint(out_dir) if resume else None
    if resumed is not None:
        net, disc, meta = load_checkpoint(resumed)
        opt_gen, opt_disc = make_optimizers(net, disc, cfg)
        if "opt_gen" in meta:
            opt_gen.load_state_dict(meta["opt_gen"])
            opt_disc.load_state_dict(meta["opt_disc"])
        start_epoch = meta["epoch"] + 1
        torch.manual_seed(cfg.seed + start_epoch)
    else:
        net, disc = build_models(model_cfg, seed=cfg.seed)
        opt_gen, opt_disc = make_optimizers(net, disc, cfg)
        save_checkpoint(_checkpoint_path(out_dir, 0), net, disc, epoch=-1,
                        extra={"train_config": asdict(cfg)})

    loader = QuadLoader(quads, presets, cfg)
    log_path = out_dir / "loss_log.jsonl"
    log_mode = "a" if (resumed is not None and log_path.exists()) else "w"

    last_good = _checkpoint_path(out_dir, 0)
    with open(log_path, log_mode) as log:
        for epoch in range(start_epoch, cfg.total_epochs):
            for step, batch in enumerate(loader.epoch_batches(epoch)):
                try:
                    report = train_step(batch, net, disc, opt_gen, opt_disc, cfg, epoch, step)
                except TrainingDiverged:
                    log.flush()
                    raise
                log.write(report.to_json() + "\n")
            path = _checkpoint_path(out_dir, epoch + 1)
            save_checkpoint(
                path, net, disc, epoch=epoch,
                extra={
                    "train_config": asdict(cfg),
                    "opt_gen": opt_gen.state_dict(),
                    "opt_disc": opt_disc.state_dict(),
                },
            )
            last_good = path
    return last_good


def read_loss_log(path) -> list[dict]:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


def gradient_check(
    net: ReverbConversionNet,
    disc: Discriminator,
    batch: QuadBatch,
    cfg: TrainConfig,
    n_params: int = 200,
    eps: float = 1e-5,
    seed: int = 0,
) -> float:
    """Compare analytic generator-loss gradients with central finite
    differences at float64; returns the worst relative error.

    Run on a reduced config: the loss is evaluated 2*n_params times.
    """
    net = net.double()
    disc = disc.double()
    batch = QuadBatch(*(t.double() for t in (batch.in_a, batch.in_b, batch.gt_a, batch.gt_b)))

    def loss_value() -> float:
        with torch.no_grad():
            total, _ = generator_loss(net, disc, batch, cfg, adv_active=True)
        return float(total)

    net.zero_grad(set_to_none=True)
    total, _ = generator_loss(net, disc, batch, cfg, adv_active=True)
    total.backward()

    params = [p for p in net.parameters() if p.grad is not None]
    sizes = np.array([p.numel() for p in params])
    cum = np.cumsum(sizes)
    rng = np.random.default_rng(seed)
    picks = rng.choice(cum[-1], size=min(n_params, cum[-1]), replace=False)

    worst = 0.0
    for flat_idx in picks:
        p_idx = int(np.searchsorted(cum, flat_idx, side="right"))
        local = int(flat_idx - (cum[p_idx - 1] if p_idx else 0))
        param = params[p_idx]
        flat = param.data.view(-1)
        analytic = float(param.grad.view(-1)[local])
        orig = float(flat[local])
        h = eps * max(1.0, abs(orig))
        flat[local] = orig + h
        f_plus = loss_value()
        flat[local] = orig - h
        f_minus = loss_value()
        flat[local] = orig
        fd = (f_plus - f_minus) / (2 * h)
        rel = abs(analytic - fd) / max(abs(analytic), abs(fd), 1e-4)
        worst = max(worst, rel)
    return worst
