"""Dual-input U-Net that swaps the reverb factor between two magnitude
spectrograms, plus the patch-to-scalar discriminator.

Every encoder layer's output is split down the channel axis: the first half
carries the source factor, the second half the reverb factor. Conversion
decodes from a bottleneck made of the input's own source half concatenated
with the counterpart's reverb half, and the skip connections at the inner
layers are assembled the same way. Zeroing the counterpart's reverb halves
therefore makes the output exactly independent of the counterpart.

Encoder blocks are conv -> ReLU -> squeeze-excitation -> strided conv ->
ReLU; decoder blocks mirror them with a transposed conv upsampler. Kernels
are 3x3 except the outermost layer's 5x5, stride is 2x2, and the top decoder
level takes no skip. The discriminator reuses the encoder trunk, max-pools
its 32x20 output map down to 4x3, and applies one valid 4x3 convolution
followed by a sigmoid, giving a single probability per example.
"""

from __future__ import annotations

import os
import tempfile
from dataclasses import asdict, dataclass, field

import torch
import torch.nn as nn
import torch.nn.functional as F

CHECKPOINT_FORMAT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    n_layers: int = 5
    channels: tuple[int, ...] = (32, 64, 128, 256, 512)
    se_reduction: int = 16
    input_channels: int = 2
    freq_bins: int = 1024
    time_frames: int = 640

    def __post_init__(self):
        if len(self.channels) != self.n_layers:
            raise ValueError("channels must list one width per layer")
        for a, b in zip(self.channels, self.channels[1:]):
            if b != 2 * a:
                raise ValueError(f"channel widths must double per layer, got {self.channels}")
        if any(c % 2 for c in self.channels):
            raise ValueError("channel widths must be even (split into source/reverb halves)")
        stride_total = 2 ** self.n_layers
        if self.freq_bins % stride_total or self.time_frames % stride_total:
            raise ValueError(
                f"input {self.freq_bins}x{self.time_frames} must be divisible by 2^{self.n_layers}"
            )

    def kernel(self, layer: int) -> int:
        return 5 if layer == 0 else 3


REDUCED_CONFIG = ModelConfig(channels=(4, 8, 16, 32, 64), freq_bins=128, time_frames=96)


@dataclass
class LatentStack:
    """Per-encoder-layer feature maps, each channel-split into halves."""

    layers: list[torch.Tensor] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.layers)


def source_half(x: torch.Tensor) -> torch.Tensor:
    return x[:, : x.shape[1] // 2]


def reverb_half(x: torch.Tensor) -> torch.Tensor:
    return x[:, x.shape[1] // 2 :]


class SqueezeExcite(nn.Module):
    def __init__(self, channels: int, reduction: int):
        super().__init__()
        hidden = max(channels // reduction, 1)
        self.fc1 = nn.Linear(channels, hidden)
        self.fc2 = nn.Linear(hidden, channels)

    def forward(self, x):
        gate = x.mean(dim=(2, 3))
        gate = torch.sigmoid(self.fc2(F.relu(self.fc1(gate))))
        return x * gate[:, :, None, None]

    def gates(self, x):
        """Channel gate values, exposed for inspection; strictly in (0, 1)."""
        gate = x.mean(dim=(2, 3))
        return torch.sigmoid(self.fc2(F.relu(self.fc1(gate))))


class EncoderBlock(nn.Module):
    """conv (ReLU) -> SE -> stride-2 conv (ReLU); halves both spatial dims."""

    def __init__(self, in_ch: int, out_ch: int, kernel: int, se_reduction: int):
        super().__init__()
        pad = kernel // 2
        self.conv1 = nn.Conv2d(in_ch, out_ch, kernel, padding=pad)
        self.se = SqueezeExcite(out_ch, se_reduction)
        self.conv2 = nn.Conv2d(out_ch, out_ch, kernel, stride=2, padding=pad)

    def forward(self, x):
        x = F.relu(self.conv1(x))
        x = self.se(x)
        return F.relu(self.conv2(x))


class DecoderBlock(nn.Module):
    """conv (ReLU) -> SE -> stride-2 transposed conv (ReLU); doubles spatial dims."""

    def __init__(self, in_ch: int, mid_ch: int, out_ch: int, kernel: int, se_reduction: int):
        super().__init__()
        pad = kernel // 2
        self.conv = nn.Conv2d(in_ch, mid_ch, kernel, padding=pad)
        self.se = SqueezeExcite(mid_ch, se_reduction)
        self.up = nn.ConvTranspose2d(mid_ch, out_ch, kernel, stride=2, padding=pad, output_padding=1)

    def forward(self, x):
        x = F.relu(self.conv(x))
        x = self.se(x)
        return F.relu(self.up(x))


class Encoder(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        widths = (cfg.input_channels,) + cfg.channels
        self.blocks = nn.ModuleList(
            EncoderBlock(widths[i], widths[i + 1], cfg.kernel(i), cfg.se_reduction)
            for i in range(cfg.n_layers)
        )

    def forward(self, x) -> LatentStack:
        layers = []
        for block in self.blocks:
            x = block(x)
            layers.append(x)
        return LatentStack(layers=layers)


class ReverbConversionNet(nn.Module):
    """Shared-weight encoder/decoder pair operating on two inputs at once."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.encoder = Encoder(cfg)
        ch = cfg.channels
        blocks = [DecoderBlock(ch[-1], ch[-1], ch[-2], 3, cfg.se_reduction)]
        for i in range(cfg.n_layers - 2, 0, -1):
            # Inner levels consume the upsampled path plus a same-width skip
            blocks.append(DecoderBlock(2 * ch[i], ch[i], ch[i - 1], 3, cfg.se_reduction))
        blocks.append(DecoderBlock(ch[0], ch[0], ch[0], 5, cfg.se_reduction))  # top level: no skip
        self.decoder_blocks = nn.ModuleList(blocks)
        self.project = nn.Conv2d(ch[0], cfg.input_channels, kernel_size=1)

    def _check_input(self, mag: torch.Tensor):
        if mag.ndim != 4:
            raise ValueError(f"expected [batch, channels, freq, time], got shape {tuple(mag.shape)}")
        stride_total = 2 ** self.cfg.n_layers
        if (
            mag.shape[1] != self.cfg.input_channels
            or mag.shape[2] != self.cfg.freq_bins
            or mag.shape[3] % stride_total
        ):
            raise ValueError(
                f"input shape {tuple(mag.shape)} incompatible with config "
                f"({self.cfg.input_channels} ch, {self.cfg.freq_bins} bins, time divisible by {stride_total})"
            )

    def encode(self, mag: torch.Tensor) -> LatentStack:
        self._check_input(mag)
        return self.encoder(mag)

    def swap_and_decode(self, stack_self: LatentStack, stack_ref: LatentStack) -> torch.Tensor:
        """Decode own source halves combined with the counterpart's reverb halves."""
        if len(stack_self) != self.cfg.n_layers or len(stack_ref) != self.cfg.n_layers:
            raise ValueError("latent stacks do not match the configured layer count")
        x = torch.cat(
            [source_half(stack_self.layers[-1]), reverb_half(stack_ref.layers[-1])], dim=1
        )
        x = self.decoder_blocks[0](x)
        for k, i in enumerate(range(self.cfg.n_layers - 2, 0, -1)):
            skip = torch.cat(
                [source_half(stack_self.layers[i]), reverb_half(stack_ref.layers[i])], dim=1
            )
            x = self.decoder_blocks[1 + k](torch.cat([x, skip], dim=1))
        x = self.decoder_blocks[-1](x)
        return F.relu(self.project(x))

    def convert(self, mag_a: torch.Tensor, mag_b: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """out_a carries a's source with b's reverb; out_b the converse."""
        stack_a = self.encode(mag_a)
        stack_b = self.encode(mag_b)
        out_a = self.swap_and_decode(stack_a, stack_b)
        out_b = self.swap_and_decode(stack_b, stack_a)
        return out_a, out_b

    forward = convert


class Discriminator(nn.Module):
    """Encoder trunk -> max-pool to 4x3 -> valid 4x3 conv -> sigmoid scalar."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.trunk = Encoder(cfg)
        self.head = nn.Conv2d(cfg.channels[-1], 1, kernel_size=(4, 3))

    def forward(self, mag: torch.Tensor) -> torch.Tensor:
        feat = self.trunk(mag).layers[-1]
        # Adaptive pooling covers the canonical 32x20 map (8x6-ish windows,
        # uneven remainder spread across windows) and any reduced-config map.
        pooled = F.adaptive_max_pool2d(feat, output_size=(4, 3))
        return torch.sigmoid(self.head(pooled)).reshape(-1)


def build_models(cfg: ModelConfig, seed: int = 0) -> tuple[ReverbConversionNet, Discriminator]:
    """Construct generator and discriminator with seeded initialization."""
    torch.manual_seed(seed)
    return ReverbConversionNet(cfg), Discriminator(cfg)


def save_checkpoint(path, net: ReverbConversionNet, disc: Discriminator, epoch: int,
                    extra: dict | None = None) -> None:
    """Atomic, self-describing checkpoint: config snapshot + named tensors."""
    payload = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "config": asdict(net.cfg),
        "epoch": epoch,
        "generator": net.state_dict(),
        "discriminator": disc.state_dict(),
    }
    if extra:
        payload.update(extra)
    directory = os.path.dirname(os.fspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".ckpt.tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            torch.save(payload, fh)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_checkpoint(path) -> tuple[ReverbConversionNet, Discriminator, dict]:
    """Rebuild models from a checkpoint; parameters load by name."""
    payload = torch.load(path, map_location="cpu", weights_only=True)
    version = payload.get("format_version")
    if version != CHECKPOINT_FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint format version: {version}")
    cfg_dict = dict(payload["config"])
    cfg_dict["channels"] = tuple(cfg_dict["channels"])
    cfg = ModelConfig(**cfg_dict)
    net = ReverbConversionNet(cfg)
    disc = Discriminator(cfg)
    net.load_state_dict(payload["generator"])
    disc.load_state_dict(payload["discriminator"])
    meta = {k: v for k, v in payload.items() if k not in ("generator", "discriminator")}
    return net, disc, meta
