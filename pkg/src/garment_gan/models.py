"""Encoder, attribute-conditioned decoder, and shared-trunk discriminator/classifier.

Architecture follows the common DCGAN-style encoder-decoder editing setup:
the encoder stacks stride-2 ``Conv2d`` blocks (batch norm + leaky rectifier),
the decoder mirrors them with stride-2 ``ConvTranspose2d`` blocks and a tanh
output, and the target attribute vector is injected by tiling it spatially
and concatenating it onto the latent code channel-wise. The discriminator
and the attribute classifier share a convolutional trunk (no normalisation,
so the same trunk also serves the optional gradient-penalty loss) with two
small linear heads.
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn

from .data import rng_for


class ShapeError(ValueError):
    """Raised when an input does not match the configured model shapes."""


@dataclass(frozen=True)
class ModelConfig:
    """Shape parameters shared by all three networks."""

    image_size: int
    n_attributes: int
    encoder_blocks: int = 3
    base_channels: int = 32
    norm: str = "batch"  # "batch" | "none" (plain blocks, used by gradient checks)

    def __post_init__(self) -> None:
        if self.encoder_blocks < 1:
            raise ShapeError(f"encoder_blocks must be >= 1, got {self.encoder_blocks}")
        if self.base_channels < 1:
            raise ShapeError(f"base_channels must be >= 1, got {self.base_channels}")
        if self.n_attributes < 1:
            raise ShapeError(f"n_attributes must be >= 1, got {self.n_attributes}")
        if self.image_size % (2 ** self.encoder_blocks) != 0:
            raise ShapeError(
                f"image_size {self.image_size} not divisible by 2^{self.encoder_blocks}"
            )
        if self.latent_size < 1:
            raise ShapeError("derived latent spatial size must be >= 1")
        if self.norm not in ("batch", "none"):
            raise ShapeError(f"norm must be 'batch' or 'none', got {self.norm!r}")

    @property
    def channel_seq(self) -> tuple[int, ...]:
        """Output channels of each encoder block (doubling per block)."""
        return tuple(self.base_channels * (2 ** i) for i in range(self.encoder_blocks))

    @property
    def latent_channels(self) -> int:
        return self.channel_seq[-1]

    @property
    def latent_size(self) -> int:
        return self.image_size // (2 ** self.encoder_blocks)

    @property
    def latent_shape(self) -> tuple[int, int, int]:
        return (self.latent_channels, self.latent_size, self.latent_size)

    def to_json_dict(self) -> dict:
        return {
            "image_size": self.image_size,
            "n_attributes": self.n_attributes,
            "encoder_blocks": self.encoder_blocks,
            "base_channels": self.base_channels,
            "norm": self.norm,
        }

    @classmethod
    def from_json_dict(cls, obj: dict) -> "ModelConfig":
        return cls(**obj)


def _norm_layer(config: ModelConfig, channels: int) -> nn.Module:
    return nn.BatchNorm2d(channels) if config.norm == "batch" else nn.Identity()


class Generator(nn.Module):
    """G_enc / G_dec pair; ``forward(x, b)`` produces the edited image."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        chans = config.channel_seq

        enc_layers: list[nn.Module] = []
        in_ch = 3
        for out_ch in chans:
            enc_layers += [
                nn.Conv2d(in_ch, out_ch, 4, stride=2, padding=1),
                _norm_layer(config, out_ch),
                nn.LeakyReLU(0.2, inplace=True),
            ]
            in_ch = out_ch
        self.encoder = nn.Sequential(*enc_layers)

        dec_layers: list[nn.Module] = []
        in_ch = config.latent_channels + config.n_attributes
        for out_ch in reversed(chans[:-1]):
            dec_layers += [
                nn.ConvTranspose2d(in_ch, out_ch, 4, stride=2, padding=1),
                _norm_layer(config, out_ch),
                nn.ReLU(inplace=True),
            ]
            in_ch = out_ch
        dec_layers += [nn.ConvTranspose2d(in_ch, 3, 4, stride=2, padding=1), nn.Tanh()]
        self.decoder = nn.Sequential(*dec_layers)

    def _check_image(self, x: torch.Tensor) -> None:
        s = self.config.image_size
        if x.ndim != 4 or x.shape[1] != 3 or x.shape[2] != s or x.shape[3] != s:
            raise ShapeError(f"expected image batch (B, 3, {s}, {s}), got {tuple(x.shape)}")

    def encode(self, x: torch.Tensor) -> torch.Tensor:
        self._check_image(x)
        return self.encoder(x)

    def decode(self, z: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
        c, s, _ = self.config.latent_shape
        if z.ndim != 4 or tuple(z.shape[1:]) != (c, s, s):
            raise ShapeError(f"expected latent (B, {c}, {s}, {s}), got {tuple(z.shape)}")
        if b.ndim != 2 or b.shape[1] != self.config.n_attributes:
            raise ShapeError(
                f"expected attribute batch (B, {self.config.n_attributes}), got {tuple(b.shape)}"
            )
        if b.shape[0] != z.shape[0]:
            raise ShapeError(f"latent batch {z.shape[0]} != attribute batch {b.shape[0]}")
        tiled = b.to(z.dtype)[:, :, None, None].expand(-1, -1, s, s)
        return self.decoder(torch.cat([z, tiled], dim=1))

    def forward(self, x: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
        return self.decode(self.encode(x), b)


class DiscriminatorClassifier(nn.Module):
    """Shared conv trunk with a realness head and an n-way sigmoid head."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        layers: list[nn.Module] = []
        in_ch = 3
        for out_ch in config.channel_seq:
            layers += [nn.Conv2d(in_ch, out_ch, 4, stride=2, padding=1), nn.LeakyReLU(0.2, inplace=True)]
            in_ch = out_ch
        self.trunk = nn.Sequential(*layers)
        feat = config.latent_channels * config.latent_size * config.latent_size
        self.d_head = nn.Linear(feat, 1)
        self.c_head = nn.Linear(feat, config.n_attributes)

    def _features(self, x: torch.Tensor) -> torch.Tensor:
        s = self.config.image_size
        if x.ndim != 4 or x.shape[1] != 3 or x.shape[2] != s or x.shape[3] != s:
            raise ShapeError(f"expected image batch (B, 3, {s}, {s}), got {tuple(x.shape)}")
        return self.trunk(x).flatten(1)

    def discriminate(self, x: torch.Tensor) -> torch.Tensor:
        """Unbounded realness logit per image, shape (B,)."""
        return self.d_head(self._features(x)).squeeze(1)

    def classify(self, x: torch.Tensor) -> torch.Tensor:
        """Per-attribute probabilities in (0, 1), shape (B, n)."""
        return torch.sigmoid(self.c_head(self._features(x)))

    def classify_logits(self, x: torch.Tensor) -> torch.Tensor:
        return self.c_head(self._features(x))

    def forward(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        feat = self._features(x)
        return self.d_head(feat).squeeze(1), torch.sigmoid(self.c_head(feat))


def init_weights(module: nn.Module, torch_gen: torch.Generator) -> None:
    """Zero-mean Gaussian (std 0.02) conv/linear weights, zero biases."""
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d, nn.Linear)):
            nn.init.normal_(m.weight, 0.0, 0.02, generator=torch_gen)
            if m.bias is not None:
                nn.init.zeros_(m.bias)
        elif isinstance(m, nn.BatchNorm2d):
            nn.init.ones_(m.weight)
            nn.init.zeros_(m.bias)


def _torch_generator(seed: int, stream_index: int) -> torch.Generator:
    derived = int(rng_for(seed, "init", stream_index).integers(0, 2 ** 63 - 1))
    return torch.Generator().manual_seed(derived)


def build_models(
    config: ModelConfig, seed: int, dtype: torch.dtype = torch.float32
) -> tuple[Generator, DiscriminatorClassifier]:
    """Construct and deterministically initialise the generator and D/C pair."""
    gen = Generator(config).to(dtype)
    dc = DiscriminatorClassifier(config).to(dtype)
    init_weights(gen, _torch_generator(seed, 0))
    init_weights(dc, _torch_generator(seed, 1))
    return gen, dc


def attrs_to_tensor(bits: np.ndarray, dtype: torch.dtype = torch.float32) -> torch.Tensor:
    """(B, n) or (n,) {0,1} array -> float tensor (adds batch dim if needed)."""
    arr = np.asarray(bits)
    if arr.ndim == 1:
        arr = arr[None, :]
    return torch.as_tensor(arr.astype(np.float64), dtype=dtype)


def images_to_tensor(pixels: np.ndarray, dtype: torch.dtype = torch.float32) -> torch.Tensor:
    """(B, H, W, 3) or (H, W, 3) array in [-1, 1] -> NCHW tensor."""
    arr = np.asarray(pixels)
    if arr.ndim == 3:
        arr = arr[None]
    return torch.as_tensor(arr.astype(np.float64), dtype=dtype).permute(0, 3, 1, 2).contiguous()


def tensor_to_images(t: torch.Tensor) -> np.ndarray:
    """NCHW tensor -> (B, H, W, 3) float32 array clipped to [-1, 1]."""
    arr = t.detach().permute(0, 2, 3, 1).cpu().numpy().astype(np.float32)
    return np.clip(arr, -1.0, 1.0)


@contextlib.contextmanager
def frozen_batchnorm_stats(module: nn.Module):
    """Run batch-norm on batch statistics without touching running buffers.

    Used when the generator produces fakes for a discriminator step: the
    outputs match training mode exactly, but the generator's running
    statistics (part of its checkpointed state) stay bitwise unchanged.
    """
    bns = [m for m in module.modules() if isinstance(m, nn.BatchNorm2d)]
    saved = [m.track_running_stats for m in bns]
    for m in bns:
        m.track_running_stats = False
    try:
        yield
    finally:
        for m, flag in zip(bns, saved):
            m.track_running_stats = flag


@contextlib.contextmanager
def inference(*modules: nn.Module):
    """Temporarily switch modules to eval mode with gradients disabled."""
    saved = [m.training for m in modules]
    for m in modules:
        m.eval()
    try:
        with torch.no_grad():
            yield
    finally:
        for m, flag in zip(modules, saved):
            m.train(flag)
