"""Translators, discriminators, the structure encoder and the combination classifier."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .data import Image, Modality
from .errors import ConfigError

NETWORK_NAMES = ("G_TC", "G_CT", "D_T", "D_C", "f", "C")
STRUCTURE_NETWORKS = ("f", "C")


@dataclass(frozen=True)
class ModelConfig:
    image_side: int = 64
    ngf: int = 16
    ndf: int = 16
    unet_depth: int = 3
    enc_channels: tuple[int, ...] = (16, 32, 64, 128, 128)
    enc_strides: tuple[int, ...] = (2, 2, 2, 1, 1)
    cls_width: int = 64
    init_std: float = 0.02

    def validate(self) -> None:
        if self.unet_depth < 1:
            raise ConfigError(f"unet_depth must be >= 1, got {self.unet_depth}")
        factor = 2 ** self.unet_depth
        if self.image_side % factor:
            raise ConfigError(
                f"image_side {self.image_side} must be a multiple of the translator downsampling factor {factor}"
            )
        if len(self.enc_channels) != 5 or len(self.enc_strides) != 5:
            raise ConfigError("structure encoder needs exactly five layers")
        if self.enc_channels[-1] != 128:
            raise ConfigError("structure encoder must emit 128 channels")
        if int(np.prod(self.enc_strides)) != 8:
            raise ConfigError("structure encoder strides must multiply to 8")


def init_weights(net: nn.Module, std: float, generator: torch.Generator) -> nn.Module:
    """Zero-mean Gaussian weights, zero biases."""
    with torch.no_grad():
        for m in net.modules():
            if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d, nn.Linear)):
                m.weight.normal_(0.0, std, generator=generator)
                if m.bias is not None:
                    m.bias.zero_()
    return net


class UNetTranslator(nn.Module):
    def __init__(self, ngf: int = 16, depth: int = 3):
        super().__init__()
        self.depth = depth
        chans = [min(ngf * 2 ** i, ngf * 8) for i in range(depth)]
        downs = []
        in_ch = 1
        for i, ch in enumerate(chans):
            layers = [nn.Conv2d(in_ch, ch, 4, 2, 1)]
            if i > 0:
                layers.append(nn.InstanceNorm2d(ch))
            layers.append(nn.LeakyReLU(0.2))
            downs.append(nn.Sequential(*layers))
            in_ch = ch
        self.downs = nn.ModuleList(downs)
        self.bottleneck = nn.Sequential(nn.Conv2d(chans[-1], chans[-1], 3, 1, 1),
                                        nn.InstanceNorm2d(chans[-1]), nn.ReLU())
        ups = []
        for i in reversed(range(depth)):
            out_ch = chans[i - 1] if i > 0 else ngf
            ups.append(nn.Sequential(nn.ConvTranspose2d(2 * chans[i], out_ch, 4, 2, 1),
                                     nn.InstanceNorm2d(out_ch), nn.ReLU()))
        self.ups = nn.ModuleList(ups)
        self.head = nn.Sequential(nn.Conv2d(ngf, 1, 3, 1, 1), nn.Tanh())

    @property
    def downsampling_factor(self) -> int:
        return 2 ** self.depth

    def forward(self, x):
        skips = []
        for down in self.downs:
            x = down(x)
            skips.append(x)
        x = self.bottleneck(x)
        for up, skip in zip(self.ups, reversed(skips)):
            x = up(torch.cat([x, skip], dim=1))
        return self.head(x)


class PatchDiscriminator(nn.Module):
    """Three conv layers; returns a spatial grid of unbounded real/fake scores."""

    def __init__(self, ndf: int = 16):
        super().__init__()
        self.net = nn.Sequential(
            nn.Conv2d(1, ndf, 4, 2, 1), nn.LeakyReLU(0.2),
            nn.Conv2d(ndf, 2 * ndf, 4, 2, 1), nn.InstanceNorm2d(2 * ndf), nn.LeakyReLU(0.2),
            nn.Conv2d(2 * ndf, 1, 3, 1, 1),
        )

    def forward(self, x):
        return self.net(x)


class StructureEncoder(nn.Module):
    """Five fully convolutional layers, /8 spatially, 128 output channels."""

    def __init__(self, channels=(16, 32, 64, 128, 128), strides=(2, 2, 2, 1, 1)):
        super().__init__()
        layers = []
        in_ch = 1
        for i, (ch, s) in enumerate(zip(channels, strides)):
            layers.append(nn.Conv2d(in_ch, ch, 3, s, 1))
            if i < len(channels) - 1:
                if i > 0:
                    layers.append(nn.InstanceNorm2d(ch))
                layers.append(nn.LeakyReLU(0.2))
            in_ch = ch
        self.net = nn.Sequential(*layers)

    def forward(self, x):
        return self.net(x)


class ComboClassifier(nn.Module):
    """Two conv + two linear layers over a concatenated feature pair, 3 logits out."""

    def __init__(self, in_channels: int = 256, width: int = 64):
        super().__init__()
        self.features = nn.Sequential(
            nn.Conv2d(in_channels, width, 3, 1, 1), nn.LeakyReLU(0.2),
            nn.Conv2d(width, width, 3, 1, 1), nn.LeakyReLU(0.2),
            nn.AdaptiveAvgPool2d(1), nn.Flatten(),
        )
        self.head = nn.Sequential(nn.Linear(width, width), nn.LeakyReLU(0.2), nn.Linear(width, 3))

    def forward(self, pair_features):
        return self.head(self.features(pair_features))


def _generator(seed: int) -> torch.Generator:
    return torch.Generator().manual_seed(int(seed))


def build_translator(cfg: ModelConfig, seed: int = 0) -> UNetTranslator:
    cfg.validate()
    return init_weights(UNetTranslator(cfg.ngf, cfg.unet_depth), cfg.init_std, _generator(seed))


def build_discriminator(cfg: ModelConfig, seed: int = 0) -> PatchDiscriminator:
    cfg.validate()
    return init_weights(PatchDiscriminator(cfg.ndf), cfg.init_std, _generator(seed))


def build_structure_encoder(cfg: ModelConfig, seed: int = 0) -> StructureEncoder:
    cfg.validate()
    return init_weights(StructureEncoder(cfg.enc_channels, cfg.enc_strides), cfg.init_std, _generator(seed))


def build_combo_classifier(cfg: ModelConfig, seed: int = 0) -> ComboClassifier:
    cfg.validate()
    return init_weights(ComboClassifier(2 * cfg.enc_channels[-1], cfg.cls_width), cfg.init_std, _generator(seed))


_BUILDERS = {
    "G_TC": build_translator, "G_CT": build_translator,
    "D_T": build_discriminator, "D_C": build_discriminator,
    "f": build_structure_encoder, "C": build_combo_classifier,
}


@dataclass
class NetworkBundle:
    G_TC: UNetTranslator
    G_CT: UNetTranslator
    D_T: PatchDiscriminator
    D_C: PatchDiscriminator
    f: StructureEncoder
    C: ComboClassifier

    def items(self):
        return [(name, getattr(self, name)) for name in NETWORK_NAMES]

    def to(self, dtype):
        for _, net in self.items():
            net.to(dtype)
        return self


def network_seed(seed: int, name: str) -> int:
    # each network draws from its own stream so adding or dropping one never shifts the others
    return seed * 100 + NETWORK_NAMES.index(name) + 1


def build_bundle(cfg: ModelConfig, seed: int) -> NetworkBundle:
    return NetworkBundle(**{name: _BUILDERS[name](cfg, network_seed(seed, name)) for name in NETWORK_NAMES})


def count_parameters(net: nn.Module) -> int:
    return sum(p.numel() for p in net.parameters())


def translate(net: UNetTranslator, x: Image) -> Image:
    """Run a translator on one normalized image in inference mode."""
    factor = net.downsampling_factor
    if x.height % factor or x.width % factor:
        raise ValueError(f"image side must be a multiple of {factor}, got {x.height}x{x.width}")
    dtype = next(net.parameters()).dtype
    was_training = net.training
    net.eval()
    with torch.no_grad():
        out = net(torch.as_tensor(x.pixels, dtype=dtype)[None, None])
    net.train(was_training)
    return Image(out[0, 0].double().numpy(), Modality.SYNTH_OUT)
