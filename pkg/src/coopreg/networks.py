"""Registration network and cooperative autoencoder.

The primary network is a U-Net that maps a (source, target) pair to a
displacement field. Setting ``bottleneck_dim`` squeezes its coarsest feature
map through a dense layer of that width (the UnDR-BN baseline); turning off
``skip_connections`` gives the no-skip ablation.

The cooperative autoencoder (CAE) compresses a displacement field to an
``h``-dimensional latent code and decodes it back.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

LEAK = 0.2


@dataclass(frozen=True)
class PrimaryConfig:
    levels: int = 4
    base_channels: int = 16
    skip_connections: bool = True
    bottleneck_dim: int | None = None

    def __post_init__(self):
        if self.levels < 2:
            raise ValueError(f"levels must be >= 2, got {self.levels}")
        if self.base_channels < 1:
            raise ValueError(f"base_channels must be >= 1, got {self.base_channels}")
        if self.bottleneck_dim is not None and self.bottleneck_dim < 1:
            raise ValueError(f"bottleneck_dim must be >= 1, got {self.bottleneck_dim}")

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class CAEConfig:
    h: int = 1
    levels: int = 3
    base_channels: int = 16

    def __post_init__(self):
        if self.h < 1:
            raise ValueError(f"h must be >= 1, got {self.h}")
        if self.levels < 1:
            raise ValueError(f"levels must be >= 1, got {self.levels}")
        if self.base_channels < 1:
            raise ValueError(f"base_channels must be >= 1, got {self.base_channels}")

    def to_dict(self):
        return asdict(self)


def _conv_block(cin, cout):
    return nn.Sequential(
        nn.Conv2d(cin, cout, 3, padding=1),
        nn.LeakyReLU(LEAK),
        nn.Conv2d(cout, cout, 3, padding=1),
        nn.LeakyReLU(LEAK),
    )


def _fan_in_uniform_(module: nn.Module, generator: torch.Generator) -> None:
    # U(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases alike
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d, nn.Linear)):
            if isinstance(m, nn.ConvTranspose2d):
                fan_in = m.weight.shape[0] * m.weight[0, 0].numel()
            else:
                fan_in = m.weight[0].numel()
            bound = 1.0 / math.sqrt(fan_in)
            with torch.no_grad():
                m.weight.uniform_(-bound, bound, generator=generator)
                if m.bias is not None:
                    m.bias.uniform_(-bound, bound, generator=generator)


class PrimaryNet(nn.Module):
    def __init__(self, config: PrimaryConfig, image_size: int | tuple[int, int] = 64):
        super().__init__()
        self.config = config
        self.image_size = _pair(image_size)
        c = [config.base_channels * 2**k for k in range(config.levels)]
        self.encoder = nn.ModuleList()
        cin = 2
        for ch in c:
            self.encoder.append(_conv_block(cin, ch))
            cin = ch

        if config.bottleneck_dim is not None:
            factor = 2 ** (config.levels - 1)
            h, w = self.image_size
            if h % factor or w % factor:
                raise ValueError(f"image size {self.image_size} not divisible by {factor}")
            self._coarse_shape = (c[-1], h // factor, w // factor)
            n = c[-1] * (h // factor) * (w // factor)
            self.squeeze = nn.Linear(n, config.bottleneck_dim)
            self.expand = nn.Linear(config.bottleneck_dim, n)

        self.decoder = nn.ModuleList()
        for k in range(config.levels - 2, -1, -1):
            cin = c[k + 1] + (c[k] if config.skip_connections else 0)
            self.decoder.append(_conv_block(cin, c[k]))
        self.head = nn.Conv2d(c[0], 2, 1)

    def forward(self, source: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
        """``(B, H, W)`` source and target -> ``(B, H, W, 2)`` field."""
        check_divisible(source.shape[-2:], 2 ** (self.config.levels - 1))
        if source.shape != target.shape:
            raise ValueError(f"source {tuple(source.shape)} and target {tuple(target.shape)} differ")
        x = torch.stack([source, target], dim=1)
        skips = []
        for k, block in enumerate(self.encoder):
            if k > 0:
                x = F.max_pool2d(x, 2)
            x = block(x)
            skips.append(x)

        if self.config.bottleneck_dim is not None:
            if tuple(x.shape[1:]) != self._coarse_shape:
                raise ValueError(
                    f"bottleneck built for images of size {self.image_size}, "
                    f"got {tuple(source.shape[-2:])}"
                )
            z = self.squeeze(x.flatten(1))
            x = self.expand(z).reshape(x.shape)

        for i, block in enumerate(self.decoder):
            x = F.interpolate(x, scale_factor=2, mode="nearest")
            if self.config.skip_connections:
                x = torch.cat([x, skips[-2 - i]], dim=1)
            x = block(x)
        return self.head(x).permute(0, 2, 3, 1)


class CooperativeAutoencoder(nn.Module):
    def __init__(self, config: CAEConfig, image_size: int | tuple[int, int] = 64):
        super().__init__()
        self.config = config
        self.image_size = _pair(image_size)
        factor = 2**config.levels
        h, w = self.image_size
        if h % factor or w % factor:
            raise ValueError(f"image size {self.image_size} not divisible by {factor}")
        c = [config.base_channels * 2**k for k in range(config.levels)]
        layers = []
        cin = 2
        for ch in c:
            layers += [nn.Conv2d(cin, ch, 3, stride=2, padding=1), nn.LeakyReLU(LEAK)]
            cin = ch
        self.encoder = nn.Sequential(*layers)
        self._coarse_shape = (c[-1], h // factor, w // factor)
        n = c[-1] * (h // factor) * (w // factor)
        self.to_latent = nn.Linear(n, config.h)
        self.from_latent = nn.Linear(config.h, n)

        layers = [nn.LeakyReLU(LEAK)]
        for k in range(config.levels - 1, 0, -1):
            layers += [
                nn.ConvTranspose2d(c[k], c[k - 1], 4, stride=2, padding=1),
                nn.LeakyReLU(LEAK),
            ]
        layers.append(nn.ConvTranspose2d(c[0], 2, 4, stride=2, padding=1))
        self.decoder = nn.Sequential(*layers)

    def encode(self, field: torch.Tensor) -> torch.Tensor:
        if tuple(field.shape[-3:-1]) != self.image_size:
            raise ValueError(
                f"autoencoder built for fields of size {self.image_size}, "
                f"got {tuple(field.shape[-3:-1])}"
            )
        x = self.encoder(field.permute(0, 3, 1, 2))
        return self.to_latent(x.flatten(1))

    def decode(self, latent: torch.Tensor) -> torch.Tensor:
        x = self.from_latent(latent).reshape(latent.shape[0], *self._coarse_shape)
        return self.decoder(x).permute(0, 2, 3, 1)

    def forward(self, field: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """``(B, H, W, 2)`` field -> ``(B, h)`` latent, ``(B, H, W, 2)`` reconstruction."""
        latent = self.encode(field)
        return latent, self.decode(latent)


def _pair(size):
    if isinstance(size, int):
        return (size, size)
    return tuple(int(s) for s in size)


def check_divisible(shape, factor: int) -> None:
    if any(s % factor for s in shape):
        raise ValueError(f"image shape {tuple(shape)} must be divisible by {factor}")


def init_primary(config: PrimaryConfig, seed: int, image_size=64) -> PrimaryNet:
    """Build a primary network with seeded fan-in init and a zeroed output head.

    The zero head makes the untrained network return the identity warp.
    """
    net = PrimaryNet(config, image_size)
    gen = torch.Generator().manual_seed(seed)
    _fan_in_uniform_(net, gen)
    with torch.no_grad():
        net.head.weight.zero_()
        net.head.bias.zero_()
    return net


def init_cae(config: CAEConfig, seed: int, image_size=64) -> CooperativeAutoencoder:
    net = CooperativeAutoencoder(config, image_size)
    _fan_in_uniform_(net, torch.Generator().manual_seed(seed))
    return net


def _batched(x):
    x = torch.as_tensor(x)
    return x, x.ndim == 2


def primary_forward(net: PrimaryNet, source, target):
    """Field for one pair (``(H, W)`` inputs) or a batch (``(B, H, W)``).

    numpy in, numpy out; tensors stay on the graph.
    """
    as_numpy = not isinstance(source, torch.Tensor)
    dtype = next(net.parameters()).dtype
    src, single = _batched(source)
    tgt, _ = _batched(target)
    src = src.to(dtype)
    tgt = tgt.to(dtype)
    if single:
        src, tgt = src[None], tgt[None]
    if as_numpy:
        with torch.no_grad():
            out = net(src, tgt)
    else:
        out = net(src, tgt)
    if single:
        out = out[0]
    return out.numpy() if as_numpy else out


def cae_forward(net: CooperativeAutoencoder, field):
    """(latent, reconstruction) for one ``(H, W, 2)`` field or a batch."""
    as_numpy = not isinstance(field, torch.Tensor)
    dtype = next(net.parameters()).dtype
    phi = torch.as_tensor(field).to(dtype)
    single = phi.ndim == 3
    if single:
        phi = phi[None]
    check_divisible(phi.shape[-3:-1], 2**net.config.levels)
    if as_numpy:
        with torch.no_grad():
            latent, recon = net(phi)
    else:
        latent, recon = net(phi)
    if single:
        latent, recon = latent[0], recon[0]
    if as_numpy:
        return latent.numpy(), recon.numpy()
    return latent, recon


def count_parameters(net: nn.Module) -> int:
    return sum(p.numel() for p in net.parameters())
