"""Comparison models: a plain residual U-Net and a two-level latent-conditioned HINE variant."""

from dataclasses import dataclass

import torch
from torch import nn

from .latents import encode_level, make_level_specs
from .predictor import UNet1d, UNetConfig


@dataclass
class UNetArConfig:
    n_phys: int = 128
    width: int = 32
    kernel: int = 3
    u_scale: float = 0.5
    mode: str = "residual"
    downsample: bool = False


class UNetAr(nn.Module):
    def __init__(self, cfg: UNetArConfig):
        super().__init__()
        self.cfg = cfg
        self.unet = UNet1d(UNetConfig(cfg.n_phys, cfg.width, cfg.kernel, (0, 0), cfg.u_scale, cfg.mode, cfg.downsample))

    def forward(self, u):
        return self.unet(u)


def unet_ar_step(model: UNetAr, u_t):
    return model.unet(u_t)


@dataclass
class HineL2Config:
    n_phys: int = 128
    cutoff: int = 16
    latent_scale: float = None  # None -> 1/N
    width: int = 32
    kernel: int = 3
    u_scale: float = 0.5
    mode: str = "residual"
    downsample: bool = False

    def __post_init__(self):
        if self.latent_scale is None:
            self.latent_scale = 1.0 / self.n_phys


class HineL2(nn.Module):
    """U-Net conditioned on the next-step latent at width 2b, plus a head
    predicting the latent one step further ahead from pooled coarse features."""

    def __init__(self, cfg: HineL2Config):
        super().__init__()
        self.cfg = cfg
        (self.spec,) = make_level_specs((cfg.cutoff,), cfg.n_phys, cfg.latent_scale)
        d = self.spec.latent_dim
        self.unet = UNet1d(UNetConfig(cfg.n_phys, cfg.width, cfg.kernel, (d, 0), cfg.u_scale, cfg.mode, cfg.downsample))
        self.latent_head = nn.Linear(4 * cfg.width, d)

    def encode(self, u):
        return encode_level(u, self.spec)


def hine_l2_step(model: HineL2, u_n, z_next):
    """Returns ``(u_hat_{n+1}, z_hat_{n+2})``.

    ``z_next`` is the encoding of the true ``u_{n+1}`` in training and the
    previous step's ``z_hat`` in closed loop.
    """
    u_hat, x3 = model.unet(u_n, z_next, None, return_coarse=True)
    return u_hat, model.latent_head(x3.mean(-1))


def count_parameters(model):
    return sum(p.numel() for p in model.parameters() if p.requires_grad)


def parity_width(target, build, lo=2, hi=256):
    """Width ``w`` whose ``count_parameters(build(w))`` is closest to ``target``.

    Parameter count grows monotonically with width, so a bisection suffices.
    """
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if count_parameters(build(mid)) < target:
            lo = mid
        else:
            hi = mid
    return min((lo, hi), key=lambda w: abs(count_parameters(build(w)) - target))
