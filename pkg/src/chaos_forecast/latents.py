"""Spectral latent hierarchy and per-level conditioning features.

Latents are low-wavenumber rFFT slices packed as ``[Re(U[0:K]); Im(U[0:K])]``.
Conditioners turn the current state (plus a cache of last-step statistics)
into the fixed-size vectors that drive each level's recurrent prior.
"""

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .errors import InvalidConfigError
from .spectral import BandSpec


@dataclass(frozen=True)
class LatentLevelSpec:
    level: int
    cutoff: int
    scale: float = 1.0  # multiplies the packed coefficients; 1.0 keeps raw rFFT units

    @property
    def latent_dim(self):
        return 2 * self.cutoff


def make_level_specs(cutoffs, n_phys, scale=1.0):
    specs = [LatentLevelSpec(i + 1, int(k), scale) for i, k in enumerate(cutoffs)]
    for a, b in zip(specs, specs[1:]):
        if b.cutoff >= a.cutoff:
            raise InvalidConfigError("latent cutoffs must decrease with level")
    if specs[0].cutoff > n_phys // 2 + 1:
        raise InvalidConfigError(f"cutoff {specs[0].cutoff} exceeds N/2+1 for N={n_phys}")
    return specs


def encode_level(u, spec: LatentLevelSpec):
    """Pack the first ``spec.cutoff`` rFFT coefficients of ``u`` (last axis) into reals."""
    u = torch.as_tensor(u)
    if spec.cutoff > u.shape[-1] // 2 + 1:
        raise InvalidConfigError("cutoff exceeds the number of rFFT modes")
    U = torch.fft.rfft(u, dim=-1)[..., : spec.cutoff]
    z = torch.cat([U.real, U.imag], dim=-1)
    return z * spec.scale if spec.scale != 1.0 else z


def encode_hierarchy(u, specs):
    return [encode_level(u, s) for s in specs]


def coarse_from_fine(z_fine, fine: LatentLevelSpec, coarse: LatentLevelSpec):
    """Slice a coarse latent out of a finer one (same field, same scale)."""
    k1, k2 = fine.cutoff, coarse.cutoff
    return torch.cat([z_fine[..., :k2], z_fine[..., k1 : k1 + k2]], dim=-1) * (coarse.scale / fine.scale)


class FeatureCache:
    """Previous-step statistics for temporal increments; one per rollout stream."""

    def __init__(self):
        self.prev = {}

    def clear(self):
        self.prev.clear()

    def delta(self, name, value):
        last = self.prev.get(name)
        self.prev[name] = value
        return torch.zeros_like(value) if last is None else value - last


def derivative_norms(u, orders, domain_len):
    n = u.shape[-1]
    U = torch.fft.rfft(u, dim=-1)
    k = torch.as_tensor(2 * np.pi * np.arange(n // 2 + 1) / domain_len, dtype=u.dtype)
    out = []
    for m in orders:
        d = torch.fft.irfft(((1j * k) ** m) * U, n=n, dim=-1)
        out.append(torch.sqrt((d * d).sum(-1) + 1e-30))
    return torch.stack(out, dim=-1)


def pooled_means(u, n_groups):
    n = u.shape[-1]
    if n % n_groups:
        raise InvalidConfigError(f"{n_groups} pooling groups do not divide N={n}")
    return u.reshape(u.shape[:-1] + (n_groups, n // n_groups)).mean(-1)


def band_energies_t(u, bands: BandSpec):
    power = torch.fft.rfft(u, dim=-1).abs() ** 2
    return torch.stack([power[..., a:b].sum(-1) for a, b in bands.bands], dim=-1)


class KsConditioner(nn.Module):
    """Mid level: pooled bins and their increments plus a top-down map of z^(2).
    Coarse level: scaled low-k slice, ||d2u||, ||d4u|| and their increments."""

    def __init__(self, n_phys, domain_len, coarse_latent_dim, n_bins=8, lowk_modes=4, d_mid=32, d_coarse=32):
        super().__init__()
        self.n_phys, self.domain_len = n_phys, domain_len
        self.n_bins, self.lowk = n_bins, LatentLevelSpec(0, lowk_modes, 1.0 / n_phys)
        self.proj_mid = nn.Linear(2 * n_bins, d_mid)
        self.top_down = nn.Linear(coarse_latent_dim, d_mid, bias=False)
        self.proj_coarse = nn.Linear(2 * lowk_modes + 4, d_coarse)
        self.dims = (d_mid, d_coarse)

    def raw_features(self, u, cache: FeatureCache):
        p = pooled_means(u, self.n_bins)
        mid = torch.cat([p, cache.delta("pool", p)], dim=-1)
        norms = derivative_norms(u, (2, 4), self.domain_len)
        coarse = torch.cat([encode_level(u, self.lowk), norms, cache.delta("dnorm", norms)], dim=-1)
        return mid, coarse

    def forward(self, u, z_coarse, cache: FeatureCache):
        mid, coarse = self.raw_features(u, cache)
        return self.proj_mid(mid) + self.top_down(z_coarse), self.proj_coarse(coarse)


class L96Conditioner(nn.Module):
    """Mid level: ring group means, z^(2) and increments.  Coarse level: scaled
    low-k slice, global mean/std, band energies, total energy, and increments."""

    def __init__(self, n_phys, coarse_latent_dim, n_groups=8, lowk_modes=3, bands=None, d_mid=32, d_coarse=32):
        super().__init__()
        self.n_phys, self.n_groups = n_phys, n_groups
        self.lowk = LatentLevelSpec(0, lowk_modes, 1.0 / n_phys)
        self.bands = (bands or BandSpec()).clipped(n_phys)
        nb = len(self.bands.bands)
        self.energy_scale = 1.0 / n_phys**2
        self.proj_mid = nn.Linear(2 * n_groups + coarse_latent_dim, d_mid)
        self.proj_coarse = nn.Linear(2 * lowk_modes + 4 + 2 * nb + 2, d_coarse)
        self.dims = (d_mid, d_coarse)

    def raw_features(self, u, z_coarse, cache: FeatureCache):
        p = pooled_means(u, self.n_groups)
        mid = torch.cat([p, z_coarse, cache.delta("pool", p)], dim=-1)
        mean = u.mean(-1, keepdim=True)
        std = torch.sqrt(((u - mean) ** 2).mean(-1, keepdim=True) + 1e-12)
        moments = torch.cat([mean, std], dim=-1)
        e = band_energies_t(u, self.bands) * self.energy_scale
        total = (torch.fft.rfft(u, dim=-1)[..., 1:].abs() ** 2).sum(-1, keepdim=True) * self.energy_scale
        coarse = torch.cat(
            [
                encode_level(u, self.lowk),
                moments,
                cache.delta("moments", moments),
                e,
                cache.delta("bands", e),
                total,
                cache.delta("total", total),
            ],
            dim=-1,
        )
        return mid, coarse

    def forward(self, u, z_coarse, cache: FeatureCache):
        mid, coarse = self.raw_features(u, z_coarse, cache)
        return self.proj_mid(mid), self.proj_coarse(coarse)
