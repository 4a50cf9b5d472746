"""Per-level GRU priors with multi-rate scheduling and innovation-based hidden correction."""

from dataclasses import dataclass

import torch
from torch import nn

from .errors import InvalidConfigError


class LevelRnn(nn.Module):
    """GRU transition plus bounded readout ``z = exp(s) * tanh(A h + a)``."""

    def __init__(self, d_in, d_hid, latent_dim):
        super().__init__()
        self.d_in, self.d_hid, self.latent_dim = d_in, d_hid, latent_dim
        self.cell = nn.GRUCell(d_in, d_hid)
        self.readout = nn.Linear(d_hid, latent_dim)
        self.log_scale = nn.Parameter(torch.zeros(latent_dim))
        with torch.no_grad():
            for block in self.cell.weight_hh.chunk(3, dim=0):
                nn.init.orthogonal_(block)

    def read(self, h):
        return torch.exp(self.log_scale) * torch.tanh(self.readout(h))


def _check_dims(rnn, h, c):
    if c.shape[-1] != rnn.d_in or h.shape[-1] != rnn.d_hid:
        raise InvalidConfigError(
            f"LevelRnn expects c[{rnn.d_in}], h[{rnn.d_hid}]; got c[{c.shape[-1]}], h[{h.shape[-1]}]"
        )


def level_prior_step(rnn: LevelRnn, h, c):
    """Full GRU transition; returns ``(h_candidate, z_prior)`` read from the candidate."""
    _check_dims(rnn, h, c)
    h_tilde = rnn.cell(c, h)
    return h_tilde, rnn.read(h_tilde)


@dataclass(frozen=True)
class MultiRateSpec:
    stride: int = 1
    policy: str = "ema"  # "ema" | "hold"
    alpha: float = None  # defaults to 1/stride

    def __post_init__(self):
        if self.stride < 1:
            raise InvalidConfigError("stride must be >= 1")
        if self.policy not in ("ema", "hold"):
            raise InvalidConfigError(f"unknown off-stride policy {self.policy!r}")
        if self.alpha is None:
            object.__setattr__(self, "alpha", 1.0 / self.stride)
        if not 0 < self.alpha <= 1:
            raise InvalidConfigError("EMA coefficient must lie in (0, 1]")

    def aligned(self, t):
        return t % self.stride == 0


def multirate_advance(t, spec: MultiRateSpec, rnn: LevelRnn, h, c):
    """Advance one level at step ``t``; returns ``(h_next, z_prior, aligned)``.

    Aligned steps take the full GRU update.  Off-stride steps either hold the
    hidden state or blend toward the GRU candidate with weight ``spec.alpha``.
    The prior is always read from ``h_next``.
    """
    aligned = spec.aligned(t)
    if aligned:
        h_next, _ = level_prior_step(rnn, h, c)
    elif spec.policy == "hold":
        _check_dims(rnn, h, c)
        h_next = h
    else:
        h_tilde, _ = level_prior_step(rnn, h, c)
        h_next = (1 - spec.alpha) * h + spec.alpha * h_tilde
    return h_next, rnn.read(h_next), aligned


class HiddenCoupler(nn.Module):
    def __init__(self, latent_dim, d_hid, alpha_corr=0.1):
        super().__init__()
        if alpha_corr < 0:
            raise InvalidConfigError("alpha_corr must be nonnegative")
        self.psi = nn.Linear(latent_dim, d_hid, bias=False)
        self.alpha_corr = float(alpha_corr)


def hidden_correct(coupler: HiddenCoupler, h, z_fused, z_prior):
    """Nudge ``h`` along the mapped latent innovation ``z_fused - z_prior``."""
    if coupler.alpha_corr == 0:
        return h
    return h + coupler.alpha_corr * coupler.psi(z_fused - z_prior)


def init_states(hidden_dims, batch, dtype=None):
    return [torch.zeros(batch, d, dtype=dtype or torch.get_default_dtype()) for d in hidden_dims]
