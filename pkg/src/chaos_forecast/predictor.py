"""Periodic 1D U-Net state predictor, gated latent fusion, and the composed MSR-HINE step."""

import math
from dataclasses import dataclass, field

import torch
import torch.nn.functional as F
from torch import nn

from .errors import InvalidCallError, InvalidConfigError
from .latents import FeatureCache, KsConditioner, L96Conditioner, encode_hierarchy, make_level_specs
from .recurrence import HiddenCoupler, LevelRnn, MultiRateSpec, hidden_correct, init_states, multirate_advance
from .spectral import BandSpec


def periodic_conv(x, weight, bias=None, stride=1):
    """Conv1d over the last axis with circular padding ``(k-1)/2`` on both sides."""
    k = weight.shape[-1]
    if k % 2 == 0:
        raise InvalidConfigError(f"periodic conv needs an odd kernel, got {k}")
    p = (k - 1) // 2
    if p:
        x = torch.cat([x[..., -p:], x, x[..., :p]], dim=-1)
    return F.conv1d(x, weight, bias, stride=stride)


class PeriodicConv1d(nn.Conv1d):
    def __init__(self, c_in, c_out, kernel_size=3, stride=1, bias=True):
        if kernel_size % 2 == 0:
            raise InvalidConfigError(f"periodic conv needs an odd kernel, got {kernel_size}")
        super().__init__(c_in, c_out, kernel_size, stride=stride, padding=0, bias=bias)

    def forward(self, x):
        return periodic_conv(x, self.weight, self.bias, self.stride[0])


class ResBlock(nn.Module):
    def __init__(self, c, k=3):
        super().__init__()
        self.conv1 = PeriodicConv1d(c, c, k)
        self.conv2 = PeriodicConv1d(c, c, k)

    def forward(self, x):
        return F.gelu(self.conv2(F.gelu(self.conv1(x))) + x)


class Stage(nn.Module):
    """Periodic conv (optionally strided or preceded by 2x upsampling) then a residual block."""

    def __init__(self, c_in, c_out, k=3, stride=1, upsample=False):
        super().__init__()
        self.upsample = upsample
        self.conv = PeriodicConv1d(c_in, c_out, k, stride=stride)
        self.res = ResBlock(c_out, k)

    def forward(self, x):
        if self.upsample:
            x = torch.repeat_interleave(x, 2, dim=-1)
        return self.res(self.conv(x))


class InjectionMlp(nn.Sequential):
    def __init__(self, d_in, width):
        super().__init__(nn.Linear(d_in, width), nn.SiLU(), nn.Linear(width, width))


@dataclass
class UNetConfig:
    n_phys: int
    width: int = 32
    kernel: int = 3
    inj_dims: tuple = (0, 0)
    u_scale: float = 0.5
    mode: str = "residual"  # "residual" | "direct"
    downsample: bool = False

    def __post_init__(self):
        if self.kernel % 2 == 0:
            raise InvalidConfigError("kernel size must be odd")
        if self.mode not in ("residual", "direct"):
            raise InvalidConfigError(f"unknown predictor mode {self.mode!r}")
        if self.downsample and self.n_phys % 4:
            raise InvalidConfigError("downsampling needs N divisible by 4")
        if self.u_scale < 0:
            raise InvalidConfigError("u_scale must be nonnegative")


class UNet1d(nn.Module):
    """Three encoder stages (b, 2b, 4b), two decoder stages with additive skips, periodic head."""

    def __init__(self, cfg: UNetConfig):
        super().__init__()
        self.cfg = cfg
        b, k, ds = cfg.width, cfg.kernel, cfg.downsample
        s = 2 if ds else 1
        self.e1 = Stage(1, b, k)
        self.e2 = Stage(b, 2 * b, k, stride=s)
        self.e3 = Stage(2 * b, 4 * b, k, stride=s)
        self.d2 = Stage(4 * b, 2 * b, k, upsample=ds)
        self.d1 = Stage(2 * b, b, k, upsample=ds)
        self.head = PeriodicConv1d(b, 1, 3)
        d1, d2 = cfg.inj_dims
        self.inj1 = InjectionMlp(d1, 2 * b) if d1 else None
        self.inj2 = InjectionMlp(d2, 4 * b) if d2 else None

    def forward(self, u, inj1=None, inj2=None, return_coarse=False):
        if u.shape[-1] != self.cfg.n_phys:
            raise InvalidConfigError(f"predictor built for N={self.cfg.n_phys}, got {u.shape[-1]}")
        x1 = self.e1(u.unsqueeze(-2))
        x2 = self.e2(x1)
        x3 = self.e3(x2)
        x2 = x2 + self._inject(self.inj1, inj1, 0)
        x3 = x3 + self._inject(self.inj2, inj2, 1)
        y2 = self.d2(x3) + x2
        y1 = self.d1(y2) + x1
        out = self.head(y1).squeeze(-2)
        if self.cfg.mode == "residual":
            u_next = u + self.cfg.u_scale * torch.tanh(out)
        else:
            u_next = out
        return (u_next, x3) if return_coarse else u_next

    def _inject(self, mlp, z, idx):
        if mlp is None:
            if z is not None and z.shape[-1]:
                raise InvalidConfigError(f"injection {idx + 1} not configured")
            return 0.0
        if z is None or z.shape[-1] != self.cfg.inj_dims[idx]:
            got = None if z is None else z.shape[-1]
            raise InvalidConfigError(f"injection {idx + 1} expects dim {self.cfg.inj_dims[idx]}, got {got}")
        return mlp(z).unsqueeze(-1)


def unet_forward(unet: UNet1d, u, inj1=None, inj2=None):
    return unet(u, inj1, inj2)


class FusionGate(nn.Module):
    def __init__(self, latent_dim, p0=0.9):
        super().__init__()
        self.lin = nn.Linear(2 * latent_dim, latent_dim)
        with torch.no_grad():
            self.lin.weight.zero_()
            self.lin.bias.fill_(math.log(p0 / (1 - p0)))


def gated_fuse(gate: FusionGate, z_prior, z_post):
    g = torch.sigmoid(gate.lin(torch.cat([z_prior, z_post], dim=-1)))
    return g * z_post + (1 - g) * z_prior, g


@dataclass
class MsrHineConfig:
    system: str = "ks"
    n_phys: int = 128
    domain_len: float = 2 * math.pi * 16
    cutoffs: tuple = (16, 4)
    latent_scale: float = None  # None -> 1/N
    strides: tuple = (1, 4)
    policy: str = "ema"
    d_hid: tuple = (64, 64)
    d_in: tuple = (32, 32)
    n_pool: int = 8
    lowk_modes: int = None  # None -> coarsest cutoff
    width: int = 32
    kernel: int = 3
    u_scale: float = 0.5
    p0: float = 0.9
    alpha_corr: float = 0.1
    mode: str = "residual"
    downsample: bool = False
    bands: tuple = ((1, 4), (4, 8), (8, 16), (16, 32))

    def __post_init__(self):
        if self.system not in ("ks", "l96"):
            raise InvalidConfigError(f"unknown system {self.system!r}")
        self.cutoffs, self.strides = tuple(self.cutoffs), tuple(self.strides)
        self.d_hid, self.d_in = tuple(self.d_hid), tuple(self.d_in)
        if not len(self.cutoffs) == len(self.strides) == len(self.d_hid) == len(self.d_in) == 2:
            raise InvalidConfigError("MSR-HINE is configured with exactly two latent levels")
        if self.latent_scale is None:
            self.latent_scale = 1.0 / self.n_phys
        if self.lowk_modes is None:
            self.lowk_modes = self.cutoffs[-1]


@dataclass
class HineStepState:
    hidden: list
    fused: list
    cache: FeatureCache = field(default_factory=FeatureCache)
    t: int = 0
    posterior_source: str = "truth"


class MsrHine(nn.Module):
    def __init__(self, cfg: MsrHineConfig):
        super().__init__()
        self.cfg = cfg
        self.specs = make_level_specs(cfg.cutoffs, cfg.n_phys, cfg.latent_scale)
        lat = [s.latent_dim for s in self.specs]
        if cfg.system == "ks":
            self.conditioner = KsConditioner(
                cfg.n_phys, cfg.domain_len, lat[1], cfg.n_pool, cfg.lowk_modes, *cfg.d_in
            )
        else:
            self.conditioner = L96Conditioner(
                cfg.n_phys, lat[1], cfg.n_pool, cfg.lowk_modes, BandSpec(cfg.bands), *cfg.d_in
            )
        self.rnns = nn.ModuleList(LevelRnn(cfg.d_in[i], cfg.d_hid[i], lat[i]) for i in range(2))
        self.rates = [MultiRateSpec(s, cfg.policy) for s in cfg.strides]
        self.gates = nn.ModuleList(FusionGate(d, cfg.p0) for d in lat)
        self.couplers = nn.ModuleList(HiddenCoupler(lat[i], cfg.d_hid[i], cfg.alpha_corr) for i in range(2))
        self.unet = UNet1d(
            UNetConfig(
                cfg.n_phys,
                cfg.width,
                cfg.kernel,
                (lat[0] + cfg.d_hid[0], lat[1] + cfg.d_hid[1]),
                cfg.u_scale,
                cfg.mode,
                cfg.downsample,
            )
        )

    def encode(self, u):
        return encode_hierarchy(u, self.specs)

    def init_state(self, u0):
        batch = u0.shape[0]
        return HineStepState(init_states(self.cfg.d_hid, batch, u0.dtype), self.encode(u0), FeatureCache(), 0)

    def step(self, u_t, state, u_truth_next=None):
        return msr_step(self, u_t, state, u_truth_next)


def msr_step(model: MsrHine, u_t, state: HineStepState, u_truth_next=None, teacher_forced=None):
    """One predict-correct step; returns ``(u_hat_next, new_state, aux)``.

    Order: conditioners -> multirate advance per level -> U-Net with
    ``[z_prior; LayerNorm(h)]`` injections -> posterior encoding (truth if
    given, else the prediction) -> gated fusion -> hidden correction.
    """
    if teacher_forced is None:
        teacher_forced = u_truth_next is not None
    if teacher_forced and u_truth_next is None:
        raise InvalidCallError("teacher-forced posterior requested without the next true state")

    c = model.conditioner(u_t, state.fused[1], state.cache)
    h_next, z_prior, aligned = [], [], []
    for lvl in range(2):
        h, z, a = multirate_advance(state.t, model.rates[lvl], model.rnns[lvl], state.hidden[lvl], c[lvl])
        h_next.append(h)
        z_prior.append(z)
        aligned.append(a)
    inj = [torch.cat([z_prior[i], F.layer_norm(h_next[i], h_next[i].shape[-1:])], dim=-1) for i in range(2)]
    u_hat = model.unet(u_t, inj[0], inj[1])

    u_post = u_truth_next if teacher_forced else u_hat
    z_post = model.encode(u_post)
    z_fused, gates, h_corr = [], [], []
    for lvl in range(2):
        zf, g = gated_fuse(model.gates[lvl], z_prior[lvl], z_post[lvl])
        z_fused.append(zf)
        gates.append(g)
        h_corr.append(hidden_correct(model.couplers[lvl], h_next[lvl], zf, z_prior[lvl]))

    new_state = HineStepState(h_corr, z_fused, state.cache, state.t + 1, "truth" if teacher_forced else "prediction")
    aux = {
        "z_prior": z_prior,
        "z_post": z_post,
        "z_fused": z_fused,
        "gate": gates,
        "h_prev": state.hidden,
        "h_next": h_next,
        "h_corrected": h_corr,
        "aligned": aligned,
        "off_stride": [not a for a in aligned],
    }
    return u_hat, new_state, aux
