"""Training objectives and delayed linear ramps.

Every term is nonnegative and exactly zero on a perfect prediction.  State
tensors are ``(B, N)``; scalars are averaged over the batch.
"""

from dataclasses import dataclass

import torch

from .errors import InvalidConfigError
from .latents import encode_level
from .spectral import BandSpec

EPS_AMP = 1e-6
EPS_PHASE = 1e-6
EPS_BAND = 1e-12
EPS_REL = 1e-8


@dataclass(frozen=True)
class RampSpec:
    start: float = 0.0
    duration: float = 0.0
    v_max: float = 1.0


def ramp(epoch, spec: RampSpec):
    """``v_max * clip((e - e0) / d, 0, 1)``; ``d = 0`` is a step at ``e0``."""
    if spec.duration <= 0:
        return spec.v_max if epoch >= spec.start else 0.0
    frac = (epoch - spec.start) / spec.duration
    return spec.v_max * min(max(frac, 0.0), 1.0)


@dataclass
class LossWeights:
    state: float = 1.0
    spec: float = 0.1
    prior: float = 0.1
    energy: float = 0.05
    hidden: float = 1e-3
    tail: float = 0.5
    kstep: float = 0.1

    def __post_init__(self):
        if any(v < 0 for v in vars(self).values()):
            raise InvalidConfigError("loss weights must be nonnegative")


def state_mse(u_hat, u):
    return ((u_hat - u) ** 2).mean()


def _packed_slice(u, K, scale, include_dc):
    U = torch.fft.rfft(u, dim=-1)[..., :K] * scale
    if not include_dc:
        U = torch.cat([torch.zeros_like(U[..., :1]), U[..., 1:]], dim=-1)
    return torch.cat([U.real, U.imag], dim=-1)


def low_k_spectral_loss(u_hat, u, K, variant="absolute", include_dc=True, scale=1.0):
    """Mean squared mismatch of the packed low-``K`` rFFT slice.

    ``relative`` divides each sample's MSE by the squared norm of its true
    slice.  ``scale`` multiplies the coefficients before comparison.
    """
    a = _packed_slice(u_hat, K, scale, include_dc)
    b = _packed_slice(u, K, scale, include_dc)
    mse = ((a - b) ** 2).mean(-1)
    if variant == "relative":
        mse = mse / ((b * b).sum(-1) + EPS_REL)
    elif variant != "absolute":
        raise InvalidConfigError(f"unknown spectral loss variant {variant!r}")
    return mse.mean()


def _polar_terms(z_hat, z_star, w_amp, w_phase):
    # DC is skipped: a zero-mean field has no defined phase or log-amplitude there
    k = z_hat.shape[-1] // 2
    xh, yh = z_hat[..., 1:k], z_hat[..., k + 1 :]
    xs, ys = z_star[..., 1:k], z_star[..., k + 1 :]
    rh2, rs2 = xh * xh + yh * yh, xs * xs + ys * ys
    amp = 0.5 * (torch.log(rh2 + EPS_AMP**2) - torch.log(rs2 + EPS_AMP**2))
    cos = (xh * xs + yh * ys + EPS_PHASE**2) / torch.sqrt((rh2 + EPS_PHASE**2) * (rs2 + EPS_PHASE**2))
    return (w_amp * amp**2 + w_phase * (1.0 - cos)).mean()


def prior_match_loss(z_prior, u_next, specs, system="l96", w_amp=1.0, w_phase=(1.0, 2.0)):
    """Prior latents against the encodings of the true next state, summed over levels.

    ``l96``: latent MSE.  ``ks``: squared log-amplitude error plus weighted
    ``1 - cos`` phase error per non-DC complex mode.  Targets carry no gradient.
    """
    total = 0.0
    for lvl, (zp, spec) in enumerate(zip(z_prior, specs)):
        target = encode_level(u_next, spec).detach()
        if system == "ks":
            total = total + _polar_terms(zp, target, w_amp, w_phase[lvl])
        else:
            total = total + ((zp - target) ** 2).mean()
    return total


def band_energy_loss(u_hat, u, bands: BandSpec, weights=None):
    """``sum_b w_b log(E_b(u_hat) / E_b(u))^2`` with energies floored at 1e-12."""
    bands = bands.clipped(u.shape[-1])
    w = bands.weights if weights is None else weights
    if w is None:
        w = [1.0] * len(bands.bands)
    ph = torch.fft.rfft(u_hat, dim=-1).abs() ** 2
    pt = torch.fft.rfft(u, dim=-1).abs() ** 2
    total = 0.0
    for wb, (a, b) in zip(w, bands.bands):
        eh = torch.clamp(ph[..., a:b].sum(-1), min=EPS_BAND)
        et = torch.clamp(pt[..., a:b].sum(-1), min=EPS_BAND)
        total = total + wb * (torch.log(eh / et) ** 2).mean()
    return total


def hidden_drift_loss(h_prev, h_next, off_stride, gamma):
    """``gamma * sum_l 1{off-stride} ||h_next - h_prev||^2`` (squared norm per sample, batch mean)."""
    total = 0.0
    for hp, hn, off in zip(h_prev, h_next, off_stride):
        if off:
            total = total + ((hn - hp) ** 2).sum(-1).mean()
    return gamma * total


def tail_weighted_state_loss(step_errors):
    """``sum_k (k / L_tail) e_k`` for per-step errors ``e_1..e_L`` (no renormalization)."""
    n = len(step_errors)
    if n == 0:
        return torch.zeros(())
    return sum((k / n) * e for k, e in enumerate(step_errors, start=1))


def k_step_rollout_loss(step_fn, u_end, state, continuation, mask=None):
    """Closed-loop ``K``-step state MSE averaged over the steps.

    ``step_fn(u, state) -> (u_next, state)``; ``continuation`` is ``(B, K, N)``
    truth.  ``mask`` (``B`` booleans) drops samples lacking a continuation.
    Returns ``(loss, skipped)`` where ``skipped`` says no sample contributed.
    """
    K = continuation.shape[1]
    if K == 0:
        return torch.zeros((), dtype=u_end.dtype), False
    if mask is not None and not bool(mask.any()):
        return torch.zeros((), dtype=u_end.dtype), True
    u, errs = u_end, []
    for k in range(K):
        u, state = step_fn(u, state)
        err = ((u - continuation[:, k]) ** 2).mean(-1)
        errs.append(err)
    err = torch.stack(errs, dim=-1).mean(-1)
    if mask is not None:
        m = mask.to(err.dtype)
        return (err * m).sum() / m.sum(), False
    return err.mean(), False


def assemble_window_loss(terms, weights):
    """Weighted sum of named term totals; returns ``(total, breakdown)``.

    ``terms`` maps a weight name (``LossWeights`` field) to its value,
    already summed over the window steps.
    """
    w = vars(weights) if not isinstance(weights, dict) else weights
    total = 0.0
    breakdown = {}
    for name, value in terms.items():
        total = total + w[name] * value
        breakdown[name] = float(value)
    return total, breakdown
