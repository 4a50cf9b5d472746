"""Kuramoto-Sivashinsky trajectories with a pseudo-spectral IMEX-BDF2 scheme.

The PDE  u_t + u u_x + u_xx + u_xxxx = 0  is advanced in Fourier space as
    d u_hat/dt = -Lin(k) u_hat + Nl(u_hat),   Lin(k) = -k^2 + k^4,
    Nl(u_hat) = -(i k / 2) FFT[u^2]   (de-aliased),
with the stiff linear part implicit and the nonlinearity extrapolated.
"""

from dataclasses import asdict, dataclass

import numpy as np

from .datastore import TrajectoryBundle
from .errors import IntegratorDivergenceError, InvalidConfigError
from .spectral import Spectrum, dealiased_square, irfft, rfft, wavenumbers

DIVERGENCE_LIMIT = 1e8


@dataclass
class KsConfig:
    L_domain: float = 16.0
    N: int = 128
    dt: float = 0.10
    T_f: float = 200.0
    T_burn: float = 50.0
    n_traj: int = 1
    seed: int = 0
    dealias: str = "pad32"
    ic_max_abs: float = 2.0

    def __post_init__(self):
        if self.dt <= 0:
            raise InvalidConfigError("dt must be positive")
        if not self.T_burn < self.T_f:
            raise InvalidConfigError("T_burn must be smaller than T_f")
        if self.N % 2:
            raise InvalidConfigError("N must be even")
        if self.n_traj < 1:
            raise InvalidConfigError("n_traj must be positive")
        if self.dealias not in ("pad32", "mask23"):
            raise InvalidConfigError(f"unknown dealias option {self.dealias!r}")

    @property
    def domain_len(self):
        return 2 * np.pi * self.L_domain

    @property
    def n_steps(self):
        return _floor_ratio(self.T_f, self.dt)

    @property
    def n_burn(self):
        return _floor_ratio(self.T_burn, self.dt)

    @property
    def n_saved(self):
        return self.n_steps + 1 - self.n_burn


def _floor_ratio(a, b):
    # guard against 200/0.1 -> 1999.9999...
    return int(np.floor(a / b + 1e-9))


@dataclass
class KsStepperState:
    u_hat_prev: Spectrum
    u_hat_curr: Spectrum
    nonlin_prev: Spectrum
    step_index: int = 0


def ks_linear_symbol(k):
    k = np.asarray(k, dtype=np.float64)
    return -(k**2) + k**4


def ks_nonlinear(s: Spectrum, method="pad32"):
    k = wavenumbers(s.n_phys, s.domain_len)
    return s.replace(-0.5j * k * dealiased_square(s, method).coeffs)


def _zero_dc(c):
    c = c.copy()
    c[..., 0] = 0.0
    return c


def ks_bootstrap_step(u_hat0: Spectrum, dt, method="pad32", nonlinear=True):
    """Backward-Euler predictor then Crank-Nicolson corrector with midpoint nonlinearity.

    Returns ``(u_hat1, nonlin0)``.
    """
    k = wavenumbers(u_hat0.n_phys, u_hat0.domain_len)
    lin = ks_linear_symbol(k)
    c0 = u_hat0.coeffs
    if nonlinear:
        n0 = ks_nonlinear(u_hat0, method).coeffs
    else:
        n0 = np.zeros_like(c0)
    pred = (c0 + dt * n0) / (1.0 + dt * lin)
    if nonlinear:
        n_mid = ks_nonlinear(u_hat0.replace(0.5 * (c0 + pred)), method).coeffs
    else:
        n_mid = np.zeros_like(c0)
    c1 = (c0 * (1.0 - 0.5 * dt * lin) + dt * n_mid) / (1.0 + 0.5 * dt * lin)
    return u_hat0.replace(_zero_dc(c1)), u_hat0.replace(n0)


def ks_bdf2_step(state: KsStepperState, dt, method="pad32", nonlinear=True):
    cur, prev = state.u_hat_curr, state.u_hat_prev
    k = wavenumbers(cur.n_phys, cur.domain_len)
    lin = ks_linear_symbol(k)
    if nonlinear:
        n_cur = ks_nonlinear(cur, method).coeffs
    else:
        n_cur = np.zeros_like(cur.coeffs)
    num = 4.0 * cur.coeffs - prev.coeffs + 2.0 * dt * (2.0 * n_cur - state.nonlin_prev.coeffs)
    nxt = _zero_dc(num / (3.0 + 2.0 * dt * lin))
    step = state.step_index + 1
    _check_finite(nxt, step)
    return KsStepperState(cur, cur.replace(nxt), cur.replace(n_cur), step)


def _check_finite(c, step):
    bad = ~np.isfinite(c).all(axis=-1) | (np.abs(c).max(axis=-1) > DIVERGENCE_LIMIT)
    if np.any(bad):
        idx = int(np.flatnonzero(np.atleast_1d(bad))[0])
        raise IntegratorDivergenceError(
            f"KS integrator diverged at step {step} (trajectory {idx})",
            step_index=step,
            trajectory_index=idx,
        )


def ks_initial_condition(rng, N=128, L_domain=16.0, max_abs=2.0, amplitudes=None):
    """Smooth random field from the four lowest cos*(1+sin) modes, rescaled to ``max_abs``."""
    x = 2 * np.pi * L_domain * np.arange(N) / N
    while True:
        a = rng.uniform(0.0, 1.0, size=4) if amplitudes is None else np.asarray(amplitudes, float)
        j = np.arange(1, 5)[:, None]
        u0 = (a[:, None] * np.cos(j * x / L_domain) * (1 + np.sin(j * x / L_domain))).sum(axis=0)
        peak = np.max(np.abs(u0))
        if peak > 0:
            return u0 * (max_abs / peak)
        if amplitudes is not None:
            raise InvalidConfigError("all IC amplitudes are zero")


def trajectory_rng(seed, index):
    """Independent stream for trajectory ``index`` regardless of how many are generated."""
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(int(index),)))


def integrate(u0, cfg: KsConfig, n_steps=None, save_from=0, dt=None):
    """Integrate a batch of initial fields ``(S, N)``; returns saved states ``(S, n_keep, N)``."""
    dt = cfg.dt if dt is None else dt
    n_steps = cfg.n_steps if n_steps is None else n_steps
    u0 = np.atleast_2d(u0)
    s0 = rfft(u0, cfg.domain_len)
    s0 = s0.replace(_zero_dc(s0.coeffs))
    out = np.empty((u0.shape[0], n_steps + 1 - save_from, cfg.N))

    def keep(step, spec):
        if step >= save_from:
            out[:, step - save_from] = irfft(spec)

    keep(0, s0)
    if n_steps == 0:
        return out
    s1, n0 = ks_bootstrap_step(s0, dt, cfg.dealias)
    _check_finite(s1.coeffs, 1)
    keep(1, s1)
    state = KsStepperState(s0, s1, n0, step_index=1)
    for step in range(2, n_steps + 1):
        state = ks_bdf2_step(state, dt, cfg.dealias)
        keep(step, state.u_hat_curr)
    return out


def ks_generate(cfg: KsConfig) -> TrajectoryBundle:
    u0 = np.stack(
        [
            ks_initial_condition(trajectory_rng(cfg.seed, i), cfg.N, cfg.L_domain, cfg.ic_max_abs)
            for i in range(cfg.n_traj)
        ]
    )
    data = integrate(u0, cfg, save_from=cfg.n_burn)
    times = cfg.dt * np.arange(cfg.n_burn, cfg.n_steps + 1)
    meta = {
        "system": "ks",
        "integrator": "imex-bdf2 (backward-euler/crank-nicolson bootstrap)",
        "dealias": cfg.dealias,
        "burn_in": cfg.T_burn,
        "grid": {"N": cfg.N, "L_domain": cfg.L_domain, "domain_len": cfg.domain_len},
        "config": asdict(cfg),
        "seed": cfg.seed,
    }
    return TrajectoryBundle(data=data, times=times, start_state=data[:, 0].copy(), meta=meta)
