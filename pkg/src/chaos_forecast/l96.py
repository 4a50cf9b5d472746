"""Lorenz-96 trajectories integrated with classical RK4 and resampled to a uniform grid."""

from dataclasses import asdict, dataclass

import numpy as np

from .datastore import TrajectoryBundle
from .errors import IntegratorDivergenceError, InvalidConfigError, InvalidInputError
from .ks import trajectory_rng


@dataclass
class L96Config:
    N: int = 40
    F: float = 8.0
    n_traj: int = 100
    n_saved: int = 1000
    t_vis: tuple = (0.0, 50.0)
    dt_int: float = 0.01
    alpha_pre: float = 0.05
    ic_sigma: float = 0.01
    seed: int = 0

    def __post_init__(self):
        self.t_vis = tuple(float(t) for t in self.t_vis)
        if self.dt_int <= 0:
            raise InvalidConfigError("dt_int must be positive")
        if self.n_saved < 2:
            raise InvalidConfigError("n_saved must be >= 2")
        if self.alpha_pre < 0:
            raise InvalidConfigError("alpha_pre must be nonnegative")
        if self.N < 4:
            raise InvalidConfigError("L96 needs N >= 4")
        if not self.t_vis[0] < self.t_vis[1]:
            raise InvalidConfigError("t_vis must be an increasing pair")

    @property
    def t_start(self):
        a, b = self.t_vis
        return a - self.alpha_pre * (b - a)

    @property
    def n_steps(self):
        return int(np.ceil((self.t_vis[1] - self.t_start) / self.dt_int - 1e-9))


def l96_rhs(x, F):
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] < 4:
        raise InvalidInputError("L96 stencil needs at least 4 variables")
    xp1 = np.roll(x, -1, axis=-1)
    xm1 = np.roll(x, 1, axis=-1)
    xm2 = np.roll(x, 2, axis=-1)
    return (xp1 - xm2) * xm1 - x + F


def rk4_step(x, dt, F):
    k1 = l96_rhs(x, F)
    k2 = l96_rhs(x + 0.5 * dt * k1, F)
    k3 = l96_rhs(x + 0.5 * dt * k2, F)
    k4 = l96_rhs(x + dt * k3, F)
    x_next = x + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
    if not np.all(np.isfinite(x_next)):
        raise IntegratorDivergenceError("L96 RK4 step produced non-finite values")
    return x_next


def l96_initial_condition(rng, N=40, F=8.0, sigma=0.01):
    return F + sigma * rng.standard_normal(N)


def resample_linear(times, states, targets):
    """Piecewise-linear interpolation of every column of ``states`` at ``targets``."""
    times = np.asarray(times, dtype=np.float64)
    states = np.asarray(states, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if targets.min() < times[0] or targets.max() > times[-1]:
        raise InvalidInputError("resample targets fall outside the sampled time range")
    idx = np.clip(np.searchsorted(times, targets, side="right") - 1, 0, len(times) - 2)
    w = (targets - times[idx]) / (times[idx + 1] - times[idx])
    w = w.reshape((-1,) + (1,) * (states.ndim - 1))
    return (1 - w) * states[idx] + w * states[idx + 1]


def integrate(x0, F, t_start, t_end, dt):
    """RK4 from ``t_start`` to exactly ``t_end``; the last step is shortened if needed.

    ``x0`` may carry leading batch dimensions.  Returns ``(times, states)`` with
    states of shape ``(n_steps + 1, *x0.shape)``.
    """
    n_steps = int(np.ceil((t_end - t_start) / dt - 1e-9))
    times = t_start + dt * np.arange(n_steps + 1)
    times[-1] = t_end
    states = np.empty((n_steps + 1,) + np.shape(x0))
    states[0] = x0
    x = np.asarray(x0, dtype=np.float64)
    for i in range(n_steps):
        h = times[i + 1] - times[i]
        try:
            x = rk4_step(x, h, F)
        except IntegratorDivergenceError as exc:
            bad = ~np.isfinite(np.atleast_2d(x + h * l96_rhs(x, F))).all(axis=-1)
            traj = int(np.flatnonzero(bad)[0]) if bad.any() else None
            raise IntegratorDivergenceError(str(exc), step_index=i + 1, trajectory_index=traj) from None
        states[i + 1] = x
    return times, states


def l96_generate(cfg: L96Config) -> TrajectoryBundle:
    x0 = np.stack(
        [l96_initial_condition(trajectory_rng(cfg.seed, i), cfg.N, cfg.F, cfg.ic_sigma) for i in range(cfg.n_traj)]
    )
    t0, t1 = cfg.t_vis
    times, states = integrate(x0, cfg.F, cfg.t_start, t1, cfg.dt_int)
    # snap grid points within rounding of the visible start onto it
    tol = 1e-9 * max(1.0, abs(t1 - cfg.t_start))
    times = np.where(np.abs(times - t0) < tol, t0, times)
    visible = times >= t0
    targets = np.linspace(t0, t1, cfg.n_saved)
    resampled = resample_linear(times[visible], states[visible], targets)
    data = np.ascontiguousarray(np.transpose(resampled, (1, 0, 2)))
    meta = {
        "system": "l96",
        "integrator": "rk4",
        "n_rk4_steps": cfg.n_steps,
        "t_int_start": cfg.t_start,
        "config": asdict(cfg),
        "seed": cfg.seed,
    }
    return TrajectoryBundle(data=data, times=targets, meta=meta)
