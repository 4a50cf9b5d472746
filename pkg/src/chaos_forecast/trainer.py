"""Windowed TBPTT training with scheduled sampling, a free tail, delayed ramps and checkpointing."""

import copy
import json
import math
import os
from dataclasses import asdict, dataclass, field

import numpy as np
import torch

from . import __version__
from .datastore import Normalizer, read_container, write_container
from .errors import InvalidConfigError, TrainingDivergedError
from .forecasters import build_forecaster, config_dict
from .losses import (
    LossWeights,
    RampSpec,
    band_energy_loss,
    hidden_drift_loss,
    k_step_rollout_loss,
    low_k_spectral_loss,
    prior_match_loss,
    ramp,
    state_mse,
    tail_weighted_state_loss,
)
from .spectral import BandSpec

THREADS_ENV = "CHAOS_FORECAST_THREADS"


def configure_threads():
    n = os.environ.get(THREADS_ENV)
    if n:
        torch.set_num_threads(max(1, int(n)))


@dataclass
class TrainConfig:
    epochs: int = 80
    L: int = 32
    batch_size: int = 16
    lr: float = 1e-3
    weight_decay: float = 1e-4
    clip: float = 0.7
    schedule: str = "plateau"  # "plateau" | "cosine"
    patience: int = 6
    factor: float = 0.5
    lr_min: float = 1e-5
    p_ss: RampSpec = field(default_factory=lambda: RampSpec(30, 45, 0.5))
    tail: RampSpec = field(default_factory=lambda: RampSpec(35, 45, 0.6))
    tail_unit: str = "fraction"  # "fraction" of L | "steps"
    energy: RampSpec = field(default_factory=lambda: RampSpec(20, 30, 0.05))
    kstep: RampSpec = field(default_factory=lambda: RampSpec(18, 20, 8))
    val_tail: RampSpec = field(default_factory=lambda: RampSpec(5, 30, 0.8))
    weights: LossWeights = field(default_factory=LossWeights)
    spectral_variant: str = "relative"
    spectral_dc: bool = False
    spectral_cutoff: int = 16
    prior_system: str = "ks"  # selects the prior-matching variant
    bands: tuple = ((1, 4), (4, 8), (8, 16), (16, 32))
    window_stride: int = 1
    max_batches: int = None  # per epoch; None = all windows
    val_stride: int = 1
    max_val_windows: int = None
    max_skip_rate: float = 0.01
    seed: int = 0

    def __post_init__(self):
        for name in ("p_ss", "tail", "energy", "kstep", "val_tail"):
            v = getattr(self, name)
            if isinstance(v, (dict, list, tuple)):
                setattr(self, name, RampSpec(**v) if isinstance(v, dict) else RampSpec(*v))
        if isinstance(self.weights, dict):
            self.weights = LossWeights(**self.weights)
        self.bands = tuple(tuple(b) for b in self.bands)
        if self.schedule not in ("plateau", "cosine"):
            raise InvalidConfigError(f"unknown lr schedule {self.schedule!r}")
        if self.tail_unit not in ("fraction", "steps"):
            raise InvalidConfigError(f"unknown tail unit {self.tail_unit!r}")
        if self.L < 1 or self.batch_size < 1 or self.epochs < 0:
            raise InvalidConfigError("L, batch_size must be positive and epochs nonnegative")
        if not 0 <= self.p_ss.v_max <= 1:
            raise InvalidConfigError("scheduled-sampling probability must lie in [0, 1]")
        if self.tail_unit == "fraction" and not 0 <= self.tail.v_max < 1:
            raise InvalidConfigError("tail fraction must lie in [0, 1)")

    def to_dict(self):
        return json.loads(json.dumps(asdict(self)))


@dataclass
class Schedule:
    """Ramp values in force during one epoch."""

    epoch: int
    p_ss: float
    tail: float
    energy: float
    kstep: float
    val_tail: float

    def tail_steps(self, L, unit, validation=False):
        v = self.val_tail if validation else self.tail
        if unit == "steps" and not validation:
            return min(int(math.floor(v + 1e-9)), L - 1) if v > 0 else 0
        return min(int(math.floor(v * L + 1e-9)), L)

    @property
    def k_steps(self):
        return int(math.floor(self.kstep + 1e-9))


def schedule_at(cfg: TrainConfig, epoch):
    return Schedule(
        epoch,
        ramp(epoch, cfg.p_ss),
        ramp(epoch, cfg.tail),
        ramp(epoch, cfg.energy),
        ramp(epoch, cfg.kstep),
        ramp(epoch, cfg.val_tail),
    )


def scheduled_sampling_decision(gen: torch.Generator, p_ss, batch):
    """Per-sample Bernoulli(p_ss): True feeds back the prediction, False the truth."""
    if p_ss <= 0:
        return torch.zeros(batch, dtype=torch.bool)
    if p_ss >= 1:
        return torch.ones(batch, dtype=torch.bool)
    return torch.rand(batch, generator=gen) < p_ss


class PlateauSchedule:
    """Multiply the rate by ``factor`` after ``patience`` consecutive epochs without a new best."""

    def __init__(self, lr, patience=6, factor=0.5, lr_min=1e-5):
        self.lr, self.patience, self.factor, self.lr_min = lr, patience, factor, lr_min
        self.best, self.bad = math.inf, 0

    def update(self, val_loss):
        if val_loss < self.best:
            self.best, self.bad = val_loss, 0
        else:
            self.bad += 1
            if self.bad >= self.patience:
                self.lr = max(self.lr * self.factor, self.lr_min)
                self.bad = 0
        return self.lr

    def state(self):
        return {"lr": self.lr, "best": self.best if math.isfinite(self.best) else None, "bad": self.bad}

    def load(self, d):
        self.lr, self.bad = d["lr"], d["bad"]
        self.best = math.inf if d["best"] is None else d["best"]


def cosine_lr(lr0, epoch, epochs, lr_min=0.0):
    return lr_min + (lr0 - lr_min) * (1 + math.cos(math.pi * epoch / max(epochs, 1))) / 2


def update_lr(cfg: TrainConfig, plateau: PlateauSchedule, epoch, val_loss=None):
    """Learning rate for ``epoch``: cosine by formula, plateau from the last validation loss."""
    if cfg.schedule == "cosine":
        return cosine_lr(cfg.lr, epoch, cfg.epochs)
    if val_loss is not None:
        return plateau.update(val_loss)
    return plateau.lr


def _step_terms(fc, cfg: TrainConfig, u_hat, aux, truth_next, truth_next2, bands):
    n = truth_next.shape[-1]
    terms = {
        "state": state_mse(u_hat, truth_next),
        "spec": low_k_spectral_loss(
            u_hat, truth_next, cfg.spectral_cutoff, cfg.spectral_variant, cfg.spectral_dc, 1.0 / n
        ),
        "energy": band_energy_loss(u_hat, truth_next, bands),
    }
    if fc.kind == "msr_hine":
        terms["prior"] = prior_match_loss(aux["z_prior"], truth_next, fc.specs, cfg.prior_system)
        terms["hidden"] = hidden_drift_loss(aux["h_prev"], aux["h_next"], aux["off_stride"], 1.0)
    elif fc.kind == "hine_l2" and truth_next2 is not None:
        target = fc.module.encode(truth_next2).detach()
        terms["prior"] = ((aux["z_future"] - target) ** 2).mean()
    return terms


def tbptt_window_pass(fc, window, sched: Schedule, cfg: TrainConfig, gen=None, continuation=None, cont_mask=None,
                      validation=False):
    """Forward one batch of windows ``(B, L+1, N)``; returns ``(total_loss, breakdown)``.

    Warm steps take truth inputs except where scheduled sampling feeds back
    the prediction, and use truth posteriors.  Tail steps are fully
    self-fed.  Prior targets are always ground truth.
    """
    B, Lp1, _ = window.shape
    L = Lp1 - 1
    w = copy.copy(cfg.weights)
    w.energy = sched.energy
    bands = BandSpec(cfg.bands).clipped(window.shape[-1])
    n_tail = sched.tail_steps(L, cfg.tail_unit, validation)
    n_warm = L - n_tail
    p_ss = 0.0 if validation else sched.p_ss

    state = fc.begin(window[:, 0])
    u_in = window[:, 0]
    sums, tail_errs = {}, []
    for n in range(L):
        truth = window[:, n + 1]
        warm = n < n_warm
        u_hat, state, aux = fc.advance(u_in, state, truth if warm else None)
        truth2 = window[:, n + 2] if n + 2 <= L else None
        for k, v in _step_terms(fc, cfg, u_hat, aux, truth, truth2, bands).items():
            sums[k] = sums.get(k, 0.0) + v
        if not warm:
            tail_errs.append(((u_hat - truth) ** 2).mean())
        if n + 1 < n_warm:
            feed = scheduled_sampling_decision(gen, p_ss, B) if gen is not None else torch.zeros(B, dtype=torch.bool)
            u_in = torch.where(feed[:, None], u_hat, truth)
        else:
            u_in = u_hat
    if tail_errs:
        sums["tail"] = tail_weighted_state_loss(tail_errs)
    K = sched.k_steps
    if K and continuation is not None:
        cont = continuation[:, :K]
        if cont.shape[1] == K:
            loss_k, skipped = k_step_rollout_loss(
                lambda u, s: fc.advance(u, s)[:2], u_in, state, cont, cont_mask
            )
            if not skipped:
                sums["kstep"] = loss_k
    total = sum(getattr(w, k) * v for k, v in sums.items())
    return total, {k: float(v.detach()) if torch.is_tensor(v) else float(v) for k, v in sums.items()}


class WindowSet:
    """Enumerates ``(trajectory, start)`` windows of length ``L+1`` with an optional continuation."""

    def __init__(self, data, L, stride=1, k_max=0, max_windows=None):
        self.data = torch.as_tensor(np.asarray(data), dtype=torch.float32)
        S, T, _ = self.data.shape
        self.L, self.k_max = L, int(k_max)
        starts = np.arange(0, T - L, stride, dtype=np.int64) if T >= L + 1 else np.zeros(0, np.int64)
        self.index = np.array([(s, t) for s in range(S) for t in starts], dtype=np.int64).reshape(-1, 2)
        if max_windows is not None and len(self.index) > max_windows:
            pick = np.linspace(0, len(self.index) - 1, max_windows).round().astype(np.int64)
            self.index = self.index[pick]

    def __len__(self):
        return len(self.index)

    def batch(self, rows):
        idx = self.index[rows]
        T = self.data.shape[1]
        win = torch.stack([self.data[s, t : t + self.L + 1] for s, t in idx])
        if not self.k_max:
            return win, None, None
        N = self.data.shape[2]
        cont = torch.zeros(len(idx), self.k_max, N, dtype=self.data.dtype)
        mask = torch.zeros(len(idx), dtype=torch.bool)
        for i, (s, t) in enumerate(idx):
            a = t + self.L + 1
            if a + self.k_max <= T:
                cont[i] = self.data[s, a : a + self.k_max]
                mask[i] = True
        return win, cont, mask


def _finite(x):
    return bool(torch.isfinite(torch.as_tensor(x)).all())


def validate(fc, val_set: WindowSet, cfg: TrainConfig, epoch, return_terms=False):
    """Composite loss with no scheduled sampling and the validation tail, averaged over windows."""
    sched = schedule_at(cfg, epoch)
    total, count, terms = 0.0, 0, {}
    fc.module.eval()
    with torch.no_grad():
        for lo in range(0, len(val_set), cfg.batch_size):
            rows = np.arange(lo, min(lo + cfg.batch_size, len(val_set)))
            win, cont, mask = val_set.batch(rows)
            loss, parts = tbptt_window_pass(fc, win, sched, cfg, None, cont, mask, validation=True)
            total += loss.item() * len(rows)
            count += len(rows)
            for k, v in parts.items():
                terms[k] = terms.get(k, 0.0) + v * len(rows)
    fc.module.train()
    mean = total / max(count, 1)
    if return_terms:
        return mean, {k: v / max(count, 1) for k, v in terms.items()}
    return mean


@dataclass
class TrainResult:
    forecaster: object
    history: list
    best_val: float
    best_epoch: int
    skipped: int
    steps: int


def train(fc, train_data, val_data, cfg: TrainConfig, log_path=None, ckpt_path=None, normalizer=None, extra_meta=None):
    """Train ``fc`` in place and restore its best-validation parameters before returning.

    ``train_data``/``val_data`` are normalized ``(S, T, N)`` arrays.
    """
    configure_threads()
    torch.manual_seed(cfg.seed)
    data_rng = np.random.default_rng(cfg.seed)
    ss_gen = torch.Generator().manual_seed(cfg.seed + 1)
    k_max = int(math.floor(cfg.kstep.v_max + 1e-9))
    train_set = WindowSet(train_data, cfg.L, cfg.window_stride, k_max)
    val_set = WindowSet(val_data, cfg.L, cfg.val_stride, k_max, cfg.max_val_windows)
    if len(train_set) == 0 or len(val_set) == 0:
        raise InvalidConfigError("no training or validation windows; trajectories shorter than L+1")

    opt = torch.optim.AdamW(fc.module.parameters(), lr=cfg.lr, weight_decay=cfg.weight_decay)
    plateau = PlateauSchedule(cfg.lr, cfg.patience, cfg.factor, cfg.lr_min)
    log = open(log_path, "w") if log_path else None
    history, skipped, steps = [], 0, 0
    best_val, best_epoch, best_state = math.inf, -1, copy.deepcopy(fc.module.state_dict())
    last_val, bad_val = None, 0

    def emit(rec):
        if log:
            log.write(json.dumps(rec, sort_keys=True) + "\n")

    try:
        for epoch in range(cfg.epochs):
            lr = update_lr(cfg, plateau, epoch, last_val if cfg.schedule == "plateau" and epoch else None)
            for g in opt.param_groups:
                g["lr"] = lr
            sched = schedule_at(cfg, epoch)
            order = data_rng.permutation(len(train_set))
            n_batches = math.ceil(len(order) / cfg.batch_size)
            if cfg.max_batches is not None:
                n_batches = min(n_batches, cfg.max_batches)
            epoch_loss, epoch_count = 0.0, 0
            for b in range(n_batches):
                rows = order[b * cfg.batch_size : (b + 1) * cfg.batch_size]
                win, cont, mask = train_set.batch(rows)
                loss, parts = tbptt_window_pass(fc, win, sched, cfg, ss_gen, cont, mask)
                steps += 1
                if not _finite(loss):
                    skipped += 1
                    emit({"type": "skip", "epoch": epoch, "batch": b, "terms": parts})
                    continue
                opt.zero_grad(set_to_none=True)
                loss.backward()
                gnorm = torch.nn.utils.clip_grad_norm_(fc.module.parameters(), cfg.clip)
                if not _finite(gnorm):
                    skipped += 1
                    emit({"type": "skip", "epoch": epoch, "batch": b, "terms": parts})
                    continue
                opt.step()
                epoch_loss += loss.item()
                epoch_count += 1
                emit({"type": "step", "epoch": epoch, "batch": b, "loss": loss.item(), "terms": parts,
                      "grad_norm": float(gnorm)})
            val, val_terms = validate(fc, val_set, cfg, epoch, return_terms=True)
            train_loss = epoch_loss / max(epoch_count, 1)
            rec = {
                "type": "epoch", "epoch": epoch, "train_loss": train_loss, "val_loss": val, "val_terms": val_terms, "lr": lr,
                "ramps": {k: v for k, v in asdict(sched).items() if k != "epoch"}, "skipped": skipped,
            }
            history.append(rec)
            emit(rec)
            if math.isfinite(val):
                bad_val = 0
                last_val = val
                if val < best_val:
                    best_val, best_epoch = val, epoch
                    best_state = copy.deepcopy(fc.module.state_dict())
            else:
                bad_val += 1
                if bad_val >= 3:
                    if ckpt_path:
                        fc.module.load_state_dict(best_state)
                        save_checkpoint(ckpt_path, fc, opt, cfg, epoch, best_val, normalizer, extra_meta)
                    raise TrainingDivergedError(f"validation loss non-finite for 3 epochs (epoch {epoch})")
        if steps and skipped / steps > cfg.max_skip_rate:
            raise TrainingDivergedError(f"{skipped}/{steps} batches skipped (> {cfg.max_skip_rate:.0%})")
    finally:
        if log:
            log.close()
    fc.module.load_state_dict(best_state)
    if ckpt_path:
        save_checkpoint(ckpt_path, fc, opt, cfg, cfg.epochs, best_val, normalizer, extra_meta, best_epoch)
    return TrainResult(fc, history, best_val, best_epoch, skipped, steps)


def save_checkpoint(path, fc, opt, cfg, epoch, best_val, normalizer=None, extra_meta=None, best_epoch=None):
    arrays = {f"param/{k}": v.detach().double().numpy() for k, v in fc.module.state_dict().items()}
    names = [n for n, _ in fc.module.named_parameters()]
    opt_state = opt.state_dict() if opt is not None else {"state": {}, "param_groups": []}
    for i, st in opt_state["state"].items():
        for key, val in st.items():
            arrays[f"opt/{names[i]}/{key}"] = torch.as_tensor(val).detach().double().numpy()
    meta = {
        "kind": "checkpoint",
        "version": __version__,
        "model_kind": fc.kind,
        "model_config": config_dict(fc),
        "train_config": cfg.to_dict() if cfg is not None else None,
        "epoch": epoch,
        "best_epoch": best_epoch,
        "best_val": best_val if best_val is not None and math.isfinite(best_val) else None,
        "lr": [g["lr"] for g in opt_state["param_groups"]],
        "normalizer": normalizer.to_meta() if normalizer is not None else None,
        **(extra_meta or {}),
    }
    write_container(path, arrays, meta)


def load_checkpoint(path):
    """Rebuild the forecaster from a checkpoint; returns ``(forecaster, meta, optimizer_arrays)``."""
    arrays, meta = read_container(path)
    if meta.get("kind") != "checkpoint":
        raise InvalidConfigError(f"{path}: not a checkpoint")
    fc = build_forecaster(meta["model_kind"], meta["model_config"])
    sd = fc.module.state_dict()
    new = {k: torch.as_tensor(arrays[f"param/{k}"], dtype=v.dtype) for k, v in sd.items()}
    fc.module.load_state_dict(new)
    opt_arrays = {k[4:]: v for k, v in arrays.items() if k.startswith("opt/")}
    return fc, meta, opt_arrays


def checkpoint_normalizer(meta):
    d = meta.get("normalizer")
    return Normalizer.from_meta(d) if d else None

