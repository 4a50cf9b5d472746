"""Uniform stepping interface over MSR-HINE and the two baselines.

Each adapter exposes ``begin(u0) -> state`` and
``advance(u, state, u_truth_next=None) -> (u_hat, state, aux)``.  Passing
``u_truth_next`` selects the teacher-forced posterior (MSR-HINE) or the
ground-truth latent conditioning (HINE-L2); omitting it runs closed loop.
"""

from dataclasses import asdict

from .baselines import HineL2, HineL2Config, UNetAr, UNetArConfig, hine_l2_step, unet_ar_step
from .errors import InvalidConfigError
from .predictor import MsrHine, MsrHineConfig, msr_step

KINDS = ("msr_hine", "unet_ar", "hine_l2")


class MsrHineForecaster:
    kind = "msr_hine"

    def __init__(self, cfg: MsrHineConfig):
        self.cfg = cfg
        self.module = MsrHine(cfg)

    @property
    def specs(self):
        return self.module.specs

    def begin(self, u0):
        return self.module.init_state(u0)

    def advance(self, u, state, u_truth_next=None):
        return msr_step(self.module, u, state, u_truth_next)


class UNetArForecaster:
    kind = "unet_ar"

    def __init__(self, cfg: UNetArConfig):
        self.cfg = cfg
        self.module = UNetAr(cfg)

    def begin(self, u0):
        return None

    def advance(self, u, state, u_truth_next=None):
        return unet_ar_step(self.module, u), None, {}


class HineL2Forecaster:
    """State is the latent the next step will consume; closed loop starts from a persistence guess."""

    kind = "hine_l2"

    def __init__(self, cfg: HineL2Config):
        self.cfg = cfg
        self.module = HineL2(cfg)

    @property
    def spec(self):
        return self.module.spec

    def begin(self, u0):
        return None

    def advance(self, u, state, u_truth_next=None):
        if u_truth_next is not None:
            z_in = self.module.encode(u_truth_next)
        elif state is not None:
            z_in = state
        else:
            z_in = self.module.encode(u)
        u_hat, z_future = hine_l2_step(self.module, u, z_in)
        return u_hat, z_future, {"z_in": z_in, "z_future": z_future}


_CONFIGS = {"msr_hine": MsrHineConfig, "unet_ar": UNetArConfig, "hine_l2": HineL2Config}
_ADAPTERS = {"msr_hine": MsrHineForecaster, "unet_ar": UNetArForecaster, "hine_l2": HineL2Forecaster}


def build_forecaster(kind, model_cfg):
    """Instantiate from a config dataclass or a plain dict of its fields."""
    if kind not in _CONFIGS:
        raise InvalidConfigError(f"unknown model kind {kind!r}; expected one of {KINDS}")
    cls = _CONFIGS[kind]
    if isinstance(model_cfg, dict):
        fields = set(cls.__dataclass_fields__)
        unknown = set(model_cfg) - fields
        if unknown:
            raise InvalidConfigError(f"unknown {kind} model keys: {sorted(unknown)}")
        model_cfg = cls(**model_cfg)
    return _ADAPTERS[kind](model_cfg)


def config_dict(forecaster):
    d = asdict(forecaster.cfg)
    return {k: [list(x) if isinstance(x, tuple) else x for x in v] if isinstance(v, tuple) else v for k, v in d.items()}
