"""Declarative run configuration and the four canonical presets.

A ``RunConfig`` is a plain JSON-compatible document.  Every section is
validated against the dataclass it feeds, so an unknown key anywhere is an
error rather than a silent no-op.  The single top-level ``seed`` drives the
generator, the trajectory split and training.

Sections and their defaults:

``system``         ``"ks"`` or ``"l96"``.
``generator``      fields of ``KsConfig`` / ``L96Config`` except ``seed``.
``split``          ``fractions`` (train, val, test); default (0.8, 0.1, 0.1).
``normalization``  ``"global"`` | ``"per_variable"`` | ``"per_sample"``.
``model``          ``kind`` plus the fields of that model's config.
``train``          fields of ``TrainConfig`` except ``seed``.
``eval``           ``W`` (warm steps), ``H`` (free steps), ``R`` (starts per
                   trajectory), ``batch`` (rollouts per forward pass).
``bands``          band-energy partition used by evaluation; defaults to the
                   four octave bands, truncated at the Nyquist mode.
"""

import copy
import json
from dataclasses import asdict, dataclass, field, fields

from .datastore import SplitSpec
from .errors import InvalidConfigError
from .evaluate import RolloutSpec
from .forecasters import _CONFIGS, KINDS
from .ks import KsConfig
from .l96 import L96Config
from .spectral import DEFAULT_BANDS, BandSpec
from .trainer import TrainConfig

SYSTEMS = ("ks", "l96")
PRESETS = ("paper-ks", "paper-l96", "desk-ks", "desk-l96")
_EVAL_KEYS = {"W", "H", "R", "batch"}


def _check_keys(section, given, allowed):
    unknown = set(given) - set(allowed)
    if unknown:
        raise InvalidConfigError(f"unknown keys in {section}: {sorted(unknown)}")


def _plain(x):
    return json.loads(json.dumps(x))


@dataclass
class RunConfig:
    system: str = "ks"
    seed: int = 0
    generator: dict = field(default_factory=dict)
    split: dict = field(default_factory=dict)
    normalization: str = "global"
    model: dict = field(default_factory=lambda: {"kind": "msr_hine"})
    train: dict = field(default_factory=dict)
    eval: dict = field(default_factory=dict)
    bands: list = None

    def __post_init__(self):
        if self.system not in SYSTEMS:
            raise InvalidConfigError(f"unknown system {self.system!r}; expected one of {SYSTEMS}")
        if self.bands is None:
            self.bands = [list(b) for b in BandSpec(DEFAULT_BANDS).clipped(self._grid_size()).bands]
        if not isinstance(self.seed, int) or not 0 <= self.seed < 2**64:
            raise InvalidConfigError("seed must be an unsigned 64-bit integer")
        for name in ("generator", "split", "model", "train", "eval"):
            if not isinstance(getattr(self, name), dict):
                raise InvalidConfigError(f"section {name!r} must be a mapping")
        gen_cls = KsConfig if self.system == "ks" else L96Config
        _check_keys("generator", self.generator, {f.name for f in fields(gen_cls)} - {"seed"})
        _check_keys("split", self.split, {"fractions"})
        _check_keys("train", self.train, {f.name for f in fields(TrainConfig)} - {"seed"})
        _check_keys("eval", self.eval, _EVAL_KEYS)
        kind = self.model.get("kind")
        if kind not in KINDS:
            raise InvalidConfigError(f"model.kind must be one of {KINDS}, got {kind!r}")
        _check_keys("model", self.model, {f.name for f in fields(_CONFIGS[kind])} | {"kind"})
        if self.normalization not in ("global", "per_variable", "per_sample"):
            raise InvalidConfigError(f"unknown normalization {self.normalization!r}")
        # build every derived object once so bad values fail here, not mid-run
        self.generator_config()
        self.split_spec()
        self.model_config()
        self.train_config()
        self.rollout_spec()
        self.band_spec().validate(self.n_phys)

    @classmethod
    def from_dict(cls, d):
        if not isinstance(d, dict):
            raise InvalidConfigError("config document must be a JSON object")
        _check_keys("config", d, {f.name for f in fields(cls)})
        return cls(**copy.deepcopy(d))

    def to_dict(self):
        return _plain(asdict(self))

    @property
    def n_phys(self):
        return self.generator_config().N

    def _grid_size(self):
        cls = KsConfig if self.system == "ks" else L96Config
        return int(self.generator.get("N", cls.N))

    def generator_config(self):
        cls = KsConfig if self.system == "ks" else L96Config
        return cls(**self.generator, seed=self.seed)

    def split_spec(self):
        return SplitSpec(**self.split, seed=self.seed)

    @property
    def model_kind(self):
        return self.model["kind"]

    def model_config(self):
        params = {k: v for k, v in self.model.items() if k != "kind"}
        if self.model_kind == "msr_hine":
            params.setdefault("system", self.system)
            if self.system == "ks":
                params.setdefault("domain_len", self.generator_config().domain_len)
        params.setdefault("n_phys", self.n_phys)
        if params["n_phys"] != self.n_phys:
            raise InvalidConfigError("model.n_phys disagrees with the generator grid size")
        return _CONFIGS[self.model_kind](**params)

    def train_config(self):
        return TrainConfig(**self.train, seed=self.seed)

    def rollout_spec(self):
        e = {"W": self.train_config().L, "H": 100, "R": 8, **self.eval}
        return RolloutSpec(int(e["W"]), int(e["H"]), int(e["R"]))

    @property
    def eval_batch(self):
        return int(self.eval.get("batch", 64))

    def band_spec(self):
        return BandSpec(tuple(tuple(b) for b in self.bands))

    def with_seed(self, seed):
        return RunConfig.from_dict({**self.to_dict(), "seed": seed})


def _scaled(ramps, factor):
    return {k: {"start": r[0] * factor, "duration": r[1] * factor, "v_max": r[2]} for k, r in ramps.items()}


_KS_RAMPS = {"p_ss": (30, 45, 0.5), "tail": (35, 45, 0.6), "energy": (20, 30, 0.05),
             "kstep": (18, 20, 8), "val_tail": (5, 30, 0.8)}
# only p_ss and the tail are given for L96; the rest reuse the KS constants
_L96_RAMPS = {"p_ss": (0, 70, 0.5), "tail": (20, 20, 8), "energy": (20, 30, 0.05),
              "kstep": (18, 20, 8), "val_tail": (5, 30, 0.8)}

_KS_TRAIN = {"L": 32, "clip": 0.7, "schedule": "plateau", "spectral_variant": "relative",
             "spectral_dc": False, "spectral_cutoff": 16, "prior_system": "ks"}
_L96_TRAIN = {"L": 16, "clip": 1.0, "schedule": "cosine", "tail_unit": "steps", "spectral_variant": "absolute",
              "spectral_dc": True, "spectral_cutoff": 8, "prior_system": "l96",
              "bands": [[1, 4], [4, 8], [8, 16], [16, 21]]}

# widths chosen so the baselines match the MSR-HINE parameter count
_MODELS = {
    ("paper", "ks"): {"msr_hine": {"width": 32}, "unet_ar": {"width": 37}, "hine_l2": {"width": 37, "cutoff": 16}},
    ("paper", "l96"): {"msr_hine": {"width": 24, "cutoffs": [8, 3]}, "unet_ar": {"width": 29},
                       "hine_l2": {"width": 29, "cutoff": 8}},
    ("desk", "ks"): {"msr_hine": {"width": 16}, "unet_ar": {"width": 23}, "hine_l2": {"width": 22, "cutoff": 16}},
    ("desk", "l96"): {"msr_hine": {"width": 12, "cutoffs": [8, 3]}, "unet_ar": {"width": 19},
                      "hine_l2": {"width": 19, "cutoff": 8}},
}


def preset(name, kind="msr_hine"):
    """The resolved configuration for one of ``PRESETS`` with the given model kind."""
    if name not in PRESETS:
        raise InvalidConfigError(f"unknown preset {name!r}; expected one of {PRESETS}")
    if kind not in KINDS:
        raise InvalidConfigError(f"unknown model kind {kind!r}; expected one of {KINDS}")
    scale, system = name.split("-")
    desk = scale == "desk"
    if system == "ks":
        generator = {"N": 64, "n_traj": 8} if desk else {"N": 128, "n_traj": 100}
        split = [0.625, 0.125, 0.25] if desk else [0.8, 0.1, 0.1]
        train = dict(_KS_TRAIN, **_scaled(_KS_RAMPS, 0.5 if desk else 1.0))
        ev = {"H": 100, "R": 12} if desk else {"H": 400, "R": 8}
    else:
        generator = {"n_traj": 16} if desk else {}
        split = [0.75, 0.125, 0.125] if desk else [0.8, 0.1, 0.1]
        train = dict(_L96_TRAIN, **_scaled(_L96_RAMPS, 0.5 if desk else 1.0))
        ev = {"H": 50, "R": 12} if desk else {"H": 100, "R": 8}
    if desk:
        train.update(epochs=40, batch_size=32, max_batches=10, max_val_windows=64)
    else:
        train.update(epochs=80, batch_size=256 if system == "ks" else 128)
    doc = {
        "system": system,
        "seed": 0,
        "generator": generator,
        "split": {"fractions": split},
        "normalization": "global",
        "model": {"kind": kind, **_MODELS[(scale, system)][kind]},
        "train": train,
        "eval": ev,
    }
    return RunConfig.from_dict(doc)


def load_config(path=None, preset_name=None, kind=None, system="ks"):
    """A file document layered over a preset, or over the defaults for ``system``.

    File keys win section by section.
    """
    if preset_name:
        base = preset(preset_name, kind or "msr_hine").to_dict()
    else:
        base = RunConfig(system=system, model={"kind": kind or "msr_hine"}).to_dict()
    if path is None:
        return RunConfig.from_dict(base)
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise InvalidConfigError(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(doc, dict):
        raise InvalidConfigError(f"{path}: config document must be a JSON object")
    _check_keys("config", doc, {f.name for f in fields(RunConfig)})
    merged = dict(base)
    for key, value in doc.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict) and key != "model":
            merged[key] = {**merged[key], **value}
        elif key == "model" and isinstance(value, dict) and value.get("kind", merged["model"]["kind"]) == merged["model"]["kind"]:
            merged[key] = {**merged[key], **value}
        else:
            merged[key] = value
    if merged.get("system") != base["system"] and "generator" not in doc:
        merged["generator"] = {}
    if "bands" not in doc:
        # every base uses the default octave bands; re-clip them for the final grid
        merged["bands"] = None
    return RunConfig.from_dict(merged)
