"""End-to-end pipeline steps driven by a ``RunConfig``.

Each step is a pure function of its inputs and the config seed, so running it
twice produces identical files.  Outputs embed the resolved config and the
package version.
"""

from pathlib import Path

import numpy as np
import torch

from . import __version__
from .config import RunConfig
from .datastore import TrajectoryBundle, apply, fit_normalizer, read_bundle, split_by_trajectory, write_bundle
from .errors import InvalidConfigError
from .evaluate import rollout_dataset, summarize, write_results
from .forecasters import build_forecaster
from .ks import ks_generate
from .l96 import l96_generate
from .trainer import checkpoint_normalizer, configure_threads, load_checkpoint, train

BUNDLE_NAME = "bundle.cfb"
CHECKPOINT_NAME = "checkpoint.cfb"
LOG_NAME = "train_log.jsonl"


def generate(cfg: RunConfig) -> TrajectoryBundle:
    configure_threads()
    gen = cfg.generator_config()
    bundle = ks_generate(gen) if cfg.system == "ks" else l96_generate(gen)
    bundle.meta.update(version=__version__, run_config=cfg.to_dict())
    return bundle


def generate_to(cfg: RunConfig, out_dir):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    bundle = generate(cfg)
    write_bundle(bundle, out / BUNDLE_NAME)
    return out / BUNDLE_NAME, bundle


def prepare(cfg: RunConfig, data):
    """Split by trajectory and normalize with training statistics.

    Returns ``(train, val, test, normalizer)`` arrays in normalized units.
    """
    if data.shape[-1] != cfg.n_phys:
        raise InvalidConfigError(f"bundle grid N={data.shape[-1]} does not match config N={cfg.n_phys}")
    tr, va, te = split_by_trajectory(data.shape[0], cfg.split_spec())
    norm = fit_normalizer(data[tr], cfg.normalization)
    return apply(norm, data[tr]), apply(norm, data[va]), apply(norm, data[te]), norm


def train_model(cfg: RunConfig, data, out_dir=None):
    """Train the configured model; writes checkpoint and log when ``out_dir`` is given."""
    train_data, val_data, _, norm = prepare(cfg, data)
    torch.manual_seed(cfg.seed)
    fc = build_forecaster(cfg.model_kind, cfg.model_config())
    log_path = ckpt_path = None
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        log_path, ckpt_path = out / LOG_NAME, out / CHECKPOINT_NAME
    extra = {"run_config": cfg.to_dict()}
    result = train(fc, train_data, val_data, cfg.train_config(), log_path, ckpt_path, norm, extra)
    return result


def evaluate_model(cfg: RunConfig, fc, data, name=None, paper_ref=False):
    """Rollout metrics on the test split of ``data`` (raw units) for one forecaster."""
    _, _, test, _ = prepare(cfg, data)
    recs = rollout_dataset(fc, test, cfg.rollout_spec(), cfg.eval_batch)
    doc = summarize({name or fc.kind: recs}, cfg.rollout_spec(), cfg.band_spec(), cfg.system,
                    paper_ref=paper_ref, config=cfg.to_dict())
    doc["version"] = __version__
    return doc, recs


def load_trained(ckpt_path):
    """``(forecaster, RunConfig)`` from a checkpoint written by ``train_model``."""
    fc, meta, _ = load_checkpoint(ckpt_path)
    if "run_config" not in meta:
        raise InvalidConfigError(f"{ckpt_path}: checkpoint carries no run configuration")
    return fc, RunConfig.from_dict(meta["run_config"]), checkpoint_normalizer(meta)


def evaluate_checkpoint(ckpt_path, bundle_path, out_dir, paper_ref=False):
    fc, cfg, norm = load_trained(ckpt_path)
    bundle = read_bundle(bundle_path)
    _, _, _, fresh = prepare(cfg, bundle.data)
    if norm is not None and not (np.allclose(norm.mean, fresh.mean) and np.allclose(norm.std, fresh.std)):
        raise InvalidConfigError("bundle statistics differ from the checkpoint's training data")
    doc, _ = evaluate_model(cfg, fc, bundle.data, paper_ref=paper_ref)
    return write_results(doc, out_dir), doc
