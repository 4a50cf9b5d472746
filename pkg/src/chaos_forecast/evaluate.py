"""Warm-started closed-loop rollouts, forecast-skill metrics, and results documents.

Curves carry ``H + 1`` rows: row 0 is the free-rollout initial state (the
last warm-start truth), rows ``1..H`` are predictions.
"""

import csv
import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch

from .errors import InvalidComparisonError, InvalidConfigError
from .spectral import BandSpec

SCHEMA_VERSION = 1
ACC_EPS = 1e-12
BAND_EPS = 1e-12

KS_HORIZONS = (10, 25, 50, 100, 200, 400)
L96_HORIZONS = (10, 25, 50, 75, 100)

# Published full-scale reference values (normalized units), echoed but never asserted.
PAPER_REFERENCE = {
    "ks": {
        "H": 400,
        "horizons": list(KS_HORIZONS),
        "rmse": {
            "msr_hine": [3.71e-3, 8.40e-3, 2.14e-2, 6.35e-2, 2.29e-1, 1.09e0],
            "hine_l2": [1.21e-2, 3.10e-2, 7.71e-2, 2.05e-1, 7.14e-1, 1.92e0],
            "unet_ar": [2.16e-2, 5.88e-2, 1.57e-1, 4.62e-1, 1.48e0, 2.94e0],
        },
        "end": {
            "msr_hine": {"rmse": 1.094e0, "acc": 0.828, "spec_err": 5.384e-2},
            "hine_l2": {"rmse": 1.920e0, "acc": 0.500, "spec_err": 1.435e-1},
            "unet_ar": {"rmse": 2.941e0, "acc": -0.155, "spec_err": 1.663e-1},
        },
    },
    "l96": {
        "H": 100,
        "horizons": list(L96_HORIZONS),
        "rmse": {
            "msr_hine": [3.71e-3, 8.40e-3, 2.62e-1, 1.62e0, 3.44e0],
            "hine_l2": [7.12e-2, 4.29e-1, 2.94e0, 4.49e0, 4.98e0],
            "unet_ar": [8.78e-2, 6.07e-1, 2.86e0, 4.40e0, 4.72e0],
        },
        "end": {
            "msr_hine": {"rmse": 3.445e0, "acc": 0.545, "spec_err": 1.065e-1},
            "hine_l2": {"rmse": 4.982e0, "acc": 0.091, "spec_err": 3.379e-1},
            "unet_ar": {"rmse": 4.718e0, "acc": 0.144, "spec_err": 3.051e-1},
        },
    },
}


@dataclass(frozen=True)
class RolloutSpec:
    W: int = 32
    H: int = 100
    R: int = 8  # starts per trajectory

    def __post_init__(self):
        if self.W < 0 or self.H < 1 or self.R < 1:
            raise InvalidConfigError("need W >= 0, H >= 1, R >= 1")


@dataclass
class RolloutRecord:
    truth: np.ndarray  # (H+1, N)
    prediction: np.ndarray  # (H+1, N)
    trajectory: int
    start: int

    @property
    def rmse(self):
        return rmse_curve(self.prediction, self.truth)

    @property
    def acc(self):
        return acc_values(self.prediction, self.truth)


def start_times(T, spec: RolloutSpec):
    """``R`` evenly spaced admissible starts ``t0`` with ``t0 + W + H <= T - 1``."""
    last = T - 1 - spec.W - spec.H
    if last < 0:
        raise InvalidConfigError(f"W + H = {spec.W + spec.H} does not fit a trajectory of {T} steps")
    return np.unique(np.linspace(0, last, spec.R).round().astype(np.int64))


def rollout(fc, trajectories, starts, spec: RolloutSpec, traj_ids=None):
    """Batched rollouts of ``fc`` from ``trajectories[i][starts[i]]``; returns records.

    Warm-up runs ``W`` teacher-forced steps (truth inputs, truth posteriors);
    the free segment then starts from the true state at ``t0 + W``.
    """
    trajectories = np.asarray(trajectories, dtype=np.float64)
    starts = np.asarray(starts, dtype=np.int64)
    T = trajectories.shape[1]
    if np.any(starts + spec.W + spec.H > T - 1):
        raise InvalidConfigError("rollout horizon exceeds the trajectory")
    dtype = next(fc.module.parameters()).dtype
    rows = np.arange(len(starts))
    take = lambda off: torch.as_tensor(trajectories[rows, starts + off], dtype=dtype)  # noqa: E731
    fc.module.eval()
    with torch.no_grad():
        state = fc.begin(take(0))
        for n in range(spec.W):
            _, state, _ = fc.advance(take(n), state, take(n + 1))
        u = take(spec.W)
        preds = [u]
        for _ in range(spec.H):
            u, state, _ = fc.advance(u, state)
            preds.append(u)
    pred = torch.stack(preds, 1).double().numpy()
    ids = np.zeros(len(starts), np.int64) if traj_ids is None else np.asarray(traj_ids)
    out = []
    for i, t0 in enumerate(starts):
        truth = trajectories[i, t0 + spec.W : t0 + spec.W + spec.H + 1]
        out.append(RolloutRecord(truth, pred[i], int(ids[i]), int(t0)))
    return out


def rollout_dataset(fc, data, spec: RolloutSpec, batch=64):
    """Rollouts at ``R`` starts per trajectory of ``data`` ``(S, T, N)``."""
    data = np.asarray(data)
    starts = start_times(data.shape[1], spec)
    pairs = [(s, t) for s in range(data.shape[0]) for t in starts]
    records = []
    for lo in range(0, len(pairs), batch):
        chunk = pairs[lo : lo + batch]
        traj = np.stack([data[s] for s, _ in chunk])
        records += rollout(fc, traj, [t for _, t in chunk], spec, [s for s, _ in chunk])
    return records


def rmse_curve(prediction, truth):
    """Per-step ``sqrt(mean_i (u_hat - u)^2)`` over the last axis."""
    d = np.asarray(prediction, dtype=np.float64) - np.asarray(truth, dtype=np.float64)
    return np.sqrt(np.mean(d * d, axis=-1))


def acc_values(prediction, truth):
    """Cosine similarity of space-mean-removed fields, clipped to [-1, 1]."""
    p = np.asarray(prediction, dtype=np.float64)
    t = np.asarray(truth, dtype=np.float64)
    a = p - p.mean(-1, keepdims=True)
    b = t - t.mean(-1, keepdims=True)
    num = np.sum(a * b, axis=-1)
    den = np.sqrt(np.sum(a * a, axis=-1) * np.sum(b * b, axis=-1)) + ACC_EPS
    return np.clip(num / den, -1.0, 1.0)


def acc_curve(records):
    """Per-horizon mean and std of ACC across rollouts."""
    acc = np.stack([r.acc for r in records])
    return acc.mean(0), acc.std(0)


def band_ratio_curve(record, bands: BandSpec):
    """Per-step ``log(E_pred / E_truth)`` per band ``(H+1, n_bands)`` and a flag per band
    marking steps where the truth energy fell below the floor."""
    bands = bands.clipped(record.truth.shape[-1])
    pp = np.abs(np.fft.rfft(record.prediction, axis=-1)) ** 2
    pt = np.abs(np.fft.rfft(record.truth, axis=-1)) ** 2
    ep = np.stack([pp[:, a:b].sum(-1) for a, b in bands.bands], -1)
    et = np.stack([pt[:, a:b].sum(-1) for a, b in bands.bands], -1)
    flags = et < BAND_EPS
    return np.log(np.maximum(ep, BAND_EPS) / np.maximum(et, BAND_EPS)), flags


def spec_err(record, bands: BandSpec):
    """Time-mean over the free rollout of the band-mean absolute log energy ratio."""
    ratios, _ = band_ratio_curve(record, bands)
    return float(np.mean(np.abs(ratios[1:]).mean(-1)))


def predictability_horizon(acc_mean, threshold=0.5):
    """First step with mean ACC below ``threshold``, minus one (floored at 0); ``H`` if never."""
    acc_mean = np.asarray(acc_mean)
    below = np.nonzero(acc_mean < threshold)[0]
    if len(below) == 0:
        return len(acc_mean) - 1
    return max(int(below[0]) - 1, 0)


def relative_gains(model, base):
    """Percent improvements over ``base`` given ``{"rmse", "acc", "spec_err"}`` end-horizon values."""
    def pct(b, m):
        return 0.0 if b == m else (b - m) / b * 100.0

    acc = 0.0 if model["acc"] == base["acc"] else (model["acc"] - base["acc"]) / (1.0 - base["acc"]) * 100.0
    return {"rmse": pct(base["rmse"], model["rmse"]), "acc": acc, "spec_err": pct(base["spec_err"], model["spec_err"])}


def model_block(records, spec: RolloutSpec, bands: BandSpec, horizons):
    rmse = np.stack([r.rmse for r in records])
    acc = np.stack([r.acc for r in records])
    se = np.array([spec_err(r, bands) for r in records])
    time_avg = rmse[:, 1:].mean(1)
    hs = [h for h in horizons if h <= spec.H]
    ratios = np.stack([band_ratio_curve(r, bands)[0] for r in records])
    return {
        "n_rollouts": len(records),
        "horizons": hs,
        "rmse_at": {str(h): [float(rmse[:, h].mean()), float(rmse[:, h].std())] for h in hs},
        "end": {
            "rmse": float(rmse[:, -1].mean()),
            "rmse_std": float(rmse[:, -1].std()),
            "acc": float(acc[:, -1].mean()),
            "acc_std": float(acc[:, -1].std()),
            "spec_err": float(se.mean()),
            "spec_err_std": float(se.std()),
        },
        "frmse": float(time_avg.mean()),
        "predictability_horizon": predictability_horizon(acc.mean(0)),
        "best_rollout": _rollout_id(records[int(np.argmin(time_avg))]),
        "worst_rollout": _rollout_id(records[int(np.argmax(time_avg))]),
        "curves": {
            "rmse_mean": rmse.mean(0).tolist(),
            "rmse_std": rmse.std(0).tolist(),
            "acc_mean": acc.mean(0).tolist(),
            "acc_std": acc.std(0).tolist(),
            "band_ratio_mean": ratios.mean(0).T.tolist(),
        },
    }


def _rollout_id(r):
    return {"trajectory": r.trajectory, "start": r.start}


def summarize(per_model, spec: RolloutSpec, bands: BandSpec, system, baseline="unet_ar", paper_ref=False,
              config=None):
    """Results document for ``{model name: records}`` evaluated under one spec."""
    horizons = KS_HORIZONS if system == "ks" else L96_HORIZONS
    models = {name: model_block(recs, spec, bands, horizons) for name, recs in per_model.items()}
    doc = {
        "schema_version": SCHEMA_VERSION,
        "system": system,
        "rollout_spec": asdict(spec),
        "bands": [list(b) for b in bands.bands],
        "models": models,
        "config": config or {},
    }
    attach_gains(doc, baseline)
    if paper_ref:
        doc["paper_reference"] = PAPER_REFERENCE[system]
    return doc


def attach_gains(doc, baseline):
    if baseline in doc["models"]:
        base = doc["models"][baseline]["end"]
        for block in doc["models"].values():
            block["gain_vs_baseline"] = relative_gains(block["end"], base)
        doc["baseline"] = baseline


def merge_results(docs, names=None, baseline="unet_ar", paper_ref=False):
    """Combine per-model results documents produced under the same spec."""
    if not docs:
        raise InvalidComparisonError("nothing to compare")
    ref = docs[0]
    for d in docs[1:]:
        if d["rollout_spec"] != ref["rollout_spec"] or d["system"] != ref["system"] or d["bands"] != ref["bands"]:
            raise InvalidComparisonError("results were produced under different rollout specifications")
    models = {}
    for i, d in enumerate(docs):
        for name, block in d["models"].items():
            key = names[i] if names else name
            if key in models:
                key = f"{key}_{i}"
            models[key] = {k: v for k, v in block.items() if k != "gain_vs_baseline"}
    out = {k: ref[k] for k in ("schema_version", "system", "rollout_spec", "bands")}
    out["models"] = models
    out["config"] = {"merged_from": len(docs)}
    base = baseline if baseline in models else next(iter(models))
    attach_gains(out, base)
    if paper_ref:
        out["paper_reference"] = PAPER_REFERENCE[ref["system"]]
    return out


def write_results(doc, out_dir):
    """Write ``results.json`` plus CSV curve and table files; returns the written paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = [out / "results.json"]
    paths[0].write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    names = list(doc["models"])
    for curve in ("rmse", "acc"):
        p = out / f"{curve}_curve.csv"
        with open(p, "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["h"] + [f"{n}_{s}" for n in names for s in ("mean", "std")])
            H = len(doc["models"][names[0]]["curves"][f"{curve}_mean"])
            for h in range(H):
                row = [h]
                for n in names:
                    c = doc["models"][n]["curves"]
                    row += [repr(c[f"{curve}_mean"][h]), repr(c[f"{curve}_std"][h])]
                w.writerow(row)
        paths.append(p)
    p = out / "band_ratio.csv"
    with open(p, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        nb = len(doc["bands"])
        w.writerow(["h"] + [f"{n}_band{b}" for n in names for b in range(nb)])
        H = len(doc["models"][names[0]]["curves"]["band_ratio_mean"][0])
        for h in range(H):
            w.writerow([h] + [repr(doc["models"][n]["curves"]["band_ratio_mean"][b][h]) for n in names for b in range(nb)])
    paths.append(p)
    p = out / "table.csv"
    with open(p, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        hs = doc["models"][names[0]]["horizons"]
        w.writerow(["model"] + [f"rmse_t{h}" for h in hs] + ["rmse_end", "acc_end", "spec_err", "d_rmse_pct",
                                                            "d_acc_pct", "d_spec_err_pct"])
        for n in names:
            b = doc["models"][n]
            g = b.get("gain_vs_baseline", {"rmse": "", "acc": "", "spec_err": ""})
            w.writerow([n] + [f"{b['rmse_at'][str(h)][0]:.4e}" for h in hs]
                       + [f"{b['end']['rmse']:.4e}", f"{b['end']['acc']:.4f}", f"{b['end']['spec_err']:.4e}"]
                       + [f"{g[k]:+.1f}" if g[k] != "" else "" for k in ("rmse", "acc", "spec_err")])
    paths.append(p)
    return paths
