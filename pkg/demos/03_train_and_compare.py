#!/usr/bin/env python3
# Train MSR-HINE and U-Net-AR on the desk KS preset for a handful of epochs,
# then compare free rollouts.  Set EPOCHS=40 to reproduce the acceptance trend
# (about twenty minutes on one core).

import os

import numpy as np

from chaos_forecast.cli import format_table
from chaos_forecast.config import preset
from chaos_forecast.evaluate import merge_results
from chaos_forecast.experiment import evaluate_model, generate, train_model

EPOCHS = int(os.environ.get("EPOCHS", 4))
docs = []
for kind in ("msr_hine", "unet_ar"):
    cfg = preset("desk-ks", kind)
    cfg.train["epochs"] = EPOCHS
    bundle = generate(cfg)
    res = train_model(cfg, bundle.data)
    print(kind, "train loss by epoch", np.round([h["train_loss"] for h in res.history], 3))
    doc, recs = evaluate_model(cfg, res.forecaster, bundle.data)
    print(f"   {len(recs)} rollouts of {cfg.rollout_spec().H} steps")
    docs.append(doc)

report = merge_results(docs, paper_ref=True)
print(format_table(report))
for name, block in report["models"].items():
    print(name, "RMSE at h =", {h: round(v[0], 3) for h, v in block["rmse_at"].items()})
