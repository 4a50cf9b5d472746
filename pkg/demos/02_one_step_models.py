#!/usr/bin/env python3
# Build the three forecasters at matched parameter count and take a few steps.

import torch

from chaos_forecast.baselines import count_parameters
from chaos_forecast.config import preset
from chaos_forecast.forecasters import build_forecaster

torch.manual_seed(0)
u = torch.randn(4, 64)

for kind in ("msr_hine", "hine_l2", "unet_ar"):
    cfg = preset("desk-ks", kind)
    fc = build_forecaster(kind, cfg.model_config())
    print(f"{kind:9s} parameters {count_parameters(fc.module):7d}")

    state = fc.begin(u)
    x = u
    with torch.no_grad():
        for n in range(3):
            x, state, aux = fc.advance(x, state)
    # residual updates are bounded by u_scale = 0.5 per step
    print("   |u3 - u0|max", float((x - u).abs().max()), " aux keys", sorted(aux)[:4])

# the MSR-HINE gate starts at p0 = 0.9: fused latents lean on the posterior
msr = build_forecaster("msr_hine", preset("desk-ks").model_config())
with torch.no_grad():
    _, _, aux = msr.advance(u, msr.begin(u), u_truth_next=u)
print("initial gate mean per level", [round(float(g.mean()), 3) for g in aux["gate"]])
