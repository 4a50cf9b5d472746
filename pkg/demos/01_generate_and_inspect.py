#!/usr/bin/env python3
# Generate small Kuramoto-Sivashinsky and Lorenz-96 datasets and look at them.
# Everything here runs in a few seconds on one core.

import numpy as np

from chaos_forecast.datastore import fit_normalizer, apply, split_by_trajectory, SplitSpec
from chaos_forecast.ks import KsConfig, ks_generate
from chaos_forecast.l96 import L96Config, l96_generate
from chaos_forecast.spectral import BandSpec, band_energies

# KS on [0, 32*pi) with 64 points: four trajectories after the burn-in
ks = ks_generate(KsConfig(N=64, n_traj=4, seed=1))
print("KS bundle", ks.shape, "dt", ks.times[1] - ks.times[0])
print("max |spatial mean|", np.abs(ks.data.mean(-1)).max())

# energy per octave band, averaged over time
bands = BandSpec(((1, 4), (4, 8), (8, 16), (16, 33)))
e = band_energies(ks.data, bands).mean(axis=(0, 1))
for (k1, k2), v in zip(bands.bands, e):
    print(f"  modes [{k1:2d},{k2:2d})  energy {v:10.1f}")

# L96 at F=8; the climatological std sits near 3.6
l96 = l96_generate(L96Config(n_traj=6, n_saved=500, seed=2))
print("L96 bundle", l96.shape, "std after spin-up", l96.data[:, 100:].std().round(2))

# split by trajectory and normalize with training statistics only
tr, va, te = split_by_trajectory(6, SplitSpec((0.5, 0.25, 0.25), seed=0))
norm = fit_normalizer(l96.data[tr])
z = apply(norm, l96.data)
print("splits", tr, va, te, "normalized train mean/std", z[tr].mean().round(3), z[tr].std().round(3))
