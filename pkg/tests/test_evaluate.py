import json

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from chaos_forecast.errors import InvalidComparisonError, InvalidConfigError
from chaos_forecast.evaluate import (
    RolloutRecord,
    RolloutSpec,
    acc_curve,
    acc_values,
    band_ratio_curve,
    merge_results,
    predictability_horizon,
    relative_gains,
    rmse_curve,
    rollout,
    rollout_dataset,
    spec_err,
    start_times,
    summarize,
    write_results,
)
from chaos_forecast.forecasters import build_forecaster
from chaos_forecast.spectral import BandSpec

BANDS = BandSpec(((1, 3), (3, 6)))


class Oracle:
    """Returns the true next state by looking it up in the stored trajectory."""

    kind = "oracle"

    def __init__(self, traj):
        self.traj = torch.as_tensor(traj)
        self.module = torch.nn.Linear(1, 1).double()

    def begin(self, u0):
        return self._time(u0)

    def _time(self, u):
        d = ((self.traj[None, :, :] - u[:, None, :]) ** 2).sum(-1)
        return d.argmin(1)

    def advance(self, u, state, u_truth_next=None):
        t = self._time(u) + 1
        return self.traj[t], t, {}


class Identity(Oracle):
    def advance(self, u, state, u_truth_next=None):
        return u, None, {}


def smooth_traj(T=40, N=16, seed=0):
    rng = np.random.default_rng(seed)
    x = np.linspace(0, 2 * np.pi, N, endpoint=False)
    return np.array([np.sin(x + 0.3 * t) + 0.5 * np.cos(3 * x - 0.1 * t) + 0.01 * rng.standard_normal(N)
                     for t in range(T)])


class TestRollout:
    def test_oracle(self):
        traj = smooth_traj()
        recs = rollout(Oracle(traj), traj[None], [3], RolloutSpec(4, 10, 1))
        assert np.allclose(recs[0].rmse, 0) and np.allclose(recs[0].acc, 1)
        assert recs[0].prediction.shape == (11, 16)

    def test_identity_closed_form(self):
        traj = smooth_traj()
        W, H, t0 = 5, 12, 2
        rec = rollout(Identity(traj), traj[None], [t0], RolloutSpec(W, H, 1))[0]
        expect = np.sqrt(((traj[t0 + W + np.arange(H + 1)] - traj[t0 + W]) ** 2).mean(-1))
        assert np.allclose(rec.rmse, expect, atol=1e-15)

    def test_warm_only_changes_state(self):
        traj = smooth_traj()
        a = rollout(Identity(traj), traj[None], [0], RolloutSpec(0, 5, 1))[0]
        b = rollout(Identity(traj), traj[None], [0], RolloutSpec(8, 5, 1))[0]
        assert np.array_equal(a.truth, traj[0:6]) and np.array_equal(b.truth, traj[8:14])

    def test_horizon_too_long(self):
        traj = smooth_traj(T=20)
        with pytest.raises(InvalidConfigError):
            rollout(Identity(traj), traj[None], [5], RolloutSpec(4, 15, 1))
        with pytest.raises(InvalidConfigError):
            start_times(20, RolloutSpec(10, 10, 2))

    def test_start_times(self):
        s = start_times(100, RolloutSpec(10, 20, 4))
        assert s[0] == 0 and s[-1] == 69 and len(s) == 4

    def test_real_models_batched(self):
        torch.manual_seed(0)
        data = np.stack([smooth_traj(seed=i) for i in range(2)])
        for kind, cfg in [("unet_ar", dict(n_phys=16, width=4)), ("hine_l2", dict(n_phys=16, cutoff=4, width=4)),
                          ("msr_hine", dict(system="ks", n_phys=16, cutoffs=(4, 2), n_pool=4, width=4))]:
            fc = build_forecaster(kind, cfg)
            recs = rollout_dataset(fc, data, RolloutSpec(4, 6, 3), batch=4)
            assert len(recs) == 6
            single = rollout(fc, data[1:2], [recs[4].start], RolloutSpec(4, 6, 1))[0]
            assert np.allclose(single.prediction, recs[4].prediction, atol=1e-5)


class TestMetrics:
    def test_rmse_brute_force(self):
        rng = np.random.default_rng(0)
        p, t = rng.standard_normal((3, 4)), rng.standard_normal((3, 4))
        brute = []
        for i in range(3):
            s = 0.0
            for j in range(4):
                s += (p[i, j] - t[i, j]) ** 2
            brute.append((s / 4) ** 0.5)
        assert np.array_equal(rmse_curve(p, t), np.array(brute))

    def test_rmse_offset(self):
        t = np.random.default_rng(1).standard_normal((5, 8))
        assert np.allclose(rmse_curve(t + 0.7, t), 0.7)

    def test_acc_cases(self):
        t = np.random.default_rng(2).standard_normal((6, 10))
        assert np.allclose(acc_values(t, t), 1.0)
        anom = t - t.mean(-1, keepdims=True)
        assert np.allclose(acc_values(t.mean(-1, keepdims=True) - anom, t), -1.0)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 10_000), st.floats(-100, 100))
    def test_acc_offset_invariance(self, seed, c):
        rng = np.random.default_rng(seed)
        p, t = rng.standard_normal((3, 12)), rng.standard_normal((3, 12))
        base = acc_values(p, t)
        assert np.allclose(acc_values(p + c, t), base, atol=1e-12)
        assert np.allclose(acc_values(p, t + c), base, atol=1e-12)
        assert np.all(np.abs(base) <= 1)

    def test_acc_curve(self):
        t = np.random.default_rng(3).standard_normal((4, 8))
        recs = [RolloutRecord(t, t, 0, 0), RolloutRecord(-t + 2 * t.mean(-1, keepdims=True), t, 0, 1)]
        mean, std = acc_curve(recs)
        assert np.allclose(mean, 0.0) and np.allclose(std, 1.0)

    def test_band_ratio(self):
        t = np.random.default_rng(4).standard_normal((5, 16))
        r, flags = band_ratio_curve(RolloutRecord(t, t, 0, 0), BANDS)
        assert np.allclose(r, 0) and not flags.any()
        r, _ = band_ratio_curve(RolloutRecord(t, 2 * t, 0, 0), BANDS)
        assert np.allclose(r, np.log(4))

    def test_band_ratio_brute_force(self):
        rng = np.random.default_rng(5)
        p, t = rng.standard_normal((2, 16)), rng.standard_normal((2, 16))
        r, _ = band_ratio_curve(RolloutRecord(t, p, 0, 0), BANDS)
        for h in range(2):
            for b, (k1, k2) in enumerate(BANDS.bands):
                ep = sum(abs(sum(p[h, n] * np.exp(-2j * np.pi * k * n / 16) for n in range(16))) ** 2 for k in range(k1, k2))
                et = sum(abs(sum(t[h, n] * np.exp(-2j * np.pi * k * n / 16) for n in range(16))) ** 2 for k in range(k1, k2))
                assert r[h, b] == pytest.approx(np.log(ep / et), rel=1e-10)

    def test_empty_band_flagged(self):
        x = np.linspace(0, 2 * np.pi, 16, endpoint=False)
        t = np.tile(np.sin(x), (3, 1))
        r, flags = band_ratio_curve(RolloutRecord(t, t + 0.1 * np.cos(4 * x), 0, 0), BANDS)
        assert np.isfinite(r).all() and flags[:, 1].all() and not flags[:, 0].any()

    def test_spec_err_zero(self):
        t = np.random.default_rng(6).standard_normal((5, 16))
        assert spec_err(RolloutRecord(t, t, 0, 0), BANDS) == 0.0
        assert spec_err(RolloutRecord(t, 2 * t, 0, 0), BANDS) == pytest.approx(np.log(4))


class TestHorizon:
    def test_cases(self):
        assert predictability_horizon(np.ones(11)) == 10
        assert predictability_horizon(np.zeros(11)) == 0
        assert predictability_horizon(np.array([1, 0.9, 0.6, 0.4, 0.2])) == 2

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.floats(-1, 1), min_size=2, max_size=30), st.floats(-1, 1), st.floats(-1, 1))
    def test_enumeration_and_monotone(self, curve, a, b):
        c = np.array(curve)
        lo, hi = sorted((a, b))
        t = next((i for i, v in enumerate(c) if v < hi), None)
        assert predictability_horizon(c, hi) == (len(c) - 1 if t is None else max(t - 1, 0))
        assert predictability_horizon(c, lo) >= predictability_horizon(c, hi)
        assert predictability_horizon(c, -1.0) == len(c) - 1


class TestSummary:
    def records(self, scale):
        rng = np.random.default_rng(0)
        t = rng.standard_normal((4, 7, 16))
        return [RolloutRecord(t[i], t[i] + scale * rng.standard_normal((7, 16)), i, 0) for i in range(4)]

    def test_gains_formula(self):
        g = relative_gains({"rmse": 1.094, "acc": 0.828, "spec_err": 5.384e-2},
                           {"rmse": 2.941, "acc": -0.155, "spec_err": 1.663e-1})
        assert round(g["rmse"], 1) == 62.8 and round(g["acc"], 1) == 85.1 and round(g["spec_err"], 1) == 67.6

    def test_self_comparison_zero(self):
        recs = self.records(0.3)
        doc = summarize({"unet_ar": recs, "copy": recs}, RolloutSpec(2, 6, 1), BANDS, "l96")
        for block in doc["models"].values():
            assert block["gain_vs_baseline"] == {"rmse": 0.0, "acc": 0.0, "spec_err": 0.0}

    def test_document(self, tmp_path):
        doc = summarize({"msr_hine": self.records(0.1), "unet_ar": self.records(0.5)}, RolloutSpec(2, 6, 1), BANDS,
                        "ks", paper_ref=True)
        assert doc["paper_reference"]["end"]["msr_hine"]["rmse"] == 1.094
        assert doc["paper_reference"]["end"]["unet_ar"]["rmse"] == 2.941
        assert doc["paper_reference"]["horizons"] == [10, 25, 50, 100, 200, 400]
        assert doc["models"]["msr_hine"]["gain_vs_baseline"]["rmse"] > 0
        paths = write_results(doc, tmp_path)
        assert json.loads(paths[0].read_text()) == json.loads(json.dumps(doc))
        rows = (tmp_path / "rmse_curve.csv").read_text().splitlines()
        assert len(rows) == 8 and rows[0].startswith("h,msr_hine_mean")

    def test_merge(self):
        spec = RolloutSpec(2, 6, 1)
        a = summarize({"msr_hine": self.records(0.1)}, spec, BANDS, "ks")
        b = summarize({"unet_ar": self.records(0.5)}, spec, BANDS, "ks")
        m = merge_results([a, b])
        assert set(m["models"]) == {"msr_hine", "unet_ar"} and m["baseline"] == "unet_ar"
        c = summarize({"unet_ar": self.records(0.5)}, RolloutSpec(2, 5, 1), BANDS, "ks")
        with pytest.raises(InvalidComparisonError):
            merge_results([a, c])
