import math

import pytest
import torch
import torch.nn.functional as F
from hypothesis import given, settings
from hypothesis import strategies as st

from chaos_forecast.errors import InvalidCallError, InvalidConfigError
from chaos_forecast.latents import FeatureCache, encode_hierarchy
from chaos_forecast.predictor import (
    FusionGate,
    MsrHine,
    MsrHineConfig,
    MultiRateSpec,
    PeriodicConv1d,
    UNet1d,
    UNetConfig,
    gated_fuse,
    hidden_correct,
    msr_step,
    multirate_advance,
    periodic_conv,
    unet_forward,
)
from helpers import fd_relative_error, probe

pytestmark = pytest.mark.usefixtures("float64")


def tiny_cfg(**kw):
    base = dict(
        system="ks", n_phys=16, domain_len=2 * math.pi * 2, cutoffs=(4, 2), d_hid=(6, 5), d_in=(4, 3),
        n_pool=4, width=4, strides=(1, 2),
    )
    base.update(kw)
    return MsrHineConfig(**base)


class TestPeriodicConv:
    def test_identity_kernel(self):
        w = torch.zeros(1, 1, 5)
        w[0, 0, 2] = 1.0
        x = torch.randn(2, 1, 12)
        assert torch.equal(periodic_conv(x, w), x)

    def test_constant_preserved(self):
        w = torch.full((1, 1, 3), 1 / 3)
        out = periodic_conv(torch.full((1, 1, 8), 2.5), w)
        assert torch.allclose(out, torch.full((1, 1, 8), 2.5), atol=1e-15)

    def test_matches_circular_padding(self):
        conv = PeriodicConv1d(3, 2, 5)
        ref = torch.nn.Conv1d(3, 2, 5, padding=2, padding_mode="circular")
        ref.load_state_dict(conv.state_dict())
        x = torch.randn(2, 3, 11)
        assert torch.allclose(conv(x), ref(x), atol=1e-14)

    def test_even_kernel(self):
        with pytest.raises(InvalidConfigError):
            PeriodicConv1d(1, 1, 4)
        with pytest.raises(InvalidConfigError):
            periodic_conv(torch.zeros(1, 1, 4), torch.zeros(1, 1, 2))

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 10_000), st.integers(-20, 20))
    def test_shift_equivariance(self, seed, shift):
        torch.manual_seed(seed)
        conv = PeriodicConv1d(2, 3, 3)
        x = torch.randn(1, 2, 16)
        assert torch.equal(conv(torch.roll(x, shift, -1)), torch.roll(conv(x), shift, -1))


class TestUNet:
    def net(self, **kw):
        torch.manual_seed(0)
        return UNet1d(UNetConfig(16, width=4, inj_dims=(3, 2), **kw))

    def test_zero_update_scale(self):
        net = self.net(u_scale=0.0)
        u = torch.randn(2, 16)
        assert torch.equal(net(u, torch.randn(2, 3), torch.randn(2, 2)), u)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 10_000), st.floats(0.01, 50))
    def test_residual_bound(self, seed, amp):
        net = self.net(u_scale=0.3)
        g = torch.Generator().manual_seed(seed)
        u = amp * torch.randn(2, 16, generator=g)
        out = net(u, amp * torch.randn(2, 3, generator=g), torch.randn(2, 2, generator=g))
        assert (out - u).abs().max() <= 0.3 + 1e-12

    def test_shift_equivariance(self):
        net = self.net()
        u, a, b = torch.randn(1, 16), torch.randn(1, 3), torch.randn(1, 2)
        assert torch.allclose(net(torch.roll(u, 3, -1), a, b), torch.roll(net(u, a, b), 3, -1), atol=1e-14)

    def test_shapes_and_errors(self):
        net = self.net()
        with pytest.raises(InvalidConfigError):
            net(torch.randn(1, 12), torch.randn(1, 3), torch.randn(1, 2))
        with pytest.raises(InvalidConfigError):
            net(torch.randn(1, 16), torch.randn(1, 4), torch.randn(1, 2))
        with pytest.raises(InvalidConfigError):
            UNetConfig(16, kernel=4)

    def test_downsample_variant(self):
        torch.manual_seed(0)
        net = UNet1d(UNetConfig(16, width=4, downsample=True))
        assert net(torch.randn(3, 16)).shape == (3, 16)

    def test_direct_mode(self):
        torch.manual_seed(0)
        net = UNet1d(UNetConfig(16, width=4, mode="direct"))
        u = torch.randn(1, 16)
        assert not torch.allclose(net(u), u)

    def test_gradients(self):
        net = self.net()
        u = torch.randn(2, 16, requires_grad=True)
        a, b = torch.randn(2, 3, requires_grad=True), torch.randn(2, 2, requires_grad=True)
        err = fd_relative_error(lambda: probe(unet_forward(net, u, a, b)), [*net.parameters(), u, a, b])
        assert err < 1e-5


class TestGate:
    def test_init_probability(self):
        gate = FusionGate(3, 0.9)
        z, g = gated_fuse(gate, torch.zeros(1, 3), torch.ones(1, 3))
        assert torch.allclose(z, torch.full((1, 3), 0.9), atol=1e-15)
        assert torch.allclose(g, torch.full((1, 3), 0.9), atol=1e-15)

    def test_saturation(self):
        gate = FusionGate(2)
        zp, zq = torch.randn(1, 2), torch.randn(1, 2)
        with torch.no_grad():
            gate.lin.bias.fill_(800.0)
        assert torch.allclose(gated_fuse(gate, zp, zq)[0], zq)
        with torch.no_grad():
            gate.lin.bias.fill_(-800.0)
        assert torch.allclose(gated_fuse(gate, zp, zq)[0], zp)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 10_000))
    def test_convexity(self, seed):
        torch.manual_seed(seed)
        gate = FusionGate(5)
        torch.nn.init.normal_(gate.lin.weight, std=3.0)
        zp, zq = 4 * torch.randn(3, 5), 4 * torch.randn(3, 5)
        z, _ = gated_fuse(gate, zp, zq)
        assert torch.all(z >= torch.minimum(zp, zq) - 1e-12)
        assert torch.all(z <= torch.maximum(zp, zq) + 1e-12)

    def test_gradients(self):
        gate = FusionGate(3)
        torch.nn.init.normal_(gate.lin.weight, std=0.5)
        zp, zq = torch.randn(2, 3, requires_grad=True), torch.randn(2, 3, requires_grad=True)
        assert fd_relative_error(lambda: probe(gated_fuse(gate, zp, zq)[0]), [*gate.parameters(), zp, zq]) < 1e-5


class TestMsrStep:
    def model(self, **kw):
        torch.manual_seed(0)
        return MsrHine(tiny_cfg(**kw))

    def test_shapes_and_aux(self):
        m = self.model()
        u = torch.randn(3, 16)
        st_ = m.init_state(u)
        u1, st1, aux = msr_step(m, u, st_, torch.randn(3, 16))
        assert u1.shape == (3, 16) and st1.t == 1
        assert [z.shape for z in aux["z_prior"]] == [(3, 8), (3, 4)]
        assert set(aux) >= {"z_prior", "z_post", "z_fused", "gate", "h_prev", "h_next", "h_corrected", "off_stride"}

    def test_teacher_forced_without_truth(self):
        m = self.model()
        u = torch.randn(1, 16)
        with pytest.raises(InvalidCallError):
            msr_step(m, u, m.init_state(u), None, teacher_forced=True)

    def test_fully_disabled(self):
        m = self.model(u_scale=0.0, alpha_corr=0.0, policy="hold", strides=(10**9, 10**9))
        u = torch.randn(2, 16)
        s = m.init_state(u)
        hs = []
        for _ in range(4):
            u_next, s, _ = msr_step(m, u, s)
            assert torch.equal(u_next, u)
            hs.append(s.hidden)
        for later in hs[1:]:
            assert all(torch.equal(a, b) for a, b in zip(hs[0], later))

    def test_gate_one_fusion_identity(self):
        m = self.model()
        with torch.no_grad():
            for g in m.gates:
                g.lin.bias.fill_(800.0)
        u, truth = torch.randn(2, 16), torch.randn(2, 16)
        u_tf, _, aux_tf = msr_step(m, u, m.init_state(u), truth)
        u_cl, _, aux_cl = msr_step(m, u, m.init_state(u))
        for a, b in zip(aux_tf["z_fused"], m.encode(truth)):
            assert torch.allclose(a, b)
        for a, b in zip(aux_cl["z_fused"], m.encode(u_cl)):
            assert torch.allclose(a, b)

    def test_scripted_composition(self):
        m = self.model()
        u, truth = torch.randn(2, 16), torch.randn(2, 16)
        state = m.init_state(u)
        u_hat, new, aux = msr_step(m, u, state, truth)

        cache = FeatureCache()
        c1, c2 = m.conditioner(u, encode_hierarchy(u, m.specs)[1], cache)
        h1, z1, _ = multirate_advance(0, m.rates[0], m.rnns[0], torch.zeros(2, 6), c1)
        h2, z2, _ = multirate_advance(0, m.rates[1], m.rnns[1], torch.zeros(2, 5), c2)
        inj1 = torch.cat([z1, F.layer_norm(h1, (6,))], -1)
        inj2 = torch.cat([z2, F.layer_norm(h2, (5,))], -1)
        expect = unet_forward(m.unet, u, inj1, inj2)
        assert torch.equal(u_hat, expect)
        post = encode_hierarchy(truth, m.specs)
        f1, _ = gated_fuse(m.gates[0], z1, post[0])
        f2, _ = gated_fuse(m.gates[1], z2, post[1])
        assert torch.equal(new.fused[0], f1) and torch.equal(new.fused[1], f2)
        assert torch.equal(new.hidden[0], hidden_correct(m.couplers[0], h1, f1, z1))
        assert torch.equal(new.hidden[1], hidden_correct(m.couplers[1], h2, f2, z2))

    def test_off_stride_flags(self):
        m = self.model(strides=(1, 3))
        u = torch.randn(1, 16)
        s = m.init_state(u)
        flags = []
        for _ in range(4):
            u, s, aux = msr_step(m, u, s)
            flags.append(aux["off_stride"][1])
        assert flags == [False, True, True, False]

    def test_l96_variant(self):
        torch.manual_seed(0)
        m = MsrHine(MsrHineConfig(system="l96", n_phys=16, cutoffs=(4, 2), n_pool=4, width=4, d_hid=(6, 5), d_in=(4, 3)))
        u = torch.randn(2, 16)
        u1, _, _ = msr_step(m, u, m.init_state(u))
        assert u1.shape == (2, 16) and torch.isfinite(u1).all()

    @pytest.mark.parametrize("system", ["ks", "l96"])
    def test_end_to_end_gradients(self, system):
        torch.manual_seed(1)
        m = MsrHine(tiny_cfg(system=system, bands=((1, 3), (3, 6))))
        u0, truth = torch.randn(2, 16), torch.randn(2, 16)
        u = torch.randn(2, 16, requires_grad=True)

        def f():
            s = m.init_state(u0)
            u1, s, aux = msr_step(m, u, s, truth)
            u2, s, aux2 = msr_step(m, u1, s)
            return probe(u2) + probe(aux2["z_fused"][1], 3) + probe(s.hidden[0], 4)

        assert fd_relative_error(f, [*m.parameters(), u], max_entries=40) < 1e-4
