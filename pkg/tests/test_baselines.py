import pytest
import torch

from chaos_forecast.baselines import (
    HineL2,
    HineL2Config,
    UNetAr,
    UNetArConfig,
    count_parameters,
    hine_l2_step,
    parity_width,
    unet_ar_step,
)
from chaos_forecast.latents import encode_level
from chaos_forecast.predictor import MsrHine, MsrHineConfig
from helpers import fd_relative_error, probe

pytestmark = pytest.mark.usefixtures("float64")


def ar(**kw):
    torch.manual_seed(0)
    return UNetAr(UNetArConfig(16, width=4, **kw))


def hine(**kw):
    torch.manual_seed(0)
    return HineL2(HineL2Config(16, cutoff=4, width=4, **kw))


class TestUNetAr:
    def test_identity(self):
        u = torch.randn(2, 16)
        assert torch.equal(unet_ar_step(ar(u_scale=0.0), u), u)

    def test_shift_equivariance(self):
        m, u = ar(), torch.randn(1, 16)
        assert torch.allclose(unet_ar_step(m, torch.roll(u, 5, -1)), torch.roll(unet_ar_step(m, u), 5, -1), atol=1e-14)

    def test_no_injections(self):
        assert ar().unet.inj1 is None and ar().unet.inj2 is None

    def test_gradients(self):
        m = ar()
        u = torch.randn(2, 16, requires_grad=True)
        assert fd_relative_error(lambda: probe(unet_ar_step(m, u)), [*m.parameters(), u], max_entries=60) < 1e-5


class TestHineL2:
    def test_latent_dim(self):
        m = hine()
        _, z = hine_l2_step(m, torch.randn(3, 16), torch.randn(3, 8))
        assert z.shape == (3, 8)

    def test_consumes_encoder_output(self):
        m = hine()
        u0, u1 = torch.randn(2, 16), torch.randn(2, 16)
        seen = {}
        m.unet.inj1.register_forward_hook(lambda mod, inp, out: seen.setdefault("z", inp[0]))
        hine_l2_step(m, u0, m.encode(u1))
        assert torch.equal(seen["z"], encode_level(u1, m.spec))

    def test_identity_and_zero_latent(self):
        m = hine(u_scale=0.0)
        with torch.no_grad():
            m.latent_head.weight.zero_()
            m.latent_head.bias.zero_()
        u = torch.randn(2, 16)
        u1, z = hine_l2_step(m, u, torch.randn(2, 8))
        assert torch.equal(u1, u) and torch.count_nonzero(z) == 0

    def test_closed_loop_composition(self):
        m = hine()
        u0, z1 = torch.randn(1, 16), torch.randn(1, 8)
        a1, za = hine_l2_step(m, u0, z1)
        a2, zb = hine_l2_step(m, a1, za)
        x3 = m.unet(a1, za, None, return_coarse=True)[1]
        assert torch.equal(a2, m.unet(a1, za))
        assert torch.equal(zb, m.latent_head(x3.mean(-1)))

    def test_gradients(self):
        m = hine()
        u, z = torch.randn(2, 16, requires_grad=True), torch.randn(2, 8, requires_grad=True)

        def f():
            a, b = hine_l2_step(m, u, z)
            return probe(a) + probe(b, 2)

        assert fd_relative_error(f, [*m.parameters(), u, z], max_entries=60) < 1e-5


def test_parameter_parity():
    msr = MsrHine(MsrHineConfig(system="ks", n_phys=64, width=16))
    target = count_parameters(msr)
    w_ar = parity_width(target, lambda w: UNetAr(UNetArConfig(64, w)))
    w_h = parity_width(target, lambda w: HineL2(HineL2Config(64, 16, width=w)))
    assert abs(count_parameters(UNetAr(UNetArConfig(64, w_ar))) / target - 1) < 0.15
    assert abs(count_parameters(HineL2(HineL2Config(64, 16, width=w_h))) / target - 1) < 0.15
