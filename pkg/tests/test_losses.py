import numpy as np
import pytest

import oracles
from vcnet.losses import (
    LossWeights,
    SsimParams,
    dssim,
    gradient_diff,
    idn_loss,
    l1_data,
    rsn_loss,
    ssim_map,
    upsample_s,
    vcn_loss,
)
from vcnet.networks import Mode
from vcnet.tensor import ShapeError, Tensor


@pytest.fixture
def pair(rng):
    return rng.uniform(0, 1, (16, 16)), rng.uniform(0, 1, (16, 16))


class TestOracles:
    def test_l1(self, pair):
        a, b = pair
        assert l1_data(Tensor(a), Tensor(b)).item() == pytest.approx(oracles.l1_direct(a, b), abs=1e-12)

    def test_gradient_difference(self, pair):
        a, b = pair
        assert gradient_diff(Tensor(a), Tensor(b)).item() == pytest.approx(oracles.gradient_diff_direct(a, b), abs=1e-12)

    def test_gradient_difference_small_images(self, rng):
        for h, w in ((1, 1), (1, 5), (2, 2), (3, 7)):
            a, b = rng.uniform(size=(h, w)), rng.uniform(size=(h, w))
            assert gradient_diff(Tensor(a), Tensor(b)).item() == pytest.approx(oracles.gradient_diff_direct(a, b), abs=1e-12)

    def test_ssim_map(self, pair):
        a, b = pair
        np.testing.assert_allclose(ssim_map(Tensor(a), Tensor(b)).data, oracles.ssim_direct(a, b), atol=1e-12)

    def test_ssim_custom_constants(self, pair):
        a, b = pair
        prm = SsimParams(c1=0.01, c2=0.03, window=4)
        np.testing.assert_allclose(ssim_map(Tensor(a), Tensor(b), prm).data,
                                   oracles.ssim_direct(a, b, 0.01, 0.03, 4), atol=1e-12)

    def test_batch_mean(self, rng):
        a, b = rng.uniform(size=(3, 1, 12, 12)), rng.uniform(size=(3, 1, 12, 12))
        per = [oracles.gradient_diff_direct(a[i, 0], b[i, 0]) for i in range(3)]
        assert gradient_diff(Tensor(a), Tensor(b)).item() == pytest.approx(np.mean(per), abs=1e-12)


class TestIdentities:
    def test_self_dssim_is_exactly_zero(self, pair):
        a, _ = pair
        assert dssim(Tensor(a), Tensor(a.copy())).item() == 0.0

    def test_constant_images(self):
        zero, one = np.zeros((16, 16)), np.ones((16, 16))
        assert gradient_diff(Tensor(zero + 0.2), Tensor(zero + 0.9)).item() == 0.0
        # flat windows: the structure factor is c2/c2 = 1, the luminance factor c1/(1 + c1)
        c1 = SsimParams().c1
        np.testing.assert_allclose(ssim_map(Tensor(zero), Tensor(one)).data, c1 / (1 + c1), rtol=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            l1_data(Tensor(np.zeros((4, 4))), Tensor(np.zeros((4, 5))))

    def test_upsample_s(self):
        y = Tensor(np.zeros((1, 1, 4, 4)))
        assert upsample_s(y, Mode.FULL) is y
        assert upsample_s(y, "low").shape == (1, 1, 8, 8)


class TestComposites:
    def test_idn_terms(self, rng):
        d, x = Tensor(rng.uniform(size=(1, 1, 8, 8))), Tensor(rng.uniform(size=(1, 1, 8, 8)))
        total, parts = idn_loss(d, x)
        assert set(parts) == {"data", "grad"}
        assert total.item() == pytest.approx(parts["data"].item() + parts["grad"].item())
        total, parts = idn_loss(d, x, "dnnc")
        assert set(parts) == {"data"}

    def test_vcn_dssim_only_in_low_mode(self, rng):
        v, d = Tensor(rng.uniform(size=(1, 1, 16, 16))), Tensor(rng.uniform(size=(1, 1, 16, 16)))
        assert "dssim" not in vcn_loss(v, d, Mode.FULL)[1]
        total, parts = vcn_loss(v, d, Mode.LOW, weights=LossWeights(1.0, 2.0, 0.5))
        want = parts["data"].item() + 2 * parts["grad"].item() + 0.5 * parts["dssim"].item()
        assert total.item() == pytest.approx(want)

    def test_rsn_uses_upsampled_code(self, rng):
        x = Tensor(rng.uniform(size=(1, 1, 16, 16)))
        v = Tensor(rng.uniform(size=(1, 1, 16, 16)))
        y = Tensor(rng.uniform(size=(1, 1, 8, 8)))
        _, parts = rsn_loss(v, x, y, Mode.LOW)
        assert parts["dssim"].item() == pytest.approx(dssim(upsample_s(y, Mode.LOW), x).item())
        with pytest.raises(ValueError):
            rsn_loss(v, x, None, Mode.LOW)

    def test_negative_weights_rejected(self):
        with pytest.raises(ValueError):
            LossWeights(data=-1.0)
