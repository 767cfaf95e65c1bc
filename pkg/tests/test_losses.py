import numpy as np
import pytest

from hafuse.autodiff import Tensor
from hafuse.errors import ConfigError, DimensionError, GeometryError
from hafuse.losses import (LossWeights, loss_adversarial_G, loss_D_detailed, loss_D_salient, loss_infrared,
                           loss_visible, total_D, total_G)

F64 = np.float64


def T(x):
    return Tensor(np.asarray(x, dtype=F64), dtype=F64)


def full(value, shape=(1, 1, 1, 1)):
    return T(np.full(shape, value))


def sobel_magnitude_oracle(img):
    """Hand-rolled Sobel magnitude sqrt(gx^2 + gy^2 + 1e-12) with edge-replicated borders."""
    k_x = np.array([[-1, 0, 1], [-2, 0, 2], [-1, 0, 1]], dtype=F64)
    k_y = k_x.T
    p = np.pad(img, 1, mode="edge")
    h, w = img.shape
    out = np.zeros_like(img, dtype=F64)
    for i in range(h):
        for j in range(w):
            win = p[i:i + 3, j:j + 3]
            out[i, j] = np.sqrt((win * k_x).sum() ** 2 + (win * k_y).sum() ** 2 + 1e-12)
    return out


class TestInfrared:
    def test_zero_and_half_offset(self):
        a = T(np.random.default_rng(0).uniform(0, 1, (1, 1, 2, 2)))
        assert loss_infrared(a, a).item() == 0
        assert loss_infrared(T(a.data + 0.5), a).item() == pytest.approx(0.25, abs=1e-15)

    def test_not_offset_invariant(self):
        a = T(np.random.default_rng(1).uniform(0, 1, (1, 1, 4, 4)))
        assert loss_infrared(T(a.data + 0.1), a).item() > 0

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            loss_infrared(T(np.zeros((1, 1, 2, 2))), T(np.zeros((1, 1, 2, 3))))


class TestVisible:
    def test_constants_give_zero(self):
        assert loss_visible(full(0.2, (1, 1, 5, 5)), full(0.9, (1, 1, 5, 5))).item() == 0

    def test_step_edge_matches_hand_convolution(self):
        edge = np.zeros((6, 6))
        edge[:, 3:] = 1.0
        got = loss_visible(full(0.3, (1, 1, 6, 6)), T(edge[None, None])).item()
        expected = np.abs(sobel_magnitude_oracle(np.full((6, 6), 0.3)) - sobel_magnitude_oracle(edge)).mean()
        assert got == pytest.approx(expected, rel=1e-12)

    def test_offset_invariant(self):
        rng = np.random.default_rng(2)
        a, b = rng.uniform(0, 1, (2, 1, 1, 6, 6))
        base = loss_visible(T(a), T(b)).item()
        assert loss_visible(T(a + 0.25), T(b - 0.1)).item() == pytest.approx(base, rel=1e-12)

    def test_geometry_error_below_3x3(self):
        with pytest.raises(GeometryError):
            loss_visible(T(np.zeros((1, 1, 2, 2))), T(np.zeros((1, 1, 2, 2))))


class TestAdversarial:
    @pytest.mark.parametrize("p_S,p_D,expected", [(1.0, 1.0, 0.0), (0.5, 0.5, 0.5), (0.9, 0.1, 0.82)])
    def test_examples(self, p_S, p_D, expected):
        assert loss_adversarial_G(full(p_S), full(p_D)).item() == pytest.approx(expected, abs=1e-12)

    def test_missing_discriminator_contributes_nothing(self):
        assert loss_adversarial_G(full(0.9), None).item() == pytest.approx(0.01, abs=1e-15)
        with pytest.raises(ConfigError):
            loss_adversarial_G(None, None)

    @pytest.mark.parametrize("fn", [loss_D_salient, loss_D_detailed])
    @pytest.mark.parametrize("real,fake,expected", [(1.0, 0.0, 0.0), (0.5, 0.5, 0.25), (0.8, 0.3, 0.065)])
    def test_discriminator_examples(self, fn, real, fake, expected):
        assert fn(full(real), full(fake)).item() == pytest.approx(expected, abs=1e-12)

    def test_batch_mean(self):
        p = T(np.array([0.0, 1.0]).reshape(2, 1, 1, 1))
        assert loss_adversarial_G(p, None).item() == pytest.approx(0.5)


class TestTotals:
    def test_perfect_fusion_is_zero(self):
        a = T(np.random.default_rng(3).uniform(0, 1, (2, 1, 8, 8)))
        br = total_G(a, a, a, full(1.0, (2, 1, 1, 1)), full(1.0, (2, 1, 1, 1)))
        assert br.L_G.item() == 0

    def test_generator_identity(self):
        rng = np.random.default_rng(4)
        f, ir, vi = (T(rng.uniform(0, 1, (2, 1, 8, 8))) for _ in range(3))
        pS, pD = T(rng.uniform(0, 1, (2, 1, 1, 1))), T(rng.uniform(0, 1, (2, 1, 1, 1)))
        v = total_G(f, ir, vi, pS, pD).values()
        assert v["L_basic"] == pytest.approx(v["L_visible"] + 5 * v["L_infrared"], rel=1e-12)
        assert v["L_G"] == pytest.approx(v["L_adver"] + 100 * v["L_basic"], rel=1e-12)
        assert v["L_D"] is None

    def test_discriminator_totals(self):
        perfect = total_D(full(1.0), full(0.0), full(1.0), full(0.0))
        assert perfect.L_D.item() == 0
        blind = total_D(full(0.5), full(0.5), full(0.5), full(0.5), LossWeights(100, 5, 5))
        assert blind.L_D.item() == pytest.approx(1.5, abs=1e-12)

    def test_single_discriminator_totals(self):
        only_dd = total_D(None, None, full(0.5), full(0.5))
        assert only_dd.L_DS is None and only_dd.L_D.item() == pytest.approx(0.25)
        only_ds = total_D(full(0.5), full(0.5), None, None)
        assert only_ds.L_DD is None and only_ds.L_D.item() == pytest.approx(1.25)

    def test_weights_must_be_positive(self):
        with pytest.raises(ConfigError):
            LossWeights(alpha=0)
