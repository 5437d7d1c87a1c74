import numpy as np
import pytest
import torch
from torch import nn

from latentfuse.config import ConfigError, LossConfig
from latentfuse.losses import (PerceptualExtractor, gradient_loss,
                               perceptual_loss, pixel_loss, total_loss)


@pytest.fixture(scope="module")
def extractor():
    return PerceptualExtractor(["relu4_3"])


class TestPixelLoss:
    def test_identity_is_zero(self):
        x = torch.rand(2, 1, 8, 8)
        assert pixel_loss(x, x).item() == 0.0

    def test_uniform_half_offset(self):
        x = torch.zeros(1, 1, 4, 4)
        x_hat = torch.full_like(x, 0.5)
        assert pixel_loss(x, x_hat).item() == pytest.approx(0.25, abs=1e-7)

    def test_symmetry(self):
        a, b = torch.rand(1, 1, 6, 6), torch.rand(1, 1, 6, 6)
        assert pixel_loss(a, b).item() == pytest.approx(pixel_loss(b, a).item(), abs=1e-9)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            pixel_loss(torch.zeros(1, 1, 4, 4), torch.zeros(1, 1, 4, 5))


def _sobel_oracle(img, kernel):
    """Straight-loop cross-correlation with replicate padding."""
    h, w = img.shape
    out = np.zeros((h, w))
    for i in range(h):
        for j in range(w):
            acc = 0.0
            for u in (-1, 0, 1):
                for v in (-1, 0, 1):
                    ii = min(max(i + u, 0), h - 1)
                    jj = min(max(j + v, 0), w - 1)
                    acc += kernel[u + 1][v + 1] * img[ii, jj]
            out[i, j] = acc
    return out


class TestGradientLoss:
    def test_identity_is_zero(self):
        x = torch.rand(2, 1, 8, 8)
        assert gradient_loss(x, x).item() == 0.0

    def test_two_constants_give_zero(self):
        a = torch.full((1, 1, 6, 6), 0.25)
        b = torch.full((1, 1, 6, 6), 0.75)
        assert gradient_loss(a, b).item() == 0.0

    def test_ramp_against_enumerated_oracle(self):
        # frozen during development from the straight-loop oracle below
        ramp = np.tile(np.arange(5.0), (5, 1))
        const = np.zeros((5, 5))
        kx = [[-1, 0, 1], [-2, 0, 2], [-1, 0, 1]]
        ky = [[-1, -2, -1], [0, 0, 0], [1, 2, 1]]
        expect = (np.mean((_sobel_oracle(ramp, kx) - _sobel_oracle(const, kx)) ** 2)
                  + np.mean((_sobel_oracle(ramp, ky) - _sobel_oracle(const, ky)) ** 2))
        assert expect == pytest.approx(44.8, abs=1e-12)
        got = gradient_loss(torch.tensor(ramp)[None, None],
                            torch.tensor(const)[None, None]).item()
        assert got == pytest.approx(expect, rel=1e-6)

    def test_invariant_under_shared_constant_shift(self):
        rng = np.random.default_rng(0)
        a = torch.tensor(rng.random((1, 1, 7, 7)))
        b = torch.tensor(rng.random((1, 1, 7, 7)))
        base = gradient_loss(a, b).item()
        shifted = gradient_loss(a + 0.5, b + 0.5).item()
        assert shifted == pytest.approx(base, rel=1e-10)


class TestPerceptualLoss:
    def test_identity_is_zero(self, extractor):
        x = torch.rand(1, 1, 16, 16)
        assert perceptual_loss(extractor, x, x).item() == 0.0

    def test_nonnegative(self, extractor):
        rng = torch.Generator().manual_seed(0)
        for _ in range(5):
            x = torch.rand(1, 1, 16, 16, generator=rng)
            y = torch.rand(1, 1, 16, 16, generator=rng)
            assert perceptual_loss(extractor, x, y).item() >= 0.0

    def test_unknown_layer_rejected(self, extractor):
        with pytest.raises(ConfigError, match="unknown perceptual layer"):
            perceptual_loss(extractor, torch.rand(1, 1, 16, 16),
                            torch.rand(1, 1, 16, 16), layers=["relu9_9"])
        with pytest.raises(ConfigError):
            PerceptualExtractor(["not_a_layer"])

    def test_extractor_is_frozen(self, extractor):
        assert all(not p.requires_grad for p in extractor.parameters())
        extractor.train()  # must stay in eval mode
        assert not extractor.training

    def test_fallback_is_deterministic(self):
        a = PerceptualExtractor(["relu2_2"])
        b = PerceptualExtractor(["relu2_2"])
        assert a.pretrained == b.pretrained
        x = torch.rand(1, 1, 16, 16)
        fa = a.extract(x)["relu2_2"]
        fb = b.extract(x)["relu2_2"]
        assert torch.equal(fa, fb)


class TestTotalLoss:
    def test_weighted_sum_arithmetic(self):
        cfg = LossConfig(lambda_grad=0.5, lambda_perp=0.5)
        assert total_loss(cfg, 1.0, 2.0, 4.0) == pytest.approx(4.0)

    def test_zero_weights_degenerate_to_pixel(self):
        cfg = LossConfig(lambda_grad=0.0, lambda_perp=0.0)
        assert total_loss(cfg, 3.25, 100.0, 100.0) == pytest.approx(3.25)

    def test_default_balancers_are_half(self):
        cfg = LossConfig()
        assert cfg.lambda_grad == 0.5 and cfg.lambda_perp == 0.5

    def test_negative_weights_rejected(self):
        with pytest.raises(ConfigError):
            LossConfig(lambda_grad=-0.1)


class TestGradientFlow:
    def test_pixel_plus_gradient_matches_finite_differences(self):
        # double precision; central differences with eps=1e-3
        torch.manual_seed(0)
        model = nn.Sequential(nn.Conv2d(1, 3, 3, padding=1), nn.LeakyReLU(0.2),
                              nn.Conv2d(3, 1, 3, padding=1)).double()
        x = torch.rand(1, 1, 8, 8, dtype=torch.float64)

        def objective():
            out = model(x)
            return pixel_loss(x, out) + 0.5 * gradient_loss(x, out)

        loss = objective()
        loss.backward()
        eps = 1e-3
        for p in model.parameters():
            grad = p.grad.flatten()
            flat = p.data.flatten()
            for idx in range(flat.numel()):
                orig = flat[idx].item()
                flat[idx] = orig + eps
                plus = objective().item()
                flat[idx] = orig - eps
                minus = objective().item()
                flat[idx] = orig
                fd = (plus - minus) / (2 * eps)
                if abs(grad[idx].item()) > 1e-6:
                    rel = abs(fd - grad[idx].item()) / max(abs(grad[idx].item()), 1e-12)
                    assert rel < 1e-2
