import numpy as np
import pytest
import torch
from torch import nn

from latentfuse.config import ConfigError, EncoderConfig
from latentfuse.network import (DilatedBranches, EdgeEnhancer, FusionAutoencoder,
                                PyramidAttentionBlock, ResidualAttentionBlock,
                                build_autoencoder, load_checkpoint, param_count,
                                save_checkpoint, zero_all_biases)
from latentfuse.ops import sobel_gradients, sobel_magnitude

CFG = EncoderConfig()


def seeded_model(seed=0, **kwargs):
    torch.manual_seed(seed)
    return build_autoencoder(**kwargs)


class TestDilatedBranches:
    def test_concat_shape(self):
        block = DilatedBranches(CFG.shallow_channels, CFG.branch_channels,
                                CFG.dilation_rates, CFG.leaky_slope)
        x = torch.randn(1, CFG.shallow_channels, 64, 64)
        out = block(x)
        assert out.shape == (1, 3 * CFG.branch_channels, 64, 64)

    @pytest.mark.parametrize("rate", [1, 3, 5])
    def test_each_rate_preserves_16x16(self, rate):
        block = DilatedBranches(4, 4, [rate], 0.2)
        out = block(torch.randn(1, 4, 16, 16))
        assert out.shape[-2:] == (16, 16)

    def test_zero_input_zero_bias_gives_zero(self):
        block = DilatedBranches(4, 4, [1, 3, 5], 0.2)
        zero_all_biases(block)
        out = block(torch.zeros(1, 4, 8, 8))
        assert torch.all(out == 0)


class TestResidualAttention:
    def test_shape_preserved(self):
        block = ResidualAttentionBlock(8, 2, 2, 0.2)
        x = torch.randn(2, 8, 16, 16)
        assert block(x).shape == x.shape

    def test_zeroed_weights_reduce_to_identity(self):
        block = ResidualAttentionBlock(8, 2, 2, 0.2)
        for p in block.parameters():
            nn.init.zeros_(p)
        x = torch.randn(1, 8, 16, 16)
        assert torch.allclose(block(x), x, atol=0)

    def test_mask_strictly_inside_unit_interval(self):
        block = ResidualAttentionBlock(8, 2, 2, 0.2)
        mask = block.attention_mask(torch.randn(1, 8, 16, 16))
        assert (mask > 0).all() and (mask < 1).all()

    def test_indivisible_size_raises(self):
        block = ResidualAttentionBlock(8, 2, 2, 0.2)
        with pytest.raises(ValueError, match="not divisible"):
            block(torch.randn(1, 8, 15, 16))


class TestPyramidAttention:
    def test_projects_to_latent_width(self):
        block = PyramidAttentionBlock(12, CFG.pyramid_channels, [1, 2, 3],
                                      CFG.latent_channels, 0.2)
        out = block(torch.randn(1, 12, 32, 32))
        assert out.shape == (1, CFG.latent_channels, 32, 32)

    @pytest.mark.parametrize("depth", [1, 2, 3])
    def test_stack_receptive_field_is_2n_plus_1(self, depth):
        # make every weight positive so the impulse response cannot cancel
        block = PyramidAttentionBlock(1, 2, [depth], 2, 0.2)
        zero_all_biases(block)
        stack = block.stacks[0]
        with torch.no_grad():
            for m in stack.modules():
                if isinstance(m, nn.Conv2d):
                    m.weight.abs_()
        x = torch.zeros(1, 1, 15, 15)
        x[0, 0, 7, 7] = 1.0
        with torch.no_grad():
            response = stack(x).abs().sum(dim=1)[0]
        rows = torch.nonzero(response.sum(dim=1) > 0).flatten()
        cols = torch.nonzero(response.sum(dim=0) > 0).flatten()
        expected = 2 * depth + 1
        assert rows.max() - rows.min() + 1 == expected
        assert cols.max() - cols.min() + 1 == expected

    def test_zero_input_zero_bias_gives_zero(self):
        block = PyramidAttentionBlock(4, 4, [1, 2, 3], 6, 0.2)
        zero_all_biases(block)
        assert torch.all(block(torch.zeros(1, 4, 8, 8)) == 0)


class TestSobelOps:
    def test_constant_input_zero_response(self):
        # 0.5 is exactly representable, so the kernel sums cancel exactly
        x = torch.full((1, 3, 9, 9), 0.5)
        gx, gy = sobel_gradients(x)
        assert torch.all(gx == 0) and torch.all(gy == 0)
        assert torch.all(sobel_magnitude(x) == 0)

    def test_arbitrary_constant_near_zero_response(self):
        x = torch.full((1, 2, 9, 9), 0.7)
        assert sobel_magnitude(x).abs().max() < 1e-6

    def test_step_edge_localized_response(self):
        x = torch.zeros(1, 1, 8, 8)
        x[..., 4:] = 1.0  # vertical step edge between columns 3 and 4
        gx, _ = sobel_gradients(x)
        assert torch.all(gx[..., 3:5] != 0)
        assert torch.all(gx[..., :2] == 0) and torch.all(gx[..., 6:] == 0)

    def test_linear_ramp_constant_interior_response(self):
        ramp = torch.arange(9, dtype=torch.float32).repeat(9, 1)[None, None]
        gx, gy = sobel_gradients(ramp)
        assert torch.allclose(gx[..., 1:-1, 1:-1], torch.full_like(gx[..., 1:-1, 1:-1], 8.0))
        assert torch.all(gy == 0)


class TestEdgeEnhancer:
    def test_output_channels_and_shape(self):
        edge = EdgeEnhancer(8, 24, 0.2)
        out = edge(torch.randn(1, 8, 16, 16))
        assert out.shape == (1, 24, 16, 16)

    def test_gradient_branch_silent_on_constant_input(self):
        # the projection sees an all-zero magnitude map, so only its bias
        # can reach the output: zeroing the weight must change nothing
        edge = EdgeEnhancer(4, 8, 0.2)
        x = torch.full((1, 4, 8, 8), 0.5)
        with torch.no_grad():
            with_grad_branch = edge(x)
            nn.init.zeros_(edge.grad_proj.weight)
            without = edge(x)
        assert torch.allclose(with_grad_branch, without, atol=1e-6)


class TestEncodeDecode:
    @pytest.mark.parametrize("size", [32, 64, 128, 256])
    def test_encode_preserves_spatial_size(self, size):
        model = seeded_model()
        x = torch.rand(1, 1, size, size)
        z = model.encode(x)
        assert z.shape == (1, CFG.latent_channels, size, size)

    def test_encode_rejects_small_or_indivisible(self):
        model = seeded_model()
        with pytest.raises(ValueError):
            model.encode(torch.rand(1, 1, 8, 8))
        with pytest.raises(ValueError):
            model.encode(torch.rand(1, 1, 17, 18))

    def test_encode_deterministic(self):
        model = seeded_model()
        model.eval()
        x = torch.rand(1, 1, 32, 32)
        with torch.no_grad():
            assert torch.equal(model.encode(x), model.encode(x))

    def test_identical_weights_identical_latents(self):
        m1, m2 = seeded_model(3), seeded_model(3)
        x = torch.rand(1, 1, 32, 32)
        with torch.no_grad():
            assert torch.equal(m1.encode(x), m2.encode(x))

    def test_decode_shape_and_inference_clamp(self):
        model = seeded_model()
        model.eval()
        z = torch.randn(1, CFG.latent_channels, 32, 32) * 50
        out = model.decode(z)
        assert out.shape == (1, 1, 32, 32)
        assert out.min() >= 0.0 and out.max() <= 1.0

    def test_decode_unclamped_while_training(self):
        model = seeded_model()
        model.train()
        with torch.no_grad():
            model.decoder.conv3.bias.fill_(5.0)
        out = model.decode(torch.randn(1, CFG.latent_channels, 16, 16))
        assert out.max() > 1.0

    def test_decode_rejects_channel_mismatch(self):
        model = seeded_model()
        with pytest.raises(ValueError):
            model.decode(torch.randn(1, CFG.latent_channels + 1, 16, 16))

    def test_decoder_has_exactly_three_convs(self):
        assert seeded_model().decoder.conv_layer_count == 3

    def test_zero_propagation_with_zeroed_biases(self):
        model = seeded_model()
        zero_all_biases(model)
        x = torch.zeros(1, 1, 16, 16)
        with torch.no_grad():
            assert torch.all(model.encode(x) == 0)
            assert torch.all(model.decoder(torch.zeros(1, CFG.latent_channels, 16, 16)) == 0)

    def test_edge_enhancer_toggle_changes_structure(self):
        with_edge = seeded_model(0, use_edge_enhancer=True)
        without = seeded_model(0, use_edge_enhancer=False)
        assert with_edge.edge is not None and without.edge is None
        assert param_count(with_edge) > param_count(without)


class TestParamCount:
    def test_single_conv_example(self):
        conv = nn.Conv2d(1, 8, kernel_size=3)
        assert param_count(conv) == 3 * 3 * 1 * 8 + 8 == 80

    def test_default_config_near_published_total(self):
        n = param_count(seeded_model())
        assert 300_000 <= n <= 800_000
        assert abs(n - 500_000) < 60_000  # targets the published 0.50M

    def test_sobel_kernels_are_not_trainable(self):
        model = seeded_model()
        names = [n for n, _ in model.named_parameters()]
        assert not any("sobel" in n.lower() for n in names)


class TestCheckpointing:
    def test_round_trip_outputs_identical(self, tmp_path):
        model = seeded_model(11)
        model.eval()
        x = torch.rand(1, 1, 32, 32)
        with torch.no_grad():
            before = model(x)
        path = tmp_path / "ckpt.pt"
        save_checkpoint(path, model, epoch=5)
        restored, payload = load_checkpoint(path, expected_config=model.cfg)
        with torch.no_grad():
            after = restored(x)
        assert torch.allclose(before, after, atol=1e-6)
        assert payload["epoch"] == 5

    def test_param_count_invariant_under_round_trip(self, tmp_path):
        model = seeded_model(12)
        path = tmp_path / "ckpt.pt"
        save_checkpoint(path, model)
        restored, _ = load_checkpoint(path)
        assert param_count(restored) == param_count(model)

    def test_state_round_trips_bit_exactly(self, tmp_path):
        model = seeded_model(13)
        path = tmp_path / "ckpt.pt"
        save_checkpoint(path, model)
        restored, _ = load_checkpoint(path)
        for (name, p), (name2, p2) in zip(model.state_dict().items(),
                                          restored.state_dict().items()):
            assert name == name2
            assert torch.equal(p, p2)

    def test_config_hash_mismatch_rejected(self, tmp_path):
        model = seeded_model(14)
        path = tmp_path / "ckpt.pt"
        save_checkpoint(path, model)
        other = EncoderConfig(latent_channels=32)
        with pytest.raises(ConfigError, match="does not match"):
            load_checkpoint(path, expected_config=other)

    def test_edge_flag_restored(self, tmp_path):
        model = seeded_model(15, use_edge_enhancer=False)
        path = tmp_path / "ckpt.pt"
        save_checkpoint(path, model)
        restored, _ = load_checkpoint(path)
        assert restored.edge is None
