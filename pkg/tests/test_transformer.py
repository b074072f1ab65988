import numpy as np
import pytest

from freqcenter.errors import ConfigError
from freqcenter.features import Spectrogram
from freqcenter.transformer import (
    AstConfig,
    TokenGrid,
    block_forward,
    embed,
    encode,
    forward_capture,
    grid_to_sequence,
    init_model,
    load_model,
    patchify,
    save_model,
    self_attention,
)


def spec_of(data):
    return Spectrogram(np.asarray(data, dtype=np.float64))


def random_spec(rng, f=80, t=97, scale=10.0):
    return spec_of(rng.normal(0.0, scale, (1, f, t)))


class TestPatchify:
    def test_grid_dims(self):
        grid = patchify(random_spec(np.random.default_rng(0)))
        assert grid.shape == (5, 6)  # T truncated 97 -> 96
        assert grid.tokens.shape == (30, 256)

    def test_constant_patches_identical(self):
        grid = patchify(spec_of(np.full((1, 80, 97), 4.0)))
        assert np.all(grid.tokens == grid.tokens[0])

    def test_reassembly_recovers_input(self):
        spec = random_spec(np.random.default_rng(1))
        grid = patchify(spec)
        rebuilt = np.zeros((80, 96))
        for tok, fi, ti in zip(grid.tokens, grid.freq_index, grid.time_index):
            rebuilt[fi * 16 : (fi + 1) * 16, ti * 16 : (ti + 1) * 16] = tok.reshape(16, 16)
        np.testing.assert_array_equal(rebuilt, spec.data[0, :, :96])

    def test_flattening_order_f_major(self):
        data = np.arange(80 * 16, dtype=np.float64).reshape(1, 80, 16)
        grid = patchify(spec_of(data))
        # first token = patch (0, 0); flattened f-major: row f of the patch
        # occupies positions 16*f .. 16*f+15
        np.testing.assert_array_equal(grid.tokens[0][:16], data[0, 0, :16])
        np.testing.assert_array_equal(grid.tokens[0][16:32], data[0, 1, :16])

    def test_grid_order_frequency_outer(self):
        grid = patchify(random_spec(np.random.default_rng(2)))
        np.testing.assert_array_equal(grid.freq_index[:6], 0)
        np.testing.assert_array_equal(grid.time_index[:6], np.arange(6))

    def test_bad_inputs(self):
        with pytest.raises(ValueError):
            patchify(spec_of(np.zeros((1, 50, 97))))  # F not divisible
        with pytest.raises(ValueError):
            patchify(spec_of(np.zeros((1, 80, 10))))  # T < patch


class TestInitModel:
    def test_deterministic(self):
        a = init_model(AstConfig(init_seed=7))
        b = init_model(AstConfig(init_seed=7))
        for pa, pb in zip(a.parameters(), b.parameters()):
            np.testing.assert_array_equal(pa, pb)

    def test_seeds_differ(self):
        a = init_model(AstConfig(init_seed=1))
        b = init_model(AstConfig(init_seed=2))
        assert max(np.abs(pa - pb).max() for pa, pb in zip(a.parameters(), b.parameters())) > 1e-3

    def test_param_count_closed_form(self):
        cfg = AstConfig()
        d, p2 = cfg.embed_dim, cfg.patch * cfg.patch
        per_block = (
            2 * d  # pre-attention norm
            + 4 * (d * d + d)  # q, k, v, output projections
            + 2 * d  # pre-mlp norm
            + (d * 4 * d + 4 * d)  # mlp in
            + (4 * d * d + d)  # mlp out
        )
        expected = (
            p2 * d + d  # patch projection
            + cfg.freq_patches * d + cfg.time_patches * d  # positional tables
            + cfg.n_blocks * per_block
        )
        assert init_model(cfg).param_count() == expected

    def test_biases_zero_gammas_one(self):
        m = init_model(AstConfig())
        assert np.all(m.patch_b == 0.0)
        assert np.all(m.blocks[0].bq == 0.0)
        assert np.all(m.blocks[0].ln1_gamma == 1.0)
        assert np.all(m.blocks[0].ln1_beta == 0.0)

    def test_validation(self):
        with pytest.raises(ConfigError):
            init_model(AstConfig(embed_dim=65, n_heads=4))


class TestForwardCapture:
    def test_shapes_and_count(self):
        model = init_model(AstConfig())
        acts = forward_capture(model, random_spec(np.random.default_rng(3)))
        assert len(acts) == 4
        for a in acts:
            assert a.shape == (64, 5, 6)

    def test_finite_for_bounded_inputs(self):
        model = init_model(AstConfig())
        rng = np.random.default_rng(4)
        spec = spec_of(rng.uniform(-100.0, 100.0, (1, 80, 97)))
        for a in forward_capture(model, spec):
            assert np.all(np.isfinite(a))

    def test_deterministic(self):
        model = init_model(AstConfig())
        spec = random_spec(np.random.default_rng(5))
        a = forward_capture(model, spec)
        b = forward_capture(model, spec)
        for x, y in zip(a, b):
            np.testing.assert_array_equal(x, y)

    def test_attention_rows_sum_to_one(self):
        model = init_model(AstConfig())
        rng = np.random.default_rng(6)
        x = rng.normal(0, 1, (30, 64))
        _, weights = self_attention(model.blocks[0], x, model.config.n_heads)
        np.testing.assert_allclose(weights.sum(axis=-1), 1.0, atol=1e-6)

    def test_permutation_equivariance(self):
        model = init_model(AstConfig(init_seed=11))
        model.freq_pos[...] = 0.0
        model.time_pos[...] = 0.0
        spec = random_spec(np.random.default_rng(7))
        grid = embed(model, patchify(spec))
        outs = encode(model, grid.tokens)

        rng = np.random.default_rng(8)
        perm = rng.permutation(grid.tokens.shape[0])
        outs_perm = encode(model, grid.tokens[perm])
        for direct, permuted in zip(outs, outs_perm):
            np.testing.assert_allclose(permuted, direct[perm], atol=1e-5)

    def test_hidden_norm_hook(self):
        from freqcenter.norm import fc

        model = init_model(AstConfig())
        spec = random_spec(np.random.default_rng(9))
        acts = forward_capture(model, spec, hidden_norm=fc, hidden_placement="all_blocks")
        for a in acts:
            np.testing.assert_allclose(a.mean(axis=(0, 2)), 0.0, atol=1e-9)

    def test_unknown_placement(self):
        model = init_model(AstConfig())
        with pytest.raises(ConfigError):
            forward_capture(model, random_spec(np.random.default_rng(10)), None, "everywhere")

    def test_grid_too_large_for_tables(self):
        model = init_model(AstConfig(time_patches=2))
        with pytest.raises(ValueError):
            forward_capture(model, random_spec(np.random.default_rng(11)))


class TestScatterGather:
    def test_round_trip_identity(self):
        rng = np.random.default_rng(12)
        f_p, t_p, d = 5, 6, 16
        fi, ti = np.divmod(np.arange(f_p * t_p), t_p)
        tokens = rng.normal(0, 3, (f_p * t_p, d))
        grid = TokenGrid(tokens, fi, ti, (f_p, t_p))
        tensor = grid.to_tensor()
        assert tensor.shape == (d, f_p, t_p)
        np.testing.assert_array_equal(grid_to_sequence(tensor, grid), tokens)

    def test_scatter_uses_indices(self):
        tokens = np.array([[1.0], [2.0], [3.0], [4.0]])
        fi = np.array([0, 0, 1, 1])
        ti = np.array([0, 1, 0, 1])
        grid = TokenGrid(tokens, fi, ti, (2, 2))
        np.testing.assert_array_equal(grid.to_tensor()[0], [[1.0, 2.0], [3.0, 4.0]])


class TestModelFile:
    def test_round_trip(self, tmp_path):
        model = init_model(AstConfig(init_seed=21))
        p = tmp_path / "m.ast"
        save_model(model, p)
        back = load_model(p)
        assert back.config == model.config
        for pa, pb in zip(model.parameters(), back.parameters()):
            np.testing.assert_array_equal(np.float32(pa), np.float32(pb))

    def test_header(self, tmp_path):
        p = tmp_path / "m.ast"
        save_model(init_model(AstConfig()), p)
        assert p.read_bytes()[:4] == b"AST1"

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "m.ast"
        p.write_bytes(b"XXXX" + b"\x00" * 64)
        with pytest.raises(ValueError):
            load_model(p)

    def test_block_forward_changes_tokens(self):
        model = init_model(AstConfig())
        rng = np.random.default_rng(13)
        x = rng.normal(0, 1, (30, 64))
        y = block_forward(model.blocks[0], x, 4)
        assert y.shape == x.shape
        assert np.abs(y - x).max() > 1e-3
