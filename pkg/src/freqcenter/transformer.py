"""Forward-only toy audio spectrogram transformer.

A spectrogram is cut into non-overlapping square patches, each patch is
linearly projected to a token, and separate learnable-style positional
tables for the frequency and time grid coordinates are added.  Blocks are
standard pre-norm ViT blocks (multi-head self-attention + MLP, residual
around each).  Weights are random but fully determined by the init seed;
there is no training path.

Activations after each block can be scattered back onto the frequency /
time grid as a (D, F_p, T_p) tensor for probing.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import erf

from .errors import ConfigError
from .features import Spectrogram

_LN_EPS = 1e-5

MODEL_FILE_MAGIC = b"AST1"


@dataclass(frozen=True)
class AstConfig:
    patch: int = 16
    embed_dim: int = 64
    n_blocks: int = 4
    n_heads: int = 4
    mlp_ratio: int = 4
    init_seed: int = 0
    # positional table sizes; inputs whose patch grid exceeds them are rejected
    freq_patches: int = 5
    time_patches: int = 12

    def validate(self) -> None:
        if self.patch < 1 or self.embed_dim < 1 or self.n_blocks < 1:
            raise ConfigError("patch, embed_dim and n_blocks must be positive")
        if self.embed_dim % self.n_heads != 0:
            raise ConfigError("embed_dim must be divisible by n_heads")
        if self.freq_patches < 1 or self.time_patches < 1:
            raise ConfigError("positional table sizes must be positive")


@dataclass
class TokenGrid:
    """Token sequence with its grid bookkeeping.

    tokens has shape (N, dim); freq_index / time_index map each token to
    its (frequency, time) patch coordinate; shape is (F_p, T_p) with
    N = F_p * T_p.
    """

    tokens: np.ndarray
    freq_index: np.ndarray
    time_index: np.ndarray
    shape: tuple

    def to_tensor(self) -> np.ndarray:
        """Scatter tokens to a (dim, F_p, T_p) tensor."""
        f_p, t_p = self.shape
        out = np.zeros((self.tokens.shape[1], f_p, t_p))
        out[:, self.freq_index, self.time_index] = self.tokens.T
        return out

    def with_tokens(self, tokens: np.ndarray) -> "TokenGrid":
        return TokenGrid(tokens, self.freq_index, self.time_index, self.shape)


def grid_to_sequence(tensor: np.ndarray, grid: TokenGrid) -> np.ndarray:
    """Gather a (dim, F_p, T_p) tensor back into (N, dim) token order."""
    return tensor[:, grid.freq_index, grid.time_index].T


@dataclass
class AstBlock:
    ln1_gamma: np.ndarray
    ln1_beta: np.ndarray
    wq: np.ndarray
    bq: np.ndarray
    wk: np.ndarray
    bk: np.ndarray
    wv: np.ndarray
    bv: np.ndarray
    wo: np.ndarray
    bo: np.ndarray
    ln2_gamma: np.ndarray
    ln2_beta: np.ndarray
    mlp_w1: np.ndarray
    mlp_b1: np.ndarray
    mlp_w2: np.ndarray
    mlp_b2: np.ndarray

    def parameters(self):
        return [
            self.ln1_gamma, self.ln1_beta,
            self.wq, self.bq, self.wk, self.bk, self.wv, self.bv, self.wo, self.bo,
            self.ln2_gamma, self.ln2_beta,
            self.mlp_w1, self.mlp_b1, self.mlp_w2, self.mlp_b2,
        ]


@dataclass
class AstModel:
    config: AstConfig
    patch_w: np.ndarray
    patch_b: np.ndarray
    freq_pos: np.ndarray
    time_pos: np.ndarray
    blocks: list = field(default_factory=list)

    def parameters(self):
        params = [self.patch_w, self.patch_b, self.freq_pos, self.time_pos]
        for b in self.blocks:
            params.extend(b.parameters())
        return params

    def param_count(self) -> int:
        return sum(p.size for p in self.parameters())


def patchify(spec: Spectrogram, patch: int = 16) -> TokenGrid:
    """Cut a (1, F, T) spectrogram into non-overlapping patch tokens.

    F must be divisible by the patch size; T is truncated down to a
    multiple of it.  Patches are flattened in (f-major, t-minor) order and
    the grid is traversed frequency-outer, time-inner.
    """
    x = spec.data[0]
    f, t = x.shape
    if f % patch != 0:
        raise ValueError(f"frequency dim {f} not divisible by patch size {patch}")
    if t < patch:
        raise ValueError(f"time dim {t} shorter than one patch ({patch})")
    f_p, t_p = f // patch, t // patch
    x = x[:, : t_p * patch]
    # (F_p, T_p, patch, patch) -> (N, patch*patch)
    blocks = x.reshape(f_p, patch, t_p, patch).transpose(0, 2, 1, 3)
    tokens = blocks.reshape(f_p * t_p, patch * patch)
    fi, ti = np.divmod(np.arange(f_p * t_p), t_p)
    return TokenGrid(tokens, fi, ti, (f_p, t_p))


def init_model(cfg: AstConfig) -> AstModel:
    """Deterministic random init: weights N(0, 1/fan_in), biases zero,
    positional tables N(0, 0.02^2)."""
    cfg.validate()
    rng = np.random.default_rng(cfg.init_seed)
    d = cfg.embed_dim
    p2 = cfg.patch * cfg.patch

    def w(out_dim, in_dim):
        return rng.normal(0.0, 1.0 / np.sqrt(in_dim), (out_dim, in_dim))

    patch_w = w(d, p2)
    patch_b = np.zeros(d)
    freq_pos = rng.normal(0.0, 0.02, (cfg.freq_patches, d))
    time_pos = rng.normal(0.0, 0.02, (cfg.time_patches, d))
    blocks = []
    for _ in range(cfg.n_blocks):
        blocks.append(
            AstBlock(
                ln1_gamma=np.ones(d), ln1_beta=np.zeros(d),
                wq=w(d, d), bq=np.zeros(d),
                wk=w(d, d), bk=np.zeros(d),
                wv=w(d, d), bv=np.zeros(d),
                wo=w(d, d), bo=np.zeros(d),
                ln2_gamma=np.ones(d), ln2_beta=np.zeros(d),
                mlp_w1=w(cfg.mlp_ratio * d, d), mlp_b1=np.zeros(cfg.mlp_ratio * d),
                mlp_w2=w(d, cfg.mlp_ratio * d), mlp_b2=np.zeros(d),
            )
        )
    return AstModel(cfg, patch_w, patch_b, freq_pos, time_pos, blocks)


def _layer_norm(x: np.ndarray, gamma: np.ndarray, beta: np.ndarray) -> np.ndarray:
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + _LN_EPS) * gamma + beta


def _gelu(x: np.ndarray) -> np.ndarray:
    return 0.5 * x * (1.0 + erf(x / np.sqrt(2.0)))


def self_attention(block: AstBlock, x: np.ndarray, n_heads: int):
    """Multi-head self-attention over a (N, D) sequence.

    Returns (output, attention weights) where weights has shape
    (n_heads, N, N) and each row sums to 1.
    """
    n, d = x.shape
    hd = d // n_heads
    q = (x @ block.wq.T + block.bq).reshape(n, n_heads, hd).transpose(1, 0, 2)
    k = (x @ block.wk.T + block.bk).reshape(n, n_heads, hd).transpose(1, 0, 2)
    v = (x @ block.wv.T + block.bv).reshape(n, n_heads, hd).transpose(1, 0, 2)
    scores = q @ k.transpose(0, 2, 1) / np.sqrt(hd)
    scores -= scores.max(axis=-1, keepdims=True)
    weights = np.exp(scores)
    weights /= weights.sum(axis=-1, keepdims=True)
    out = (weights @ v).transpose(1, 0, 2).reshape(n, d)
    return out @ block.wo.T + block.bo, weights


def block_forward(block: AstBlock, x: np.ndarray, n_heads: int) -> np.ndarray:
    """One pre-norm transformer block: attention + MLP with residuals."""
    attn_out, _ = self_attention(block, _layer_norm(x, block.ln1_gamma, block.ln1_beta), n_heads)
    x = x + attn_out
    h = _layer_norm(x, block.ln2_gamma, block.ln2_beta)
    h = _gelu(h @ block.mlp_w1.T + block.mlp_b1) @ block.mlp_w2.T + block.mlp_b2
    return x + h


def embed(model: AstModel, grid: TokenGrid) -> TokenGrid:
    """Project patches to tokens and add the two positional tables."""
    f_p, t_p = grid.shape
    if f_p != model.freq_pos.shape[0]:
        raise ValueError(
            f"grid has {f_p} frequency patches, model tables hold {model.freq_pos.shape[0]}"
        )
    if t_p > model.time_pos.shape[0]:
        raise ValueError(
            f"grid has {t_p} time patches, model tables hold {model.time_pos.shape[0]}"
        )
    tokens = grid.tokens @ model.patch_w.T + model.patch_b
    tokens = tokens + model.freq_pos[grid.freq_index] + model.time_pos[grid.time_index]
    return grid.with_tokens(tokens)


def encode(model: AstModel, tokens: np.ndarray) -> list:
    """Run all blocks over a (N, D) sequence; returns per-block outputs."""
    outputs = []
    x = tokens
    for block in model.blocks:
        x = block_forward(block, x, model.config.n_heads)
        outputs.append(x)
    return outputs


def forward_capture(
    model: AstModel,
    spec: Spectrogram,
    hidden_norm=None,
    hidden_placement: str = "none",
) -> list:
    """Per-block activations scattered to (D, F_p, T_p) tensors.

    hidden_norm, when given, is a tensor -> tensor normalization applied
    on the scattered grid: at hidden_placement "tokens" it runs once on
    the embedded tokens, at "all_blocks" also after every block.
    """
    if hidden_placement not in ("none", "tokens", "all_blocks"):
        raise ConfigError(f"unknown hidden placement {hidden_placement!r}")

    grid = embed(model, patchify(spec, model.config.patch))

    def normed(g: TokenGrid) -> TokenGrid:
        if hidden_norm is None:
            return g
        return g.with_tokens(grid_to_sequence(hidden_norm(g.to_tensor()), g))

    if hidden_placement in ("tokens", "all_blocks"):
        grid = normed(grid)

    captured = []
    x = grid
    for block in model.blocks:
        x = x.with_tokens(block_forward(block, x.tokens, model.config.n_heads))
        if hidden_placement == "all_blocks":
            x = normed(x)
        captured.append(x.to_tensor())
    return captured


def save_model(model: AstModel, path) -> None:
    """Binary dump: "AST1" header, config fields, then parameters in
    declaration order as float32 LE."""
    cfg = model.config
    with open(path, "wb") as fh:
        fh.write(MODEL_FILE_MAGIC)
        fh.write(
            struct.pack(
                "<IIIIIIIq",
                cfg.patch, cfg.embed_dim, cfg.n_blocks, cfg.n_heads,
                cfg.mlp_ratio, cfg.freq_patches, cfg.time_patches, cfg.init_seed,
            )
        )
        for p in model.parameters():
            fh.write(np.ascontiguousarray(p, dtype="<f4").tobytes())


def load_model(path) -> AstModel:
    raw = Path(path).read_bytes()
    if raw[:4] != MODEL_FILE_MAGIC:
        raise ValueError(f"{path}: not an AST1 model file")
    patch, d, n_blocks, n_heads, mlp_ratio, f_p, t_p, seed = struct.unpack_from(
        "<IIIIIIIq", raw, 4
    )
    cfg = AstConfig(patch, d, n_blocks, n_heads, mlp_ratio, seed, f_p, t_p)
    model = init_model(cfg)  # allocates the right shapes
    offset = 4 + struct.calcsize("<IIIIIIIq")
    for p in model.parameters():
        if len(raw) < offset + 4 * p.size:
            raise ValueError(f"{path}: truncated model file")
        vals = np.frombuffer(raw, dtype="<f4", count=p.size, offset=offset)
        p[...] = vals.reshape(p.shape)
        offset += 4 * p.size
    return model
