"""Regular transformer building blocks: attention, feed-forward, layer stacks.

Residual order is post-norm (add then norm after each block).  Positions are
sinusoidal, embeddings are scaled by sqrt(d_model) before the position add.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import tensors as T
from .errors import ConfigError
from .tensors import Tensor

NEG_BIAS = -1e9


@dataclass(frozen=True)
class ModelDims:
    d_model: int
    d_ffn: int
    n_heads: int
    n_enc_layers: int
    n_dec_layers: int
    vocab_size: int

    def __post_init__(self):
        for name, v in self.__dict__.items():
            if v <= 0:
                raise ConfigError(f"ModelDims.{name} must be positive, got {v}")
        if self.d_model % self.n_heads != 0:
            raise ConfigError(
                f"d_model={self.d_model} not divisible by n_heads={self.n_heads}"
            )


class LayerParams(dict):
    """Named parameter tensors for one transformer layer."""

    def n_params(self) -> int:
        return sum(t.values.size for t in self.values())

    def copy_from(self, other: "LayerParams") -> None:
        if set(self) != set(other):
            raise ConfigError("layer parameter sets differ, cannot copy")
        for k, t in self.items():
            t.values[...] = other[k].values

    def clone(self) -> "LayerParams":
        out = LayerParams()
        for k, t in self.items():
            out[k] = Tensor(t.values.copy(), requires_grad=t.requires_grad)
        return out


def _init_weight(rng: np.random.Generator, n_in: int, n_out: int) -> Tensor:
    limit = math.sqrt(6.0 / (n_in + n_out))
    return Tensor(rng.uniform(-limit, limit, size=(n_in, n_out)), requires_grad=True)


def _zeros(n: int) -> Tensor:
    return Tensor(np.zeros(n), requires_grad=True)


def _ones(n: int) -> Tensor:
    return Tensor(np.ones(n), requires_grad=True)


def _attention_block(dims: ModelDims, rng, p: LayerParams, prefix: str) -> None:
    d = dims.d_model
    for name in ("wq", "wk", "wv", "wo"):
        p[prefix + name] = _init_weight(rng, d, d)
        p[prefix + name.replace("w", "b")] = _zeros(d)


def init_encoder_layer(dims: ModelDims, rng: np.random.Generator) -> LayerParams:
    p = LayerParams()
    _attention_block(dims, rng, p, "")
    p["w1"] = _init_weight(rng, dims.d_model, dims.d_ffn)
    p["b1"] = _zeros(dims.d_ffn)
    p["w2"] = _init_weight(rng, dims.d_ffn, dims.d_model)
    p["b2"] = _zeros(dims.d_model)
    p["ln1_g"] = _ones(dims.d_model)
    p["ln1_b"] = _zeros(dims.d_model)
    p["ln2_g"] = _ones(dims.d_model)
    p["ln2_b"] = _zeros(dims.d_model)
    return p


def init_decoder_layer(dims: ModelDims, rng: np.random.Generator) -> LayerParams:
    p = LayerParams()
    _attention_block(dims, rng, p, "")
    _attention_block(dims, rng, p, "x")  # cross-attention projections
    p["w1"] = _init_weight(rng, dims.d_model, dims.d_ffn)
    p["b1"] = _zeros(dims.d_ffn)
    p["w2"] = _init_weight(rng, dims.d_ffn, dims.d_model)
    p["b2"] = _zeros(dims.d_model)
    for i in (1, 2, 3):
        p[f"ln{i}_g"] = _ones(dims.d_model)
        p[f"ln{i}_b"] = _zeros(dims.d_model)
    return p


def encoder_layer_param_count(dims: ModelDims) -> int:
    d, f = dims.d_model, dims.d_ffn
    return 4 * (d * d + d) + (d * f + f) + (f * d + d) + 2 * 2 * d


def decoder_layer_param_count(dims: ModelDims) -> int:
    d, f = dims.d_model, dims.d_ffn
    return 8 * (d * d + d) + (d * f + f) + (f * d + d) + 3 * 2 * d


@lru_cache(maxsize=16)
def sinusoidal_positions(max_len: int, d_model: int) -> np.ndarray:
    pos = np.arange(max_len)[:, None]
    dim = np.arange(0, d_model, 2)[None, :]
    angle = pos / np.power(10000.0, dim / d_model)
    enc = np.zeros((max_len, d_model))
    enc[:, 0::2] = np.sin(angle)
    enc[:, 1::2] = np.cos(angle[:, : d_model - d_model // 2])
    return enc


def embed_sequence(ids: np.ndarray, table: Tensor) -> Tensor:
    """Scaled embedding lookup plus sinusoidal positions."""
    d = table.shape[1]
    x = T.scale(T.embedding(table, ids), math.sqrt(d))
    return T.add_const(x, sinusoidal_positions(ids.shape[-1], d))


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """Affine map over the last dim of an arbitrary-rank input."""
    lead = x.shape[:-1]
    h = T.matmul(T.reshape(x, (-1, x.shape[-1])), w)
    if b is not None:
        h = T.add_bias(h, b)
    return T.reshape(h, lead + (w.shape[1],))


def attention_bias_from_key_mask(key_mask: np.ndarray) -> np.ndarray:
    """[B, Lk] boolean (True = real token) -> additive bias [B, 1, 1, Lk]."""
    key_mask = np.asarray(key_mask, dtype=bool)
    return np.where(key_mask, 0.0, NEG_BIAS)[:, None, None, :]


def causal_bias(length: int) -> np.ndarray:
    return np.triu(np.full((length, length), NEG_BIAS), k=1)


def _split_heads(x: Tensor, n_heads: int) -> Tensor:
    *lead, length, d = x.shape
    h = T.reshape(x, (*lead, length, n_heads, d // n_heads))
    axes = (*range(len(lead)), len(lead) + 1, len(lead), len(lead) + 2)
    return T.transpose(h, axes)


def _merge_heads(x: Tensor) -> Tensor:
    *lead, n_heads, length, dh = x.shape
    axes = (*range(len(lead)), len(lead) + 1, len(lead), len(lead) + 2)
    h = T.transpose(x, axes)
    return T.reshape(h, (*lead, length, n_heads * dh))


def multi_head_attention(
    q: Tensor,
    k: Tensor,
    v: Tensor,
    bias: np.ndarray | None,
    p: LayerParams,
    n_heads: int,
    prefix: str = "",
) -> Tensor:
    """Scaled dot-product attention with ``n_heads`` heads.

    ``bias`` is an additive attention bias broadcastable to the score shape
    ``[..., heads, len_q, len_k]``; masked entries carry a large negative value.
    """
    d = q.shape[-1]
    if d % n_heads != 0:
        raise ConfigError(f"d_model={d} not divisible by n_heads={n_heads}")
    qh = _split_heads(linear(q, p[prefix + "wq"], p[prefix + "bq"]), n_heads)
    kh = _split_heads(linear(k, p[prefix + "wk"], p[prefix + "bk"]), n_heads)
    vh = _split_heads(linear(v, p[prefix + "wv"], p[prefix + "bv"]), n_heads)

    scores = T.scale(T.bmm(qh, T.transpose(kh, (*range(kh.values.ndim - 2), kh.values.ndim - 1, kh.values.ndim - 2))), 1.0 / math.sqrt(d // n_heads))
    if bias is not None:
        biased = scores.values + bias
        if np.any(biased.max(axis=-1) <= NEG_BIAS / 2):
            raise ValueError("attention: some query row has every key masked out")
        scores = T.add_const(scores, bias)
    attn = T.softmax_lastdim(scores)
    ctx = _merge_heads(T.bmm(attn, vh))
    return linear(ctx, p[prefix + "wo"], p[prefix + "bo"])


def _ffn(x: Tensor, p: LayerParams) -> Tensor:
    return linear(T.relu(linear(x, p["w1"], p["b1"])), p["w2"], p["b2"])


def encoder_layer_forward(
    x: Tensor, pad_bias: np.ndarray | None, p: LayerParams, n_heads: int
) -> Tensor:
    h = multi_head_attention(x, x, x, pad_bias, p, n_heads)
    h = T.layer_norm(T.add(x, h), p["ln1_g"], p["ln1_b"])
    out = T.layer_norm(T.add(h, _ffn(h, p)), p["ln2_g"], p["ln2_b"])
    return out


def decoder_layer_forward(
    x: Tensor,
    enc_out: Tensor,
    self_bias: np.ndarray | None,
    cross_bias: np.ndarray | None,
    p: LayerParams,
    n_heads: int,
) -> Tensor:
    h = multi_head_attention(x, x, x, self_bias, p, n_heads)
    h = T.layer_norm(T.add(x, h), p["ln1_g"], p["ln1_b"])
    c = multi_head_attention(h, enc_out, enc_out, cross_bias, p, n_heads, prefix="x")
    h = T.layer_norm(T.add(h, c), p["ln2_g"], p["ln2_b"])
    return T.layer_norm(T.add(h, _ffn(h, p)), p["ln3_g"], p["ln3_b"])
