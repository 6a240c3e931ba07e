"""Language-specific encoder layers and the three-way mixed search layer.

An LSL bank holds one full encoder layer per language; a whole sentence is
routed to exactly one sub-layer, keyed by the source or target language.  The
mixed layer combines a shared branch with source- and target-routed branches
under learned simplex weights.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from . import tensors as T
from .errors import ConfigError
from .layers import LayerParams, encoder_layer_forward
from .tensors import Tensor


class IndexMode(Enum):
    SRC = "src"
    TGT = "tgt"


@dataclass(frozen=True)
class RoutingContext:
    """Whole-sentence routing key: source, target, and quality tag."""

    src: str
    tgt: str
    quality: str = "HQ"

    def __post_init__(self):
        if self.quality not in ("HQ", "LQ"):
            raise ConfigError(f"quality must be HQ or LQ, got {self.quality!r}")


def route(ctx: RoutingContext, mode: IndexMode, languages) -> str:
    """Pick the indexing language for a sentence; total and deterministic."""
    lang = ctx.src if mode is IndexMode.SRC else ctx.tgt
    if lang not in languages:
        raise KeyError(f"language {lang!r} not in model language set {sorted(languages)}")
    return lang


@dataclass
class LslBank:
    """One encoder layer per language, selected per sentence."""

    index_mode: IndexMode
    sub_layers: dict[str, LayerParams]

    @property
    def languages(self):
        return self.sub_layers.keys()

    def n_params(self) -> int:
        return sum(p.n_params() for p in self.sub_layers.values())


def make_bank(index_mode: IndexMode, languages, init_layer) -> LslBank:
    """Build a bank over the sorted language set with ``init_layer()`` per language."""
    return LslBank(index_mode, {lang: init_layer() for lang in sorted(set(languages))})


@dataclass
class MixingState:
    """Per-layer gate logits over (shared, src, tgt) and derived weights."""

    logits: Tensor = field(
        default_factory=lambda: Tensor(np.zeros(3), requires_grad=True)
    )

    def weight_tensors(self) -> tuple[Tensor, Tensor, Tensor]:
        w = T.softmax_lastdim(self.logits)
        return T.index(w, 0), T.index(w, 1), T.index(w, 2)

    def weights(self) -> tuple[float, float, float]:
        return tuple(mixing_weights(self.logits.values))


def mixing_weights(logits) -> np.ndarray:
    """Stable softmax of the 3 gate logits onto the simplex."""
    logits = np.asarray(logits, dtype=np.float64)
    e = np.exp(logits - logits.max())
    return e / e.sum()


def lsl_forward(
    x: Tensor, pad_bias, ctx: RoutingContext, bank: LslBank, n_heads: int
) -> Tensor:
    """Encoder layer forward with the routed language's parameters."""
    lang = route(ctx, bank.index_mode, bank.sub_layers)
    return encoder_layer_forward(x, pad_bias, bank.sub_layers[lang], n_heads)


def mixed_layer_forward(
    x: Tensor,
    pad_bias,
    ctx: RoutingContext,
    shared: LayerParams,
    src_bank: LslBank,
    tgt_bank: LslBank,
    mix: MixingState,
    n_heads: int,
) -> Tensor:
    """Convex combination of the shared, source-routed, and target-routed branches.

    All three branches are evaluated; the banks may be (and in the search
    model are) the same object, with routing picking different sub-layers.
    """
    w_shared, w_src, w_tgt = mix.weight_tensors()
    h_shared = encoder_layer_forward(x, pad_bias, shared, n_heads)
    src_lang = route(ctx, IndexMode.SRC, src_bank.sub_layers)
    tgt_lang = route(ctx, IndexMode.TGT, tgt_bank.sub_layers)
    h_src = encoder_layer_forward(x, pad_bias, src_bank.sub_layers[src_lang], n_heads)
    h_tgt = encoder_layer_forward(x, pad_bias, tgt_bank.sub_layers[tgt_lang], n_heads)
    return T.add(
        T.add(T.scale_by(h_shared, w_shared), T.scale_by(h_src, w_src)),
        T.scale_by(h_tgt, w_tgt),
    )
