"""Architecture notation, model construction, selection, and accounting.

An architecture assigns each encoder layer a kind (shared, source-indexed
LSL, target-indexed LSL, or all-mixed search) and picks a shared or
per-target decoder.  Searched layers hold one shared branch plus a single
per-language bank reused by the source- and target-routed branches, so each
searched layer costs L + 1 regular layers of parameters plus 3 gate logits.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from . import tensors as T
from .data import Vocab
from .errors import ConfigError
from .layers import (
    LayerParams,
    ModelDims,
    attention_bias_from_key_mask,
    causal_bias,
    decoder_layer_forward,
    decoder_layer_param_count,
    embed_sequence,
    encoder_layer_forward,
    encoder_layer_param_count,
    init_decoder_layer,
    init_encoder_layer,
    linear,
)
from .lsl import (
    IndexMode,
    LslBank,
    MixingState,
    RoutingContext,
    mixed_layer_forward,
    mixing_weights,
    route,
)
from .tensors import Tensor


class LayerKind(Enum):
    SHARED = "shared"
    LSL_SRC = "src"
    LSL_TGT = "tgt"
    MIXED_SEARCH = "mixed"


@dataclass(frozen=True)
class ArchitectureSpec:
    """Per-encoder-layer kinds (1-based positions in notation) + decoder mode."""

    encoder_kinds: tuple
    decoder_mode: str  # "shared" | "separate"
    dims: ModelDims | None = None
    languages: tuple | None = None

    def __post_init__(self):
        if self.decoder_mode not in ("shared", "separate"):
            raise ConfigError(f"decoder mode must be shared|separate, got {self.decoder_mode!r}")
        kinds = set(self.encoder_kinds)
        if LayerKind.MIXED_SEARCH in kinds and kinds & {LayerKind.LSL_SRC, LayerKind.LSL_TGT}:
            raise ConfigError("search specs are all-mixed; LSL kinds may not co-occur")
        if self.languages is not None and tuple(self.languages) != tuple(sorted(set(self.languages))):
            raise ConfigError("languages must be a sorted, duplicate-free tuple")

    @property
    def n_enc_layers(self) -> int:
        return len(self.encoder_kinds)

    def positions(self, kind: LayerKind) -> list[int]:
        return [i + 1 for i, k in enumerate(self.encoder_kinds) if k is kind]

    def is_search(self) -> bool:
        return all(k is LayerKind.MIXED_SEARCH for k in self.encoder_kinds)


def make_spec(n_enc: int, decoder_mode: str, src=(), tgt=(), search=False, dims=None, languages=None) -> ArchitectureSpec:
    src, tgt = set(src), set(tgt)
    if search and (src or tgt):
        raise ConfigError("a search spec takes no explicit LSL placements")
    if src & tgt:
        raise ConfigError(f"layers {sorted(src & tgt)} listed as both src and tgt")
    for i in src | tgt:
        if not 1 <= i <= n_enc:
            raise ConfigError(f"layer index {i} outside [1, {n_enc}]")
    kinds = []
    for i in range(1, n_enc + 1):
        if search:
            kinds.append(LayerKind.MIXED_SEARCH)
        elif i in src:
            kinds.append(LayerKind.LSL_SRC)
        elif i in tgt:
            kinds.append(LayerKind.LSL_TGT)
        else:
            kinds.append(LayerKind.SHARED)
    return ArchitectureSpec(tuple(kinds), decoder_mode, dims, languages)


_INT_LIST = re.compile(r"^\[(\s*\d+\s*(,\s*\d+\s*)*)?\]$")


def parse_arch(text: str) -> ArchitectureSpec:
    """Parse `enc=<N> dec=<shared|separate> src=[i,...] tgt=[j,...]` notation.

    Accepts whitespace- or newline-separated key=value entries; a search
    model is written as `search=all` in place of the src/tgt lists.
    """
    fields = {}
    for item in text.split():
        if "=" not in item:
            raise ConfigError(f"malformed architecture item {item!r}")
        key, value = item.split("=", 1)
        if key in fields:
            raise ConfigError(f"duplicate architecture key {key!r}")
        fields[key] = value

    def int_list(key):
        value = fields.pop(key, "[]")
        if not _INT_LIST.match(value):
            raise ConfigError(f"malformed index list {key}={value!r}")
        inner = value.strip("[]").strip()
        return [int(x) for x in inner.split(",")] if inner else []

    try:
        n_enc = int(fields.pop("enc"))
        dec = fields.pop("dec")
    except KeyError as exc:
        raise ConfigError(f"architecture notation missing key {exc.args[0]!r}") from None
    except ValueError:
        raise ConfigError(f"enc must be an integer, got {fields.get('enc', text)!r}") from None
    search = fields.pop("search", None)
    if search not in (None, "all"):
        raise ConfigError(f"search must be 'all', got {search!r}")
    src, tgt = int_list("src"), int_list("tgt")
    if fields:
        raise ConfigError(f"unknown architecture keys: {sorted(fields)}")
    return make_spec(n_enc, dec, src, tgt, search=search == "all")


def render_arch(spec: ArchitectureSpec) -> str:
    if spec.is_search():
        return f"enc={spec.n_enc_layers} dec={spec.decoder_mode} search=all"
    src = ",".join(map(str, spec.positions(LayerKind.LSL_SRC)))
    tgt = ",".join(map(str, spec.positions(LayerKind.LSL_TGT)))
    return f"enc={spec.n_enc_layers} dec={spec.decoder_mode} src=[{src}] tgt=[{tgt}]"


def spec_to_lines(spec: ArchitectureSpec) -> str:
    """Line-oriented serialization used by the CLI and checkpoints."""
    lines = [f"arch={render_arch(spec)}"]
    if spec.dims is not None:
        d = spec.dims
        lines.append(
            f"dims={d.d_model},{d.d_ffn},{d.n_heads},{d.n_enc_layers},{d.n_dec_layers},{d.vocab_size}"
        )
    if spec.languages is not None:
        lines.append("languages=" + ",".join(spec.languages))
    return "\n".join(lines) + "\n"


def spec_from_lines(text: str) -> ArchitectureSpec:
    arch_text = None
    dims = None
    languages = None
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, _, value = line.partition("=")
        if key == "arch":
            arch_text = value
        elif key == "dims":
            nums = [int(x) for x in value.split(",")]
            if len(nums) != 6:
                raise ConfigError("dims line must have 6 comma-separated integers")
            dims = ModelDims(*nums)
        elif key == "languages":
            languages = tuple(sorted(value.split(",")))
        else:
            raise ConfigError(f"unknown spec file key {key!r}")
    if arch_text is None:
        raise ConfigError("spec file missing the arch= line")
    spec = parse_arch(arch_text)
    if dims is not None and dims.n_enc_layers != spec.n_enc_layers:
        raise ConfigError("dims encoder depth disagrees with the notation")
    return replace(spec, dims=dims, languages=languages)


# ---------------------------------------------------------------------------
# model


@dataclass
class EncoderSlot:
    kind: LayerKind
    shared: LayerParams | None = None
    bank: LslBank | None = None
    mix: MixingState | None = None


class Model:
    """Encoder-decoder with optional language-specific encoder layers."""

    def __init__(self, spec: ArchitectureSpec, dims: ModelDims, languages, vocab: Vocab, seed: int):
        self.spec = spec
        self.dims = dims
        self.languages = tuple(sorted(set(languages)))
        self.vocab = vocab
        self.seed = seed
        if dims.n_enc_layers != spec.n_enc_layers:
            raise ConfigError("spec/dims disagree on encoder depth")
        if dims.vocab_size != len(vocab):
            raise ConfigError("dims.vocab_size disagrees with the vocabulary")

        rng = np.random.default_rng(seed)
        d = dims.d_model
        self.embedding = Tensor(rng.normal(0, d**-0.5, size=(dims.vocab_size, d)), requires_grad=True)

        self.encoder: list[EncoderSlot] = []
        for kind in spec.encoder_kinds:
            slot = EncoderSlot(kind)
            if kind in (LayerKind.SHARED, LayerKind.MIXED_SEARCH):
                slot.shared = init_encoder_layer(dims, rng)
            if kind is LayerKind.LSL_SRC:
                slot.bank = LslBank(IndexMode.SRC, {l: init_encoder_layer(dims, rng) for l in self.languages})
            elif kind is LayerKind.LSL_TGT:
                slot.bank = LslBank(IndexMode.TGT, {l: init_encoder_layer(dims, rng) for l in self.languages})
            elif kind is LayerKind.MIXED_SEARCH:
                # one bank per searched layer, reused by the src and tgt routes
                slot.bank = LslBank(IndexMode.SRC, {l: init_encoder_layer(dims, rng) for l in self.languages})
                slot.mix = MixingState()
            self.encoder.append(slot)

        def decoder_stack():
            return [init_decoder_layer(dims, rng) for _ in range(dims.n_dec_layers)]

        if spec.decoder_mode == "shared":
            self.decoders = {None: decoder_stack()}
        else:
            self.decoders = {l: decoder_stack() for l in self.languages}

    # -- parameter enumeration ---------------------------------------------

    def parameters(self):
        yield "embedding", self.embedding
        for i, slot in enumerate(self.encoder):
            if slot.shared is not None:
                for k, t in slot.shared.items():
                    yield f"enc{i}.shared.{k}", t
            if slot.bank is not None:
                for lang, p in slot.bank.sub_layers.items():
                    for k, t in p.items():
                        yield f"enc{i}.bank.{lang}.{k}", t
            if slot.mix is not None:
                yield f"enc{i}.gates", slot.mix.logits
        for lang, stack in self.decoders.items():
            tag = "dec" if lang is None else f"dec.{lang}"
            for j, p in enumerate(stack):
                for k, t in p.items():
                    yield f"{tag}.{j}.{k}", t

    def touched_parameters(self, ctx: RoutingContext):
        """Parameters read by one forward pass for a single direction."""
        yield "embedding", self.embedding
        for i, slot in enumerate(self.encoder):
            if slot.kind is LayerKind.SHARED:
                for k, t in slot.shared.items():
                    yield f"enc{i}.shared.{k}", t
            elif slot.kind in (LayerKind.LSL_SRC, LayerKind.LSL_TGT):
                lang = route(ctx, slot.bank.index_mode, slot.bank.sub_layers)
                for k, t in slot.bank.sub_layers[lang].items():
                    yield f"enc{i}.bank.{lang}.{k}", t
            else:  # all three branches are evaluated in search mode
                for k, t in slot.shared.items():
                    yield f"enc{i}.shared.{k}", t
                for lang in {ctx.src, ctx.tgt}:
                    for k, t in slot.bank.sub_layers[lang].items():
                        yield f"enc{i}.bank.{lang}.{k}", t
                yield f"enc{i}.gates", slot.mix.logits
        lang = None if self.spec.decoder_mode == "shared" else ctx.tgt
        tag = "dec" if lang is None else f"dec.{lang}"
        for j, p in enumerate(self.decoders[lang]):
            for k, t in p.items():
                yield f"{tag}.{j}.{k}", t

    def zero_grad(self):
        for _, t in self.parameters():
            t.grad = None

    def mixing_snapshot(self):
        """Per-searched-layer gate weights (simplex triples)."""
        return [
            tuple(float(w) for w in mixing_weights(slot.mix.logits.values))
            for slot in self.encoder
            if slot.mix is not None
        ]

    # -- forward ------------------------------------------------------------

    def encode(self, src_ids: np.ndarray, ctx: RoutingContext, src_mask: np.ndarray) -> Tensor:
        bias = attention_bias_from_key_mask(src_mask)
        h = embed_sequence(src_ids, self.embedding)
        for slot in self.encoder:
            if slot.kind is LayerKind.SHARED:
                h = encoder_layer_forward(h, bias, slot.shared, self.dims.n_heads)
            elif slot.kind in (LayerKind.LSL_SRC, LayerKind.LSL_TGT):
                lang = route(ctx, slot.bank.index_mode, slot.bank.sub_layers)
                h = encoder_layer_forward(h, bias, slot.bank.sub_layers[lang], self.dims.n_heads)
            else:
                h = mixed_layer_forward(
                    h, bias, ctx, slot.shared, slot.bank, slot.bank, slot.mix, self.dims.n_heads
                )
        return h

    def decode_step(self, enc_out: Tensor, tgt_ids: np.ndarray, ctx: RoutingContext,
                    src_mask: np.ndarray, tgt_mask: np.ndarray) -> Tensor:
        self_bias = causal_bias(tgt_ids.shape[-1]) + attention_bias_from_key_mask(tgt_mask)
        cross_bias = attention_bias_from_key_mask(src_mask)
        lang = None if self.spec.decoder_mode == "shared" else ctx.tgt
        if lang is not None and lang not in self.decoders:
            raise KeyError(f"no decoder for target language {lang!r}")
        h = embed_sequence(tgt_ids, self.embedding)
        for p in self.decoders[lang]:
            h = decoder_layer_forward(h, enc_out, self_bias, cross_bias, p, self.dims.n_heads)
        return linear(h, T.transpose(self.embedding))  # tied output projection

    def forward(self, src_ids, tgt_ids, ctx, src_mask=None, tgt_mask=None) -> Tensor:
        src_ids = np.asarray(src_ids)
        tgt_ids = np.asarray(tgt_ids)
        if src_mask is None:
            src_mask = src_ids != self.vocab.pad_id
        if tgt_mask is None:
            tgt_mask = tgt_ids != self.vocab.pad_id
        enc_out = self.encode(src_ids, ctx, src_mask)
        return self.decode_step(enc_out, tgt_ids, ctx, src_mask, tgt_mask)


def build_model(spec: ArchitectureSpec, seed: int, dims: ModelDims | None = None,
                languages=None, vocab: Vocab | None = None) -> Model:
    """Instantiate a model; dims/languages fall back to the spec's own."""
    dims = dims or spec.dims
    languages = languages or spec.languages
    if dims is None or languages is None:
        raise ConfigError("build_model needs dims and languages (in the spec or as arguments)")
    if vocab is None:
        vocab = Vocab(languages)
        if dims.vocab_size != len(vocab):
            dims = replace(dims, vocab_size=len(vocab))
    return Model(spec, dims, languages, vocab, seed)


# ---------------------------------------------------------------------------
# parameter accounting


@dataclass(frozen=True)
class ParamReport:
    total: int
    effective: int
    breakdown: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.effective > self.total:
            raise ConfigError("effective parameter count exceeds total")


def count_params(model: Model) -> ParamReport:
    """Graph-traversal count; verifies |θ_eff| is direction-independent."""
    breakdown = {"embeddings": model.embedding.size, "encoder_shared": 0,
                 "encoder_lsl": 0, "gates": 0, "decoders": 0}
    total = 0
    for name, t in model.parameters():
        total += t.size
        if name == "embedding":
            continue
        if ".gates" in name:
            breakdown["gates"] += t.size
        elif ".bank." in name:
            breakdown["encoder_lsl"] += t.size
        elif name.startswith("enc"):
            breakdown["encoder_shared"] += t.size
        else:
            breakdown["decoders"] += t.size

    effectives = set()
    for src in model.languages:
        for tgt in model.languages:
            if src == tgt:
                continue
            seen = {id(t) for _, t in model.touched_parameters(RoutingContext(src, tgt))}
            effectives.add(
                sum(t.size for _, t in model.parameters() if id(t) in seen)
            )
    if len(effectives) != 1:
        raise ConfigError(f"effective parameter count varies across directions: {sorted(effectives)}")
    return ParamReport(total, effectives.pop(), breakdown)


def count_params_symbolic(dims: ModelDims, n_languages: int, spec: ArchitectureSpec) -> ParamReport:
    """Closed-form counts; agrees exactly with count_params on built models."""
    enc_layer = encoder_layer_param_count(dims)
    dec_layer = decoder_layer_param_count(dims)
    emb = dims.vocab_size * dims.d_model
    enc_shared = 0
    enc_lsl = 0
    gates = 0
    eff_enc = 0
    for kind in spec.encoder_kinds:
        if kind is LayerKind.SHARED:
            enc_shared += enc_layer
            eff_enc += enc_layer
        elif kind in (LayerKind.LSL_SRC, LayerKind.LSL_TGT):
            enc_lsl += n_languages * enc_layer
            eff_enc += enc_layer
        else:  # mixed: shared + one bank shared between src and tgt routes
            enc_shared += enc_layer
            enc_lsl += n_languages * enc_layer
            gates += 3
            # a forward pass reads the shared branch + src and tgt sub-layers
            eff_enc += 3 * enc_layer + 3
    dec_stack = dims.n_dec_layers * dec_layer
    n_decoders = 1 if spec.decoder_mode == "shared" else n_languages
    total = emb + enc_shared + enc_lsl + gates + n_decoders * dec_stack
    effective = emb + eff_enc + dec_stack
    return ParamReport(
        total,
        effective,
        {
            "embeddings": emb,
            "encoder_shared": enc_shared,
            "encoder_lsl": enc_lsl,
            "gates": gates,
            "decoders": n_decoders * dec_stack,
        },
    )


# ---------------------------------------------------------------------------
# selection and dense pre-training


@dataclass(frozen=True)
class MixingRunResult:
    """Converged per-layer gate weights of one search run."""

    weights: tuple  # tuple of (w_shared, w_src, w_tgt) per encoder layer
    seed: int

    def __post_init__(self):
        for triple in self.weights:
            if len(triple) != 3 or min(triple) < 0 or abs(sum(triple) - 1.0) > 1e-9:
                raise ConfigError(f"not a simplex triple: {triple}")


def average_mixing_weights(runs) -> list:
    """Arithmetic mean of post-softmax weights across runs, renormalized."""
    runs = list(runs)
    if not runs:
        raise ConfigError("need at least one search run")
    depths = {len(r.weights) for r in runs}
    if len(depths) != 1:
        raise ConfigError("runs disagree on encoder depth")
    stacked = np.array([r.weights for r in runs], dtype=np.float64)
    mean = stacked.mean(axis=0)
    mean /= mean.sum(axis=1, keepdims=True)
    return [tuple(row) for row in mean]


def select_architecture(runs, decoder_mode: str, dims=None, languages=None) -> ArchitectureSpec:
    """Per-layer argmax of the averaged weights; ties resolve to SHARED."""
    averaged = average_mixing_weights(runs)
    kinds = []
    for w_shared, w_src, w_tgt in averaged:
        best = max(w_shared, w_src, w_tgt)
        if w_shared >= best:  # tie-break toward the cheapest kind
            kinds.append(LayerKind.SHARED)
        elif w_src >= best:
            kinds.append(LayerKind.LSL_SRC)
        else:
            kinds.append(LayerKind.LSL_TGT)
    return ArchitectureSpec(tuple(kinds), decoder_mode, dims, languages)


def dense_pretrain_init(target: Model, baseline: Model) -> Model:
    """Copy a fully shared baseline into every branch of the target, in place.

    Afterwards the target's forward pass equals the baseline's exactly for
    every direction, since all branches of a layer hold identical weights.
    """
    if target.dims != baseline.dims:
        raise ConfigError("dense pre-training requires identical model dims")
    if target.spec.decoder_mode != baseline.spec.decoder_mode:
        raise ConfigError("decoder modes must match for dense pre-training")
    if any(k is not LayerKind.SHARED for k in baseline.spec.encoder_kinds):
        raise ConfigError("the pre-trained baseline must have an all-shared encoder")
    if target.languages != baseline.languages:
        raise ConfigError("language sets must match for dense pre-training")

    target.embedding.values[...] = baseline.embedding.values
    for slot, base_slot in zip(target.encoder, baseline.encoder):
        if slot.shared is not None:
            slot.shared.copy_from(base_slot.shared)
        if slot.bank is not None:
            for p in slot.bank.sub_layers.values():
                p.copy_from(base_slot.shared)
    for lang, stack in target.decoders.items():
        for p, base_p in zip(stack, baseline.decoders[lang]):
            p.copy_from(base_p)
    return target
