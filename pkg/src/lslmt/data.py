"""Synthetic multilingual corpora: cipher languages, tagging, sampling.

Each synthetic language is a permutation cipher over a shared pivot alphabet
plus a family-wide token reordering rule.  Noise-free pairs are exactly
invertible through the pivot, which the tests exploit as an oracle.
"""

from __future__ import annotations

import string
import zlib
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError
from .lsl import RoutingContext

PAD, BOS, EOS = "<pad>", "<bos>", "<eos>"
HQ_TAG, LQ_TAG = "<HQ>", "<LQ>"

# 64 printable single-character pivot symbols
DEFAULT_ALPHABET = tuple(string.ascii_letters + string.digits + "+/")


def lang_tag(lang: str) -> str:
    return f"<{lang}>"


class Vocab:
    """Closed token inventory: specials, tags for a fixed language set, symbols."""

    def __init__(self, languages, alphabet_size: int = 64):
        if alphabet_size < 2 or alphabet_size > len(DEFAULT_ALPHABET):
            raise ConfigError(f"alphabet_size must be in [2, {len(DEFAULT_ALPHABET)}]")
        self.languages = tuple(sorted(set(languages)))
        self.alphabet = DEFAULT_ALPHABET[:alphabet_size]
        self.tokens = (
            [PAD, BOS, EOS, HQ_TAG, LQ_TAG]
            + [lang_tag(lang) for lang in self.languages]
            + list(self.alphabet)
        )
        self.ids = {tok: i for i, tok in enumerate(self.tokens)}
        self.pad_id = self.ids[PAD]
        self.bos_id = self.ids[BOS]
        self.eos_id = self.ids[EOS]

    def __len__(self) -> int:
        return len(self.tokens)

    def encode(self, tokens) -> list[int]:
        try:
            return [self.ids[t] for t in tokens]
        except KeyError as exc:
            raise DataError(f"token {exc.args[0]!r} not in vocabulary") from None

    def decode(self, ids) -> list[str]:
        return [self.tokens[i] for i in ids]


@dataclass(frozen=True)
class SyntheticLanguage:
    """A permutation cipher over the pivot alphabet plus a reorder rule."""

    id: str
    family: int
    cipher: tuple  # pivot symbol index -> language symbol index
    reorder: str  # "identity" or "window_reverse:<k>"

    def encode(self, pivot: list[int]) -> list[int]:
        return _apply_reorder(self.reorder, [self.cipher[s] for s in pivot])

    def decode(self, surface: list[int]) -> list[int]:
        inv = _inverse_permutation(self.cipher)
        return [inv[s] for s in _apply_reorder(self.reorder, list(surface))]


def _inverse_permutation(perm) -> tuple:
    inv = [0] * len(perm)
    for i, p in enumerate(perm):
        inv[p] = i
    return tuple(inv)


def reorder_rule_for_family(family: int) -> str:
    # family 0 keeps pivot order; higher families reverse fixed-size windows
    return "identity" if family == 0 else f"window_reverse:{family + 1}"


def _apply_reorder(rule: str, tokens: list[int]) -> list[int]:
    if rule == "identity":
        return tokens
    kind, _, arg = rule.partition(":")
    if kind != "window_reverse":
        raise ConfigError(f"unknown reorder rule {rule!r}")
    k = int(arg)
    out = []
    for i in range(0, len(tokens), k):
        out.extend(reversed(tokens[i : i + k]))
    return out


def make_language(seed: int, family: int, alphabet_size: int, lang_id: str | None = None) -> SyntheticLanguage:
    """Deterministically derive a language's cipher from its seed."""
    if alphabet_size < 2:
        raise ConfigError("alphabet_size must be at least 2")
    rng = np.random.default_rng(seed)
    cipher = tuple(int(i) for i in rng.permutation(alphabet_size))
    return SyntheticLanguage(
        id=lang_id if lang_id is not None else f"syn{seed}",
        family=family,
        cipher=cipher,
        reorder=reorder_rule_for_family(family),
    )


@dataclass(frozen=True)
class ExamplePair:
    src: tuple  # surface tokens (symbol strings), untagged
    tgt: tuple
    ctx: RoutingContext


def generate_pair(
    src: SyntheticLanguage,
    tgt: SyntheticLanguage,
    pivot: list[int],
    noise_rate: float,
    rng: np.random.Generator,
    alphabet=DEFAULT_ALPHABET,
    quality: str = "HQ",
) -> ExamplePair:
    """Render a pivot sequence in both languages; noise hits the source only."""
    if not pivot:
        raise DataError("pivot sequence must be non-empty")
    n_sym = len(src.cipher)
    src_ids = src.encode(pivot)
    if noise_rate > 0:
        hit = rng.random(len(src_ids)) < noise_rate
        repl = rng.integers(0, n_sym, size=len(src_ids))
        src_ids = [int(repl[i]) if hit[i] else s for i, s in enumerate(src_ids)]
    tgt_ids = tgt.encode(pivot)
    return ExamplePair(
        src=tuple(alphabet[i] for i in src_ids),
        tgt=tuple(alphabet[i] for i in tgt_ids),
        ctx=RoutingContext(src.id, tgt.id, quality),
    )


def tag_source(tokens, quality: str, src: str, tgt: str) -> list[str]:
    """Quality tag up front, language tags appended: <Q> t1..tn <src> <tgt>."""
    tag = HQ_TAG if quality == "HQ" else LQ_TAG
    return [tag, *tokens, lang_tag(src), lang_tag(tgt)]


@dataclass(frozen=True)
class CorpusSpec:
    """Deterministic recipe for a synthetic corpus."""

    n_languages: int = 4
    n_families: int = 2
    alphabet_size: int = 64
    pairs_per_direction: int = 1000
    lq_fraction: float = 0.0  # share of each direction generated as LQ
    lq_noise_rate: float = 0.1
    min_len: int = 4
    max_len: int = 12
    seed: int = 0
    language_seed: int = 0  # languages are shared by splits that differ only in seed
    directions: tuple | None = None  # restrict to these (src, tgt) ids

    def __post_init__(self):
        if not 0 <= self.lq_noise_rate < 1:
            raise ConfigError("lq_noise_rate must be in [0, 1)")
        if self.min_len < 1 or self.max_len < self.min_len:
            raise ConfigError("invalid sentence length range")


def make_language_set(spec: CorpusSpec) -> list[SyntheticLanguage]:
    families = [i % spec.n_families for i in range(spec.n_languages)]
    return [
        make_language(1000 + spec.language_seed * 101 + i, families[i], spec.alphabet_size, f"syn{i}")
        for i in range(spec.n_languages)
    ]


def generate_corpus(spec: CorpusSpec) -> dict:
    """Map (src_id, tgt_id) -> list[ExamplePair]; pure function of the spec."""
    languages = make_language_set(spec)
    by_id = {lang.id: lang for lang in languages}
    alphabet = DEFAULT_ALPHABET[: spec.alphabet_size]
    directions = spec.directions
    if directions is None:
        directions = tuple(
            (a.id, b.id) for a in languages for b in languages if a.id != b.id
        )
    corpus = {}
    for src_id, tgt_id in directions:
        if src_id not in by_id or tgt_id not in by_id:
            raise DataError(f"direction {src_id}->{tgt_id} outside the language set")
        rng = np.random.default_rng(
            [spec.seed, zlib.crc32(src_id.encode()), zlib.crc32(tgt_id.encode())]
        )
        n_lq = int(round(spec.pairs_per_direction * spec.lq_fraction))
        pairs = []
        for i in range(spec.pairs_per_direction):
            length = int(rng.integers(spec.min_len, spec.max_len + 1))
            pivot = [int(s) for s in rng.integers(0, spec.alphabet_size, size=length)]
            lq = i < n_lq
            pairs.append(
                generate_pair(
                    by_id[src_id],
                    by_id[tgt_id],
                    pivot,
                    spec.lq_noise_rate if lq else 0.0,
                    rng,
                    alphabet=alphabet,
                    quality="LQ" if lq else "HQ",
                )
            )
        corpus[(src_id, tgt_id)] = pairs
    return corpus


def write_corpus(path, corpus) -> None:
    """One example per line: src \\t tgt \\t src-lang \\t tgt-lang \\t quality."""
    with open(path, "w", encoding="utf-8") as fh:
        for (src_id, tgt_id) in sorted(corpus):
            for ex in corpus[(src_id, tgt_id)]:
                fh.write(
                    "\t".join(
                        [" ".join(ex.src), " ".join(ex.tgt), src_id, tgt_id, ex.ctx.quality]
                    )
                    + "\n"
                )


def read_corpus(path) -> dict:
    corpus = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.rstrip("\n").split("\t")
            if len(parts) != 5:
                raise DataError(f"{path}:{lineno}: expected 5 tab-separated fields")
            src_toks, tgt_toks, src_id, tgt_id, quality = parts
            ex = ExamplePair(
                src=tuple(src_toks.split()),
                tgt=tuple(tgt_toks.split()),
                ctx=RoutingContext(src_id, tgt_id, quality),
            )
            corpus.setdefault((src_id, tgt_id), []).append(ex)
    return corpus


def temperature_sample(sizes: dict, temperature: float, cap: float) -> dict:
    """Rebalance per-source counts toward size^(1/T), downsampling only.

    Target proportions are q_c ∝ n_c^(1/T).  The common scale is the largest
    one that never upsamples any source; realized counts are then clamped to
    [n_c / cap, n_c].
    """
    if temperature < 1 or cap < 1:
        raise ConfigError("temperature and cap must both be >= 1")
    names = [c for c in sizes if sizes[c] > 0]
    if not names:
        raise DataError("temperature_sample: all sources are empty")
    n = np.array([sizes[c] for c in names], dtype=np.float64)
    q = n ** (1.0 / temperature)
    q /= q.sum()
    total = (n / q).min()
    m = np.clip(np.round(q * total), np.ceil(n / cap), n)
    out = {c: 0 for c in sizes}
    out.update({c: int(v) for c, v in zip(names, m)})
    return out


def direction_filter(families: dict, mode: str, center: str | None = None):
    """Training direction set under FULL or ENGLISH_CENTRIC_PLUS_GROUPS mode.

    The complement (over all ordered pairs) is the zero-shot evaluation set.
    """
    langs = sorted(families)
    all_dirs = {(a, b) for a in langs for b in langs if a != b}
    if mode == "FULL":
        return all_dirs
    if mode != "ENGLISH_CENTRIC_PLUS_GROUPS":
        raise ConfigError(f"unknown direction filter mode {mode!r}")
    if center not in families:
        raise ConfigError(f"center language {center!r} not in language set")
    return {
        (a, b)
        for a, b in all_dirs
        if a == center or b == center or families[a] == families[b]
    }


def zero_shot_directions(families: dict, mode: str, center: str | None = None):
    train = direction_filter(families, mode, center)
    langs = sorted(families)
    return {(a, b) for a in langs for b in langs if a != b} - train
