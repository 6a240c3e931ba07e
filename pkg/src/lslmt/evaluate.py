"""Greedy decoding, chrF scoring, paired bootstrap, direction-matrix reports."""

from __future__ import annotations

import re
from dataclasses import dataclass, field

import numpy as np

from .arch import Model
from .data import tag_source
from .errors import ConfigError, DataError
from .lsl import RoutingContext


@dataclass(frozen=True)
class ChrfConfig:
    max_ngram: int = 6
    beta: float = 2.0
    effective_order: bool = True
    remove_whitespace: bool = True

    def __post_init__(self):
        if self.max_ngram < 1 or self.beta <= 0:
            raise ConfigError("ChrfConfig requires max_ngram >= 1 and beta > 0")


_WS = re.compile(r"\s+")


def _strip_ws(text: str) -> str:
    return _WS.sub("", text)


def _ngram_counts(text: str, n: int) -> dict:
    counts = {}
    for i in range(len(text) - n + 1):
        gram = text[i : i + n]
        counts[gram] = counts.get(gram, 0) + 1
    return counts


def chrf_statistics(hypothesis: str, reference: str, cfg: ChrfConfig) -> list:
    """Per-order (hyp_count, ref_count, match_count) triples."""
    if cfg.remove_whitespace:
        hypothesis = _strip_ws(hypothesis)
        reference = _strip_ws(reference)
    stats = []
    for n in range(1, cfg.max_ngram + 1):
        hyp = _ngram_counts(hypothesis, n)
        ref = _ngram_counts(reference, n)
        match = sum(min(c, ref.get(g, 0)) for g, c in hyp.items())
        stats.append((sum(hyp.values()), sum(ref.values()), match))
    return stats


def _score_from_statistics(stats, cfg: ChrfConfig) -> float:
    prec_sum = rec_sum = 0.0
    orders = 0
    for hyp_total, ref_total, match in stats:
        if cfg.effective_order and ref_total == 0:
            continue
        orders += 1
        prec_sum += match / hyp_total if hyp_total else 0.0
        rec_sum += match / ref_total if ref_total else 0.0
    if orders == 0:
        # both sides shorter than every order: identical-empty convention
        return 100.0
    precision = prec_sum / orders
    recall = rec_sum / orders
    if precision + recall == 0:
        return 0.0
    b2 = cfg.beta**2
    return 100.0 * (1 + b2) * precision * recall / (b2 * precision + recall)


def chrf(hypothesis: str, reference: str, cfg: ChrfConfig = ChrfConfig()) -> float:
    """Character n-gram F-score of one sentence pair, on a 0-100 scale."""
    if cfg.remove_whitespace:
        hypothesis, reference = _strip_ws(hypothesis), _strip_ws(reference)
    if not reference:
        return 100.0 if not hypothesis else 0.0
    if not hypothesis:
        return 0.0
    plain = ChrfConfig(cfg.max_ngram, cfg.beta, cfg.effective_order, False)
    return _score_from_statistics(chrf_statistics(hypothesis, reference, plain), plain)


def corpus_chrf(hypotheses, references, cfg: ChrfConfig = ChrfConfig()) -> float:
    """chrF over aggregated corpus-level n-gram statistics."""
    hypotheses, references = list(hypotheses), list(references)
    if len(hypotheses) != len(references):
        raise DataError("corpus_chrf: hypothesis/reference counts differ")
    if not hypotheses:
        raise DataError("corpus_chrf over an empty corpus")
    agg = [(0, 0, 0)] * cfg.max_ngram
    for hyp, ref in zip(hypotheses, references):
        for i, triple in enumerate(chrf_statistics(hyp, ref, cfg)):
            agg[i] = tuple(a + b for a, b in zip(agg[i], triple))
    if all(h == 0 and r == 0 for h, r, _ in agg):
        return 100.0
    return _score_from_statistics(agg, cfg)


def paired_bootstrap(hyps_a, hyps_b, refs, n_resamples: int = 1000, seed: int = 0,
                     cfg: ChrfConfig = ChrfConfig()) -> float:
    """One-sided bootstrap p-value for "system A beats system B" on chrF.

    Resamples sentence indices with replacement; a resample where A scores
    strictly below B counts 1, an exact tie counts 1/2.  Deterministic given
    (seed, corpus length, n_resamples).
    """
    if not (len(hyps_a) == len(hyps_b) == len(refs)):
        raise DataError("paired_bootstrap: corpus lengths differ")
    n = len(refs)
    if n < 2:
        raise DataError("paired_bootstrap needs at least 2 sentences")

    stats_a = [chrf_statistics(h, r, cfg) for h, r in zip(hyps_a, refs)]
    stats_b = [chrf_statistics(h, r, cfg) for h, r in zip(hyps_b, refs)]
    arr_a = np.array(stats_a, dtype=np.float64)  # [n, orders, 3]
    arr_b = np.array(stats_b, dtype=np.float64)

    rng = np.random.default_rng(seed)
    worse = 0.0
    for _ in range(n_resamples):
        idx = rng.integers(0, n, size=n)
        score_a = _score_from_statistics(arr_a[idx].sum(axis=0), cfg)
        score_b = _score_from_statistics(arr_b[idx].sum(axis=0), cfg)
        if score_a < score_b:
            worse += 1.0
        elif score_a == score_b:
            worse += 0.5
    return worse / n_resamples


# ---------------------------------------------------------------------------
# decoding and the direction matrix


def greedy_decode(model: Model, src_tokens, ctx: RoutingContext, max_len: int = 32):
    """Deterministic greedy decoding; tagging (always <HQ>) happens inside."""
    if max_len < 1:
        raise ConfigError("max_len must be >= 1")
    vocab = model.vocab
    src = np.array([vocab.encode(tag_source(src_tokens, "HQ", ctx.src, ctx.tgt))])
    src_mask = src != vocab.pad_id
    enc_out = model.encode(src, ctx, src_mask)
    out = [vocab.bos_id]
    for _ in range(max_len):
        tgt = np.array([out])
        logits = model.decode_step(enc_out, tgt, ctx, src_mask, tgt != vocab.pad_id)
        nxt = int(np.argmax(logits.values[0, -1]))
        if nxt == vocab.eos_id:
            break
        out.append(nxt)
    return vocab.decode(out[1:])


@dataclass(frozen=True)
class DirectionScore:
    src: str
    tgt: str
    chrf: float
    n: int


@dataclass
class MatrixReport:
    scores: list  # DirectionScore per evaluated direction
    missing: list = field(default_factory=list)

    def _mean(self, picks):
        picks = [s.chrf for s in picks]
        return sum(picks) / len(picks) if picks else None

    def overall(self):
        return self._mean(self.scores)

    def by_source(self):
        langs = sorted({s.src for s in self.scores})
        return {l: self._mean([s for s in self.scores if s.src == l]) for l in langs}

    def by_target(self):
        langs = sorted({s.tgt for s in self.scores})
        return {l: self._mean([s for s in self.scores if s.tgt == l]) for l in langs}

    def by_family_pair(self, families: dict):
        out = {}
        for s in self.scores:
            key = (families[s.src], families[s.tgt])
            out.setdefault(key, []).append(s)
        return {k: self._mean(v) for k, v in sorted(out.items())}

    def subset_average(self, directions):
        return self._mean([s for s in self.scores if (s.src, s.tgt) in directions])


def evaluate_matrix(model: Model, test_corpora: dict, cfg: ChrfConfig = ChrfConfig(),
                    max_len: int = 32) -> MatrixReport:
    """Decode and score every direction; each test sentence is decoded once."""
    scores = []
    missing = []
    for (src_id, tgt_id) in sorted(test_corpora):
        examples = test_corpora[(src_id, tgt_id)]
        if not examples:
            missing.append((src_id, tgt_id))
            continue
        ctx = RoutingContext(src_id, tgt_id)
        hyps, refs = [], []
        for ex in examples:
            hyp = greedy_decode(model, ex.src, ctx, max_len=max_len)
            hyps.append(" ".join(hyp))
            refs.append(" ".join(ex.tgt))
        scores.append(DirectionScore(src_id, tgt_id, corpus_chrf(hyps, refs, cfg), len(examples)))
    return MatrixReport(scores, missing)


def report_lines(report: MatrixReport, families: dict | None = None,
                 zero_shot: set | None = None):
    """Tab-separated per-direction rows followed by aggregate rows."""
    for s in report.scores:
        yield f"{s.src}\t{s.tgt}\t{s.chrf:.2f}\t{s.n}"
    for s in report.missing:
        yield f"{s[0]}\t{s[1]}\tabsent\t0"
    yield f"average\toverall\t{report.overall():.2f}\t{len(report.scores)}"
    for lang, score in report.by_source().items():
        yield f"average\tfrom-{lang}\t{score:.2f}\t-"
    for lang, score in report.by_target().items():
        yield f"average\tinto-{lang}\t{score:.2f}\t-"
    if families is not None:
        for (fa, fb), score in report.by_family_pair(families).items():
            yield f"average\tfamily-{fa}-to-{fb}\t{score:.2f}\t-"
    if zero_shot is not None:
        score = report.subset_average(zero_shot)
        shown = "absent" if score is None else f"{score:.2f}"
        yield f"average\tzero-shot\t{shown}\t{len(zero_shot)}"
