"""End-to-end acceptance suite.

Each test covers one acceptance criterion and prints a single pass/fail
line outside pytest's capture, so the verdicts survive in plain logs.
"""

import time

import numpy as np
import pytest

from conftest import finite_diff_check
from lslmt import tensors as T
from lslmt.arch import (
    MixingRunResult,
    average_mixing_weights,
    build_model,
    dense_pretrain_init,
    make_spec,
    parse_arch,
    render_arch,
    select_architecture,
)
from lslmt.cli import main
from lslmt.data import (
    CorpusSpec,
    Vocab,
    direction_filter,
    generate_corpus,
    zero_shot_directions,
)
from lslmt.evaluate import DirectionScore, MatrixReport, chrf, paired_bootstrap
from lslmt.layers import (
    ModelDims,
    causal_bias,
    decoder_layer_forward,
    encoder_layer_forward,
    init_decoder_layer,
    init_encoder_layer,
    linear,
    multi_head_attention,
)
from lslmt.lsl import (
    IndexMode,
    LslBank,
    MixingState,
    RoutingContext,
    lsl_forward,
    mixed_layer_forward,
)
from lslmt.tensors import Tensor
from lslmt.train import TrainConfig, batch_loss, corpus_loss, pick_batch, train_loop
from test_evaluate import ORACLE_VECTORS, oracle_chrf

LANGS = ("syn0", "syn1", "syn2", "syn3")


def report(capsys, num, name, ok, detail=""):
    with capsys.disabled():
        verdict = "PASS" if ok else "FAIL"
        suffix = f"  ({detail})" if detail else ""
        print(f"[criterion {num:2d}] {name}: {verdict}{suffix}")
    assert ok, f"criterion {num} ({name}) failed: {detail}"


def test_criterion_01_parameter_accounting(capsys):
    # paper-scale rows, each (arch, expected total, expected effective)
    rows = [
        ("enc=16 dec=separate", 299e6, 186e6),
        ("enc=16 dec=separate src=[3,4] tgt=[13,14,15]", 441e6, 186e6),
        ("enc=16 dec=shared", 186e6, 186e6),
        ("enc=16 dec=shared src=[4] tgt=[12,13,14,15,16]", 356e6, None),
        ("enc=16 dec=separate search=all", 804e6, None),
    ]
    t0 = time.time()
    ok, detail = True, ""
    for arch, want_total, want_eff in rows:
        assert main(["params", "--arch", arch]) == 0
        out = capsys.readouterr().out
        total = int(out.split("total parameters:")[1].split("\n")[0].replace(",", ""))
        eff = int(out.split("effective parameters:")[1].split("\n")[0].replace(",", ""))
        for got, want in ((total, want_total), (eff, want_eff)):
            if want is not None and abs(got - want) / want > 0.03:
                ok, detail = False, f"{arch}: got {got:,}, want ~{want:,.0f}"
    elapsed = time.time() - t0
    if elapsed >= 1.0:
        ok, detail = False, f"took {elapsed:.2f}s"
    report(capsys, 1, "parameter accounting within 3% of paper scale", ok, detail)


def test_criterion_02_gradient_suite(capsys):
    rng = np.random.default_rng(0)
    dims = ModelDims(8, 16, 2, 2, 2, 11)
    enc = init_encoder_layer(dims, rng)
    dec = init_decoder_layer(dims, rng)
    bank = LslBank(IndexMode.SRC, {l: init_encoder_layer(dims, rng) for l in LANGS})
    mix = MixingState(Tensor(rng.normal(size=3), requires_grad=True))
    ctx = RoutingContext("syn1", "syn2")
    x = Tensor(rng.normal(size=(3, 8)), requires_grad=True)
    y = Tensor(rng.normal(size=(2, 8)), requires_grad=True)
    attn_keys = ("wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo")

    t0 = time.time()
    cases = {
        "attention": (
            lambda: T.sum_all(multi_head_attention(x, x, x, None, enc, 2)),
            [x] + [enc[k] for k in attn_keys],
        ),
        "ffn": (
            lambda: T.sum_all(linear(T.relu(linear(x, enc["w1"], enc["b1"])), enc["w2"], enc["b2"])),
            [x, enc["w1"], enc["b1"], enc["w2"], enc["b2"]],
        ),
        "encoder layer": (
            lambda: T.sum_all(encoder_layer_forward(x, None, enc, 2)),
            [x] + list(enc.values()),
        ),
        "decoder layer": (
            lambda: T.sum_all(decoder_layer_forward(y, x, causal_bias(2), None, dec, 2)),
            [x, y] + list(dec.values()),
        ),
        "lsl forward": (
            lambda: T.sum_all(lsl_forward(x, None, ctx, bank, 2)),
            [x] + list(bank.sub_layers["syn1"].values()),
        ),
        "mixed layer with gates": (
            lambda: T.sum_all(mixed_layer_forward(x, None, ctx, enc, bank, bank, mix, 2)),
            [x, mix.logits] + list(enc.values()),
        ),
    }
    ok, detail = True, ""
    for name, (loss, params) in cases.items():
        try:
            finite_diff_check(loss, params, tol=1e-4, max_coords=6)
        except AssertionError as exc:
            ok, detail = False, f"{name}: {exc}"
            break
    elapsed = time.time() - t0
    if ok and elapsed >= 60:
        ok, detail = False, f"took {elapsed:.1f}s"
    report(capsys, 2, "finite-difference gradients for every layer type", ok, detail)


def test_criterion_03_mixing_vertices_and_simplex(capsys):
    rng = np.random.default_rng(1)
    dims = ModelDims(16, 32, 2, 2, 1, 11)
    shared = init_encoder_layer(dims, rng)
    bank = LslBank(IndexMode.SRC, {l: init_encoder_layer(dims, rng) for l in LANGS})
    x = Tensor(rng.normal(size=(3, 16)))
    ctx = RoutingContext("syn0", "syn2")
    ok, detail = True, ""

    # simplex vertices reduce to the single selected branch, bit-identically
    branches = [
        encoder_layer_forward(x, None, shared, 2).values,
        encoder_layer_forward(x, None, bank.sub_layers["syn0"], 2).values,
        encoder_layer_forward(x, None, bank.sub_layers["syn2"], 2).values,
    ]
    for vertex, want in enumerate(branches):
        logits = np.zeros(3)
        logits[vertex] = 1000.0
        got = mixed_layer_forward(x, None, ctx, shared, bank, bank,
                                  MixingState(Tensor(logits)), 2).values
        if not np.array_equal(got, want):
            ok, detail = False, f"vertex {vertex} not bit-identical"

    # identical branches make the output weight-independent
    base = init_encoder_layer(dims, rng)
    twin = LslBank(IndexMode.SRC, {l: base.clone() for l in LANGS})
    outs = [
        mixed_layer_forward(x, None, ctx, base, twin, twin,
                            MixingState(Tensor(np.asarray(l, float))), 2).values
        for l in ([0.0, 0.0, 0.0], [2.0, -1.0, 0.5], [-3.0, 3.0, 0.0])
    ]
    if not all(np.allclose(o, outs[0], rtol=1e-12, atol=1e-12) for o in outs[1:]):
        ok, detail = False, "identical branches not weight-independent"

    # the weights stay on the simplex after every step of a 500-step search
    vocab = Vocab(LANGS, 16)
    model = build_model(make_spec(2, "separate", search=True), 0,
                       ModelDims(16, 32, 2, 2, 1, len(vocab)), LANGS, vocab)
    corpus = generate_corpus(CorpusSpec(n_languages=4, alphabet_size=16,
                                        pairs_per_direction=16, max_len=8, seed=2))
    cfg = TrainConfig(max_steps=500, warmup_steps=50, batch_size=4, log_every=1)
    _, log, _ = train_loop(model, corpus, cfg, mode="SEARCH")
    if len(log.records) != 500:
        ok, detail = False, f"expected 500 logged steps, got {len(log.records)}"
    for record in log.records:
        for triple in record["weights"]:
            if min(triple) < 0 or abs(sum(triple) - 1.0) > 1e-12:
                ok, detail = False, f"simplex violated at step {record['step']}"
    report(capsys, 3, "mixing vertices exact and simplex preserved over 500 steps", ok, detail)


def test_criterion_04_routing_invariance(capsys):
    vocab = Vocab(LANGS, 16)
    dims = ModelDims(16, 32, 2, 4, 1, len(vocab))
    model = build_model(make_spec(4, "separate", src=[2], tgt=[3]), 0, dims, LANGS, vocab)
    corpus = generate_corpus(CorpusSpec(n_languages=4, alphabet_size=16,
                                        pairs_per_direction=4, max_len=8, seed=3))
    ok, detail = True, ""
    cardinalities = set()
    for (src_id, tgt_id), examples in sorted(corpus.items()):
        ctx = RoutingContext(src_id, tgt_id)
        cardinalities.add(sum(t.values.size for _, t in model.touched_parameters(ctx)))
        model.zero_grad()
        T.backward(batch_loss(model, examples, ctx))
        touched = {id(t) for _, t in model.touched_parameters(ctx)}
        for name, t in model.parameters():
            stray = t.grad is not None and np.abs(t.grad).sum() > 0
            if id(t) not in touched and stray:
                ok, detail = False, f"gradient leaked into {name} for {src_id}->{tgt_id}"
    if len(cardinalities) != 1:
        ok, detail = False, f"effective sizes differ across directions: {cardinalities}"
    report(capsys, 4, "per-direction effective size constant, no gradient leakage", ok, detail)


def test_criterion_05_dense_pretraining_identity(capsys):
    vocab = Vocab(LANGS, 16)
    dims = ModelDims(16, 32, 2, 3, 1, len(vocab))
    corpus = generate_corpus(CorpusSpec(n_languages=4, alphabet_size=16,
                                        pairs_per_direction=4, max_len=8, seed=4))
    baseline = build_model(make_spec(3, "separate"), 0, dims, LANGS, vocab)
    baseline, _ = train_loop(baseline, corpus,
                             TrainConfig(max_steps=20, warmup_steps=5, batch_size=4, log_every=20))
    student = build_model(make_spec(3, "separate", src=[1], tgt=[3]), 9, dims, LANGS, vocab)
    dense_pretrain_init(student, baseline)
    ok, detail = True, ""
    for (src_id, tgt_id), examples in sorted(corpus.items()):
        ctx = RoutingContext(src_id, tgt_id)
        direction, batch = pick_batch({(src_id, tgt_id): examples}, seed=0, step=1, batch_size=4)
        la = batch_loss(student, batch, ctx).item()
        lb = batch_loss(baseline, batch, ctx).item()
        if la != lb:
            ok, detail = False, f"{src_id}->{tgt_id}: {la} != {lb}"
    report(capsys, 5, "dense pre-training reproduces baseline losses exactly", ok, detail)


def _fig2_like_runs(seed):
    rng = np.random.default_rng(seed)
    weights = []
    for layer in range(1, 17):
        if layer in (3, 4):
            w = [0.2, 0.6, 0.2]
        elif layer in (13, 14, 15):
            w = [0.25, 0.15, 0.6]
        else:
            w = [0.6, 0.2, 0.2]
        w = np.asarray(w) + rng.uniform(-0.05, 0.05, size=3)
        weights.append(tuple(w / w.sum()))
    return MixingRunResult(tuple(weights), seed=seed)


def test_criterion_06_selection_pipeline(capsys):
    runs = [_fig2_like_runs(s) for s in range(3)]
    ok, detail = True, ""
    spec = select_architecture(runs, "separate")
    want = "enc=16 dec=separate src=[3,4] tgt=[13,14,15]"
    if render_arch(spec) != want:
        ok, detail = False, f"selected {render_arch(spec)!r}"
    reordered = select_architecture(list(reversed(runs)), "separate")
    if reordered != spec:
        ok, detail = False, "selection depends on run order"
    averaged = np.array(average_mixing_weights(runs))
    plain = [int(np.argmax(row)) for row in averaged]
    rescaled = [int(np.argmax(row)) for row in averaged * 0.25]
    if plain != rescaled:
        ok, detail = False, "argmax not invariant to uniform rescaling"
    report(capsys, 6, "averaged-weight argmax recovers the published placement", ok, detail)


def test_criterion_07_chrf_oracle(capsys):
    ok, detail = True, ""
    for hyp, ref in ORACLE_VECTORS:
        a, b = chrf(hyp, ref), oracle_chrf(hyp, ref)
        if abs(a - b) > 1e-4:
            ok, detail = False, f"({hyp!r}, {ref!r}): {a} vs {b}"
    if chrf("match me", "match me") != 100.0 or chrf("aaa", "bbb") != 0.0:
        ok, detail = False, "identity/disjoint conventions violated"
    report(capsys, 7, "chrF agrees with an independent implementation to 1e-4", ok, detail)


@pytest.mark.slow
def test_criterion_08_end_to_end_experiment(capsys):
    t0 = time.time()
    vocab = Vocab(LANGS, 64)
    dims = ModelDims(48, 96, 4, 4, 2, len(vocab))
    train = generate_corpus(CorpusSpec(n_languages=4, n_families=2, alphabet_size=64,
                                       pairs_per_direction=5000, max_len=12, seed=5))
    valid = generate_corpus(CorpusSpec(n_languages=4, n_families=2, alphabet_size=64,
                                       pairs_per_direction=40, max_len=12, seed=7105))
    ok, detail = True, ""

    # (a) three search runs, averaged and discretized into a concrete spec
    runs = []
    for r in range(3):
        searcher = build_model(make_spec(4, "separate", search=True), r, dims, LANGS, vocab)
        cfg = TrainConfig(base_lr=1e-3, max_steps=400, warmup_steps=100,
                          batch_size=16, seed=r, log_every=100)
        _, _, result = train_loop(searcher, train, cfg, mode="SEARCH")
        runs.append(result)
    selected = select_architecture(runs, "separate")
    rendered = render_arch(selected)
    if parse_arch(rendered) != selected:
        ok, detail = False, "selected spec does not round-trip"

    # (b, c) selected spec vs the all-shared baseline, 3 seeds x 3000 steps
    baseline_spec = make_spec(4, "separate")
    means = {}
    for label, spec in (("lsl", selected), ("baseline", baseline_spec)):
        losses = []
        for seed in range(3):
            model = build_model(spec, seed, dims, LANGS, vocab)
            cfg = TrainConfig(base_lr=1e-3, max_steps=3000, warmup_steps=200,
                              batch_size=16, seed=seed, log_every=1000)
            model, _ = train_loop(model, train, cfg)
            losses.append(corpus_loss(model, valid))
        means[label] = sum(losses) / len(losses)
    margin = means["lsl"] - means["baseline"]
    if margin > 0.02:
        ok, detail = False, f"LSL mean {means['lsl']:.4f} vs baseline {means['baseline']:.4f}"

    # (d) single-core wall clock
    elapsed = time.time() - t0
    if elapsed >= 900:
        ok, detail = False, f"took {elapsed:.0f}s"
    if ok:
        detail = (f"selected {rendered}; val loss lsl {means['lsl']:.4f} "
                  f"vs baseline {means['baseline']:.4f}; {elapsed:.0f}s")
    report(capsys, 8, "search + selected-vs-baseline training at desk scale", ok, detail)


def test_criterion_09_zero_shot_harness(capsys):
    families = {"syn0": 0, "syn1": 0, "syn2": 1, "syn3": 1}
    trained = direction_filter(families, "ENGLISH_CENTRIC_PLUS_GROUPS", "syn0")
    zero = zero_shot_directions(families, "ENGLISH_CENTRIC_PLUS_GROUPS", "syn0")
    every = direction_filter(families, "FULL")
    ok, detail = True, ""
    if trained & zero or trained | zero != every:
        ok, detail = False, "train/zero-shot sets are not an exact partition"

    scores = {d: 10.0 * i for i, d in enumerate(sorted(every))}
    report_obj = MatrixReport([DirectionScore(s, t, c, 5) for (s, t), c in scores.items()])
    want = sum(scores[d] for d in zero) / len(zero)
    if report_obj.subset_average(zero) != pytest.approx(want):
        ok, detail = False, "zero-shot average not over the exact complement"
    report(capsys, 9, "zero-shot partition exact and averaged over the complement", ok, detail)


def test_criterion_10_bootstrap_null(capsys):
    refs = ["abcd", "efgh", "ijkl", "mnop"] * 5
    hyps = ["abcx", "efgy", "ijkz", "mnoq"] * 5
    ok, detail = True, ""
    for seed in range(10):
        p = paired_bootstrap(hyps, hyps, refs, n_resamples=1000, seed=seed)
        if not 0.3 <= p <= 0.7:
            ok, detail = False, f"self-comparison p={p} at seed {seed}"
    if paired_bootstrap(list(refs), [""] * len(refs), refs, seed=0) != 0.0:
        ok, detail = False, "dominance case p != 0"
    report(capsys, 10, "bootstrap self-comparison near 0.5, dominance at 0", ok, detail)
