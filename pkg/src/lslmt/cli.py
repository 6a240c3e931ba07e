"""Command-line entry point covering the full experiment lifecycle.

Subcommands: gen, search, train, eval, params, sweep-lsl-count.  Runs are
laid out as ``runs/<name>/{manifest.json, corpus/, checkpoints/, logs/,
reports/}`` and every command writes its manifest before any results.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from dataclasses import replace
from pathlib import Path

from . import arch as A
from . import data as D
from . import evaluate as E
from . import train as TR
from .errors import ConfigError, DataError, NumericError
from .layers import ModelDims
from .lsl import RoutingContext

CONFIG_DEFAULTS = {
    "name": "run",
    "outdir": "runs",
    "seed": "0",
    # data
    "n_languages": "4",
    "n_families": "2",
    "alphabet_size": "64",
    "pairs_per_direction": "2000",
    "val_pairs": "50",
    "test_pairs": "50",
    "lq_fraction": "0.0",
    "lq_noise_rate": "0.1",
    "min_len": "4",
    "max_len": "12",
    "direction_mode": "FULL",
    "center": "syn0",
    # model
    "d_model": "48",
    "d_ffn": "96",
    "n_heads": "4",
    "n_enc_layers": "4",
    "n_dec_layers": "2",
    "decoder_mode": "separate",
    # training
    "base_lr": "4e-4",
    "warmup_steps": "200",
    "max_steps": "2000",
    "batch_size": "16",
    "log_every": "50",
    "search_steps": "500",
    "eval_max_len": "24",
}


def read_config(path) -> dict:
    """Line-oriented key=value config with defaults filled in."""
    cfg = dict(CONFIG_DEFAULTS)
    if path is not None:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except FileNotFoundError:
            raise ConfigError(f"config file {path} not found") from None
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key=value")
            key, value = line.split("=", 1)
            key = key.strip()
            if key not in CONFIG_DEFAULTS:
                raise ConfigError(f"{path}:{lineno}: unknown config key {key!r}")
            cfg[key] = value.strip()
    return cfg


def run_dir(cfg: dict) -> Path:
    root = Path(cfg["outdir"]) / cfg["name"]
    for sub in ("corpus", "checkpoints", "logs", "reports"):
        (root / sub).mkdir(parents=True, exist_ok=True)
    return root


def write_manifest(root: Path, command: str, cfg: dict, extra_inputs=()) -> None:
    digest = hashlib.sha256()
    digest.update(json.dumps(cfg, sort_keys=True).encode())
    for p in extra_inputs:
        digest.update(Path(p).read_bytes())
    manifest = {
        "command": command,
        "config": cfg,
        "seed": int(cfg["seed"]),
        "inputs_sha256": digest.hexdigest(),
        "output_dir": str(root),
    }
    with open(root / f"manifest_{command}.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=1)


def corpus_spec_from(cfg: dict, pairs: int, seed_offset: int, directions=None) -> D.CorpusSpec:
    return D.CorpusSpec(
        n_languages=int(cfg["n_languages"]),
        n_families=int(cfg["n_families"]),
        alphabet_size=int(cfg["alphabet_size"]),
        pairs_per_direction=pairs,
        lq_fraction=float(cfg["lq_fraction"]),
        lq_noise_rate=float(cfg["lq_noise_rate"]),
        min_len=int(cfg["min_len"]),
        max_len=int(cfg["max_len"]),
        seed=int(cfg["seed"]) + seed_offset,
        language_seed=int(cfg["seed"]),
        directions=directions,
    )


def language_families(cfg: dict) -> dict:
    spec = corpus_spec_from(cfg, 1, 0)
    return {lang.id: lang.family for lang in D.make_language_set(spec)}


def model_dims(cfg: dict, vocab: D.Vocab) -> ModelDims:
    return ModelDims(
        d_model=int(cfg["d_model"]),
        d_ffn=int(cfg["d_ffn"]),
        n_heads=int(cfg["n_heads"]),
        n_enc_layers=int(cfg["n_enc_layers"]),
        n_dec_layers=int(cfg["n_dec_layers"]),
        vocab_size=len(vocab),
    )


def train_config(cfg: dict, seed_bump: int = 0, max_steps: int | None = None) -> TR.TrainConfig:
    return TR.TrainConfig(
        base_lr=float(cfg["base_lr"]),
        warmup_steps=int(cfg["warmup_steps"]),
        max_steps=max_steps if max_steps is not None else int(cfg["max_steps"]),
        batch_size=int(cfg["batch_size"]),
        seed=int(cfg["seed"]) + seed_bump,
        log_every=int(cfg["log_every"]),
    )


def load_split(root: Path, split: str) -> dict:
    path = root / "corpus" / f"{split}.tsv"
    if not path.exists():
        raise DataError(f"corpus split {path} not found; run `gen` first")
    return D.read_corpus(path)


# ---------------------------------------------------------------------------
# commands


def cmd_gen(args) -> int:
    cfg = read_config(args.config)
    root = run_dir(cfg)
    write_manifest(root, "gen", cfg)
    families = language_families(cfg)
    train_dirs = sorted(D.direction_filter(families, cfg["direction_mode"], cfg["center"]))
    splits = {
        "train": corpus_spec_from(cfg, int(cfg["pairs_per_direction"]), 0, tuple(train_dirs)),
        "valid": corpus_spec_from(cfg, int(cfg["val_pairs"]), 7001, tuple(train_dirs)),
        # test covers every direction so zero-shot pairs stay evaluable
        "test": corpus_spec_from(cfg, int(cfg["test_pairs"]), 9001, None),
    }
    for split, spec in splits.items():
        D.write_corpus(root / "corpus" / f"{split}.tsv", D.generate_corpus(spec))
    print(f"wrote {', '.join(splits)} under {root / 'corpus'} "
          f"({len(train_dirs)} training directions)")
    return 0


def _search_spec(cfg: dict, vocab: D.Vocab) -> A.ArchitectureSpec:
    dims = model_dims(cfg, vocab)
    return A.make_spec(dims.n_enc_layers, cfg["decoder_mode"], search=True,
                       dims=dims, languages=tuple(vocab.languages))


def cmd_search(args) -> int:
    cfg = read_config(args.config)
    root = run_dir(cfg)
    write_manifest(root, "search", cfg)
    corpus = load_split(root, "train")
    languages = sorted({lang for d in corpus for lang in d})
    vocab = D.Vocab(languages, int(cfg["alphabet_size"]))
    spec = _search_spec(cfg, vocab)

    runs = []
    for r in range(args.n_runs):
        model = A.build_model(spec, seed=int(cfg["seed"]) + r, vocab=vocab)
        tcfg = train_config(cfg, seed_bump=r, max_steps=int(cfg["search_steps"]))
        _, log, result = TR.train_loop(model, corpus, tcfg, mode="SEARCH")
        runs.append(result)
        with open(root / "logs" / f"search_run{r}.log", "w", encoding="utf-8") as fh:
            fh.write("\n".join(log.lines()) + "\n")
        with open(root / "reports" / f"search_weights_run{r}.tsv", "w", encoding="utf-8") as fh:
            for layer, triple in enumerate(result.weights, 1):
                fh.write(f"{layer}\t" + "\t".join(f"{w:.8f}" for w in triple) + "\n")

    averaged = A.average_mixing_weights(runs)
    with open(root / "reports" / "search_weights_avg.tsv", "w", encoding="utf-8") as fh:
        for layer, triple in enumerate(averaged, 1):
            fh.write(f"{layer}\t" + "\t".join(f"{w:.8f}" for w in triple) + "\n")

    selected = A.select_architecture(runs, cfg["decoder_mode"],
                                     dims=spec.dims, languages=spec.languages)
    out = root / "reports" / "selected_arch.txt"
    out.write_text(A.spec_to_lines(selected), encoding="utf-8")
    print(A.render_arch(selected))
    print(f"selected architecture written to {out}")
    return 0


def _resolve_spec(args, cfg, vocab) -> A.ArchitectureSpec:
    if args.spec is not None:
        path = Path(args.spec)
        text = path.read_text(encoding="utf-8") if path.exists() else args.spec
        spec = A.spec_from_lines(text) if "arch=" in text else A.parse_arch(text)
    else:
        dims = model_dims(cfg, vocab)
        spec = A.make_spec(dims.n_enc_layers, cfg["decoder_mode"])
    if spec.dims is None:
        spec = replace(spec, dims=model_dims(cfg, vocab))
    if spec.languages is None:
        spec = replace(spec, languages=tuple(vocab.languages))
    return spec


def cmd_train(args) -> int:
    cfg = read_config(args.config)
    root = run_dir(cfg)
    write_manifest(root, "train", cfg, extra_inputs=[args.spec] if args.spec and Path(args.spec).exists() else [])
    corpus = load_split(root, "train")
    languages = sorted({lang for d in corpus for lang in d})
    vocab = D.Vocab(languages, int(cfg["alphabet_size"]))
    spec = _resolve_spec(args, cfg, vocab)
    model = A.build_model(spec, seed=int(cfg["seed"]), vocab=vocab)
    if args.init_from:
        baseline = TR.load_checkpoint(args.init_from)
        A.dense_pretrain_init(model, baseline)
    _, log = TR.train_loop(model, corpus, train_config(cfg), mode="STANDARD")
    name = args.tag or "model"
    ckpt = root / "checkpoints" / name
    TR.save_checkpoint(model, ckpt)
    with open(root / "logs" / f"train_{name}.log", "w", encoding="utf-8") as fh:
        fh.write("\n".join(log.lines()) + "\n")
    val = load_split(root, "valid")
    print(f"checkpoint written to {ckpt}.json/.bin")
    print(f"final validation loss: {TR.corpus_loss(model, val):.4f}")
    return 0


def cmd_eval(args) -> int:
    cfg = read_config(args.config)
    root = run_dir(cfg)
    write_manifest(root, "eval", cfg)
    model = TR.load_checkpoint(args.checkpoint)
    test = load_split(root, "test")
    families = language_families(cfg)
    zero_shot = None
    if cfg["direction_mode"] != "FULL":
        zero_shot = D.zero_shot_directions(families, cfg["direction_mode"], cfg["center"])
    report = E.evaluate_matrix(model, test, max_len=int(cfg["eval_max_len"]))
    lines = list(E.report_lines(report, families, zero_shot))
    out = root / "reports" / "eval.tsv"
    out.write_text("\n".join(lines) + "\n", encoding="utf-8")
    for line in lines:
        print(line)

    if args.compare:
        other = TR.load_checkpoint(args.compare)
        print("direction\tp_value")
        comparisons = []
        for (src_id, tgt_id) in sorted(test):
            ctx = RoutingContext(src_id, tgt_id)
            refs, hyps_a, hyps_b = [], [], []
            for ex in test[(src_id, tgt_id)]:
                refs.append(" ".join(ex.tgt))
                hyps_a.append(" ".join(E.greedy_decode(model, ex.src, ctx, int(cfg["eval_max_len"]))))
                hyps_b.append(" ".join(E.greedy_decode(other, ex.src, ctx, int(cfg["eval_max_len"]))))
            p = E.paired_bootstrap(hyps_a, hyps_b, refs, seed=int(cfg["seed"]))
            comparisons.append(f"{src_id}-{tgt_id}\t{p:.4f}")
            print(comparisons[-1])
        (root / "reports" / "bootstrap.tsv").write_text("\n".join(comparisons) + "\n", encoding="utf-8")
    return 0


def cmd_params(args) -> int:
    spec = A.parse_arch(args.arch)
    dims = ModelDims(args.d_model, args.d_ffn, args.n_heads,
                     spec.n_enc_layers, args.n_dec_layers, args.vocab_size)
    report = A.count_params_symbolic(dims, args.n_languages, spec)
    print(f"architecture: {A.render_arch(spec)}")
    print(f"total parameters:     {report.total:,}")
    print(f"effective parameters: {report.effective:,}")
    for part, count in report.breakdown.items():
        print(f"  {part:<15} {count:,}")
    return 0


def sweep_placement(k: int, n_enc: int):
    """k LSLs: k/2 source-indexed at the bottom, k/2 target-indexed on top."""
    if k % 2 or k > n_enc:
        raise ConfigError(f"LSL count {k} must be even and at most {n_enc}")
    half = k // 2
    return tuple(range(1, half + 1)), tuple(range(n_enc - half + 1, n_enc + 1))


def cmd_sweep(args) -> int:
    cfg = read_config(args.config)
    root = run_dir(cfg)
    write_manifest(root, "sweep", cfg)
    corpus = load_split(root, "train")
    val = load_split(root, "valid")
    languages = sorted({lang for d in corpus for lang in d})
    vocab = D.Vocab(languages, int(cfg["alphabet_size"]))
    dims = model_dims(cfg, vocab)
    rows = []
    for k in range(0, args.max_lsls + 1, 2):
        src, tgt = sweep_placement(k, dims.n_enc_layers)
        spec = A.make_spec(dims.n_enc_layers, cfg["decoder_mode"], src, tgt,
                           dims=dims, languages=tuple(vocab.languages))
        model = A.build_model(spec, seed=int(cfg["seed"]), vocab=vocab)
        TR.train_loop(model, corpus, train_config(cfg), mode="STANDARD")
        rows.append(f"{k}\t{A.render_arch(spec)}\t{TR.corpus_loss(model, val):.4f}")
    out = root / "reports" / "lsl_count_sweep.tsv"
    out.write_text("k\tarch\tval_loss\n" + "\n".join(rows) + "\n", encoding="utf-8")
    print("\n".join(["k\tarch\tval_loss", *rows]))
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lslmt", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate synthetic corpora")
    p.add_argument("--config", default=None)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("search", help="run the mixed architecture search")
    p.add_argument("--config", default=None)
    p.add_argument("--n-runs", type=int, default=3)
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("train", help="train a model for a given architecture")
    p.add_argument("--config", default=None)
    p.add_argument("--spec", default=None, help="arch notation or spec file")
    p.add_argument("--init-from", default=None, help="baseline checkpoint for dense pre-training")
    p.add_argument("--tag", default=None, help="checkpoint name")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on the test split")
    p.add_argument("checkpoint")
    p.add_argument("--config", default=None)
    p.add_argument("--compare", default=None, help="second checkpoint for paired bootstrap")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("params", help="parameter accounting for an architecture")
    p.add_argument("--arch", required=True)
    p.add_argument("--d-model", type=int, default=512)
    p.add_argument("--d-ffn", type=int, default=2048)
    p.add_argument("--n-heads", type=int, default=8)
    p.add_argument("--n-dec-layers", type=int, default=3)
    p.add_argument("--vocab-size", type=int, default=250_000)
    p.add_argument("--n-languages", type=int, default=10)
    p.set_defaults(func=cmd_params)

    p = sub.add_parser("sweep-lsl-count", help="train the symmetric LSL placement family")
    p.add_argument("--config", default=None)
    p.add_argument("--max-lsls", type=int, default=4)
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return ConfigError.exit_code
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return DataError.exit_code
    except (NumericError, FloatingPointError) as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return NumericError.exit_code


if __name__ == "__main__":
    sys.exit(main())
