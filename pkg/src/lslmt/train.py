"""Optimizer, schedule, batching, the two training drivers, checkpoints."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import tensors as T
from .arch import Model, MixingRunResult, build_model, spec_from_lines, spec_to_lines
from .data import Vocab, tag_source
from .errors import ConfigError, DataError, NumericError
from .layers import ModelDims
from .lsl import RoutingContext

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class TrainConfig:
    base_lr: float = 4e-4
    warmup_steps: int = 200  # paper-scale default is 4000
    max_steps: int = 2000
    batch_size: int = 32
    betas: tuple = (0.9, 0.98)
    eps: float = 1e-9
    seed: int = 0
    log_every: int = 50

    def __post_init__(self):
        if self.warmup_steps < 1:
            raise ConfigError("warmup_steps must be >= 1")
        if self.base_lr <= 0:
            raise ConfigError("base_lr must be positive")


def lr_at(step: int, cfg: TrainConfig) -> float:
    """Linear warmup to base_lr, then inverse square root decay."""
    if step < 1:
        raise ConfigError(f"lr_at requires step >= 1, got {step}")
    if step <= cfg.warmup_steps:
        return cfg.base_lr * step / cfg.warmup_steps
    return cfg.base_lr * (cfg.warmup_steps / step) ** 0.5


class Adam:
    """Standard bias-corrected Adam over a fixed parameter list."""

    def __init__(self, params, betas=(0.9, 0.98), eps: float = 1e-9):
        self.params = list(params)
        self.betas = betas
        self.eps = eps
        self.step_count = 0
        self.m = [np.zeros_like(p.values) for p in self.params]
        self.v = [np.zeros_like(p.values) for p in self.params]

    def step(self, lr: float) -> None:
        b1, b2 = self.betas
        self.step_count += 1
        t = self.step_count
        for i, p in enumerate(self.params):
            g = p.grad
            if g is None:
                continue
            if not np.all(np.isfinite(g)):
                raise NumericError(f"non-finite gradient at optimizer step {t}")
            self.m[i] = b1 * self.m[i] + (1 - b1) * g
            self.v[i] = b2 * self.v[i] + (1 - b2) * g * g
            m_hat = self.m[i] / (1 - b1**t)
            v_hat = self.v[i] / (1 - b2**t)
            p.values -= lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


# ---------------------------------------------------------------------------
# batching


def encode_example(ex, vocab: Vocab):
    src = vocab.encode(tag_source(ex.src, ex.ctx.quality, ex.ctx.src, ex.ctx.tgt))
    tgt = vocab.encode(ex.tgt)
    return src, [vocab.bos_id] + tgt, tgt + [vocab.eos_id]


def _pad(rows, pad_id):
    width = max(len(r) for r in rows)
    out = np.full((len(rows), width), pad_id, dtype=np.int64)
    for i, r in enumerate(rows):
        out[i, : len(r)] = r
    return out


def make_batch(examples, vocab: Vocab):
    """Pad a list of same-direction examples into id arrays."""
    enc = [encode_example(ex, vocab) for ex in examples]
    src = _pad([e[0] for e in enc], vocab.pad_id)
    tgt_in = _pad([e[1] for e in enc], vocab.pad_id)
    tgt_out = _pad([e[2] for e in enc], vocab.pad_id)
    return src, tgt_in, tgt_out


def pick_batch(corpus: dict, seed: int, step: int, batch_size: int):
    """Pure function of (corpus, seed, step): one direction per batch."""
    directions = sorted(corpus)
    rng = np.random.default_rng([seed, step])
    direction = directions[int(rng.integers(len(directions)))]
    pool = corpus[direction]
    idx = rng.integers(len(pool), size=min(batch_size, len(pool)))
    return direction, [pool[i] for i in idx]


def batch_loss(model: Model, examples, ctx: RoutingContext) -> T.Tensor:
    src, tgt_in, tgt_out = make_batch(examples, model.vocab)
    logits = model.forward(src, tgt_in, ctx)
    return T.cross_entropy(logits, tgt_out, model.vocab.pad_id)


def corpus_loss(model: Model, corpus: dict, batch_size: int = 64) -> float:
    """Mean per-token loss over a held-out corpus (no gradient retention)."""
    total, weight = 0.0, 0
    for (src_id, tgt_id), examples in sorted(corpus.items()):
        ctx = RoutingContext(src_id, tgt_id)
        for i in range(0, len(examples), batch_size):
            chunk = examples[i : i + batch_size]
            loss = batch_loss(model, chunk, ctx)
            n = sum(len(ex.tgt) + 1 for ex in chunk)
            total += loss.item() * n
            weight += n
    if weight == 0:
        raise DataError("corpus_loss over an empty corpus")
    return total / weight


# ---------------------------------------------------------------------------
# training drivers


@dataclass
class TrainLog:
    records: list = field(default_factory=list)  # dicts: step, loss, lr, [weights]

    def lines(self):
        for r in self.records:
            parts = [str(r["step"]), f"{r['loss']:.6f}", f"{r['lr']:.8f}"]
            for triple in r.get("weights", []):
                parts.extend(f"{w:.6f}" for w in triple)
            yield " ".join(parts)


def train_loop(model: Model, corpus: dict, cfg: TrainConfig, mode: str = "STANDARD"):
    """Train in place; returns (model, TrainLog[, MixingRunResult in SEARCH])."""
    if mode not in ("STANDARD", "SEARCH"):
        raise ConfigError(f"unknown training mode {mode!r}")
    if not corpus or all(len(v) == 0 for v in corpus.values()):
        raise DataError("training corpus is empty")
    if mode == "SEARCH" and not model.spec.is_search():
        raise ConfigError("SEARCH mode requires an all-mixed architecture")

    params = [t for _, t in model.parameters()]
    opt = Adam(params, cfg.betas, cfg.eps)
    log = TrainLog()
    for step in range(1, cfg.max_steps + 1):
        direction, examples = pick_batch(corpus, cfg.seed, step, cfg.batch_size)
        ctx = RoutingContext(direction[0], direction[1], examples[0].ctx.quality)
        loss = batch_loss(model, examples, ctx)
        if not np.isfinite(loss.item()):
            raise NumericError(f"loss became non-finite at step {step}")
        opt.zero_grad()
        T.backward(loss)
        opt.step(lr_at(step, cfg))
        if step % cfg.log_every == 0 or step == cfg.max_steps:
            record = {"step": step, "loss": loss.item(), "lr": lr_at(step, cfg)}
            if mode == "SEARCH":
                record["weights"] = model.mixing_snapshot()
            log.records.append(record)

    if mode == "SEARCH":
        result = MixingRunResult(tuple(model.mixing_snapshot()), cfg.seed)
        return model, log, result
    return model, log


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(model: Model, path) -> None:
    """Write `<path>.json` (manifest) and `<path>.bin` (little-endian f64)."""
    path = str(path)
    entries = []
    offset = 0
    arrays = []
    for name, t in model.parameters():
        entries.append({"name": name, "shape": list(t.shape), "offset": offset})
        offset += t.size
        arrays.append(np.ascontiguousarray(t.values, dtype="<f8"))
    manifest = {
        "version": CHECKPOINT_VERSION,
        "dtype": "<f8",
        "spec": spec_to_lines(model.spec),
        "dims": list(
            (model.dims.d_model, model.dims.d_ffn, model.dims.n_heads,
             model.dims.n_enc_layers, model.dims.n_dec_layers, model.dims.vocab_size)
        ),
        "languages": list(model.languages),
        "alphabet_size": len(model.vocab.alphabet),
        "seed": model.seed,
        "n_values": offset,
        "params": entries,
    }
    with open(path + ".json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=1)
    with open(path + ".bin", "wb") as fh:
        for a in arrays:
            fh.write(a.tobytes())


def load_checkpoint(path) -> Model:
    path = str(path)
    try:
        with open(path + ".json", encoding="utf-8") as fh:
            manifest = json.load(fh)
    except FileNotFoundError:
        raise DataError(f"checkpoint manifest {path}.json not found") from None
    if manifest.get("version") != CHECKPOINT_VERSION:
        raise DataError(f"unsupported checkpoint version {manifest.get('version')}")
    dims = ModelDims(*manifest["dims"])
    spec = spec_from_lines(manifest["spec"])
    vocab = Vocab(manifest["languages"], manifest["alphabet_size"])
    model = build_model(spec, manifest["seed"], dims, tuple(manifest["languages"]), vocab)
    flat = np.fromfile(path + ".bin", dtype="<f8")
    if flat.size != manifest["n_values"]:
        raise DataError("checkpoint payload size disagrees with its manifest")
    by_name = dict(model.parameters())
    for entry in manifest["params"]:
        t = by_name.get(entry["name"])
        if t is None:
            raise DataError(f"checkpoint parameter {entry['name']!r} not in model")
        n = int(np.prod(entry["shape"])) if entry["shape"] else 1
        t.values[...] = flat[entry["offset"] : entry["offset"] + n].reshape(entry["shape"])
    return model
