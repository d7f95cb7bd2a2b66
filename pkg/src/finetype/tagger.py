"""Coarse BIO sequence tagger built from scratch on numpy.

Per-token vectors come from a pluggable provider (a static word-vector table
or a precomputed contextual-vector sidecar), feed a gated LSTM encoder with a
residual connection from the projected input, and a softmax layer decodes
per-token tags. Training is plain Adam over mini-batches with inverted
dropout on the encoder output; everything is deterministic under a seed.
"""

from __future__ import annotations

import os
import pickle
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from .embeddings import EmbeddingTable


class CorpusError(ValueError):
    """Malformed corpus or sidecar file, or provider/corpus misalignment."""


class TrainingError(RuntimeError):
    """Training cannot proceed (empty corpus, missing tags, divergence)."""


# ---------------------------------------------------------------------------
# Mention spans and the BIO codec


@dataclass(frozen=True, order=True)
class MentionSpan:
    """Half-open token span [start, end) carrying a coarse label."""

    start: int
    end: int
    coarse: str

    def __post_init__(self):
        if self.start < 0 or self.end <= self.start:
            raise ValueError(f"invalid span boundaries [{self.start}, {self.end})")


def extract_spans(tags: Sequence[str]) -> list[MentionSpan]:
    """Decode BIO tags into spans.

    Maximal ``B-t (I-t)*`` runs become spans; an orphan ``I-t`` (no preceding
    span of the same type) leniently starts a new span instead of erroring.
    """
    spans: list[MentionSpan] = []
    start: int | None = None
    label = ""

    def close(end: int) -> None:
        nonlocal start
        if start is not None:
            spans.append(MentionSpan(start, end, label))
            start = None

    for idx, tag in enumerate(tags):
        if tag == "O":
            close(idx)
            continue
        prefix, dash, tag_label = tag.partition("-")
        if prefix not in ("B", "I") or not dash or not tag_label:
            raise ValueError(f"not a BIO tag: {tag!r}")
        if prefix == "B" or start is None or tag_label != label:
            close(idx)
            start = idx
            label = tag_label
    close(len(tags))
    return spans


def tags_of_spans(spans: Iterable[MentionSpan], length: int) -> list[str]:
    """Encode non-overlapping spans as a BIO tag sequence of ``length``."""
    tags = ["O"] * length
    for span in sorted(spans):
        if span.end > length:
            raise ValueError(f"span {span} exceeds sequence length {length}")
        if any(t != "O" for t in tags[span.start : span.end]):
            raise ValueError(f"span {span} overlaps a previous span")
        tags[span.start] = f"B-{span.coarse}"
        for i in range(span.start + 1, span.end):
            tags[i] = f"I-{span.coarse}"
    return tags


# ---------------------------------------------------------------------------
# Corpus and sidecar files


@dataclass
class SequenceExample:
    """One sentence: tokens, optional per-token vectors, optional gold tags."""

    tokens: list[str]
    vectors: np.ndarray | None = None
    gold_tags: list[str] | None = None

    def __post_init__(self):
        if self.gold_tags is not None and len(self.gold_tags) != len(self.tokens):
            raise CorpusError("gold tag count differs from token count")
        if self.vectors is not None and len(self.vectors) != len(self.tokens):
            raise CorpusError("vector count differs from token count")

    def __len__(self) -> int:
        return len(self.tokens)


def parse_conll(lines: Iterable[str]) -> list[SequenceExample]:
    """Read ``token<TAB>tag`` sentences separated by blank lines.

    Lines are split on tabs only, so tags may contain spaces
    (``B-organization.sports team``). A sentence must be uniformly tagged or
    uniformly untagged.
    """
    examples: list[SequenceExample] = []
    tokens: list[str] = []
    tags: list[str | None] = []

    def flush(lineno: int) -> None:
        if not tokens:
            return
        tagged = [t for t in tags if t is not None]
        if tagged and len(tagged) != len(tokens):
            raise CorpusError(f"line {lineno}: sentence mixes tagged and untagged tokens")
        examples.append(
            SequenceExample(list(tokens), gold_tags=list(tagged) if tagged else None)
        )
        tokens.clear()
        tags.clear()

    lineno = 0
    for lineno, raw in enumerate(lines, start=1):
        line = raw.rstrip("\n").rstrip("\r")
        if not line.strip():
            flush(lineno)
            continue
        cols = line.split("\t")
        token = cols[0].strip()
        if not token:
            raise CorpusError(f"line {lineno}: empty token")
        if len(cols) == 1:
            tokens.append(token)
            tags.append(None)
        elif len(cols) == 2:
            tag = cols[1].strip()
            if not tag:
                raise CorpusError(f"line {lineno}: empty tag")
            tokens.append(token)
            tags.append(tag)
        else:
            raise CorpusError(f"line {lineno}: expected 'token<TAB>tag', found {len(cols)} columns")
    flush(lineno + 1)
    return examples


def read_conll(path: str | os.PathLike[str]) -> list[SequenceExample]:
    with open(path, encoding="utf-8") as fh:
        return parse_conll(fh)


def write_conll(path: str | os.PathLike[str], examples: Iterable[SequenceExample]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for ex in examples:
            tags = ex.gold_tags or ["O"] * len(ex.tokens)
            for token, tag in zip(ex.tokens, tags):
                fh.write(f"{token}\t{tag}\n")
            fh.write("\n")


def parse_sidecar(lines: Iterable[str]) -> list[np.ndarray]:
    """Read precomputed per-token vectors: a dimension header line, then one
    float row per token with blank lines between sentences."""
    dim: int | None = None
    sentences: list[np.ndarray] = []
    current: list[np.ndarray] = []

    def flush() -> None:
        if current:
            sentences.append(np.array(current, dtype=float))
            current.clear()

    for lineno, raw in enumerate(lines, start=1):
        line = raw.strip()
        if dim is None:
            if not line:
                continue
            parts = line.split()
            if len(parts) != 1 or not parts[0].isdigit():
                raise CorpusError(f"line {lineno}: expected a dimension header")
            dim = int(parts[0])
            if dim < 1:
                raise CorpusError(f"line {lineno}: dimension must be positive")
            continue
        if not line:
            flush()
            continue
        try:
            row = np.array([float(v) for v in line.split()], dtype=float)
        except ValueError as exc:
            raise CorpusError(f"line {lineno}: {exc}") from None
        if len(row) != dim:
            raise CorpusError(f"line {lineno}: expected {dim} values, found {len(row)}")
        current.append(row)
    flush()
    if dim is None:
        raise CorpusError("sidecar file has no dimension header")
    return sentences


class StaticVectors:
    """Token vectors from a word-embedding table; unknown tokens map to zero."""

    def __init__(self, table: EmbeddingTable):
        self.table = table
        self.dim = table.dim

    def vectors_for(self, index: int, tokens: Sequence[str]) -> np.ndarray:
        out = np.zeros((len(tokens), self.dim))
        for i, token in enumerate(tokens):
            vec = self.table.get(token)
            if vec is not None:
                out[i] = vec
        return out


class PrecomputedVectors:
    """Contextual vectors read from a sidecar, aligned with corpus order."""

    def __init__(self, sentences: list[np.ndarray]):
        if not sentences:
            raise CorpusError("sidecar contains no sentences")
        self.sentences = sentences
        self.dim = int(sentences[0].shape[1]) if sentences[0].ndim == 2 else len(sentences[0])

    @classmethod
    def load(cls, path: str | os.PathLike[str]) -> "PrecomputedVectors":
        with open(path, encoding="utf-8") as fh:
            return cls(parse_sidecar(fh))

    def vectors_for(self, index: int, tokens: Sequence[str]) -> np.ndarray:
        if index >= len(self.sentences):
            raise CorpusError(f"sidecar has no vectors for sentence {index}")
        vecs = self.sentences[index]
        if len(vecs) != len(tokens):
            raise CorpusError(
                f"sentence {index}: sidecar holds {len(vecs)} vectors for {len(tokens)} tokens"
            )
        return vecs


def attach_vectors(corpus: Sequence[SequenceExample], provider) -> list[SequenceExample]:
    return [
        replace(ex, vectors=provider.vectors_for(i, ex.tokens))
        for i, ex in enumerate(corpus)
    ]


# ---------------------------------------------------------------------------
# Model


@dataclass
class TaggerConfig:
    """Desk-scale defaults; the original architecture used hidden size 512,
    1024-dimensional contextual embeddings, dropout 0.2, Adam, and a batch
    size of 32 for 30 epochs."""

    hidden_size: int = 32
    embedding_dim: int = 16
    dropout: float = 0.2
    batch_size: int = 32
    epochs: int = 30
    learning_rate: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    bidirectional: bool = False

    def __post_init__(self):
        if self.hidden_size < 1 or self.embedding_dim < 1:
            raise ValueError("hidden_size and embedding_dim must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be positive and epochs non-negative")

    @property
    def encoder_width(self) -> int:
        return self.hidden_size * (2 if self.bidirectional else 1)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def lstm_cell_step(
    x: np.ndarray,
    state: tuple[np.ndarray, np.ndarray],
    w: np.ndarray,
    u: np.ndarray,
    b: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """One gated update. ``w`` is (4H, D), ``u`` is (4H, H), ``b`` is (4H,),
    with gate blocks ordered input, forget, candidate, output."""
    h_prev, c_prev = state
    hidden = u.shape[1]
    if x.shape[-1] != w.shape[1] or h_prev.shape[-1] != hidden:
        raise ValueError(
            f"dimension mismatch: x{x.shape} w{w.shape} h{h_prev.shape} u{u.shape}"
        )
    z = w @ x + u @ h_prev + b
    i = _sigmoid(z[:hidden])
    f = _sigmoid(z[hidden : 2 * hidden])
    g = np.tanh(z[2 * hidden : 3 * hidden])
    o = _sigmoid(z[3 * hidden :])
    c = f * c_prev + i * g
    h = o * np.tanh(c)
    return h, c


def _lstm_forward(w, u, b, x):
    length = len(x)
    hidden = u.shape[1]
    gates = np.zeros((length, 4 * hidden))
    cs = np.zeros((length, hidden))
    tcs = np.zeros((length, hidden))
    hs = np.zeros((length, hidden))
    h = np.zeros(hidden)
    c = np.zeros(hidden)
    for t in range(length):
        z = w @ x[t] + u @ h + b
        i = _sigmoid(z[:hidden])
        f = _sigmoid(z[hidden : 2 * hidden])
        g = np.tanh(z[2 * hidden : 3 * hidden])
        o = _sigmoid(z[3 * hidden :])
        c_prev = c
        c = f * c_prev + i * g
        tc = np.tanh(c)
        h = o * tc
        gates[t, :hidden] = i
        gates[t, hidden : 2 * hidden] = f
        gates[t, 2 * hidden : 3 * hidden] = g
        gates[t, 3 * hidden :] = o
        cs[t] = c
        tcs[t] = tc
        hs[t] = h
    return hs, {"gates": gates, "cs": cs, "tcs": tcs, "hs": hs, "x": x}


def _lstm_backward(w, u, b, cache, dhs, dw, du, db):
    """Backpropagate through time, accumulating parameter gradients in place."""
    gates, cs, tcs, hs, x = cache["gates"], cache["cs"], cache["tcs"], cache["hs"], cache["x"]
    length, hidden = tcs.shape
    dh_carry = np.zeros(hidden)
    dc_carry = np.zeros(hidden)
    for t in range(length - 1, -1, -1):
        i = gates[t, :hidden]
        f = gates[t, hidden : 2 * hidden]
        g = gates[t, 2 * hidden : 3 * hidden]
        o = gates[t, 3 * hidden :]
        c_prev = cs[t - 1] if t > 0 else np.zeros(hidden)
        h_prev = hs[t - 1] if t > 0 else np.zeros(hidden)

        dh = dhs[t] + dh_carry
        do = dh * tcs[t]
        dc = dc_carry + dh * o * (1.0 - tcs[t] ** 2)
        di = dc * g
        dg = dc * i
        df = dc * c_prev
        dc_carry = dc * f

        dz = np.concatenate(
            [di * i * (1.0 - i), df * f * (1.0 - f), dg * (1.0 - g**2), do * o * (1.0 - o)]
        )
        dw += np.outer(dz, x[t])
        du += np.outer(dz, h_prev)
        db += dz
        dh_carry = u.T @ dz


def init_params(cfg: TaggerConfig, tag_count: int, rng: np.random.Generator) -> dict[str, np.ndarray]:
    """Glorot-uniform weights, zero biases with the forget-gate block at 1."""
    hidden, dim = cfg.hidden_size, cfg.embedding_dim

    def glorot(rows, cols):
        scale = np.sqrt(6.0 / (rows + cols))
        return rng.uniform(-scale, scale, size=(rows, cols))

    def lstm_bias():
        bias = np.zeros(4 * hidden)
        bias[hidden : 2 * hidden] = 1.0
        return bias

    params = {
        "lstm_w": glorot(4 * hidden, dim),
        "lstm_u": glorot(4 * hidden, hidden),
        "lstm_b": lstm_bias(),
    }
    if cfg.bidirectional:
        params["lstm_w_rev"] = glorot(4 * hidden, dim)
        params["lstm_u_rev"] = glorot(4 * hidden, hidden)
        params["lstm_b_rev"] = lstm_bias()
    params["proj_w"] = glorot(cfg.encoder_width, dim)
    params["dec_w"] = glorot(tag_count, cfg.encoder_width)
    params["dec_b"] = np.zeros(tag_count)
    return params


def sentence_forward(
    params: dict[str, np.ndarray],
    x: np.ndarray,
    cfg: TaggerConfig,
    dropout_mask: np.ndarray | None = None,
) -> tuple[np.ndarray, dict]:
    """Per-token logits for one sentence; the residual path adds the projected
    input embedding to the (optionally dropped-out) encoder output."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 2 or x.shape[1] != cfg.embedding_dim:
        raise ValueError(f"expected vectors of shape (L, {cfg.embedding_dim}), got {x.shape}")
    hs_fwd, cache_fwd = _lstm_forward(params["lstm_w"], params["lstm_u"], params["lstm_b"], x)
    cache: dict = {"x": x, "fwd": cache_fwd}
    if cfg.bidirectional:
        hs_bwd_rev, cache_bwd = _lstm_forward(
            params["lstm_w_rev"], params["lstm_u_rev"], params["lstm_b_rev"], x[::-1]
        )
        cache["bwd"] = cache_bwd
        hs = np.concatenate([hs_fwd, hs_bwd_rev[::-1]], axis=1)
    else:
        hs = hs_fwd
    if dropout_mask is not None:
        hs = hs * dropout_mask
    cache["mask"] = dropout_mask
    proj = x @ params["proj_w"].T
    dec_in = hs + proj
    cache["dec_in"] = dec_in
    logits = dec_in @ params["dec_w"].T + params["dec_b"]
    return logits, cache


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def sentence_loss_grads(
    params: dict[str, np.ndarray],
    x: np.ndarray,
    targets: np.ndarray,
    cfg: TaggerConfig,
    grads: dict[str, np.ndarray],
    scale: float = 1.0,
    dropout_mask: np.ndarray | None = None,
) -> float:
    """Summed token negative log-likelihood; gradients of ``scale * nll_sum``
    are accumulated into ``grads``."""
    logits, cache = sentence_forward(params, x, cfg, dropout_mask)
    log_probs = _log_softmax(logits)
    length = len(x)
    nll = -float(log_probs[np.arange(length), targets].sum())

    dlogits = np.exp(log_probs)
    dlogits[np.arange(length), targets] -= 1.0
    dlogits *= scale

    dec_in = cache["dec_in"]
    grads["dec_w"] += dlogits.T @ dec_in
    grads["dec_b"] += dlogits.sum(axis=0)
    ddec_in = dlogits @ params["dec_w"]
    grads["proj_w"] += ddec_in.T @ x

    dhs = ddec_in
    if cache["mask"] is not None:
        dhs = dhs * cache["mask"]
    hidden = cfg.hidden_size
    _lstm_backward(
        params["lstm_w"], params["lstm_u"], params["lstm_b"],
        cache["fwd"], dhs[:, :hidden],
        grads["lstm_w"], grads["lstm_u"], grads["lstm_b"],
    )
    if cfg.bidirectional:
        _lstm_backward(
            params["lstm_w_rev"], params["lstm_u_rev"], params["lstm_b_rev"],
            cache["bwd"], dhs[::-1, hidden:],
            grads["lstm_w_rev"], grads["lstm_u_rev"], grads["lstm_b_rev"],
        )
    return nll


@dataclass
class TaggerModel:
    """Trained tagger: immutable parameters plus the tag vocabulary."""

    config: TaggerConfig
    tags: list[str]
    params: dict[str, np.ndarray]
    loss_curve: list[float] = field(default_factory=list)

    @property
    def final_loss(self) -> float | None:
        return self.loss_curve[-1] if self.loss_curve else None

    def encode(self, vectors: np.ndarray) -> np.ndarray:
        """Per-token logits over the tag set, dropout disabled."""
        vectors = np.asarray(vectors, dtype=float)
        if len(vectors) == 0:
            return np.zeros((0, len(self.tags)))
        logits, _ = sentence_forward(self.params, vectors, self.config, dropout_mask=None)
        return logits

    def predict(self, vectors: np.ndarray) -> list[str]:
        logits = self.encode(vectors)
        return [self.tags[i] for i in logits.argmax(axis=1)] if len(logits) else []

    def save(self, path: str | os.PathLike[str]) -> None:
        payload = {
            "config": self.config,
            "tags": self.tags,
            "params": self.params,
            "loss_curve": self.loss_curve,
        }
        with open(path, "wb") as fh:
            pickle.dump(payload, fh, protocol=4)

    @classmethod
    def load(cls, path: str | os.PathLike[str]) -> "TaggerModel":
        with open(path, "rb") as fh:
            payload = pickle.load(fh)
        return cls(**payload)


def train(corpus: Sequence[SequenceExample], cfg: TaggerConfig) -> TaggerModel:
    """Adam over shuffled mini-batches; fully reproducible from ``cfg.seed``.

    Batch loss is the mean token negative log-likelihood. Raises
    TrainingError on an empty/unlabeled corpus or if the loss leaves the
    finite range.
    """
    examples = [ex for ex in corpus if len(ex) > 0]
    if not examples:
        raise TrainingError("training corpus is empty")
    for idx, ex in enumerate(examples):
        if ex.gold_tags is None:
            raise TrainingError(f"sentence {idx} has no gold tags")
        if ex.vectors is None:
            raise TrainingError(f"sentence {idx} has no token vectors")
        if ex.vectors.shape[1] != cfg.embedding_dim:
            raise TrainingError(
                f"sentence {idx}: vectors have dimension {ex.vectors.shape[1]},"
                f" config expects {cfg.embedding_dim}"
            )

    tag_set = sorted({t for ex in examples for t in (ex.gold_tags or [])} | {"O"})
    tag_index = {t: i for i, t in enumerate(tag_set)}
    targets = [np.array([tag_index[t] for t in ex.gold_tags]) for ex in examples]

    rng = np.random.default_rng(cfg.seed)
    params = init_params(cfg, len(tag_set), rng)
    adam_m = {k: np.zeros_like(v) for k, v in params.items()}
    adam_v = {k: np.zeros_like(v) for k, v in params.items()}
    step = 0
    width = cfg.encoder_width

    loss_curve: list[float] = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(examples))
        epoch_nll = 0.0
        epoch_tokens = 0
        for lo in range(0, len(order), cfg.batch_size):
            batch = order[lo : lo + cfg.batch_size]
            total_tokens = int(sum(len(examples[i]) for i in batch))
            grads = {k: np.zeros_like(v) for k, v in params.items()}
            batch_nll = 0.0
            for i in batch:
                mask = None
                if cfg.dropout > 0.0:
                    keep = rng.random((len(examples[i]), width)) >= cfg.dropout
                    mask = keep / (1.0 - cfg.dropout)
                batch_nll += sentence_loss_grads(
                    params, examples[i].vectors, targets[i], cfg,
                    grads, scale=1.0 / total_tokens, dropout_mask=mask,
                )
            loss = batch_nll / total_tokens
            if not np.isfinite(loss):
                raise TrainingError(
                    f"non-finite loss at epoch {epoch + 1}: {loss!r}; "
                    "lower the learning rate or check the input vectors"
                )
            step += 1
            bias1 = 1.0 - cfg.beta1**step
            bias2 = 1.0 - cfg.beta2**step
            for key in params:
                g = grads[key]
                adam_m[key] = cfg.beta1 * adam_m[key] + (1.0 - cfg.beta1) * g
                adam_v[key] = cfg.beta2 * adam_v[key] + (1.0 - cfg.beta2) * g**2
                params[key] = params[key] - cfg.learning_rate * (
                    (adam_m[key] / bias1) / (np.sqrt(adam_v[key] / bias2) + cfg.eps)
                )
            epoch_nll += batch_nll
            epoch_tokens += total_tokens
        loss_curve.append(epoch_nll / epoch_tokens if epoch_tokens else 0.0)

    return TaggerModel(config=cfg, tags=tag_set, params=params, loss_curve=loss_curve)


def token_accuracy(model: TaggerModel, corpus: Sequence[SequenceExample]) -> float:
    """Fraction of tokens whose predicted tag equals the gold tag."""
    correct = 0
    total = 0
    for ex in corpus:
        if ex.gold_tags is None or ex.vectors is None or not len(ex):
            continue
        predicted = model.predict(ex.vectors)
        correct += sum(p == g for p, g in zip(predicted, ex.gold_tags))
        total += len(ex)
    if total == 0:
        raise TrainingError("no labeled tokens to score")
    return correct / total
