"""Pairwise transfer classifier over instruction triples.

``f(z_x, z_i, z_j)`` estimates the probability that the base policy labeled
``z_i`` adapts to ``z_x`` better than the one labeled ``z_j``. Each instruction
contributes three tokens; every token is embedded as one learned scalar, so
the dense stack sees 9 features.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass
from typing import Callable, NamedTuple, Optional, Sequence

import numpy as np

from . import __version__, container
from .adaptation import ComparisonRecord
from .instructions import ALL_INSTRUCTIONS, TOKEN_TABLE, VOCAB_SIZE, Instruction, Verb, tokenize
from .nn import Adam, init_dense, mlp_backward, mlp_forward

N_FEATURES = 9
HIDDEN = 24
DROPOUT = 0.2


class DegenerateDataset(ValueError):
    pass


class NonFiniteLoss(FloatingPointError):
    pass


@dataclass(frozen=True)
class ClassifierConfig:
    learning_rate: float = 0.001
    max_steps: int = 50_000
    batch_size: int = 32
    eval_interval: int = 500
    patience: int = 10
    seed: int = 0
    holdout_fraction: float = 0.2

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.batch_size < 1 or self.eval_interval < 1:
            raise ValueError("batch_size and eval_interval must be >= 1")


FULL_SCALE = ClassifierConfig(max_steps=1_000_000)


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


class TransferModel:
    """Scalar token embeddings -> dropout -> 9x24 ReLU -> 24x24 ReLU -> 24x1 logistic."""

    def __init__(self, params: dict[str, np.ndarray]):
        self.params = params

    @classmethod
    def initialize(cls, rng: np.random.Generator) -> "TransferModel":
        params = {"emb": rng.uniform(-0.1, 0.1, size=(VOCAB_SIZE, 1))}
        params.update(init_dense(rng, [N_FEATURES, HIDDEN, HIDDEN, 1]))
        return cls(params)

    @classmethod
    def zeros(cls) -> "TransferModel":
        shapes = cls.initialize(np.random.default_rng(0)).params
        return cls({k: np.zeros_like(v) for k, v in shapes.items()})

    def logits(self, tokens: np.ndarray, mask: Optional[np.ndarray] = None):
        feats = self.params["emb"][tokens, 0]
        if mask is not None:
            feats = feats * mask
        out, cache = mlp_forward(self.params, feats)
        return out[:, 0], cache

    def predict_tokens(self, tokens: np.ndarray) -> np.ndarray:
        return _sigmoid(self.logits(tokens)[0])

    def __call__(self, z_x: Instruction, z_i: Instruction, z_j: Instruction) -> float:
        return forward(self, z_x, z_i, z_j)


def encode_triple(z_x: Instruction, z_i: Instruction, z_j: Instruction) -> list[int]:
    return tokenize(z_x) + tokenize(z_i) + tokenize(z_j)


def encode_records(records: Sequence[ComparisonRecord]) -> tuple[np.ndarray, np.ndarray]:
    tokens = np.array([encode_triple(r.z_x, r.z_i, r.z_j) for r in records], dtype=np.int64).reshape(-1, N_FEATURES)
    labels = np.array([r.label for r in records], dtype=np.float64)
    return tokens, labels


def dropout_mask(rng: np.random.Generator, shape) -> np.ndarray:
    """Inverted dropout: kept features are scaled by 1/(1-p)."""
    return (rng.random(shape) >= DROPOUT) / (1.0 - DROPOUT)


def forward(
    model: TransferModel,
    z_x: Instruction,
    z_i: Instruction,
    z_j: Instruction,
    train_mode: bool = False,
    rng: Optional[np.random.Generator] = None,
) -> float:
    tokens = np.array([encode_triple(z_x, z_i, z_j)])
    mask = None
    if train_mode:
        if rng is None:
            raise ValueError("train_mode needs an rng for dropout")
        mask = dropout_mask(rng, tokens.shape)
    return float(_sigmoid(model.logits(tokens, mask)[0])[0])


def loss_and_grads(model: TransferModel, tokens: np.ndarray, labels: np.ndarray, mask: Optional[np.ndarray] = None):
    """Mean binary cross-entropy and its gradient for every parameter group."""
    logit, cache = model.logits(tokens, mask)
    loss = float(np.mean(np.logaddexp(0.0, logit) - labels * logit))
    grad_logit = (_sigmoid(logit) - labels) / len(labels)
    grads, grad_feats = mlp_backward(model.params, cache, grad_logit[:, None])
    if mask is not None:
        grad_feats = grad_feats * mask
    g_emb = np.zeros_like(model.params["emb"])
    np.add.at(g_emb[:, 0], tokens, grad_feats)
    grads["emb"] = g_emb
    return loss, grads


def train_classifier(records: Sequence[ComparisonRecord], cfg: ClassifierConfig = ClassifierConfig()):
    """Fit a fresh model by Adam on mini-batches; returns ``(model, per-step losses)``.

    Training stops early once the full-data loss (dropout off) has not improved
    for ``patience`` consecutive evaluations.
    """
    if not records:
        raise DegenerateDataset("no comparison records")
    tokens, labels = encode_records(records)
    if labels.min() == labels.max():
        raise DegenerateDataset("all comparison records carry the same label")
    rng = np.random.default_rng(cfg.seed)
    model = TransferModel.initialize(rng)
    opt = Adam(model.params, lr=cfg.learning_rate)
    n = len(labels)
    batch = min(cfg.batch_size, n)
    order = rng.permutation(n)
    cursor = 0
    losses = []
    best, since_best = math.inf, 0
    for step in range(1, cfg.max_steps + 1):
        if cursor + batch > n:
            order, cursor = rng.permutation(n), 0
        idx = order[cursor : cursor + batch]
        cursor += batch
        mask = dropout_mask(rng, (batch, N_FEATURES))
        loss, grads = loss_and_grads(model, tokens[idx], labels[idx], mask)
        if not math.isfinite(loss):
            raise NonFiniteLoss(f"classifier loss {loss} at step {step}")
        opt.step(model.params, grads)
        losses.append(loss)
        if step % cfg.eval_interval == 0:
            full = loss_and_grads(model, tokens, labels)[0]
            if full < best - 1e-6:
                best, since_best = full, 0
            else:
                since_best += 1
                if since_best >= cfg.patience:
                    break
    return model, losses


def accuracy(model: TransferModel, records: Sequence[ComparisonRecord]) -> float:
    """Fraction of records where ``probability >= 0.5`` equals the label."""
    if not records:
        raise ValueError("accuracy of an empty record set")
    tokens, labels = encode_records(records)
    pred = model.predict_tokens(tokens) >= 0.5
    return float(np.mean(pred == labels.astype(bool)))


def predictions(model: TransferModel, records: Sequence[ComparisonRecord]) -> list[tuple[ComparisonRecord, float, bool]]:
    tokens, _ = encode_records(records)
    probs = model.predict_tokens(tokens)
    return [(r, float(p), bool((p >= 0.5) == bool(r.label))) for r, p in zip(records, probs)]


class RankedBase(NamedTuple):
    instruction: Instruction
    wins: int
    mean_probability: float


def select_best(
    model: Callable[[Instruction, Instruction, Instruction], float],
    z_x: Instruction,
    base_labels: Sequence[Instruction],
) -> list[RankedBase]:
    """Borda-style ranking of base policies for the transfer task ``z_x``.

    Every ordered pair is scored; a base wins a comparison when the model gives
    it probability >= 0.5 in the ``z_i`` slot. Ties in wins fall back to mean
    win probability, then to instruction order.
    """
    if not base_labels:
        raise ValueError("need at least one base label")
    if len(set(base_labels)) != len(base_labels):
        raise ValueError("base labels must be distinct")
    ranked = []
    labels = sorted(base_labels)  # canonical order keeps float sums permutation-invariant
    for z_i in labels:
        probs = [model(z_x, z_i, z_j) for z_j in labels if z_j != z_i]
        wins = sum(p >= 0.5 for p in probs)
        ranked.append(RankedBase(z_i, wins, float(np.mean(probs)) if probs else 0.0))
    ranked.sort(key=lambda r: (-r.wins, -r.mean_probability, r.instruction))
    return ranked


# ----------------------------------------------------------- synthetic data


def verb_dominance_records(n: int, rng: np.random.Generator) -> list[ComparisonRecord]:
    """Records whose label is 1 iff ``z_i`` shares ``z_x``'s verb and ``z_j`` does not.

    Only triples where exactly one base matches the verb are generated.
    """
    out = []
    while len(out) < n:
        z_x, z_i, z_j = (ALL_INSTRUCTIONS[i] for i in rng.integers(0, len(ALL_INSTRUCTIONS), size=3))
        mi, mj = z_i.verb == z_x.verb, z_j.verb == z_x.verb
        if z_i == z_j or mi == mj:
            continue
        out.append(ComparisonRecord(z_x, z_i, z_j, int(mi)))
    return out


def shuffle_labels(records: Sequence[ComparisonRecord], rng: np.random.Generator) -> list[ComparisonRecord]:
    labels = rng.permutation([r.label for r in records])
    return [ComparisonRecord(r.z_x, r.z_i, r.z_j, int(lab)) for r, lab in zip(records, labels)]


# ------------------------------------------------------------- model files

MODEL_MAGIC = b"TTMODEL\x00"
MODEL_VERSION = 1


def token_table_hash() -> str:
    return hashlib.sha256(json.dumps(TOKEN_TABLE, sort_keys=True).encode()).hexdigest()[:16]


def save_model(model: TransferModel, path, cfg: Optional[ClassifierConfig] = None) -> None:
    header = {
        "token_table_hash": token_table_hash(),
        "config": asdict(cfg) if cfg is not None else None,
        "software_version": __version__,
    }
    arrays = {k: model.params[k] for k in sorted(model.params)}
    with open(path, "wb") as fh:
        fh.write(container.pack(MODEL_MAGIC, MODEL_VERSION, header, arrays))


def load_model(path) -> TransferModel:
    with open(path, "rb") as fh:
        header, arrays = container.unpack(fh.read(), MODEL_MAGIC, MODEL_VERSION)
    if header["token_table_hash"] != token_table_hash():
        raise container.CorruptContainer("model was trained with a different token table")
    return TransferModel(arrays)
