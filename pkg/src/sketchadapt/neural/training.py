"""Optimiser steps, language-model training and checkpoint files."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .models import (
    GeneratorConfig,
    LMConfig,
    ProgramLM,
    Recognizer,
    RecognizerConfig,
    SketchGenerator,
    config_dict,
    pad_sequences,
)
from .vocab import TokenVocab

DEFAULT_LR = 1e-3
CHECKPOINT_FORMAT = 1


class NonFiniteLossError(FloatingPointError):
    pass


class CheckpointError(ValueError):
    pass


def make_optimizer(model: nn.Module, lr: float = DEFAULT_LR) -> torch.optim.Adam:
    return torch.optim.Adam(model.parameters(), lr=lr)


def grad_step(
    model: nn.Module,
    optimizer: torch.optim.Optimizer,
    loss: torch.Tensor | Callable[[], torch.Tensor],
    clip: float | None = None,
) -> float:
    """Backpropagate ``loss`` and apply one optimiser update. Returns the loss value."""
    if callable(loss):
        loss = loss()
    value = float(loss.detach())
    if not math.isfinite(value):
        raise NonFiniteLossError(f"loss is {value}; aborting before the update")
    optimizer.zero_grad(set_to_none=True)
    loss.backward()
    bad = [n for n, p in model.named_parameters() if p.grad is not None and not torch.isfinite(p.grad).all()]
    if bad:
        raise NonFiniteLossError(f"non-finite gradients in {', '.join(bad[:5])} (loss {value:.6g})")
    if clip is not None:
        nn.utils.clip_grad_norm_(model.parameters(), clip)
    optimizer.step()
    return value


# --------------------------------------------------------------------------- language model


def lm_batch(vocab: TokenVocab, seqs: Sequence[Sequence[int]]):
    """Inputs (START + prefix), targets and validity mask for next-token prediction."""
    inputs, lengths = pad_sequences([[vocab.start_id] + list(s[:-1]) for s in seqs])
    targets, _ = pad_sequences(seqs)
    valid = torch.arange(inputs.shape[1]).unsqueeze(0) < lengths.unsqueeze(1)
    return inputs, targets, valid


def lm_loss(lm: ProgramLM, seqs: Sequence[Sequence[int]]) -> torch.Tensor:
    """Mean next-token cross-entropy (nats per token)."""
    inputs, targets, valid = lm_batch(lm.vocab, seqs)
    logits, _ = lm(inputs)
    ce = F.cross_entropy(logits.transpose(1, 2), targets, reduction="none")
    return (ce * valid).sum() / valid.sum()


@torch.no_grad()
def lm_perplexity(lm: ProgramLM, seqs: Sequence[Sequence[int]], batch: int = 512) -> float:
    lm.eval()
    total, count = 0.0, 0
    for i in range(0, len(seqs), batch):
        chunk = seqs[i : i + batch]
        n = sum(len(s) for s in chunk)
        total += float(lm_loss(lm, chunk)) * n
        count += n
    return math.exp(total / count)


@dataclass
class LMReport:
    epoch_losses: list = field(default_factory=list)
    heldout_before: float = math.nan
    heldout_after: float = math.nan


def train_lm(
    lm: ProgramLM,
    corpus: Sequence[Sequence[str]],
    epochs: int = 5,
    batch: int = 200,
    lr: float = DEFAULT_LR,
    seed: int = 0,
    heldout_fraction: float = 0.1,
) -> LMReport:
    """Next-token training on program/sketch token sequences; reports held-out perplexity."""
    if not corpus:
        raise ValueError("empty language-model corpus")
    vocab = lm.vocab
    seqs = [vocab.encode_program(s) for s in corpus]
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(seqs))
    n_held = int(len(seqs) * heldout_fraction) if len(seqs) > 1 else 0
    held = [seqs[i] for i in order[:n_held]]
    train = [seqs[i] for i in order[n_held:]]
    report = LMReport()
    if held:
        report.heldout_before = lm_perplexity(lm, held)
    opt = make_optimizer(lm, lr)
    for _ in range(epochs):
        lm.train()
        perm = rng.permutation(len(train))
        total = 0.0
        for i in range(0, len(train), batch):
            chunk = [train[j] for j in perm[i : i + batch]]
            total += grad_step(lm, opt, lm_loss(lm, chunk)) * len(chunk)
        report.epoch_losses.append(total / len(train))
    if held:
        report.heldout_after = lm_perplexity(lm, held)
    return report


# --------------------------------------------------------------------------- checkpoints

_KINDS = {
    "recognizer": (Recognizer, RecognizerConfig),
    "generator": (SketchGenerator, GeneratorConfig),
    "lm": (ProgramLM, LMConfig),
}


def save_checkpoint(path, model: nn.Module, kind: str, extra: dict | None = None) -> None:
    if kind not in _KINDS:
        raise CheckpointError(f"unknown model kind {kind!r}")
    blob = {
        "format": CHECKPOINT_FORMAT,
        "kind": kind,
        "config": config_dict(model),
        "vocab_hash": model.vocab.hash(),
        "state": model.state_dict(),
        "extra": extra or {},
    }
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    torch.save(blob, path)


def load_checkpoint(path, vocab: TokenVocab, kind: str | None = None):
    """Returns (model, extra). Rejects other formats, kinds and vocabularies."""
    try:
        blob = torch.load(path, map_location="cpu", weights_only=True)
    except FileNotFoundError:
        raise
    except Exception as exc:
        raise CheckpointError(f"{path}: unreadable checkpoint ({exc})") from None
    if blob.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path}: unsupported checkpoint format {blob.get('format')!r}")
    if kind is not None and blob["kind"] != kind:
        raise CheckpointError(f"{path}: holds a {blob['kind']} model, expected {kind}")
    if blob["vocab_hash"] != vocab.hash():
        raise CheckpointError(f"{path}: vocabulary hash {blob['vocab_hash']} does not match {vocab.hash()}")
    cls, cfg_cls = _KINDS[blob["kind"]]
    model = cls(vocab, cfg_cls(**blob["config"]))
    model.load_state_dict(blob["state"])
    model.eval()
    return model, blob["extra"]
