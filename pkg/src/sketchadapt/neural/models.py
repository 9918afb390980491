"""Spec encoder, recognizer, sketch generator and program language model."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Sequence

import torch
import torch.nn as nn
import torch.nn.functional as F

from ..enumerator import Spec
from .vocab import TokenVocab

NEG_INF = float("-inf")


@dataclass
class GeneratorConfig:
    embed: int = 128
    hidden: int = 512


@dataclass
class RecognizerConfig:
    embed: int = 128
    hidden: int = 128
    mlp: int = 128


@dataclass
class LMConfig:
    embed: int = 128
    hidden: int = 256


# --------------------------------------------------------------------------- batching


@dataclass
class SpecBatch:
    tokens: torch.Tensor  # [B, X, T] long
    lengths: torch.Tensor  # [B, X] long, 0 for padding examples
    example_mask: torch.Tensor  # [B, X] bool

    def __len__(self) -> int:
        return self.tokens.shape[0]


def collate_specs(vocab: TokenVocab, specs: Sequence[Spec]) -> SpecBatch:
    encoded = [vocab.encode_spec(s) for s in specs]
    X = max(len(e) for e in encoded)
    T = max(len(ex) for e in encoded for ex in e)
    tokens = torch.zeros(len(specs), X, T, dtype=torch.long)
    lengths = torch.zeros(len(specs), X, dtype=torch.long)
    for b, exs in enumerate(encoded):
        for x, ids in enumerate(exs):
            tokens[b, x, : len(ids)] = torch.tensor(ids)
            lengths[b, x] = len(ids)
    return SpecBatch(tokens, lengths, lengths > 0)


def pad_sequences(seqs: Sequence[Sequence[int]], pad: int = 0) -> tuple[torch.Tensor, torch.Tensor]:
    T = max(len(s) for s in seqs)
    out = torch.full((len(seqs), T), pad, dtype=torch.long)
    for i, s in enumerate(seqs):
        out[i, : len(s)] = torch.tensor(list(s), dtype=torch.long)
    return out, torch.tensor([len(s) for s in seqs], dtype=torch.long)


def _run_lstm(lstm: nn.LSTM, emb: torch.Tensor, lengths: torch.Tensor):
    """Outputs [N, T, H] (zeros past each length) and final hidden [N, H].

    Sequences are left-aligned, so running over the padding and reading the
    state at ``length - 1`` equals a packed run; packing is much slower to
    backpropagate through on CPU.
    """
    out, _ = lstm(emb)
    last = (lengths.clamp(min=1) - 1).view(-1, 1, 1).expand(-1, 1, out.shape[-1])
    final = out.gather(1, last).squeeze(1)
    valid = torch.arange(emb.shape[1]).unsqueeze(0) < lengths.unsqueeze(1)
    return out * valid.unsqueeze(-1), final


# --------------------------------------------------------------------------- modules


@dataclass
class EncodedSpec:
    memory: torch.Tensor  # [B, X, T, H]
    memory_mask: torch.Tensor  # [B, X, T] bool
    example_mask: torch.Tensor  # [B, X] bool
    pooled: torch.Tensor  # [B, H]

    def index_select(self, idx: torch.Tensor) -> "EncodedSpec":
        return EncodedSpec(self.memory[idx], self.memory_mask[idx], self.example_mask[idx], self.pooled[idx])


class SpecEncoder(nn.Module):
    """LSTM over each example's token sequence; pooled vector = mean over examples."""

    def __init__(self, n_tokens: int, embed: int, hidden: int):
        super().__init__()
        self.embed = nn.Embedding(n_tokens, embed, padding_idx=0)
        self.lstm = nn.LSTM(embed, hidden, batch_first=True)
        self.hidden = hidden

    def forward(self, batch: SpecBatch) -> EncodedSpec:
        B, X, T = batch.tokens.shape
        flat = batch.tokens.reshape(B * X, T)
        lengths = batch.lengths.reshape(B * X)
        out, final = _run_lstm(self.lstm, self.embed(flat), lengths)
        memory = out.reshape(B, X, T, self.hidden)
        final = final.reshape(B, X, self.hidden)
        ex = batch.example_mask
        pooled = (final * ex.unsqueeze(-1)).sum(1) / ex.sum(1, keepdim=True).clamp(min=1)
        t_idx = torch.arange(T).view(1, 1, T)
        memory_mask = t_idx < batch.lengths.unsqueeze(-1)
        return EncodedSpec(memory, memory_mask, ex, pooled)


class Recognizer(nn.Module):
    """(spec, sketch) -> log production weights over the catalog's productions."""

    def __init__(self, vocab: TokenVocab, config: RecognizerConfig | None = None):
        super().__init__()
        self.vocab = vocab
        self.config = config or RecognizerConfig()
        c = self.config
        self.spec_encoder = SpecEncoder(vocab.n_spec, c.embed, c.hidden)
        self.sketch_embed = nn.Embedding(vocab.n_program, c.embed, padding_idx=0)
        self.sketch_lstm = nn.LSTM(c.embed, c.hidden, batch_first=True)
        self.mlp = nn.Sequential(
            nn.Linear(2 * c.hidden, c.mlp),
            nn.ReLU(),
            nn.Linear(c.mlp, vocab.catalog.n_productions),
        )

    def forward(self, specs: SpecBatch, sketch_tokens: torch.Tensor, sketch_lengths: torch.Tensor) -> torch.Tensor:
        pooled = self.spec_encoder(specs).pooled
        _, sk = _run_lstm(self.sketch_lstm, self.sketch_embed(sketch_tokens), sketch_lengths)
        return F.log_softmax(self.mlp(torch.cat([pooled, sk], -1)), dim=-1)


class SketchGenerator(nn.Module):
    """Seq-to-seq decoder over program tokens with dot-product attention on each example.

    Per-example attention contexts are max-pooled across examples.
    """

    def __init__(self, vocab: TokenVocab, config: GeneratorConfig | None = None):
        super().__init__()
        self.vocab = vocab
        self.config = config or GeneratorConfig()
        c = self.config
        self.encoder = SpecEncoder(vocab.n_spec, c.embed, c.hidden)
        self.embed = nn.Embedding(vocab.n_program, c.embed, padding_idx=0)
        self.init_state = nn.Linear(c.hidden, 2 * c.hidden)
        self.cell = nn.LSTMCell(c.embed + c.hidden, c.hidden)
        self.query = nn.Linear(c.hidden, c.hidden, bias=False)
        self.combine = nn.Linear(2 * c.hidden, c.hidden)
        self.out = nn.Linear(c.hidden, vocab.n_program)

    def encode(self, specs: SpecBatch) -> EncodedSpec:
        return self.encoder(specs)

    def start(self, enc: EncodedSpec):
        h, c = torch.tanh(self.init_state(enc.pooled)).chunk(2, -1)
        ctx = torch.zeros_like(h)
        return h.contiguous(), c.contiguous(), ctx

    def attend(self, enc: EncodedSpec, h: torch.Tensor) -> torch.Tensor:
        q = self.query(h)  # [N, H]
        scores = torch.einsum("nxth,nh->nxt", enc.memory, q)
        scores = scores.masked_fill(~enc.memory_mask, NEG_INF)
        # padding examples have no valid positions; keep their softmax finite
        scores = scores.masked_fill(~enc.example_mask.unsqueeze(-1), 0.0)
        weights = torch.softmax(scores, -1)
        ctx = torch.einsum("nxt,nxth->nxh", weights, enc.memory)
        ctx = ctx.masked_fill(~enc.example_mask.unsqueeze(-1), NEG_INF)
        return ctx.max(1).values

    def step(self, enc: EncodedSpec, tokens: torch.Tensor, state):
        """One decoder step. Returns unnormalised logits [N, V] and the new state."""
        h, c, ctx = state
        x = torch.cat([self.embed(tokens), ctx], -1)
        h, c = self.cell(x, (h, c))
        ctx = self.attend(enc, h)
        logits = self.out(torch.tanh(self.combine(torch.cat([h, ctx], -1))))
        return logits, (h, c, ctx)

    def teacher_forced_logits(self, enc: EncodedSpec, inputs: torch.Tensor) -> torch.Tensor:
        """Logits [N, T, V] for decoder inputs [N, T] (START followed by the target prefix)."""
        state = self.start(enc)
        outs = []
        for t in range(inputs.shape[1]):
            logits, state = self.step(enc, inputs[:, t], state)
            outs.append(logits)
        return torch.stack(outs, 1)


class ProgramLM(nn.Module):
    """Left-to-right LSTM language model over program/sketch tokens."""

    def __init__(self, vocab: TokenVocab, config: LMConfig | None = None):
        super().__init__()
        self.vocab = vocab
        self.config = config or LMConfig()
        c = self.config
        self.embed = nn.Embedding(vocab.n_program, c.embed, padding_idx=0)
        self.lstm = nn.LSTM(c.embed, c.hidden, batch_first=True)
        self.out = nn.Linear(c.hidden, vocab.n_program)

    def forward(self, tokens: torch.Tensor, state=None):
        out, state = self.lstm(self.embed(tokens), state)
        return self.out(out), state


def config_dict(model: nn.Module) -> dict:
    return asdict(model.config)
