"""Forward passes, losses and decoding built on the models in ``models``."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch
import torch.nn.functional as F

from ..dsl import (
    App,
    Hole,
    Signature,
    Term,
    deserialize_tokens,
    serialize_tokens,
)
from ..enumerator import Spec, _compatible
from .models import (
    NEG_INF,
    ProgramLM,
    Recognizer,
    SketchGenerator,
    collate_specs,
    pad_sequences,
)
from .syntax import DEFAULT_MAX_LEN, MaskedTokenError, SyntaxMask
from .vocab import TokenVocab

_MASKS: dict = {}


def syntax_mask(vocab: TokenVocab, max_len: int = DEFAULT_MAX_LEN) -> SyntaxMask:
    key = (id(vocab), max_len)
    m = _MASKS.get(key)
    if m is None:
        m = _MASKS[key] = SyntaxMask(vocab, max_len)
    return m


def root_hole(spec: Spec) -> Hole:
    return Hole(spec.output_type)


def sketch_ids(vocab: TokenVocab, sketch: Term) -> list[int]:
    return vocab.encode_program(serialize_tokens(sketch))


# --------------------------------------------------------------------------- recognizer


def recognizer_log_weights(model: Recognizer, specs: Sequence[Spec], sketches: Sequence[Term]) -> torch.Tensor:
    vocab = model.vocab
    seqs = [[vocab.start_id] + sketch_ids(vocab, s) for s in sketches]
    toks, lens = pad_sequences(seqs)
    return model(collate_specs(vocab, specs), toks, lens)


@torch.no_grad()
def recognizer_predict(model: Recognizer, spec: Spec, sketch: Term | None = None) -> np.ndarray:
    """Production weights (softmax output) for one spec; the root hole stands in for 'no sketch'."""
    model.eval()
    sketch = root_hole(spec) if sketch is None else sketch
    logw = recognizer_log_weights(model, [spec], [sketch])[0]
    return logw.exp().double().numpy()


@torch.no_grad()
def recognizer_predict_batch(model: Recognizer, specs: Sequence[Spec], sketches: Sequence[Term]) -> np.ndarray:
    model.eval()
    return recognizer_log_weights(model, specs, sketches).exp().double().numpy()


class _Normalizers:
    """Boolean masks over productions for each (signature, requested type)."""

    def __init__(self, catalog):
        self.catalog = catalog
        self.keys: dict = {}
        self.rows: list = []

    def index(self, signature: Signature, ty) -> int:
        key = (signature, ty)
        k = self.keys.get(key)
        if k is None:
            row = torch.zeros(self.catalog.n_productions, dtype=torch.bool)
            for p in _compatible(ty, signature, self.catalog):
                row[p.index] = True
            k = self.keys[key] = len(self.rows)
            self.rows.append(row)
        return k


def filled_steps(sketch: Term, program: Term, catalog) -> list[tuple[int, object]]:
    """(production index, requested type) for every program node that sits under a hole."""
    steps = []

    def under(node):
        steps.append((catalog.production_of(node).index, node.ty))
        if isinstance(node, App):
            for c in node.children:
                under(c)

    def walk(s, p):
        if isinstance(s, Hole):
            under(p)
        elif isinstance(s, App):
            for a, b in zip(s.children, p.children):
                walk(a, b)

    walk(sketch, program)
    return steps


def recognizer_loss(
    model: Recognizer,
    specs: Sequence[Spec],
    sketches: Sequence[Term],
    programs: Sequence[Term],
) -> torch.Tensor:
    """Per-task -log p(program | theta, sketch) with theta = recognizer(spec, sketch). Shape [B]."""
    catalog = model.vocab.catalog
    norms = _Normalizers(catalog)
    sb, sp, sk = [], [], []
    for b, (spec, s, p) in enumerate(zip(specs, sketches, programs)):
        for prod, ty in filled_steps(s, p, catalog):
            sb.append(b)
            sp.append(prod)
            sk.append(norms.index(tuple(spec.signature), ty))
    logw = recognizer_log_weights(model, specs, sketches)
    if not sb:
        return logw.sum(-1) * 0.0
    mask = torch.stack(norms.rows)  # [K, P]
    masked = logw.unsqueeze(1).masked_fill(~mask.unsqueeze(0), NEG_INF)  # [B, K, P]
    lognorm = torch.logsumexp(masked, -1)  # [B, K]
    sb_t, sp_t, sk_t = torch.tensor(sb), torch.tensor(sp), torch.tensor(sk)
    step_lp = logw[sb_t, sp_t] - lognorm[sb_t, sk_t]
    out = torch.zeros(len(specs), dtype=logw.dtype).index_add(0, sb_t, -step_lp)
    return out


# --------------------------------------------------------------------------- generator


def combine_log_probs(gen_logits: torch.Tensor, lm_logits: torch.Tensor | None, mask: torch.Tensor,
                      lm_weight: float = 1.0) -> torch.Tensor:
    """Log-space sum of decoder and LM distributions, syntax-masked, renormalised."""
    z = F.log_softmax(gen_logits, -1)
    if lm_logits is not None and lm_weight:
        z = z + lm_weight * F.log_softmax(lm_logits, -1)
    z = z.masked_fill(~mask, NEG_INF)
    return F.log_softmax(z, -1)


@dataclass
class _Targets:
    inputs: torch.Tensor
    targets: torch.Tensor
    masks: torch.Tensor
    valid: torch.Tensor


def _sketch_targets(vocab: TokenVocab, specs: Sequence[Spec], sketches: Sequence[Term], max_len: int) -> _Targets:
    sm = syntax_mask(vocab, max_len)
    seqs, masks = [], []
    for spec, s in zip(specs, sketches):
        ids = sketch_ids(vocab, s)
        masks.append(sm.masks_for(ids, spec.output_type, tuple(spec.signature)))
        seqs.append(ids)
    T = max(len(s) for s in seqs)
    B, V = len(seqs), vocab.n_program
    inputs = torch.zeros(B, T, dtype=torch.long)
    targets = torch.zeros(B, T, dtype=torch.long)
    mask_t = torch.ones(B, T, V, dtype=torch.bool)
    valid = torch.zeros(B, T, dtype=torch.bool)
    for b, (ids, m) in enumerate(zip(seqs, masks)):
        n = len(ids)
        inputs[b, 0] = vocab.start_id
        inputs[b, 1:n] = torch.tensor(ids[:-1], dtype=torch.long)
        targets[b, :n] = torch.tensor(ids, dtype=torch.long)
        mask_t[b, :n] = m
        valid[b, :n] = True
    return _Targets(inputs, targets, mask_t, valid)


def generator_nll(
    gen: SketchGenerator,
    lm: ProgramLM | None,
    specs: Sequence[Spec],
    sketches: Sequence[Term],
    max_len: int = DEFAULT_MAX_LEN,
    lm_weight: float = 1.0,
) -> torch.Tensor:
    """Per-task -log q(sketch | spec). Shape [B]; differentiable in the generator."""
    tg = _sketch_targets(gen.vocab, specs, sketches, max_len)
    enc = gen.encode(collate_specs(gen.vocab, specs))
    logits = gen.teacher_forced_logits(enc, tg.inputs)
    lm_logits = None
    if lm is not None and lm_weight:
        with torch.no_grad():
            lm_logits, _ = lm(tg.inputs)
        lm_logits = lm_logits.to(logits.dtype)
    logp = combine_log_probs(logits, lm_logits, tg.masks, lm_weight)
    picked = logp.gather(-1, tg.targets.unsqueeze(-1)).squeeze(-1)
    picked = picked.masked_fill(~tg.valid, 0.0)
    return -picked.sum(-1)


@torch.no_grad()
def nll_of_sketch(gen: SketchGenerator, lm: ProgramLM | None, spec: Spec, sketch: Term, **kw) -> float:
    gen.eval()
    return float(generator_nll(gen, lm, [spec], [sketch], **kw)[0])


@torch.no_grad()
def generator_stepwise_distribution(
    gen: SketchGenerator,
    lm: ProgramLM | None,
    spec: Spec,
    prefix: Sequence[str],
    max_len: int = DEFAULT_MAX_LEN,
    lm_weight: float = 1.0,
) -> torch.Tensor:
    """Probabilities over program tokens for the token following ``prefix``."""
    gen.eval()
    vocab = gen.vocab
    sm = syntax_mask(vocab, max_len)
    sig = tuple(spec.signature)
    pending: tuple = (spec.output_type,)
    ids = vocab.encode_program(prefix)
    for tok in ids:
        pending = sm.advance(pending, tok, sig)
    if not pending:
        raise MaskedTokenError("prefix is already a complete term")
    mask = sm.allowed(pending, len(ids), sig)
    inputs = torch.tensor([[vocab.start_id] + ids], dtype=torch.long)
    enc = gen.encode(collate_specs(vocab, [spec]))
    logits = gen.teacher_forced_logits(enc, inputs)[:, -1]
    lm_logits = lm(inputs)[0][:, -1] if lm is not None and lm_weight else None
    return combine_log_probs(logits, lm_logits, mask.unsqueeze(0), lm_weight)[0].exp()


@dataclass(frozen=True)
class ScoredSketch:
    sketch: Term
    log_prob: float
    tokens: tuple


@torch.no_grad()
def beam_search(
    gen: SketchGenerator,
    lm: ProgramLM | None,
    spec: Spec,
    k: int,
    max_len: int = DEFAULT_MAX_LEN,
    lm_weight: float = 1.0,
) -> list[ScoredSketch]:
    """Width-``k`` beam search under the masked, LM-reweighted decoder.

    Hypotheses that close their last open slot leave the beam; decoding stops
    when no open hypotheses remain. Width 1 is greedy decoding.
    """
    if k < 1:
        raise ValueError("beam width must be >= 1")
    gen.eval()
    if lm is not None:
        lm.eval()
    vocab = gen.vocab
    sm = syntax_mask(vocab, max_len)
    sig = tuple(spec.signature)
    enc0 = gen.encode(collate_specs(vocab, [spec]))
    state = gen.start(enc0)
    lm_state = None
    tokens = torch.tensor([vocab.start_id])
    hyps = [((), (spec.output_type,), 0.0)]  # (ids, pending, score)
    finished: list[tuple[tuple, float]] = []
    enc = enc0
    for used in range(max_len):
        if not hyps:
            break
        logits, state = gen.step(enc, tokens, state)
        lm_logits = None
        if lm is not None and lm_weight:
            out, lm_state = lm(tokens.unsqueeze(1), lm_state)
            lm_logits = out[:, -1]
        mask = torch.stack([sm.allowed(p, used, sig) for _, p, _ in hyps])
        logp = combine_log_probs(logits, lm_logits, mask, lm_weight).double()
        scores = torch.tensor([s for _, _, s in hyps], dtype=torch.float64).unsqueeze(1) + logp
        flat = scores.view(-1)
        n_valid = int(torch.isfinite(flat).sum())
        top = torch.topk(flat, min(k, n_valid))
        V = vocab.n_program
        keep_rows, keep_tok, new_hyps = [], [], []
        for score, pos in zip(top.values.tolist(), top.indices.tolist()):
            row, tok = divmod(pos, V)
            ids, pending, _ = hyps[row]
            pending = sm.advance(pending, tok, sig)
            if pending:
                keep_rows.append(row)
                keep_tok.append(tok)
                new_hyps.append((ids + (tok,), pending, score))
            else:
                finished.append((ids + (tok,), score))
        if not new_hyps:
            break
        idx = torch.tensor(keep_rows)
        state = tuple(s[idx] for s in state)
        if lm_state is not None:
            lm_state = tuple(s[:, idx] for s in lm_state)
        enc = enc0.index_select(torch.zeros(len(keep_rows), dtype=torch.long))
        tokens = torch.tensor(keep_tok)
        hyps = new_hyps
    finished.sort(key=lambda f: -f[1])
    results = []
    for ids, score in finished[:k]:
        toks = vocab.decode_program(ids)
        sketch = deserialize_tokens(toks, spec.output_type, sig, vocab.catalog)
        results.append(ScoredSketch(sketch, score, tuple(toks)))
    return results
