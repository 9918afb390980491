import math

import numpy as np
import pytest
import torch

from sketchadapt.dsl import (
    HOLE_TOKEN,
    INT,
    LIST_CATALOG,
    LIST_INT,
    Hole,
    deserialize_tokens,
    parse_program,
)
from sketchadapt.enumerator import Spec
from sketchadapt.neural.models import (
    GeneratorConfig,
    LMConfig,
    ProgramLM,
    Recognizer,
    RecognizerConfig,
    SketchGenerator,
)
from sketchadapt.neural.ops import (
    beam_search,
    generator_nll,
    generator_stepwise_distribution,
    nll_of_sketch,
    recognizer_predict,
    syntax_mask,
)
from sketchadapt.neural.syntax import MaskedTokenError, SyntaxMask
from sketchadapt.neural.training import grad_step, make_optimizer
from sketchadapt.neural.vocab import TokenVocab, VocabError

from helpers import is_func, spec_for

L1 = (LIST_INT,)
IL = (INT, LIST_INT)
VOCAB = TokenVocab()


def tiny_models(seed=0):
    torch.manual_seed(seed)
    gen = SketchGenerator(VOCAB, GeneratorConfig(16, 32))
    lm = ProgramLM(VOCAB, LMConfig(8, 16))
    rec = Recognizer(VOCAB, RecognizerConfig(16, 16, 16))
    return gen, lm, rec


def spec_of(text, sig, seed=0):
    return spec_for(parse_program(text, LIST_CATALOG, sig), sig, np.random.default_rng(seed))


SPEC = spec_of("(MAP INC (SORT input0))", L1)
SPEC_IL = spec_of("(TAKE input0 (REVERSE input1))", IL)


# --------------------------------------------------------------------------- vocab


def test_vocab_layout():
    assert VOCAB.n_program == 4 + 37
    assert VOCAB.program_tokens[VOCAB.hole_id] == HOLE_TOKEN
    assert VOCAB.decode_program(VOCAB.encode_program(["MAP", "INC", "input0"])) == ["MAP", "INC", "input0"]
    with pytest.raises(VocabError):
        VOCAB.encode_program(["NOPE"])
    with pytest.raises(VocabError):
        VOCAB.encode_example(((999,),), 1)
    assert VOCAB.hash() == TokenVocab().hash()


# --------------------------------------------------------------------------- syntax mask


def _terms(ty, budget, sig):
    """Every token sequence (holes allowed) of a term of type ``ty`` using at most ``budget`` tokens."""
    if budget < 1:
        return
    yield (HOLE_TOKEN,)
    for i, t in enumerate(sig):
        if t == ty:
            yield (f"input{i}",)
    for p in LIST_CATALOG.primitives:
        if p.ret != ty:
            continue
        partial = [((p.name,), budget - 1)]
        for a in p.arg_types:
            nxt = []
            for toks, left in partial:
                for sub in _terms(a, left, sig):
                    nxt.append((toks + sub, left - len(sub)))
            partial = nxt
        for toks, _ in partial:
            yield toks


@pytest.mark.parametrize("sig,root", [(L1, LIST_INT), (IL, INT), (IL, LIST_INT)])
def test_mask_matches_continuation_oracle(sig, root):
    max_len = 5
    sm = SyntaxMask(VOCAB, max_len)
    seqs = list(_terms(root, max_len, sig))
    nexts: dict = {}
    for s in seqs:
        for i in range(len(s)):
            nexts.setdefault(s[:i], set()).add(s[i])
    for prefix, allowed in nexts.items():
        pending = (root,)
        for tok in VOCAB.encode_program(prefix):
            pending = sm.advance(pending, tok, sig)
        got = {VOCAB.program_tokens[i] for i in sm.allowed(pending, len(prefix), sig).nonzero().flatten().tolist()}
        assert got == allowed, prefix
    # every complete sequence is accepted by the mask and deserialises
    for s in seqs[:500]:
        sm.masks_for(VOCAB.encode_program(s), root, sig)
        deserialize_tokens(list(s), root, sig)


def test_mask_rejects_bad_sequences():
    sm = SyntaxMask(VOCAB, 20)
    with pytest.raises(MaskedTokenError):
        sm.masks_for(VOCAB.encode_program(["SUM", "input0"]), LIST_INT, L1)
    with pytest.raises(MaskedTokenError):
        sm.masks_for(VOCAB.encode_program(["MAP", "INC"]), LIST_INT, L1)


def test_stepwise_distribution_sums_to_one_and_respects_types():
    gen, lm, _ = tiny_models()
    p = generator_stepwise_distribution(gen, lm, SPEC, [])
    assert float(p.sum()) == pytest.approx(1.0, abs=1e-5)
    # LIST root: no INT- or BOOL-returning productions
    for i in p.nonzero().flatten().tolist():
        tok = VOCAB.program_tokens[i]
        if tok in LIST_CATALOG.by_name:
            assert LIST_CATALOG.by_name[tok].ret == LIST_INT
    assert float(p[VOCAB.prog_id["isODD"]]) == 0.0
    assert float(p[VOCAB.prog_id["SUM"]]) == 0.0
    q = generator_stepwise_distribution(gen, lm, SPEC, ["MAP"])
    assert float(q.sum()) == pytest.approx(1.0, abs=1e-5)
    for i in q.nonzero().flatten().tolist():
        tok = VOCAB.program_tokens[i]
        assert tok == HOLE_TOKEN or is_func(LIST_CATALOG.by_name[tok].ret)
    with pytest.raises(MaskedTokenError):
        generator_stepwise_distribution(gen, lm, SPEC, ["input0"])


def test_nll_equals_sum_of_stepwise_log_probs():
    gen, lm, _ = tiny_models(1)
    toks = ["MAP", HOLE_TOKEN, "SORT", "input0"]
    sk = deserialize_tokens(toks, LIST_INT, L1)
    total = 0.0
    for i, t in enumerate(toks):
        total -= math.log(float(generator_stepwise_distribution(gen, lm, SPEC, toks[:i])[VOCAB.prog_id[t]]))
    assert nll_of_sketch(gen, lm, SPEC, sk) == pytest.approx(total, rel=1e-4)


def test_beam_search_properties():
    gen, lm, _ = tiny_models(2)
    for spec in (SPEC, SPEC_IL):
        beams = beam_search(gen, lm, spec, 20)
        assert 0 < len(beams) <= 20
        assert len({b.tokens for b in beams}) == len(beams)
        scores = [b.log_prob for b in beams]
        assert scores == sorted(scores, reverse=True)
        for b in beams:
            assert b.sketch.ty == spec.output_type
            assert len(b.tokens) <= 20
            assert b.log_prob == pytest.approx(-nll_of_sketch(gen, lm, spec, b.sketch), abs=1e-4)
    with pytest.raises(ValueError):
        beam_search(gen, lm, SPEC, 0)


def test_width_one_is_greedy():
    gen, lm, _ = tiny_models(3)
    toks = []
    sm = syntax_mask(VOCAB)
    pending = (LIST_INT,)
    while pending:
        p = generator_stepwise_distribution(gen, lm, SPEC, toks)
        tok = int(torch.argmax(p))
        toks.append(VOCAB.program_tokens[tok])
        pending = sm.advance(pending, tok, L1)
    (best,) = beam_search(gen, lm, SPEC, 1)
    assert list(best.tokens) == toks


def test_generator_overfits_one_sketch():
    gen, lm, _ = tiny_models(4)
    sk = parse_program("(MAP <HOLE> (SORT input0))", LIST_CATALOG, L1)
    opt = make_optimizer(gen, 1e-2)
    before = nll_of_sketch(gen, lm, SPEC, sk)
    for _ in range(50):
        gen.train()
        grad_step(gen, opt, generator_nll(gen, lm, [SPEC], [sk]).mean())
    after = nll_of_sketch(gen, lm, SPEC, sk)
    assert after < 0.25 * before
    (top,) = beam_search(gen, lm, SPEC, 1)
    assert top.sketch == sk


def test_spec_encoding_is_permutation_invariant():
    gen, _, rec = tiny_models(5)
    shuffled = Spec(tuple(reversed(SPEC.examples)), SPEC.signature)
    a = recognizer_predict(rec, SPEC)
    b = recognizer_predict(rec, shuffled)
    assert np.allclose(a, b, atol=1e-6)
    sk = Hole(LIST_INT)
    assert nll_of_sketch(gen, None, SPEC, sk) == pytest.approx(nll_of_sketch(gen, None, shuffled, sk), abs=1e-5)


def test_recognizer_outputs_are_distributions_that_depend_on_the_spec():
    _, _, rec = tiny_models(6)
    a = recognizer_predict(rec, SPEC)
    b = recognizer_predict(rec, SPEC_IL)
    assert a.shape == (LIST_CATALOG.n_productions,)
    assert a.sum() == pytest.approx(1.0, abs=1e-6)
    assert (a > 0).all()
    assert not np.allclose(a, b)
    c = recognizer_predict(rec, SPEC, parse_program("(MAP <HOLE> input0)", LIST_CATALOG, L1))
    assert not np.allclose(a, c)

