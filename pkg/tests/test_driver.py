import threading

import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

import sketchadapt.driver as drv
from sketchadapt.dsl import INT, LIST_CATALOG, LIST_INT, Hole, parse_program, serialize_tokens
from sketchadapt.enumerator import check_spec, iter_completions, uniform_weights
from sketchadapt.neural.models import GeneratorConfig, LMConfig, ProgramLM, Recognizer, RecognizerConfig, SketchGenerator
from sketchadapt.neural.ops import ScoredSketch
from sketchadapt.neural.vocab import TokenVocab

from helpers import spec_for

L1 = (LIST_INT,)
IL = (INT, LIST_INT)
VOCAB = TokenVocab()


def P(text, sig=L1):
    return parse_program(text, LIST_CATALOG, sig)


def spec_of(text, sig=L1, seed=0):
    return spec_for(P(text, sig), sig, np.random.default_rng(seed))


SPEC = spec_of("(MAP INC (SORT input0))")


def fake_beam(monkeypatch, sketches):
    """Make the generator's beam return exactly ``sketches``, best first."""
    beams = [ScoredSketch(s, -float(i), tuple(serialize_tokens(s))) for i, s in enumerate(sketches)]
    monkeypatch.setattr(drv, "beam_search", lambda gen, lm, spec, k, max_len=20: beams[:k])


def oracle_rank(sketch, spec, limit=100_000):
    """1-based position of the first passing completion under uniform weights."""
    for i, c in enumerate(iter_completions(sketch, uniform_weights(), tuple(spec.signature)), 1):
        if check_spec(c.program, spec):
            return i
        if i >= limit:
            return None
    return None


def test_full_program_in_beam_is_checked_directly(monkeypatch):
    prog = P("(MAP INC (SORT input0))")
    fake_beam(monkeypatch, [P("(REVERSE input0)"), prog, P("(MAP <HOLE> input0)")])
    res = drv.synthesize(SPEC, object(), None, None, 3, 10)
    assert res.solved and res.program == prog and res.sketch == prog
    assert res.candidates == 2


def test_budget_zero_checks_nothing(monkeypatch):
    prog = P("(MAP INC (SORT input0))")
    fake_beam(monkeypatch, [prog])
    res = drv.synthesize(SPEC, object(), None, None, 1, 0)
    assert not res.solved and res.candidates == 0


def test_beam_without_generator_is_an_error():
    with pytest.raises(ValueError):
        drv.synthesize(SPEC, None, None, None, 5, 10)


def test_synth_only_is_enumerate_then_check():
    for text in ("(SORT input0)", "(MAP INC (SORT input0))", "(SUM input0)"):
        spec = spec_of(text)
        rank = oracle_rank(Hole(spec.output_type), spec)
        res = drv.synthesize_baseline_synth_only(spec, None, 100_000)
        assert res.solved and res.candidates == rank
        assert check_spec(res.program, spec)
        assert not drv.synthesize_baseline_synth_only(spec, None, rank - 1).solved


def test_round_robin_interleaves_sketches(monkeypatch):
    a = P("(MAP <HOLE> (SORT input0))")
    b = P("(REVERSE <HOLE>)")
    fake_beam(monkeypatch, [b, a])
    ra = oracle_rank(a, SPEC)
    # b never succeeds on this spec within ra turns, so a's k-th candidate is global index 2k
    res = drv.synthesize(SPEC, object(), None, None, 2, 1000)
    assert res.solved and res.sketch == a
    assert res.candidates == 2 * ra


def test_exhausted_sketches_are_reported(monkeypatch):
    # only the ten int->int lambdas can fill the hole, and none of them sorts
    fake_beam(monkeypatch, [P("(MAP <HOLE> input0)")])
    res = drv.synthesize(spec_of("(SORT input0)"), object(), None, None, 1, 10_000)
    assert not res.solved and res.exhausted
    assert res.candidates == 10


def test_cancel_stops_before_any_candidate():
    ev = threading.Event()
    ev.set()
    res = drv.synthesize_baseline_synth_only(SPEC, None, 1000, cancel=ev)
    assert not res.solved and res.candidates == 0


def test_generator_only_checks_only_full_programs(monkeypatch):
    prog = P("(MAP INC (SORT input0))")
    fake_beam(monkeypatch, [P("(MAP <HOLE> input0)"), P("(SORT input0)"), prog])
    res = drv.synthesize_baseline_generator_only(SPEC, object(), None, 3)
    assert res.solved and res.candidates == 2
    res = drv.synthesize_baseline_generator_only(SPEC, object(), None, 3, budget=1)
    assert not res.solved and res.candidates == 1


@settings(max_examples=25)
@given(st.integers(1, 3000), st.sampled_from(["(SORT input0)", "(MAP INC (SORT input0))", "(MAP DEC input0)"]))
def test_budget_prefix_property(budget, text):
    spec = spec_of(text)
    big = drv.synthesize_baseline_synth_only(spec, None, 3000)
    small = drv.synthesize_baseline_synth_only(spec, None, budget)
    (row,) = drv._expand("t", "m", 0, big, [budget])
    assert row.solved == small.solved
    assert row.candidates == small.candidates
    assert small.candidates <= budget


def tiny_models():
    torch.manual_seed(0)
    gen = SketchGenerator(VOCAB, GeneratorConfig(8, 16))
    return drv.Models(
        recognizer=Recognizer(VOCAB, RecognizerConfig(8, 8, 8)),
        generator=gen,
        generator_only=gen,
        lm=ProgramLM(VOCAB, LMConfig(8, 8)),
    )


def suite():
    texts = ["(SORT input0)", "(MAP INC (SORT input0))", "(REVERSE (MAP DEC input0))", "(SUM input0)"]
    return [drv.EvalTask(f"t{i}", spec_of(t, seed=i)) for i, t in enumerate(texts)]


def test_evaluate_suite_rows_and_crosstab():
    rep = drv.evaluate_suite(suite(), drv.METHODS, tiny_models(), [2], [1, 10, 100])
    assert len(rep.rows) == 4 * 3 * 3
    assert {r.beam for r in rep.rows if r.method == drv.SYNTHESIZER_ONLY} == {0}
    for m, beams in rep.curves().items():
        for pts in beams.values():
            rates = [r for _, r in pts]
            assert rates == sorted(rates)
    for cells in rep.crosstab(100, 2).values():
        assert sum(cells.values()) == pytest.approx(100.0)
    assert all(r.candidates <= r.budget for r in rep.rows)
    assert "millis" not in drv.row_dicts(rep.rows)[0]
    assert "millis" in drv.row_dicts(rep.rows, timing=True)[0]


def test_evaluate_suite_is_deterministic():
    a = drv.row_dicts(drv.evaluate_suite(suite(), drv.METHODS, tiny_models(), [2], [10, 100]).rows)
    b = drv.row_dicts(drv.evaluate_suite(suite(), drv.METHODS, tiny_models(), [2], [10, 100]).rows)
    assert a == b


def test_evaluate_suite_edge_cases():
    assert drv.evaluate_suite([], drv.METHODS, tiny_models(), [2], [10]).rows == []
    assert drv.EvalReport().crosstab(10, 2) == {}
    with pytest.raises(ValueError):
        drv.evaluate_suite(suite(), ["nope"], tiny_models(), [2], [10])


def test_result_json():
    res = drv.synthesize_baseline_synth_only(spec_of("(SORT input0)"), None, 100)
    obj = res.to_json()
    assert obj["solved"] and obj["program"] == "(SORT input0)" and obj["sketch"] == "<HOLE>"
