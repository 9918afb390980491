"""End-to-end synthesis, the two baselines, and batch evaluation over budget grids.

Candidates are interleaved round-robin across sketches in beam order, one per
turn, under a single budget per task. Because that order does not depend on
the budget, one run at the largest budget determines the outcome at every
smaller budget: a task is solved at budget ``b`` iff its winning candidate
index is at most ``b``.
"""

from __future__ import annotations

import threading
import time
from collections import Counter
from dataclasses import asdict, dataclass, field
from itertools import combinations
from typing import Iterator, Sequence

from .dsl import Hole, Term, n_holes, print_program
from .enumerator import DEFAULT_MAX_DEPTH, Spec, iter_completions, make_checker, uniform_weights
from .neural.models import ProgramLM, Recognizer, SketchGenerator
from .neural.ops import beam_search, recognizer_predict_batch
from .neural.syntax import DEFAULT_MAX_LEN

SKETCHADAPT = "sketchadapt"
GENERATOR_ONLY = "generator_only"
SYNTHESIZER_ONLY = "synthesizer_only"
METHODS = (SKETCHADAPT, GENERATOR_ONLY, SYNTHESIZER_ONLY)

_CLOCK_EVERY = 256


@dataclass
class SynthesisResult:
    solved: bool
    program: Term | None
    sketch: Term | None
    candidates: int
    millis: int
    method: str
    exhausted: bool = False  # every sketch ran out of completions before the budget

    def to_json(self) -> dict:
        return {
            "solved": self.solved,
            "program": print_program(self.program) if self.program is not None else None,
            "sketch": print_program(self.sketch) if self.sketch is not None else None,
            "candidates": self.candidates,
            "millis": self.millis,
            "method": self.method,
        }


@dataclass
class Models:
    recognizer: Recognizer | None = None
    generator: SketchGenerator | None = None
    generator_only: SketchGenerator | None = None
    lm: ProgramLM | None = None


class _Search:
    """Shared budget, clock and cancellation for one task."""

    def __init__(self, spec: Spec, budget: int, wall_timeout: float | None, cancel: threading.Event | None):
        self.check = make_checker(spec)
        self.budget = budget
        self.deadline = None if wall_timeout is None else time.monotonic() + wall_timeout
        self.cancel = cancel or threading.Event()
        self.count = 0

    def stopped(self) -> bool:
        if self.cancel.is_set() or self.count >= self.budget:
            return True
        if self.deadline is not None and self.count % _CLOCK_EVERY == 0 and time.monotonic() > self.deadline:
            self.cancel.set()
            return True
        return False

    def try_program(self, program: Term) -> bool:
        self.count += 1
        if self.check(program):
            self.cancel.set()
            return True
        return False


def _round_robin(streams: list[tuple[Term, Iterator]], search: _Search):
    """Returns (program, sketch) of the first passing candidate, or None; sets ``exhausted``."""
    active = list(streams)
    while active and not search.stopped():
        still = []
        for sketch, it in active:
            if search.stopped():
                return None, False
            c = next(it, None)
            if c is None:
                continue
            if search.try_program(c.program):
                return (c.program, sketch), False
            still.append((sketch, it))
        active = still
    return None, not active


def _enumerate_sketches(
    spec: Spec,
    sketches: Sequence[Term],
    recognizer: Recognizer | None,
    search: _Search,
    theta_default=None,
    max_depth: int = DEFAULT_MAX_DEPTH,
):
    sig = tuple(spec.signature)
    if not sketches:
        return None, True
    if recognizer is not None:
        thetas = recognizer_predict_batch(recognizer, [spec] * len(sketches), list(sketches))
    else:
        thetas = [uniform_weights() if theta_default is None else theta_default] * len(sketches)
    streams = [
        (s, iter_completions(s, th, sig, max_depth=max_depth)) for s, th in zip(sketches, thetas)
    ]
    return _round_robin(streams, search)


def _finish(method, spec, found, search, t0, exhausted=False) -> SynthesisResult:
    millis = int((time.monotonic() - t0) * 1000)
    if found is None:
        return SynthesisResult(False, None, None, search.count, millis, method, exhausted)
    program, sketch = found
    return SynthesisResult(True, program, sketch, search.count, millis, method)


def synthesize(
    spec: Spec,
    generator: SketchGenerator | None,
    lm: ProgramLM | None,
    recognizer: Recognizer | None,
    beam: int,
    budget: int,
    wall_timeout: float | None = None,
    cancel: threading.Event | None = None,
    max_len: int = DEFAULT_MAX_LEN,
    method: str = SKETCHADAPT,
) -> SynthesisResult:
    """Decode sketches, check full programs directly, then enumerate the rest under one budget.

    Direct checks count toward the budget. With ``beam == 0`` the only sketch is
    the root hole.
    """
    t0 = time.monotonic()
    search = _Search(spec, budget, wall_timeout, cancel)
    if beam > 0:
        if generator is None:
            raise ValueError("a generator is needed for beam > 0")
        sketches = [s.sketch for s in beam_search(generator, lm, spec, beam, max_len=max_len)]
    else:
        sketches = [Hole(spec.output_type)]
    partial = []
    for s in sketches:
        if n_holes(s):
            partial.append(s)
            continue
        if search.stopped():
            return _finish(method, spec, None, search, t0)
        if search.try_program(s):
            return _finish(method, spec, (s, s), search, t0)
    found, exhausted = _enumerate_sketches(spec, partial, recognizer, search)
    return _finish(method, spec, found, search, t0, exhausted)


def synthesize_baseline_synth_only(
    spec: Spec,
    recognizer: Recognizer | None,
    budget: int,
    wall_timeout: float | None = None,
    cancel: threading.Event | None = None,
) -> SynthesisResult:
    """Enumerate from the root hole with theta = recognizer(spec, root hole)."""
    return synthesize(spec, None, None, recognizer, 0, budget, wall_timeout, cancel, method=SYNTHESIZER_ONLY)


def synthesize_baseline_generator_only(
    spec: Spec,
    generator: SketchGenerator,
    lm: ProgramLM | None,
    beam: int,
    budget: int | None = None,
    max_len: int = DEFAULT_MAX_LEN,
) -> SynthesisResult:
    """Check each beam member of a full-program generator; no enumeration."""
    t0 = time.monotonic()
    search = _Search(spec, beam if budget is None else min(beam, budget), None, None)
    if beam > 0:
        for s in beam_search(generator, lm, spec, beam, max_len=max_len):
            if n_holes(s.sketch):
                continue
            if search.stopped():
                break
            if search.try_program(s.sketch):
                return _finish(GENERATOR_ONLY, spec, (s.sketch, s.sketch), search, t0)
    return _finish(GENERATOR_ONLY, spec, None, search, t0)


# --------------------------------------------------------------------------- evaluation


@dataclass
class EvalTask:
    task_id: str
    spec: Spec


@dataclass
class EvalRow:
    task_id: str
    method: str
    beam: int
    budget: int
    solved: bool
    candidates: int
    millis: int
    program: str = ""


@dataclass
class EvalReport:
    rows: list = field(default_factory=list)
    results: dict = field(default_factory=dict)  # (task_id, method, beam) -> SynthesisResult

    def curves(self) -> dict:
        """method -> beam -> [(budget, solve rate)]."""
        by: dict = {}
        for r in self.rows:
            by.setdefault(r.method, {}).setdefault(r.beam, {}).setdefault(r.budget, []).append(r.solved)
        return {
            m: {b: [(bud, sum(v) / len(v)) for bud, v in sorted(d.items())] for b, d in beams.items()}
            for m, beams in by.items()
        }

    def solved_sets(self, budget: int) -> dict:
        """(method, beam) -> set of solved task ids at ``budget``."""
        out: dict = {}
        for r in self.rows:
            if r.budget == budget:
                s = out.setdefault((r.method, r.beam), set())
                if r.solved:
                    s.add(r.task_id)
        return out

    def crosstab(self, budget: int, beam: int) -> dict:
        """Pairwise solved/failed partition between methods, as percentages of tasks."""
        tasks = sorted({r.task_id for r in self.rows})
        if not tasks:
            return {}
        sets = {}
        for (m, b), s in self.solved_sets(budget).items():
            if b == beam or (m == SYNTHESIZER_ONLY and b == 0):
                sets[m] = s
        out = {}
        for a, b in combinations([m for m in METHODS if m in sets], 2):
            cells = Counter()
            for t in tasks:
                cells[(t in sets[a], t in sets[b])] += 1
            n = len(tasks)
            out[f"{a}|{b}"] = {
                "both_solved": 100.0 * cells[(True, True)] / n,
                f"only_{a}": 100.0 * cells[(True, False)] / n,
                f"only_{b}": 100.0 * cells[(False, True)] / n,
                "neither": 100.0 * cells[(False, False)] / n,
            }
        return out


def _expand(task_id, method, beam, result: SynthesisResult, budgets) -> list[EvalRow]:
    rows = []
    program = print_program(result.program) if result.solved else ""
    for b in budgets:
        solved = result.solved and result.candidates <= b
        cand = result.candidates if solved else min(result.candidates, b)
        rows.append(EvalRow(task_id, method, beam, b, solved, cand, result.millis, program if solved else ""))
    return rows


def evaluate_suite(
    tasks: Sequence[EvalTask],
    methods: Sequence[str],
    models: Models,
    beam_widths: Sequence[int],
    budget_grid: Sequence[int],
    wall_timeout: float | None = None,
    progress=None,
) -> EvalReport:
    """One row per (task, method, beam, budget). Each (task, method, beam) is searched once at the
    largest budget and the rows for smaller budgets are read off the winning candidate index."""
    report = EvalReport()
    budgets = sorted(set(int(b) for b in budget_grid))
    if not tasks or not budgets:
        return report
    top = budgets[-1]
    for m in methods:
        if m not in METHODS:
            raise ValueError(f"unknown method {m!r}")
    for task in tasks:
        for m in methods:
            beams = [0] if m == SYNTHESIZER_ONLY else list(beam_widths)
            for k in beams:
                if m == SKETCHADAPT:
                    res = synthesize(task.spec, models.generator, models.lm, models.recognizer, k, top, wall_timeout)
                elif m == GENERATOR_ONLY:
                    res = synthesize_baseline_generator_only(task.spec, models.generator_only, models.lm, k, top)
                else:
                    res = synthesize_baseline_synth_only(task.spec, models.recognizer, top, wall_timeout)
                if res.solved and not make_checker(task.spec)(res.program):
                    raise AssertionError(f"unsound result for task {task.task_id}")
                report.results[(task.task_id, m, k)] = res
                report.rows.extend(_expand(task.task_id, m, k, res, budgets))
                if progress:
                    progress(task, m, k, res)
    return report


def row_dicts(rows: Sequence[EvalRow], timing: bool = False) -> list[dict]:
    out = []
    for r in rows:
        d = asdict(r)
        if not timing:
            d.pop("millis")
        out.append(d)
    return out
