"""Probabilistic grammar over DSL terms and best-first enumeration of sketch completions.

A weight vector ``theta`` over the catalog's productions (primitives followed by
input variables) induces a PCFG: at a hole of type ``ty`` the probability of a
production is its weight renormalised over the productions whose return type is
``ty``. Enumeration expands the leftmost hole of the most likely partial
candidate first, so complete programs come out in non-increasing likelihood.

Ties are broken by ``(total nodes, production-index sequence)``, where the
sequence lists the productions chosen for the holes in preorder. Log
likelihoods are always accumulated in that same preorder so the key is
bit-for-bit reproducible outside the enumerator.
"""

from __future__ import annotations

import heapq
import math
import threading
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Iterator, Sequence

import numpy as np

from .dsl import (
    FAIL,
    LIST_CATALOG,
    App,
    Catalog,
    Hole,
    Input,
    Production,
    Signature,
    Term,
    Ty,
    compile_program,
    to_json,
    to_value,
    value_type,
    parse_signature,
    signature_names,
)

SMOOTH_FLOOR = 1e-6
DEFAULT_MAX_DEPTH = 12
# Keeps a partial candidate's key strictly ahead of its completions despite rounding.
_SLACK = 1e-9


class NotACompletionError(ValueError):
    """The program does not fill the sketch's holes."""


class IncompatibleProductionError(ValueError):
    pass


# --------------------------------------------------------------------------- weights


def uniform_weights(catalog: Catalog = LIST_CATALOG) -> np.ndarray:
    n = catalog.n_productions
    return np.full(n, 1.0 / n)


def smooth(theta, floor: float = SMOOTH_FLOOR) -> np.ndarray:
    """Floor every weight at ``floor`` and renormalise to sum 1."""
    w = np.asarray(theta, dtype=np.float64)
    if w.ndim != 1 or not np.all(np.isfinite(w)) or np.any(w < 0):
        raise ValueError("production weights must be a finite nonnegative vector")
    w = np.maximum(w, floor)
    return w / w.sum()


@lru_cache(maxsize=None)
def _compatible(ty: Ty, signature: Signature, catalog: Catalog) -> tuple:
    return tuple(p for p in catalog.productions if p.ret(signature) == ty)


def compatible_productions(
    ty: Ty, signature: Signature, catalog: Catalog = LIST_CATALOG
) -> list[Production]:
    """Productions able to fill a ``ty`` hole: catalog order, then input index."""
    return list(_compatible(ty, tuple(signature), catalog))


def expansion_probability(
    theta, ty: Ty, chosen: Production | str, signature: Signature, catalog: Catalog = LIST_CATALOG
) -> float:
    if isinstance(chosen, str):
        chosen = catalog.productions[catalog.production_index[chosen]]
    compat = _compatible(ty, tuple(signature), catalog)
    if chosen not in compat:
        raise IncompatibleProductionError(f"{chosen.name} cannot fill a {ty!r} hole")
    w = smooth(theta)
    return float(w[chosen.index] / sum(w[p.index] for p in compat))


class Grammar:
    """``theta`` specialised to one input signature.

    Caches, per requested type, the compatible productions with their log
    probabilities, plus the minimum height of any completion of that type.
    """

    def __init__(
        self,
        theta,
        signature: Signature,
        catalog: Catalog = LIST_CATALOG,
        max_depth: int = DEFAULT_MAX_DEPTH,
    ):
        self.theta = smooth(theta)
        self.signature = tuple(signature)
        self.catalog = catalog
        self.max_depth = max_depth
        self._options: dict = {}
        self._min_height: dict = {}
        self._best: dict = {}
        self._logw = np.log(self.theta)

    def options(self, ty: Ty) -> list[tuple[float, int, tuple]]:
        """``(log prob, production index, arg types)`` for each compatible production."""
        opts = self._options.get(ty)
        if opts is None:
            compat = _compatible(ty, self.signature, self.catalog)
            if compat:
                idx = [p.index for p in compat]
                lognorm = float(np.log(self.theta[idx].sum()))
                opts = [(float(self._logw[p.index]) - lognorm, p.index, p.arg_types) for p in compat]
            else:
                opts = []
            self._options[ty] = opts
        return opts

    def log_prob(self, ty: Ty, production_index: int) -> float:
        for lp, idx, _ in self.options(ty):
            if idx == production_index:
                return lp
        name = self.catalog.productions[production_index].name
        raise IncompatibleProductionError(f"{name} cannot fill a {ty!r} hole")

    def min_height(self, ty: Ty) -> float:
        """Height of the shortest completion of a ``ty`` hole (inf if none)."""
        if not self._min_height:
            self._solve_heights()
        return self._min_height.get(ty, math.inf)

    def _solve_heights(self) -> None:
        types = self._types()
        h = {t: math.inf for t in types}
        changed = True
        while changed:
            changed = False
            for t in types:
                for _, _, args in self.options(t):
                    cand = 1 + max((h[a] for a in args), default=0)
                    if cand < h[t]:
                        h[t] = cand
                        changed = True
        self._min_height = h

    def best_log_prob(self, ty: Ty) -> float:
        """Log probability of the most likely completion of a ``ty`` hole, ignoring the depth cap."""
        if not self._best:
            self._solve_best()
        return self._best.get(ty, -math.inf)

    def _types(self) -> set:
        types = set(self.signature)
        for p in self.catalog.primitives:
            types.add(p.ret)
            types.update(p.arg_types)
        return types

    def _solve_best(self) -> None:
        types = self._types()
        best = {t: -math.inf for t in types}
        changed = True
        while changed:
            changed = False
            for t in types:
                for lp, _, args in self.options(t):
                    cand = lp + sum(best[a] for a in args)
                    if cand > best[t]:
                        best[t] = cand
                        changed = True
        self._best = best

    def fits(self, ty: Ty, depth: int) -> bool:
        """Whether a ``ty`` hole at ``depth`` (root = 1) can be completed under the cap."""
        return depth + self.min_height(ty) - 1 <= self.max_depth


def as_grammar(theta, signature: Signature, catalog: Catalog, max_depth: int) -> Grammar:
    if isinstance(theta, Grammar):
        return theta
    return Grammar(theta, signature, catalog, max_depth)


# --------------------------------------------------------------------------- likelihood


def program_log_likelihood(
    sketch: Term,
    program: Term,
    theta,
    signature: Signature,
    catalog: Catalog = LIST_CATALOG,
) -> float:
    """log p(program | sketch, theta), summed over hole-filling steps in preorder."""
    g = as_grammar(theta, signature, catalog, DEFAULT_MAX_DEPTH)
    total = 0.0
    stack = [(sketch, program)]
    while stack:
        s, p = stack.pop()
        if isinstance(s, Hole):
            if isinstance(p, Hole):
                raise NotACompletionError("program still contains a hole")
            if p.ty != s.ty:
                raise NotACompletionError(f"hole of type {s.ty!r} filled with {p.ty!r}")
            # Every node below a hole is one derivation step; preorder sum.
            inner = [p]
            while inner:
                node = inner.pop()
                if isinstance(node, Hole):
                    raise NotACompletionError("program still contains a hole")
                total += g.log_prob(node.ty, catalog.production_of(node).index)
                if isinstance(node, App):
                    inner.extend(reversed(node.children))
            continue
        if isinstance(s, Input):
            if s != p:
                raise NotACompletionError(f"program differs from sketch at {s}")
            continue
        if not isinstance(p, App) or p.prim != s.prim:
            raise NotACompletionError(f"program differs from sketch at {s.prim.name}")
        stack.extend(reversed(list(zip(s.children, p.children))))
    return total


def program_likelihood(
    sketch: Term,
    program: Term,
    theta,
    signature: Signature,
    catalog: Catalog = LIST_CATALOG,
) -> float:
    return math.exp(program_log_likelihood(sketch, program, theta, signature, catalog))


def enumeration_rank(
    sketch: Term,
    program: Term,
    theta,
    signature: Signature,
    catalog: Catalog = LIST_CATALOG,
) -> int:
    """Upper bound ceil(1/p) on the program's 1-based position in enumeration order."""
    return math.ceil(1.0 / program_likelihood(sketch, program, theta, signature, catalog))


# --------------------------------------------------------------------------- enumeration


def _hole_slots(term: Term, depth: int = 1) -> list[tuple[Ty, int]]:
    if isinstance(term, Hole):
        return [(term.ty, depth)]
    if isinstance(term, App):
        out = []
        for c in term.children:
            out.extend(_hole_slots(c, depth + 1))
        return out
    return []


def fill_sketch(sketch: Term, fills: Sequence[int], catalog: Catalog, signature: Signature) -> Term:
    """Replace the sketch's holes, in preorder, by the Polish production sequence ``fills``."""
    it = iter(fills)
    prods = catalog.productions

    def grow(ty: Ty) -> Term:
        p = prods[next(it)]
        if p.primitive is None:
            return Input(p.input_index, signature[p.input_index])
        return App(p.primitive, tuple(grow(a) for a in p.primitive.arg_types))

    def walk(node: Term) -> Term:
        if isinstance(node, Hole):
            return grow(node.ty)
        if isinstance(node, App) and node.children:
            return App(node.prim, tuple(walk(c) for c in node.children))
        return node

    return walk(sketch)


@dataclass(frozen=True)
class Completion:
    program: Term
    log_likelihood: float
    fills: tuple


def iter_completions(
    sketch: Term,
    theta,
    signature: Signature,
    catalog: Catalog = LIST_CATALOG,
    max_depth: int = DEFAULT_MAX_DEPTH,
) -> Iterator[Completion]:
    """Yield every completion of ``sketch`` within the depth cap, best first.

    A* over leftmost-hole derivations: a partial candidate is keyed by its log
    likelihood plus the best achievable log likelihood of each open hole (plus
    a small slack), which never underestimates any of its completions.
    """
    g = as_grammar(theta, signature, catalog, max_depth)
    slots = tuple(_hole_slots(sketch))
    if not all(g.fits(ty, d) for ty, d in slots):
        return
    best = g.best_log_prob
    fits = g.fits
    # Per requested type: (log prob, production, arg types, summed best of args).
    table: dict = {}

    def expansions(ty):
        rows = table.get(ty)
        if rows is None:
            rows = [(lp, idx, args, sum(best(a) for a in args)) for lp, idx, args in g.options(ty)]
            table[ty] = rows
        return rows

    h0 = sum(best(ty) for ty, _ in slots)
    # entry: (-(logp + h) - slack or -logp when complete, nodes, fills, logp, h, frontier).
    # fills are unique per entry, so later fields are never compared.
    heap: list = [(-(h0 + _SLACK) if slots else 0.0, len(slots), (), 0.0, h0, slots)]
    push, pop = heapq.heappush, heapq.heappop
    while heap:
        _, nodes, fills, logp, h, frontier = pop(heap)
        if not frontier:
            yield Completion(fill_sketch(sketch, fills, catalog, g.signature), logp, fills)
            continue
        (ty, d), rest = frontier[0], frontier[1:]
        h_rest = h - best(ty)
        for lp, idx, args, hargs in expansions(ty):
            new_logp = logp + lp
            if args:
                if not all(fits(a, d + 1) for a in args):
                    continue
                new_h = h_rest + hargs
                push(heap, (-(new_logp + new_h + _SLACK), nodes + len(args), fills + (idx,),
                            new_logp, new_h, tuple((a, d + 1) for a in args) + rest))
            elif rest:
                push(heap, (-(new_logp + h_rest + _SLACK), nodes, fills + (idx,), new_logp, h_rest, rest))
            else:
                push(heap, (-new_logp, nodes, fills + (idx,), new_logp, 0.0, ()))


def enumerate_from_sketch(
    sketch: Term,
    theta,
    signature: Signature,
    budget: int,
    emit: Callable[[Completion], object] | None = None,
    catalog: Catalog = LIST_CATALOG,
    max_depth: int = DEFAULT_MAX_DEPTH,
    cancel: threading.Event | None = None,
) -> int:
    """Emit up to ``budget`` completions in best-first order; return how many were emitted.

    Enumeration also stops when ``emit`` returns a truthy value or ``cancel`` is set.
    """
    if budget <= 0:
        return 0
    count = 0
    for c in iter_completions(sketch, theta, signature, catalog, max_depth):
        if cancel is not None and cancel.is_set():
            break
        count += 1
        stop = emit(c) if emit is not None else None
        if stop or count >= budget:
            break
    return count


# --------------------------------------------------------------------------- specs


@dataclass(frozen=True)
class Spec:
    """Input-output examples plus the declared input types."""

    examples: tuple  # of (inputs tuple, output value)
    signature: Signature

    def __post_init__(self):
        if not self.examples:
            raise ValueError("a spec needs at least one example")
        for inputs, out in self.examples:
            if len(inputs) != len(self.signature):
                raise ValueError("example arity does not match the signature")
            for v, t in zip(inputs, self.signature):
                if value_type(v) != t:
                    raise ValueError(f"input {v!r} is not of type {t!r}")
            if out is FAIL:
                raise ValueError("spec outputs cannot be FAIL")
        if len({value_type(out) for _, out in self.examples}) != 1:
            raise ValueError("spec outputs disagree on type")

    @property
    def output_type(self) -> Ty:
        return value_type(self.examples[0][1])

    @classmethod
    def from_json(cls, obj: dict) -> "Spec":
        """Accepts ``examples`` as ``[{"inputs": [...], "output": ...}]`` or ``[[inputs, output]]``."""
        sig = parse_signature(obj["signature"])
        exs = []
        for ex in obj["examples"]:
            if isinstance(ex, dict):
                inputs, out = ex["inputs"], ex["output"]
            else:
                inputs, out = ex
            exs.append((tuple(to_value(v) for v in inputs), to_value(out)))
        return cls(tuple(exs), sig)

    def to_json(self) -> dict:
        return {
            "signature": signature_names(self.signature),
            "examples": [
                {"inputs": [to_json(v) for v in inputs], "output": to_json(out)}
                for inputs, out in self.examples
            ],
        }


def make_checker(spec: Spec) -> Callable[[Term], bool]:
    examples = [(tuple(i), o) for i, o in spec.examples]

    def check(program: Term) -> bool:
        run = compile_program(program)
        for inputs, out in examples:
            got = run(inputs)
            if got is FAIL or got != out or type(got) is not type(out):
                return False
        return True

    return check


def check_spec(program: Term, spec: Spec) -> bool:
    """True iff the program reproduces every example output; FAIL never matches."""
    return make_checker(spec)(program)
