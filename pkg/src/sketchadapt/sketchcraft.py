"""Sketches of a program, training-target selection, and timeout sampling.

Every sketch of a program replaces a set of disjoint subtrees by holes of the
same type. The training target for a sampled budget ``t`` is the least likely
sketch (under the enumerator's grammar) whose completion is still found within
``t`` candidates, using ``1/p`` as the enumeration-time bound.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .dsl import LIST_CATALOG, App, Catalog, Hole, Signature, Term, n_holes, serialize_tokens
from .enumerator import DEFAULT_MAX_DEPTH, as_grammar, program_log_likelihood

DEFAULT_SKETCH_CAP = 100_000
DEFAULT_ALPHA = 0.25


class TooManySketchesError(ValueError):
    """The program has more sketches than the configured cap."""


@dataclass(frozen=True)
class SketchEntry:
    sketch: Term
    log_likelihood: float

    @property
    def likelihood(self) -> float:
        return math.exp(self.log_likelihood)


def sketch_count(program: Term) -> int:
    """S(leaf) = 2, S(node) = 1 + prod S(child)."""
    if isinstance(program, App) and program.children:
        return 1 + math.prod(sketch_count(c) for c in program.children)
    return 2


def _sketches(term: Term) -> list[Term]:
    out: list[Term] = [term] if not (isinstance(term, App) and term.children) else []
    if isinstance(term, App) and term.children:
        for kids in itertools.product(*(_sketches(c) for c in term.children)):
            out.append(App(term.prim, kids))
    out.append(Hole(term.ty))
    return out


def all_sketches(
    program: Term,
    theta=None,
    signature: Signature = (),
    catalog: Catalog = LIST_CATALOG,
    cap: int = DEFAULT_SKETCH_CAP,
) -> list[SketchEntry]:
    """Every sketch of ``program``, the full program first and the root hole last.

    Likelihoods are filled from ``theta`` when given, otherwise left as NaN.
    """
    if n_holes(program):
        raise ValueError("all_sketches expects a program without holes")
    count = sketch_count(program)
    if count > cap:
        raise TooManySketchesError(
            f"{count} sketches exceeds the cap of {cap}; sample a subset of sketches instead"
        )
    sketches = _sketches(program)
    if theta is None:
        return [SketchEntry(s, math.nan) for s in sketches]
    g = as_grammar(theta, signature, catalog, DEFAULT_MAX_DEPTH)
    return [SketchEntry(s, program_log_likelihood(s, program, g, signature, catalog)) for s in sketches]


def _tie_key(entry: SketchEntry, catalog: Catalog):
    """Least likely first; then more holes, fewer nodes, lexicographic production order."""
    toks = serialize_tokens(entry.sketch)
    order = tuple(catalog.production_index.get(t, -1) for t in toks)
    return (entry.log_likelihood, -n_holes(entry.sketch), len(toks), order)


def select_from_entries(
    entries: list[SketchEntry], t: float, catalog: Catalog = LIST_CATALOG
) -> SketchEntry | None:
    """argmin p over entries with 1/p < t (i.e. -log p < log t); None if none qualify."""
    log_t = math.log(t) if t > 0 else -math.inf
    feasible = [e for e in entries if -e.log_likelihood < log_t]
    if not feasible:
        return None
    return min(feasible, key=lambda e: _tie_key(e, catalog))


def select_train_sketch(
    program: Term,
    theta,
    t: float,
    signature: Signature,
    catalog: Catalog = LIST_CATALOG,
    cap: int = DEFAULT_SKETCH_CAP,
) -> Term:
    """Most general sketch of ``program`` recoverable within ``t`` candidates.

    Falls back to the full program when no sketch qualifies (t <= 1).
    """
    if t <= 0:
        raise ValueError("timeout must be positive")
    return SketchTable(program, catalog, cap).ranking(theta, signature).select(t)


def _preorder(term: Term) -> list[Term]:
    out, stack = [], [term]
    while stack:
        node = stack.pop()
        out.append(node)
        if isinstance(node, App):
            stack.extend(reversed(node.children))
    return out


class SketchTable:
    """All sketches of one program, with the program nodes each sketch leaves to enumeration.

    Likelihoods for a given theta are sums of per-node log probabilities over
    the covered nodes in preorder, which reproduces ``program_log_likelihood``
    exactly.
    """

    def __init__(self, program: Term, catalog: Catalog = LIST_CATALOG, cap: int = DEFAULT_SKETCH_CAP):
        if n_holes(program):
            raise ValueError("SketchTable expects a program without holes")
        count = sketch_count(program)
        if count > cap:
            raise TooManySketchesError(
                f"{count} sketches exceeds the cap of {cap}; sample a subset of sketches instead"
            )
        self.program = program
        self.catalog = catalog
        nodes = _preorder(program)
        self.node_types = [n.ty for n in nodes]
        self.node_productions = [catalog.production_of(n).index for n in nodes]
        sizes = {}
        for i in range(len(nodes) - 1, -1, -1):
            n = nodes[i]
            sizes[i] = 1 + (sum(sizes[j] for j in self._child_starts(i, n, sizes)) if isinstance(n, App) else 0)
        self.sketches = _sketches(program)
        self.covered = []
        self.static_keys = []
        for sk in self.sketches:
            cov: list[int] = []
            self._cover(sk, 0, sizes, cov)
            self.covered.append(tuple(cov))
            toks = serialize_tokens(sk)
            order = tuple(catalog.production_index.get(tok, -1) for tok in toks)
            self.static_keys.append((-n_holes(sk), len(toks), order))

    @staticmethod
    def _child_starts(i: int, node: App, sizes: dict) -> list[int]:
        starts, j = [], i + 1
        for _ in node.children:
            starts.append(j)
            j += sizes[j]
        return starts

    def _cover(self, sketch: Term, i: int, sizes: dict, out: list) -> None:
        if isinstance(sketch, Hole):
            out.extend(range(i, i + sizes[i]))
        elif isinstance(sketch, App):
            j = i + 1
            for c in sketch.children:
                self._cover(c, j, sizes, out)
                j += sizes[j]

    def __len__(self) -> int:
        return len(self.sketches)

    def log_likelihoods(self, theta, signature: Signature) -> list[float]:
        g = as_grammar(theta, signature, self.catalog, DEFAULT_MAX_DEPTH)
        node_lp = [g.log_prob(ty, idx) for ty, idx in zip(self.node_types, self.node_productions)]
        out = []
        for cov in self.covered:
            total = 0.0
            for i in cov:
                total += node_lp[i]
            out.append(total)
        return out

    def entries(self, theta, signature: Signature) -> list[SketchEntry]:
        return [SketchEntry(s, lp) for s, lp in zip(self.sketches, self.log_likelihoods(theta, signature))]

    def ranking(self, theta, signature: Signature) -> "SketchRanking":
        lps = self.log_likelihoods(theta, signature)
        order = sorted(range(len(lps)), key=lambda i: (lps[i],) + self.static_keys[i])
        return SketchRanking(self.program, [self.sketches[i] for i in order], np.array([lps[i] for i in order]))


class SketchRanking:
    """Sketches sorted by the selection key; ``select`` is a binary search on the budget."""

    def __init__(self, program: Term, sketches: list[Term], log_likelihoods: np.ndarray):
        self.program = program
        self.sketches = sketches
        self.log_likelihoods = log_likelihoods

    def select(self, t: float) -> Term:
        if t <= 0:
            raise ValueError("timeout must be positive")
        # feasible: -logp < log t, i.e. logp > -log t; the list is ascending in logp
        k = int(np.searchsorted(self.log_likelihoods, -math.log(t), side="right"))
        return self.sketches[k] if k < len(self.sketches) else self.program


class TimeoutSampler:
    """Draws enumeration budgets ``t``.

    In log-space mode (default) ``log t ~ Exp(alpha)``; otherwise ``t ~ Exp(alpha)``
    directly in candidate evaluations.
    """

    def __init__(self, alpha: float = DEFAULT_ALPHA, seed: int | None = 0, log_space: bool = True):
        if not alpha > 0:
            raise ValueError("alpha must be positive")
        self.alpha = float(alpha)
        self.log_space = log_space
        self.rng = np.random.default_rng(seed)

    def sample_exponent(self) -> float:
        return float(self.rng.exponential(1.0 / self.alpha))

    def sample(self) -> float:
        lam = self.sample_exponent()
        if not self.log_space:
            return lam
        return math.exp(lam) if lam < 700 else math.inf


def sample_timeout(sampler: TimeoutSampler) -> float:
    return sampler.sample()


def sketch_kind(sketch: Term, program: Term) -> str:
    """'full', 'root' or 'intermediate'."""
    if sketch == program:
        return "full"
    if isinstance(sketch, Hole):
        return "root"
    return "intermediate"


