"""Synthetic task generation: program sampling, behavioural pruning, input sampling.

Programs are pruned when they misbehave on a fixed probe set (FAIL, values out
of range, constant output) or when some strictly smaller program has the same
probe outputs. Example inputs are drawn from ranges found by interval
propagation so the program neither fails nor leaves the example range.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass
from typing import Iterable, Iterator, Sequence

import numpy as np

from ..dsl import (
    DATA_BOUND,
    FAIL,
    INT,
    LIST_CATALOG,
    LIST_INT,
    SPEC_BOUND,
    App,
    Catalog,
    FuncTy,
    Input,
    Signature,
    Term,
    compile_program,
    inputs_used,
    iter_nodes,
    parse_program,
    parse_signature,
    print_program,
    program_length,
    signature_names,
    to_json,
    to_value,
)
from ..enumerator import Spec, check_spec

DEFAULT_SIGNATURES: tuple = ((LIST_INT,), (INT, LIST_INT), (LIST_INT, LIST_INT))
N_PROBES = 20
PROBE_VALUE_RANGE = 10
PROBE_INT_RANGE = (0, 5)
LIST_LEN = 10
N_EXAMPLES = 5


class SamplingError(RuntimeError):
    """No acceptable program or input set was found within the attempt limit."""


@dataclass(frozen=True)
class TrainTask:
    program: Term
    spec: Spec

    def to_json(self) -> dict:
        return {
            "program": print_program(self.program),
            "signature": signature_names(self.spec.signature),
            "examples": [[[to_json(v) for v in inputs], to_json(out)] for inputs, out in self.spec.examples],
        }

    @classmethod
    def from_json(cls, obj: dict, catalog: Catalog = LIST_CATALOG) -> "TrainTask":
        spec = Spec.from_json(obj)
        program = parse_program(obj["program"], catalog, spec.signature)
        return cls(program, spec)


def dump_tasks(tasks: Iterable[TrainTask], path, header: dict) -> None:
    """JSON lines; the first line is ``{"header": {...}}``."""
    with open(path, "w") as fh:
        fh.write(json.dumps({"header": header}, sort_keys=True) + "\n")
        for t in tasks:
            fh.write(json.dumps(t.to_json()) + "\n")


def load_tasks(path, catalog: Catalog = LIST_CATALOG) -> tuple[dict, list[TrainTask]]:
    header: dict = {}
    tasks = []
    with open(path) as fh:
        for i, line in enumerate(fh):
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            if i == 0 and "header" in obj:
                header = obj["header"]
                continue
            tasks.append(TrainTask.from_json(obj, catalog))
    return header, tasks


# --------------------------------------------------------------------------- probes


def make_probes(signature: Signature, n: int = N_PROBES, seed: int = 12345) -> list[tuple]:
    """A fixed probe set per signature, shared by every program being compared."""
    rng = np.random.default_rng([seed, len(signature)] + [1 + (t == LIST_INT) for t in signature])
    probes = []
    for _ in range(n):
        row = []
        for t in signature:
            if t == LIST_INT:
                row.append(tuple(int(x) for x in rng.integers(-PROBE_VALUE_RANGE, PROBE_VALUE_RANGE + 1, LIST_LEN)))
            else:
                row.append(int(rng.integers(PROBE_INT_RANGE[0], PROBE_INT_RANGE[1] + 1)))
        probes.append(tuple(row))
    return probes


def probe_outputs(program: Term, probes: Sequence[tuple], bound: int = DATA_BOUND) -> tuple:
    run = compile_program(program, bound)
    return tuple(run(p) for p in probes)


def _key(outputs: tuple) -> int:
    return hash(tuple(None if v is FAIL else v for v in outputs))


def probe_ok(outputs: tuple) -> bool:
    """No FAIL anywhere, and not a constant function on the probes."""
    if any(v is FAIL for v in outputs):
        return False
    return len(set(outputs)) > 1


# --------------------------------------------------------------------------- exhaustive programs


def _data_slots(prim) -> list:
    return [a for a in prim.arg_types if not isinstance(a, FuncTy)]


def programs_of_length(
    ty, length: int, signature: Signature, catalog: Catalog = LIST_CATALOG
) -> Iterator[Term]:
    """All programs of type ``ty`` with exactly ``length`` non-lambda applications."""
    if length == 0:
        for i, t in enumerate(signature):
            if t == ty:
                yield Input(i, t)
        return
    for prim in catalog.primitives:
        if prim.ret != ty or not prim.arg_types:
            continue
        slots = prim.arg_types
        data_idx = [k for k, a in enumerate(slots) if not isinstance(a, FuncTy)]
        for split in _compositions(length - 1, len(data_idx)):
            choices = []
            for k, a in enumerate(slots):
                if isinstance(a, FuncTy):
                    choices.append([App(p) for p in catalog.primitives if p.ret == a])
                else:
                    n = split[data_idx.index(k)]
                    choices.append(list(programs_of_length(a, n, signature, catalog)))
            for kids in itertools.product(*choices):
                yield App(prim, kids)


def _compositions(total: int, parts: int) -> Iterator[tuple]:
    if parts == 0:
        if total == 0:
            yield ()
        return
    for first in range(total + 1):
        for rest in _compositions(total - first, parts - 1):
            yield (first,) + rest


class ProbeRegistry:
    """Probe-output keys of known programs, used to prune redundant behaviour.

    ``smaller`` maps keys to the minimal program length seen exhaustively;
    ``seen`` maps the key of each accepted program to the first program that
    produced it; ``blocked`` holds keys that must never be accepted (behaviours
    reserved for a held-out split). With ``unique_behaviour`` a key already in
    ``seen`` is redundant too; otherwise only exact program repeats are.
    """

    def __init__(self, signature: Signature, catalog: Catalog = LIST_CATALOG, probes=None,
                 unique_behaviour: bool = True):
        self.signature = tuple(signature)
        self.catalog = catalog
        self.probes = probes if probes is not None else make_probes(self.signature)
        self.unique_behaviour = unique_behaviour
        self.smaller: dict[int, int] = {}
        self.seen: dict[int, str] = {}
        self.programs: set[str] = set()
        self.blocked: set[int] = set()
        self.exhaustive_upto = -1

    def seed_exhaustive(self, max_length: int) -> None:
        """Register every program of length <= ``max_length`` (both output types)."""
        for n in range(self.exhaustive_upto + 1, max_length + 1):
            for ty in (INT, LIST_INT):
                for prog in programs_of_length(ty, n, self.signature, self.catalog):
                    k = _key(probe_outputs(prog, self.probes))
                    if k not in self.smaller:
                        self.smaller[k] = n
        self.exhaustive_upto = max(self.exhaustive_upto, max_length)

    def signature_of(self, program: Term) -> tuple:
        return probe_outputs(program, self.probes)

    def key_of(self, program: Term) -> int:
        return _key(self.signature_of(program))

    def redundant(self, program: Term, outputs: tuple | None = None) -> bool:
        outputs = self.signature_of(program) if outputs is None else outputs
        k = _key(outputs)
        n = self.smaller.get(k)
        if n is not None and n < program_length(program):
            return True
        if k in self.blocked:
            return True
        if self.unique_behaviour:
            return k in self.seen
        return print_program(program) in self.programs

    def add(self, program: Term, outputs: tuple | None = None) -> None:
        outputs = self.signature_of(program) if outputs is None else outputs
        k = _key(outputs)
        text = print_program(program)
        if self.unique_behaviour and k in self.seen and self.seen[k] != text:
            raise ValueError("probe signature already registered to another program")
        self.seen.setdefault(k, text)
        self.programs.add(text)

    def block(self, keys) -> None:
        self.blocked.update(keys)


# --------------------------------------------------------------------------- program sampling


def _random_term(rng, ty, n: int, signature: Signature, catalog: Catalog) -> Term | None:
    if n == 0:
        idx = [i for i, t in enumerate(signature) if t == ty]
        if not idx:
            return None
        i = idx[rng.integers(len(idx))]
        return Input(i, signature[i])
    prims = [p for p in catalog.primitives if p.ret == ty and p.arg_types]
    if not prims:
        return None
    prim = prims[rng.integers(len(prims))]
    data = [k for k, a in enumerate(prim.arg_types) if not isinstance(a, FuncTy)]
    # random composition of n - 1 over the data slots
    cuts = sorted(rng.integers(0, n, len(data) - 1).tolist()) if len(data) > 1 else []
    bounds = [0] + cuts + [n - 1]
    split = [bounds[i + 1] - bounds[i] for i in range(len(data))]
    kids = []
    for k, a in enumerate(prim.arg_types):
        if isinstance(a, FuncTy):
            lam = [p for p in catalog.primitives if p.ret == a]
            kids.append(App(lam[rng.integers(len(lam))]))
        else:
            sub = _random_term(rng, a, split[data.index(k)], signature, catalog)
            if sub is None:
                return None
            kids.append(sub)
    return App(prim, tuple(kids))


def sample_program(
    rng: np.random.Generator,
    catalog: Catalog,
    signature: Signature,
    length: int,
    registry: ProbeRegistry | None = None,
    max_attempts: int = 10_000,
) -> Term:
    """Random program of exactly ``length`` applications using every input.

    Rejects candidates that misbehave on the probes or that the registry flags
    as redundant. The accepted program is not added to the registry.
    """
    if length < 1:
        raise ValueError("length must be >= 1")
    registry = registry if registry is not None else ProbeRegistry(signature, catalog)
    if registry.exhaustive_upto < length - 1:
        registry.seed_exhaustive(length - 1)
    for _ in range(max_attempts):
        ty = INT if rng.random() < 0.5 else LIST_INT
        prog = _random_term(rng, ty, length, signature, catalog)
        if prog is None or inputs_used(prog) != set(range(len(signature))):
            continue
        outputs = registry.signature_of(prog)
        if not probe_ok(outputs) or registry.redundant(prog, outputs):
            continue
        return prog
    raise SamplingError(f"no acceptable length-{length} program after {max_attempts} attempts")


# --------------------------------------------------------------------------- interval propagation


def _hull(*ivs):
    return (min(i[0] for i in ivs), max(i[1] for i in ivs))


def _mul(a, b):
    ps = [a[0] * b[0], a[0] * b[1], a[1] * b[0], a[1] * b[1]]
    return (min(ps), max(ps))


def _tdiv(x, d):
    q = abs(x) // d
    return q if x >= 0 else -q


_UNARY = {
    "INC": lambda a: (a[0] + 1, a[1] + 1),
    "DEC": lambda a: (a[0] - 1, a[1] - 1),
    "MUL2": lambda a: (2 * a[0], 2 * a[1]),
    "MUL3": lambda a: (3 * a[0], 3 * a[1]),
    "MUL4": lambda a: (4 * a[0], 4 * a[1]),
    "DIV2": lambda a: (_tdiv(a[0], 2), _tdiv(a[1], 2)),
    "DIV3": lambda a: (_tdiv(a[0], 3), _tdiv(a[1], 3)),
    "DIV4": lambda a: (_tdiv(a[0], 4), _tdiv(a[1], 4)),
    "NEG": lambda a: (-a[1], -a[0]),
    "SQR": lambda a: (0 if a[0] <= 0 <= a[1] else min(a[0] ** 2, a[1] ** 2), max(a[0] ** 2, a[1] ** 2)),
}
_BINARY = {
    "ADD": lambda a, b: (a[0] + b[0], a[1] + b[1]),
    "SUB": lambda a, b: (a[0] - b[1], a[1] - b[0]),
    "MUL": _mul,
    "MIN": lambda a, b: (min(a[0], b[0]), min(a[1], b[1])),
    "MAX": lambda a, b: (max(a[0], b[0]), max(a[1], b[1])),
}


class _OutOfRange(Exception):
    pass


def _abstract(term: Term, env: list, limit: int):
    """Interval semantics. INT -> (lo, hi); LIST -> (lo, hi, min_len, max_len)."""
    if isinstance(term, Input):
        return env[term.index]
    name = term.prim.name
    if not term.children:
        return name
    args = [_abstract(c, env, limit) for c in term.children]
    if name in ("HEAD", "LAST", "MINIMUM", "MAXIMUM"):
        out = args[0][:2]
    elif name == "ACCESS":
        out = args[1][:2]
    elif name in ("TAKE", "DROP"):
        lo, hi, _, mx = args[1]
        out = (lo, hi, 0, mx)
    elif name in ("REVERSE", "SORT"):
        out = args[0]
    elif name == "SUM":
        lo, hi, mn, mx = args[0]
        out = (min(mn * lo, mx * lo), max(mn * hi, mx * hi))
    elif name == "MAP":
        lo, hi, mn, mx = args[1]
        out = _UNARY[args[0]]((lo, hi)) + (mn, mx)
    elif name == "FILTER":
        lo, hi, _, mx = args[1]
        out = (lo, hi, 0, mx)
    elif name == "COUNT":
        out = (0, args[1][3])
    elif name == "ZIPWITH":
        f, a, b = args
        out = _BINARY[f](a[:2], b[:2]) + (min(a[2], b[2]), min(a[3], b[3]))
    elif name == "SCANL1":
        f, (lo, hi, mn, mx) = args
        acc = (lo, hi)
        total = acc
        for _ in range(max(mx - 1, 0)):
            acc = _BINARY[f](acc, (lo, hi))
            total = _hull(total, acc)
            if max(abs(total[0]), abs(total[1])) > limit:
                raise _OutOfRange
        out = total + (mn, mx)
    else:
        raise ValueError(f"no interval rule for {name}")
    if max(abs(out[0]), abs(out[1])) > limit:
        raise _OutOfRange
    return out


def _index_inputs(program: Term) -> dict[int, str]:
    """INT inputs and the primitive that consumes them ('TAKE', 'DROP', 'ACCESS')."""
    uses: dict[int, str] = {}
    for node in iter_nodes(program):
        if isinstance(node, App) and node.prim.name in ("TAKE", "DROP", "ACCESS"):
            first = node.children[0]
            if isinstance(first, Input):
                prev = uses.get(first.index)
                uses[first.index] = "ACCESS" if "ACCESS" in (prev, node.prim.name) else node.prim.name
    return uses


def safe_value_range(
    program: Term,
    signature: Signature,
    list_len: tuple[int, int] = (LIST_LEN, LIST_LEN),
    inner_limit: int = DATA_BOUND,
    out_limit: int = SPEC_BOUND,
) -> int | None:
    """Largest r such that list entries in [-r, r] keep every value in range.

    Intermediate values must stay within ``inner_limit`` and the output within
    ``out_limit``. Returns None if even r = 1 cannot be guaranteed.
    """

    def ok(r: int) -> bool:
        env = []
        for t in signature:
            if t == LIST_INT:
                env.append((-r, r, list_len[0], list_len[1]))
            else:
                env.append((0, list_len[1]))
        try:
            out = _abstract(program, env, inner_limit)
        except _OutOfRange:
            return False
        return max(abs(out[0]), abs(out[1])) <= out_limit

    if not ok(1):
        return None
    lo, hi = 1, SPEC_BOUND
    while lo < hi:
        mid = (lo + hi + 1) // 2
        if ok(mid):
            lo = mid
        else:
            hi = mid - 1
    return lo


def sample_inputs(
    rng: np.random.Generator,
    program: Term,
    signature: Signature,
    count: int = N_EXAMPLES,
    list_len: tuple[int, int] = (LIST_LEN, LIST_LEN),
    retries: int = 100,
) -> Spec:
    """Draw ``count`` examples whose outputs are non-FAIL and within the example range."""
    r = safe_value_range(program, signature, list_len)
    if r is None:
        raise SamplingError(f"no safe input range for {print_program(program)}")
    index_use = _index_inputs(program)
    run = compile_program(program, DATA_BOUND)
    examples = []
    for _ in range(count):
        for _attempt in range(retries):
            n = int(rng.integers(list_len[0], list_len[1] + 1))
            row = []
            for i, t in enumerate(signature):
                if t == LIST_INT:
                    row.append(tuple(int(x) for x in rng.integers(-r, r + 1, n)))
                else:
                    top = n - 1 if index_use.get(i) == "ACCESS" else n
                    row.append(int(rng.integers(0, max(top, 0) + 1)))
            out = run(tuple(row))
            if out is FAIL:
                continue
            vals = out if isinstance(out, tuple) else (out,)
            if any(abs(v) > SPEC_BOUND for v in vals):
                continue
            examples.append((tuple(row), out))
            break
        else:
            raise SamplingError(f"could not sample valid inputs for {print_program(program)}")
    return Spec(tuple(examples), tuple(signature))


def spec_in_range(spec: Spec) -> bool:
    def vals(v):
        return v if isinstance(v, tuple) else (v,)

    return all(
        abs(x) <= SPEC_BOUND
        for inputs, out in spec.examples
        for v in (*inputs, out)
        for x in vals(v)
    )


# --------------------------------------------------------------------------- corpora


@dataclass
class TaskSampler:
    """Draws validated tasks of one program length across several signatures."""

    length: int
    rng: np.random.Generator
    signatures: tuple = DEFAULT_SIGNATURES
    catalog: Catalog = LIST_CATALOG
    list_len: tuple = (LIST_LEN, LIST_LEN)
    registries: dict | None = None
    unique_behaviour: bool = True

    def __post_init__(self):
        if self.registries is None:
            self.registries = {}
        self.exhausted: set = set()

    def registry(self, signature: Signature) -> ProbeRegistry:
        reg = self.registries.get(signature)
        if reg is None:
            reg = ProbeRegistry(signature, self.catalog, unique_behaviour=self.unique_behaviour)
            self.registries[signature] = reg
        if reg.exhaustive_upto < self.length - 1:
            reg.seed_exhaustive(self.length - 1)
        return reg

    def sample(self, max_attempts: int = 10_000) -> TrainTask:
        for _ in range(max_attempts):
            live = [s for s in self.signatures if s not in self.exhausted]
            if not live:
                break
            sig = live[int(self.rng.integers(len(live)))]
            reg = self.registry(sig)
            try:
                prog = sample_program(self.rng, self.catalog, sig, self.length, reg)
            except SamplingError:
                self.exhausted.add(sig)  # stays out for the rest of this sampler's life
                continue
            try:
                spec = sample_inputs(self.rng, prog, sig, list_len=self.list_len)
            except SamplingError:
                continue
            if len({out for _, out in spec.examples}) == 1:
                continue  # uninformative: every example has the same output
            reg.add(prog)
            return TrainTask(prog, spec)
        raise SamplingError(f"no task of length {self.length} after {max_attempts} attempts")

    def take(self, n: int) -> list[TrainTask]:
        return [self.sample() for _ in range(n)]


def validate_task(task: TrainTask) -> bool:
    return check_spec(task.program, task.spec) and spec_in_range(task.spec)


def parse_signatures(names: Sequence[Sequence[str]]) -> tuple:
    return tuple(parse_signature(n) for n in names)


def task_from_strings(program: str, examples: Sequence[tuple], signature: Sequence[str]) -> TrainTask:
    sig = parse_signature(signature)
    prog = parse_program(program, LIST_CATALOG, sig)
    spec = Spec(tuple((tuple(to_value(v) for v in i), to_value(o)) for i, o in examples), sig)
    return TrainTask(prog, spec)
