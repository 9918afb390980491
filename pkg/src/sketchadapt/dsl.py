"""Typed list-processing DSL: types, primitives, terms, interpreter, and token I/O.

Programs are single s-expressions over a fixed catalog of 34 primitives with no
bound variables apart from the task inputs (``input0``, ``input1``, ...).
Higher-order primitives take their function arguments as zero-arity primitives
(``INC``, ``isEVEN``, ``ADD`` ...). A ``Hole`` node is a typed placeholder; a
term without holes is a program, and any term is a sketch.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Callable, Iterator, Sequence, Union

# --------------------------------------------------------------------------- types


@dataclass(frozen=True)
class BaseTy:
    name: str

    def __repr__(self) -> str:
        return self.name


@dataclass(frozen=True)
class FuncTy:
    args: tuple
    ret: "Ty"

    def __post_init__(self):
        if not self.args:
            raise ValueError("function type needs at least one argument")

    def __repr__(self) -> str:
        return f"({' '.join(map(repr, self.args))} -> {self.ret!r})"


Ty = Union[BaseTy, FuncTy]

INT = BaseTy("int")
BOOL = BaseTy("bool")
LIST_INT = BaseTy("list_int")

INPUT_TYPES = (INT, LIST_INT)
TYPE_NAMES = {"int": INT, "list_int": LIST_INT}

Signature = tuple  # ordered tuple of input types, e.g. (INT, LIST_INT)


def func(*args: Ty, ret: Ty) -> FuncTy:
    return FuncTy(tuple(args), ret)


INT_TO_INT = func(INT, ret=INT)
INT_TO_BOOL = func(INT, ret=BOOL)
INT2_TO_INT = func(INT, INT, ret=INT)


def parse_signature(names: Sequence[str]) -> Signature:
    try:
        sig = tuple(TYPE_NAMES[n] for n in names)
    except KeyError as exc:
        raise ValueError(f"unknown input type {exc.args[0]!r}") from None
    return sig


def signature_names(signature: Signature) -> list[str]:
    return [t.name for t in signature]


# --------------------------------------------------------------------------- values


class _Fail:
    """Result of a partial function applied outside its domain."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self) -> str:
        return "FAIL"

    def __reduce__(self):
        return (_Fail, ())


FAIL = _Fail()

# Lists are tuples so values are hashable (used for behavioral signatures).
Value = Union[int, bool, tuple, _Fail]

# Evaluation width used everywhere; anything beyond it is treated as overflow.
WIDE_BOUND = 2**63
# Intermediate-value range enforced during data generation.
DATA_BOUND = 512
# Range of integers that may appear in a task's examples.
SPEC_BOUND = 128


def value_type(v: Value) -> Ty:
    if isinstance(v, bool):
        return BOOL
    if isinstance(v, int):
        return INT
    if isinstance(v, tuple):
        return LIST_INT
    raise TypeError(f"no DSL type for {v!r}")


def to_value(obj) -> Value:
    """Convert JSON-ish data (int or list of ints) to a DSL value."""
    if isinstance(obj, bool):
        raise TypeError("booleans are not valid task values")
    if isinstance(obj, int):
        return obj
    if isinstance(obj, (list, tuple)):
        if not all(isinstance(x, int) and not isinstance(x, bool) for x in obj):
            raise TypeError(f"lists must hold ints: {obj!r}")
        return tuple(obj)
    raise TypeError(f"cannot convert {obj!r} to a DSL value")


def to_json(v: Value):
    if isinstance(v, tuple):
        return list(v)
    if v is FAIL:
        raise ValueError("FAIL has no JSON form")
    return v


# --------------------------------------------------------------------------- primitives


def _trunc_div(x: int, d: int) -> int:
    q = abs(x) // d
    return q if x >= 0 else -q


def _head(xs):
    return xs[0] if xs else FAIL


def _last(xs):
    return xs[-1] if xs else FAIL


def _take(n, xs):
    return xs[: max(n, 0)]


def _drop(n, xs):
    return xs[max(n, 0):]


def _access(n, xs):
    return xs[n] if 0 <= n < len(xs) else FAIL


def _minimum(xs):
    return min(xs) if xs else FAIL


def _maximum(xs):
    return max(xs) if xs else FAIL


def _reverse(xs):
    return xs[::-1]


def _sort(xs):
    return tuple(sorted(xs))


def _sum(xs):
    return sum(xs)


def _map(f, xs):
    return tuple(map(f, xs))


def _filter(p, xs):
    return tuple(x for x in xs if p(x))


def _count(p, xs):
    return sum(1 for x in xs if p(x))


def _zipwith(f, xs, ys):
    return tuple(map(f, xs, ys))


def _scanl1(f, xs):
    if not xs:
        return FAIL
    acc = xs[0]
    out = [acc]
    for x in xs[1:]:
        acc = f(acc, x)
        out.append(acc)
    return tuple(out)


@dataclass(frozen=True)
class Primitive:
    name: str
    arg_types: tuple
    ret: Ty
    impl: Callable = field(compare=False, repr=False)
    index: int = -1
    # May produce values larger than its inputs; checked against the eval bound.
    grows: bool = field(default=False, compare=False)

    @property
    def arity(self) -> int:
        return len(self.arg_types)

    @property
    def signature(self) -> Ty:
        return FuncTy(self.arg_types, self.ret) if self.arg_types else self.ret


L = LIST_INT
_CATALOG_SPEC = [
    # first-order list functions
    ("HEAD", (L,), INT, _head, False),
    ("LAST", (L,), INT, _last, False),
    ("TAKE", (INT, L), L, _take, False),
    ("DROP", (INT, L), L, _drop, False),
    ("ACCESS", (INT, L), INT, _access, False),
    ("MINIMUM", (L,), INT, _minimum, False),
    ("MAXIMUM", (L,), INT, _maximum, False),
    ("REVERSE", (L,), L, _reverse, False),
    ("SORT", (L,), L, _sort, False),
    ("SUM", (L,), INT, _sum, True),
    # higher-order list functions
    ("MAP", (INT_TO_INT, L), L, _map, True),
    ("FILTER", (INT_TO_BOOL, L), L, _filter, False),
    ("COUNT", (INT_TO_BOOL, L), INT, _count, False),
    ("ZIPWITH", (INT2_TO_INT, L, L), L, _zipwith, True),
    ("SCANL1", (INT2_TO_INT, L), L, _scanl1, True),
    # int -> int
    ("INC", (), INT_TO_INT, lambda x: x + 1, False),
    ("DEC", (), INT_TO_INT, lambda x: x - 1, False),
    ("MUL2", (), INT_TO_INT, lambda x: x * 2, False),
    ("DIV2", (), INT_TO_INT, lambda x: _trunc_div(x, 2), False),
    ("MUL3", (), INT_TO_INT, lambda x: x * 3, False),
    ("DIV3", (), INT_TO_INT, lambda x: _trunc_div(x, 3), False),
    ("MUL4", (), INT_TO_INT, lambda x: x * 4, False),
    ("DIV4", (), INT_TO_INT, lambda x: _trunc_div(x, 4), False),
    ("NEG", (), INT_TO_INT, lambda x: -x, False),
    ("SQR", (), INT_TO_INT, lambda x: x * x, False),
    # int -> bool
    ("isPOS", (), INT_TO_BOOL, lambda x: x > 0, False),
    ("isNEG", (), INT_TO_BOOL, lambda x: x < 0, False),
    ("isODD", (), INT_TO_BOOL, lambda x: x % 2 == 1, False),
    ("isEVEN", (), INT_TO_BOOL, lambda x: x % 2 == 0, False),
    # (int, int) -> int
    ("ADD", (), INT2_TO_INT, lambda x, y: x + y, False),
    ("SUB", (), INT2_TO_INT, lambda x, y: x - y, False),
    ("MUL", (), INT2_TO_INT, lambda x, y: x * y, False),
    ("MIN", (), INT2_TO_INT, lambda x, y: x if x < y else y, False),
    ("MAX", (), INT2_TO_INT, lambda x, y: x if x > y else y, False),
]
del L

# Input variables are productions too; the vocabulary reserves this many slots.
MAX_INPUTS = 3


@dataclass(frozen=True)
class Production:
    """A grammar choice at a hole: a primitive, or an input variable."""

    index: int
    name: str
    primitive: Primitive | None = None
    input_index: int | None = None

    @property
    def arg_types(self) -> tuple:
        return self.primitive.arg_types if self.primitive is not None else ()

    def ret(self, signature: Signature) -> Ty | None:
        if self.primitive is not None:
            return self.primitive.ret
        if self.input_index < len(signature):
            return signature[self.input_index]
        return None


class Catalog:
    """An ordered, name-unique set of primitives plus input-variable productions."""

    def __init__(self, name: str, primitives: Sequence[Primitive], max_inputs: int = MAX_INPUTS):
        self.name = name
        self.primitives = tuple(primitives)
        self.by_name = {p.name: p for p in self.primitives}
        if len(self.by_name) != len(self.primitives):
            raise ValueError("primitive names must be unique")
        for i, p in enumerate(self.primitives):
            if p.index != i:
                raise ValueError(f"{p.name} has catalog index {p.index}, expected {i}")
        self.max_inputs = max_inputs
        prods = [Production(p.index, p.name, primitive=p) for p in self.primitives]
        n = len(prods)
        prods += [Production(n + i, f"input{i}", input_index=i) for i in range(max_inputs)]
        self.productions = tuple(prods)
        self.production_index = {p.name: p.index for p in self.productions}

    def __len__(self) -> int:
        return len(self.primitives)

    @property
    def n_productions(self) -> int:
        return len(self.productions)

    def input_production(self, i: int) -> Production:
        return self.productions[len(self.primitives) + i]

    def production_of(self, term: "Term") -> Production:
        if isinstance(term, App):
            return self.productions[term.prim.index]
        if isinstance(term, Input):
            return self.input_production(term.index)
        raise TypeError("holes are not productions")

    def __repr__(self) -> str:
        return f"Catalog({self.name!r}, {len(self)} primitives)"


def _build_list_catalog() -> Catalog:
    prims = [
        Primitive(name, args, ret, impl, index=i, grows=grows)
        for i, (name, args, ret, impl, grows) in enumerate(_CATALOG_SPEC)
    ]
    return Catalog("list", prims)


LIST_CATALOG = _build_list_catalog()
CATALOGS = {"list": LIST_CATALOG}

# --------------------------------------------------------------------------- terms


class DSLError(ValueError):
    """Malformed program text or an ill-typed term."""

    def __init__(self, message: str, position: int | None = None):
        if position is not None:
            message = f"{message} (token {position})"
        super().__init__(message)
        self.position = position


class UnknownTokenError(DSLError):
    pass


class ArityError(DSLError):
    pass


class TypeMismatchError(DSLError):
    pass


class SerializationError(DSLError):
    pass


@dataclass(frozen=True)
class App:
    prim: Primitive
    children: tuple = ()

    def __post_init__(self):
        if len(self.children) != self.prim.arity:
            raise ArityError(f"{self.prim.name} takes {self.prim.arity} args, got {len(self.children)}")
        for want, child in zip(self.prim.arg_types, self.children):
            if child.ty != want:
                raise TypeMismatchError(f"{self.prim.name} expects {want!r}, got {child.ty!r}")

    @property
    def ty(self) -> Ty:
        return self.prim.ret

    def __str__(self) -> str:
        return print_program(self)


@dataclass(frozen=True)
class Input:
    index: int
    ty: Ty

    def __str__(self) -> str:
        return f"input{self.index}"


@dataclass(frozen=True)
class Hole:
    ty: Ty

    def __str__(self) -> str:
        return HOLE_TOKEN


Term = Union[App, Input, Hole]

HOLE_TOKEN = "<HOLE>"


def iter_nodes(term: Term) -> Iterator[Term]:
    """Preorder traversal."""
    stack = [term]
    while stack:
        node = stack.pop()
        yield node
        if isinstance(node, App):
            stack.extend(reversed(node.children))


def size(term: Term) -> int:
    return sum(1 for _ in iter_nodes(term))


def depth(term: Term) -> int:
    if isinstance(term, App) and term.children:
        return 1 + max(depth(c) for c in term.children)
    return 1


def holes(term: Term) -> list[Hole]:
    return [n for n in iter_nodes(term) if isinstance(n, Hole)]


def n_holes(term: Term) -> int:
    return sum(1 for n in iter_nodes(term) if isinstance(n, Hole))


def is_program(term: Term) -> bool:
    return n_holes(term) == 0


def program_length(term: Term) -> int:
    """Number of applications of non-lambda primitives (MAP, FILTER, HEAD, ...)."""
    return sum(1 for n in iter_nodes(term) if isinstance(n, App) and n.prim.arg_types)


def inputs_used(term: Term) -> set[int]:
    return {n.index for n in iter_nodes(term) if isinstance(n, Input)}


def check_term(term: Term, signature: Signature) -> None:
    """Raise DSLError unless every Input node agrees with ``signature``."""
    for node in iter_nodes(term):
        if isinstance(node, Input):
            if node.index >= len(signature):
                raise TypeMismatchError(f"input{node.index} is not declared")
            if node.ty != signature[node.index]:
                raise TypeMismatchError(
                    f"input{node.index} declared {signature[node.index]!r}, node has {node.ty!r}"
                )


# --------------------------------------------------------------------------- text format

_TOKEN_RE = re.compile(r"\(|\)|[^\s()]+")
_INPUT_RE = re.compile(r"input(\d+)$")


def print_program(term: Term) -> str:
    if isinstance(term, Hole):
        return HOLE_TOKEN
    if isinstance(term, Input):
        return f"input{term.index}"
    if not term.children:
        return term.prim.name
    return "(" + " ".join([term.prim.name] + [print_program(c) for c in term.children]) + ")"


def parse_program(
    text: str,
    catalog: Catalog = LIST_CATALOG,
    inputs: Signature = (),
    root_type: Ty | None = None,
) -> Term:
    """Parse prefix s-expression text into a type-checked term.

    ``root_type`` is only needed when the root is ``<HOLE>`` or when the caller
    wants the result type enforced.
    """
    tokens = _TOKEN_RE.findall(text)
    if not tokens:
        raise DSLError("empty program text")
    pos = 0

    def leaf(tok: str, i: int, want: Ty | None) -> Term:
        if tok == HOLE_TOKEN:
            if want is None:
                raise TypeMismatchError("cannot infer the type of <HOLE>", i)
            return Hole(want)
        m = _INPUT_RE.match(tok)
        if m:
            k = int(m.group(1))
            if k >= len(inputs):
                raise UnknownTokenError(f"undeclared input {tok}", i)
            node: Term = Input(k, inputs[k])
        elif tok in catalog.by_name:
            prim = catalog.by_name[tok]
            if prim.arity:
                raise ArityError(f"{tok} takes {prim.arity} args, got 0", i)
            node = App(prim)
        else:
            raise UnknownTokenError(f"unknown token {tok!r}", i)
        if want is not None and node.ty != want:
            raise TypeMismatchError(f"{tok} has type {node.ty!r}, expected {want!r}", i)
        return node

    def expr(want: Ty | None) -> Term:
        nonlocal pos
        if pos >= len(tokens):
            raise DSLError("unexpected end of input", pos)
        tok = tokens[pos]
        start = pos
        pos += 1
        if tok == ")":
            raise DSLError("unexpected ')'", start)
        if tok != "(":
            return leaf(tok, start, want)
        if pos >= len(tokens):
            raise DSLError("unexpected end of input", pos)
        head = tokens[pos]
        head_pos = pos
        pos += 1
        prim = catalog.by_name.get(head)
        if prim is None:
            raise UnknownTokenError(f"unknown function {head!r}", head_pos)
        if want is not None and prim.ret != want:
            raise TypeMismatchError(f"{head} returns {prim.ret!r}, expected {want!r}", head_pos)
        children = []
        while pos < len(tokens) and tokens[pos] != ")":
            k = len(children)
            if k >= prim.arity:
                raise ArityError(f"{head} takes {prim.arity} args, got more", pos)
            children.append(expr(prim.arg_types[k]))
        if pos >= len(tokens):
            raise DSLError("missing ')'", pos)
        if len(children) != prim.arity:
            raise ArityError(f"{head} takes {prim.arity} args, got {len(children)}", head_pos)
        pos += 1
        return App(prim, tuple(children))

    term = expr(root_type)
    if pos != len(tokens):
        raise DSLError("trailing tokens after program", pos)
    return term


# --------------------------------------------------------------------------- token format


def serialize_tokens(term: Term) -> list[str]:
    """Polish-notation token list; ``<HOLE>`` is a single token."""
    return [str(n) if not isinstance(n, App) else n.prim.name for n in iter_nodes(term)]


def deserialize_tokens(
    tokens: Sequence[str],
    root_type: Ty,
    signature: Signature,
    catalog: Catalog = LIST_CATALOG,
) -> Term:
    pos = 0

    def build(want: Ty) -> Term:
        nonlocal pos
        if pos >= len(tokens):
            raise SerializationError("sequence exhausted with open arity", pos)
        tok = tokens[pos]
        i = pos
        pos += 1
        if tok == HOLE_TOKEN:
            return Hole(want)
        m = _INPUT_RE.match(tok)
        if m:
            k = int(m.group(1))
            if k >= len(signature) or signature[k] != want:
                raise TypeMismatchError(f"{tok} cannot fill a {want!r} slot", i)
            return Input(k, signature[k])
        prim = catalog.by_name.get(tok)
        if prim is None:
            raise UnknownTokenError(f"unknown token {tok!r}", i)
        if prim.ret != want:
            raise TypeMismatchError(f"{tok} returns {prim.ret!r}, expected {want!r}", i)
        return App(prim, tuple(build(t) for t in prim.arg_types))

    term = build(root_type)
    if pos != len(tokens):
        raise SerializationError("tokens left over after a complete term", pos)
    return term


# --------------------------------------------------------------------------- interpreter

Compiled = Callable[[Sequence[Value]], Value]


def _in_bound(v, bound: int) -> bool:
    if isinstance(v, tuple):
        return not v or (max(v) <= bound and min(v) >= -bound)
    if isinstance(v, int):
        return -bound <= v <= bound
    return True


def compile_program(term: Term, bound: int = WIDE_BOUND) -> Compiled:
    """Turn a hole-free term into a closure over the input tuple.

    Any primitive result outside ``[-bound, bound]`` becomes FAIL.
    """
    if isinstance(term, Input):
        i = term.index
        return lambda env: env[i]
    if isinstance(term, Hole):
        raise TypeMismatchError("cannot evaluate a sketch with holes")
    prim = term.prim
    impl = prim.impl
    if not term.children:
        return lambda env: impl
    kids = [compile_program(c, bound) for c in term.children]
    check = prim.grows

    if len(kids) == 1:
        (a,) = kids

        def node(env):
            x = a(env)
            if x is FAIL:
                return FAIL
            r = impl(x)
            if check and r is not FAIL and not _in_bound(r, bound):
                return FAIL
            return r

    elif len(kids) == 2:
        a, b = kids

        def node(env):
            x = a(env)
            if x is FAIL:
                return FAIL
            y = b(env)
            if y is FAIL:
                return FAIL
            r = impl(x, y)
            if check and r is not FAIL and not _in_bound(r, bound):
                return FAIL
            return r

    else:

        def node(env):
            args = []
            for k in kids:
                v = k(env)
                if v is FAIL:
                    return FAIL
                args.append(v)
            r = impl(*args)
            if check and r is not FAIL and not _in_bound(r, bound):
                return FAIL
            return r

    return node


def evaluate(program: Term, inputs: Sequence[Value], bound: int = WIDE_BOUND) -> Value:
    """Run ``program`` on one input tuple. Domain violations give FAIL."""
    for node in iter_nodes(program):
        if isinstance(node, Input):
            if node.index >= len(inputs):
                raise TypeMismatchError(f"input{node.index} not supplied")
            if value_type(inputs[node.index]) != node.ty:
                raise TypeMismatchError(f"input{node.index} should be {node.ty!r}")
    return compile_program(program, bound)(tuple(inputs))


def behavioral_signature(
    program: Term, probes: Sequence[Sequence[Value]], bound: int = WIDE_BOUND
) -> tuple:
    run = compile_program(program, bound)
    return tuple(run(tuple(p)) for p in probes)
