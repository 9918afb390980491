"""Token vocabularies for programs/sketches and for input-output examples."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

from ..dsl import HOLE_TOKEN, LIST_CATALOG, SPEC_BOUND, Catalog, Value
from ..enumerator import Spec

PAD = "<PAD>"
START = "<START>"
END = "<END>"
LIST_START = "<LIST_START>"
LIST_END = "<LIST_END>"
IO_SEP = "<IO_SEP>"


class VocabError(ValueError):
    pass


@dataclass
class TokenVocab:
    catalog: Catalog = LIST_CATALOG
    program_tokens: list = field(init=False)
    spec_tokens: list = field(init=False)

    def __post_init__(self):
        self.program_tokens = [PAD, START, END, HOLE_TOKEN] + [p.name for p in self.catalog.productions]
        self.spec_tokens = [PAD, LIST_START, LIST_END, IO_SEP] + [
            str(i) for i in range(-SPEC_BOUND, SPEC_BOUND + 1)
        ]
        self.prog_id = {t: i for i, t in enumerate(self.program_tokens)}
        self.spec_id = {t: i for i, t in enumerate(self.spec_tokens)}
        if len(self.prog_id) != len(self.program_tokens) or len(self.spec_id) != len(self.spec_tokens):
            raise VocabError("duplicate tokens")
        # program-token id of each production (recognizer output order)
        self.production_token = [self.prog_id[p.name] for p in self.catalog.productions]

    @property
    def n_program(self) -> int:
        return len(self.program_tokens)

    @property
    def n_spec(self) -> int:
        return len(self.spec_tokens)

    @property
    def pad_id(self) -> int:
        return 0

    @property
    def start_id(self) -> int:
        return self.prog_id[START]

    @property
    def end_id(self) -> int:
        return self.prog_id[END]

    @property
    def hole_id(self) -> int:
        return self.prog_id[HOLE_TOKEN]

    def hash(self) -> str:
        blob = "\x00".join(self.program_tokens) + "\x01" + "\x00".join(self.spec_tokens)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def encode_program(self, tokens) -> list[int]:
        try:
            return [self.prog_id[t] for t in tokens]
        except KeyError as exc:
            raise VocabError(f"unknown program token {exc.args[0]!r}") from None

    def decode_program(self, ids) -> list[str]:
        return [self.program_tokens[i] for i in ids]

    def _value_tokens(self, v: Value) -> list[str]:
        if isinstance(v, tuple):
            return [LIST_START] + [self._int_token(x) for x in v] + [LIST_END]
        return [self._int_token(v)]

    def _int_token(self, x: int) -> str:
        if not -SPEC_BOUND <= x <= SPEC_BOUND:
            raise VocabError(f"integer {x} outside the example range")
        return str(x)

    def encode_example(self, inputs, output) -> list[int]:
        toks: list[str] = []
        for v in inputs:
            toks += self._value_tokens(v)
        toks.append(IO_SEP)
        toks += self._value_tokens(output)
        return [self.spec_id[t] for t in toks]

    def encode_spec(self, spec: Spec) -> list[list[int]]:
        return [self.encode_example(i, o) for i, o in spec.examples]
