"""Type-driven syntax mask for decoding sketches in Polish notation.

The decoder state is the stack of still-open argument slots (leftmost first).
A token is allowed when it can fill the leftmost slot and the resulting term
can still be closed within the length limit (every open slot needs at least
one more token, e.g. ``<HOLE>``).
"""

from __future__ import annotations

from typing import Sequence

import torch

from ..dsl import Signature, Ty
from .vocab import TokenVocab

DEFAULT_MAX_LEN = 20


class MaskedTokenError(ValueError):
    """Token not allowed after this prefix."""


class SyntaxMask:
    def __init__(self, vocab: TokenVocab, max_len: int = DEFAULT_MAX_LEN):
        self.vocab = vocab
        self.max_len = max_len
        self._cache: dict = {}
        # token id -> (arg types, return type or None for inputs/HOLE)
        self._shape: dict[int, tuple] = {}
        for p in vocab.catalog.primitives:
            self._shape[vocab.prog_id[p.name]] = (p.arg_types, p.ret)

    def token_fills(self, tok: int, ty: Ty, signature: Signature) -> tuple | None:
        """Argument types introduced when ``tok`` fills a ``ty`` slot; None if it cannot."""
        if tok == self.vocab.hole_id:
            return ()
        shape = self._shape.get(tok)
        if shape is not None:
            return shape[0] if shape[1] == ty else None
        name = self.vocab.program_tokens[tok]
        if name.startswith("input"):
            k = int(name[5:])
            return () if k < len(signature) and signature[k] == ty else None
        return None

    def allowed(self, pending: tuple, used: int, signature: Signature) -> torch.Tensor:
        """Boolean mask over program tokens for a state with ``used`` tokens emitted."""
        if not pending:
            raise MaskedTokenError("prefix is already a complete term")
        key = (pending[0], len(pending), used, signature)
        m = self._cache.get(key)
        if m is None:
            ty, n = pending[0], len(pending)
            m = torch.zeros(self.vocab.n_program, dtype=torch.bool)
            for tok in range(self.vocab.n_program):
                args = self.token_fills(tok, ty, signature)
                if args is None:
                    continue
                # this token, then at least one token per open slot
                if used + 1 + (n - 1 + len(args)) <= self.max_len:
                    m[tok] = True
            self._cache[key] = m
        return m

    def advance(self, pending: tuple, tok: int, signature: Signature) -> tuple:
        if not pending:
            raise MaskedTokenError("prefix is already a complete term")
        args = self.token_fills(tok, pending[0], signature)
        if args is None:
            raise MaskedTokenError(
                f"{self.vocab.program_tokens[tok]} cannot fill a {pending[0]!r} slot"
            )
        return tuple(args) + pending[1:]

    def masks_for(self, ids: Sequence[int], root: Ty, signature: Signature) -> torch.Tensor:
        """Masks before each token of a complete sequence: [len(ids), vocab]."""
        pending: tuple = (root,)
        rows = []
        for used, tok in enumerate(ids):
            m = self.allowed(pending, used, signature)
            if not m[tok]:
                raise MaskedTokenError(f"token {self.vocab.program_tokens[tok]} is masked at position {used}")
            rows.append(m)
            pending = self.advance(pending, tok, signature)
        if pending:
            raise MaskedTokenError("sequence ends with open slots")
        return torch.stack(rows) if rows else torch.zeros(0, self.vocab.n_program, dtype=torch.bool)

