"""Recognizer and generator training loops, plus the language-model corpus."""

from __future__ import annotations

import copy
import logging
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np
import torch

from ..dsl import LIST_CATALOG, Hole, serialize_tokens
from ..enumerator import uniform_weights
from ..neural.models import (
    GeneratorConfig,
    LMConfig,
    ProgramLM,
    Recognizer,
    RecognizerConfig,
    SketchGenerator,
)
from ..neural.ops import generator_nll, recognizer_loss, recognizer_predict_batch
from ..neural.syntax import DEFAULT_MAX_LEN
from ..neural.training import DEFAULT_LR, LMReport, grad_step, make_optimizer, train_lm
from ..neural.vocab import TokenVocab
from ..sketchcraft import DEFAULT_ALPHA, SketchRanking, SketchTable, TimeoutSampler
from .data import TrainTask

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    batch: int = 200
    recognizer_epochs: int = 50
    pretrain_epochs: int = 10
    sketch_epochs: int = 10
    lm_epochs: int = 5
    alpha: float = DEFAULT_ALPHA
    length: int = 3
    seed: int = 0
    lr: float = DEFAULT_LR
    max_len: int = DEFAULT_MAX_LEN
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    recognizer: RecognizerConfig = field(default_factory=RecognizerConfig)
    lm: LMConfig = field(default_factory=LMConfig)

    def __post_init__(self):
        if isinstance(self.generator, dict):
            self.generator = GeneratorConfig(**self.generator)
        if isinstance(self.recognizer, dict):
            self.recognizer = RecognizerConfig(**self.recognizer)
        if isinstance(self.lm, dict):
            self.lm = LMConfig(**self.lm)
        for name in ("batch", "length", "max_len"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        for name in ("recognizer_epochs", "pretrain_epochs", "sketch_epochs", "lm_epochs"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if not self.alpha > 0 or not self.lr > 0:
            raise ValueError("alpha and lr must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class EpochLog:
    phase: str
    epoch: int
    steps: int
    loss: float


LogFn = Callable[[EpochLog], None]


def _rankings(tasks: Sequence[TrainTask], thetas, catalog) -> list[SketchRanking]:
    return [
        SketchTable(t.program, catalog).ranking(th, t.spec.signature) for t, th in zip(tasks, thetas)
    ]


def _batches(rng: np.random.Generator, n: int, batch: int):
    perm = rng.permutation(n)
    for i in range(0, n, batch):
        yield perm[i : i + batch]


def _seeded(seed: int, salt: int) -> int:
    return int(np.random.SeedSequence([seed, salt]).generate_state(1)[0])


def train_recognizer(
    config: TrainConfig,
    tasks: Sequence[TrainTask],
    vocab: TokenVocab,
    model: Recognizer | None = None,
    on_epoch: LogFn | None = None,
    theta_base=None,
) -> tuple[Recognizer, list[EpochLog]]:
    """Fit r(spec, sketch) to maximise log p(program | theta, sketch).

    Sketches are chosen per draw from a sampled budget, using likelihoods under
    ``theta_base`` (uniform by default).
    """
    catalog = vocab.catalog
    torch.manual_seed(_seeded(config.seed, 1))
    model = model or Recognizer(vocab, config.recognizer)
    base = uniform_weights(catalog) if theta_base is None else theta_base
    rankings = _rankings(tasks, [base] * len(tasks), catalog)
    rng = np.random.default_rng(_seeded(config.seed, 2))
    sampler = TimeoutSampler(config.alpha, seed=_seeded(config.seed, 3))
    opt = make_optimizer(model, config.lr)
    logs = []
    steps = 0
    for epoch in range(config.recognizer_epochs):
        model.train()
        total, count = 0.0, 0
        for idx in _batches(rng, len(tasks), config.batch):
            specs = [tasks[i].spec for i in idx]
            programs = [tasks[i].program for i in idx]
            sketches = [rankings[i].select(sampler.sample()) for i in idx]
            loss = recognizer_loss(model, specs, sketches, programs).mean()
            total += grad_step(model, opt, loss) * len(idx)
            count += len(idx)
            steps += 1
        entry = EpochLog("recognizer", epoch, steps, total / max(count, 1))
        logs.append(entry)
        log.info("recognizer epoch %d loss %.4f", epoch, entry.loss)
        if on_epoch:
            on_epoch(entry)
    model.eval()
    return model, logs


def lm_corpus(config: TrainConfig, tasks: Sequence[TrainTask], catalog=LIST_CATALOG) -> list[list[str]]:
    """Full programs plus one budget-selected sketch per task (uniform weights)."""
    sampler = TimeoutSampler(config.alpha, seed=_seeded(config.seed, 4))
    base = uniform_weights(catalog)
    corpus = []
    for t in tasks:
        corpus.append(serialize_tokens(t.program))
        ranking = SketchTable(t.program, catalog).ranking(base, t.spec.signature)
        corpus.append(serialize_tokens(ranking.select(sampler.sample())))
    return corpus


def train_program_lm(config: TrainConfig, tasks: Sequence[TrainTask], vocab: TokenVocab) -> tuple[ProgramLM, LMReport]:
    torch.manual_seed(_seeded(config.seed, 5))
    lm = ProgramLM(vocab, config.lm)
    report = train_lm(
        lm, lm_corpus(config, tasks, vocab.catalog), epochs=config.lm_epochs, batch=config.batch,
        lr=config.lr, seed=_seeded(config.seed, 6),
    )
    lm.eval()
    return lm, report


@dataclass
class GeneratorRun:
    generator: SketchGenerator
    generator_only: SketchGenerator  # snapshot after full-program pretraining
    logs: list


def train_generator(
    config: TrainConfig,
    tasks: Sequence[TrainTask],
    vocab: TokenVocab,
    recognizer: Recognizer | None,
    lm: ProgramLM | None,
    on_epoch: LogFn | None = None,
    force_timeout: float | None = None,
) -> GeneratorRun:
    """Pretrain on full programs, then on budget-selected sketches.

    In the second phase theta comes from the recognizer on the root-hole
    sketch (uniform when no recognizer is given).
    """
    catalog = vocab.catalog
    torch.manual_seed(_seeded(config.seed, 7))
    gen = SketchGenerator(vocab, config.generator)
    rng = np.random.default_rng(_seeded(config.seed, 8))
    sampler = TimeoutSampler(config.alpha, seed=_seeded(config.seed, 9))
    opt = make_optimizer(gen, config.lr)
    logs: list[EpochLog] = []
    steps = 0

    def run_epoch(phase: str, epoch: int, pick) -> None:
        nonlocal steps
        gen.train()
        total, count = 0.0, 0
        for idx in _batches(rng, len(tasks), config.batch):
            specs = [tasks[i].spec for i in idx]
            sketches = [pick(i) for i in idx]
            loss = generator_nll(gen, lm, specs, sketches, max_len=config.max_len).mean()
            total += grad_step(gen, opt, loss) * len(idx)
            count += len(idx)
            steps += 1
        entry = EpochLog(phase, epoch, steps, total / max(count, 1))
        logs.append(entry)
        log.info("%s epoch %d loss %.4f", phase, epoch, entry.loss)
        if on_epoch:
            on_epoch(entry)

    for epoch in range(config.pretrain_epochs):
        run_epoch("pretrain", epoch, lambda i: tasks[i].program)
    snapshot = copy.deepcopy(gen).eval()

    if config.sketch_epochs:
        if recognizer is None:
            thetas = [uniform_weights(catalog)] * len(tasks)
        else:
            thetas = []
            for i in range(0, len(tasks), 1024):
                chunk = tasks[i : i + 1024]
                thetas.extend(recognizer_predict_batch(
                    recognizer, [t.spec for t in chunk], [Hole(t.spec.output_type) for t in chunk]
                ))
        rankings = _rankings(tasks, thetas, catalog)

        def pick(i):
            t = force_timeout if force_timeout is not None else sampler.sample()
            return rankings[i].select(t)

        for epoch in range(config.sketch_epochs):
            run_epoch("sketch", epoch, pick)
    gen.eval()
    return GeneratorRun(gen, snapshot, logs)
