"""Command-line entry points: gen-data, train, synth, eval, and run (all three in sequence)."""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from .dsl import CATALOGS, DSLError, parse_signature
from .driver import (
    GENERATOR_ONLY,
    METHODS,
    SKETCHADAPT,
    SYNTHESIZER_ONLY,
    EvalTask,
    Models,
    evaluate_suite,
    row_dicts,
    synthesize,
    synthesize_baseline_generator_only,
    synthesize_baseline_synth_only,
)
from .enumerator import Spec
from .neural.training import CheckpointError, load_checkpoint, save_checkpoint
from .neural.vocab import TokenVocab
from .trainpipe.data import (
    DEFAULT_SIGNATURES,
    LIST_LEN,
    ProbeRegistry,
    SamplingError,
    TaskSampler,
    dump_tasks,
    load_tasks,
)
from .trainpipe.training import (
    EpochLog,
    TrainConfig,
    train_generator,
    train_program_lm,
    train_recognizer,
)

log = logging.getLogger("sketchadapt")

EXIT_OK, EXIT_UNSOLVED, EXIT_USAGE, EXIT_DATA = 0, 1, 2, 3
THREADS_ENV = "SKETCHADAPT_THREADS"

CHECKPOINTS = {"recognizer": "recognizer.pt", "generator": "generator.pt",
               "generator_only": "generator_only.pt", "lm": "lm.pt"}


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


_DATA_KEYS = ("catalog", "signatures", "train_size", "train_length", "test_size", "test_lengths",
              "list_len", "data_seed")


@dataclass
class RunConfig:
    catalog: str = "list"
    signatures: list = field(default_factory=lambda: [[t.name for t in s] for s in DEFAULT_SIGNATURES])
    train_size: int = 20_000
    train_length: int = 3
    test_size: int = 100
    test_lengths: list = field(default_factory=lambda: [3, 4])
    list_len: list = field(default_factory=lambda: [LIST_LEN, LIST_LEN])
    data_seed: int = 0
    train: TrainConfig = field(default_factory=TrainConfig)
    beams: list = field(default_factory=lambda: [100])
    budgets: list = field(default_factory=lambda: [1, 10, 100, 1000, 10_000])
    methods: list = field(default_factory=lambda: list(METHODS))
    wall_timeout: float | None = None

    def __post_init__(self):
        if isinstance(self.train, dict):
            self.train = TrainConfig(**self.train)
        if self.catalog not in CATALOGS:
            raise UsageError(f"unknown catalog {self.catalog!r}")
        if self.train_size < 0 or self.test_size < 0:
            raise UsageError("sizes must be non-negative")
        if any(b < 0 for b in self.beams) or any(b < 0 for b in self.budgets):
            raise UsageError("beam widths and budgets must be non-negative")
        for m in self.methods:
            if m not in METHODS:
                raise UsageError(f"unknown method {m!r}")
        lo, hi = self.list_len
        if not 1 <= lo <= hi:
            raise UsageError("list_len must satisfy 1 <= lo <= hi")

    def to_dict(self) -> dict:
        return asdict(self)

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def _partial_hash(self, keep) -> str:
        d = self.to_dict()
        return hashlib.sha256(json.dumps({k: d[k] for k in keep}, sort_keys=True).encode()).hexdigest()[:16]

    def data_hash(self) -> str:
        return self._partial_hash(_DATA_KEYS)

    def train_hash(self) -> str:
        """Covers what determines the checkpoints, so eval settings can change without retraining."""
        return self._partial_hash(_DATA_KEYS + ("train",))

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            with open(path) as fh:
                return cls(**json.load(fh))
        except (OSError, json.JSONDecodeError, TypeError) as exc:
            raise UsageError(f"cannot read config {path}: {exc}") from None


# --------------------------------------------------------------------------- gen-data


def generate_corpora(cfg: RunConfig) -> dict:
    """{name: tasks} for the train split and one test split per length.

    Test sets are drawn first with one program per behaviour. Training
    programs need only be distinct, but every test behaviour is blocked.
    """
    catalog = CATALOGS[cfg.catalog]
    sigs = tuple(tuple(_parse_sig(s)) for s in cfg.signatures)
    seeds = np.random.SeedSequence(cfg.data_seed).spawn(1 + len(cfg.test_lengths))
    out = {}
    registries_by_len: dict = {}
    for n, ss in zip(cfg.test_lengths, seeds[1:]):
        regs = registries_by_len.setdefault(n, {})
        sampler = TaskSampler(n, np.random.default_rng(ss), sigs, catalog, tuple(cfg.list_len), regs)
        out[f"test_len{n}"] = sampler.take(cfg.test_size)
    train_regs = {}
    for regs in registries_by_len.values():
        for sig, reg in regs.items():
            if sig not in train_regs:
                train_regs[sig] = ProbeRegistry(sig, catalog, reg.probes, unique_behaviour=False)
            train_regs[sig].block(reg.seen)
    sampler = TaskSampler(
        cfg.train_length, np.random.default_rng(seeds[0]), sigs, catalog, tuple(cfg.list_len), train_regs,
        unique_behaviour=False,
    )
    out["train"] = sampler.take(cfg.train_size)
    return out


def _parse_sig(names):
    try:
        return parse_signature(names)
    except (DSLError, KeyError, ValueError) as exc:
        raise UsageError(f"bad signature {names!r}: {exc}") from None


def cmd_gen_data(cfg: RunConfig, out_dir: Path) -> dict:
    out_dir.mkdir(parents=True, exist_ok=True)
    try:
        corpora = generate_corpora(cfg)
    except SamplingError as exc:
        raise DataError(str(exc)) from None
    paths = {}
    for name, tasks in corpora.items():
        header = {"split": name, "config_hash": cfg.data_hash(), "seed": cfg.data_seed, "count": len(tasks)}
        path = out_dir / f"{name}.jsonl"
        dump_tasks(tasks, path, header)
        paths[name] = str(path)
    return paths


# --------------------------------------------------------------------------- train


def _write_log(path: Path, rows: list[EpochLog], cfg_hash: str, seed: int) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"# config_hash={cfg_hash} seed={seed}\n")
        w = csv.writer(fh)
        w.writerow(["phase", "epoch", "steps", "loss"])
        for r in rows:
            w.writerow([r.phase, r.epoch, r.steps, repr(float(r.loss))])


def cmd_train(cfg: RunConfig, corpus: Path, out_dir: Path, resume: bool = False) -> dict:
    """Train lm, recognizer and generator; phases with an existing checkpoint are skipped on resume."""
    try:
        header, tasks = load_tasks(corpus, CATALOGS[cfg.catalog])
    except (OSError, ValueError, KeyError) as exc:
        raise DataError(f"cannot read corpus {corpus}: {exc}") from None
    if not tasks:
        raise DataError(f"corpus {corpus} is empty")
    out_dir.mkdir(parents=True, exist_ok=True)
    vocab = TokenVocab(CATALOGS[cfg.catalog])
    tc = cfg.train
    h = cfg.train_hash()
    logs: list[EpochLog] = []
    extra = {"config_hash": h, "seed": tc.seed, "corpus_hash": header.get("config_hash")}

    def load_if(kind, name):
        path = out_dir / CHECKPOINTS[name]
        if not (resume and path.exists()):
            return None
        model, meta = load_checkpoint(path, vocab, kind)
        if meta.get("config_hash") != h:
            raise CheckpointError(f"{path} was trained under config {meta.get('config_hash')}, not {h}")
        logs.extend(EpochLog(**r) for r in meta.get("log", []))
        log.info("resumed %s from %s", name, path)
        return model

    lm = load_if("lm", "lm")
    if lm is None:
        lm, report = train_program_lm(tc, tasks, vocab)
        rows = [EpochLog("lm", i, 0, l) for i, l in enumerate(report.epoch_losses)]
        logs.extend(rows)
        save_checkpoint(out_dir / CHECKPOINTS["lm"], lm, "lm", {**extra, "log": [asdict(r) for r in rows],
                        "heldout_perplexity": [report.heldout_before, report.heldout_after]})
    rec = load_if("recognizer", "recognizer")
    if rec is None:
        rec, rows = train_recognizer(tc, tasks, vocab)
        logs.extend(rows)
        save_checkpoint(out_dir / CHECKPOINTS["recognizer"], rec, "recognizer",
                        {**extra, "log": [asdict(r) for r in rows]})
    gen = load_if("generator", "generator")
    gen_only = load_if("generator", "generator_only")
    if gen is None or gen_only is None:
        run = train_generator(tc, tasks, vocab, rec, lm)
        gen, gen_only = run.generator, run.generator_only
        logs.extend(run.logs)
        save_checkpoint(out_dir / CHECKPOINTS["generator"], gen, "generator",
                        {**extra, "log": [asdict(r) for r in run.logs]})
        save_checkpoint(out_dir / CHECKPOINTS["generator_only"], gen_only, "generator", extra)
    _write_log(out_dir / "train_log.csv", logs, h, tc.seed)
    with open(out_dir / "run_config.json", "w") as fh:
        json.dump({"config_hash": h, "config": cfg.to_dict()}, fh, indent=2, sort_keys=True)
    return {name: str(out_dir / f) for name, f in CHECKPOINTS.items()}


def load_models(ckpt_dir: Path, methods, catalog="list") -> Models:
    vocab = TokenVocab(CATALOGS[catalog])
    need = set()
    for m in methods:
        need |= {SKETCHADAPT: {"recognizer", "generator", "lm"}, GENERATOR_ONLY: {"generator_only", "lm"},
                 SYNTHESIZER_ONLY: {"recognizer"}}[m]
    models = Models()
    for name in sorted(need):
        path = ckpt_dir / CHECKPOINTS[name]
        if not path.exists():
            raise UsageError(f"missing checkpoint {path} (needed by {', '.join(methods)})")
        kind = "generator" if name.startswith("generator") else name
        model, _ = load_checkpoint(path, vocab, kind)
        setattr(models, name, model)
    return models


# --------------------------------------------------------------------------- synth


def _read_spec(task_path: str | None, inline: str | None) -> Spec:
    try:
        if task_path:
            with open(task_path) as fh:
                obj = json.load(fh)
        elif inline:
            obj = json.loads(inline)
        else:
            raise UsageError("give --task FILE or --spec JSON")
        return Spec.from_json(obj)
    except UsageError:
        raise
    except (OSError, json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise DataError(f"malformed task: {exc}") from None


def cmd_synth(ckpt_dir: Path | None, spec: Spec, method: str, beam: int, budget: int,
              wall_timeout: float | None) -> dict:
    """Without checkpoints, enumeration-only paths fall back to uniform weights."""
    if beam > 0 and method != SYNTHESIZER_ONLY:
        if ckpt_dir is None:
            raise UsageError(f"--checkpoints is required for {method} with beam > 0")
        models = load_models(ckpt_dir, [method])
    elif ckpt_dir is not None and method != GENERATOR_ONLY:
        models = load_models(ckpt_dir, [SYNTHESIZER_ONLY])
    else:
        models = Models()
    if method == SKETCHADAPT:
        res = synthesize(spec, models.generator, models.lm, models.recognizer, beam, budget, wall_timeout)
    elif method == GENERATOR_ONLY:
        res = synthesize_baseline_generator_only(spec, models.generator_only, models.lm, beam, budget)
    else:
        res = synthesize_baseline_synth_only(spec, models.recognizer, budget, wall_timeout)
    return res.to_json()


# --------------------------------------------------------------------------- eval


def cmd_eval(cfg: RunConfig, ckpt_dir: Path, test_paths: list[Path], out_dir: Path,
             limit: int | None = None, timing: bool = False) -> dict:
    models = load_models(ckpt_dir, cfg.methods, cfg.catalog)
    out_dir.mkdir(parents=True, exist_ok=True)
    h = cfg.hash()
    summary: dict = {"config_hash": h, "seed": cfg.train.seed, "suites": {}}
    for path in test_paths:
        try:
            _, tasks = load_tasks(path, CATALOGS[cfg.catalog])
        except (OSError, ValueError, KeyError) as exc:
            raise DataError(f"cannot read test corpus {path}: {exc}") from None
        if limit is not None:
            tasks = tasks[:limit]
        name = Path(path).stem
        etasks = [EvalTask(f"{name}:{i}", t.spec) for i, t in enumerate(tasks)]

        def progress(task, m, k, res):
            log.info("%s %s beam=%d solved=%s candidates=%d", task.task_id, m, k, res.solved, res.candidates)

        report = evaluate_suite(etasks, cfg.methods, models, cfg.beams, cfg.budgets, cfg.wall_timeout, progress)
        rows = row_dicts(report.rows, timing)
        csv_path = out_dir / f"eval_{name}.csv"
        with open(csv_path, "w", newline="") as fh:
            fh.write(f"# config_hash={h} seed={cfg.train.seed}\n")
            if rows:
                w = csv.DictWriter(fh, fieldnames=list(rows[0]))
                w.writeheader()
                w.writerows(rows)
        top = max(cfg.budgets) if cfg.budgets else 0
        summary["suites"][name] = {
            "tasks": len(tasks),
            "curves": {m: {str(b): c for b, c in beams.items()} for m, beams in report.curves().items()},
            "crosstab": {str(k): report.crosstab(top, k) for k in cfg.beams},
            "crosstab_budget": top,
            "csv": str(csv_path),
        }
    with open(out_dir / "eval_summary.json", "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
    return summary


def cmd_run(cfg: RunConfig, out: Path, resume: bool = False, limit: int | None = None) -> dict:
    """gen-data, train and eval under ``out``; wall seconds per stage go to run_timing.json."""
    timing = {"config_hash": cfg.hash()}
    t0 = time.monotonic()
    log.info("generating corpora")
    data = cmd_gen_data(cfg, out / "data")
    t1 = time.monotonic()
    cmd_train(cfg, Path(data["train"]), out / "checkpoints", resume)
    t2 = time.monotonic()
    tests = [Path(data[f"test_len{n}"]) for n in cfg.test_lengths]
    summary = cmd_eval(cfg, out / "checkpoints", tests, out / "eval", limit)
    t3 = time.monotonic()
    timing.update(gen_data=t1 - t0, train=t2 - t1, eval=t3 - t2, total=t3 - t0, resumed=resume)
    with open(out / "run_timing.json", "w") as fh:
        json.dump(timing, fh, indent=2, sort_keys=True)
    return summary


# --------------------------------------------------------------------------- argument parsing


def _int_list(text: str) -> list[int]:
    try:
        return [int(float(x)) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _config_from(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if getattr(args, "config", None) else RunConfig()
    d = cfg.to_dict()
    for key in ("train_size", "test_size", "data_seed", "beams", "budgets", "methods", "wall_timeout"):
        v = getattr(args, key, None)
        if v is not None:
            d[key] = v
    if getattr(args, "seed", None) is not None:
        d["train"]["seed"] = args.seed
    return RunConfig(**d)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sketchadapt", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="sample train/test corpora")
    g.add_argument("--config")
    g.add_argument("--out", required=True)
    g.add_argument("--train-size", dest="train_size", type=int)
    g.add_argument("--test-size", dest="test_size", type=int)
    g.add_argument("--data-seed", dest="data_seed", type=int)

    t = sub.add_parser("train", help="train the lm, recognizer and generators")
    t.add_argument("--config")
    t.add_argument("--data", required=True, help="train corpus (JSON lines)")
    t.add_argument("--out", required=True, help="checkpoint directory")
    t.add_argument("--seed", type=int)
    t.add_argument("--resume", action="store_true")

    s = sub.add_parser("synth", help="solve one task")
    s.add_argument("--checkpoints")
    s.add_argument("--task", help="task JSON file")
    s.add_argument("--spec", help="inline task JSON")
    s.add_argument("--method", choices=METHODS, default=SKETCHADAPT)
    s.add_argument("--beam", type=int, default=100)
    s.add_argument("--budget", type=int, default=10_000)
    s.add_argument("--timeout", type=float, help="wall-clock limit in seconds")

    e = sub.add_parser("eval", help="evaluate methods over test corpora")
    e.add_argument("--config")
    e.add_argument("--checkpoints", required=True)
    e.add_argument("--tests", nargs="+", required=True)
    e.add_argument("--out", required=True)
    e.add_argument("--beams", type=_int_list)
    e.add_argument("--budgets", type=_int_list)
    e.add_argument("--methods", type=lambda s: s.split(","))
    e.add_argument("--limit", type=int)
    e.add_argument("--timing", action="store_true", help="include wall milliseconds in the CSV")
    e.add_argument("--wall-timeout", dest="wall_timeout", type=float)

    r = sub.add_parser("run", help="gen-data, train and eval in one directory")
    r.add_argument("--config")
    r.add_argument("--out", required=True)
    r.add_argument("--resume", action="store_true")
    r.add_argument("--limit", type=int)
    return p


def _set_threads() -> None:
    n = os.environ.get(THREADS_ENV)
    torch.set_num_threads(int(n) if n else 1)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s", stream=sys.stderr)
    try:
        _set_threads()
        if args.command == "gen-data":
            cfg = _config_from(args)
            print(json.dumps(cmd_gen_data(cfg, Path(args.out)), indent=2))
        elif args.command == "train":
            cfg = _config_from(args)
            print(json.dumps(cmd_train(cfg, Path(args.data), Path(args.out), args.resume), indent=2))
        elif args.command == "synth":
            spec = _read_spec(args.task, args.spec)
            ckpt = Path(args.checkpoints) if args.checkpoints else None
            result = cmd_synth(ckpt, spec, args.method, args.beam, args.budget, args.timeout)
            print(result["program"] if result["solved"] else "UNSOLVED")
            print(json.dumps(result))
            return EXIT_OK if result["solved"] else EXIT_UNSOLVED
        elif args.command == "eval":
            cfg = _config_from(args)
            summary = cmd_eval(cfg, Path(args.checkpoints), [Path(t) for t in args.tests], Path(args.out),
                               args.limit, args.timing)
            print(json.dumps(summary, indent=2))
        elif args.command == "run":
            cfg = _config_from(args)
            print(json.dumps(cmd_run(cfg, Path(args.out), args.resume, args.limit), indent=2))
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, CheckpointError, DSLError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
