"""Command-line entry point: ``pianogan {synth-data,train,generate,evaluate,gradcheck}``.

Settings come from a flat ``key=value`` config file (``--config``) with flag
overrides on top; a flag always wins. Every output directory receives the
resolved ``config.txt`` and a ``version.txt``.

Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import contextlib
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .checkpoint import load_checkpoint
from .config import STRATEGIES, RunConfig
from .dataset import read_samples, write_samples
from .errors import ConfigurationError, DomainError, FormatError, PianoganError
from .evaluation import BinarizationStrategy, emit_report, evaluate_model, format_table
from .pianoroll import write_pgm
from .synth import corpus_array, synth_corpus
from .training import RESUMABLE_KEYS, Trainer, resolve_resolution, trainer_from_checkpoint

log = logging.getLogger("pianogan")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2
TRAINING_DATA_LABEL = "training_data"
_GENERATE_STREAM = 2000
# strategy column for inputs that were already binary when written
_STRATEGY_LABELS = {"ht": "HT", "bs": "BS", "refiner": "refiner", "none": "none"}


class UsageError(Exception):
    """Bad command-line usage; maps to exit code 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


# -- config plumbing ------------------------------------------------------------------------
def _overrides(args, mapping: dict[str, str]) -> dict:
    values = {}
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        values[key.strip()] = value.strip()
    for flag, key in mapping.items():
        value = getattr(args, flag, None)
        if value is not None:
            values[key] = value
    return values


def _config(args, mapping: dict[str, str]) -> RunConfig:
    base = RunConfig.from_file(args.config) if getattr(args, "config", None) else RunConfig()
    return RunConfig.from_mapping(_overrides(args, mapping), base)


def _prepare_out(out, cfg: RunConfig) -> Path:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(cfg.to_text())
    (out / "version.txt").write_text(f"{__version__}\n")
    return out


@contextlib.contextmanager
def _determinism(cfg: RunConfig):
    """Pin BLAS to one thread so reductions run in a fixed order."""
    if not cfg.deterministic:
        yield
        return
    from threadpoolctl import threadpool_limits

    with threadpool_limits(limits=1):
        yield


def _training_data(cfg: RunConfig) -> np.ndarray:
    res = resolve_resolution(cfg)
    if cfg.corpus == "synth":
        return corpus_array(synth_corpus(cfg.synth_seed, cfg.synth_samples, res))
    values, found, flags, _ = read_samples(cfg.corpus)
    if len(flags) == 0:
        raise ConfigurationError(f"corpus {cfg.corpus} holds no samples")
    if not flags.all():
        raise ConfigurationError(f"corpus {cfg.corpus} contains real-valued rolls")
    if found.shape != res.shape:
        raise ConfigurationError(f"corpus rolls have shape {found.shape}, the run expects {res.shape}")
    return values


# -- commands ---------------------------------------------------------------------------------
def cmd_synth_data(args) -> int:
    cfg = _config(args, {"seed": "synth_seed", "n": "synth_samples", "out": "out"})
    if args.n is not None and args.n < 1:
        raise UsageError("--n must be at least 1")
    res = resolve_resolution(cfg)
    rolls = synth_corpus(cfg.synth_seed, cfg.synth_samples, res)
    out = _prepare_out(cfg.out, cfg)
    write_samples(corpus_array(rolls), res, out, TRAINING_DATA_LABEL, cfg.synth_seed)
    print(f"wrote {len(rolls)} samples to {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    mapping = {"seed": "seed", "strategy": "strategy", "bn": "bn", "out": "out"}
    if args.resume:
        overrides = _overrides(args, mapping)
        bad = sorted(set(k.replace("-", "_") for k in overrides) - RESUMABLE_KEYS)
        if bad:
            raise UsageError(f"cannot change {bad} when resuming")
        _, meta = load_checkpoint(args.resume)
        cfg = RunConfig.from_mapping(overrides, RunConfig.from_mapping(meta["config"]))
        with _determinism(cfg):
            trainer = Trainer(cfg, _training_data(cfg), cfg.out)
            trainer.load(args.resume)
    else:
        cfg = _config(args, mapping)
        with _determinism(cfg):
            trainer = Trainer(cfg, _training_data(cfg), cfg.out)
    out = _prepare_out(cfg.out, cfg)
    with _determinism(cfg):
        trainer.run()
    trainer.trace.write(out / "trace.csv")
    print(f"trained {cfg.strategy}/{cfg.bn} to step {trainer.state.step}; outputs in {out}")
    return EXIT_OK


def cmd_generate(args) -> int:
    if not args.checkpoint:
        raise UsageError("generate needs --checkpoint")
    overrides = _overrides(args, {"out": "out"})
    trainer = trainer_from_checkpoint(args.checkpoint, **overrides)
    if args.binarize == "refiner" and not trainer.refiner_trained:
        raise UsageError("--binarize refiner needs a checkpoint with a trained refiner")
    seed = args.seed if args.seed is not None else trainer.cfg.seed
    cfg = trainer.cfg.replace(seed=seed)
    if args.n < 1:
        raise UsageError("--n must be at least 1")
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, _GENERATE_STREAM])))
    with _determinism(cfg):
        values = trainer.sample(args.n, args.binarize, rng)
    out = _prepare_out(cfg.out, cfg)
    write_samples(values, trainer.res, out, _model_label(trainer, args.binarize), seed,
                  {"binarize": args.binarize, "checkpoint": str(args.checkpoint), "step": trainer.state.step})
    if args.images:
        for i, v in enumerate(values):
            write_pgm(v, out / f"sample_{i:05d}.pgm")
    print(f"wrote {args.n} samples ({args.binarize}) to {out}")
    return EXIT_OK


def _model_label(trainer: Trainer, binarize: str) -> str:
    """``dbn``/``sbn`` for binary-neuron outputs, ``pretrained`` for the bare generator."""
    if binarize == "refiner" or trainer.preset.bn_in_generator_output:
        return trainer.cfg.bn
    return "pretrained"


def cmd_evaluate(args) -> int:
    if not args.inputs:
        raise UsageError("evaluate needs at least one input directory or file")
    labels = args.labels.split(",") if args.labels else [None] * len(args.inputs)
    if len(labels) != len(args.inputs):
        raise UsageError(f"{len(labels)} labels for {len(args.inputs)} inputs")
    pair = tuple(p.strip() for p in args.pair.split(",")) if args.pair else ("Piano", "Guitar")
    if len(pair) != 2:
        raise UsageError("--pair expects two track names separated by a comma")
    eval_rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([args.seed or 0, _GENERATE_STREAM + 1])))
    reports = []
    for path, label in zip(args.inputs, labels):
        values, res, flags, manifest = read_samples(path)
        if len(flags) == 0:
            raise UsageError(f"{path} holds no samples")
        strategy = None
        if not flags.all():
            if args.binarize is None:
                kind = "mixed binary and real-valued" if flags.any() else "real-valued"
                raise UsageError(f"{path} holds {kind} rolls; choose --binarize ht or bs")
            strategy = BinarizationStrategy(args.binarize, rng=eval_rng)
        model = label or manifest.get("label") or Path(path).name
        report = evaluate_model(values, res, len(values), strategy, pair=pair, model=model,
                                strategy_label=None if strategy else _STRATEGY_LABELS.get(manifest.get("binarize"), "none"))
        reports.append(report)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "version.txt").write_text(f"{__version__}\n")
    settings = {"seed": args.seed or 0, "inputs": ",".join(map(str, args.inputs)), "labels": args.labels or "",
                "binarize": args.binarize or "", "pair": ",".join(pair)}
    (out / "config.txt").write_text("".join(f"{k}={v}\n" for k, v in settings.items()))
    emit_report(reports, out / "report.csv", "csv")
    emit_report(reports, out / "report.txt", "text_table")
    print(format_table(reports), end="")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .gradsuite import all_checks, format_entry, run_suite

    seeds = tuple(range(args.seeds))
    if not seeds:
        raise UsageError("--seeds must be at least 1")
    unknown = sorted(set(args.only or ()) - set(all_checks()))
    if unknown:
        raise UsageError(f"unknown checks: {', '.join(unknown)}")
    from threadpoolctl import threadpool_limits

    with threadpool_limits(limits=1):
        entries = run_suite(seeds, args.only or None)
    for e in entries:
        print(format_entry(e))
    failed = [e.name for e in entries if not e.passed]
    print(f"{len(entries) - len(failed)}/{len(entries)} checks passed")
    return EXIT_OK if not failed else EXIT_RUNTIME


# -- parser -----------------------------------------------------------------------------------
def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="pianogan", description="Binary-neuron GAN for multi-track piano-rolls.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, out_default=None):
        p.add_argument("--config", help="key=value config file")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", default=out_default, help="output directory")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")

    p = sub.add_parser("synth-data", help="write a synthetic training corpus")
    common(p)
    p.add_argument("--n", type=int, help="number of samples")
    p.set_defaults(func=cmd_synth_data)

    p = sub.add_parser("train", help="train with one of the strategies")
    common(p)
    p.add_argument("--strategy", choices=STRATEGIES)
    p.add_argument("--bn", choices=("dbn", "sbn"))
    p.add_argument("--resume", metavar="CHECKPOINT", help="continue a run from a checkpoint")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("generate", help="sample piano-rolls from a checkpoint")
    common(p, out_default="samples")
    p.add_argument("--checkpoint", help="checkpoint written by train")
    p.add_argument("--n", type=int, default=16)
    p.add_argument("--binarize", choices=("none", "ht", "bs", "refiner"), default="ht")
    p.add_argument("--images", action="store_true", help="also write one PGM image per sample")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("evaluate", help="score sample directories with QN, PP and TD")
    p.add_argument("inputs", nargs="*", help="sample directories or .bpr files")
    p.add_argument("--labels", help="comma-separated model labels, one per input")
    p.add_argument("--binarize", choices=("ht", "bs"), help="strategy for real-valued inputs")
    p.add_argument("--pair", help="two track names for tonal distance, e.g. Piano,Guitar")
    p.add_argument("--seed", type=int, help="seed for Bernoulli sampling")
    p.add_argument("--out", default="report")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("gradcheck", help="finite-difference check of every op and network")
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--only", nargs="*", help="run only these checks")
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"pianogan: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help and --version
        return int(exc.code or 0)
    if args.verbose:
        logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigurationError, FormatError, DomainError) as exc:
        print(f"pianogan: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (PianoganError, OSError) as exc:
        print(f"pianogan: failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
