#!/usr/bin/env python3
"""
mdm - desk-scale masked-diffusion multimodal engine

Command-line entry point: corpus generation, staged training, sampling,
evaluation, ablations and oracle checks. All outputs land under --out-dir.
"""

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Optional

from app.adapters.bundle import ModelBundle
from app.adapters.checkpoint import load_checkpoint
from app.adapters.vision import VisionStub
from app.core.config import AppConfig, load_config
from app.core.console import console, setup_logging
from app.core.conversation import AttentionMaskKind, ConversationExample, read_jsonl
from app.core.diffusion import RemaskStrategy
from app.core.errors import EngineError, ValidationError
from app.core.records import write_checks_csv, write_trace_csv
from app.core.stages import TrainStage
from app.engine.sampler import generate
from app.engine.trainer import run_pipeline
from app.harness.ablation import render_table, run_ablation
from app.harness.evaluation import evaluate, open_history
from app.harness.oracle_check import Suite, render_checks, run_suite
from app.harness.tasks import GridCaptionTask, Split, TruthPredictor, make_corpus, stage_corpus, write_corpus

logger = logging.getLogger("mdm")


class EngineApp:
    """Runs one CLI subcommand against a resolved configuration and output directory."""

    def __init__(self, config: AppConfig):
        self.config = config
        self.out_dir = Path(config.out_dir)
        self.task = GridCaptionTask.from_config(config.task)

    # -- shared pieces ----------------------------------------------------

    def fresh_bundle(self) -> ModelBundle:
        vision = VisionStub(self.task.n_cell_ids, self.task.height, self.task.width)
        return ModelBundle.initialize(self.config.model, self.task.vocab, vision, self.config.seed)

    def train_corpus(self, stage: TrainStage) -> list[ConversationExample]:
        cfg = self.config
        if cfg.train.corpus:
            return read_jsonl(Path(cfg.train.corpus))
        return stage_corpus(cfg.task, stage, cfg.task.train_size, cfg.seed, cfg.train.think_rate)

    def eval_corpus(self) -> list[ConversationExample]:
        cfg = self.config
        if cfg.eval.corpus:
            return read_jsonl(Path(cfg.eval.corpus))
        return make_corpus(self.task, cfg.task.eval_size, cfg.seed, Split.EVAL, cfg.task.eval_percent)

    def load_model(self, ckpt: Optional[str], truth: bool = False):
        if truth:
            return TruthPredictor.from_corpus(self.eval_corpus(), self.task.vocab.output_size)
        if not ckpt:
            raise ValidationError("a checkpoint is required (--ckpt), or --truth for the truth table")
        bundle, meta = load_checkpoint(Path(ckpt))
        logger.info("loaded %s (stage %s)", ckpt, meta.get("stage"))
        return bundle

    # -- commands ---------------------------------------------------------

    def make_data(self) -> int:
        cfg = self.config
        train = make_corpus(self.task, cfg.task.train_size, cfg.seed, Split.TRAIN, cfg.task.eval_percent)
        n_train = write_corpus(self.out_dir / "train.jsonl", train)
        n_eval = write_corpus(self.out_dir / "eval.jsonl", self.eval_corpus())
        logger.info("wrote %d train and %d eval %s examples to %s",
                    n_train, n_eval, self.task.family, self.out_dir)
        return 0

    def train(self, ckpt: Optional[str]) -> int:
        bundle = load_checkpoint(Path(ckpt))[0] if ckpt else self.fresh_bundle()
        results = run_pipeline(self.config.train, bundle, self.train_corpus, self.config.seed, self.out_dir)
        last = results[-1]
        if last.metrics:
            logger.info("finished %s with loss %.4f", last.stage.value, last.metrics[-1].loss)
        return 0

    def sample(self, args: argparse.Namespace) -> int:
        model = self.load_model(args.ckpt, args.truth)
        corpus = self.eval_corpus()
        if not 0 <= args.index < len(corpus):
            raise ValidationError(f"example index {args.index} is outside the eval corpus of {len(corpus)}")
        history, truth = open_history(corpus[args.index])

        sampler = self.config.sampler
        sampler = replace(
            sampler,
            gen_length=args.gen_length or int(truth.size),
            steps=args.steps or sampler.steps,
            strategy=RemaskStrategy(args.remask) if args.remask else sampler.strategy,
            attention=AttentionMaskKind(args.attn) if args.attn else sampler.attention,
            temperature=sampler.temperature if args.temperature is None else args.temperature,
        )
        response, trace = generate(model, history, sampler, stop_ids=self.task.vocab.stop_ids)

        trace_path = Path(args.trace) if args.trace else self.out_dir / "trace.csv"
        write_trace_csv(trace_path, trace)
        console.print(f"response: {response.tokens.tolist()}")
        console.print(f"truth:    {truth.tolist()}")
        logger.info("trace of %d steps written to %s", len(trace.steps), trace_path)
        return 0

    def evaluate(self, args: argparse.Namespace) -> int:
        cfg = self.config
        model = self.load_model(args.ckpt, args.truth)
        report = evaluate(model, self.eval_corpus(), cfg.sampler, cfg.eval, cfg.train, cfg.seed)
        path = self.out_dir / "eval.json"
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(report.to_json(), encoding="utf-8")
        logger.info("report written to %s", path)
        return 0

    def ablate(self) -> int:
        cfg = self.config
        report = run_ablation(cfg, self.fresh_bundle(), self.train_corpus(cfg.train.stage), self.eval_corpus())
        console.print(render_table(report))
        path = self.out_dir / "ablation.json"
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(report.to_json(), encoding="utf-8")
        logger.info("ablation report written to %s", path)
        return 0

    def oracle_check(self, suite: str, draws: int) -> int:
        suites = list(Suite) if suite == "all" else [Suite(suite)]
        results = [r for s in suites for r in run_suite(s, self.config.seed, draws)]
        console.print(render_checks(results))
        path = self.out_dir / f"checks_{suite}.csv"
        write_checks_csv(path, results)
        failed = [r for r in results if not r.passed]
        if failed:
            logger.error("%d of %d checks failed", len(failed), len(results))
            return 1
        logger.info("all %d checks passed; report in %s", len(results), path)
        return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mdm", description=__doc__.strip().splitlines()[0])
    parser.add_argument("--config", help="YAML or JSON configuration file")
    parser.add_argument("--seed", type=int, help="root seed")
    parser.add_argument("--out-dir", help="directory for every output file")
    parser.add_argument("--log-level", help="DEBUG, INFO, WARNING or ERROR")
    parser.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="dotted configuration override, e.g. train.steps=200")
    commands = parser.add_subparsers(dest="command", required=True)

    commands.add_parser("make-data", help="write train.jsonl and eval.jsonl")

    train = commands.add_parser("train", help="run the configured training stages")
    train.add_argument("--ckpt", help="start from this checkpoint instead of a fresh model")

    sample = commands.add_parser("sample", help="generate the response of one eval example")
    sample.add_argument("--ckpt")
    sample.add_argument("--truth", action="store_true", help="sample from the ground-truth table")
    sample.add_argument("--index", type=int, default=0, help="eval example to answer")
    sample.add_argument("--steps", type=int)
    sample.add_argument("--gen-length", type=int)
    sample.add_argument("--remask", choices=[s.value for s in RemaskStrategy])
    sample.add_argument("--attn", choices=[k.value for k in AttentionMaskKind])
    sample.add_argument("--temperature", type=float)
    sample.add_argument("--seed", dest="sample_seed", type=int, help="sampling seed")
    sample.add_argument("--trace", help="trace CSV path (default <out-dir>/trace.csv)")

    ev = commands.add_parser("eval", help="score generations on the eval corpus")
    ev.add_argument("--ckpt")
    ev.add_argument("--truth", action="store_true")

    commands.add_parser("ablate", help="compare attention regimes and remasking strategies")

    check = commands.add_parser("oracle-check", help="compare the engine with the exact oracles")
    check.add_argument("--suite", choices=[s.value for s in Suite] + ["all"], default="all")
    check.add_argument("--draws", type=int, default=100_000)
    return parser


def main(argv: Optional[list] = None) -> int:
    """Parse arguments, build the settings tree and dispatch; returns the exit code."""
    args = build_parser().parse_args(argv)

    overrides = list(args.overrides)
    for key, value in (("seed", args.seed), ("out_dir", args.out_dir), ("log_level", args.log_level)):
        if value is not None:
            overrides.append(f"{key}={value}")
    if getattr(args, "sample_seed", None) is not None:
        overrides.append(f"sampler.seed={args.sample_seed}")

    try:
        config = load_config(args.config, overrides)
        setup_logging(config.log_level)
        app = EngineApp(config)
        if args.command == "make-data":
            return app.make_data()
        if args.command == "train":
            return app.train(args.ckpt)
        if args.command == "sample":
            return app.sample(args)
        if args.command == "eval":
            return app.evaluate(args)
        if args.command == "ablate":
            return app.ablate()
        return app.oracle_check(args.suite, args.draws)
    except EngineError as e:
        setup_logging()
        logger.error("%s: %s", type(e).__name__, e)
        return 2


if __name__ == "__main__":
    try:
        sys.exit(main())
    except KeyboardInterrupt:
        sys.exit(130)
