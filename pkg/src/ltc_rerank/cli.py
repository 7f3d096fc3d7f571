"""Command-line entry point: `ltc-rerank <subcommand> [flags]`.

Exit codes: 0 success, 1 usage or configuration error, 2 data/format or I/O error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import sys
from collections.abc import Sequence

from ultralytics.utils import LOGGER

from ltc_rerank.bench import compare_throughput, sweep_grid
from ltc_rerank.constants import (
    DEFAULT_DEPTH,
    DEFAULT_RATES,
    DEFAULT_RUN_TAG,
    DEFAULT_STEP,
    DEFAULT_WINDOW,
    LTC_COLORSTR,
    PASSAGE_MAX_TOKENS,
)
from ltc_rerank.engine import LtcConfig, ModelConfig, RerankerTransformer, load_checkpoint, save_checkpoint
from ltc_rerank.exceptions import (
    ArgumentError,
    ConfigurationError,
    DataFormatError,
    DivergenceError,
    InputError,
    SweepCellError,
)
from ltc_rerank.listwise import ListwiseReranker
from ltc_rerank.pointwise import PointwiseReranker, TrainConfig, finite_diff_check, train
from ltc_rerank.settings import Settings
from ltc_rerank.utils import (
    compare_runs,
    evaluate_run,
    load_corpus,
    load_qrels,
    load_queries,
    load_run,
    synth_task_gen,
    write_report,
    write_run,
    write_synthetic_collection,
)
from ltc_rerank.utils.trec import entries_from_candidates

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


class UsageError(Exception):
    """Bad command-line usage."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def rate_type(value: str) -> float:
    try:
        rate = float(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid rate '{value}', expected a number in (0, 1]") from None
    if not 0.0 < rate <= 1.0:
        raise argparse.ArgumentTypeError(f"invalid rate {value}, must be in the interval (0, 1]")
    return rate


def _ltc_from_args(args: argparse.Namespace) -> LtcConfig:
    if args.layer is None:
        if args.rate < 1.0:
            raise UsageError(f"--rate {args.rate} needs --layer to say where compression starts")
        return LtcConfig.disabled()
    return LtcConfig(args.layer, args.rate)


def _settings_from_args(args: argparse.Namespace) -> Settings:
    settings = Settings.from_env()
    if getattr(args, "threads", None) is not None:
        settings.num_threads = args.threads
    settings.verify()
    return settings


def _model_config_from_args(args: argparse.Namespace) -> ModelConfig:
    return ModelConfig(
        num_layers=args.num_layers,
        hidden=args.hidden,
        num_heads=args.heads,
        mlp_dim=args.mlp_dim,
        vocab_size=args.vocab_size,
        max_seq=args.max_seq,
    )


def _model_from_args(args: argparse.Namespace) -> RerankerTransformer:
    if args.checkpoint:
        return load_checkpoint(args.checkpoint)
    return RerankerTransformer(_model_config_from_args(args), args.seed)


def _add_ltc_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--layer", type=int, default=None, help="First layer to run on the compressed sequence")
    parser.add_argument("--rate", type=rate_type, default=1.0, help="Fraction of tokens retained, in (0, 1]")


def _add_model_flags(parser: argparse.ArgumentParser, **defaults) -> None:
    config = ModelConfig(**defaults)
    parser.add_argument("--num-layers", type=int, default=config.num_layers)
    parser.add_argument("--hidden", type=int, default=config.hidden)
    parser.add_argument("--heads", type=int, default=config.num_heads)
    parser.add_argument("--mlp-dim", type=int, default=config.mlp_dim)
    parser.add_argument("--vocab-size", type=int, default=config.vocab_size)
    parser.add_argument("--max-seq", type=int, default=config.max_seq)


def _add_collection_flags(parser: argparse.ArgumentParser, qrels: bool = False) -> None:
    parser.add_argument("--checkpoint", required=True, help="Model checkpoint written by 'train'")
    parser.add_argument("--corpus", required=True, help="JSON-lines corpus")
    parser.add_argument("--queries", required=True, help="Tab-separated queries")
    parser.add_argument("--run", required=True, help="First-stage TREC run")
    if qrels:
        parser.add_argument("--qrels", required=True, help="TREC qrels")
    parser.add_argument("--depth", type=int, default=DEFAULT_DEPTH, help="Candidates reranked per query")
    parser.add_argument("--max-doc-tokens", type=int, default=PASSAGE_MAX_TOKENS, help="Document truncation")
    parser.add_argument("--threads", type=int, default=None, help="Worker threads (default: LTC_NUM_THREADS or 1)")


def _add_window_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--window", type=int, default=DEFAULT_WINDOW, help="Documents per listwise prompt")
    parser.add_argument("--step", type=int, default=DEFAULT_STEP, help="Window stride")


def cmd_train(args: argparse.Namespace) -> int:
    train_cfg = TrainConfig(
        epochs=args.epochs,
        batch_size=args.batch_size,
        learning_rate=args.lr,
        num_negatives=args.negatives,
        ltc=_ltc_from_args(args),
        seed=args.seed,
        num_train=args.num_train,
        num_heldout=args.num_heldout,
        doc_len=args.doc_len,
    )
    model, history = train(train_cfg, _model_config_from_args(args), _settings_from_args(args), args.log)
    save_checkpoint(model, args.output)
    LOGGER.info(f"{LTC_COLORSTR}Final held-out pairwise accuracy: {history[-1].heldout_acc:.3f}")
    return EXIT_OK


def cmd_gradcheck(args: argparse.Namespace) -> int:
    ltc = _ltc_from_args(args)
    model = _model_from_args(args)
    cfg = model.config
    example = synth_task_gen(
        args.seed, 1, args.doc_len, vocab_size=cfg.vocab_size, num_identifiers=cfg.num_identifiers
    )[0]
    result = finite_diff_check(model, example, ltc, epsilon=args.epsilon, seed=args.seed)
    LOGGER.info(
        f"{LTC_COLORSTR}Checked {result.num_checked} gradient entries with {ltc}: "
        f"max relative error {result.max_rel_error:.3e} (worst: {result.worst_parameter})"
    )
    if not result.passed:
        LOGGER.error(f"{LTC_COLORSTR}Gradient check failed.")
        return EXIT_NUMERIC
    return EXIT_OK


def cmd_synth(args: argparse.Namespace) -> int:
    write_synthetic_collection(args.output_dir, args.seed, args.num_queries, args.num_candidates, args.doc_len)
    return EXIT_OK


def _rerank(args: argparse.Namespace, listwise: bool) -> int:
    ltc = _ltc_from_args(args)
    settings = _settings_from_args(args)
    model = load_checkpoint(args.checkpoint)
    corpus, queries, run = load_corpus(args.corpus), load_queries(args.queries), load_run(args.run)
    if listwise:
        reranker = ListwiseReranker(model, corpus, ltc, args.max_doc_tokens, args.window, args.step, args.tag)
    else:
        reranker = PointwiseReranker(model, corpus, ltc, args.max_doc_tokens, args.tag)

    reranked = reranker.rerank_run(queries, run, args.depth, settings.num_threads, settings.progress)
    write_run([entry for entries in reranked.values() for entry in entries], args.output)
    LOGGER.info(f"{LTC_COLORSTR}Wrote reranked run for {len(reranked)} queries to {args.output}")
    return EXIT_OK


def cmd_rerank(args: argparse.Namespace) -> int:
    return _rerank(args, listwise=False)


def cmd_listwise_rerank(args: argparse.Namespace) -> int:
    return _rerank(args, listwise=True)


def _load_run_entries(path: str):
    return {q: entries_from_candidates(q, candidates) for q, candidates in load_run(path).items()}


def cmd_eval(args: argparse.Namespace) -> int:
    qrels = load_qrels(args.qrels)
    report = evaluate_run(_load_run_entries(args.run), qrels)
    LOGGER.info(f"{LTC_COLORSTR}nDCG@10 = {report.mean:.4f} over {report.num_queries} queries")
    if args.output:
        write_report(report, args.output)

    if args.baseline:
        baseline = evaluate_run(_load_run_entries(args.baseline), qrels)
        result = compare_runs(baseline, report)
        LOGGER.info(
            f"{LTC_COLORSTR}vs baseline {baseline.mean:.4f}: delta={result.mean_delta:+.4f} "
            f"t={result.t_statistic:.4f} p={result.p_value:.4f}{' (significant)' if result.significant else ''}"
        )
    return EXIT_OK


def cmd_sweep(args: argparse.Namespace) -> int:
    settings = _settings_from_args(args)
    model = load_checkpoint(args.checkpoint)
    corpus, queries, run = load_corpus(args.corpus), load_queries(args.queries), load_run(args.run)
    qrels = load_qrels(args.qrels)
    if args.listwise:
        reranker = ListwiseReranker(model, corpus, None, args.max_doc_tokens, args.window, args.step)
    else:
        reranker = PointwiseReranker(model, corpus, None, args.max_doc_tokens)

    sweep_grid(
        reranker,
        queries,
        run,
        qrels,
        rates=args.rates,
        layers=args.layers,
        depth=args.depth,
        output_path=args.output,
        warmup=args.warmup,
        repeats=args.repeats,
        include_total_cost=args.total_cost,
        settings=settings,
    )
    return EXIT_OK


def cmd_bench(args: argparse.Namespace) -> int:
    model = _model_from_args(args)
    ltc = LtcConfig(args.layer, args.rate)
    result = compare_throughput(
        model, ltc, args.doc_len, args.num_queries, args.num_candidates, args.warmup, args.repeats, args.seed
    )
    LOGGER.info(
        f"{LTC_COLORSTR}{ltc} on {result.prompt_length}-token inputs: "
        f"baseline {result.baseline.qps:.2f} QPS, compressed {result.compressed.qps:.2f} QPS, "
        f"measured {result.measured_ratio:.2f}x, predicted {result.predicted_attn_ratio:.2f}x (attention) "
        f"/ {result.predicted_total_ratio:.2f}x (all FLOPs)"
    )
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ltc-rerank", description="Layer-wise token compression for transformer rerankers")
    subparsers = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = subparsers.add_parser("train", help="Train a pointwise reranker on the synthetic task")
    p.add_argument("--output", required=True, help="Checkpoint path")
    p.add_argument("--log", default=None, help="Per-epoch TSV log path")
    p.add_argument("--epochs", type=int, default=TrainConfig.epochs)
    p.add_argument("--batch-size", type=int, default=TrainConfig.batch_size)
    p.add_argument("--lr", type=float, default=TrainConfig.learning_rate)
    p.add_argument("--negatives", type=int, default=TrainConfig.num_negatives)
    p.add_argument("--num-train", type=int, default=TrainConfig.num_train)
    p.add_argument("--num-heldout", type=int, default=TrainConfig.num_heldout)
    p.add_argument("--doc-len", type=int, default=TrainConfig.doc_len)
    p.add_argument("--seed", type=int, default=0)
    _add_ltc_flags(p)
    _add_model_flags(p)
    p.set_defaults(func=cmd_train)

    p = subparsers.add_parser("gradcheck", help="Compare analytic and finite-difference gradients")
    p.add_argument("--checkpoint", default=None, help="Check a trained model instead of a fresh tiny one")
    p.add_argument("--epsilon", type=float, default=1e-5)
    p.add_argument("--doc-len", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    _add_ltc_flags(p)
    _add_model_flags(p, num_layers=2, hidden=8, num_heads=2, mlp_dim=16)
    p.set_defaults(func=cmd_gradcheck)

    p = subparsers.add_parser("synth", help="Write a synthetic corpus, queries, run and qrels")
    p.add_argument("--output-dir", required=True)
    p.add_argument("--num-queries", type=int, default=20)
    p.add_argument("--num-candidates", type=int, default=30)
    p.add_argument("--doc-len", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    for name, func, listwise in (
        ("rerank", cmd_rerank, False),
        ("listwise-rerank", cmd_listwise_rerank, True),
    ):
        p = subparsers.add_parser(name, help=f"{'Listwise' if listwise else 'Pointwise'} reranking of a run")
        _add_collection_flags(p)
        p.add_argument("--output", required=True, help="Reranked TREC run path")
        p.add_argument("--tag", default=DEFAULT_RUN_TAG)
        _add_ltc_flags(p)
        if listwise:
            _add_window_flags(p)
        p.set_defaults(func=func)

    p = subparsers.add_parser("eval", help="nDCG@10 of a run, optionally tested against a baseline run")
    p.add_argument("--run", required=True)
    p.add_argument("--qrels", required=True)
    p.add_argument("--output", default=None, help="Per-query TSV report path")
    p.add_argument("--baseline", default=None, help="Baseline run for the paired t-test")
    p.set_defaults(func=cmd_eval)

    p = subparsers.add_parser("sweep", help="Evaluate a (target layer x rate) grid")
    _add_collection_flags(p, qrels=True)
    p.add_argument("--output", required=True, help="CSV path")
    p.add_argument("--rates", type=rate_type, nargs="+", default=list(DEFAULT_RATES))
    p.add_argument("--layers", type=int, nargs="+", default=None, help="Default: every second layer from 2")
    p.add_argument("--warmup", type=int, default=1)
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--listwise", action="store_true", help="Sweep the listwise pipeline")
    p.add_argument("--total-cost", action="store_true", help="Add the all-FLOPs predicted ratio column")
    _add_window_flags(p)
    p.set_defaults(func=cmd_sweep)

    p = subparsers.add_parser("bench", help="Measured vs predicted throughput on long synthetic inputs")
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--layer", type=int, default=2)
    p.add_argument("--rate", type=rate_type, default=0.4)
    p.add_argument("--doc-len", type=int, default=500)
    p.add_argument("--num-queries", type=int, default=4)
    p.add_argument("--num-candidates", type=int, default=4)
    p.add_argument("--warmup", type=int, default=1)
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    _add_model_flags(p)
    p.set_defaults(func=cmd_bench)

    return parser


def _exit_code(error: BaseException) -> int:
    if isinstance(error, SweepCellError) and error.__cause__ is not None:
        return _exit_code(error.__cause__)
    if isinstance(error, (DivergenceError, ArithmeticError)):
        return EXIT_NUMERIC
    if isinstance(error, (DataFormatError, InputError, OSError)):
        return EXIT_DATA
    return EXIT_USAGE


def run_cli(argv: Sequence[str] | None = None) -> int:
    """Parse `argv`, run the subcommand and return its exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as e:
        print(e, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as e:
        # --help
        return e.code if isinstance(e.code, int) else EXIT_USAGE
    except (ConfigurationError, ArgumentError, AssertionError) as e:
        LOGGER.error(f"{LTC_COLORSTR}{e}")
        return EXIT_USAGE
    except (DataFormatError, InputError, OSError, DivergenceError, SweepCellError, ValueError) as e:
        LOGGER.error(f"{LTC_COLORSTR}{e}")
        return _exit_code(e)


def main() -> None:
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
