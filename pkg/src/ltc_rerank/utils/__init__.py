from .dataset import SynthExample, SyntheticCollection, synth_task_gen, write_synthetic_collection
from .metrics import MetricReport, TTestResult, compare_runs, evaluate_run, ndcg_at_10, paired_t_test, write_report
from .tokenizer import HashTokenizer, tokenize
from .trec import Candidate, RunEntry, load_corpus, load_qrels, load_queries, load_run, write_run

__all__ = (
    "Candidate",
    "HashTokenizer",
    "MetricReport",
    "RunEntry",
    "SynthExample",
    "SyntheticCollection",
    "TTestResult",
    "compare_runs",
    "evaluate_run",
    "load_corpus",
    "load_qrels",
    "load_queries",
    "load_run",
    "ndcg_at_10",
    "paired_t_test",
    "synth_task_gen",
    "tokenize",
    "write_report",
    "write_run",
    "write_synthetic_collection",
)
