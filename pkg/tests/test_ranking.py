import json
from unittest import mock

import pytest
import torch
from conftest import TINY_CONFIG, TMP

from ltc_rerank.constants import NUM_SPECIAL_TOKENS
from ltc_rerank.engine import LtcConfig, RerankerTransformer
from ltc_rerank.engine.tensor import make_generator
from ltc_rerank.exceptions import ArgumentError, ConfigurationError, DataFormatError
from ltc_rerank.listwise import ListwiseReranker, sliding_window_rerank
from ltc_rerank.pointwise import PointwiseReranker
from ltc_rerank.utils.dataset import write_synthetic_collection
from ltc_rerank.utils.tokenizer import HashTokenizer, fnv1a_64, tokenize
from ltc_rerank.utils.trec import (
    Candidate,
    RunEntry,
    check_run_entries,
    load_corpus,
    load_qrels,
    load_queries,
    load_run,
    write_run,
)


def _write(name: str, content: str):
    path = TMP / name
    path.write_text(content, encoding="utf-8")
    return path


def _candidates(n: int, prefix: str = "d") -> list[Candidate]:
    return [Candidate(f"{prefix}{i}", i, float(n - i)) for i in range(1, n + 1)]


def _corpus(n: int, prefix: str = "d") -> dict[str, str]:
    return {f"{prefix}{i}": f"document {i} about topic {i % 7} and word{i}" for i in range(1, n + 1)}


# Tokenizer


def test_fnv1a_reference_values() -> None:
    assert fnv1a_64(b"") == 0xCBF29CE484222325
    assert fnv1a_64(b"a") == 0xAF63DC4C8601EC8C


def test_tokenizer_splits_and_lowercases() -> None:
    tokenizer = HashTokenizer(4096)
    assert tokenizer.words("Hello, World! foo_bar 42") == ["hello", "world", "foo", "bar", "42"]
    assert tokenizer("Hello world") == tokenizer("hello   WORLD")
    assert tokenizer("") == []


def test_tokenizer_never_produces_reserved_ids() -> None:
    ids = tokenize(" ".join(f"word{i}" for i in range(2000)), vocab_size=64, num_identifiers=20)
    assert min(ids) >= NUM_SPECIAL_TOKENS
    assert max(ids) < 64 - 20, "Identifier ids must never come out of the tokenizer"


def test_tokenizer_without_room_for_words() -> None:
    with pytest.raises(ConfigurationError, match="no room for words"):
        HashTokenizer(26, 20)


# Loaders and writers


def test_load_corpus_and_queries() -> None:
    corpus = load_corpus(_write("corpus.jsonl", '{"id": "d1", "text": "first"}\n\n{"id": 2, "text": "second"}\n'))
    assert corpus == {"d1": "first", "2": "second"}

    queries = load_queries(_write("queries.tsv", "q1\twhat is ltc\nq2\ttabs\tinside\n"))
    assert queries == {"q1": "what is ltc", "q2": "tabs\tinside"}


@pytest.mark.parametrize(
    "loader,content,line_number",
    [
        (load_corpus, '{"id": "d1", "text": "ok"}\nnot json\n', 2),  # Malformed JSON
        (load_corpus, '{"text": "no id"}\n', 1),  # Missing id
        (load_queries, "q1\tok\nno tab here\n", 2),  # Missing separator
        (load_run, "q1 Q0 d1 1 2.0 tag\nq1 Q0 d2 2 1.0\n", 2),  # Five columns
        (load_run, "q1 Q0 d1 one 2.0 tag\n", 1),  # Bad rank
        (load_run, "q1 Q0 d1 1 2.0 t\nq1 Q0 d2 1 1.0 t\n", 2),  # Repeated rank
        (load_run, "q1 Q0 d1 1 2.0 t\nq1 Q0 d1 2 1.0 t\n", 2),  # Repeated document
        (load_qrels, "q1 0 d1 1\nq1 0 d2\n", 2),  # Three columns
        (load_qrels, "q1 0 d1 high\n", 1),  # Bad grade
    ],
)
def test_loaders_report_line_numbers(loader, content, line_number) -> None:
    path = _write("malformed.txt", content)
    with pytest.raises(DataFormatError) as exc_info:
        loader(path)
    assert exc_info.value.line_number == line_number
    assert f"{path}:{line_number}" in str(exc_info.value)


def test_load_run_sorts_by_rank_and_keeps_query_order() -> None:
    run = load_run(_write("run.trec", "q2 Q0 b 2 1.0 t\nq1 Q0 x 1 3.0 t\nq2 Q0 a 1 2.0 t\n"))
    assert list(run) == ["q2", "q1"]
    assert [c.doc_id for c in run["q2"]] == ["a", "b"]
    assert run["q1"] == [Candidate("x", 1, 3.0)]


def test_load_qrels_duplicate_keeps_last_and_warns() -> None:
    path = _write("qrels.txt", "q1 0 d1 0\nq1 0 d2 1\nq1 0 d1 2\n")
    with mock.patch("ltc_rerank.utils.trec.LOGGER.warning") as mock_warning:
        qrels = load_qrels(path)
    assert qrels == {"q1": {"d1": 2, "d2": 1}}
    assert mock_warning.call_count == 2
    assert "duplicate" in mock_warning.call_args_list[0].args[0]


def test_write_run_round_trip_is_byte_identical() -> None:
    entries = [
        RunEntry("q2", "b", 1, 2.5, "x"),
        RunEntry("q2", "a", 2, 2.5, "x"),
        RunEntry("q1", "c", 1, -0.1234567, "x"),
    ]
    first, second = TMP / "round_a.trec", TMP / "round_b.trec"
    write_run(entries, first)
    assert first.read_text() == "q2 Q0 b 1 2.500000 x\nq2 Q0 a 2 2.500000 x\nq1 Q0 c 1 -0.123457 x\n"

    run = load_run(first)
    reloaded = [RunEntry(q, c.doc_id, c.first_stage_rank, c.first_stage_score, "x") for q in run for c in run[q]]
    write_run(reloaded, second)
    assert first.read_bytes() == second.read_bytes()


def test_write_run_tag_override_and_empty() -> None:
    path = TMP / "tagged.trec"
    write_run([RunEntry("q1", "d1", 1, 1.0, "old")], path, tag="new")
    assert path.read_text().endswith(" new\n")

    write_run([], path)
    assert path.read_text() == ""


@pytest.mark.parametrize(
    "entries",
    [
        [RunEntry("q1", "a", 1, 1.0), RunEntry("q1", "b", 2, 2.0)],  # Score increases with rank
        [RunEntry("q1", "a", 1, 1.0), RunEntry("q1", "b", 3, 0.0)],  # Rank gap
        [RunEntry("q1", "a", 2, 1.0)],  # Does not start at 1
    ],
)
def test_write_run_refuses_bad_ordering(entries) -> None:
    path = TMP / "refused.trec"
    path.unlink(missing_ok=True)
    with pytest.raises(DataFormatError, match="refused.trec"):
        write_run(entries, path)
    assert not path.exists(), "Nothing may be written for an invalid run"


# Pointwise reranking


def test_pointwise_rerank_orders_by_score() -> None:
    model = RerankerTransformer(TINY_CONFIG)
    reranker = PointwiseReranker(model, _corpus(3))
    scores = [torch.tensor(0.1), torch.tensor(0.9), torch.tensor(0.5)]
    with mock.patch.object(model, "pointwise_score", side_effect=scores):
        entries = reranker.rerank("q1", "topic", _candidates(3))
    assert [e.doc_id for e in entries] == ["d2", "d3", "d1"]
    assert [e.rank for e in entries] == [1, 2, 3]
    assert [e.score for e in entries] == pytest.approx([0.9, 0.5, 0.1])


def test_pointwise_rerank_equal_scores_keep_first_stage_order() -> None:
    model = RerankerTransformer(TINY_CONFIG)
    reranker = PointwiseReranker(model, _corpus(4))
    with mock.patch.object(model, "pointwise_score", return_value=torch.tensor(0.3)):
        entries = reranker.rerank("q1", "topic", list(reversed(_candidates(4))))
    assert [e.doc_id for e in entries] == ["d1", "d2", "d3", "d4"]


def test_pointwise_rerank_depth_zero_keeps_first_stage_order(tiny_model) -> None:
    entries = PointwiseReranker(tiny_model, _corpus(5)).rerank("q1", "topic", _candidates(5), depth=0)
    assert [e.doc_id for e in entries] == ["d1", "d2", "d3", "d4", "d5"]
    check_run_entries(entries)

    with pytest.raises(ArgumentError):
        PointwiseReranker(tiny_model, _corpus(5)).rerank("q1", "topic", _candidates(5), depth=-1)


def test_pointwise_rerank_depth_limits_scoring(tiny_model) -> None:
    reranker = PointwiseReranker(tiny_model, _corpus(10))
    with mock.patch.object(tiny_model, "pointwise_score", wraps=tiny_model.pointwise_score) as wrapped:
        entries = reranker.rerank("q1", "topic 3", _candidates(10), depth=4)
    assert wrapped.call_count == 4
    assert {e.doc_id for e in entries[:4]} == {"d1", "d2", "d3", "d4"}
    assert [e.doc_id for e in entries[4:]] == [f"d{i}" for i in range(5, 11)]
    check_run_entries(entries)


def test_pointwise_rerank_missing_documents_go_last(tiny_model) -> None:
    corpus = _corpus(5)
    del corpus["d2"]
    with mock.patch("ltc_rerank.engine.reranker.LOGGER.warning") as mock_warning:
        entries = PointwiseReranker(tiny_model, corpus).rerank("q1", "topic", _candidates(5), depth=3)
    assert [e.doc_id for e in entries][-1] == "d2"
    assert [e.doc_id for e in entries][2:4] == ["d4", "d5"]
    mock_warning.assert_called_once()
    check_run_entries(entries)


def test_pointwise_rerank_is_a_permutation(small_model) -> None:
    generator = make_generator(4)
    corpus = _corpus(30)
    for _ in range(5):
        order = torch.randperm(30, generator=generator).tolist()
        candidates = [Candidate(f"d{i + 1}", rank, float(-rank)) for rank, i in enumerate(order, start=1)]
        depth = int(torch.randint(0, 35, (1,), generator=generator))
        entries = PointwiseReranker(small_model, corpus, LtcConfig(2, 0.4)).rerank("q1", "topic 1", candidates, depth)
        assert sorted(e.doc_id for e in entries) == sorted(corpus)
        check_run_entries(entries)


def test_rerank_run_threaded_matches_serial(tiny_model) -> None:
    corpus = _corpus(8)
    queries = {f"q{i}": f"topic {i}" for i in range(6)}
    run = {q: _candidates(8) for q in queries}
    run["q_missing"] = _candidates(3)
    reranker = PointwiseReranker(tiny_model, corpus, LtcConfig(1, 0.5))

    serial = reranker.rerank_run(queries, run, num_threads=1, progress=False)
    threaded = reranker.rerank_run(queries, run, num_threads=4, progress=False)
    assert serial == threaded
    assert list(serial) == list(run)
    assert [e.doc_id for e in serial["q_missing"]] == ["d1", "d2", "d3"]


def test_reranker_rate_one_matches_disabled(small_model) -> None:
    corpus = _corpus(12)
    disabled = PointwiseReranker(small_model, corpus).rerank("q1", "topic 2", _candidates(12))
    identity = PointwiseReranker(small_model, corpus, LtcConfig(3, 1.0)).rerank("q1", "topic 2", _candidates(12))
    assert disabled == identity


def test_reranker_rejects_bad_settings(tiny_model) -> None:
    with pytest.raises(ConfigurationError):
        PointwiseReranker(tiny_model, {}, LtcConfig(3, 0.5))
    with pytest.raises(ArgumentError):
        PointwiseReranker(tiny_model, {}, max_doc_tokens=0)
    with pytest.raises(ConfigurationError):
        PointwiseReranker(tiny_model, {}).with_ltc(LtcConfig(4, 0.5))


# Sliding window


def test_sliding_window_single_window() -> None:
    calls = []

    def scorer(chunk):
        calls.append(list(chunk))
        return [float(x) for x in chunk]

    assert sliding_window_rerank([3, 1, 2], scorer) == [3, 2, 1]
    assert calls == [[3, 1, 2]]
    assert sliding_window_rerank([5], scorer) == [5]
    assert len(calls) == 1, "A single item needs no scoring"


def test_sliding_window_call_count() -> None:
    scorer = mock.Mock(side_effect=lambda chunk: [0.0] * len(chunk))
    result = sliding_window_rerank(list(range(100)), scorer, window=20, step=10)
    assert scorer.call_count == 9
    assert result == list(range(100)), "Equal logits keep the incoming order"
    assert [len(call.args[0]) for call in scorer.call_args_list] == [20] * 9


def test_sliding_window_last_window_starts_at_zero() -> None:
    scorer = mock.Mock(side_effect=lambda chunk: [0.0] * len(chunk))
    sliding_window_rerank(list(range(25)), scorer, window=20, step=10)
    assert [call.args[0][0] for call in scorer.call_args_list] == [5, 0]


@pytest.mark.parametrize("seed", range(20))
def test_sliding_window_oracle_brings_top_ten_to_the_top(seed) -> None:
    generator = make_generator(seed)
    values = torch.randperm(100, generator=generator).tolist()
    result = sliding_window_rerank(values, lambda chunk: [float(v) for v in chunk], window=20, step=10)
    assert result[:10] == list(range(99, 89, -1))
    assert sorted(result) == list(range(100))


@pytest.mark.parametrize("window,step", [(10, 10), (5, 10), (20, 0)])
def test_sliding_window_invalid(window, step) -> None:
    with pytest.raises(ArgumentError):
        sliding_window_rerank(list(range(5)), lambda chunk: [0.0] * len(chunk), window, step)


# Listwise reranking


def test_listwise_reranker_window_limits(tiny_model) -> None:
    with pytest.raises(ConfigurationError):
        ListwiseReranker(tiny_model, {}, window=21, step=10)
    with pytest.raises(ArgumentError):
        ListwiseReranker(tiny_model, {}, window=10, step=10)


def test_listwise_reranker_prompt_count(tiny_model) -> None:
    reranker = ListwiseReranker(tiny_model, _corpus(100), max_doc_tokens=4)
    with mock.patch.object(
        tiny_model, "listwise_identifier_logits", wraps=tiny_model.listwise_identifier_logits
    ) as wrapped:
        entries = reranker.rerank("q1", "topic 5", _candidates(100))
    assert wrapped.call_count == 9
    assert sorted(e.doc_id for e in entries) == sorted(_corpus(100))
    check_run_entries(entries)


def test_listwise_reranker_rate_one_matches_disabled(tiny_model) -> None:
    corpus = _corpus(30)
    disabled = ListwiseReranker(tiny_model, corpus).rerank("q1", "topic 5", _candidates(30))
    identity = ListwiseReranker(tiny_model, corpus, LtcConfig(2, 1.0)).rerank("q1", "topic 5", _candidates(30))
    assert disabled == identity


def test_listwise_reranker_with_compression(small_model) -> None:
    entries = ListwiseReranker(small_model, _corpus(15), LtcConfig(2, 0.4)).rerank("q1", "topic", _candidates(15))
    assert len(entries) == 15
    check_run_entries(entries)


# Synthetic collections


def test_synthetic_collection_loads_back() -> None:
    collection = write_synthetic_collection(TMP / "synth_a", seed=3, num_queries=4, num_candidates=6, doc_len=10)
    corpus, queries = load_corpus(collection.corpus), load_queries(collection.queries)
    run, qrels = load_run(collection.run), load_qrels(collection.qrels)

    assert len(corpus) == 24
    assert list(queries) == ["q0", "q1", "q2", "q3"]
    assert all(len(run[q]) == 6 for q in queries)
    assert all(sum(grades.values()) == 1 and grades[f"d{q[1:]}_0"] == 1 for q, grades in qrels.items())
    assert {c.doc_id for c in run["q1"]} == {f"d1_{j}" for j in range(6)}
    assert json.loads(collection.corpus.read_text().splitlines()[0])["id"] == "d0_0"


def test_synthetic_collection_is_deterministic() -> None:
    a = write_synthetic_collection(TMP / "synth_b", seed=5, num_queries=3, num_candidates=5, doc_len=8)
    b = write_synthetic_collection(TMP / "synth_c", seed=5, num_queries=3, num_candidates=5, doc_len=8)
    for first, second in zip((a.corpus, a.queries, a.run, a.qrels), (b.corpus, b.queries, b.run, b.qrels)):
        assert first.read_bytes() == second.read_bytes()

    with pytest.raises(ArgumentError):
        write_synthetic_collection(TMP / "synth_d", num_candidates=1)
