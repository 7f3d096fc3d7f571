"""Readers and writers for the collection files the reranking pipeline consumes and produces.

Formats (UTF-8, newline-delimited):
  - corpus: JSON lines `{"id": ..., "text": ...}`
  - queries: `id<TAB>text`
  - run: TREC `qid Q0 docid rank score tag`
  - qrels: TREC `qid 0 docid grade`
"""

from __future__ import annotations

import json
from collections.abc import Iterable, Iterator
from dataclasses import dataclass
from pathlib import Path

from ultralytics.utils import LOGGER

from ltc_rerank.constants import DEFAULT_RUN_TAG, LTC_COLORSTR
from ltc_rerank.exceptions import DataFormatError


@dataclass(frozen=True)
class Candidate:
    """A first-stage result to be reranked."""

    doc_id: str
    first_stage_rank: int
    first_stage_score: float


@dataclass(frozen=True)
class RunEntry:
    """One line of a TREC run file."""

    query_id: str
    doc_id: str
    rank: int
    score: float
    tag: str = DEFAULT_RUN_TAG


def _numbered_lines(path: str | Path) -> Iterator[tuple[int, str]]:
    """Yield (1-based line number, line without trailing newline) for non-blank lines."""
    with open(path, encoding="utf-8") as f:
        for line_number, line in enumerate(f, start=1):
            line = line.rstrip("\r\n")
            if line.strip():
                yield line_number, line


def load_corpus(path: str | Path) -> dict[str, str]:
    """Load a JSON-lines corpus into an id -> text map."""
    corpus = {}
    for line_number, line in _numbered_lines(path):
        try:
            record = json.loads(line)
            doc_id, text = str(record["id"]), record["text"]
        except (json.JSONDecodeError, KeyError, TypeError) as e:
            raise DataFormatError(f"Expected a JSON object with 'id' and 'text': {e}", str(path), line_number) from e
        if not doc_id or not isinstance(text, str):
            raise DataFormatError("Document id must be non-empty and text must be a string.", str(path), line_number)
        corpus[doc_id] = text
    return corpus


def load_queries(path: str | Path) -> dict[str, str]:
    """Load a `id<TAB>text` query file into an id -> text map."""
    queries = {}
    for line_number, line in _numbered_lines(path):
        query_id, sep, text = line.partition("\t")
        if not sep or not query_id:
            raise DataFormatError("Expected 'id<TAB>text'.", str(path), line_number)
        queries[query_id] = text
    return queries


def load_run(path: str | Path) -> dict[str, list[Candidate]]:
    """Load a TREC run file into query -> candidates sorted by rank, queries in file order.

    :raises DataFormatError: On malformed lines or a rank/document repeated within a query.
    """
    run: dict[str, list[Candidate]] = {}
    seen_ranks: dict[str, set[int]] = {}
    seen_docs: dict[str, set[str]] = {}
    for line_number, line in _numbered_lines(path):
        parts = line.split()
        if len(parts) != 6:
            raise DataFormatError(
                f"Expected 6 columns 'qid Q0 docid rank score tag', got {len(parts)}.", str(path), line_number
            )
        query_id, _, doc_id, rank_str, score_str, _ = parts
        try:
            rank, score = int(rank_str), float(score_str)
        except ValueError as e:
            raise DataFormatError(f"Bad rank or score: {e}", str(path), line_number) from e

        ranks = seen_ranks.setdefault(query_id, set())
        docs = seen_docs.setdefault(query_id, set())
        if rank in ranks:
            raise DataFormatError(f"Rank {rank} appears twice for query {query_id}.", str(path), line_number)
        if doc_id in docs:
            raise DataFormatError(f"Document {doc_id} appears twice for query {query_id}.", str(path), line_number)
        ranks.add(rank)
        docs.add(doc_id)
        run.setdefault(query_id, []).append(Candidate(doc_id, rank, score))

    for candidates in run.values():
        candidates.sort(key=lambda c: c.first_stage_rank)
    return run


def load_qrels(path: str | Path) -> dict[str, dict[str, int]]:
    """Load TREC qrels into query -> {doc: grade}. A repeated (query, doc) pair keeps the last grade."""
    qrels: dict[str, dict[str, int]] = {}
    duplicates = 0
    for line_number, line in _numbered_lines(path):
        parts = line.split()
        if len(parts) != 4:
            raise DataFormatError(f"Expected 4 columns 'qid 0 docid grade', got {len(parts)}.", str(path), line_number)
        query_id, _, doc_id, grade_str = parts
        try:
            grade = int(grade_str)
        except ValueError as e:
            raise DataFormatError(f"Bad grade '{grade_str}'.", str(path), line_number) from e

        judgments = qrels.setdefault(query_id, {})
        if doc_id in judgments:
            duplicates += 1
            LOGGER.warning(
                f"{LTC_COLORSTR}{path}:{line_number}: duplicate judgment for ({query_id}, {doc_id}), keeping the last."
            )
        judgments[doc_id] = grade

    if duplicates:
        LOGGER.warning(f"{LTC_COLORSTR}{duplicates} duplicate judgments in {path}.")
    return qrels


def check_run_entries(entries: Iterable[RunEntry], path: str | Path | None = None) -> None:
    """Check that every query's ranks run 1..n and scores do not increase with rank.

    :param path: The run file the entries belong to, for error messages.
    :raises DataFormatError: On the first violation.
    """
    location = str(path) if path is not None else None
    by_query: dict[str, list[RunEntry]] = {}
    for entry in entries:
        by_query.setdefault(entry.query_id, []).append(entry)

    for query_id, query_entries in by_query.items():
        ordered = sorted(query_entries, key=lambda e: e.rank)
        ranks = [e.rank for e in ordered]
        if ranks != list(range(1, len(ordered) + 1)):
            message = f"Ranks for query {query_id} are not contiguous from 1: {ranks[:10]}..."
            raise DataFormatError(message, path=location)
        for previous, current in zip(ordered, ordered[1:]):
            if current.score > previous.score:
                raise DataFormatError(
                    f"Score increases from rank {previous.rank} ({previous.score}) to rank {current.rank} "
                    f"({current.score}) for query {query_id}.",
                    path=location,
                )


def write_run(entries: Iterable[RunEntry], path: str | Path, tag: str | None = None) -> None:
    """Write entries as a TREC run, queries in input order, 6-decimal scores.

    :param tag: Overrides the tag of every entry when given.
    :raises DataFormatError: If the entries violate rank/score ordering; nothing is written then.
    """
    entries = list(entries)
    check_run_entries(entries, path)

    by_query: dict[str, list[RunEntry]] = {}
    for entry in entries:
        by_query.setdefault(entry.query_id, []).append(entry)

    lines = []
    for query_id, query_entries in by_query.items():
        for e in sorted(query_entries, key=lambda e: e.rank):
            lines.append(f"{query_id} Q0 {e.doc_id} {e.rank} {e.score:.6f} {tag or e.tag}\n")

    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.writelines(lines)


def entries_from_candidates(
    query_id: str, candidates: Iterable[Candidate], tag: str = DEFAULT_RUN_TAG
) -> list[RunEntry]:
    """Turn first-stage candidates (already in rank order) into run entries."""
    return [RunEntry(query_id, c.doc_id, i, c.first_stage_score, tag) for i, c in enumerate(candidates, start=1)]
