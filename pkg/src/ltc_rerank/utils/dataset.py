"""Synthetic relevance data.

Queries are a few "topic" words. Every document is a run of distractor words with two topic words planted at random
positions: the positive gets topics of its own query, each negative gets decoy topics the query does not mention.
Scoring therefore has to match document words against the query, which carries over to held-out seeds because all
seeds share one small topic vocabulary. Topic and distractor words are picked so that no two of them share a token
id, so a query id shows up in a document iff the document is the positive.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import torch
from ultralytics.utils import LOGGER

from ltc_rerank.constants import DEFAULT_NUM_IDENTIFIERS, DEFAULT_RUN_TAG, LTC_COLORSTR
from ltc_rerank.engine.tensor import make_generator
from ltc_rerank.exceptions import ArgumentError
from ltc_rerank.utils.tokenizer import HashTokenizer
from ltc_rerank.utils.trec import RunEntry, write_run

TOPIC_WORD_PREFIX = "topic"
DISTRACTOR_WORD_PREFIX = "w"


@dataclass(frozen=True)
class SynthExample:
    """One training group: a query, its positive document and m negatives, as text and as token ids."""

    query_text: str
    positive_text: str
    negative_texts: tuple[str, ...]
    signal_words: tuple[str, ...]
    decoy_words: tuple[tuple[str, ...], ...]
    query: tuple[int, ...]
    positive: tuple[int, ...]
    negatives: tuple[tuple[int, ...], ...]

    @property
    def documents(self) -> list[tuple[int, ...]]:
        """Positive first, then the negatives."""
        return [self.positive, *self.negatives]


@dataclass(frozen=True)
class TaskVocabulary:
    """Topic and distractor words of the synthetic task, one distinct token id per word."""

    topics: tuple[str, ...]
    distractors: tuple[str, ...]


def _distinct_words(prefix: str, count: int, tokenizer: HashTokenizer, taken: set[int]) -> list[str]:
    """The first `count` words `{prefix}{i}` whose token id is not in `taken`. Adds their ids to `taken`."""
    words = []
    # The hash can leave ids unreachable, so give up after a generous scan
    limit = 64 * tokenizer.num_words
    i = 0
    while len(words) < count:
        if i >= limit:
            raise ArgumentError(f"Found only {len(words)} of {count} '{prefix}' words with unused token ids.")
        word = f"{prefix}{i}"
        (token_id,) = tokenizer(word)
        if token_id not in taken:
            taken.add(token_id)
            words.append(word)
        i += 1
    return words


@lru_cache(maxsize=16)
def task_vocabulary(
    num_topic_words: int, num_distractor_words: int, vocab_size: int, num_identifiers: int = DEFAULT_NUM_IDENTIFIERS
) -> TaskVocabulary:
    """Pick topic and distractor words for a vocabulary so that no two words share a token id.

    :raises ArgumentError: If the vocabulary has fewer word ids than requested words.
    """
    tokenizer = HashTokenizer(vocab_size, num_identifiers)
    if num_topic_words + num_distractor_words > tokenizer.num_words:
        raise ArgumentError(
            f"{num_topic_words} topic and {num_distractor_words} distractor words do not fit the "
            f"{tokenizer.num_words} word ids of a vocabulary of size {vocab_size}."
        )
    taken: set[int] = set()
    topics = _distinct_words(TOPIC_WORD_PREFIX, num_topic_words, tokenizer, taken)
    distractors = _distinct_words(DISTRACTOR_WORD_PREFIX, num_distractor_words, tokenizer, taken)
    assert len(taken) == num_topic_words + num_distractor_words
    return TaskVocabulary(tuple(topics), tuple(distractors))


def _draw(pool: list[str], count: int, generator: torch.Generator, replacement: bool = True) -> list[str]:
    if replacement:
        indices = torch.randint(len(pool), (count,), generator=generator)
    else:
        indices = torch.randperm(len(pool), generator=generator)[:count]
    return [pool[i] for i in indices.tolist()]


def _plant(words: list[str], planted: list[str], generator: torch.Generator) -> list[str]:
    positions = torch.randperm(len(words), generator=generator)[: len(planted)].tolist()
    for position, word in zip(positions, planted):
        words[position] = word
    return words


def synth_task_gen(
    seed: int,
    num_queries: int,
    doc_len: int,
    num_negatives: int = 5,
    query_len: int = 4,
    num_planted: int = 2,
    num_topic_words: int = 32,
    num_distractor_words: int = 1024,
    vocab_size: int = 4096,
    num_identifiers: int = DEFAULT_NUM_IDENTIFIERS,
) -> list[SynthExample]:
    """Generate a deterministic synthetic relevance dataset.

    :param seed: Seed of the generator; the same seed gives the same dataset.
    :param num_queries: Number of examples.
    :param doc_len: Words per document.
    :param num_negatives: Negatives per query.
    :param query_len: Topic words per query.
    :param num_planted: Topic words planted into every document: query topics in the positive, decoys elsewhere.
    :param num_topic_words: Size of the topic vocabulary shared by all seeds.
    :raises ArgumentError: If the sizes are inconsistent.
    """
    if doc_len < 4:
        raise ArgumentError(f"Documents need at least 4 words, got doc_len={doc_len}.")
    if num_queries < 0 or num_negatives < 1:
        raise ArgumentError(f"Need num_queries >= 0 and num_negatives >= 1, got {num_queries} and {num_negatives}.")
    if not 1 <= num_planted <= min(query_len, doc_len - 1):
        raise ArgumentError(f"Cannot plant {num_planted} words from {query_len}-word queries into {doc_len} words.")
    if query_len + num_planted > num_topic_words:
        raise ArgumentError(
            f"{num_topic_words} topic words leave no {num_planted} decoys next to {query_len}-word queries."
        )

    vocabulary = task_vocabulary(num_topic_words, num_distractor_words, vocab_size, num_identifiers)
    tokenizer = HashTokenizer(vocab_size, num_identifiers)
    topics, distractors = list(vocabulary.topics), list(vocabulary.distractors)
    generator = make_generator(seed)

    examples = []
    for _ in range(num_queries):
        query_words = _draw(topics, query_len, generator, replacement=False)
        planted = _draw(query_words, num_planted, generator, replacement=False)
        positive_words = _plant(_draw(distractors, doc_len, generator), planted, generator)

        others = [word for word in topics if word not in query_words]
        decoys, negative_texts = [], []
        for _ in range(num_negatives):
            negative_decoys = _draw(others, num_planted, generator, replacement=False)
            decoys.append(tuple(negative_decoys))
            negative_texts.append(" ".join(_plant(_draw(distractors, doc_len, generator), negative_decoys, generator)))

        query_text, positive_text = " ".join(query_words), " ".join(positive_words)
        examples.append(
            SynthExample(
                query_text=query_text,
                positive_text=positive_text,
                negative_texts=tuple(negative_texts),
                signal_words=tuple(planted),
                decoy_words=tuple(decoys),
                query=tuple(tokenizer(query_text)),
                positive=tuple(tokenizer(positive_text)),
                negatives=tuple(tuple(tokenizer(text)) for text in negative_texts),
            )
        )

    return examples


@dataclass(frozen=True)
class SyntheticCollection:
    """Paths of a synthetic collection written to disk."""

    corpus: Path
    queries: Path
    run: Path
    qrels: Path


def write_synthetic_collection(
    output_dir: str | Path,
    seed: int = 0,
    num_queries: int = 20,
    num_candidates: int = 30,
    doc_len: int = 64,
    first_stage_noise: float = 1.0,
) -> SyntheticCollection:
    """Write a corpus, queries, a noisy first-stage run and qrels built from `synth_task_gen`.

    The first-stage run gives every candidate a Gaussian score; the positive gets a bonus of one standard deviation,
    so it tends to sit near, but not always at, the head of the list.
    """
    if num_candidates < 2:
        raise ArgumentError(f"A candidate list needs at least two documents, got {num_candidates}.")

    output_dir = Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    examples = synth_task_gen(seed, num_queries, doc_len, num_negatives=num_candidates - 1)
    generator = make_generator(seed + 1)

    corpus_lines, query_lines, qrels_lines, run_entries = [], [], [], []
    for i, example in enumerate(examples):
        query_id = f"q{i}"
        query_lines.append(f"{query_id}\t{example.query_text}\n")

        doc_ids = [f"d{i}_{j}" for j in range(num_candidates)]
        texts = [example.positive_text, *example.negative_texts]
        for j, (doc_id, text) in enumerate(zip(doc_ids, texts)):
            corpus_lines.append(json.dumps({"id": doc_id, "text": text}) + "\n")
            qrels_lines.append(f"{query_id} 0 {doc_id} {int(j == 0)}\n")

        scores = torch.randn(num_candidates, generator=generator, dtype=torch.float64) * first_stage_noise
        scores[0] += first_stage_noise
        order = sorted(range(num_candidates), key=lambda j: (-scores[j].item(), j))
        run_entries += [
            RunEntry(query_id, doc_ids[j], rank, round(scores[j].item(), 6), DEFAULT_RUN_TAG)
            for rank, j in enumerate(order, start=1)
        ]

    collection = SyntheticCollection(
        corpus=output_dir / "corpus.jsonl",
        queries=output_dir / "queries.tsv",
        run=output_dir / "run.trec",
        qrels=output_dir / "qrels.txt",
    )
    outputs = ((collection.corpus, corpus_lines), (collection.queries, query_lines), (collection.qrels, qrels_lines))
    for path, lines in outputs:
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            f.writelines(lines)
    write_run(run_entries, collection.run, tag="synth")

    LOGGER.info(f"{LTC_COLORSTR}Wrote synthetic collection with {num_queries} queries to {output_dir}")
    return collection
