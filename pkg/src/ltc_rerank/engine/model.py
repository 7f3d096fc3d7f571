from __future__ import annotations

import math
from collections.abc import Iterator, Sequence
from contextlib import contextmanager
from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

from ltc_rerank.constants import (
    INSTRUCTION_IDS,
    NUM_SPECIAL_TOKENS,
    RANK_TRIGGER_ID,
    ROLE_DOCUMENT,
    ROLE_INSTRUCTION,
    ROLE_QUERY,
    SEPARATOR_ID,
)
from ltc_rerank.engine.compression import (
    DocumentLayout,
    LtcConfig,
    masked_document_pool,
    pool_sequence,
    rebuild_positions_and_mask,
)
from ltc_rerank.engine.tensor import (
    causal_mask,
    make_generator,
    matmul,
    rms_norm,
    rope_apply,
    softmax_rows,
    uniform_init,
)
from ltc_rerank.exceptions import ConfigurationError, InputError


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters of the decoder-only reranker."""

    num_layers: int = 8
    hidden: int = 64
    num_heads: int = 4
    mlp_dim: int = 256
    vocab_size: int = 4096
    max_seq: int = 1024
    rope_base: float = 10000.0
    num_identifiers: int = 20
    norm_eps: float = 1e-6

    def __post_init__(self):
        if self.num_layers < 1:
            raise ConfigurationError(f"A model needs at least one layer, got {self.num_layers}.")
        if self.num_heads < 1 or self.hidden % self.num_heads:
            raise ConfigurationError(f"Hidden size {self.hidden} is not divisible by {self.num_heads} heads.")
        if self.head_dim % 2:
            raise ConfigurationError(f"Head dimension {self.head_dim} must be even for rotary positions.")
        if self.max_seq < 1:
            raise ConfigurationError(f"Maximum sequence length {self.max_seq} must be positive.")
        if self.vocab_size <= self.num_reserved:
            raise ConfigurationError(
                f"Vocabulary of {self.vocab_size} ids leaves no room for words after {self.num_reserved} reserved ids."
            )

    @property
    def head_dim(self) -> int:
        return self.hidden // self.num_heads

    @property
    def num_reserved(self) -> int:
        return NUM_SPECIAL_TOKENS + self.num_identifiers

    def identifier_id(self, j: int) -> int:
        """Vocabulary id of the j-th (0-based) document identifier."""
        return self.vocab_size - self.num_identifiers + j


@dataclass
class HiddenStates:
    """Activations of one sequence between two layers.

    `current_layer` counts the decoder layers already applied. `layout` is carried for listwise prompts so the
    compression hook knows which rows belong to which document.
    """

    activations: torch.Tensor
    positions: torch.Tensor
    mask: torch.Tensor
    current_layer: int = 0
    layout: DocumentLayout | None = None

    def __post_init__(self):
        n = self.activations.shape[0]
        assert self.positions.shape == (n,), f"Got {tuple(self.positions.shape)} positions for {n} rows."
        assert n < 2 or bool((self.positions[1:] > self.positions[:-1]).all()), "Positions must strictly increase."

    @property
    def length(self) -> int:
        return self.activations.shape[0]


class DecoderLayer(nn.Module):
    """Pre-norm causal block: RMSNorm, rotary multi-head attention, residual; RMSNorm, GELU MLP, residual."""

    def __init__(self, config: ModelConfig, generator: torch.Generator):
        super().__init__()
        self.config = config
        h, m = config.hidden, config.mlp_dim
        self.attn_norm = nn.Parameter(torch.ones(h))
        self.wq = nn.Parameter(uniform_init((h, h), h, generator))
        self.wk = nn.Parameter(uniform_init((h, h), h, generator))
        self.wv = nn.Parameter(uniform_init((h, h), h, generator))
        self.wo = nn.Parameter(uniform_init((h, h), h, generator))
        self.mlp_norm = nn.Parameter(torch.ones(h))
        self.w_up = nn.Parameter(uniform_init((h, m), h, generator))
        self.w_down = nn.Parameter(uniform_init((m, h), m, generator))

    def forward(self, hs: HiddenStates) -> HiddenStates:
        cfg = self.config
        n = hs.length
        heads, d = cfg.num_heads, cfg.head_dim

        x = rms_norm(hs.activations, self.attn_norm, cfg.norm_eps)
        q = matmul(x, self.wq).view(n, heads, d).transpose(0, 1)
        k = matmul(x, self.wk).view(n, heads, d).transpose(0, 1)
        v = matmul(x, self.wv).view(n, heads, d).transpose(0, 1)
        q = rope_apply(q, hs.positions, cfg.rope_base)
        k = rope_apply(k, hs.positions, cfg.rope_base)

        scores = matmul(q, k.transpose(-1, -2)) / math.sqrt(d)
        probs = softmax_rows(scores, hs.mask)
        mixed = matmul(probs, v).transpose(0, 1).reshape(n, cfg.hidden)
        a = hs.activations + matmul(mixed, self.wo)

        x = rms_norm(a, self.mlp_norm, cfg.norm_eps)
        a = a + matmul(F.gelu(matmul(x, self.w_up)), self.w_down)

        return HiddenStates(a, hs.positions, hs.mask, hs.current_layer + 1, hs.layout)


class RerankerTransformer(nn.Module):
    """Decoder-only transformer with a token-compression hook in front of a configurable layer.

    Layers before the target layer see the full sequence; the hook pools the hidden states entering the target
    layer and rebuilds positions and the causal mask; the remaining layers run on the shortened sequence. Two heads
    read the final position: a linear score head for pointwise scoring and identifier rows for listwise ranking.
    """

    def __init__(self, config: ModelConfig | None = None, seed: int = 0):
        super().__init__()
        self.config = config = config or ModelConfig()
        self.seed = seed
        generator = make_generator(seed)

        h = config.hidden
        self.embedding = nn.Parameter(uniform_init((config.vocab_size, h), h, generator))
        self.layers = nn.ModuleList(DecoderLayer(config, generator) for _ in range(config.num_layers))
        self.final_norm = nn.Parameter(torch.ones(h))
        self.score_head = nn.Parameter(uniform_init((h,), h, generator))
        self.identifier_head = nn.Parameter(uniform_init((config.num_identifiers, h), h, generator))

    @property
    def dtype(self) -> torch.dtype:
        return self.embedding.dtype

    def embed(self, tokens: Sequence[int]) -> HiddenStates:
        """Look up token embeddings and set up positions 0..n-1 with a causal mask.

        :raises InputError: For empty or overlong input, or ids outside the vocabulary.
        """
        cfg = self.config
        if len(tokens) == 0:
            raise InputError("Cannot embed an empty token sequence.")
        if len(tokens) > cfg.max_seq:
            raise InputError(f"Sequence of {len(tokens)} tokens exceeds the maximum length of {cfg.max_seq}.")
        ids = torch.as_tensor(list(tokens), dtype=torch.long)
        if bool(((ids < 0) | (ids >= cfg.vocab_size)).any()):
            bad = [t for t in tokens if not 0 <= t < cfg.vocab_size]
            raise InputError(f"Token ids {bad[:5]} are outside the vocabulary of size {cfg.vocab_size}.")

        n = len(tokens)
        return HiddenStates(F.embedding(ids, self.embedding), torch.arange(n), causal_mask(n, self.dtype))

    def layer_forward(self, hs: HiddenStates) -> HiddenStates:
        """Apply the next decoder layer."""
        if hs.current_layer >= self.config.num_layers:
            raise ConfigurationError(f"All {self.config.num_layers} layers have already been applied.")
        return self.layers[hs.current_layer](hs)

    def compress(self, hs: HiddenStates, ltc: LtcConfig) -> HiddenStates:
        """Pool the hidden states and rebuild positions and mask for the shortened sequence."""
        if hs.layout is None:
            activations, layout = pool_sequence(hs.activations, ltc.rate), None
        else:
            activations, layout = masked_document_pool(hs.activations, hs.layout, ltc.rate)
        positions, mask = rebuild_positions_and_mask(activations.shape[0], dtype=self.dtype)
        return HiddenStates(activations, positions, mask, hs.current_layer, layout)

    def forward_with_ltc(
        self,
        tokens: Sequence[int],
        ltc: LtcConfig | None = None,
        layout: DocumentLayout | None = None,
    ) -> HiddenStates:
        """Run all layers, compressing the input of layer `ltc.target_layer`.

        :returns: Final hidden states after the final norm.
        :raises ConfigurationError: If the target layer exceeds the model depth.
        """
        ltc = ltc or LtcConfig.disabled()
        ltc.validate(self.config.num_layers)

        hs = self.embed(tokens)
        if layout is not None:
            layout.validate(hs.length)
            hs.layout = layout

        for layer_number in range(1, self.config.num_layers + 1):
            if layer_number == ltc.target_layer:
                hs = self.compress(hs, ltc)
            hs = self.layer_forward(hs)

        hs.activations = rms_norm(hs.activations, self.final_norm, self.config.norm_eps)
        return hs

    def forward(self, tokens: Sequence[int], ltc: LtcConfig | None = None, layout: DocumentLayout | None = None):
        return self.forward_with_ltc(tokens, ltc, layout)

    def assemble_pointwise(self, query_tokens: Sequence[int], doc_tokens: Sequence[int]) -> list[int]:
        """Build `[query] [SEP] [document]`, truncating the document tail to fit the maximum length.

        :raises InputError: If the query alone does not fit.
        """
        budget = self.config.max_seq - len(query_tokens) - 1
        if budget < 0:
            raise InputError(
                f"Query of {len(query_tokens)} tokens does not fit the maximum length of {self.config.max_seq}."
            )
        return [*query_tokens, SEPARATOR_ID, *doc_tokens[:budget]]

    def pointwise_score(
        self, query_tokens: Sequence[int], doc_tokens: Sequence[int], ltc: LtcConfig | None = None
    ) -> torch.Tensor:
        """Relevance score of one query-document pair, read by the score head at the last position."""
        hs = self.forward_with_ltc(self.assemble_pointwise(query_tokens, doc_tokens), ltc)
        return torch.dot(hs.activations[-1], self.score_head)

    def assemble_listwise(
        self, query_tokens: Sequence[int], docs: Sequence[Sequence[int]]
    ) -> tuple[list[int], DocumentLayout]:
        """Build `[instruction][query][ID_1][doc_1]...[ID_k][doc_k][trigger]` and its document layout.

        Documents are truncated to an equal per-document budget only if the prompt would overflow.

        :raises ConfigurationError: If there are more documents than reserved identifiers.
        :raises InputError: If fewer than two documents are given or the prompt skeleton does not fit.
        """
        cfg = self.config
        k = len(docs)
        if k > cfg.num_identifiers:
            raise ConfigurationError(f"Cannot rank {k} documents with {cfg.num_identifiers} reserved identifiers.")
        if k < 2:
            raise InputError(f"Listwise ranking needs at least two documents, got {k}.")

        overhead = len(INSTRUCTION_IDS) + len(query_tokens) + k + 1
        budget = cfg.max_seq - overhead
        if budget < 0:
            raise InputError(f"Listwise prompt skeleton of {overhead} tokens exceeds {cfg.max_seq} tokens.")
        if sum(len(doc) for doc in docs) > budget:
            cap = budget // k
            docs = [doc[:cap] for doc in docs]

        tokens = [*INSTRUCTION_IDS, *query_tokens]
        segments: list[tuple] = [(ROLE_INSTRUCTION, len(INSTRUCTION_IDS)), (ROLE_QUERY, len(query_tokens))]
        for j, doc in enumerate(docs):
            tokens += [cfg.identifier_id(j), *doc]
            segments += [(ROLE_INSTRUCTION, 1), (ROLE_DOCUMENT, len(doc), j)]
        tokens.append(RANK_TRIGGER_ID)
        segments.append((ROLE_INSTRUCTION, 1))

        return tokens, DocumentLayout.from_segments(segments)

    def listwise_identifier_logits(
        self, query_tokens: Sequence[int], docs: Sequence[Sequence[int]], ltc: LtcConfig | None = None
    ) -> torch.Tensor:
        """Logits of the k document identifiers at the final position (first generated token)."""
        tokens, layout = self.assemble_listwise(query_tokens, docs)
        hs = self.forward_with_ltc(tokens, ltc, layout)
        return matmul(self.identifier_head[: len(docs)], hs.activations[-1].unsqueeze(-1)).squeeze(-1)


def rank_by_logits(logits: torch.Tensor | Sequence[float]) -> list[int]:
    """Indices ordered by logit descending, ties broken by the lower index."""
    values = logits.tolist() if isinstance(logits, torch.Tensor) else list(logits)
    return sorted(range(len(values)), key=lambda i: (-values[i], i))


@contextmanager
def record_layer_lengths(model: RerankerTransformer) -> Iterator[list[int]]:
    """Collect the sequence length each decoder layer produces, in call order, while the context is open."""
    lengths: list[int] = []
    handles = [
        layer.register_forward_hook(lambda module, args, output: lengths.append(output.length))
        for layer in model.layers
    ]
    try:
        yield lengths
    finally:
        for handle in handles:
            handle.remove()
