from __future__ import annotations

import math
from collections.abc import Iterable, Sequence
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import pandas as pd
import torch
from ultralytics.utils import LOGGER, TQDM

from ltc_rerank.constants import DEFAULT_RATES, DEFAULT_TRAIN_RUN_DESCRIPTION, LTC_COLORSTR
from ltc_rerank.engine.compression import LtcConfig
from ltc_rerank.engine.model import ModelConfig, RerankerTransformer
from ltc_rerank.engine.tensor import make_generator
from ltc_rerank.exceptions import ConfigurationError, DivergenceError
from ltc_rerank.pointwise.loss import group_ce_loss
from ltc_rerank.settings import Settings
from ltc_rerank.utils.dataset import SynthExample, synth_task_gen
from ltc_rerank.utils.tracking import RunTracker


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters of compression-aware pointwise training on the synthetic task."""

    epochs: int = 6
    batch_size: int = 4
    learning_rate: float = 0.05
    num_negatives: int = 5
    ltc: LtcConfig = field(default_factory=LtcConfig.disabled)
    seed: int = 0
    num_train: int = 384
    num_heldout: int = 128
    doc_len: int = 32
    momentum: float = 0.9
    max_grad_norm: float = 1.0

    def __post_init__(self):
        if self.num_negatives < 1:
            raise ConfigurationError(f"Need at least one negative per query, got {self.num_negatives}.")
        if not self.learning_rate > 0:
            raise ConfigurationError(f"Learning rate must be positive, got {self.learning_rate}.")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigurationError(
                f"Epochs and batch size must be positive, got {self.epochs} and {self.batch_size}."
            )
        if self.num_train < 1:
            raise ConfigurationError(f"Need at least one training query, got {self.num_train}.")

    def train_examples(self, vocab_size: int, num_identifiers: int) -> list[SynthExample]:
        return synth_task_gen(
            self.seed,
            self.num_train,
            self.doc_len,
            self.num_negatives,
            vocab_size=vocab_size,
            num_identifiers=num_identifiers,
        )

    def heldout_examples(self, vocab_size: int, num_identifiers: int, doc_len: int | None = None) -> list[SynthExample]:
        # Held-out data comes from the next seed so it never overlaps the training draws
        return synth_task_gen(
            self.seed + 1,
            self.num_heldout,
            doc_len or self.doc_len,
            self.num_negatives,
            vocab_size=vocab_size,
            num_identifiers=num_identifiers,
        )


@dataclass
class EpochLog:
    epoch: int
    loss: float
    heldout_acc: float


def group_scores(model: RerankerTransformer, example: SynthExample, ltc: LtcConfig | None = None) -> torch.Tensor:
    """Scores of the positive (index 0) and the negatives of one example."""
    return torch.stack([model.pointwise_score(example.query, doc, ltc) for doc in example.documents])


def backward(
    loss: torch.Tensor, model: torch.nn.Module, grad_output: torch.Tensor | None = None
) -> dict[str, torch.Tensor]:
    """Gradients of `loss` for every named parameter of `model`. Parameters the loss does not reach get zeros."""
    names, params = zip(*model.named_parameters())
    grads = torch.autograd.grad(loss, params, grad_outputs=grad_output, allow_unused=True, retain_graph=True)
    return {name: torch.zeros_like(p) if g is None else g for name, p, g in zip(names, params, grads)}


def pairwise_accuracy(
    model: RerankerTransformer, examples: Sequence[SynthExample], ltc: LtcConfig | None = None
) -> float:
    """Fraction of examples whose positive strictly outscores every negative."""
    if not examples:
        return 0.0
    correct = 0
    with torch.no_grad():
        for example in examples:
            scores = group_scores(model, example, ltc)
            correct += bool((scores[0] > scores[1:]).all())
    return correct / len(examples)


class PointwiseTrainer:
    """Trains the score head and the transformer with group cross-entropy, compression active in every forward pass
    when `train_cfg.ltc` is enabled.
    """

    def __init__(
        self,
        train_cfg: TrainConfig,
        model_cfg: ModelConfig | None = None,
        settings: Settings | None = None,
    ):
        self.train_cfg = train_cfg
        self.model_cfg = model_cfg or ModelConfig()
        self.settings = settings or Settings()
        self.settings.verify()
        train_cfg.ltc.validate(self.model_cfg.num_layers)

        self.model = RerankerTransformer(self.model_cfg, seed=train_cfg.seed)
        self.optimizer = torch.optim.SGD(
            self.model.parameters(), lr=train_cfg.learning_rate, momentum=train_cfg.momentum
        )
        self.train_examples = train_cfg.train_examples(self.model_cfg.vocab_size, self.model_cfg.num_identifiers)
        self.heldout_examples = train_cfg.heldout_examples(self.model_cfg.vocab_size, self.model_cfg.num_identifiers)
        self.history: list[EpochLog] = []
        self._generator = make_generator(train_cfg.seed)
        self._tracker = RunTracker(self.settings, DEFAULT_TRAIN_RUN_DESCRIPTION)
        self._tracker.set_parameters(self._parameters())

    def _parameters(self) -> dict:
        train = {k: v for k, v in asdict(self.train_cfg).items() if k != "ltc"}
        return {
            **train,
            "ltc_target_layer": self.train_cfg.ltc.target_layer,
            "ltc_rate": self.train_cfg.ltc.rate,
            **{f"model/{k}": v for k, v in asdict(self.model_cfg).items()},
        }

    def _batches(self) -> Iterable[list[SynthExample]]:
        order = torch.randperm(len(self.train_examples), generator=self._generator).tolist()
        size = self.train_cfg.batch_size
        for start in range(0, len(order), size):
            yield [self.train_examples[i] for i in order[start : start + size]]

    def train_epoch(self, epoch: int) -> float:
        """Run one pass over the training set and return the mean per-example loss."""
        self.model.train()
        ltc = self.train_cfg.ltc
        total, count = 0.0, 0
        for batch_index, batch in enumerate(self._batches()):
            losses = [group_ce_loss(group_scores(self.model, example, ltc), 0) for example in batch]
            loss = torch.stack(losses).mean()
            if not math.isfinite(loss.item()):
                raise DivergenceError(
                    f"Loss became {loss.item()} at epoch {epoch}, batch {batch_index} "
                    f"(learning_rate={self.train_cfg.learning_rate}, {ltc}). Try a lower learning rate."
                )

            self.optimizer.zero_grad()
            loss.backward()
            if self.train_cfg.max_grad_norm > 0:
                torch.nn.utils.clip_grad_norm_(self.model.parameters(), self.train_cfg.max_grad_norm)
            self.optimizer.step()

            total += loss.item() * len(batch)
            count += len(batch)
        self.model.eval()
        return total / count

    def train(self, log_path: str | Path | None = None) -> RerankerTransformer:
        """Train for `epochs` epochs, evaluating held-out pairwise accuracy after each one.

        :param log_path: Optional path of the per-epoch `epoch<TAB>loss<TAB>heldout_acc` log.
        :raises DivergenceError: If the loss becomes non-finite.
        """
        LOGGER.info(
            f"{LTC_COLORSTR}Training on {len(self.train_examples)} synthetic queries for {self.train_cfg.epochs} "
            f"epochs with {self.train_cfg.ltc}"
        )
        epochs = range(1, self.train_cfg.epochs + 1)
        for epoch in TQDM(epochs, desc=f"{LTC_COLORSTR}Training", disable=not self.settings.progress):
            loss = self.train_epoch(epoch)
            accuracy = pairwise_accuracy(self.model, self.heldout_examples, self.train_cfg.ltc)
            self.history.append(EpochLog(epoch, loss, accuracy))
            self._tracker.add_output_value({"epoch": epoch, "loss": loss, "heldout_acc": accuracy})
            LOGGER.info(f"{LTC_COLORSTR}epoch {epoch}: loss={loss:.4f} heldout_acc={accuracy:.3f}")
            if log_path is not None:
                self.save_log(log_path)

        self._tracker.complete()
        return self.model

    def save_log(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            f.write("epoch\tloss\theldout_acc\n")
            f.writelines(f"{e.epoch}\t{e.loss:.6f}\t{e.heldout_acc:.4f}\n" for e in self.history)


def train(
    train_cfg: TrainConfig,
    model_cfg: ModelConfig | None = None,
    settings: Settings | None = None,
    log_path: str | Path | None = None,
) -> tuple[RerankerTransformer, list[EpochLog]]:
    """Train a reranker and return it with its per-epoch log."""
    trainer = PointwiseTrainer(train_cfg, model_cfg, settings)
    model = trainer.train(log_path)
    return model, trainer.history


@dataclass(frozen=True)
class AblationResult:
    """Held-out pairwise accuracy for each (training, evaluation) compression combination."""

    ltc: LtcConfig
    trained_with_eval_with: float
    trained_with_eval_without: float
    trained_without_eval_with: float
    trained_without_eval_without: float

    @property
    def compression_aware_gain(self) -> float:
        """Accuracy gained by training with compression, both evaluated with it."""
        return self.trained_with_eval_with - self.trained_without_eval_with


def compression_ablation(
    train_cfg: TrainConfig,
    ltc: LtcConfig,
    model_cfg: ModelConfig | None = None,
    settings: Settings | None = None,
) -> AblationResult:
    """Train one model with `ltc` and one without, then evaluate both with and without compression."""
    model_cfg = model_cfg or ModelConfig()
    with_ltc, _ = train(replace(train_cfg, ltc=ltc), model_cfg, settings)
    without_ltc, _ = train(replace(train_cfg, ltc=LtcConfig.disabled()), model_cfg, settings)
    heldout = train_cfg.heldout_examples(model_cfg.vocab_size, model_cfg.num_identifiers)

    return AblationResult(
        ltc=ltc,
        trained_with_eval_with=pairwise_accuracy(with_ltc, heldout, ltc),
        trained_with_eval_without=pairwise_accuracy(with_ltc, heldout),
        trained_without_eval_with=pairwise_accuracy(without_ltc, heldout, ltc),
        trained_without_eval_without=pairwise_accuracy(without_ltc, heldout),
    )


def inference_only_grid(
    model: RerankerTransformer,
    examples: Sequence[SynthExample],
    layers: Sequence[int],
    rates: Sequence[float] = DEFAULT_RATES,
) -> pd.DataFrame:
    """Pairwise accuracy of one model under every (target layer, rate) compression it was not trained with.

    :returns: A frame indexed by target layer with one column per rate.
    """
    rows = {}
    for layer in layers:
        rows[layer] = {rate: pairwise_accuracy(model, examples, LtcConfig(layer, rate)) for rate in rates}
    frame = pd.DataFrame.from_dict(rows, orient="index")
    frame.index.name = "target_layer"
    frame.columns.name = "rate"
    return frame


def length_generalization(
    model: RerankerTransformer, train_cfg: TrainConfig, eval_doc_len: int, ltc: LtcConfig | None = None
) -> float:
    """Held-out pairwise accuracy on documents of `eval_doc_len` words, longer than those trained on."""
    cfg = model.config
    examples = train_cfg.heldout_examples(cfg.vocab_size, cfg.num_identifiers, doc_len=eval_doc_len)
    return pairwise_accuracy(model, examples, ltc)
