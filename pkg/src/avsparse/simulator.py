"""Desk-scale synthetic workload for the sparsification strategies.

Each sample is a bag of visual and audio tokens. A few "salient" tokens per
modality carry the class prototype; the rest is isotropic noise. Planted hard
samples get a weaker prototype and more noise, so their loss stays above the
mean and loss-driven selection has something to find. The model is a linear
softmax classifier over mean-pooled tokens trained with minibatch SGD.

Compute is accounted as the number of tokens the classifier consumes over all
processed samples (the "compute proxy"), which is hardware independent. Tokens
entering the merge step (after masking) are tracked separately as
``encoder_tokens``, since merging itself still has to look at them.
"""

from __future__ import annotations

import csv
import io
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import InvalidInput
from .masking import MaskSchedule, TokenSet, apply_mask, mask_active, plan_mask
from .merging import AttentionInputs, prumerge
from .numeric import derive_rng, make_rng, sample_without_replacement
from .selection import (
    WARMUP_EPOCH,
    InfoBatchConfig,
    KeySubset,
    SelectionConfig,
    infobatch_step,
    run_selection,
)

# stream ids for derive_rng
_DATA, _TEST, _SHUFFLE, _MASK, _PRUNE, _CONTROL = range(6)


@dataclass(frozen=True)
class SyntheticDatasetSpec:
    n_samples: int = 2000
    n_test: int = 1000
    hard_fraction: float = 0.2
    tokens_per_sample: int = 32
    dim: int = 16
    n_classes: int = 4
    salient_fraction: float = 0.25
    margin_easy: float = 2.0
    margin_hard: float = 0.8
    noise_sigma_easy: float = 1.0
    noise_sigma_hard: float = 1.5
    query_scale: float = 4.0
    key_scale: float | None = None  # None means 1/sqrt(dim)
    seed: int = 0

    def __post_init__(self):
        if self.n_samples < 1 or self.n_test < 1:
            raise InvalidInput("dataset needs at least one train and one test sample")
        if self.n_classes < 2:
            raise InvalidInput(f"n_classes must be >= 2, got {self.n_classes}")
        if self.tokens_per_sample < 2 or self.dim < 1:
            raise InvalidInput("need tokens_per_sample >= 2 (one per modality) and dim >= 1")
        if not 0.0 <= self.hard_fraction <= 1.0:
            raise InvalidInput(f"hard_fraction must lie in [0, 1], got {self.hard_fraction}")
        if not 0.0 < self.salient_fraction <= 1.0:
            raise InvalidInput(f"salient_fraction must lie in (0, 1], got {self.salient_fraction}")
        if min(self.noise_sigma_easy, self.noise_sigma_hard) < 0:
            raise InvalidInput("noise sigmas must be non-negative")
        if self.key_scale is not None and not self.key_scale > 0:
            raise InvalidInput(f"key_scale must be positive, got {self.key_scale}")
        make_rng(self.seed)

    @property
    def resolved_key_scale(self) -> float:
        return 1.0 / math.sqrt(self.dim) if self.key_scale is None else self.key_scale

    @property
    def n_visual(self) -> int:
        return self.tokens_per_sample // 2

    @property
    def n_audio(self) -> int:
        return self.tokens_per_sample - self.n_visual


@dataclass
class Dataset:
    spec: SyntheticDatasetSpec
    tokens: np.ndarray  # (n, T, d); visual tokens first, then audio
    labels: np.ndarray
    hard: np.ndarray  # ground truth, only used to score recall
    test_tokens: np.ndarray
    test_labels: np.ndarray
    query: np.ndarray  # (n_classes, d) attention queries shared by all samples

    def __len__(self) -> int:
        return self.labels.shape[0]

    @property
    def hard_indices(self) -> np.ndarray:
        return np.flatnonzero(self.hard)


def _draw_split(spec, prototypes, n, rng):
    labels = rng.integers(spec.n_classes, size=n)
    hard = np.zeros(n, dtype=bool)
    hard[sample_without_replacement(n, math.floor(spec.hard_fraction * n), rng)] = True
    sigma = np.where(hard, spec.noise_sigma_hard, spec.noise_sigma_easy)
    margin = np.where(hard, spec.margin_hard, spec.margin_easy)
    tokens = rng.standard_normal((n, spec.tokens_per_sample, spec.dim)) * sigma[:, None, None]
    salient = np.zeros((n, spec.tokens_per_sample), dtype=bool)
    for lo, size in ((0, spec.n_visual), (spec.n_visual, spec.n_audio)):
        n_sal = max(1, round(spec.salient_fraction * size))
        for i in range(n):
            salient[i, lo + rng.choice(size, n_sal, replace=False)] = True
    tokens += salient[:, :, None] * (margin[:, None, None] * prototypes[labels][:, None, :])
    return tokens, labels, hard


def generate_dataset(spec: SyntheticDatasetSpec) -> Dataset:
    raw = derive_rng(spec.seed, _DATA).standard_normal((max(spec.dim, spec.n_classes), spec.n_classes))
    # orthonormal prototypes when n_classes <= dim, so difficulty does not hinge on the seed
    q, _ = np.linalg.qr(raw)
    proto = q[: spec.dim].T.copy()
    proto /= np.linalg.norm(proto, axis=1, keepdims=True)
    tokens, labels, hard = _draw_split(spec, proto, spec.n_samples, derive_rng(spec.seed, _DATA, 1))
    test_tokens, test_labels, _ = _draw_split(spec, proto, spec.n_test, derive_rng(spec.seed, _TEST))
    return Dataset(spec, tokens, labels, hard, test_tokens, test_labels, spec.query_scale * proto)


class ToyModel:
    """Linear softmax classifier over mean-pooled token features."""

    def __init__(self, dim: int, n_classes: int):
        self.weight = np.zeros((dim, n_classes))
        self.bias = np.zeros(n_classes)

    def logits(self, features: np.ndarray) -> np.ndarray:
        return features @ self.weight + self.bias

    def probs(self, features: np.ndarray) -> np.ndarray:
        z = self.logits(features)
        z = z - z.max(axis=1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=1, keepdims=True)

    def losses(self, features: np.ndarray, labels: np.ndarray) -> np.ndarray:
        z = self.logits(features)
        z = z - z.max(axis=1, keepdims=True)
        log_norm = np.log(np.exp(z).sum(axis=1))
        return log_norm - z[np.arange(len(labels)), labels]

    def sgd_step(self, features, labels, factors, lr: float) -> np.ndarray:
        """One step on ``mean(factor_i * loss_i)``; returns the unscaled per-sample losses."""
        p = self.probs(features)
        losses = -np.log(np.maximum(p[np.arange(len(labels)), labels], np.finfo(float).tiny))
        p[np.arange(len(labels)), labels] -= 1.0
        g = p * (factors / len(labels))[:, None]
        self.weight -= lr * (features.T @ g)
        self.bias -= lr * g.sum(axis=0)
        return losses

    def accuracy(self, features: np.ndarray, labels: np.ndarray) -> float:
        return float(np.mean(np.argmax(self.logits(features), axis=1) == labels))


@dataclass(frozen=True)
class PipelineConfig:
    """Which sparsification strategies a training run uses."""

    mask_ratio: float = 0.5
    mask_schedule: MaskSchedule | None = None
    merge: bool = False
    infobatch: InfoBatchConfig | None = None

    @classmethod
    def dense(cls) -> "PipelineConfig":
        return cls()

    @classmethod
    def full(cls, epochs: int = 15) -> "PipelineConfig":
        return cls(0.5, MaskSchedule(3), True, InfoBatchConfig(0.5, 0.875, epochs))

    def to_json(self) -> dict:
        masking = self.mask_schedule is not None
        return {
            "mask_ratio": self.mask_ratio if masking else None,
            "mask_active_epochs": self.mask_schedule.active_epochs if masking else None,
            "merge": self.merge,
            "infobatch": None if self.infobatch is None else asdict(self.infobatch),
        }


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 15
    lr: float = 0.5
    batch_size: int = 32

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or not self.lr > 0:
            raise InvalidInput("epochs and batch_size must be >= 1 and lr > 0")


@dataclass
class ExperimentReport:
    name: str
    pipeline: dict
    train: dict
    dataset: dict
    seed: int
    epoch_accuracy: list[float] = field(default_factory=list)
    epoch_train_loss: list[float] = field(default_factory=list)
    epoch_tokens: list[int] = field(default_factory=list)
    tokens_processed: int = 0
    encoder_tokens: int = 0
    samples_processed: int = 0
    gradient_steps: int = 0
    subset_indices: list[int] | None = None
    planted_hard_recall: float | None = None
    extra: dict = field(default_factory=dict)
    wall_clock_s: float = 0.0

    @property
    def compute_proxy(self) -> int:
        return self.tokens_processed

    @property
    def final_accuracy(self) -> float:
        return self.epoch_accuracy[-1]

    def to_json(self, include_timing: bool = False) -> dict:
        doc = {
            "name": self.name,
            "seed": self.seed,
            "dataset": self.dataset,
            "pipeline": self.pipeline,
            "train": self.train,
            "final_accuracy": self.final_accuracy,
            "compute_proxy": self.tokens_processed,
            "encoder_tokens": self.encoder_tokens,
            "samples_processed": self.samples_processed,
            "gradient_steps": self.gradient_steps,
            "epoch_accuracy": self.epoch_accuracy,
            "epoch_train_loss": self.epoch_train_loss,
            "epoch_tokens": self.epoch_tokens,
            "planted_hard_recall": self.planted_hard_recall,
            "subset_indices": self.subset_indices,
            **self.extra,
        }
        if include_timing:
            doc["wall_clock_s"] = self.wall_clock_s
        return doc

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["epoch", "accuracy", "train_loss", "tokens", "cumulative_tokens"])
        total = 0
        for e, (acc, loss, tok) in enumerate(zip(self.epoch_accuracy, self.epoch_train_loss, self.epoch_tokens)):
            total += tok
            w.writerow([e, repr(acc), repr(loss), tok, total])
        return buf.getvalue()


def _split_modalities(sample: np.ndarray, n_visual: int) -> tuple[TokenSet, TokenSet]:
    return (
        TokenSet.from_array("visual", sample[:n_visual]),
        TokenSet.from_array("audio", sample[n_visual:]),
    )


class _FeatureBuilder:
    """Applies masking and merging to samples and mean-pools the survivors."""

    def __init__(self, dataset: Dataset, pipeline: PipelineConfig):
        self.ds = dataset
        self.pipeline = pipeline
        self._merged_cache: dict[int, tuple[np.ndarray, int]] = {}

    def _reduce_tokens(self, sample: np.ndarray, rng=None) -> tuple[np.ndarray, int, int]:
        parts = []
        seen = 0
        for ts in _split_modalities(sample, self.ds.spec.n_visual):
            if rng is not None:
                ts = apply_mask(ts, plan_mask(len(ts), self.pipeline.mask_ratio, rng))
            seen += len(ts)
            if self.pipeline.merge and len(ts):
                # keys are a scaled copy of the tokens; queries absorb the scale so
                # attention logits do not depend on it, only the merge weights do
                ks = self.ds.spec.resolved_key_scale
                ts = prumerge(ts, AttentionInputs(self.ds.query / ks, ks * ts.tokens, ts.tokens)).merged
            parts.append(ts.tokens)
        tokens = np.concatenate(parts)
        return tokens.mean(axis=0), tokens.shape[0], seen

    def epoch_features(self, epoch: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
        """Features for every training sample at ``epoch``.

        Also returns an ``(n, 2)`` count array: tokens reaching the classifier
        and tokens reaching the merge step.
        """
        ds, pl = self.ds, self.pipeline
        masking = pl.mask_schedule is not None and mask_active(epoch, pl.mask_schedule)
        n = len(ds)
        if not masking and not pl.merge:
            return ds.tokens.mean(axis=1), np.full((n, 2), ds.spec.tokens_per_sample)
        feats = np.empty((n, ds.spec.dim))
        counts = np.empty((n, 2), dtype=np.int64)
        rng = derive_rng(seed, _MASK, epoch) if masking else None
        for i in range(n):
            if masking:
                feats[i], *counts[i] = self._reduce_tokens(ds.tokens[i], rng)
            else:
                if i not in self._merged_cache:
                    self._merged_cache[i] = self._reduce_tokens(ds.tokens[i])
                feats[i], *counts[i] = self._merged_cache[i]
        return feats, counts

    def test_features(self) -> np.ndarray:
        if not self.pipeline.merge:
            return self.ds.test_tokens.mean(axis=1)
        return np.stack([self._reduce_tokens(s)[0] for s in self.ds.test_tokens])


def train(
    dataset: Dataset,
    pipeline: PipelineConfig,
    epochs: int = 15,
    seed: int = 0,
    *,
    lr: float = 0.5,
    batch_size: int = 32,
    indices=None,
    name: str = "run",
) -> ExperimentReport:
    """Train the toy model and account for every token it consumes.

    ``indices`` restricts training to a subset of the dataset. InfoBatch
    decisions use each sample's most recent training loss; all samples start
    at the same score, so the first epoch is never pruned.
    """
    tc = TrainConfig(epochs, lr, batch_size)
    if pipeline.infobatch is not None and pipeline.infobatch.total_epochs != epochs:
        raise InvalidInput(
            f"infobatch total_epochs={pipeline.infobatch.total_epochs} but training runs {epochs} epochs"
        )
    pool = np.arange(len(dataset)) if indices is None else np.asarray(sorted(indices), dtype=np.int64)
    if pool.size == 0:
        raise InvalidInput("cannot train on an empty subset")
    if pool[0] < 0 or pool[-1] >= len(dataset) or np.unique(pool).size != pool.size:
        raise InvalidInput("subset indices must be distinct dataset indices")

    started = time.perf_counter()
    spec = dataset.spec
    model = ToyModel(spec.dim, spec.n_classes)
    builder = _FeatureBuilder(dataset, pipeline)
    test_x = builder.test_features()
    scores = np.ones(pool.size)
    report = ExperimentReport(
        name=name,
        pipeline=pipeline.to_json(),
        train=asdict(tc),
        dataset=asdict(spec),
        seed=seed,
    )
    if indices is not None:
        report.subset_indices = pool.tolist()
        n_hard = int(dataset.hard.sum())
        report.planted_hard_recall = float(dataset.hard[pool].sum() / n_hard) if n_hard else None

    for epoch in range(epochs):
        feats, counts = builder.epoch_features(epoch, seed)
        feats, counts = feats[pool], counts[pool]
        if pipeline.infobatch is None:
            order, factors = np.arange(pool.size), np.ones(pool.size)
        else:
            decision = infobatch_step(scores, pipeline.infobatch, epoch, derive_rng(seed, _PRUNE, epoch))
            order, factors = decision.kept, decision.rescale
        perm = derive_rng(seed, _SHUFFLE, epoch).permutation(order.size)
        order, factors = order[perm], factors[perm]
        epoch_tokens, encoder_tokens, loss_sum = 0, 0, 0.0
        for start in range(0, order.size, batch_size):
            b = order[start : start + batch_size]
            losses = model.sgd_step(feats[b], dataset.labels[pool[b]], factors[start : start + batch_size], lr)
            scores[b] = losses
            loss_sum += float(losses.sum())
            epoch_tokens += int(counts[b, 0].sum())
            encoder_tokens += int(counts[b, 1].sum())
            report.gradient_steps += 1
        report.samples_processed += int(order.size)
        report.tokens_processed += epoch_tokens
        report.encoder_tokens += encoder_tokens
        report.epoch_tokens.append(epoch_tokens)
        report.epoch_train_loss.append(loss_sum / order.size)
        report.epoch_accuracy.append(model.accuracy(test_x, dataset.test_labels))

    report.wall_clock_s = time.perf_counter() - started
    return report


class SelectionTrainer:
    """Loss provider for :func:`run_selection` backed by a live training run.

    Warm-up trains one dense epoch; each later epoch trains with InfoBatch
    pruning and then evaluates the loss of every sample, pruned or not.
    """

    def __init__(self, dataset: Dataset, infobatch: InfoBatchConfig | None, seed: int, lr=0.5, batch_size=32):
        self.ds = dataset
        self.infobatch = infobatch
        self.seed = seed
        self.lr = lr
        self.batch_size = batch_size
        self.model = ToyModel(dataset.spec.dim, dataset.spec.n_classes)
        self.features = dataset.tokens.mean(axis=1)
        self.last_losses = None
        self.gradient_steps = 0

    def _train_epoch(self, order, factors, stream_epoch):
        perm = derive_rng(self.seed, _SHUFFLE, stream_epoch).permutation(order.size)
        order, factors = order[perm], factors[perm]
        for start in range(0, order.size, self.batch_size):
            b = order[start : start + self.batch_size]
            self.model.sgd_step(self.features[b], self.ds.labels[b], factors[start : start + self.batch_size], self.lr)
            self.gradient_steps += 1

    def __call__(self, epoch: int) -> np.ndarray:
        n = len(self.ds)
        if epoch == WARMUP_EPOCH or self.infobatch is None:
            order, factors = np.arange(n), np.ones(n)
        else:
            d = infobatch_step(self.last_losses, self.infobatch, epoch, derive_rng(self.seed, _PRUNE, epoch))
            order, factors = d.kept, d.rescale
        # warm-up uses shuffle stream 0, epoch e uses stream e + 1
        self._train_epoch(order, factors, epoch + 1)
        self.last_losses = self.model.losses(self.features, self.ds.labels)
        return self.last_losses


def select_subset(
    dataset: Dataset,
    cfg: SelectionConfig,
    seed: int = 0,
    *,
    prune_ratio: float = 0.5,
    delta: float = 0.875,
    lr: float = 0.5,
    batch_size: int = 32,
) -> KeySubset:
    """Key-subset selection on the dataset with InfoBatch active and no masking or merging."""
    infobatch = InfoBatchConfig(prune_ratio, delta, cfg.epochs) if prune_ratio > 0 else None
    return run_selection(SelectionTrainer(dataset, infobatch, seed, lr, batch_size), cfg)


def random_subset(n: int, size: int, seed: int) -> np.ndarray:
    """Uniform control subset of the same size as a key subset."""
    return sample_without_replacement(n, size, derive_rng(seed, _CONTROL))


def planted_hard_recall(dataset: Dataset, indices) -> float:
    idx = np.asarray(list(indices), dtype=np.int64)
    return float(dataset.hard[idx].sum() / dataset.hard.sum())


def run_retention_experiment(
    dataset: Dataset,
    subset,
    epochs: int = 15,
    seed: int = 0,
    *,
    pipeline: PipelineConfig | None = None,
    lr: float = 0.5,
    batch_size: int = 32,
    full_report: ExperimentReport | None = None,
) -> ExperimentReport:
    """Train on ``subset`` only and compare with a paired full-data run.

    ``subset`` is a :class:`KeySubset` or any index collection. A precomputed
    ``full_report`` from the same dataset, seed and settings may be passed to
    avoid retraining the reference. Retention is reported both as a plain
    accuracy ratio and as the fraction of the above-chance gain kept.
    """
    pipeline = pipeline or PipelineConfig.dense()
    indices = subset.indices if isinstance(subset, KeySubset) else subset
    indices = [int(i) for i in indices]
    if not indices:
        raise InvalidInput("subset is empty")
    if full_report is None:
        full_report = train(dataset, pipeline, epochs, seed, lr=lr, batch_size=batch_size, name="full")
    report = train(dataset, pipeline, epochs, seed, lr=lr, batch_size=batch_size, indices=indices, name="subset")
    chance = 1.0 / dataset.spec.n_classes
    full_acc, sub_acc = full_report.final_accuracy, report.final_accuracy
    report.extra.update(
        full_accuracy=full_acc,
        retention_ratio=sub_acc / full_acc if full_acc > 0 else None,
        above_chance_retention=(sub_acc - chance) / (full_acc - chance) if full_acc > chance else None,
        subset_fraction=len(indices) / len(dataset),
    )
    return report
