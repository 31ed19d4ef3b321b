# Copyright 2024, Clumio, a Commvault Company.
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#    http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.

"""Desk-scale trainers and wrappers implementing the audited defense mechanisms."""

from __future__ import annotations

import dataclasses
import logging
from collections.abc import Callable, Mapping, Sequence
from typing import TYPE_CHECKING, Any, Final

import numpy as np
from common import (
    NORMALIZATION_TOLERANCE,
    AttackError,
    ConfigError,
    TrainingError,
    ValidationError,
)
from miaudit_core import Example, ModelKind, stack_examples
from miaudit_models import (
    AugmentationPolicy,
    DenseNet,
    SoftmaxModel,
    build_net,
    cross_entropy,
    entropy,
    one_hot,
)
from scipy import special
from utils import seeds

if TYPE_CHECKING:
    GradFn = Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]

# Slack allowed on the clipping and ascent invariants for floating point rounding.
INVARIANT_RTOL: Final = 1e-12

logger = logging.getLogger(__name__)


@dataclasses.dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 64
    learning_rate: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 5e-4
    seed: int = 0
    hidden_width: int = 64
    augment: bool = False
    noise_std: float = 0.1
    flip_prob: float = 0.0
    # Shared by every model of an experiment so the flip mask is identical across the fleet.
    augmentation_seed: int = 0
    debug_checks: bool = False

    def __post_init__(self) -> None:
        if self.epochs < 1:
            raise ValidationError(f'epochs must be >= 1, got {self.epochs}')
        if self.batch_size < 1:
            raise ValidationError(f'batch_size must be >= 1, got {self.batch_size}')
        if self.learning_rate < 0:
            raise ValidationError(f'learning_rate must be >= 0, got {self.learning_rate}')
        if self.hidden_width < 1:
            raise ValidationError(f'hidden_width must be >= 1, got {self.hidden_width}')

    @property
    def policy(self) -> AugmentationPolicy:
        return AugmentationPolicy(self.noise_std, self.flip_prob, self.augmentation_seed)

    def with_seed(self, seed: int) -> Any:
        return dataclasses.replace(self, seed=seed)


@dataclasses.dataclass(frozen=True)
class DpSgdConfig(TrainConfig):
    clip_norm: float = 1.0
    noise_multiplier: float = 0.0

    def __post_init__(self) -> None:
        super().__post_init__()
        if self.clip_norm <= 0:
            raise ValidationError(f'clip_norm must be > 0, got {self.clip_norm}')
        if self.noise_multiplier < 0:
            raise ValidationError(f'noise_multiplier must be >= 0, got {self.noise_multiplier}')


@dataclasses.dataclass(frozen=True)
class RelaxLossConfig(TrainConfig):
    loss_threshold: float = 0.5

    def __post_init__(self) -> None:
        super().__post_init__()
        if self.loss_threshold < 0:
            raise ValidationError(f'loss_threshold must be >= 0, got {self.loss_threshold}')


@dataclasses.dataclass(frozen=True)
class HampConfig(TrainConfig):
    entropy_smoothing: float = 0.0
    entropy_reg: float = 0.0
    masking: bool = True

    def __post_init__(self) -> None:
        super().__post_init__()
        if not 0 <= self.entropy_smoothing < 1:
            raise ValidationError(
                f'entropy_smoothing must be in [0, 1), got {self.entropy_smoothing}'
            )
        if self.entropy_reg < 0:
            raise ValidationError(f'entropy_reg must be >= 0, got {self.entropy_reg}')


@dataclasses.dataclass(frozen=True)
class SelenaConfig(TrainConfig):
    num_teachers: int = 5
    queries_per_sample: int = 2
    distill_epochs: int = 30
    query_surface: str = 'student'

    def __post_init__(self) -> None:
        super().__post_init__()
        if not 1 <= self.queries_per_sample < self.num_teachers:
            raise ValidationError(
                f'queries_per_sample must satisfy 1 <= L < K, got L={self.queries_per_sample}, '
                f'K={self.num_teachers}'
            )
        if self.query_surface not in ('student', 'split-ai'):
            raise ValidationError(f'unknown SELENA query surface {self.query_surface!r}')


@dataclasses.dataclass(frozen=True)
class ContrastiveConfig(TrainConfig):
    embedding_dim: int = 16
    temperature: float = 0.5
    pretrain_epochs: int = 30
    head_epochs: int = 30
    flip_prob: float = 0.25

    def __post_init__(self) -> None:
        super().__post_init__()
        if self.temperature <= 0:
            raise ValidationError(f'temperature must be > 0, got {self.temperature}')
        if self.embedding_dim < 1:
            raise ValidationError(f'embedding_dim must be >= 1, got {self.embedding_dim}')


def _sgd(
    net: DenseNet,
    features: np.ndarray,
    targets: np.ndarray,
    cfg: TrainConfig,
    grad_fn: GradFn,
    epochs: int | None = None,
) -> tuple[np.ndarray, int]:
    """Mini-batch SGD with momentum and weight decay; returns final parameters and steps."""
    params = net.init_params(seeds.rng_for(cfg.seed, 'init'))
    shuffle_rng = seeds.rng_for(cfg.seed, 'shuffle')
    augment_rng = seeds.rng_for(cfg.seed, 'augment')
    policy = cfg.policy
    velocity = np.zeros_like(params)
    num_rows = features.shape[0]
    steps = 0
    for _ in range(epochs or cfg.epochs):
        order = shuffle_rng.permutation(num_rows)
        for start in range(0, num_rows, cfg.batch_size):
            rows = order[start : start + cfg.batch_size]
            batch = features[rows]
            if cfg.augment:
                batch = policy.apply(batch, augment_rng)
            grad = grad_fn(params, batch, targets[rows])
            velocity = cfg.momentum * velocity + grad + cfg.weight_decay * params
            params = params - cfg.learning_rate * velocity
            steps += 1
    if not np.all(np.isfinite(params)):
        raise TrainingError('training diverged to non-finite parameters')
    return params, steps


def _cross_entropy_grad_fn(net: DenseNet) -> GradFn:
    def grad_fn(params: np.ndarray, batch: np.ndarray, targets: np.ndarray) -> np.ndarray:
        out, hidden = net.forward(params, batch)
        d_out = special.softmax(out, axis=1) - targets
        return net.per_example_grads(params, batch, hidden, d_out).mean(axis=0)

    return grad_fn


def _prepare(
    train: Sequence[Example], num_classes: int | None
) -> tuple[np.ndarray, np.ndarray, int]:
    if not train:
        raise TrainingError('cannot train on an empty training set')
    features, labels = stack_examples(train)
    num_classes = num_classes or int(labels.max()) + 1
    return features, labels, num_classes


def train_undefended(
    train: Sequence[Example],
    cfg: TrainConfig,
    kind: ModelKind | str = ModelKind.MLP_1HIDDEN,
    num_classes: int | None = None,
) -> SoftmaxModel:
    """Train with plain mini-batch SGD on cross-entropy."""
    features, labels, num_classes = _prepare(train, num_classes)
    net = build_net(kind, features.shape[1], num_classes, cfg.hidden_width)
    params, steps = _sgd(
        net, features, one_hot(labels, num_classes), cfg, _cross_entropy_grad_fn(net)
    )
    return SoftmaxModel(net, params, cfg.seed, mechanism={'defense': 'undefended', 'steps': steps})


def train_dpsgd(
    train: Sequence[Example],
    cfg: DpSgdConfig,
    kind: ModelKind | str = ModelKind.MLP_1HIDDEN,
    num_classes: int | None = None,
    norm_hook: Callable[[np.ndarray], None] | None = None,
) -> SoftmaxModel:
    """Train with per-example clipping and Gaussian noise on the mean clipped gradient.

    Args:
        train: The training examples.
        cfg: Training configuration with clip norm and noise multiplier.
        kind: The network kind.
        num_classes: Number of classes, inferred from the labels when omitted.
        norm_hook: Called every step with the clipped per-example gradient norms.
    """
    features, labels, num_classes = _prepare(train, num_classes)
    net = build_net(kind, features.shape[1], num_classes, cfg.hidden_width)
    noise_rng = seeds.rng_for(cfg.seed, 'dp-noise')
    clip = cfg.clip_norm

    def grad_fn(params: np.ndarray, batch: np.ndarray, targets: np.ndarray) -> np.ndarray:
        out, hidden = net.forward(params, batch)
        d_out = special.softmax(out, axis=1) - targets
        per_example = net.per_example_grads(params, batch, hidden, d_out)
        norms = np.linalg.norm(per_example, axis=1)
        # Exactly 1.0 for gradients already inside the ball.
        scale = clip / np.maximum(norms, clip)
        clipped = per_example * scale[:, None]
        if cfg.debug_checks or norm_hook is not None:
            clipped_norms = np.linalg.norm(clipped, axis=1)
            if norm_hook is not None:
                norm_hook(clipped_norms)
            if cfg.debug_checks and np.any(clipped_norms > clip * (1 + INVARIANT_RTOL)):
                raise TrainingError(f'clipped gradient norm {clipped_norms.max()} exceeds {clip}')
        noise_std = cfg.noise_multiplier * clip / batch.shape[0]
        noise = noise_rng.normal(0.0, noise_std, size=per_example.shape[1])
        return clipped.mean(axis=0) + noise

    params, steps = _sgd(net, features, one_hot(labels, num_classes), cfg, grad_fn)
    logger.debug('DP-SGD finished %s steps with noise multiplier %s.', steps, cfg.noise_multiplier)
    mechanism = {
        'defense': 'dpsgd',
        'clip_norm': clip,
        'noise_multiplier': cfg.noise_multiplier,
        'batch_size': cfg.batch_size,
        'steps': steps,
    }
    return SoftmaxModel(net, params, cfg.seed, mechanism=mechanism)


def train_relaxloss(
    train: Sequence[Example],
    cfg: RelaxLossConfig,
    kind: ModelKind | str = ModelKind.MLP_1HIDDEN,
    num_classes: int | None = None,
    ascent_hook: Callable[[float], None] | None = None,
) -> SoftmaxModel:
    """Train while holding the batch loss near a target threshold.

    Above the threshold the step is plain descent. At or below it, correctly classified
    examples take an ascent step on cross-entropy while misclassified examples descend towards
    a flattened posterior (true-class probability kept, the rest spread uniformly). Any
    component of the flattening gradient that would undo the ascent is projected out.

    Args:
        train: The training examples.
        cfg: Training configuration with the loss threshold.
        kind: The network kind.
        num_classes: Number of classes, inferred from the labels when omitted.
        ascent_hook: Called on every modified step with the inner product between the step
            direction and the cross-entropy gradient of the correctly classified examples.
    """
    features, labels, num_classes = _prepare(train, num_classes)
    net = build_net(kind, features.shape[1], num_classes, cfg.hidden_width)
    threshold = cfg.loss_threshold
    modified_steps = 0

    def grad_fn(params: np.ndarray, batch: np.ndarray, targets: np.ndarray) -> np.ndarray:
        nonlocal modified_steps
        out, hidden = net.forward(params, batch)
        probs = special.softmax(out, axis=1)
        if cross_entropy(out, targets).mean() > threshold:
            d_out = probs - targets
            return net.per_example_grads(params, batch, hidden, d_out).mean(axis=0)

        modified_steps += 1
        batch_labels = np.argmax(targets, axis=1)
        correct = np.argmax(probs, axis=1) == batch_labels
        rows = np.arange(batch_labels.size)
        true_prob = probs[rows, batch_labels]
        flattened = np.repeat(((1.0 - true_prob) / (num_classes - 1))[:, None], num_classes, 1)
        flattened[rows, batch_labels] = true_prob
        d_correct = (probs - targets) * correct[:, None]
        d_flatten = (probs - flattened) * (~correct)[:, None]
        grad_correct = net.per_example_grads(params, batch, hidden, d_correct).mean(axis=0)
        grad_flatten = net.per_example_grads(params, batch, hidden, d_flatten).mean(axis=0)

        correct_sq = float(grad_correct @ grad_correct)
        conflict = float(grad_flatten @ grad_correct) - correct_sq
        if conflict > 0 and correct_sq > 0:
            grad_flatten = grad_flatten - (conflict / correct_sq) * grad_correct
        # The step moves along -(-grad_correct + grad_flatten).
        direction = grad_correct - grad_flatten
        if cfg.debug_checks or ascent_hook is not None:
            inner = float(direction @ grad_correct)
            if ascent_hook is not None:
                ascent_hook(inner)
            if cfg.debug_checks and inner < -INVARIANT_RTOL * max(correct_sq, 1.0):
                raise TrainingError(
                    f'modified RelaxLoss step descends on correct examples: {inner}'
                )
        return -direction

    params, steps = _sgd(net, features, one_hot(labels, num_classes), cfg, grad_fn)
    mechanism = {
        'defense': 'relaxloss',
        'loss_threshold': threshold,
        'steps': steps,
        'modified_steps': modified_steps,
    }
    return SoftmaxModel(net, params, cfg.seed, mechanism=mechanism)


def hamp_mask_batch(probabilities: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Replace each row by a random probability vector with the same class ranking."""
    probabilities = np.atleast_2d(np.asarray(probabilities, dtype=np.float64))
    sums = probabilities.sum(axis=1)
    if np.any(probabilities < 0) or np.any(np.abs(sums - 1.0) > NORMALIZATION_TOLERANCE):
        raise ValidationError('confidence masking needs normalized probability vectors')
    num_rows, num_classes = probabilities.shape
    draws = rng.dirichlet(np.ones(num_classes), size=num_rows)
    draws = -np.sort(-draws, axis=1)
    order = np.argsort(-probabilities, axis=1, kind='stable')
    masked = np.empty_like(draws)
    np.put_along_axis(masked, order, draws, axis=1)
    return masked


def hamp_mask(probabilities: np.ndarray, seed: int | np.random.Generator) -> np.ndarray:
    """Return a random confidence vector whose descending class order matches the input.

    Ties in the input are ranked by class index, so
    `argsort(-output, stable) == argsort(-input, stable)`.
    """
    rng = seed if isinstance(seed, np.random.Generator) else seeds.rng_for(seed, 'hamp-mask')
    return hamp_mask_batch(np.asarray(probabilities)[None, :], rng)[0]


class MaskedWrapper:
    """Test-time confidence masking around a trained model."""

    kind = ModelKind.MASKED_WRAPPER
    supports_logits = False

    def __init__(self, inner: SoftmaxModel, seed: int) -> None:
        self.inner = inner
        self.seed = seed
        self.num_classes = inner.num_classes
        self._rng = seeds.rng_for(seed, 'hamp-mask')

    def predict(self, features: np.ndarray) -> np.ndarray:
        probabilities = self.inner.predict(features)
        masked = hamp_mask_batch(probabilities, self._rng)
        return masked[0] if np.ndim(features) == 1 else masked

    def logits(self, features: np.ndarray) -> np.ndarray:
        raise AttackError('masked models expose only masked confidences, not logits')

    def mechanism_params(self) -> dict[str, Any]:
        return {**self.inner.mechanism_params(), 'masking': True}


def train_hamp(
    train: Sequence[Example],
    cfg: HampConfig,
    kind: ModelKind | str = ModelKind.MLP_1HIDDEN,
    num_classes: int | None = None,
) -> SoftmaxModel | MaskedWrapper:
    """Train towards high-entropy soft labels, then mask confidences at test time."""
    features, labels, num_classes = _prepare(train, num_classes)
    net = build_net(kind, features.shape[1], num_classes, cfg.hidden_width)
    smoothing = cfg.entropy_smoothing
    targets = (1.0 - smoothing) * one_hot(labels, num_classes) + smoothing / num_classes
    if cfg.entropy_reg:
        strength = cfg.entropy_reg

        def grad_fn(params: np.ndarray, batch: np.ndarray, batch_targets: np.ndarray) -> np.ndarray:
            out, hidden = net.forward(params, batch)
            probs = special.softmax(out, axis=1)
            log_probs = special.log_softmax(out, axis=1)
            # Gradient of -strength * H(p) with respect to the logits.
            d_entropy = strength * probs * (log_probs + entropy(probs)[:, None])
            d_out = probs - batch_targets + d_entropy
            return net.per_example_grads(params, batch, hidden, d_out).mean(axis=0)

    else:
        grad_fn = _cross_entropy_grad_fn(net)
    params, steps = _sgd(net, features, targets, cfg, grad_fn)
    mechanism = {
        'defense': 'hamp',
        'entropy_smoothing': smoothing,
        'entropy_reg': cfg.entropy_reg,
        'steps': steps,
    }
    model = SoftmaxModel(net, params, cfg.seed, mechanism=mechanism)
    if not cfg.masking:
        return model
    return MaskedWrapper(model, cfg.seed)


class SplitAiEnsemble:
    """Teachers answering each training query only with teachers that never saw it."""

    kind = ModelKind.SPLIT_AI_ENSEMBLE
    supports_logits = False

    def __init__(
        self,
        teachers: Sequence[SoftmaxModel],
        exclusions: Mapping[int, tuple[int, ...]],
        queries_per_sample: int,
        seed: int,
    ) -> None:
        self.teachers = tuple(teachers)
        self.exclusions = dict(exclusions)
        self.queries_per_sample = queries_per_sample
        self.seed = seed
        self.num_classes = self.teachers[0].num_classes

    def teachers_for(self, example_id: int) -> tuple[int, ...]:
        """Return the teacher indices averaged for an example id."""
        known = self.exclusions.get(example_id)
        if known is not None:
            return known
        rng = seeds.rng_for(self.seed, 'split-ai-unknown', example_id)
        chosen = rng.choice(len(self.teachers), self.queries_per_sample, replace=False)
        return tuple(sorted(int(i) for i in chosen))

    def predict_for_ids(self, ids: Sequence[int], features: np.ndarray) -> np.ndarray:
        features = np.atleast_2d(features)
        weights = np.zeros((len(ids), len(self.teachers)))
        for row, example_id in enumerate(ids):
            weights[row, list(self.teachers_for(example_id))] = 1.0 / self.queries_per_sample
        outputs = np.stack([teacher.predict(features) for teacher in self.teachers])
        return np.einsum('nk,knc->nc', weights, outputs)

    def predict(self, features: np.ndarray) -> np.ndarray:
        raise AttackError('Split-AI needs example ids; use predict_for_ids')

    def logits(self, features: np.ndarray) -> np.ndarray:
        raise AttackError('Split-AI exposes probabilities only')

    def mechanism_params(self) -> dict[str, Any]:
        return {
            'defense': 'selena',
            'num_teachers': len(self.teachers),
            'queries_per_sample': self.queries_per_sample,
        }


def split_ai_predict(ensemble: SplitAiEnsemble, x: Example) -> np.ndarray:
    """Average the soft predictions of the teachers assigned to an example."""
    return ensemble.predict_for_ids([x.id], x.features[None, :])[0]


class SelenaModel:
    """Distilled student plus the Split-AI ensemble it was distilled from."""

    kind = ModelKind.DISTILLED_STUDENT

    def __init__(
        self, student: SoftmaxModel, ensemble: SplitAiEnsemble, query_surface: str = 'student'
    ) -> None:
        self.student = student
        self.ensemble = ensemble
        self.query_surface = query_surface
        self.seed = student.seed
        self.num_classes = student.num_classes

    @property
    def supports_logits(self) -> bool:
        return self.query_surface == 'student'

    def predict(self, features: np.ndarray) -> np.ndarray:
        return self.student.predict(features)

    def logits(self, features: np.ndarray) -> np.ndarray:
        return self.student.logits(features)

    def predict_for_ids(self, ids: Sequence[int], features: np.ndarray) -> np.ndarray:
        if self.query_surface == 'split-ai':
            return self.ensemble.predict_for_ids(ids, features)
        return self.student.predict(np.atleast_2d(features))

    def mechanism_params(self) -> dict[str, Any]:
        return {
            **self.ensemble.mechanism_params(),
            'query_surface': self.query_surface,
            'steps': self.student.mechanism.get('steps', 0),
        }


def selena_exclusions(num_examples: int, cfg: SelenaConfig) -> np.ndarray:
    """Choose, for every example, the L teachers that must not train on it."""
    rng = seeds.rng_for(cfg.seed, 'selena-exclusion')
    keys = rng.random((num_examples, cfg.num_teachers))
    return np.sort(np.argsort(keys, axis=1, kind='stable')[:, : cfg.queries_per_sample], axis=1)


def train_selena(
    train: Sequence[Example],
    cfg: SelenaConfig,
    kind: ModelKind | str = ModelKind.MLP_1HIDDEN,
    num_classes: int | None = None,
) -> SelenaModel:
    """Train the teacher ensemble, query Split-AI on the training set and distill a student."""
    features, labels, num_classes = _prepare(train, num_classes)
    excluded = selena_exclusions(len(train), cfg)
    teachers = []
    for teacher_index in range(cfg.num_teachers):
        keep = ~np.any(excluded == teacher_index, axis=1)
        chunk = [example for example, kept in zip(train, keep, strict=True) if kept]
        teacher_cfg = cfg.with_seed(seeds.derive_seed(cfg.seed, 'teacher', teacher_index))
        teachers.append(
            train_undefended(chunk, teacher_cfg, kind=kind, num_classes=num_classes)
        )
    exclusions = {
        example.id: tuple(int(i) for i in row) for example, row in zip(train, excluded, strict=True)
    }
    ensemble = SplitAiEnsemble(teachers, exclusions, cfg.queries_per_sample, cfg.seed)
    soft_targets = ensemble.predict_for_ids([example.id for example in train], features)

    student_cfg = cfg.with_seed(seeds.derive_seed(cfg.seed, 'student'))
    net = build_net(kind, features.shape[1], num_classes, cfg.hidden_width)
    params, steps = _sgd(
        net, features, soft_targets, student_cfg, _cross_entropy_grad_fn(net), cfg.distill_epochs
    )
    logger.debug('Distilled SELENA student from %s teachers.', cfg.num_teachers)
    student = SoftmaxModel(
        net, params, cfg.seed, kind=ModelKind.DISTILLED_STUDENT, mechanism={'steps': steps}
    )
    return SelenaModel(student, ensemble, cfg.query_surface)


def nt_xent(outputs: np.ndarray, temperature: float) -> tuple[float, np.ndarray]:
    """NT-Xent loss over 2B rows where row i and row i + B form a positive pair.

    Returns:
        The mean loss over anchors and its gradient with respect to the outputs.
    """
    num_rows = outputs.shape[0]
    half = num_rows // 2
    norms = np.maximum(np.linalg.norm(outputs, axis=1, keepdims=True), 1e-12)
    z = outputs / norms
    similarity = z @ z.T / temperature
    np.fill_diagonal(similarity, -np.inf)
    positives = np.concatenate([np.arange(half, num_rows), np.arange(half)])
    rows = np.arange(num_rows)
    log_probs = special.log_softmax(similarity, axis=1)
    loss = float(-log_probs[rows, positives].mean())
    d_similarity = np.exp(log_probs)
    d_similarity[rows, positives] -= 1.0
    d_similarity /= num_rows
    d_z = (d_similarity + d_similarity.T) @ z / temperature
    d_outputs = (d_z - z * np.sum(z * d_z, axis=1, keepdims=True)) / norms
    return loss, d_outputs


class ContrastiveModel:
    """Self-supervised encoder with a linear classifier trained on frozen embeddings."""

    kind = ModelKind.CONTRASTIVE
    supports_logits = True

    def __init__(
        self, encoder: DenseNet, encoder_params: np.ndarray, head: SoftmaxModel, seed: int
    ) -> None:
        self.encoder = encoder
        self.encoder_params = np.array(encoder_params, dtype=np.float64)
        self.encoder_params.setflags(write=False)
        self.head = head
        self.seed = seed
        self.num_classes = head.num_classes
        self.mechanism: dict[str, Any] = {}

    def embed(self, features: np.ndarray) -> np.ndarray:
        out, _ = self.encoder.forward(self.encoder_params, np.atleast_2d(features))
        return out[0] if np.ndim(features) == 1 else out

    def logits(self, features: np.ndarray) -> np.ndarray:
        return self.head.logits(self.embed(features))

    def predict(self, features: np.ndarray) -> np.ndarray:
        return special.softmax(self.logits(features), axis=-1)

    def mechanism_params(self) -> dict[str, Any]:
        return {'defense': 'contrastive', **self.mechanism}


def pretrain_encoder(features: np.ndarray, cfg: ContrastiveConfig) -> tuple[DenseNet, np.ndarray]:
    """Fit the encoder with the contrastive loss on augmentation pairs; labels are never read."""
    if cfg.batch_size < 2:  # noqa: PLR2004
        raise ValidationError('contrastive pretraining needs batch_size >= 2 for negatives')
    policy = cfg.policy
    if policy.degenerate:
        raise ValidationError('contrastive pretraining needs a non-degenerate augmentation policy')
    encoder = DenseNet(features.shape[1], cfg.embedding_dim, cfg.hidden_width)
    pair_rng = seeds.rng_for(cfg.seed, 'contrastive-pairs')

    def grad_fn(params: np.ndarray, batch: np.ndarray, _: np.ndarray) -> np.ndarray:
        views = np.concatenate([policy.apply(batch, pair_rng), policy.apply(batch, pair_rng)])
        out, hidden = encoder.forward(params, views)
        _, d_out = nt_xent(out, cfg.temperature)
        return encoder.per_example_grads(params, views, hidden, d_out).sum(axis=0)

    encoder_cfg = dataclasses.replace(
        cfg, seed=seeds.derive_seed(cfg.seed, 'encoder'), augment=False
    )
    params, _ = _sgd(
        encoder, features, np.zeros((features.shape[0], 1)), encoder_cfg, grad_fn,
        cfg.pretrain_epochs,
    )
    return encoder, params


def train_contrastive(
    train: Sequence[Example], cfg: ContrastiveConfig, num_classes: int | None = None
) -> ContrastiveModel:
    """Pretrain an encoder without labels, then fit a linear head on frozen embeddings."""
    features, labels, num_classes = _prepare(train, num_classes)
    encoder, encoder_params = pretrain_encoder(features, cfg)
    embeddings, _ = encoder.forward(encoder_params, features)
    head_net = DenseNet(cfg.embedding_dim, num_classes)
    head_cfg = dataclasses.replace(cfg, seed=seeds.derive_seed(cfg.seed, 'head'), augment=False)
    head_params, steps = _sgd(
        head_net,
        embeddings,
        one_hot(labels, num_classes),
        head_cfg,
        _cross_entropy_grad_fn(head_net),
        cfg.head_epochs,
    )
    model = ContrastiveModel(
        encoder, encoder_params, SoftmaxModel(head_net, head_params, head_cfg.seed), cfg.seed
    )
    model.mechanism = {
        'embedding_dim': cfg.embedding_dim,
        'temperature': cfg.temperature,
        'head_steps': steps,
    }
    return model


DEFENSE_CONFIGS: Final[Mapping[str, type[TrainConfig]]] = {
    'undefended': TrainConfig,
    'dpsgd': DpSgdConfig,
    'relaxloss': RelaxLossConfig,
    'hamp': HampConfig,
    'selena': SelenaConfig,
    'contrastive': ContrastiveConfig,
}


def build_defense_config(defense_id: str, params: Mapping[str, Any]) -> TrainConfig:
    """Instantiate the configuration class registered for a defense id."""
    try:
        config_cls = DEFENSE_CONFIGS[defense_id]
    except KeyError as e:
        raise ConfigError(f'defense.id: unknown defense {defense_id!r}') from e
    known = {field.name for field in dataclasses.fields(config_cls)}
    unknown = sorted(set(params) - known)
    if unknown:
        raise ConfigError(f'defense.params: unknown keys {unknown} for {defense_id!r}')
    try:
        return config_cls(**params)
    except ValidationError as e:
        raise ConfigError(f'defense.params: {e}') from e


def train_defense(
    defense_id: str,
    train: Sequence[Example],
    cfg: TrainConfig,
    kind: ModelKind | str,
    num_classes: int,
) -> Any:
    """Train one model with the registered trainer for a defense id."""
    if defense_id == 'undefended':
        return train_undefended(train, cfg, kind, num_classes)
    if defense_id == 'dpsgd' and isinstance(cfg, DpSgdConfig):
        return train_dpsgd(train, cfg, kind, num_classes)
    if defense_id == 'relaxloss' and isinstance(cfg, RelaxLossConfig):
        return train_relaxloss(train, cfg, kind, num_classes)
    if defense_id == 'hamp' and isinstance(cfg, HampConfig):
        return train_hamp(train, cfg, kind, num_classes)
    if defense_id == 'selena' and isinstance(cfg, SelenaConfig):
        return train_selena(train, cfg, kind, num_classes)
    if defense_id == 'contrastive' and isinstance(cfg, ContrastiveConfig):
        return train_contrastive(train, cfg, num_classes)
    raise ConfigError(f'defense.id: no trainer for {defense_id!r} with {type(cfg).__name__}')
