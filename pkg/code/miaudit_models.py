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

"""Small dense networks with per-example gradients, softmax models and vector augmentations."""

from __future__ import annotations

import dataclasses
import logging
from collections.abc import Sequence
from typing import Any

import numpy as np
from common import PROBABILITY_CLAMP, ValidationError
from miaudit_core import Example, ModelKind, stack_examples
from scipy import special
from utils import seeds

logger = logging.getLogger(__name__)


@dataclasses.dataclass(frozen=True)
class AugmentationPolicy:
    """Vector stand-ins for image flips and shifts.

    A fixed random subset of coordinates (each included with `flip_prob`) is sign-flipped
    as a unit with probability 1/2, then isotropic Gaussian noise of `noise_std` is added.
    """

    noise_std: float = 0.1
    flip_prob: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.noise_std < 0:
            raise ValidationError(f'noise_std must be >= 0, got {self.noise_std}')
        if not 0 <= self.flip_prob <= 1:
            raise ValidationError(f'flip_prob must be in [0, 1], got {self.flip_prob}')

    @property
    def degenerate(self) -> bool:
        return self.noise_std == 0 and self.flip_prob == 0

    def flip_mask(self, dim: int) -> np.ndarray:
        return seeds.rng_for(self.seed, 'flip-mask', dim).random(dim) < self.flip_prob

    def apply(self, features: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        """Return one random augmentation of every row."""
        features = np.atleast_2d(features)
        signs = np.where(self.flip_mask(features.shape[1]), -1.0, 1.0)
        flips = rng.random(features.shape[0]) < 0.5  # noqa: PLR2004
        out = np.where(flips[:, None], features * signs, features)
        return out + self.noise_std * rng.standard_normal(features.shape)


@dataclasses.dataclass(frozen=True)
class FixedAugmentation:
    flip: bool
    offset: np.ndarray
    signs: np.ndarray

    def apply(self, features: np.ndarray) -> np.ndarray:
        out = features * self.signs if self.flip else features
        return out + self.offset

    @property
    def name(self) -> str:
        return f'flip={int(self.flip)},offset={float(np.linalg.norm(self.offset)):.4f}'


def fixed_augmentations(
    dim: int, count: int, policy: AugmentationPolicy, seed: int, offset_std: float | None = None
) -> tuple[FixedAugmentation, ...]:
    """Return `count` deterministic augmentations shared by every model of an experiment.

    The first augmentation is the identity. When the policy flips at least one coordinate,
    augmentations pair each of count/2 fixed offsets (the first one zero) with both flip
    states; otherwise every augmentation gets its own offset.
    """
    if count < 1:
        raise ValidationError(f'augmentation count must be positive, got {count}')
    scale = policy.noise_std if offset_std is None else offset_std
    rng = seeds.rng_for(seed, 'fixed-augmentations', dim)
    signs = np.where(policy.flip_mask(dim), -1.0, 1.0)
    flip_states = (False, True) if np.any(signs < 0) else (False,)
    num_offsets = -(-count // len(flip_states))
    offsets = scale * rng.standard_normal((num_offsets, dim))
    offsets[0] = 0.0
    augmentations = []
    for offset in offsets:
        for flip in flip_states:
            augmentations.append(FixedAugmentation(flip, offset, signs))
    return tuple(augmentations[:count])


@dataclasses.dataclass(frozen=True)
class DenseNet:
    """Linear map (hidden=0) or one-hidden-layer tanh network over a flat parameter vector."""

    in_dim: int
    out_dim: int
    hidden: int = 0

    @property
    def shapes(self) -> tuple[tuple[int, ...], ...]:
        if self.hidden:
            return (
                (self.in_dim, self.hidden),
                (self.hidden,),
                (self.hidden, self.out_dim),
                (self.out_dim,),
            )
        return (self.in_dim, self.out_dim), (self.out_dim,)

    @property
    def num_params(self) -> int:
        return sum(int(np.prod(shape)) for shape in self.shapes)

    def init_params(self, rng: np.random.Generator) -> np.ndarray:
        parts = []
        for shape in self.shapes:
            if len(shape) == 2:  # noqa: PLR2004
                parts.append(rng.standard_normal(shape).ravel() / np.sqrt(shape[0]))
            else:
                parts.append(np.zeros(shape))
        return np.concatenate(parts)

    def unpack(self, params: np.ndarray) -> list[np.ndarray]:
        views, start = [], 0
        for shape in self.shapes:
            size = int(np.prod(shape))
            views.append(params[start : start + size].reshape(shape))
            start += size
        return views

    def forward(self, params: np.ndarray, features: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Return the outputs and the hidden activations (the inputs for a linear net)."""
        if self.hidden:
            w1, b1, w2, b2 = self.unpack(params)
            hidden = np.tanh(features @ w1 + b1)
            return hidden @ w2 + b2, hidden
        w, b = self.unpack(params)
        return features @ w + b, features

    def per_example_grads(
        self, params: np.ndarray, features: np.ndarray, hidden: np.ndarray, d_out: np.ndarray
    ) -> np.ndarray:
        """Return one flattened parameter gradient per row given output gradients."""
        n = features.shape[0]
        if not self.hidden:
            d_w = np.einsum('bi,bo->bio', features, d_out).reshape(n, -1)
            return np.concatenate([d_w, d_out], axis=1)
        _, _, w2, _ = self.unpack(params)
        d_w2 = np.einsum('bh,bo->bho', hidden, d_out).reshape(n, -1)
        d_pre = (d_out @ w2.T) * (1.0 - hidden**2)
        d_w1 = np.einsum('bi,bh->bih', features, d_pre).reshape(n, -1)
        return np.concatenate([d_w1, d_pre, d_w2, d_out], axis=1)


def one_hot(labels: np.ndarray, num_classes: int) -> np.ndarray:
    targets = np.zeros((labels.size, num_classes))
    targets[np.arange(labels.size), labels] = 1.0
    return targets


def cross_entropy(logits: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """Per-row cross-entropy against (soft) target distributions."""
    return -np.sum(targets * special.log_softmax(logits, axis=1), axis=1)


def entropy(probabilities: np.ndarray) -> np.ndarray:
    clamped = np.clip(probabilities, PROBABILITY_CLAMP, 1.0)
    return -np.sum(probabilities * np.log(clamped), axis=1)


class SoftmaxModel:
    """A dense network whose outputs are class logits."""

    supports_logits = True

    def __init__(
        self,
        net: DenseNet,
        params: np.ndarray,
        seed: int,
        kind: ModelKind | None = None,
        mechanism: dict[str, Any] | None = None,
    ) -> None:
        self.net = net
        self.params = np.array(params, dtype=np.float64)
        self.params.setflags(write=False)
        self.seed = seed
        self.num_classes = net.out_dim
        self.kind = kind or (ModelKind.MLP_1HIDDEN if net.hidden else ModelKind.LINEAR_SOFTMAX)
        self.mechanism = dict(mechanism or {})

    def logits(self, features: np.ndarray) -> np.ndarray:
        batch = np.atleast_2d(features)
        out, _ = self.net.forward(self.params, batch)
        return out[0] if np.ndim(features) == 1 else out

    def predict(self, features: np.ndarray) -> np.ndarray:
        return special.softmax(self.logits(features), axis=-1)

    def mechanism_params(self) -> dict[str, Any]:
        return dict(self.mechanism)


def build_net(kind: ModelKind | str, in_dim: int, out_dim: int, hidden_width: int) -> DenseNet:
    """Return the network for a supervised model kind."""
    kind = ModelKind(kind)
    if kind == ModelKind.LINEAR_SOFTMAX:
        return DenseNet(in_dim, out_dim)
    if kind == ModelKind.MLP_1HIDDEN:
        return DenseNet(in_dim, out_dim, hidden_width)
    raise ValidationError(f'model kind {kind} is not a plain supervised network')


def test_accuracy(model: Any, examples: Sequence[Example]) -> float:
    """Return the argmax accuracy of a model on labeled examples."""
    if not examples:
        return float('nan')
    features, labels = stack_examples(examples)
    predictions = np.argmax(model.predict(features), axis=1)
    return float(np.mean(predictions == labels))
