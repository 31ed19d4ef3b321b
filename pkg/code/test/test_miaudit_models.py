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
"""Unit test for miaudit_models."""

from __future__ import annotations

import unittest

import common
import miaudit_models
import numpy as np
from miaudit_core import Example, ModelKind


class TestAugmentations(unittest.TestCase):
    def test_fixed_augmentations(self) -> None:
        """Verify the first augmentation is the identity and the set is reproducible."""
        policy = miaudit_models.AugmentationPolicy(noise_std=0.5, flip_prob=0.5, seed=1)
        augs = miaudit_models.fixed_augmentations(6, 5, policy, seed=2)
        again = miaudit_models.fixed_augmentations(6, 5, policy, seed=2)
        self.assertEqual(5, len(augs))
        x = np.arange(6, dtype=float)
        np.testing.assert_array_equal(x, augs[0].apply(x))
        for first, second in zip(augs, again, strict=True):
            np.testing.assert_array_equal(first.apply(x), second.apply(x))

    def test_no_flip_augmentations_are_distinct(self) -> None:
        """Verify a policy that flips nothing yields no repeated query variants."""
        policy = miaudit_models.AugmentationPolicy(noise_std=0.1, flip_prob=0.0)
        augs = miaudit_models.fixed_augmentations(4, 6, policy, seed=0)
        self.assertEqual(6, len(augs))
        self.assertFalse(any(aug.flip for aug in augs))
        x = np.ones(4)
        outputs = {tuple(aug.apply(x)) for aug in augs}
        self.assertEqual(6, len(outputs))
        np.testing.assert_array_equal(x, augs[0].apply(x))

    def test_flipping_policy_pairs_offsets(self) -> None:
        """Verify a flipping policy pairs every offset with both flip states."""
        policy = miaudit_models.AugmentationPolicy(noise_std=0.1, flip_prob=1.0)
        augs = miaudit_models.fixed_augmentations(4, 4, policy, seed=0)
        self.assertEqual([False, True, False, True], [aug.flip for aug in augs])
        np.testing.assert_array_equal(augs[0].offset, augs[1].offset)
        np.testing.assert_array_equal(-np.ones(4), augs[1].apply(np.ones(4)))

    def test_invalid_policy(self) -> None:
        """Verify negative noise and out-of-range flip probabilities are rejected."""
        with self.assertRaises(common.ValidationError):
            miaudit_models.AugmentationPolicy(noise_std=-1.0)
        with self.assertRaises(common.ValidationError):
            miaudit_models.AugmentationPolicy(flip_prob=1.5)
        with self.assertRaises(common.ValidationError):
            miaudit_models.fixed_augmentations(3, 0, miaudit_models.AugmentationPolicy(), 0)

    def test_degenerate_policy(self) -> None:
        """Verify a zero-noise, no-flip policy leaves features unchanged."""
        policy = miaudit_models.AugmentationPolicy(noise_std=0.0, flip_prob=0.0)
        self.assertTrue(policy.degenerate)
        x = np.ones((3, 4))
        np.testing.assert_array_equal(x, policy.apply(x, np.random.default_rng(0)))


class TestDenseNet(unittest.TestCase):
    def test_per_example_grads_match_finite_differences(self) -> None:
        """Verify analytic per-example gradients of the hidden-layer network."""
        net = miaudit_models.DenseNet(3, 2, hidden=4)
        rng = np.random.default_rng(0)
        params = net.init_params(rng)
        x = rng.standard_normal((1, 3))
        out, hidden = net.forward(params, x)
        # Gradient of the first output.
        d_out = np.array([[1.0, 0.0]])
        grads = net.per_example_grads(params, x, hidden, d_out)[0]
        eps = 1e-6
        for index in (0, 5, net.num_params - 1):
            bumped = params.copy()
            bumped[index] += eps
            numeric = (net.forward(bumped, x)[0][0, 0] - out[0, 0]) / eps
            self.assertAlmostEqual(numeric, grads[index], places=4)

    def test_linear_shapes(self) -> None:
        """Verify the linear network parameter layout."""
        net = miaudit_models.DenseNet(3, 2)
        self.assertEqual(8, net.num_params)
        self.assertEqual([(3, 2), (2,)], [v.shape for v in net.unpack(np.zeros(8))])


class TestLosses(unittest.TestCase):
    def test_cross_entropy_and_entropy(self) -> None:
        """Verify cross-entropy of equal logits and entropy of a uniform row."""
        logits = np.zeros((1, 4))
        targets = miaudit_models.one_hot(np.array([2]), 4)
        self.assertAlmostEqual(np.log(4), miaudit_models.cross_entropy(logits, targets)[0])
        self.assertAlmostEqual(np.log(4), miaudit_models.entropy(np.full((1, 4), 0.25))[0])
        self.assertAlmostEqual(0.0, miaudit_models.entropy(np.array([[1.0, 0.0]]))[0])


class TestSoftmaxModel(unittest.TestCase):
    def test_predict_and_accuracy(self) -> None:
        """Verify probabilities sum to one and accuracy is computed by argmax."""
        net = miaudit_models.build_net(ModelKind.LINEAR_SOFTMAX, 2, 2, hidden_width=0)
        # Logit k is feature k.
        params = np.array([1.0, 0.0, 0.0, 1.0, 0.0, 0.0])
        model = miaudit_models.SoftmaxModel(net, params, seed=0)
        probabilities = model.predict(np.array([[2.0, 0.0], [0.0, 1.0]]))
        np.testing.assert_allclose(np.ones(2), probabilities.sum(axis=1))
        self.assertEqual((2,), model.logits(np.array([1.0, 0.0])).shape)
        examples = [Example([2.0, 0.0], 0, 0), Example([0.0, 1.0], 1, 1), Example([3.0, 0.0], 1, 2)]
        self.assertAlmostEqual(2 / 3, miaudit_models.test_accuracy(model, examples))
        self.assertEqual(ModelKind.LINEAR_SOFTMAX, model.kind)

    def test_build_net_rejects_composite_kinds(self) -> None:
        """Verify only plain supervised kinds build a single network."""
        with self.assertRaises(common.ValidationError):
            miaudit_models.build_net(ModelKind.SPLIT_AI_ENSEMBLE, 2, 2, 4)
