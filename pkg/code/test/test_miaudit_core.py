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
"""Unit test for miaudit_core."""

from __future__ import annotations

import unittest

import common
import miaudit_core
import numpy as np


def make_dataset(num_fixed: int = 4, num_audit: int = 6, dim: int = 3) -> miaudit_core.Dataset:
    rng = np.random.default_rng(0)
    fixed = [
        miaudit_core.Example(rng.standard_normal(dim), i % 2, i) for i in range(num_fixed)
    ]
    audit = [
        miaudit_core.Example(rng.standard_normal(dim), j % 2, 100 + j) for j in range(num_audit)
    ]
    return miaudit_core.Dataset(tuple(fixed), tuple(audit), 2, dim)


class TestExample(unittest.TestCase):
    def test_valid_example(self) -> None:
        """Verify features are stored read-only as floats."""
        example = miaudit_core.Example([1, 2], 0, 7)
        self.assertEqual(np.float64, example.features.dtype)
        with self.assertRaises(ValueError):
            example.features[0] = 3.0

    def test_invalid_examples(self) -> None:
        """Verify non-finite features, negative labels and matrices are rejected."""
        with self.assertRaises(common.ValidationError):
            miaudit_core.Example([1.0, np.nan], 0, 0)
        with self.assertRaises(common.ValidationError):
            miaudit_core.Example([1.0, 2.0], -1, 0)
        with self.assertRaises(common.ValidationError):
            miaudit_core.Example(np.zeros((2, 2)), 0, 0)

    def test_relabeled_keeps_id(self) -> None:
        """Verify relabeling keeps features and id."""
        example = miaudit_core.Example([1.0, 2.0], 0, 5)
        relabeled = example.relabeled(1)
        self.assertEqual(5, relabeled.id)
        self.assertEqual(1, relabeled.label)
        self.assertNotEqual(example, relabeled)
        self.assertEqual(example, miaudit_core.Example([1.0, 2.0], 0, 5))


class TestDataset(unittest.TestCase):
    def test_rejects_duplicate_ids(self) -> None:
        """Verify ids must be unique across fixed and audit examples."""
        example = miaudit_core.Example([0.0, 0.0], 0, 1)
        with self.assertRaises(common.ValidationError):
            miaudit_core.Dataset((example,), (example,), 2, 2)

    def test_rejects_bad_labels_and_dims(self) -> None:
        """Verify labels must be below K and dimensions must match."""
        with self.assertRaises(common.ValidationError):
            miaudit_core.Dataset((), (miaudit_core.Example([0.0, 0.0], 2, 1),), 2, 2)
        with self.assertRaises(common.ValidationError):
            miaudit_core.Dataset((), (miaudit_core.Example([0.0], 0, 1),), 2, 2)

    def test_rejects_empty_audit(self) -> None:
        """Verify at least one audit example is required."""
        with self.assertRaises(common.ValidationError):
            miaudit_core.Dataset((miaudit_core.Example([0.0], 0, 1),), (), 2, 1)

    def test_next_id_and_with_audit(self) -> None:
        """Verify next_id and audit replacement."""
        dataset = make_dataset()
        self.assertEqual(106, dataset.next_id())
        replaced = miaudit_core.with_audit(dataset, dataset.audit[:2])
        self.assertEqual(2, replaced.num_audit)
        self.assertEqual(dataset.fixed, replaced.fixed)


class TestMembership(unittest.TestCase):
    def test_assign_memberships_balanced(self) -> None:
        """Verify every column is included in exactly half the models."""
        membership = miaudit_core.assign_memberships(64, 500, seed=1)
        self.assertEqual((64, 500), membership.bits.shape)
        self.assertTrue(np.all(membership.bits.sum(axis=0) == 32))

    def test_assign_memberships_deterministic(self) -> None:
        """Verify identical seeds give identical matrices and different seeds differ."""
        first = miaudit_core.assign_memberships(8, 50, seed=3)
        second = miaudit_core.assign_memberships(8, 50, seed=3)
        other = miaudit_core.assign_memberships(8, 50, seed=4)
        np.testing.assert_array_equal(first.bits, second.bits)
        self.assertFalse(np.array_equal(first.bits, other.bits))

    def test_assign_memberships_two_models(self) -> None:
        """Verify S=2 gives complementary rows."""
        membership = miaudit_core.assign_memberships(2, 10, seed=0)
        np.testing.assert_array_equal(membership.bits[0], ~membership.bits[1])

    def test_assign_memberships_rejects(self) -> None:
        """Verify odd S, S < 2 and C < 1 are rejected."""
        with self.assertRaises(common.BalanceError):
            miaudit_core.assign_memberships(7, 10, seed=0)
        with self.assertRaises(common.BalanceError):
            miaudit_core.assign_memberships(0, 10, seed=0)
        with self.assertRaises(common.ValidationError):
            miaudit_core.assign_memberships(4, 0, seed=0)

    def test_membership_matrix_checks_columns(self) -> None:
        """Verify unbalanced columns raise a balance error."""
        with self.assertRaises(common.BalanceError):
            miaudit_core.MembershipMatrix(np.array([[1, 1], [1, 0]], dtype=bool))

    def test_training_set_for(self) -> None:
        """Verify fixed examples come first, then included audit examples in order."""
        dataset = make_dataset()
        membership = miaudit_core.assign_memberships(4, dataset.num_audit, seed=2)
        train = miaudit_core.training_set_for(dataset, membership, 1)
        self.assertEqual(dataset.fixed, train[: len(dataset.fixed)])
        expected = [e for j, e in enumerate(dataset.audit) if membership.bits[1, j]]
        self.assertEqual(expected, list(train[len(dataset.fixed) :]))
        with self.assertRaises(common.ValidationError):
            miaudit_core.training_set_for(dataset, membership, 4)


class TestScoreTensor(unittest.TestCase):
    def test_shape_checks(self) -> None:
        """Verify shape, variant names and finiteness are validated."""
        with self.assertRaises(common.ValidationError):
            miaudit_core.ScoreTensor(np.zeros((2, 3)), ('a',))
        with self.assertRaises(common.ValidationError):
            miaudit_core.ScoreTensor(np.zeros((2, 3, 2)), ('a',))
        with self.assertRaises(common.ValidationError):
            miaudit_core.ScoreTensor(np.full((2, 3, 1), np.inf), ('a',))

    def test_variant_and_slice(self) -> None:
        """Verify the variant and model slicing accessors."""
        values = np.arange(24, dtype=float).reshape(2, 3, 4)
        tensor = miaudit_core.ScoreTensor(values, ('a', 'b', 'c', 'd'))
        self.assertEqual((2, 3, 1), tensor.variant(2).shape)
        self.assertEqual(('c',), tensor.variant(2).variant_names)
        np.testing.assert_array_equal(values[[1]], tensor.slice_models([1]).values)

    def test_check_matches(self) -> None:
        """Verify a tensor must cover the membership matrix."""
        tensor = miaudit_core.ScoreTensor(np.zeros((4, 3, 1)), ('a',))
        with self.assertRaises(common.ValidationError):
            tensor.check_matches(miaudit_core.assign_memberships(4, 5, seed=0))
        tensor.check_matches(miaudit_core.assign_memberships(4, 3, seed=0))
