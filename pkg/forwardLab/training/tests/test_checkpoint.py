"""
Tests for the binary checkpoint format.
"""
import struct
import tempfile
from pathlib import Path

import numpy as np
from numpy.testing import assert_array_equal
from django.test import SimpleTestCase

from datasets.dataset import Dataset
from datasets.evaluation import evaluate, extract_logits
from engine.exceptions import CheckpointError
from training.checkpoint import (
    MAGIC, load_checkpoint, open_checkpoint, read_checkpoint, restore_state, save_checkpoint
)
from training.config import arch_hash
from training.fusion import FusionHead
from training.trainer import build_state, train_step

from .factories import batches, tiny_arch, tiny_plan


class CheckpointTest(SimpleTestCase):
    """Test save_checkpoint, read_checkpoint and the restore helpers."""

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.path = Path(self.tmp.name) / 'checkpoint.fwl'
        self.arch = tiny_arch(dropout_p=0.1, norm='batchnorm', boundaries=(2,))
        self.plan = tiny_plan(self.arch, hgb_m=2)
        self.items = batches(self.arch, 4)
        self.state = build_state(self.arch, self.plan)
        for images, labels in self.items[:2]:
            train_step(self.state, images, labels)
        self.state.epoch = 1

    def tearDown(self):
        self.tmp.cleanup()

    def test_round_trip_restores_everything(self):
        fusion = FusionHead(alpha=np.array([0.25, -1.5]))
        save_checkpoint(self.path, self.state, fusion=fusion)

        restored, restored_fusion = load_checkpoint(self.path, self.arch, self.plan)

        self.assertEqual(restored.epoch, 1)
        self.assertEqual(restored.step, 2)
        assert_array_equal(restored_fusion.alpha, fusion.alpha)
        for name, param in self.state.network.named_parameters().items():
            assert_array_equal(restored.network.named_parameters()[name].data, param.data)
        for name, buffer in self.state.network.named_buffers().items():
            assert_array_equal(restored.network.named_buffers()[name], buffer)
        for original, loaded in zip(self.state.optimizers, restored.optimizers):
            self.assertEqual(loaded.step_count, original.step_count)
            for key, buffer in original.buffers.items():
                assert_array_equal(loaded.buffers[key], buffer)
        self.assertFalse(self.path.with_name('checkpoint.fwl.tmp').exists())

    def test_resumed_training_continues_identically(self):
        save_checkpoint(self.path, self.state)
        restored, _ = load_checkpoint(self.path, self.arch, self.plan)

        for images, labels in self.items[2:]:
            train_step(self.state, images, labels)
            train_step(restored, images, labels)

        for name, param in self.state.network.named_parameters().items():
            assert_array_equal(restored.network.named_parameters()[name].data, param.data, err_msg=name)

    def test_reloaded_network_evaluates_identically(self):
        rng = np.random.default_rng(4)
        dataset = Dataset(rng.random((9, 2, 8, 8)), rng.integers(0, 3, size=9), num_classes=3)
        save_checkpoint(self.path, self.state)

        restored, _ = load_checkpoint(self.path, self.arch, self.plan)

        assert_array_equal(extract_logits(restored.network, dataset), extract_logits(self.state.network, dataset))
        self.assertEqual(evaluate(restored.network, dataset, checkpoint_hash=arch_hash(self.arch)).per_layer_top1,
                         evaluate(self.state.network, dataset).per_layer_top1)

    def test_open_uses_the_stored_configuration(self):
        save_checkpoint(self.path, self.state)

        state, fusion = open_checkpoint(self.path)

        self.assertIsNone(fusion)
        self.assertEqual(state.arch, self.arch)
        self.assertEqual(state.plan.hgb_m, 2)
        self.assertEqual(state.epoch, 1)

    def test_float32_is_stored_as_float32(self):
        plan = tiny_plan(self.arch, precision='float32')
        state = build_state(self.arch, plan)
        save_checkpoint(self.path, state)

        checkpoint = read_checkpoint(self.path)

        for value in checkpoint.parameters.values():
            self.assertEqual(value.dtype, np.float32)

    def test_bad_magic(self):
        save_checkpoint(self.path, self.state)
        payload = self.path.read_bytes()
        self.path.write_bytes(b'NOTACKPT' + payload[len(MAGIC):])

        with self.assertRaises(CheckpointError):
            read_checkpoint(self.path)

    def test_unknown_version(self):
        save_checkpoint(self.path, self.state)
        payload = self.path.read_bytes()
        self.path.write_bytes(MAGIC + struct.pack('<H', 99) + payload[len(MAGIC) + 2:])

        with self.assertRaisesMessage(CheckpointError, 'version 99'):
            read_checkpoint(self.path)

    def test_truncated_and_trailing_bytes(self):
        save_checkpoint(self.path, self.state)
        payload = self.path.read_bytes()

        self.path.write_bytes(payload[:-3])
        with self.assertRaisesMessage(CheckpointError, 'truncated'):
            read_checkpoint(self.path)

        self.path.write_bytes(payload + b'\x00')
        with self.assertRaisesMessage(CheckpointError, 'trailing'):
            read_checkpoint(self.path)

    def test_architecture_mismatch(self):
        save_checkpoint(self.path, self.state)
        other = tiny_arch(channels=8, dropout_p=0.1, norm='batchnorm', boundaries=(2,))

        with self.assertRaises(CheckpointError):
            load_checkpoint(self.path, other, tiny_plan(other, hgb_m=2))
        with self.assertRaises(CheckpointError):
            restore_state(read_checkpoint(self.path), other, tiny_plan(other, hgb_m=2))

    def test_block_size_mismatch(self):
        """Same architecture, different m: the parameter sets differ."""

        save_checkpoint(self.path, self.state)

        with self.assertRaisesMessage(CheckpointError, 'parameter sets differ'):
            load_checkpoint(self.path, self.arch, tiny_plan(self.arch, hgb_m=1))

    def test_missing_batch_norm_buffer(self):
        save_checkpoint(self.path, self.state)
        checkpoint = read_checkpoint(self.path)
        del checkpoint.buffers['layer1.bn.running_var']

        with self.assertRaisesMessage(CheckpointError, 'buffer sets differ: layer1.bn.running_var'):
            restore_state(checkpoint, self.arch, self.plan)

    def test_dropout_does_not_change_the_hash(self):
        self.assertEqual(arch_hash(tiny_arch(dropout_p=0.1)), arch_hash(tiny_arch(dropout_p=0.3)))
        self.assertNotEqual(arch_hash(tiny_arch()), arch_hash(tiny_arch(pools=(1,))))

    def test_missing_file(self):
        with self.assertRaises(CheckpointError):
            read_checkpoint(self.path)
