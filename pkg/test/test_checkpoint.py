""" Tests for the RADDCKPT checkpoint format. """

###########
# Imports #
###########
# Import testing packages
from unittest import TestCase

# Import system packages
import struct
import tempfile
from dataclasses import replace
from pathlib import Path

# Import data science packages
import numpy as np

# Import custom modules
from exceptions import version_exceptions
from models import checkpoint
from models import trainer
from test.test_trainer import TINY, tiny_graph


#########
# Begin #
#########
class TestCheckpointFiles(TestCase):
    @classmethod
    def setUpClass(cls):
        cls.kg, cls.features = tiny_graph()
        t = trainer.Trainer(cls.kg, cls.features, TINY)
        t.joint_step(cls.kg.train[:8], 1, np.random.default_rng(0))
        t.state.history.new_data_point(0, valid_mrr=0.25)
        cls.ckpt = t.snapshot()


    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.path = Path(self.tmp.name) / 'model.ckpt'


    def tearDown(self):
        self.tmp.cleanup()


    def test_save_load_save_is_byte_identical(self):
        checkpoint.save_checkpoint(self.ckpt, self.path)
        first = self.path.read_bytes()
        loaded = checkpoint.load_checkpoint(self.path)
        self.assertEqual(loaded, self.ckpt)
        checkpoint.save_checkpoint(loaded, self.path)
        self.assertEqual(self.path.read_bytes(), first)


    def test_header(self):
        data = checkpoint.to_bytes(self.ckpt)
        magic, version, _ = struct.unpack_from('<8sII', data)
        self.assertEqual(magic, b'RADDCKPT')
        self.assertEqual(version, checkpoint.FORMAT_VERSION)


    def test_bad_magic(self):
        data = b'NOTACKPT' + checkpoint.to_bytes(self.ckpt)[8:]
        with self.assertRaises(version_exceptions.CheckpointFormatError):
            checkpoint.from_bytes(data)


    def test_version_mismatch(self):
        data = bytearray(checkpoint.to_bytes(self.ckpt))
        struct.pack_into('<I', data, 8, checkpoint.FORMAT_VERSION + 1)
        with self.assertRaises(version_exceptions.CheckpointVersionMismatch) as ctx:
            checkpoint.from_bytes(bytes(data))
        self.assertEqual(ctx.exception.found, checkpoint.FORMAT_VERSION + 1)


    def test_truncation(self):
        data = checkpoint.to_bytes(self.ckpt)
        with self.assertRaises(version_exceptions.CheckpointFormatError):
            checkpoint.from_bytes(data[:-3])


    def test_trailing_bytes(self):
        data = checkpoint.to_bytes(self.ckpt)
        with self.assertRaises(version_exceptions.CheckpointFormatError):
            checkpoint.from_bytes(data + b'\0')


    def test_edited_dim_is_a_shape_mismatch(self):
        meta = dict(self.ckpt.meta, d=str(TINY.d + 1))
        edited = checkpoint.Checkpoint(self.ckpt.config_text, meta,
                                       self.ckpt.history, self.ckpt.tensors)
        with self.assertRaises(version_exceptions.CheckpointShapeMismatch):
            checkpoint.from_bytes(checkpoint.to_bytes(edited))


    def test_missing_tensor(self):
        tensors = dict(self.ckpt.tensors)
        del tensors['ema/direction']
        edited = checkpoint.Checkpoint(self.ckpt.config_text, self.ckpt.meta,
                                       self.ckpt.history, tensors)
        with self.assertRaises(version_exceptions.CheckpointShapeMismatch) as ctx:
            checkpoint.from_bytes(checkpoint.to_bytes(edited))
        self.assertEqual(ctx.exception.name, 'ema/direction')


    def test_tensors_are_float32(self):
        for arr in self.ckpt.tensors.values():
            self.assertEqual(arr.dtype, np.float32)


    def test_history_survives(self):
        loaded = checkpoint.from_bytes(checkpoint.to_bytes(self.ckpt))
        self.assertEqual(loaded.history.best().valid_mrr, 0.25)


    def test_compatibility(self):
        checkpoint.check_compatible(self.ckpt, self.kg.n_entities,
                                    self.kg.n_relations, 3, 3)
        with self.assertRaises(version_exceptions.CheckpointShapeMismatch):
            checkpoint.check_compatible(self.ckpt, self.kg.n_entities + 1,
                                        self.kg.n_relations, 3, 3)


    def test_inverse_relations_double_relation_tables(self):
        cfg = replace(TINY, augment_inverse_relations=True)
        ckpt = trainer.Trainer(self.kg, self.features, cfg).snapshot()
        self.assertEqual(ckpt.tensors['retriever/gate_logits'].shape,
                         (2 * self.kg.n_relations, 3))
        loaded = checkpoint.from_bytes(checkpoint.to_bytes(ckpt))
        self.assertEqual(loaded.meta_int('kge_relations'), 2 * self.kg.n_relations)
