""" Tests for featuremodel and the RVEC1 format. """

###########
# Imports #
###########
# Import testing packages
from unittest import TestCase

# Import system packages
import struct
import tempfile
from pathlib import Path

# Import data science packages
import numpy as np

# Import custom modules
from exceptions import data_exceptions
from models import featuremodel


#########
# Begin #
#########
class TestFeatureStore(TestCase):
    def test_absent_rows_are_zeroed(self):
        store = featuremodel.ModalityFeatureStore(
            [[1.0, 2.0], [3.0, 4.0]], [True, False])
        np.testing.assert_array_equal(store.vectors[1], [0.0, 0.0])
        self.assertFalse(store.present[1])


    def test_non_finite_absent_row_is_ignored(self):
        store = featuremodel.ModalityFeatureStore(
            [[1.0], [np.nan]], [True, False])
        self.assertTrue(np.all(np.isfinite(store.vectors)))


    def test_non_finite_present_row_names_entity(self):
        with self.assertRaises(data_exceptions.NonFiniteFeature) as ctx:
            featuremodel.ModalityFeatureStore([[1.0], [np.inf]], [True, True])
        self.assertEqual(ctx.exception.entity_id, 1)


    def test_store_is_read_only(self):
        store = featuremodel.ModalityFeatureStore([[1.0]], [True])
        with self.assertRaises(ValueError):
            store.vectors[0, 0] = 2.0


    def test_entity_features_must_agree(self):
        with self.assertRaises(ValueError):
            featuremodel.EntityFeatures(
                featuremodel.ModalityFeatureStore.absent(3, 2),
                featuremodel.ModalityFeatureStore.absent(4, 2))


class TestRvecFiles(TestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.path = Path(self.tmp.name) / 'visual.rvec'
        rng = np.random.default_rng(0)
        vectors = rng.normal(size=(5, 3)).astype(np.float32).astype(np.float64)
        self.store = featuremodel.ModalityFeatureStore(
            vectors, [True, False, True, True, False])


    def tearDown(self):
        self.tmp.cleanup()


    def test_write_then_load(self):
        featuremodel.write_features(self.path, self.store)
        loaded = featuremodel.load_features(self.path, 5)
        self.assertEqual(loaded, self.store)


    def test_file_round_trip_is_bit_exact(self):
        featuremodel.write_features(self.path, self.store)
        first = self.path.read_bytes()
        featuremodel.write_features(self.path,
                                    featuremodel.load_features(self.path, 5))
        self.assertEqual(self.path.read_bytes(), first)


    def test_layout(self):
        featuremodel.write_features(self.path, self.store)
        data = self.path.read_bytes()
        magic, count, dim, flags = struct.unpack_from('<8sIII', data)
        self.assertEqual((magic, count, dim, flags), (b'RADDVEC1', 5, 3, 1))
        self.assertEqual(len(data), 20 + 5 + 3 * 3 * 4)


    def test_all_present_without_mask(self):
        store = featuremodel.ModalityFeatureStore(np.ones((2, 2)), [True, True])
        featuremodel.write_features(self.path, store)
        self.assertEqual(len(self.path.read_bytes()), 20 + 16)
        self.assertEqual(featuremodel.load_features(self.path, 2), store)


    def test_count_mismatch(self):
        featuremodel.write_features(self.path, self.store)
        with self.assertRaises(data_exceptions.FeatureFormatError):
            featuremodel.load_features(self.path, 6)


    def test_bad_magic(self):
        featuremodel.write_features(self.path, self.store)
        data = bytearray(self.path.read_bytes())
        data[:8] = b'NOTAVEC1'
        self.path.write_bytes(bytes(data))
        with self.assertRaises(data_exceptions.FeatureFormatError):
            featuremodel.load_features(self.path, 5)


    def test_truncated_payload(self):
        featuremodel.write_features(self.path, self.store)
        self.path.write_bytes(self.path.read_bytes()[:-1])
        with self.assertRaises(data_exceptions.FeatureFormatError):
            featuremodel.load_features(self.path, 5)


    def test_trailing_bytes(self):
        featuremodel.write_features(self.path, self.store)
        self.path.write_bytes(self.path.read_bytes() + b'\0')
        with self.assertRaises(data_exceptions.FeatureFormatError):
            featuremodel.load_features(self.path, 5)


    def test_non_finite_payload_names_entity(self):
        header = struct.pack('<8sIII', b'RADDVEC1', 3, 1, 0)
        payload = np.array([1.0, 2.0, np.nan], dtype='<f4').tobytes()
        self.path.write_bytes(header + payload)
        with self.assertRaises(data_exceptions.NonFiniteFeature) as ctx:
            featuremodel.load_features(self.path, 3)
        self.assertEqual(ctx.exception.entity_id, 2)


    def test_absent_store_needs_mask(self):
        with self.assertRaises(ValueError):
            featuremodel.write_features(self.path, self.store, include_mask=False)
