""" Tests for synthmodel. """

###########
# Imports #
###########
# Import testing packages
from unittest import TestCase

# Import system packages
import tempfile
from pathlib import Path

# Import data science packages
import numpy as np

# Import custom modules
from exceptions import data_exceptions
from models import kgdata
from models import synthmodel


def _filtered_tail_mrr(kg, scores_for):
    """ Filtered tail MRR of a scorer over the test split. """
    reciprocal = []
    for h, r, t in kg.test.tolist():
        scores = scores_for(h, r)
        truth = kg.filter_index[(h, r, kgdata.Direction.TAIL)] - {t}
        others = np.ones(kg.n_entities, dtype=bool)
        others[list(truth)] = False
        others[t] = False
        reciprocal.append(1.0 / (1 + np.sum(scores[others] > scores[t])))
    return float(np.mean(reciprocal))


#########
# Begin #
#########
class TestSynthKg(TestCase):
    @classmethod
    def setUpClass(cls):
        cls.kg, cls.visual, cls.textual = synthmodel.synth_kg(seed=1)


    def test_default_sizes(self):
        self.assertEqual(self.kg.n_entities, 100)
        self.assertEqual(self.kg.n_relations, 10)
        self.assertEqual((len(self.kg.train), len(self.kg.valid), len(self.kg.test)),
                         (800, 100, 100))
        self.assertEqual(self.visual.dim, 16)
        self.assertEqual(self.textual.n_entities, 100)


    def test_every_entity_and_relation_in_train(self):
        train = self.kg.train
        self.assertEqual(len(set(train[:, [0, 2]].reshape(-1).tolist())), 100)
        self.assertEqual(len(set(train[:, 1].tolist())), 10)


    def test_no_duplicate_triples(self):
        rows = np.concatenate([self.kg.train, self.kg.valid, self.kg.test])
        self.assertEqual(len({tuple(row) for row in rows.tolist()}), len(rows))


    def test_deterministic(self):
        again, visual, _ = synthmodel.synth_kg(seed=1)
        np.testing.assert_array_equal(again.train, self.kg.train)
        np.testing.assert_array_equal(again.test, self.kg.test)
        self.assertEqual(visual, self.visual)


    def test_seed_changes_graph(self):
        other, _, _ = synthmodel.synth_kg(seed=2)
        self.assertFalse(np.array_equal(other.train, self.kg.train))


    def test_some_features_missing(self):
        self.assertLess(int(self.visual.present.sum()), 100)
        self.assertGreater(int(self.visual.present.sum()), 50)


    def test_frequency_baseline_beats_random(self):
        """ Relation-conditional tail frequencies carry signal. """
        counts = np.zeros((self.kg.n_relations, self.kg.n_entities))
        np.add.at(counts, (self.kg.train[:, 1], self.kg.train[:, 2]), 1.0)
        rng = np.random.default_rng(0)
        jitter = rng.random((self.kg.n_relations, self.kg.n_entities)) * 1e-3

        frequency = _filtered_tail_mrr(self.kg, lambda h, r: counts[r] + jitter[r])
        noise = rng.random((len(self.kg.test), self.kg.n_entities))
        rows = iter(range(len(self.kg.test)))
        random = _filtered_tail_mrr(self.kg, lambda h, r: noise[next(rows)])
        self.assertGreater(frequency, 1.3 * random)


    def test_infeasible_sizes(self):
        with self.assertRaises(data_exceptions.InfeasibleSynthSize):
            synthmodel.synth_kg(seed=0, n_entities=2)
        with self.assertRaises(data_exceptions.InfeasibleSynthSize):
            synthmodel.synth_kg(seed=0, n_entities=5, n_relations=1, n_triples=100)


    def test_split_sizes(self):
        self.assertEqual(synthmodel.split_sizes(1000), (800, 100, 100))
        self.assertEqual(synthmodel.split_sizes(10), (8, 1, 1))


class TestWriteDataset(TestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.dir = Path(self.tmp.name)
        self.params = {'n_entities': 40, 'n_relations': 4, 'n_triples': 150,
                       'feature_dim': 4}


    def tearDown(self):
        self.tmp.cleanup()


    def _files(self, out):
        names = list(synthmodel.DATASET_FILES.values()) + [synthmodel.MANIFEST_FILE]
        return {name: (out / name).read_bytes() for name in names}


    def test_writes_five_files_and_manifest(self):
        synthmodel.write_dataset(self.dir / 'a', 4, **self.params)
        self.assertEqual(len(self._files(self.dir / 'a')), 6)


    def test_same_seed_same_bytes(self):
        synthmodel.write_dataset(self.dir / 'a', 4, **self.params)
        synthmodel.write_dataset(self.dir / 'b', 4, **self.params)
        self.assertEqual(self._files(self.dir / 'a'), self._files(self.dir / 'b'))


    def test_manifest_reproduces_files(self):
        manifest = synthmodel.write_dataset(self.dir / 'a', 9, **self.params)
        seed, params = synthmodel.load_manifest(manifest)
        self.assertEqual(seed, 9)
        synthmodel.write_dataset(self.dir / 'b', seed, **params)
        self.assertEqual(self._files(self.dir / 'a'), self._files(self.dir / 'b'))


    def test_written_files_reload_with_same_ids(self):
        synthmodel.write_dataset(self.dir / 'a', 4, **self.params)
        kg, _, _ = synthmodel.synth_kg(4, **self.params)
        out = self.dir / 'a'
        loaded = kgdata.KnowledgeGraph.from_files(
            out / 'train.tsv', out / 'valid.tsv', out / 'test.tsv')
        np.testing.assert_array_equal(loaded.train, kg.train)
        np.testing.assert_array_equal(loaded.test, kg.test)
