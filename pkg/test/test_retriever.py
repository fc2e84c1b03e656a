""" Tests for the relation-gated retriever. """

###########
# Imports #
###########
# Import testing packages
from unittest import TestCase
from unittest import mock
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

# Import data science packages
import numpy as np

# Import custom modules
from exceptions import numeric_exceptions
from models import featuremodel
from models import kgdata
from models import numkernel
from models import retriever


def _features(rng, n_entities, visual_dim=3, textual_dim=2):
    def store(dim):
        present = rng.random(n_entities) < 0.6
        present[0] = True
        present[-1] = False
        return featuremodel.ModalityFeatureStore(
            rng.normal(size=(n_entities, dim)), present)
    return featuremodel.EntityFeatures(store(visual_dim), store(textual_dim))


#########
# Begin #
#########
class TestParams(TestCase):
    def setUp(self):
        self.rng = np.random.default_rng(0)
        self.params = retriever.RetrieverParams.init(6, 2, 3, 3, 2, self.rng)


    def test_shapes(self):
        self.assertEqual(self.params.structural.shape, (6, 6))
        self.assertEqual(self.params.relation_phase.shape, (2, 3))
        self.assertEqual(self.params.proj_textual_w.shape, (2, 6))
        self.assertEqual(self.params.dim, 3)
        self.assertEqual(list(self.params.tensors()), list(retriever.TENSOR_NAMES))


    def test_initial_gate_is_uniform(self):
        np.testing.assert_allclose(self.params.gate(), 1 / 3)


    def test_bad_shape_rejected(self):
        tensors = self.params.copy().tensors()
        tensors['gate_logits'] = np.zeros((2, 2))
        with self.assertRaises(numeric_exceptions.ShapeMismatch):
            retriever.RetrieverParams.from_tensors(tensors)


    def test_copy_is_independent(self):
        twin = self.params.copy()
        twin.structural[0, 0] += 1.0
        self.assertNotEqual(twin.structural[0, 0], self.params.structural[0, 0])


    @settings(max_examples=100, deadline=None)
    @given(hnp.arrays(np.float64, (4, 3),
                      elements=st.floats(-30, 30, allow_nan=False)))
    def test_gate_is_a_simplex(self, logits):
        params = retriever.RetrieverParams.init(3, 4, 2, 1, 1,
                                                np.random.default_rng(1))
        params.gate_logits[...] = logits
        alpha = params.gate()
        self.assertTrue(np.all(alpha >= 0))
        np.testing.assert_allclose(alpha.sum(axis=1), 1.0)


class TestScoring(TestCase):
    def setUp(self):
        self.rng = np.random.default_rng(7)
        self.features = _features(self.rng, 6)
        self.params = retriever.RetrieverParams.init(6, 2, 3, 3, 2, self.rng)
        self.params.gate_logits[...] = self.rng.normal(size=(2, 3))


    def test_tail_scores_match_rotate_score(self):
        query = kgdata.Query(1, 0, kgdata.Direction.TAIL)
        scores = retriever.score_all(self.params, query, self.features)
        head = retriever.fuse_joint(self.params, 1, 0, self.features)
        for t in range(6):
            tail = retriever.fuse_joint(self.params, t, 0, self.features)
            self.assertAlmostEqual(
                scores[t], retriever.rotate_score(head, 0, tail, self.params))


    def test_head_scores_match_rotate_score(self):
        query = kgdata.Query(2, 1, kgdata.Direction.HEAD)
        scores = retriever.score_all(self.params, query, self.features)
        tail = retriever.fuse_joint(self.params, 2, 1, self.features)
        for h in range(6):
            head = retriever.fuse_joint(self.params, h, 1, self.features)
            self.assertAlmostEqual(
                scores[h], retriever.rotate_score(head, 1, tail, self.params))


    def test_perfect_rotation_scores_zero(self):
        head = retriever.fuse_joint(self.params, 0, 1, self.features)
        h = head.view(np.complex128)
        tail = (h * np.exp(1j * self.params.relation_phase[1])).view(np.float64)
        self.assertAlmostEqual(retriever.rotate_score(head, 1, tail, self.params), 0.0)


    @settings(max_examples=100, deadline=None)
    @given(hnp.arrays(np.float64, 6, elements=st.floats(-10, 10)),
           hnp.arrays(np.float64, 6, elements=st.floats(-10, 10)),
           st.integers(0, 1))
    def test_rotate_score_is_never_positive(self, head, tail, relation):
        self.assertLessEqual(
            retriever.rotate_score(head, relation, tail, self.params), 0.0)


    def test_absent_modality_uses_default(self):
        tables = retriever.modality_tables(self.params, self.features)
        absent = int(np.flatnonzero(~self.features.visual.present)[0])
        np.testing.assert_array_equal(tables[1][absent], self.params.default_visual)
        present = int(np.flatnonzero(self.features.visual.present)[0])
        expected = (self.features.visual.vectors[present] @ self.params.proj_visual_w
                    + self.params.proj_visual_b)
        np.testing.assert_allclose(tables[1][present], expected)


    def test_structure_only_ignores_features(self):
        params = self.params.copy()
        params.structure_only = True
        np.testing.assert_array_equal(params.gate()[0], [1.0, 0.0, 0.0])
        query = kgdata.Query(1, 0, kgdata.Direction.TAIL)
        other = _features(np.random.default_rng(99), 6)
        np.testing.assert_array_equal(
            retriever.score_all(params, query, self.features),
            retriever.score_all(params, query, other))


    def test_chunking_does_not_change_scores(self):
        tables = retriever.ScoreTables(self.params, self.features)
        known = np.array([0, 1, 2, 3, 4])
        rel = np.array([0, 1, 0, 1, 0])
        dirs = np.array([0, 1, 1, 0, 0])
        full = retriever.score_queries(tables, known, rel, dirs)
        with mock.patch.object(retriever, 'CHUNK_ELEMENTS', 1):
            chunked = retriever.score_queries(tables, known, rel, dirs)
        np.testing.assert_array_equal(full, chunked)


    def test_feature_count_mismatch(self):
        with self.assertRaises(numeric_exceptions.ShapeMismatch):
            retriever.ScoreTables(self.params, _features(self.rng, 5))


class TestShortlists(TestCase):
    def test_ties_break_by_id(self):
        scores = np.array([1.0, 3.0, 3.0, 0.0, 3.0])
        shortlist = retriever.topk_shortlist(scores, 3)
        np.testing.assert_array_equal(shortlist.entity_ids, [1, 2, 4])
        np.testing.assert_array_equal(shortlist.scores, [3.0, 3.0, 3.0])


    def test_k_out_of_range(self):
        with self.assertRaises(ValueError):
            retriever.topk_shortlist(np.zeros(4), 5)
        with self.assertRaises(ValueError):
            retriever.topk_ids(np.zeros((2, 4)), 0)


    def test_hard_negatives_skip_answer(self):
        scores = np.array([5.0, 4.0, 3.0, 2.0])
        np.testing.assert_array_equal(retriever.hard_negatives(scores, 0, 2), [1, 2])
        np.testing.assert_array_equal(retriever.hard_negatives(scores, 2, 3), [0, 1, 3])


    def test_sampled_negatives_never_hit_answer(self):
        rng = np.random.default_rng(0)
        answers = rng.integers(0, 5, size=200)
        negatives = retriever.sample_negatives(5, answers, 50, rng)
        self.assertEqual(negatives.shape, (200, 50))
        self.assertFalse(np.any(negatives == answers[:, None]))
        self.assertEqual(set(np.unique(negatives).tolist()), set(range(5)))


class TestLosses(TestCase):
    def setUp(self):
        self.rng = np.random.default_rng(11)
        self.features = _features(self.rng, 7)
        self.params = retriever.RetrieverParams.init(7, 3, 2, 3, 2, self.rng)
        self.params.gate_logits[...] = self.rng.normal(size=(3, 3))
        triples = np.array([[0, 0, 1], [2, 1, 3], [4, 2, 6], [5, 0, 0]])
        self.items = kgdata.triple_items(triples)
        self.negatives = retriever.sample_negatives(7, self.items[3], 4, self.rng)


    def test_rank_margin_loss(self):
        loss, d_pos, d_neg = retriever.rank_margin_loss(
            np.array([-1.0, -10.0]), np.array([-8.0, -2.0]), 4.0)
        np.testing.assert_array_equal(loss, [0.0, 12.0])
        np.testing.assert_array_equal(d_pos, [0.0, -1.0])
        np.testing.assert_array_equal(d_neg, [0.0, 1.0])


    def test_kge_loss_prefers_higher_positive(self):
        neg = np.array([[-5.0, -6.0]])
        low, _, _ = retriever.kge_loss_from_scores([-8.0], neg, 6.0, 1.0)
        high, _, _ = retriever.kge_loss_from_scores([-1.0], neg, 6.0, 1.0)
        self.assertLess(high, low)


    def test_kge_normalizer(self):
        pos = np.array([-1.0, -2.0])
        neg = np.array([[-3.0], [-4.0]])
        mean, _, _ = retriever.kge_loss_from_scores(pos, neg, 6.0, 1.0)
        total, _, _ = retriever.kge_loss_from_scores(pos, neg, 6.0, 1.0,
                                                     normalizer=1)
        self.assertAlmostEqual(total, 2 * mean)


    def test_kge_loss_gradients(self):
        known, rel, dirs, answers = self.items

        def loss_fn():
            tables = retriever.ScoreTables(self.params, self.features)
            return retriever.kge_loss(tables, known, rel, dirs, answers,
                                      self.negatives, 6.0, 1.0)

        worst, name = numkernel.grad_check_tensors(
            loss_fn, self.params.tensors(), floor=1e-5)
        self.assertLess(worst, 1e-4, name)


    def test_structure_only_gate_gets_no_gradient(self):
        params = self.params.copy()
        params.structure_only = True
        tables = retriever.ScoreTables(params, self.features)
        known, rel, dirs, answers = self.items
        _, grads = retriever.kge_loss(tables, known, rel, dirs, answers,
                                      self.negatives, 6.0, 1.0)
        np.testing.assert_array_equal(grads['gate_logits'], 0.0)
        np.testing.assert_array_equal(grads['proj_visual_w'], 0.0)


    def test_buffers_sum(self):
        tables = retriever.ScoreTables(self.params, self.features)
        known, rel, dirs, answers = self.items
        candidates = np.concatenate([answers[:, None], self.negatives], axis=1)
        d_scores = self.rng.normal(size=candidates.shape)
        whole = retriever.candidate_backward(tables, known, rel, dirs,
                                             candidates, d_scores)
        first = retriever.candidate_backward(tables, known[:3], rel[:3], dirs[:3],
                                             candidates[:3], d_scores[:3])
        second = retriever.candidate_backward(tables, known[3:], rel[3:], dirs[3:],
                                              candidates[3:], d_scores[3:])
        first.add(second)
        np.testing.assert_allclose(first.phase, whole.phase)
        np.testing.assert_allclose(first.alpha, whole.alpha)
        for a, b in zip(first.modalities, whole.modalities):
            np.testing.assert_allclose(a, b)
