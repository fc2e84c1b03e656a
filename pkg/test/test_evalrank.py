""" Tests for filtered ranking and Diff-Rerank evaluation. """

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
from scipy import special

# Import custom modules
from models import diffusion
from models import evalrank
from models import featuremodel
from models import kgdata
from models import retriever
from models import trainer


N_ENTITIES = 20


def _hand_built_kg():
    """ 20 entities, 2 relations; several queries share (h, r) so the
        filter removes other true completions.
    """
    labels = [f'e{i}' for i in range(N_ENTITIES)]
    train = [(0, 0, 1), (0, 0, 2), (0, 0, 3), (4, 1, 5), (6, 1, 5), (7, 0, 8),
             (9, 1, 10), (11, 0, 12), (13, 1, 14), (15, 0, 16), (17, 1, 18)]
    valid = [(0, 0, 19), (8, 1, 5)]
    test = [(0, 0, 4), (2, 1, 5), (7, 0, 3), (19, 1, 10), (11, 0, 13),
            (16, 1, 0)]
    return kgdata.KnowledgeGraph(kgdata.Vocabulary(labels),
                                 kgdata.Vocabulary(['r', 's']), train, valid, test)


def _states(seed=0):
    rng = np.random.default_rng(seed)
    features = featuremodel.EntityFeatures.absent(N_ENTITIES, 2, 2)
    params = retriever.RetrieverParams.init(N_ENTITIES, 2, 3, 2, 2, rng)
    params.structural[...] = rng.normal(size=params.structural.shape)
    denoiser = diffusion.DenoiserParams.init(N_ENTITIES, 3, rng, d_time=4,
                                             d_dir=2, hidden_layers=1,
                                             hidden_mult=2)
    return evalrank.ModelStates(params, features, denoiser,
                                diffusion.NoiseSchedule(10))


def _oracle_rank(answer, final, removed, shortlisted=None):
    """ Sort every surviving entity and scan for the answer. Outside the
        shortlist only the entity id counts.
    """
    survivors = [e for e in range(len(final)) if not removed[e] or e == answer]
    if shortlisted is None:
        key = lambda e: (-final[e], e)
    else:
        key = lambda e: ((0, -final[e], e) if shortlisted[e] else (1, 0.0, e))
    return sorted(survivors, key=key).index(answer) + 1


#########
# Begin #
#########
class TestRankingRules(TestCase):
    def test_ties_favor_lower_ids(self):
        scores = np.array([[1.0, 1.0, 1.0]])
        np.testing.assert_array_equal(
            evalrank.ranks_from_scores(np.repeat(scores, 3, 0), [0, 1, 2]),
            [1, 2, 3])


    def test_other_completions_are_removed(self):
        scores = np.array([5.0, 4.0, 3.0, 2.0])
        removed = np.array([[True, False, False, False]])
        self.assertEqual(evalrank.ranks_from_scores(scores, [2])[0], 3)
        self.assertEqual(evalrank.ranks_from_scores(scores, [2], removed)[0], 2)


    def test_filtered_rank_keeps_answer(self):
        index = {(0, 0, kgdata.Direction.TAIL): frozenset({1, 2})}
        query = kgdata.Query(0, 0, kgdata.Direction.TAIL, 2)
        self.assertEqual(evalrank.filtered_rank([0.0, 9.0, 1.0], query, index), 1)


    @settings(max_examples=100, deadline=None)
    @given(hnp.arrays(np.float64, 12, elements=st.floats(-50, 50)),
           hnp.arrays(np.bool_, 12), st.integers(0, 11))
    def test_filter_never_worsens_rank(self, scores, removed, answer):
        plain = evalrank.ranks_from_scores(scores, [answer])[0]
        filtered = evalrank.ranks_from_scores(scores, [answer], removed[None, :])[0]
        self.assertLessEqual(filtered, plain)
        self.assertGreaterEqual(filtered, 1)


    @settings(max_examples=100, deadline=None)
    @given(hnp.arrays(np.int64, st.integers(1, 50), elements=st.integers(1, 40)))
    def test_metric_monotonicity(self, ranks):
        report = evalrank.MetricsReport(ranks, np.zeros(len(ranks)),
                                        np.ones(len(ranks), dtype=bool),
                                        evalrank.AblationMode.FULL, 5)
        summary = report.overall
        self.assertLessEqual(summary['h1'], summary['h3'])
        self.assertLessEqual(summary['h3'], summary['h10'])
        self.assertLessEqual(summary['h1'], summary['mrr'])
        self.assertLessEqual(summary['mrr'], 1.0)


class TestGate(TestCase):
    def setUp(self):
        self.rng = np.random.default_rng(42)


    def _all_ranks(self, final, member):
        n = len(final)
        return evalrank.ranks_from_scores(np.tile(final, (n, 1)), np.arange(n),
                                          None, np.tile(member, (n, 1)))


    def test_shortlisted_entities_always_rank_first(self):
        for _ in range(1000):
            n = int(self.rng.integers(2, 30))
            K = int(self.rng.integers(1, n + 1))
            scores = self.rng.normal(size=n)
            final = self.rng.normal(size=n)
            member = evalrank.shortlist_mask(scores, K)[0]
            self.assertEqual(int(member.sum()), K)
            ranks = self._all_ranks(final, member)
            if K < n:
                self.assertLess(ranks[member].max(), ranks[~member].min())


    def test_full_shortlist_is_pure_denoiser_order(self):
        scores = self.rng.normal(size=15)
        final = self.rng.normal(size=15)
        member = evalrank.shortlist_mask(scores, 15)[0]
        np.testing.assert_array_equal(
            self._all_ranks(final, member),
            evalrank.ranks_from_scores(np.tile(final, (15, 1)), np.arange(15)))


    def test_single_slot_pins_retriever_argmax(self):
        scores = self.rng.normal(size=15)
        final = self.rng.normal(size=15)
        member = evalrank.shortlist_mask(scores, 1)[0]
        self.assertEqual(self._all_ranks(final, member)[np.argmax(scores)], 1)


    def test_shortlist_ignores_the_filter(self):
        scores = np.array([[4.0, 3.0, 2.0, 1.0]])
        np.testing.assert_array_equal(evalrank.shortlist_mask(scores, 2),
                                      [[True, True, False, False]])


    def test_non_members_share_one_score(self):
        final = np.array([[0.5, -1.0, 2.0, -3.0]])
        member = np.array([[False, True, False, True]])
        gated = evalrank.gate_scores(final, member)
        np.testing.assert_array_equal(gated[member], [-1.0, -3.0])
        self.assertTrue(np.all(gated[~member] == evalrank.NON_MEMBER_SCORE))


    def test_k_range(self):
        with self.assertRaises(ValueError):
            evalrank.shortlist_mask(np.zeros((1, 4)), 0)
        with self.assertRaises(ValueError):
            evalrank.shortlist_mask(np.zeros((1, 4)), 5)


class TestOracle(TestCase):
    def setUp(self):
        self.kg = _hand_built_kg()
        self.states = _states()
        self.queries = kgdata.make_queries(self.kg, 'test')
        known, rel, dirs, _ = kgdata.query_arrays(self.queries)
        self.scores = retriever.score_queries(self.states.tables, known, rel, dirs)
        self.final = special.log_softmax(diffusion.inference_logits(
            self.states.denoiser, self.states.provider, known, rel, dirs, 10),
            axis=1)
        self.removed = np.zeros((len(self.queries), N_ENTITIES), dtype=bool)
        for i, query in enumerate(self.queries):
            others = kgdata.true_completions(self.kg.filter_index, query)
            self.removed[i, list(others - {query.answer})] = True


    def _ranks(self, mode, K):
        _, ranks, _ = evalrank.evaluate_ranks(self.kg, self.states, K, mode)
        return ranks.tolist()


    def test_retriever_only_matches_oracle(self):
        expected = [_oracle_rank(q.answer, self.scores[i], self.removed[i])
                    for i, q in enumerate(self.queries)]
        self.assertEqual(self._ranks(evalrank.AblationMode.RETRIEVER_ONLY, 5),
                         expected)


    def test_full_mode_matches_oracle(self):
        K = 5
        expected = []
        for i, query in enumerate(self.queries):
            top = sorted(range(N_ENTITIES),
                         key=lambda e: (-self.scores[i, e], e))[:K]
            member = np.isin(np.arange(N_ENTITIES), top)
            expected.append(_oracle_rank(query.answer, self.final[i],
                                         self.removed[i], member))
        self.assertEqual(self._ranks(evalrank.AblationMode.FULL, K), expected)


    def _single_query_ranks(self, K):
        query = kgdata.Query(0, 0, kgdata.Direction.TAIL, 4)
        # 1 is another true completion of (e0, r, ?) and outscores the answer
        scores = np.linspace(0.0, -1.0, N_ENTITIES)[None, :].copy()
        scores[0, 1], scores[0, 4] = 5.0, 4.0
        with mock.patch.object(retriever, 'score_queries', return_value=scores):
            ranks, shortlisted = evalrank.rank_queries(
                self.states, [query], self.kg.filter_index,
                evalrank.AblationMode.FULL, K)
        return int(ranks[0]), bool(shortlisted[0])


    def test_removed_completion_still_takes_a_shortlist_slot(self):
        rank, shortlisted = self._single_query_ranks(1)
        self.assertFalse(shortlisted)
        # Lower tier by id: only e0 survives ahead of the answer
        self.assertEqual(rank, 2)


    def test_answer_ranks_first_once_shortlisted(self):
        rank, shortlisted = self._single_query_ranks(2)
        self.assertTrue(shortlisted)
        self.assertEqual(rank, 1)


    def test_denoiser_only_equals_full_shortlist(self):
        self.assertEqual(self._ranks(evalrank.AblationMode.DENOISER_ONLY, 5),
                         self._ranks(evalrank.AblationMode.FULL, N_ENTITIES))


    def test_report_metrics_match_ranks(self):
        config = trainer.TrainConfig(K=5)
        report = evalrank.evaluate(self.kg, self.states, config,
                                   evalrank.AblationMode.RETRIEVER_ONLY)
        ranks = np.array(self._ranks(evalrank.AblationMode.RETRIEVER_ONLY, 5))
        self.assertAlmostEqual(report.overall['mrr'], float(np.mean(1.0 / ranks)))
        self.assertEqual(report.overall['h1'], float(np.mean(ranks <= 1)))
        self.assertEqual(report.query_count, 2 * len(self.kg.test))
        self.assertEqual(report.tail['count'] + report.head['count'],
                         report.query_count)


    def test_threads_do_not_change_ranks(self):
        _, one, _ = evalrank.evaluate_ranks(self.kg, self.states, 5)
        _, two, _ = evalrank.evaluate_ranks(self.kg, self.states, 5, threads=2)
        np.testing.assert_array_equal(one, two)


class TestIterativeAndTraces(TestCase):
    def setUp(self):
        self.kg = _hand_built_kg()
        self.states = _states(3)


    def test_iterative_is_seeded(self):
        query = kgdata.make_queries(self.kg, 'test')[0]
        a = evalrank.diff_rerank(self.states, query, 5, 'iterative', seed=7)
        b = evalrank.diff_rerank(self.states, query, 5, 'iterative', seed=7)
        np.testing.assert_array_equal(a.scores, b.scores)
        self.assertEqual(int(a.shortlisted.sum()), 5)


    def test_single_pass_lower_tier_is_one_sentinel(self):
        query = kgdata.make_queries(self.kg, 'test')[0]
        out = evalrank.diff_rerank(self.states, query, 1)
        lower = out.scores[~out.shortlisted]
        self.assertEqual(len(lower), N_ENTITIES - 1)
        self.assertEqual(len(np.unique(lower)), 1)
        self.assertEqual(lower[0], evalrank.NON_MEMBER_SCORE)


    def test_lower_tier_is_ordered_by_id(self):
        query = kgdata.make_queries(self.kg, 'test')[0]
        out = evalrank.diff_rerank(self.states, query, 4)
        ranks = evalrank.ranks_from_scores(
            np.tile(out.scores, (N_ENTITIES, 1)), np.arange(N_ENTITIES), None,
            np.tile(out.shortlisted, (N_ENTITIES, 1)))
        lower = ranks[~out.shortlisted]
        np.testing.assert_array_equal(lower, np.arange(5, N_ENTITIES + 1))


    def test_iterative_posterior_covers_only_the_shortlist(self):
        query = kgdata.make_queries(self.kg, 'test')[0]
        with mock.patch.object(diffusion, 'corrupt',
                               wraps=diffusion.corrupt) as corrupt:
            out = evalrank.diff_rerank(self.states, query, 3, 'iterative', seed=1)
        guesses = [call.args[1] for call in corrupt.call_args_list]
        self.assertEqual(len(guesses), self.states.schedule.T - 1)
        members = set(np.flatnonzero(out.shortlisted).tolist())
        self.assertTrue(set(guesses) <= members, guesses)
        self.assertAlmostEqual(float(np.exp(out.scores[out.shortlisted]).sum()),
                               1.0)


    def test_iterative_lower_tier_is_one_sentinel(self):
        query = kgdata.make_queries(self.kg, 'test')[0]
        out = evalrank.diff_rerank(self.states, query, 3, 'iterative', seed=2)
        self.assertTrue(np.all(out.scores[~out.shortlisted] ==
                               evalrank.NON_MEMBER_SCORE))
        self.assertTrue(np.all(np.isfinite(out.scores[out.shortlisted])))


    def test_unknown_inference_mode(self):
        query = kgdata.make_queries(self.kg, 'test')[0]
        with self.assertRaises(ValueError):
            evalrank.diff_rerank(self.states, query, 5, 'beam')


    def test_mode_names(self):
        self.assertIs(evalrank.AblationMode.from_name('retriever_only'),
                      evalrank.AblationMode.RETRIEVER_ONLY)
        with self.assertRaises(ValueError):
            evalrank.AblationMode.from_name('nothing')


    def test_case_trace_rows(self):
        config = trainer.TrainConfig(K=5)
        rows = evalrank.case_trace_rows(self.kg, self.states, config, 3)
        self.assertEqual(len(rows), 9)
        self.assertEqual({row['mode'] for row in rows},
                         {'retriever-only', 'denoiser-only', 'full'})
        for row in rows:
            self.assertTrue(1 <= row['rank'] <= N_ENTITIES)


    def test_top1_agreement_is_a_fraction(self):
        agreement = evalrank.top1_agreement(self.kg, self.states, 'test')
        self.assertTrue(0.0 <= agreement <= 1.0)


    def test_report_rows(self):
        report = evalrank.MetricsReport([1, 2, 4], [0, 1, 0], [True, True, False],
                                        evalrank.AblationMode.FULL, 5)
        rows = report.rows()
        self.assertEqual([row['scope'] for row in rows], ['overall', 'head', 'tail'])
        self.assertEqual(rows[0]['H@1'], '33.33')
        self.assertEqual(report.key_values()['shortlist_recall'], '66.67')
