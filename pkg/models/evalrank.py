""" Diff-Rerank inference and filtered link-prediction metrics.

    Ranking is two-tier: every shortlisted entity precedes every entity
    outside the shortlist, whatever the numeric scores. Within a tier,
    higher score first, then lower entity id.

    The shortlist is the retriever's top K over the whole vocabulary.
    Every entity outside it gets the same sentinel score, so the lower
    tier falls back to id order. Under the filtered protocol the other
    true completions of a query are dropped only when the answer is
    ranked; they still take up shortlist slots.
"""

###########
# Imports #
###########
# Import system packages
from dataclasses import dataclass
from enum import Enum

# Import data science packages
import numpy as np
from scipy import special

# Import custom modules
from functions import general
from models import diffusion
from models import kgdata
from models import retriever
from models.kgdata import Direction


#############
# Constants #
#############
HITS_AT = (1, 3, 10)
QUERY_BATCH = 256
INFERENCE_MODES = ('single_pass', 'iterative')
NON_MEMBER_SCORE = -np.inf
COLUMN_NAMES = {'mrr': 'MRR', 'h1': 'H@1', 'h3': 'H@3', 'h10': 'H@10'}


#########
# Types #
#########
class AblationMode(Enum):
    FULL = 'full'
    RETRIEVER_ONLY = 'retriever-only'
    DENOISER_ONLY = 'denoiser-only'
    STRUCTURE_ONLY = 'structure-only'
    NO_DISTILL = 'no-distill'
    TAIL_ONLY = 'tail-only'


    @classmethod
    def from_name(cls, name):
        try:
            return cls(str(name).strip().lower().replace('_', '-'))
        except ValueError:
            choices = ', '.join(mode.value for mode in cls)
            raise ValueError(f"Unknown ablation mode {name!r}; choose from {choices}")


    @property
    def scoring(self):
        """ 'retriever', 'denoiser' or 'rerank'. The training-side
            ablations are evaluated with the full Diff-Rerank path.
        """
        if self is AblationMode.RETRIEVER_ONLY:
            return 'retriever'
        if self is AblationMode.DENOISER_ONLY:
            return 'denoiser'
        return 'rerank'


class ModelStates:
    """ Retriever, features, the denoiser weights to rank with (EMA or
        live) and the noise schedule. Read-only during evaluation.
    """
    def __init__(self, retriever_params, features, denoiser, schedule):
        self.retriever = retriever_params
        self.features = features
        self.denoiser = denoiser
        self.schedule = schedule
        self.provider = retriever.ContextProvider(retriever_params, features)


    @property
    def tables(self):
        return self.provider.tables


    @property
    def n_entities(self):
        return self.retriever.n_entities


@dataclass(frozen=True)
class RankResult:
    query: kgdata.Query
    filtered_rank: int
    mode: AblationMode
    shortlisted: bool = True


@dataclass(frozen=True)
class RerankScores:
    """ Final scores plus shortlist membership (the upper tier). """
    scores: np.ndarray
    shortlisted: np.ndarray


class MetricsReport:
    """ Filtered MRR and Hits@k overall and per direction. """
    def __init__(self, ranks, directions, shortlisted, mode, K):
        self.ranks = np.asarray(ranks, dtype=np.int64)
        self.directions = np.asarray(directions, dtype=np.int64)
        self.mode = mode
        self.K = K
        self.overall = _summarize(self.ranks)
        self.tail = _summarize(self.ranks[self.directions == Direction.TAIL])
        self.head = _summarize(self.ranks[self.directions == Direction.HEAD])
        self.shortlist_recall = float(np.mean(shortlisted)) if len(ranks) else 0.0


    @property
    def query_count(self):
        return len(self.ranks)


    def scopes(self):
        return {'overall': self.overall, 'head': self.head, 'tail': self.tail}


    def rows(self):
        """ One row per scope, values as percentages with 2 decimals. """
        rows = []
        for scope, summary in self.scopes().items():
            row = {'scope': scope}
            row.update({column: f"{100.0 * summary[key]:.2f}"
                        for key, column in COLUMN_NAMES.items()})
            row['queries'] = summary['count']
            rows.append(row)
        return rows


    def key_values(self):
        values = {'mode': self.mode.value, 'K': self.K,
                  'queries': self.query_count,
                  'shortlist_recall': f"{100.0 * self.shortlist_recall:.2f}"}
        for scope, summary in self.scopes().items():
            for key in COLUMN_NAMES:
                values[f'{scope}.{key}'] = f"{100.0 * summary[key]:.2f}"
            values[f'{scope}.queries'] = summary['count']
        return values


def _summarize(ranks):
    if len(ranks) == 0:
        return {'mrr': 0.0, 'h1': 0.0, 'h3': 0.0, 'h10': 0.0, 'count': 0}
    summary = {'mrr': float(np.mean(1.0 / ranks)), 'count': int(len(ranks))}
    for k in HITS_AT:
        summary[f'h{k}'] = float(np.mean(ranks <= k))
    return summary


###########
# Ranking #
###########
def ranks_from_scores(scores, answers, removed=None, shortlisted=None):
    """ Filtered ranks for a batch: 1 + number of surviving entities
        ordered strictly above the answer under two-tier ordering.
    """
    scores = np.atleast_2d(np.asarray(scores, dtype=np.float64))
    n, n_entities = scores.shape
    answers = np.asarray(answers, dtype=np.int64).reshape(n)
    rows = np.arange(n)
    tiers = (np.ones((n, n_entities), dtype=np.int8) if shortlisted is None
             else np.atleast_2d(shortlisted).astype(np.int8))

    s_answer = scores[rows, answers][:, None]
    t_answer = tiers[rows, answers][:, None]
    ids = np.arange(n_entities)[None, :]
    above = (tiers > t_answer) | (
        (tiers == t_answer) & ((scores > s_answer) |
                               ((scores == s_answer) & (ids < answers[:, None]))))
    if removed is not None:
        above &= ~np.atleast_2d(removed)
    return 1 + above.sum(axis=1)


def filtered_rank(final_scores, query, filter_index, shortlisted=None):
    """ Rank of query.answer after removing its other true completions. """
    scores = np.asarray(final_scores, dtype=np.float64)
    removed = _removed_mask(filter_index, [query], scores.shape[0])
    tiers = None if shortlisted is None else np.asarray(shortlisted)[None, :]
    return int(ranks_from_scores(scores[None, :], [query.answer], removed,
                                 tiers)[0])


def _removed_mask(filter_index, queries, n_entities):
    removed = np.zeros((len(queries), n_entities), dtype=bool)
    for i, query in enumerate(queries):
        others = kgdata.true_completions(filter_index, query)
        if others:
            removed[i, list(others)] = True
        if query.answer >= 0:
            removed[i, query.answer] = False
    return removed


###############
# Diff-Rerank #
###############
def shortlist_mask(scores, K):
    """ Boolean (n, E) membership of the top K entities by retriever score. """
    scores = np.atleast_2d(np.asarray(scores, dtype=np.float64))
    n, n_entities = scores.shape
    if not 1 <= K <= n_entities:
        raise ValueError(f"K must be in [1, {n_entities}], got {K}")
    top = retriever.topk_ids(scores, K)
    member = np.zeros((n, n_entities), dtype=bool)
    np.put_along_axis(member, top, True, axis=1)
    return member


def gate_scores(final, member):
    """ Keep the scores of shortlist members, sentinel for everyone else. """
    return np.where(member, final, NON_MEMBER_SCORE)


def _single_pass_scores(states, known, relations, directions):
    logits = diffusion.inference_logits(states.denoiser, states.provider, known,
                                        relations, directions, states.schedule.T)
    return special.log_softmax(logits, axis=1)


def _member_log_posterior(logits, member):
    return special.log_softmax(np.where(member, logits, -np.inf), axis=1)


def _iterative_scores(states, known, relations, directions, member, rngs):
    """ Reverse loop t = T..1 with the posterior restricted to the
        shortlist. The sampled clean guess is re-noised to t - 1 with the
        forward process; the final scores come from the t = 1 posterior,
        also restricted to the shortlist.
    """
    n = len(known)
    n_entities = states.n_entities
    schedule = states.schedule
    xt = np.full(n, states.denoiser.mask_id, dtype=np.int64)
    for t in range(schedule.T, 1, -1):
        logits, _ = diffusion.denoiser_forward(states.denoiser, states.provider,
                                               known, relations, directions, xt, t)
        posterior = special.softmax(np.where(member, logits, -np.inf), axis=1)
        for i in range(n):
            guess = rngs[i].choice(n_entities, p=posterior[i])
            xt[i] = diffusion.corrupt(schedule, guess, t - 1, n_entities,
                                      rngs[i]).xt
    logits, _ = diffusion.denoiser_forward(states.denoiser, states.provider,
                                           known, relations, directions, xt, 1)
    return _member_log_posterior(logits, member)


def rerank_batch(states, known, relations, directions, K, inference='single_pass',
                 seeds=None, scores=None):
    """ Diff-Rerank for a batch of queries. Returns RerankScores with
        (n, E) arrays. `seeds` gives one random stream per query for the
        iterative mode; `scores` reuses retriever scores already computed.
    """
    if inference not in INFERENCE_MODES:
        raise ValueError(f"Unknown inference mode {inference!r}")
    if scores is None:
        scores = retriever.score_queries(states.tables, known, relations,
                                         directions)
    member = shortlist_mask(scores, K)
    if inference == 'single_pass':
        final = _single_pass_scores(states, known, relations, directions)
    else:
        rngs = [np.random.default_rng(seed) for seed in seeds]
        final = _iterative_scores(states, np.asarray(known), np.asarray(relations),
                                  np.asarray(directions), member, rngs)
    return RerankScores(gate_scores(final, member), member)


def diff_rerank(states, query, K, inference='single_pass', seed=0):
    """ Final scores of every entity for one query. """
    out = rerank_batch(states, [query.known_entity], [query.relation],
                       [int(query.direction)], K, inference, seeds=[seed])
    return RerankScores(out.scores[0], out.shortlisted[0])


##############
# Evaluation #
##############
def rank_queries(states, queries, filter_index, mode, K, inference='single_pass',
                 seed=0, offset=0):
    """ Filtered ranks and shortlist membership of the answers for one
        batch of queries. `offset` is the index of the first query in the
        full query list, used to seed the iterative mode per query.
    """
    known, relations, directions, answers = kgdata.query_arrays(queries)
    n_entities = states.n_entities
    removed = _removed_mask(filter_index, queries, n_entities)
    scores = retriever.score_queries(states.tables, known, relations, directions)
    rows = np.arange(len(queries))

    recall_K = min(K, n_entities)
    in_shortlist = shortlist_mask(scores, recall_K)[rows, answers]

    if mode.scoring == 'retriever':
        ranks = ranks_from_scores(scores, answers, removed)
        return ranks, in_shortlist

    K_eff = n_entities if mode.scoring == 'denoiser' else K
    seeds = [[seed, offset + i] for i in range(len(queries))]
    out = rerank_batch(states, known, relations, directions, K_eff, inference,
                       seeds, scores)
    ranks = ranks_from_scores(out.scores, answers, removed, out.shortlisted)
    return ranks, in_shortlist


def evaluate_ranks(kg, states, K, mode=AblationMode.FULL, split='test',
                   inference='single_pass', seed=0, threads=1, max_queries=0):
    """ (queries, ranks, shortlisted) over a split. """
    if not 1 <= K <= kg.n_entities:
        raise ValueError(f"K must be in [1, {kg.n_entities}], got {K}")
    queries = kgdata.make_queries(kg, split)
    if max_queries > 0:
        queries = queries[:max_queries]

    starts = range(0, len(queries), QUERY_BATCH)

    def run(start):
        return rank_queries(states, queries[start:start + QUERY_BATCH],
                            kg.filter_index, mode, K, inference, seed, start)

    parts = general.ordered_map(run, starts, threads)
    ranks = np.concatenate([p[0] for p in parts])
    shortlisted = np.concatenate([p[1] for p in parts])
    return queries, ranks, shortlisted


def evaluate(kg, states, config, mode=AblationMode.FULL, split='test',
             threads=1, max_queries=0):
    """ MetricsReport for one split. `config` supplies K, the inference
        mode and the seed of the iterative sampler.
    """
    queries, ranks, shortlisted = evaluate_ranks(
        kg, states, config.K, mode, split, config.eval_inference, config.seed,
        threads, max_queries)
    directions = np.array([int(q.direction) for q in queries], dtype=np.int64)
    return MetricsReport(ranks, directions, shortlisted, mode, config.K)


def rank_results(queries, ranks, shortlisted, mode):
    return [RankResult(q, int(r), mode, bool(s))
            for q, r, s in zip(queries, ranks, shortlisted)]


###############
# Case traces #
###############
TRACE_MODES = (AblationMode.RETRIEVER_ONLY, AblationMode.DENOISER_ONLY,
               AblationMode.FULL)


def case_trace(query, states, config, filter_index):
    """ Filtered rank of one query under retriever-only, denoiser-only
        and full Diff-Rerank scoring.
    """
    return {mode: int(rank_queries(states, [query], filter_index, mode,
                                   config.K, config.eval_inference,
                                   config.seed)[0][0])
            for mode in TRACE_MODES}


def case_trace_rows(kg, states, config, n_queries, split='test', seed=0):
    """ Tab-ready rows (query, answer, direction, mode, rank) for
        `n_queries` queries sampled without replacement.
    """
    queries = kgdata.make_queries(kg, split)
    rng = np.random.default_rng(seed)
    picks = np.sort(rng.choice(len(queries), size=min(n_queries, len(queries)),
                               replace=False))
    rows = []
    for index in picks:
        query = queries[index]
        known = kg.entities.label(query.known_entity)
        relation = kg.relations.label(query.relation)
        if query.direction == Direction.TAIL:
            text = f"({known}, {relation}, ?)"
        else:
            text = f"(?, {relation}, {known})"
        for mode, rank in case_trace(query, states, config,
                                     kg.filter_index).items():
            rows.append({'query': text,
                         'answer': kg.entities.label(query.answer),
                         'direction': query.direction.name.lower(),
                         'mode': mode.value, 'rank': rank})
    return rows


#############
# Agreement #
#############
def top1_agreement(kg, states, split='valid', max_queries=0):
    """ Fraction of queries where the denoiser's inference-time argmax
        equals the retriever's argmax.
    """
    queries = kgdata.make_queries(kg, split)
    if max_queries > 0:
        queries = queries[:max_queries]
    known, relations, directions, _ = kgdata.query_arrays(queries)
    teacher = retriever.score_queries(states.tables, known, relations, directions)
    student = _single_pass_scores(states, known, relations, directions)
    return float(np.mean(retriever.rank_order(teacher)[:, 0] ==
                         retriever.rank_order(student)[:, 0]))
