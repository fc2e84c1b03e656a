""" Relation-gated multimodal retriever.

    Every entity has a structural embedding plus visual and textual
    vectors projected into the same space. A per-relation softmax gate
    mixes the three into a joint embedding, and triples are scored by
    complex rotation:

        score(h, r, t) = -sum_j | h_j * exp(i theta_rj) - t_j |

    Embeddings are stored as (n, 2d) float64 arrays with real and
    imaginary parts interleaved, so `.view(np.complex128)` gives the
    (n, d) complex form without copying.

    Head queries use the identity |c * rot - k| = |k * conj(rot) - c|,
    which lets both directions share one "query vector minus candidate"
    kernel.
"""

###########
# Imports #
###########
# Import system packages
from dataclasses import dataclass

# Import data science packages
import numpy as np
from scipy import special

# Import custom modules
from exceptions import numeric_exceptions
from models.kgdata import Direction


#############
# Constants #
#############
TENSOR_NAMES = (
    'structural',
    'relation_phase',
    'gate_logits',
    'proj_visual_w',
    'proj_visual_b',
    'proj_textual_w',
    'proj_textual_b',
    'default_visual',
    'default_textual',
)
STRUCTURE_ONLY_GATE = np.array([1.0, 0.0, 0.0])

# Complex elements per scoring chunk
CHUNK_ELEMENTS = 1 << 21


##############
# Parameters #
##############
class RetrieverParams:
    """ Retriever tensors. Live values are float64 and updated in place
        by the optimizer through the dict returned by tensors().
    """
    def __init__(self, structural, relation_phase, gate_logits,
                 proj_visual_w, proj_visual_b, proj_textual_w,
                 proj_textual_b, default_visual, default_textual,
                 structure_only=False):
        self.structural = _as_float64(structural)
        self.relation_phase = _as_float64(relation_phase)
        self.gate_logits = _as_float64(gate_logits)
        self.proj_visual_w = _as_float64(proj_visual_w)
        self.proj_visual_b = _as_float64(proj_visual_b)
        self.proj_textual_w = _as_float64(proj_textual_w)
        self.proj_textual_b = _as_float64(proj_textual_b)
        self.default_visual = _as_float64(default_visual)
        self.default_textual = _as_float64(default_textual)
        self.structure_only = structure_only
        self._check_shapes()


    def _check_shapes(self):
        n_entities, width = self.structural.shape
        if width % 2:
            raise numeric_exceptions.ShapeMismatch(
                'structural', '(n_entities, 2d)', self.structural.shape)
        d = width // 2
        n_relations = self.relation_phase.shape[0]
        expected = {
            'relation_phase': (n_relations, d),
            'gate_logits': (n_relations, 3),
            'proj_visual_w': (self.proj_visual_w.shape[0], width),
            'proj_visual_b': (width,),
            'proj_textual_w': (self.proj_textual_w.shape[0], width),
            'proj_textual_b': (width,),
            'default_visual': (width,),
            'default_textual': (width,),
        }
        for name, shape in expected.items():
            if getattr(self, name).shape != shape:
                raise numeric_exceptions.ShapeMismatch(
                    name, shape, getattr(self, name).shape)


    @classmethod
    def init(cls, n_entities, n_relations, d, visual_dim, textual_dim, rng,
             structure_only=False):
        """ Structural and default vectors uniform in [-b, b] with
            b = 6 / sqrt(2d), phases uniform in [-pi, pi], projections
            uniform in [-b / sqrt(d_in), b / sqrt(d_in)], zero gate logits.
        """
        width = 2 * d
        bound = 6.0 / np.sqrt(width)

        def projection(d_in):
            scale = bound / np.sqrt(max(d_in, 1))
            return rng.uniform(-scale, scale, size=(d_in, width))

        return cls(
            structural=rng.uniform(-bound, bound, size=(n_entities, width)),
            relation_phase=rng.uniform(-np.pi, np.pi, size=(n_relations, d)),
            gate_logits=np.zeros((n_relations, 3)),
            proj_visual_w=projection(visual_dim),
            proj_visual_b=np.zeros(width),
            proj_textual_w=projection(textual_dim),
            proj_textual_b=np.zeros(width),
            default_visual=rng.uniform(-bound, bound, size=width),
            default_textual=rng.uniform(-bound, bound, size=width),
            structure_only=structure_only,
        )


    @classmethod
    def from_tensors(cls, tensors, structure_only=False):
        missing = [name for name in TENSOR_NAMES if name not in tensors]
        if missing:
            raise numeric_exceptions.ShapeMismatch(
                'retriever tensors', list(TENSOR_NAMES), f'missing {missing}')
        return cls(**{name: tensors[name] for name in TENSOR_NAMES},
                   structure_only=structure_only)


    def tensors(self):
        return {name: getattr(self, name) for name in TENSOR_NAMES}


    def copy(self):
        return RetrieverParams.from_tensors(
            {name: arr.copy() for name, arr in self.tensors().items()},
            self.structure_only)


    @property
    def n_entities(self):
        return self.structural.shape[0]


    @property
    def n_relations(self):
        return self.relation_phase.shape[0]


    @property
    def dim(self):
        """ Number of complex components d. """
        return self.relation_phase.shape[1]


    def gate(self):
        """ (n_relations, 3) simplex weights: structural, visual, textual. """
        if self.structure_only:
            return np.tile(STRUCTURE_ONLY_GATE, (self.n_relations, 1))
        return special.softmax(self.gate_logits, axis=1)


def _as_float64(arr):
    return np.ascontiguousarray(arr, dtype=np.float64)


def _complex(arr):
    return np.ascontiguousarray(arr, dtype=np.float64).view(np.complex128)


def _interleaved(arr):
    return np.ascontiguousarray(arr, dtype=np.complex128).view(np.float64)


#################
# Modality side #
#################
def modality_tables(params, features):
    """ (S, V, X): structural, projected visual and projected textual
        tables, each (n_entities, 2d). Absent modalities take the
        learned default vector.
    """
    if features.n_entities != params.n_entities:
        raise numeric_exceptions.ShapeMismatch(
            'features', params.n_entities, features.n_entities)
    tables = [params.structural]
    projections = (
        (features.visual, params.proj_visual_w, params.proj_visual_b,
         params.default_visual),
        (features.textual, params.proj_textual_w, params.proj_textual_b,
         params.default_textual),
    )
    for store, w, b, default in projections:
        if store.dim != w.shape[0]:
            raise numeric_exceptions.ShapeMismatch(
                'projection input', w.shape[0], store.dim)
        if params.structure_only:
            tables.append(np.zeros_like(params.structural))
            continue
        projected = store.vectors @ w + b
        tables.append(np.where(store.present[:, None], projected, default))
    return tuple(tables)


def modality_backward(params, features, table_grads):
    """ Map (dS, dV, dX) table gradients onto retriever tensors. """
    d_structural, d_visual, d_textual = table_grads
    grads = {'structural': np.array(d_structural, dtype=np.float64)}
    for prefix, store, dv in (('visual', features.visual, d_visual),
                              ('textual', features.textual, d_textual)):
        present = store.present
        grads[f'proj_{prefix}_w'] = store.vectors[present].T @ dv[present]
        grads[f'proj_{prefix}_b'] = dv[present].sum(axis=0)
        grads[f'default_{prefix}'] = dv[~present].sum(axis=0)
    return grads


def gate_backward(alpha, d_alpha):
    """ Softmax Jacobian applied row-wise. """
    return alpha * (d_alpha - np.sum(alpha * d_alpha, axis=1, keepdims=True))


def relation_vectors(params, relations):
    """ (cos theta, sin theta) interleaved, (n, 2d). """
    rot = np.exp(1j * params.relation_phase[np.asarray(relations)])
    return _interleaved(rot)


################
# Score tables #
################
class ScoreTables:
    """ Complex modality tables, gate weights and rotations derived from
        one parameter state. Rebuild after every parameter update.
    """
    def __init__(self, params, features):
        self.params = params
        self.features = features
        self.modalities = tuple(_complex(t)
                                for t in modality_tables(params, features))
        self.alpha = params.gate()
        self.rotation = np.exp(1j * params.relation_phase)
        self.active = (0,) if params.structure_only else (0, 1, 2)


    @property
    def n_entities(self):
        return self.params.n_entities


    def joint(self, entities, relations):
        """ Complex joint embeddings; `relations` broadcasts against the
            leading axes of `entities`.
        """
        entities = np.asarray(entities)
        relations = np.asarray(relations)
        weights = self.alpha[relations]
        while weights.ndim < entities.ndim + 1:
            weights = weights[..., None, :]
        out = 0.0
        for m in self.active:
            out = out + weights[..., m, None] * self.modalities[m][entities]
        return out


    def query_vectors(self, known, relations, directions):
        """ k * rot for tail queries, k * conj(rot) for head queries. """
        rot = self.rotation[relations]
        rot = np.where((np.asarray(directions) == Direction.HEAD)[:, None],
                       np.conj(rot), rot)
        return self.joint(known, relations) * rot, rot


class TableGrads:
    """ Private gradient buffer over score tables; summed across workers
        before being mapped onto parameters.
    """
    def __init__(self, n_entities, n_relations, d):
        self.modalities = [np.zeros((n_entities, d), dtype=np.complex128)
                           for _ in range(3)]
        self.alpha = np.zeros((n_relations, 3))
        self.phase = np.zeros((n_relations, d))


    def add(self, other):
        for mine, theirs in zip(self.modalities, other.modalities):
            mine += theirs
        self.alpha += other.alpha
        self.phase += other.phase
        return self


    def scale(self, factor):
        for arr in self.modalities:
            arr *= factor
        self.alpha *= factor
        self.phase *= factor
        return self


def param_grads(tables, table_grads):
    """ Gradients for every retriever tensor from a table buffer. """
    params = tables.params
    grads = modality_backward(
        params, tables.features,
        [_interleaved(g) for g in table_grads.modalities])
    grads['relation_phase'] = table_grads.phase.copy()
    if params.structure_only:
        grads['gate_logits'] = np.zeros_like(params.gate_logits)
    else:
        grads['gate_logits'] = gate_backward(tables.alpha, table_grads.alpha)
    return {name: grads[name] for name in TENSOR_NAMES}


###########
# Scoring #
###########
def _chunks(n_items, width, d):
    size = max(1, CHUNK_ELEMENTS // max(1, width * d))
    for start in range(0, n_items, size):
        yield slice(start, min(start + size, n_items))


def score_candidates(tables, known, relations, directions, candidates):
    """ Scores (n, m) of m candidate ids per query. """
    known = np.asarray(known, dtype=np.int64)
    relations = np.asarray(relations, dtype=np.int64)
    directions = np.asarray(directions, dtype=np.int64)
    candidates = np.asarray(candidates, dtype=np.int64)
    n, m = candidates.shape
    scores = np.empty((n, m))
    d = tables.params.dim
    for part in _chunks(n, m, d):
        q, _ = tables.query_vectors(known[part], relations[part],
                                    directions[part])
        c = tables.joint(candidates[part], relations[part])
        scores[part] = -np.abs(q[:, None, :] - c).sum(axis=2)
    return scores


def candidate_backward(tables, known, relations, directions, candidates,
                       d_scores, grads=None):
    """ Accumulate the gradient of sum(d_scores * scores) into a
        TableGrads buffer. The forward pass is recomputed chunk by chunk.
    """
    params = tables.params
    if grads is None:
        grads = TableGrads(params.n_entities, params.n_relations, params.dim)
    known = np.asarray(known, dtype=np.int64)
    relations = np.asarray(relations, dtype=np.int64)
    directions = np.asarray(directions, dtype=np.int64)
    candidates = np.asarray(candidates, dtype=np.int64)
    d_scores = np.asarray(d_scores, dtype=np.float64)
    n, m = candidates.shape
    if d_scores.shape != (n, m):
        raise numeric_exceptions.ShapeMismatch('d_scores', (n, m), d_scores.shape)

    for part in _chunks(n, m, params.dim):
        k, r, dr, c = known[part], relations[part], directions[part], candidates[part]
        q, rot = tables.query_vectors(k, r, dr)
        u = q[:, None, :] - tables.joint(c, r)
        modulus = np.abs(u)
        unit = np.divide(u, modulus, out=np.zeros_like(u), where=modulus > 0)
        g = -unit * d_scores[part][:, :, None]

        d_query = g.sum(axis=1)
        d_known = d_query * np.conj(rot)
        sign = np.where(dr == Direction.HEAD, -1.0, 1.0)[:, None]
        np.add.at(grads.phase, r, sign * np.imag(d_query * np.conj(q)))

        _joint_backward(tables, grads, k, r, d_known)
        _joint_backward(tables, grads, c, r, -g)
    return grads


def _joint_backward(tables, grads, entities, relations, d_joint):
    weights = tables.alpha[relations]
    rel_index = relations
    if entities.ndim == 2:
        weights = weights[:, None, :]
        rel_index = np.broadcast_to(relations[:, None], entities.shape)
    flat_entities = entities.reshape(-1)
    flat_rel = rel_index.reshape(-1)
    flat_grad = d_joint.reshape(-1, d_joint.shape[-1])
    for m in tables.active:
        contrib = (weights[..., m, None] * d_joint).reshape(flat_grad.shape)
        np.add.at(grads.modalities[m], flat_entities, contrib)
        dot = np.real(flat_grad * np.conj(tables.modalities[m][flat_entities]))
        np.add.at(grads.alpha[:, m], flat_rel, dot.sum(axis=1))


def score_queries(tables, known, relations, directions):
    """ Full-vocabulary scores (n, n_entities). """
    n = len(np.atleast_1d(known))
    all_ids = np.broadcast_to(np.arange(tables.n_entities), (n, tables.n_entities))
    return score_candidates(tables, np.atleast_1d(known),
                            np.atleast_1d(relations), np.atleast_1d(directions),
                            all_ids)


def score_all(params, query, features):
    """ Scores of every entity completing one query. """
    tables = ScoreTables(params, features)
    return score_queries(tables, [query.known_entity], [query.relation],
                         [int(query.direction)])[0]


def fuse_joint(params, entity, relation, features):
    """ Relation-gated joint embedding (2d,) of one entity. """
    tables = ScoreTables(params, features)
    return _interleaved(tables.joint(np.array([entity]), np.array([relation])))[0]


def rotate_score(head_joint, relation, tail_joint, params):
    """ -|| h o r - t ||_1 over complex components. """
    h = _complex(head_joint)
    t = _complex(tail_joint)
    rot = np.exp(1j * params.relation_phase[relation])
    return -float(np.abs(h * rot - t).sum())


##############
# Shortlists #
##############
@dataclass(frozen=True)
class Shortlist:
    query: object
    entity_ids: np.ndarray
    scores: np.ndarray


def rank_order(scores):
    """ Entity ids by descending score, ties by ascending id. Works
        row-wise on 2-D input.
    """
    return np.argsort(-np.asarray(scores, dtype=np.float64), axis=-1,
                      kind='stable')


def topk_shortlist(scores, K, query=None):
    scores = np.asarray(scores, dtype=np.float64)
    if not 1 <= K <= scores.shape[-1]:
        raise ValueError(f"K must be in [1, {scores.shape[-1]}], got {K}")
    ids = rank_order(scores)[:K]
    return Shortlist(query, ids, scores[ids])


def topk_ids(scores, K):
    """ (n, K) shortlist ids for a score matrix. """
    scores = np.atleast_2d(scores)
    if not 1 <= K <= scores.shape[1]:
        raise ValueError(f"K must be in [1, {scores.shape[1]}], got {K}")
    return rank_order(scores)[:, :K]


def hard_negatives(scores, answer, n):
    """ The n highest-scoring entities other than the answer. """
    scores = np.asarray(scores, dtype=np.float64)
    if not 0 <= n < scores.shape[0]:
        raise ValueError(f"n must be in [0, {scores.shape[0] - 1}], got {n}")
    order = rank_order(scores)
    return order[order != answer][:n]


######################
# Negative sampling #
######################
def sample_negatives(n_entities, answers, n, rng):
    """ (len(answers), n) ids drawn uniformly from E minus each answer.
        The answer is the entity in the corrupted slot, so the caller
        passes tails for tail items and heads for head items.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if n_entities < 2:
        raise ValueError("Negative sampling needs at least 2 entities")
    answers = np.atleast_1d(np.asarray(answers, dtype=np.int64))
    draws = rng.integers(0, n_entities - 1, size=(len(answers), n))
    return draws + (draws >= answers[:, None])


##########
# Losses #
##########
def kge_loss_from_scores(pos_scores, neg_scores, gamma, adv_temperature,
                         normalizer=None):
    """ Self-adversarial negative-sampling loss, averaged over items.

        Returns (loss, d_pos, d_neg). The adversarial weights are held
        constant in the gradient. `normalizer` replaces the item count
        when partial batches are summed.
    """
    pos = np.asarray(pos_scores, dtype=np.float64)
    neg = np.asarray(neg_scores, dtype=np.float64)
    n = len(pos) if normalizer is None else normalizer
    weights = special.softmax(adv_temperature * neg, axis=1)

    pos_term = -special.log_expit(gamma + pos)
    neg_term = -np.sum(weights * special.log_expit(-neg - gamma), axis=1)
    loss = float(np.sum(pos_term + neg_term) / n)

    d_pos = -special.expit(-(gamma + pos)) / n
    d_neg = weights * special.expit(neg + gamma) / n
    return loss, d_pos, d_neg


def rank_margin_loss(s_pos, s_neg, margin):
    """ max(0, m - (s+ - s-)) and its subgradient, elementwise. The
        subgradient is zero at the kink.
    """
    s_pos = np.asarray(s_pos, dtype=np.float64)
    s_neg = np.asarray(s_neg, dtype=np.float64)
    gap = margin - (s_pos - s_neg)
    active = gap > 0
    loss = np.where(active, gap, 0.0)
    d_pos = np.where(active, -1.0, 0.0)
    d_neg = np.where(active, 1.0, 0.0)
    if loss.ndim == 0:
        return float(loss), float(d_pos), float(d_neg)
    return loss, d_pos, d_neg


def kge_loss(tables, known, relations, directions, answers, negatives,
             gamma, adv_temperature):
    """ Batch KGE loss and gradients for every retriever tensor. """
    candidates = np.concatenate(
        [np.asarray(answers)[:, None], np.asarray(negatives)], axis=1)
    scores = score_candidates(tables, known, relations, directions, candidates)
    loss, d_pos, d_neg = kge_loss_from_scores(
        scores[:, 0], scores[:, 1:], gamma, adv_temperature)
    d_scores = np.concatenate([d_pos[:, None], d_neg], axis=1)
    table_grads = candidate_backward(tables, known, relations, directions,
                                     candidates, d_scores)
    return loss, param_grads(tables, table_grads)


####################
# Context provider #
####################
class ContextProvider:
    """ Denoiser conditioning from one retriever snapshot. Values are
        constants to the denoiser; no gradient flows back.
    """
    def __init__(self, params, features):
        self.tables = ScoreTables(params, features)
        self.params = params


    def context(self, known, relations):
        """ Joint embedding of the observed entity, (n, 2d). """
        joint = self.tables.joint(np.asarray(known), np.asarray(relations))
        return _interleaved(joint)


    def relation_vectors(self, relations):
        return relation_vectors(self.params, relations)
