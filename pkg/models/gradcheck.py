""" Finite-difference checks of every differentiable loss term.

    Each term is rebuilt at tiny dimensions for a number of seeds and its
    analytic gradient is compared against central differences on a random
    subset of coordinates of every parameter tensor.
"""

###########
# Imports #
###########
# Import system packages
from dataclasses import dataclass

# Import data science packages
import numpy as np

# Import custom modules
from exceptions import numeric_exceptions
from models import diffusion
from models import featuremodel
from models import kgdata
from models import numkernel
from models import retriever
from models import trainer


#############
# Constants #
#############
TERMS = ('kge', 'rank', 'tail-CE', 'head-CE', 'distill', 'joint')
TOLERANCE = 1e-4
STEP = 1e-5
# Denominator floor of the relative error. Central differences at STEP
# carry about 1e-11 absolute noise, so gradients below the floor are
# compared absolutely.
FLOOR = 1e-5


@dataclass(frozen=True)
class GradCheckDims:
    n_entities: int = 8
    n_relations: int = 3
    d: int = 4
    visual_dim: int = 3
    textual_dim: int = 2
    d_time: int = 4
    d_dir: int = 2
    hidden_layers: int = 1
    hidden_mult: int = 2
    n_triples: int = 4
    n_negatives: int = 3
    pool_size: int = 4
    T: int = 10


@dataclass(frozen=True)
class CheckResult:
    term: str
    seed: int
    worst: float
    tensor: str


    def passed(self, tolerance=TOLERANCE):
        return self.worst < tolerance


class GradCheckReport:
    """ Worst relative error per (term, seed). """
    def __init__(self, results, tolerance=TOLERANCE):
        self.results = list(results)
        self.tolerance = tolerance


    @property
    def failures(self):
        return [r for r in self.results if not r.passed(self.tolerance)]


    @property
    def passed(self):
        return not self.failures


    def terms(self):
        return list(dict.fromkeys(r.term for r in self.results))


    def rows(self):
        """ One summary row per term: worst error over all seeds. """
        rows = []
        for term in self.terms():
            mine = [r for r in self.results if r.term == term]
            worst = max(mine, key=lambda r: r.worst)
            rows.append({
                'term': term, 'seeds': len(mine),
                'max_rel_error': f"{worst.worst:.3e}",
                'worst_tensor': worst.tensor or '-',
                'status': 'pass' if all(r.passed(self.tolerance) for r in mine)
                else 'FAIL',
            })
        return rows


    def raise_on_failure(self):
        if self.failures:
            raise numeric_exceptions.GradCheckFailure(self.failures,
                                                      self.tolerance)


#################
# Test problems #
#################
class _Problem:
    """ Tiny random graph, features, parameters and sampled inputs. """
    def __init__(self, dims, seed):
        rng = np.random.default_rng(seed)
        E = dims.n_entities
        self.dims = dims
        self.features = featuremodel.EntityFeatures(
            _random_store(rng, E, dims.visual_dim),
            _random_store(rng, E, dims.textual_dim))
        self.params = retriever.RetrieverParams.init(
            E, dims.n_relations, dims.d, dims.visual_dim, dims.textual_dim, rng)
        self.params.gate_logits[...] = rng.normal(size=self.params.gate_logits.shape)
        self.denoiser = diffusion.DenoiserParams.init(
            E, dims.d, rng, dims.d_time, dims.d_dir, dims.hidden_layers,
            dims.hidden_mult)

        self.triples = np.stack([
            rng.integers(0, E, dims.n_triples),
            rng.integers(0, dims.n_relations, dims.n_triples),
            rng.integers(0, E, dims.n_triples)], axis=1)
        self.items = kgdata.triple_items(self.triples)
        self.negatives = retriever.sample_negatives(E, self.items[3],
                                                    dims.n_negatives, rng)
        self.schedule = diffusion.NoiseSchedule(dims.T)
        self.draw = diffusion.draw_diffusion_samples(self.triples, self.schedule,
                                                     E, rng)
        self.priorities = rng.random((len(self.items[0]), E))
        self.rng = rng


def _random_store(rng, n_entities, dim):
    present = rng.random(n_entities) < 0.7
    present[0] = True
    present[-1] = False
    return featuremodel.ModalityFeatureStore(
        rng.normal(size=(n_entities, dim)), present)


def _candidate_scores(problem):
    tables = retriever.ScoreTables(problem.params, problem.features)
    known, relations, directions, answers = problem.items
    candidates = np.concatenate([answers[:, None], problem.negatives], axis=1)
    scores = retriever.score_candidates(tables, known, relations, directions,
                                        candidates)
    return tables, candidates, scores


def _candidate_grads(problem, tables, candidates, d_scores):
    known, relations, directions, _ = problem.items
    buffer = retriever.candidate_backward(tables, known, relations, directions,
                                          candidates, d_scores)
    return retriever.param_grads(tables, buffer)


def kge_term(problem, gamma=6.0, adv_temperature=1.0):
    tables, candidates, scores = _candidate_scores(problem)
    loss, d_pos, d_neg = retriever.kge_loss_from_scores(
        scores[:, 0], scores[:, 1:], gamma, adv_temperature)
    d_scores = np.concatenate([d_pos[:, None], d_neg], axis=1)
    return loss, _candidate_grads(problem, tables, candidates, d_scores)


def rank_term(problem, margin=4.0):
    tables, candidates, scores = _candidate_scores(problem)
    n = len(scores)
    rows = np.arange(n)
    hardest = 1 + np.argmax(scores[:, 1:], axis=1)
    losses, d_pos, d_neg = retriever.rank_margin_loss(
        scores[:, 0], scores[rows, hardest], margin)
    d_scores = np.zeros_like(scores)
    d_scores[:, 0] = d_pos / n
    d_scores[rows, hardest] += d_neg / n
    return float(np.mean(losses)), _candidate_grads(problem, tables,
                                                    candidates, d_scores)


def ce_term(problem, direction):
    n = len(problem.triples)
    rows = np.arange(n) if direction == kgdata.Direction.TAIL else np.arange(n, 2 * n)
    provider = retriever.ContextProvider(problem.params, problem.features)
    loss, _, grads = diffusion.denoiser_rows_loss(
        problem.denoiser, provider, problem.draw.take(rows),
        np.full(n, 1.0 / n))
    return loss, grads


def distill_term(problem, tau=0.7):
    known, relations, directions, answers = problem.items
    provider = retriever.ContextProvider(problem.params, problem.features)
    teacher = retriever.score_queries(provider.tables, known, relations, directions)
    ids, teacher_scores = trainer.build_candidate_pools(
        teacher, answers, problem.dims.pool_size, 0.5,
        priorities=problem.priorities)
    logits, tape = diffusion.denoiser_forward(
        problem.denoiser, provider, known, relations, directions,
        np.full(len(known), problem.denoiser.mask_id), problem.schedule.T)
    kl, grad = trainer.distill_rows(ids, teacher_scores, logits, tau)
    n = len(known)
    return float(kl.mean()), diffusion.denoiser_backward(problem.denoiser, tape,
                                                         grad / n)


class _JointProblem:
    """ A tiny Trainer and one step's sampled inputs. Even seeds check a
        step before the freeze, odd seeds one after it; seeds 2, 3, 6, 7,
        ... hold distillation back until the freeze.
    """
    def __init__(self, dims, seed):
        rng = np.random.default_rng(seed)
        E = dims.n_entities
        features = featuremodel.EntityFeatures(
            _random_store(rng, E, dims.visual_dim),
            _random_store(rng, E, dims.textual_dim))
        triples = np.stack([
            rng.integers(0, E, dims.n_triples),
            rng.integers(0, dims.n_relations, dims.n_triples),
            rng.integers(0, E, dims.n_triples)], axis=1)
        kg = kgdata.KnowledgeGraph(
            kgdata.Vocabulary(f'e{i}' for i in range(E)),
            kgdata.Vocabulary(f'r{i}' for i in range(dims.n_relations)),
            triples, [], [])
        config = trainer.TrainConfig(
            d=dims.d, n_negatives=dims.n_negatives, T=dims.T,
            pool_size=dims.pool_size, K=dims.pool_size, freeze_epoch=1,
            epochs=2, seed=seed, d_time=dims.d_time, d_dir=dims.d_dir,
            hidden_layers=dims.hidden_layers, hidden_mult=dims.hidden_mult,
            distill_after_freeze=bool((seed // 2) % 2))
        self.trainer = trainer.Trainer(kg, features, config)
        gate = self.trainer.state.retriever.gate_logits
        gate[...] = rng.normal(size=gate.shape)
        self.epoch = 1 + seed % 2
        self.inputs = self.trainer.draw_step_inputs(triples, rng)
        self.rng = rng


def joint_checks(problem):
    """ The two objectives joint_step optimizes, each with the tensors
        its optimizer updates. The retriever objective drops out once
        the retriever is frozen.
    """
    t = problem.trainer
    cfg = t.config

    def retriever_loss():
        kge, rank, grads = t.retriever_objective(problem.inputs, problem.epoch)
        return kge + cfg.lambda_r * rank, grads

    def denoiser_loss():
        terms, grads = t.denoiser_objective(problem.inputs, problem.epoch)
        return terms['diff'] + t.distill_weight(problem.epoch) * terms['distill'], \
            grads

    checks = [(denoiser_loss, t.state.denoiser.tensors())]
    if problem.epoch <= cfg.freeze_epoch:
        checks.insert(0, (retriever_loss, t.state.retriever.tensors()))
    return checks


def _term_setup(term, problem):
    """ (closure returning (loss, grads), tensors it differentiates) """
    if term == 'kge':
        return (lambda: kge_term(problem)), problem.params.tensors()
    if term == 'rank':
        return (lambda: rank_term(problem)), problem.params.tensors()
    if term == 'tail-CE':
        return (lambda: ce_term(problem, kgdata.Direction.TAIL)), \
            problem.denoiser.tensors()
    if term == 'head-CE':
        return (lambda: ce_term(problem, kgdata.Direction.HEAD)), \
            problem.denoiser.tensors()
    if term == 'distill':
        return (lambda: distill_term(problem)), problem.denoiser.tensors()
    raise ValueError(f"Unknown loss term: {term!r}")


#########
# Suite #
#########
def check_term(term, seed, dims=None, max_coords=16, floor=FLOOR):
    dims = dims or GradCheckDims()
    if term == 'joint':
        problem = _JointProblem(dims, seed)
        checks = joint_checks(problem)
    else:
        problem = _Problem(dims, seed)
        checks = [_term_setup(term, problem)]
    worst, name = 0.0, None
    for loss_fn, tensors in checks:
        error, tensor = numkernel.grad_check_tensors(
            loss_fn, tensors, h=STEP, max_coords=max_coords, rng=problem.rng,
            floor=floor)
        if name is None or error > worst:
            worst, name = error, tensor
    return CheckResult(term, seed, worst, name)


def run_gradcheck(seeds=20, dims=None, terms=TERMS, tolerance=TOLERANCE,
                  max_coords=16, floor=FLOOR):
    """ Check every term for seeds 0..seeds-1 and return the report. """
    if seeds < 1:
        raise ValueError(f"seeds must be >= 1, got {seeds}")
    results = [check_term(term, seed, dims, max_coords, floor)
               for term in terms for seed in range(seeds)]
    report = GradCheckReport(results, tolerance)
    print(f"gradcheck: {len(results)} checks, {len(report.failures)} failure(s)")
    return report
