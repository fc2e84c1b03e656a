""" Joint training of the retriever and the denoiser.

    One step, in order:
        1. KGE loss (plus the weighted margin ranking term) on both
           directions of every triple; retriever Adam step while the
           epoch is at or before freeze_epoch.
        2. Teacher scores from the (possibly just updated) retriever,
           candidate pools, and the distillation term at the inference
           condition x_t = MASK, t = T.
        3. Bidirectional diffusion loss; denoiser Adam step on
           L_diff + lambda_d L_distill; EMA update.

    All random draws of a step come from the epoch's stream in the main
    thread. Worker threads only split the per-item loss and gradient
    work and their buffers are summed in worker order.
"""

###########
# Imports #
###########
# Import system packages
import math
from dataclasses import asdict, dataclass, fields

# Import data science packages
import numpy as np

# Import custom modules
from exceptions import config_exceptions
from exceptions import numeric_exceptions
from functions import general
from models import checkpoint
from models import diffusion
from models import evalrank
from models import filehandler
from models import historymodel
from models import kgdata
from models import numkernel
from models import retriever


#############
# Constants #
#############
LOG_FILE = 'train_log.tsv'
PLOT_FILE = 'training_curves.png'
EVAL_WEIGHTS = ('ema', 'live')


##########
# Config #
##########
@dataclass(frozen=True)
class TrainConfig:
    """ Training hyperparameters. A freeze_epoch at or past `epochs`
        means the retriever is never frozen in this run.
    """
    d: int = 250
    batch_size: int = 1024
    n_negatives: int = 128
    lr_kge: float = 1e-4
    lr_denoiser: float = 1e-4
    T: int = 100
    rho0: float = 0.3
    lambda_h: float = 2.0
    lambda_d: float = 1.0
    lambda_r: float = 0.1
    margin: float = 4.0
    gamma_kge: float = 6.0
    adv_temperature: float = 1.0
    tau: float = 0.7
    pool_size: int = 64
    hard_fraction: float = 0.5
    K: int = 256
    freeze_epoch: int = 100
    ema_decay: float = 0.9999
    ema_warmup: bool = True
    epochs: int = 1000
    eval_every: int = 50
    seed: int = 0
    d_time: int = 64
    d_dir: int = 32
    hidden_layers: int = 2
    hidden_mult: int = 4
    structure_only: bool = False
    tail_only: bool = False
    distill_after_freeze: bool = False
    augment_inverse_relations: bool = False
    eval_inference: str = 'single_pass'
    eval_weights: str = 'ema'
    valid_max_queries: int = 0


    def problems(self, n_entities=None):
        """ Every violated constraint, as readable strings. """
        found = []
        for name in ('d', 'batch_size', 'n_negatives', 'T', 'eval_every',
                     'hidden_layers', 'hidden_mult', 'd_dir', 'K'):
            if getattr(self, name) < 1:
                found.append(f"{name} must be >= 1, got {getattr(self, name)}")
        for name in ('lr_kge', 'lr_denoiser', 'lambda_h', 'tau'):
            if not getattr(self, name) > 0:
                found.append(f"{name} must be > 0, got {getattr(self, name)}")
        for name in ('lambda_d', 'lambda_r', 'margin', 'gamma_kge',
                     'adv_temperature', 'epochs', 'freeze_epoch',
                     'valid_max_queries'):
            if getattr(self, name) < 0:
                found.append(f"{name} must be >= 0, got {getattr(self, name)}")
        for name in ('rho0', 'hard_fraction', 'ema_decay'):
            if not 0.0 <= getattr(self, name) <= 1.0:
                found.append(f"{name} must be in [0, 1], got {getattr(self, name)}")
        if self.d_time < 2 or self.d_time % 2:
            found.append(f"d_time must be a positive even number, got {self.d_time}")
        if self.pool_size < 2:
            found.append(f"pool_size must be >= 2, got {self.pool_size}")
        if self.eval_inference not in evalrank.INFERENCE_MODES:
            found.append(f"eval_inference must be one of "
                         f"{evalrank.INFERENCE_MODES}, got {self.eval_inference!r}")
        if self.eval_weights not in EVAL_WEIGHTS:
            found.append(f"eval_weights must be one of {EVAL_WEIGHTS}, "
                         f"got {self.eval_weights!r}")
        if n_entities is not None:
            if n_entities < 2:
                found.append(f"training needs at least 2 entities, got {n_entities}")
            if self.K > n_entities:
                found.append(f"K ({self.K}) must not exceed the entity count "
                             f"({n_entities})")
            if self.pool_size > n_entities:
                found.append(f"pool_size ({self.pool_size}) must not exceed "
                             f"the entity count ({n_entities})")
        return found


    def to_text(self):
        return filehandler.format_key_values(asdict(self))


    @classmethod
    def from_text(cls, text, source='<config>'):
        """ Parse canonical key = value text; unknown keys are ignored so
            that a full run config can be read back.
        """
        pairs, problems = filehandler.parse_key_values(text, source)
        kinds = {f.name: type(f.default) for f in fields(cls)}
        values = {}
        for number, key, raw in pairs:
            if key not in kinds:
                continue
            try:
                values[key] = general.coerce_value(raw, kinds[key])
            except ValueError as err:
                problems.append(f"{source} line {number}: {key}: {err}")
        if problems:
            raise config_exceptions.ConfigError(problems)
        return cls(**values)


##################
# Candidate pool #
##################
@dataclass(frozen=True)
class CandidatePool:
    ids: np.ndarray
    teacher_scores: np.ndarray


@dataclass(frozen=True)
class StepInputs:
    """ Sampled inputs of one joint step. """
    items: tuple
    negatives: np.ndarray
    draw: diffusion.DenoiserBatch
    distill_items: tuple
    priorities: np.ndarray


def build_candidate_pools(scores, answers, pool_size, hard_fraction, rng=None,
                          priorities=None):
    """ Row-wise pools: [answer, hard negatives, random negatives].

        ceil(hard_fraction * (pool_size - 1)) slots take the best-scoring
        non-answer entities; the rest are drawn uniformly without
        replacement from what is left. `priorities` (n, E) uniforms may
        be supplied instead of `rng`.
    """
    scores = np.atleast_2d(np.asarray(scores, dtype=np.float64))
    n, n_entities = scores.shape
    answers = np.asarray(answers, dtype=np.int64).reshape(n)
    if pool_size > n_entities:
        raise ValueError(f"pool_size ({pool_size}) exceeds the entity count "
                         f"({n_entities})")
    if pool_size < 2:
        raise ValueError(f"pool_size must be >= 2, got {pool_size}")

    n_hard = math.ceil(hard_fraction * (pool_size - 1))
    n_random = pool_size - 1 - n_hard
    rows = np.arange(n)

    order = retriever.rank_order(scores)
    order = order[order != answers[:, None]].reshape(n, n_entities - 1)
    hard = order[:, :n_hard]

    if priorities is None:
        priorities = rng.random((n, n_entities))
    priorities = np.array(priorities, dtype=np.float64, copy=True)
    priorities[rows, answers] = np.inf
    np.put_along_axis(priorities, hard, np.inf, axis=1)
    randoms = np.argsort(priorities, axis=1, kind='stable')[:, :n_random]

    ids = np.concatenate([answers[:, None], hard, randoms], axis=1)
    return ids, np.take_along_axis(scores, ids, axis=1)


def build_candidate_pool(scores, answer, pool_size, hard_fraction, rng):
    ids, teacher = build_candidate_pools(np.asarray(scores)[None, :], [answer],
                                         pool_size, hard_fraction, rng)
    return CandidatePool(ids[0], teacher[0])


def distill_rows(ids, teacher_scores, student_logits, tau):
    """ Per-row tempered KL over the pool slice and its gradient
        scattered back to full (n, E) logits, zero off-pool.
    """
    student_logits = np.atleast_2d(student_logits)
    pool_logits = np.take_along_axis(student_logits, ids, axis=1)
    kl, grad = numkernel.tempered_kl(teacher_scores, pool_logits, tau)
    full = np.zeros_like(student_logits, dtype=np.float64)
    np.put_along_axis(full, ids, grad, axis=1)
    return np.atleast_1d(kl), full


def distill_loss(pool, student_logits_full, tau):
    kl, grad = distill_rows(pool.ids[None, :], pool.teacher_scores[None, :],
                            np.asarray(student_logits_full)[None, :], tau)
    return float(kl[0]), grad[0]


#########
# State #
#########
class TrainState:
    """ Live parameters, optimizer moments, EMA shadow and counters. """
    def __init__(self, retriever_params, denoiser, ema, adam_retriever,
                 adam_denoiser, epoch=0, step=0, history=None,
                 best_mrr=-np.inf, best_epoch=-1):
        self.retriever = retriever_params
        self.denoiser = denoiser
        self.ema = ema
        self.adam_retriever = adam_retriever
        self.adam_denoiser = adam_denoiser
        self.epoch = epoch
        self.step = step
        self.history = history or historymodel.HistoryWrangler()
        self.best_mrr = best_mrr
        self.best_epoch = best_epoch


    @classmethod
    def fresh(cls, kg, features, config):
        rng = np.random.default_rng(config.seed)
        kge_relations = kg.n_relations * (2 if config.augment_inverse_relations else 1)
        params = retriever.RetrieverParams.init(
            kg.n_entities, kge_relations, config.d, features.visual.dim,
            features.textual.dim, rng, config.structure_only)
        denoiser = diffusion.DenoiserParams.init(
            kg.n_entities, config.d, rng, config.d_time, config.d_dir,
            config.hidden_layers, config.hidden_mult)
        return cls(
            params, denoiser,
            numkernel.EmaState(denoiser.tensors(), config.ema_decay),
            numkernel.AdamState(params.tensors(), config.lr_kge),
            numkernel.AdamState(denoiser.tensors(), config.lr_denoiser))


    def retriever_hash(self):
        return general.tensor_hash(self.retriever.tensors())


def _sum_grads(parts):
    total = {}
    for grads in parts:
        for name, g in grads.items():
            if name in total:
                total[name] = total[name] + g
            else:
                total[name] = np.array(g, dtype=np.float64, copy=True)
    return total


def _split(n, threads):
    return [idx for idx in np.array_split(np.arange(n), max(threads, 1))
            if len(idx)]


###########
# Trainer #
###########
class Trainer:
    """ Runs epochs of joint steps, evaluates on the validation split and
        keeps the checkpoint with the best validation MRR.
    """
    def __init__(self, kg, features, config, threads=1, run_dir=None,
                 state=None):
        problems = config.problems(kg.n_entities)
        if features.n_entities != kg.n_entities:
            problems.append(f"feature stores cover {features.n_entities} "
                            f"entities, the graph has {kg.n_entities}")
        if problems:
            raise config_exceptions.ConfigError(problems)

        self.kg = kg
        self.features = features
        self.config = config
        self.threads = max(1, int(threads))
        self.run_dir = run_dir
        self.schedule = diffusion.NoiseSchedule(config.T, config.rho0)
        self.state = state or TrainState.fresh(kg, features, config)
        self.best = None
        self.final = None
        self._log = None
        if run_dir is not None:
            self._log = filehandler.TSVFile(
                LOG_FILE, fieldnames=historymodel.COLUMNS, data_directory=run_dir)


    #############
    # Resuming #
    #############
    @classmethod
    def resume(cls, kg, features, ckpt, config=None, threads=1, run_dir=None):
        """ Continue from a checkpoint. `config` may extend `epochs`;
            architecture fields must match the checkpoint.
        """
        stored = TrainConfig.from_text(ckpt.config_text)
        config = config or stored
        checkpoint.check_compatible(ckpt, kg.n_entities, kg.n_relations,
                                    features.visual.dim, features.textual.dim)
        architecture = ('d', 'd_time', 'd_dir', 'hidden_layers', 'hidden_mult',
                        'structure_only', 'augment_inverse_relations')
        changed = [name for name in architecture
                   if getattr(config, name) != getattr(stored, name)]
        if changed:
            raise config_exceptions.ConfigError(
                [f"{name} differs from the checkpoint" for name in changed])
        return cls(kg, features, config, threads, run_dir,
                   state_from_checkpoint(ckpt, config))


    ############
    # One step #
    ############
    def draw_step_inputs(self, batch, rng):
        """ Every random quantity of one step, drawn up front in a fixed
            order from the epoch's stream.
        """
        cfg = self.config
        n_entities = self.kg.n_entities
        batch = np.asarray(batch, dtype=np.int64).reshape(-1, 3)
        kge_triples = batch
        if cfg.augment_inverse_relations:
            kge_triples = np.concatenate(
                [batch, kgdata.inverse_triples(batch, self.kg.n_relations)])
        items = kgdata.triple_items(kge_triples)
        negatives = retriever.sample_negatives(n_entities, items[3],
                                               cfg.n_negatives, rng)
        draw = diffusion.draw_diffusion_samples(batch, self.schedule,
                                                n_entities, rng)
        distill_items = kgdata.triple_items(batch)
        if cfg.tail_only:
            distill_items = tuple(arr[:len(batch)] for arr in distill_items)
        priorities = rng.random((len(distill_items[0]), n_entities))
        return StepInputs(items, negatives, draw, distill_items, priorities)


    def retriever_objective(self, inputs, epoch):
        """ (kge, rank, grads) where grads is the gradient of
            L_kge + lambda_r L_rank, or None once the retriever is frozen.
        """
        active = epoch <= self.config.freeze_epoch
        tables = retriever.ScoreTables(self.state.retriever, self.features)
        kge, rank, grads = self._retriever_terms(tables, inputs.items,
                                                 inputs.negatives,
                                                 with_grads=active)
        if not (np.isfinite(kge) and np.isfinite(rank)):
            raise numeric_exceptions.NonFiniteLoss(
                epoch, self.state.step, {'kge': kge, 'rank': rank})
        return kge, rank, grads


    def distill_weight(self, epoch):
        if self.config.distill_after_freeze and epoch <= self.config.freeze_epoch:
            return 0.0
        return self.config.lambda_d


    def denoiser_objective(self, inputs, epoch):
        """ (terms, grads): the diffusion and distillation losses and the
            gradient of L_diff + lambda_d L_distill on the denoiser.
        """
        provider = retriever.ContextProvider(self.state.retriever, self.features)
        lambda_d = self.distill_weight(epoch)
        distill, distill_grads = self._distill_terms(
            provider, inputs.distill_items, inputs.priorities,
            with_grads=lambda_d > 0)
        diff, tail, head, grads = self._diffusion_terms(provider, inputs.draw)
        if lambda_d > 0:
            grads = _sum_grads([grads, {name: lambda_d * g for name, g
                                        in distill_grads.items()}])
        terms = {'diff': diff, 'tail': tail, 'head': head, 'distill': distill}
        return terms, grads


    def joint_step(self, batch, epoch, rng):
        """ One optimization step on a batch of training triples.
            Returns the loss breakdown.
        """
        cfg = self.config
        state = self.state
        inputs = self.draw_step_inputs(batch, rng)

        # Retriever
        kge, rank, retriever_grads = self.retriever_objective(inputs, epoch)
        if retriever_grads is not None:
            numkernel.adam_step(state.adam_retriever, state.retriever.tensors(),
                                retriever_grads)

        # Denoiser, conditioned on the retriever as just updated
        terms, grads = self.denoiser_objective(inputs, epoch)
        breakdown = {
            'kge': kge, 'diff': terms['diff'], 'tail': terms['tail'],
            'head': terms['head'], 'distill': terms['distill'], 'rank': rank,
            'total': (kge + terms['diff'] + self.distill_weight(epoch) *
                      terms['distill'] + cfg.lambda_r * rank),
        }
        if not all(np.isfinite(value) for value in breakdown.values()):
            raise numeric_exceptions.NonFiniteLoss(epoch, state.step, breakdown)
        numkernel.adam_step(state.adam_denoiser, state.denoiser.tensors(), grads)

        decay = cfg.ema_decay
        if cfg.ema_warmup:
            decay = numkernel.warmup_decay(cfg.ema_decay, state.ema.updates)
        numkernel.ema_update(state.ema, state.denoiser.tensors(), decay)
        state.step += 1
        return breakdown


    def _retriever_terms(self, tables, items, negatives, with_grads=True):
        cfg = self.config
        known, relations, directions, answers = items
        candidates = np.concatenate([answers[:, None], negatives], axis=1)
        parts = _split(len(known), self.threads)

        def score(idx):
            return retriever.score_candidates(
                tables, known[idx], relations[idx], directions[idx], candidates[idx])

        scores = np.concatenate(general.ordered_map(score, parts, self.threads))
        n = len(scores)
        rows = np.arange(n)
        kge, d_pos, d_neg = retriever.kge_loss_from_scores(
            scores[:, 0], scores[:, 1:], cfg.gamma_kge, cfg.adv_temperature)

        # Margin term against the hardest sampled negative of each item
        hardest = 1 + np.argmax(scores[:, 1:], axis=1)
        margins, r_pos, r_neg = retriever.rank_margin_loss(
            scores[:, 0], scores[rows, hardest], cfg.margin)
        rank = float(np.mean(margins))
        if not with_grads:
            return kge, rank, None

        d_scores = np.concatenate([d_pos[:, None], d_neg], axis=1)
        d_scores[:, 0] += cfg.lambda_r * r_pos / n
        d_scores[rows, hardest] += cfg.lambda_r * r_neg / n

        def backward(idx):
            return retriever.candidate_backward(
                tables, known[idx], relations[idx], directions[idx],
                candidates[idx], d_scores[idx])

        buffers = general.ordered_map(backward, parts, self.threads)
        total = buffers[0]
        for buffer in buffers[1:]:
            total.add(buffer)
        return kge, rank, retriever.param_grads(tables, total)


    def _distill_terms(self, provider, items, priorities, with_grads=True):
        cfg = self.config
        known, relations, directions, answers = items
        teacher = retriever.score_queries(provider.tables, known, relations,
                                          directions)
        ids, teacher_scores = build_candidate_pools(
            teacher, answers, cfg.pool_size, cfg.hard_fraction,
            priorities=priorities)
        n = len(known)
        xt = np.full(n, self.state.denoiser.mask_id)
        denoiser = self.state.denoiser

        def work(idx):
            logits, tape = diffusion.denoiser_forward(
                denoiser, provider, known[idx], relations[idx], directions[idx],
                xt[idx], self.schedule.T)
            kl, grad = distill_rows(ids[idx], teacher_scores[idx], logits, cfg.tau)
            grads = (diffusion.denoiser_backward(denoiser, tape, grad / n)
                     if with_grads else {})
            return kl, grads

        parts = general.ordered_map(work, _split(n, self.threads), self.threads)
        distill = float(np.concatenate([p[0] for p in parts]).mean())
        return distill, _sum_grads(p[1] for p in parts)


    def _diffusion_terms(self, provider, draw):
        cfg = self.config
        n = len(draw) // 2
        weights = diffusion.row_weights(n, cfg.lambda_h, cfg.tail_only)
        denoiser = self.state.denoiser

        def work(idx):
            return diffusion.denoiser_rows_loss(denoiser, provider,
                                                draw.take(idx), weights[idx])

        parts = general.ordered_map(work, _split(len(draw), self.threads),
                                    self.threads)
        diff = float(sum(p[0] for p in parts))
        ce = np.concatenate([p[1] for p in parts])
        return diff, float(ce[:n].mean()), float(ce[n:].mean()), \
            _sum_grads(p[2] for p in parts)


    ##########
    # Epochs #
    ##########
    def run_epoch(self, epoch):
        """ Shuffled batches over the training split; returns the mean
            of each loss term over the epoch's steps.
        """
        rng = np.random.default_rng([self.config.seed, epoch])
        sums = {}
        steps = 0
        for batch in kgdata.iter_batches(self.kg.train, self.config.batch_size, rng):
            for name, value in self.joint_step(batch, epoch, rng).items():
                sums[name] = sums.get(name, 0.0) + value
            steps += 1
        return {name: value / steps for name, value in sums.items()}


    def eval_states(self, weights=None):
        """ ModelStates built from the float32-rounded parameters, so
            the numbers match a later evaluation of the saved checkpoint.
        """
        return states_from_checkpoint(self.snapshot(),
                                      weights or self.config.eval_weights,
                                      self.features)


    def validate(self):
        max_queries = self.config.valid_max_queries
        return evalrank.evaluate(self.kg, self.eval_states(), self.config,
                                 evalrank.AblationMode.FULL, 'valid',
                                 self.threads, max_queries)


    def _record(self, epoch, losses):
        report = self.validate()
        summary = report.overall
        point = self.state.history.new_data_point(
            epoch, **(losses or {}), valid_mrr=summary['mrr'],
            valid_h1=summary['h1'], valid_h3=summary['h3'],
            valid_h10=summary['h10'])

        if summary['mrr'] > self.state.best_mrr:
            self.state.best_mrr = summary['mrr']
            self.state.best_epoch = epoch
            self.best = self.snapshot()

        row = point.as_dict()
        print('\t'.join(_log_cell(row[name]) for name in historymodel.COLUMNS))
        if self._log is not None:
            self._log.save({name: _log_cell(row[name])
                            for name in historymodel.COLUMNS})
        return report


    def train(self):
        """ Epoch loop. Returns the checkpoint with the best validation
            MRR; the last state is kept in self.final.
        """
        cfg = self.config
        print("trainer: " + '\t'.join(historymodel.COLUMNS))
        if len(self.state.history) == 0:
            self._record(0, None)
        elif self.best is None:
            self.best = self.snapshot()

        for epoch in range(self.state.epoch + 1, cfg.epochs + 1):
            losses = self.run_epoch(epoch)
            self.state.epoch = epoch
            if epoch % cfg.eval_every == 0 or epoch == cfg.epochs:
                self._record(epoch, losses)

        self.final = self.snapshot()
        if self.run_dir is not None and len(self.state.history):
            self.state.history.plot_data(f"{self.run_dir}/{PLOT_FILE}")
        print(f"trainer: Best validation MRR {self.state.best_mrr:.4f} at "
              f"epoch {self.state.best_epoch}")
        return self.best


    ###############
    # Checkpoints #
    ###############
    def snapshot(self):
        """ float32 Checkpoint of the current state. """
        state = self.state
        cfg = self.config
        meta = {
            'n_entities': self.kg.n_entities,
            'n_relations': self.kg.n_relations,
            'kge_relations': state.retriever.n_relations,
            'd': cfg.d,
            'visual_dim': self.features.visual.dim,
            'textual_dim': self.features.textual.dim,
            'd_time': cfg.d_time,
            'd_dir': cfg.d_dir,
            'hidden_layers': cfg.hidden_layers,
            'hidden_mult': cfg.hidden_mult,
            'structure_only': cfg.structure_only,
            'epoch': state.epoch,
            'step': state.step,
            'ema_updates': state.ema.updates,
            'adam_retriever_step': state.adam_retriever.step,
            'adam_denoiser_step': state.adam_denoiser.step,
            'best_epoch': state.best_epoch,
            'best_mrr': repr(float(state.best_mrr)),
            'retriever_hash': state.retriever_hash(),
        }
        tensors = {}
        groups = (
            ('retriever', state.retriever.tensors()),
            ('denoiser', state.denoiser.tensors()),
            ('ema', state.ema.shadow),
            ('adam_retriever/m', state.adam_retriever.m),
            ('adam_retriever/v', state.adam_retriever.v),
            ('adam_denoiser/m', state.adam_denoiser.m),
            ('adam_denoiser/v', state.adam_denoiser.v),
        )
        for prefix, group in groups:
            tensors.update({f'{prefix}/{name}': arr for name, arr in group.items()})
        return checkpoint.Checkpoint(cfg.to_text(), meta, state.history.copy(),
                                     tensors)


def _log_cell(value):
    if isinstance(value, (int, np.integer)):
        return str(value)
    return f"{value:.6f}"


#################################
# Rebuilding from a checkpoint #
#################################
def _float64(group):
    return {name: np.array(arr, dtype=np.float64) for name, arr in group.items()}


def state_from_checkpoint(ckpt, config=None):
    config = config or TrainConfig.from_text(ckpt.config_text)
    params = retriever.RetrieverParams.from_tensors(
        _float64(ckpt.group('retriever')), ckpt.meta_bool('structure_only'))
    denoiser = diffusion.DenoiserParams.from_tensors(
        _float64(ckpt.group('denoiser')), ckpt.meta_int('d_time'))

    ema = numkernel.EmaState(denoiser.tensors(), config.ema_decay)
    ema.shadow = _float64(ckpt.group('ema'))
    ema.updates = ckpt.meta_int('ema_updates')

    adams = []
    for prefix, live, lr in (('adam_retriever', params, config.lr_kge),
                             ('adam_denoiser', denoiser, config.lr_denoiser)):
        adam = numkernel.AdamState(live.tensors(), lr)
        adam.m = _float64(ckpt.group(f'{prefix}/m'))
        adam.v = _float64(ckpt.group(f'{prefix}/v'))
        adam.step = ckpt.meta_int(f'{prefix}_step')
        adams.append(adam)

    return TrainState(params, denoiser, ema, adams[0], adams[1],
                      epoch=ckpt.meta_int('epoch'), step=ckpt.meta_int('step'),
                      history=ckpt.history.copy(),
                      best_mrr=ckpt.meta_float('best_mrr'),
                      best_epoch=ckpt.meta_int('best_epoch'))


def states_from_checkpoint(ckpt, weights, features):
    """ evalrank.ModelStates with EMA ('ema') or live ('live') denoiser
        weights.
    """
    if weights not in EVAL_WEIGHTS:
        raise ValueError(f"weights must be one of {EVAL_WEIGHTS}, got {weights!r}")
    config = TrainConfig.from_text(ckpt.config_text)
    params = retriever.RetrieverParams.from_tensors(
        _float64(ckpt.group('retriever')), ckpt.meta_bool('structure_only'))
    group = 'ema' if weights == 'ema' else 'denoiser'
    denoiser = diffusion.DenoiserParams.from_tensors(
        _float64(ckpt.group(group)), ckpt.meta_int('d_time'))
    return evalrank.ModelStates(params, features, denoiser,
                                diffusion.NoiseSchedule(config.T, config.rho0))


def train(kg, features, config, threads=1, run_dir=None):
    """ Train from scratch and return the best checkpoint. """
    return Trainer(kg, features, config, threads, run_dir).train()
