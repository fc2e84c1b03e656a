""" Discrete diffusion over entity ids.

    The forward process corrupts a clean id x0 into x_t by keeping it,
    replacing it with the absorbing MASK token (id |E|), or replacing it
    with a uniformly drawn other entity. The denoiser is an MLP that
    reads

        [context (2d); relation vector (2d); token (d_tok); time (d_time);
         direction (d_dir)]

    and predicts logits for x0 over all entities.
"""

###########
# Imports #
###########
# Import system packages
from dataclasses import dataclass
from enum import IntEnum

# Import data science packages
import numpy as np

# Import custom modules
from exceptions import numeric_exceptions
from models import numkernel
from models.kgdata import Direction


#############
# Constants #
#############
MIN_FREQUENCY = 1e-4


class Channel(IntEnum):
    KEPT = 0
    MASKED = 1
    REPLACED = 2


############
# Schedule #
############
class NoiseSchedule:
    """ Cosine keep curve with a linearly annealed replacement share.

        keep(t) = cos^2(t / T * pi / 2)
        rep(t)  = rho0 * (1 - t / T) * (1 - keep(t))
        mask(t) = 1 - keep(t) - rep(t)

        t = 0 is the clean state; t = T is pure masking.
    """
    def __init__(self, T, rho0=0.3):
        if T < 1:
            raise ValueError(f"T must be >= 1, got {T}")
        if not 0.0 <= rho0 <= 1.0:
            raise ValueError(f"rho0 must be in [0, 1], got {rho0}")
        self.T = int(T)
        self.rho0 = float(rho0)


    def probs(self, t):
        """ (keep, mask, rep) for a timestep or an array of them. """
        t_arr = np.asarray(t)
        if np.any(t_arr < 0) or np.any(t_arr > self.T):
            raise ValueError(f"Timestep out of range [0, {self.T}]: {t}")
        frac = t_arr / self.T
        keep = np.where(t_arr == self.T, 0.0, np.cos(frac * np.pi / 2.0)**2)
        rep = self.rho0 * (1.0 - frac) * (1.0 - keep)
        mask = 1.0 - keep - rep
        if t_arr.ndim == 0:
            return float(keep), float(mask), float(rep)
        return keep, mask, rep


def schedule_probs(schedule, t):
    return schedule.probs(t)


##############
# Corruption #
##############
@dataclass(frozen=True)
class CorruptionSample:
    x0: int
    t: int
    xt: int
    channel: Channel


def corrupt_batch(schedule, x0, t, n_entities, rng):
    """ Vectorized forward process. Returns (xt, channels).

        Every call draws one uniform and one replacement candidate per
        element, whichever channel wins, so the random stream advances
        identically for any schedule.
    """
    x0 = np.atleast_1d(np.asarray(x0, dtype=np.int64))
    t = np.broadcast_to(np.asarray(t, dtype=np.int64), x0.shape)
    keep, mask, rep = schedule.probs(t)
    if n_entities < 2 and np.any(rep > 0):
        raise ValueError("Replacement needs at least 2 entities")

    u = rng.random(x0.shape)
    draws = rng.integers(0, max(n_entities - 1, 1), size=x0.shape)
    replacement = draws + (draws >= x0)

    channels = np.where(u < keep, Channel.KEPT,
                        np.where(u < keep + mask, Channel.MASKED,
                                 Channel.REPLACED)).astype(np.int64)
    xt = np.where(channels == Channel.KEPT, x0,
                  np.where(channels == Channel.MASKED, n_entities, replacement))
    return xt, channels


def corrupt(schedule, x0, t, n_entities, rng):
    """ Corrupt one clean id. """
    xt, channels = corrupt_batch(schedule, [x0], t, n_entities, rng)
    return CorruptionSample(int(x0), int(t), int(xt[0]), Channel(int(channels[0])))


def timestep_embedding(t, d_time):
    """ Interleaved (sin(t w_k), cos(t w_k)) pairs with w_k geometric
        from 1 down to 1e-4. Accepts a scalar or an array of timesteps.
    """
    if d_time < 2 or d_time % 2:
        raise ValueError(f"d_time must be a positive even number, got {d_time}")
    omega = np.geomspace(1.0, MIN_FREQUENCY, d_time // 2)
    angles = np.asarray(t, dtype=np.float64)[..., None] * omega
    out = np.empty(angles.shape[:-1] + (d_time,))
    out[..., 0::2] = np.sin(angles)
    out[..., 1::2] = np.cos(angles)
    return out


############
# Denoiser #
############
class DenoiserParams:
    """ Token table (row |E| is MASK), direction rows (tail, head) and
        the MLP mapping the assembled input to |E| logits.
    """
    def __init__(self, token_table, direction, mlp, d_time):
        self.token_table = np.ascontiguousarray(token_table, dtype=np.float64)
        self.direction = np.ascontiguousarray(direction, dtype=np.float64)
        self.mlp = mlp
        self.d_time = int(d_time)

        n_entities = self.token_table.shape[0] - 1
        if self.direction.shape[0] != 2:
            raise numeric_exceptions.ShapeMismatch(
                'direction', (2, 'd_dir'), self.direction.shape)
        if mlp.output_dim != n_entities:
            raise numeric_exceptions.ShapeMismatch(
                'mlp output', n_entities, mlp.output_dim)
        if (mlp.input_dim - self.d_tok - self.d_time - self.d_dir) % 4:
            raise numeric_exceptions.ShapeMismatch(
                'mlp input', '4d + d_tok + d_time + d_dir', mlp.input_dim)


    @classmethod
    def init(cls, n_entities, d, rng, d_time=64, d_dir=32, hidden_layers=2,
             hidden_mult=4):
        d_tok = 2 * d
        width = 2 * d + 2 * d + d_tok + d_time + d_dir
        hidden = hidden_mult * 2 * d
        sizes = [width] + [hidden] * hidden_layers + [n_entities]
        return cls(
            token_table=rng.normal(0.0, 1.0 / np.sqrt(d_tok),
                                   size=(n_entities + 1, d_tok)),
            direction=rng.normal(0.0, 1.0 / np.sqrt(d_dir), size=(2, d_dir)),
            mlp=numkernel.MlpParams.init(sizes, rng),
            d_time=d_time,
        )


    @classmethod
    def from_tensors(cls, tensors, d_time):
        layers = sorted({int(name.split('.')[1]) for name in tensors
                         if name.startswith('mlp.')})
        if not layers or layers != list(range(len(layers))):
            raise numeric_exceptions.ShapeMismatch(
                'denoiser mlp layers', 'mlp.0 .. mlp.N', layers)
        mlp = numkernel.MlpParams(
            [np.ascontiguousarray(tensors[f'mlp.{i}.weight'], dtype=np.float64)
             for i in layers],
            [np.ascontiguousarray(tensors[f'mlp.{i}.bias'], dtype=np.float64)
             for i in layers])
        return cls(tensors['token_table'], tensors['direction'], mlp, d_time)


    def tensors(self):
        named = {'token_table': self.token_table, 'direction': self.direction}
        named.update(self.mlp.tensors('mlp'))
        return named


    def copy(self):
        return DenoiserParams.from_tensors(
            {name: arr.copy() for name, arr in self.tensors().items()},
            self.d_time)


    @property
    def n_entities(self):
        return self.token_table.shape[0] - 1


    @property
    def mask_id(self):
        return self.n_entities


    @property
    def d_tok(self):
        return self.token_table.shape[1]


    @property
    def d_dir(self):
        return self.direction.shape[1]


    @property
    def d_context(self):
        """ Width 2d of the context and relation slices. """
        return (self.mlp.input_dim - self.d_tok - self.d_time - self.d_dir) // 2


def assemble_input(denoiser, context, relation_vec, xt, t, direction):
    """ Concatenate [context; relation; token; time; direction] per row.
        1-D context gives a single input vector.
    """
    single = np.ndim(context) == 1
    context = np.atleast_2d(context)
    relation_vec = np.atleast_2d(relation_vec)
    xt = np.atleast_1d(np.asarray(xt, dtype=np.int64))
    n = context.shape[0]
    t = np.broadcast_to(np.asarray(t), (n,))
    direction = np.broadcast_to(np.asarray(direction, dtype=np.int64), (n,))

    width = denoiser.d_context
    for name, arr in (('context', context), ('relation_vec', relation_vec)):
        if arr.shape != (n, width):
            raise numeric_exceptions.ShapeMismatch(name, (n, width), arr.shape)
    if xt.shape != (n,):
        raise numeric_exceptions.ShapeMismatch('xt', (n,), xt.shape)
    if np.any(xt < 0) or np.any(xt > denoiser.mask_id):
        raise ValueError(f"Token ids must lie in [0, {denoiser.mask_id}]")

    out = np.concatenate([
        context,
        relation_vec,
        denoiser.token_table[xt],
        timestep_embedding(t, denoiser.d_time),
        denoiser.direction[direction],
    ], axis=1)
    return out[0] if single else out


def denoise_logits(denoiser, x):
    """ Raw logits over all entities. """
    logits, _ = numkernel.mlp_apply(denoiser.mlp, x)
    return logits


class DenoiserTape:
    def __init__(self, mlp_tape, xt, directions):
        self.mlp_tape = mlp_tape
        self.xt = xt
        self.directions = directions


def denoiser_forward(denoiser, provider, known, relations, directions, xt, t):
    """ Logits (n, |E|) plus the tape for denoiser_backward. Context and
        relation vectors come from a retriever ContextProvider.
    """
    known = np.asarray(known, dtype=np.int64)
    relations = np.asarray(relations, dtype=np.int64)
    directions = np.asarray(directions, dtype=np.int64)
    xt = np.asarray(xt, dtype=np.int64)
    x = assemble_input(denoiser, provider.context(known, relations),
                       provider.relation_vectors(relations), xt, t, directions)
    logits, tape = numkernel.mlp_apply(denoiser.mlp, x)
    return logits, DenoiserTape(tape, xt, directions)


def denoiser_backward(denoiser, tape, d_logits):
    """ Gradients for every denoiser tensor. Context, relation and time
        slices of the input are constants.
    """
    grads, d_input = numkernel.mlp_backward(denoiser.mlp, tape.mlp_tape,
                                            d_logits, prefix='mlp')
    start = 2 * denoiser.d_context
    d_token = d_input[:, start:start + denoiser.d_tok]
    d_dir = d_input[:, -denoiser.d_dir:]

    token_grad = np.zeros_like(denoiser.token_table)
    np.add.at(token_grad, tape.xt, d_token)
    direction_grad = np.zeros_like(denoiser.direction)
    np.add.at(direction_grad, tape.directions, d_dir)

    out = {'token_table': token_grad, 'direction': direction_grad}
    out.update(grads)
    return out


def inference_logits(denoiser, provider, known, relations, directions, T):
    """ Logits at the inference condition x_T = MASK, t = T. """
    known = np.atleast_1d(known)
    xt = np.full(known.shape, denoiser.mask_id)
    logits, _ = denoiser_forward(denoiser, provider, known,
                                 np.atleast_1d(relations),
                                 np.atleast_1d(directions), xt, T)
    return logits


##################
# Diffusion loss #
##################
@dataclass
class DenoiserBatch:
    """ Rows of denoiser training examples: tail rows first, then head rows. """
    known: np.ndarray
    relations: np.ndarray
    directions: np.ndarray
    answers: np.ndarray
    xt: np.ndarray
    t: np.ndarray
    channels: np.ndarray


    def __len__(self):
        return len(self.known)


    def take(self, index):
        return DenoiserBatch(*(getattr(self, name)[index] for name in (
            'known', 'relations', 'directions', 'answers', 'xt', 't',
            'channels')))


def draw_diffusion_samples(triples, schedule, n_entities, rng):
    """ One timestep per triple, shared by its tail and head rows. """
    triples = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
    n = len(triples)
    t = rng.integers(1, schedule.T + 1, size=n)
    xt_tail, ch_tail = corrupt_batch(schedule, triples[:, 2], t, n_entities, rng)
    xt_head, ch_head = corrupt_batch(schedule, triples[:, 0], t, n_entities, rng)
    return DenoiserBatch(
        known=np.concatenate([triples[:, 0], triples[:, 2]]),
        relations=np.concatenate([triples[:, 1], triples[:, 1]]),
        directions=np.concatenate([np.full(n, Direction.TAIL),
                                   np.full(n, Direction.HEAD)]).astype(np.int64),
        answers=np.concatenate([triples[:, 2], triples[:, 0]]),
        xt=np.concatenate([xt_tail, xt_head]),
        t=np.concatenate([t, t]),
        channels=np.concatenate([ch_tail, ch_head]),
    )


def row_weights(n_triples, lambda_h, tail_only=False):
    """ Per-row weights turning summed CE into L_tail + lambda_h L_head. """
    head = 0.0 if tail_only else lambda_h
    return np.concatenate([np.full(n_triples, 1.0 / n_triples),
                           np.full(n_triples, head / n_triples)])


def denoiser_rows_loss(denoiser, provider, batch, weights):
    """ sum(weights * CE) over rows, the per-row CE values and the
        gradient of the weighted sum.
    """
    logits, tape = denoiser_forward(denoiser, provider, batch.known,
                                    batch.relations, batch.directions,
                                    batch.xt, batch.t)
    ce, d_logits = numkernel.softmax_ce(logits, batch.answers)
    grads = denoiser_backward(denoiser, tape, d_logits * weights[:, None])
    return float(np.dot(weights, ce)), ce, grads


def diffusion_loss_from_draw(denoiser, provider, batch, lambda_h,
                             tail_only=False):
    """ Returns (loss, L_tail, L_head, grads) for a drawn batch. """
    if lambda_h <= 0:
        raise ValueError(f"lambda_h must be > 0, got {lambda_h}")
    n = len(batch) // 2
    weights = row_weights(n, lambda_h, tail_only)
    loss, ce, grads = denoiser_rows_loss(denoiser, provider, batch, weights)
    return loss, float(ce[:n].mean()), float(ce[n:].mean()), grads


def diffusion_loss(denoiser, triples, provider, schedule, lambda_h, rng,
                   tail_only=False):
    """ L_diff = L_tail + lambda_h L_head over a batch of triples. """
    batch = draw_diffusion_samples(triples, schedule, denoiser.n_entities, rng)
    loss, _, _, grads = diffusion_loss_from_draw(denoiser, provider, batch,
                                                 lambda_h, tail_only)
    return loss, grads
