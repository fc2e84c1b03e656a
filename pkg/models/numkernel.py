""" Dense numeric primitives with hand-derived gradients.

    Contains the MLP forward/backward pair, the two classification
    losses (softmax cross-entropy and tempered KL), Adam, EMA and a
    central-difference gradient checker.

    Parameters are plain numpy arrays collected in ordered
    name -> array dicts. Optimizers, EMA and checkpoints all work on
    those dicts, and they update the arrays IN PLACE so that model
    objects holding references keep seeing current values.
"""

###########
# Imports #
###########
# Import data science packages
import numpy as np
from scipy import special

# Import custom modules
from exceptions import numeric_exceptions


#############
# Constants #
#############
GELU_C = np.sqrt(2.0 / np.pi)
GELU_A = 0.044715


###############
# Activations #
###############
def gelu(x):
    """ Tanh approximation of the Gaussian error gated linear unit. """
    u = GELU_C * (x + GELU_A * x**3)
    return 0.5 * x * (1.0 + np.tanh(u))


def gelu_grad(x):
    """ Derivative of gelu() with respect to its input. """
    u = GELU_C * (x + GELU_A * x**3)
    th = np.tanh(u)
    du = GELU_C * (1.0 + 3.0 * GELU_A * x**2)
    return 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th**2) * du


ACTIVATIONS = {
    'gelu': (gelu, gelu_grad),
    'identity': (lambda x: x, lambda x: np.ones_like(x)),
}


#######
# MLP #
#######
class MlpParams:
    """ Weights and biases of a fully connected network. Hidden layers
        use `activation`; the final layer is affine only.
    """
    def __init__(self, weights, biases, activation='gelu'):
        if not weights or len(weights) != len(biases):
            raise ValueError("MlpParams needs one bias per weight matrix")
        if activation not in ACTIVATIONS:
            raise ValueError(f"Unknown activation: {activation}")

        for i, (w, b) in enumerate(zip(weights, biases)):
            if w.ndim != 2:
                raise numeric_exceptions.ShapeMismatch(
                    f'mlp.{i}.weight', '(n_in, n_out)', w.shape)
            if b.shape != (w.shape[1],):
                raise numeric_exceptions.ShapeMismatch(
                    f'mlp.{i}.bias', (w.shape[1],), b.shape)
            if i > 0 and weights[i - 1].shape[1] != w.shape[0]:
                raise numeric_exceptions.ShapeMismatch(
                    f'mlp.{i}.weight', (weights[i - 1].shape[1], w.shape[1]),
                    w.shape)

        self.weights = list(weights)
        self.biases = list(biases)
        self.activation = activation


    @classmethod
    def init(cls, sizes, rng, activation='gelu'):
        """ Glorot-uniform weights, zero biases. """
        weights = []
        biases = []
        for n_in, n_out in zip(sizes[:-1], sizes[1:]):
            bound = np.sqrt(6.0 / (n_in + n_out))
            weights.append(rng.uniform(-bound, bound, size=(n_in, n_out)))
            biases.append(np.zeros(n_out))
        return cls(weights, biases, activation)


    @property
    def input_dim(self):
        return self.weights[0].shape[0]


    @property
    def output_dim(self):
        return self.weights[-1].shape[1]


    def tensors(self, prefix='mlp'):
        """ Ordered name -> array views of every parameter. """
        named = {}
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            named[f'{prefix}.{i}.weight'] = w
            named[f'{prefix}.{i}.bias'] = b
        return named


class MlpTape:
    """ Activation record of one mlp_apply call. """
    def __init__(self, inputs, preacts, squeeze):
        self.inputs = inputs
        self.preacts = preacts
        self.squeeze = squeeze


def mlp_apply(params, x):
    """ Forward pass. Accepts one input vector or a (batch, n_in) matrix
        and returns an output of matching rank plus the tape needed by
        mlp_backward.
    """
    x = np.asarray(x, dtype=np.float64)
    squeeze = x.ndim == 1
    h = np.atleast_2d(x)
    if h.ndim != 2 or h.shape[1] != params.input_dim:
        raise numeric_exceptions.ShapeMismatch(
            'mlp input', ('batch', params.input_dim), x.shape)

    act, _ = ACTIVATIONS[params.activation]
    last = len(params.weights) - 1
    inputs = []
    preacts = []
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        inputs.append(h)
        z = h @ w + b
        preacts.append(z)
        h = z if i == last else act(z)

    tape = MlpTape(inputs, preacts, squeeze)
    return (h[0] if squeeze else h), tape


def mlp_backward(params, tape, output_grad, prefix='mlp'):
    """ Backward pass for the scalar whose gradient with respect to the
        network output is `output_grad`. Returns (param_grads, input_grad)
        where param_grads uses the same names as params.tensors(prefix).
    """
    g = np.atleast_2d(np.asarray(output_grad, dtype=np.float64))

    # A tape from a different network (or a resized one) is stale
    n_layers = len(params.weights)
    if len(tape.inputs) != n_layers:
        raise numeric_exceptions.ShapeMismatch(
            'mlp tape', f'{n_layers} layers', f'{len(tape.inputs)} layers')
    for i, w in enumerate(params.weights):
        if tape.inputs[i].shape[1] != w.shape[0] or \
                tape.preacts[i].shape[1] != w.shape[1]:
            raise numeric_exceptions.ShapeMismatch(
                f'mlp tape layer {i}', w.shape,
                (tape.inputs[i].shape[1], tape.preacts[i].shape[1]))
    if g.shape != tape.preacts[-1].shape:
        raise numeric_exceptions.ShapeMismatch(
            'mlp output_grad', tape.preacts[-1].shape, g.shape)

    _, act_grad = ACTIVATIONS[params.activation]
    grads = {}
    for i in reversed(range(n_layers)):
        if i != n_layers - 1:
            g = g * act_grad(tape.preacts[i])
        grads[f'{prefix}.{i}.weight'] = tape.inputs[i].T @ g
        grads[f'{prefix}.{i}.bias'] = g.sum(axis=0)
        g = g @ params.weights[i].T

    ordered = {name: grads[name] for name in params.tensors(prefix)}
    return ordered, (g[0] if tape.squeeze else g)


##########
# Losses #
##########
def softmax_ce(logits, target):
    """ Cross-entropy of softmax(logits) against an integer target.

        1-D logits give a scalar loss; (batch, n) logits with a target
        per row give per-row losses. The gradient is
        softmax(logits) - onehot(target).
    """
    z = np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(z)):
        raise numeric_exceptions.NonFiniteValues('softmax_ce logits')
    single = z.ndim == 1
    z = np.atleast_2d(z)
    target = np.atleast_1d(np.asarray(target, dtype=np.int64))
    if target.shape != (z.shape[0],):
        raise numeric_exceptions.ShapeMismatch(
            'softmax_ce target', (z.shape[0],), target.shape)
    if np.any(target < 0) or np.any(target >= z.shape[1]):
        raise ValueError(f"softmax_ce: target out of range [0, {z.shape[1]})")

    rows = np.arange(z.shape[0])
    logp = special.log_softmax(z, axis=1)
    loss = -logp[rows, target]
    grad = np.exp(logp)
    grad[rows, target] -= 1.0

    if single:
        return float(loss[0]), grad[0]
    return loss, grad


def tempered_kl(teacher_scores, student_logits, tau):
    """ KL(softmax(teacher/tau) || softmax(student/tau)) and its gradient
        with respect to the student logits. Teacher is constant.

        Works on vectors or row-wise on matrices.
    """
    if tau <= 0:
        raise ValueError(f"tempered_kl: temperature must be > 0, got {tau}")
    t = np.asarray(teacher_scores, dtype=np.float64)
    s = np.asarray(student_logits, dtype=np.float64)
    if t.shape != s.shape:
        raise numeric_exceptions.ShapeMismatch(
            'tempered_kl student', t.shape, s.shape)
    if t.shape[-1] < 2:
        raise ValueError("tempered_kl needs at least 2 candidates")

    log_p = special.log_softmax(t / tau, axis=-1)
    log_q = special.log_softmax(s / tau, axis=-1)
    p = np.exp(log_p)
    q = np.exp(log_q)
    kl = np.sum(np.where(p > 0, p * (log_p - log_q), 0.0), axis=-1)
    kl = np.maximum(kl, 0.0)
    grad = (q - p) / tau

    if kl.ndim == 0:
        return float(kl), grad
    return kl, grad


#############
# Optimizer #
#############
class AdamState:
    """ First/second moment accumulators for one parameter dict. """
    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step = 0
        self.m = {name: np.zeros_like(p, dtype=np.float64)
                  for name, p in params.items()}
        self.v = {name: np.zeros_like(p, dtype=np.float64)
                  for name, p in params.items()}


def adam_step(state, params, grads):
    """ Bias-corrected Adam update, applied in place. Parameters without
        an entry in `grads` are treated as having zero gradient.
    """
    for name, p in params.items():
        if name not in state.m or state.m[name].shape != p.shape:
            expected = state.m[name].shape if name in state.m else 'absent'
            raise numeric_exceptions.ShapeMismatch(
                f'adam moment {name}', expected, p.shape)
        if name in grads and np.shape(grads[name]) != p.shape:
            raise numeric_exceptions.ShapeMismatch(
                f'gradient {name}', p.shape, np.shape(grads[name]))

    state.step += 1
    bias1 = 1.0 - state.beta1**state.step
    bias2 = 1.0 - state.beta2**state.step
    for name, p in params.items():
        m = state.m[name]
        v = state.v[name]
        g = grads.get(name)
        m *= state.beta1
        v *= state.beta2
        if g is not None:
            m += (1.0 - state.beta1) * g
            v += (1.0 - state.beta2) * np.square(g)
        p -= state.lr * (m / bias1) / (np.sqrt(v / bias2) + state.eps)
    return params


#######
# EMA #
#######
class EmaState:
    """ Shadow copy of a parameter dict. """
    def __init__(self, live, decay):
        if not 0.0 <= decay <= 1.0:
            raise ValueError(f"EMA decay must be in [0, 1], got {decay}")
        self.decay = decay
        self.updates = 0
        self.shadow = {name: np.array(p, dtype=np.float64, copy=True)
                       for name, p in live.items()}


def warmup_decay(decay, updates):
    """ Effective decay for the n-th update with the usual
        (1 + n) / (10 + n) warm-up cap.
    """
    return min(decay, (1.0 + updates) / (10.0 + updates))


def ema_update(state, live, decay=None):
    """ shadow <- decay * shadow + (1 - decay) * live, elementwise.
        `decay` overrides the state's decay for this update only.
    """
    d = state.decay if decay is None else decay
    for name, s in state.shadow.items():
        if name not in live or live[name].shape != s.shape:
            found = live[name].shape if name in live else 'absent'
            raise numeric_exceptions.ShapeMismatch(
                f'ema live {name}', s.shape, found)
    for name, s in state.shadow.items():
        s *= d
        s += (1.0 - d) * live[name]
    state.updates += 1
    return state.shadow


##################
# Gradient check #
##################
def _relative_error(analytic, numeric, floor):
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def grad_check(loss_fn, point, h=1e-5, coords=None, floor=1e-12):
    """ Compare the analytic gradient of loss_fn at `point` against
        central differences and return the worst relative error.

        loss_fn(x) must return (loss, analytic_grad) with the gradient
        shaped like x. `coords` restricts the check to flat indices.
    """
    x = np.array(point, dtype=np.float64, copy=True).reshape(-1)
    _, analytic = loss_fn(x.copy())
    analytic = np.asarray(analytic, dtype=np.float64).reshape(-1)
    if analytic.shape != x.shape:
        raise numeric_exceptions.ShapeMismatch(
            'analytic gradient', x.shape, analytic.shape)

    indices = range(x.size) if coords is None else coords
    worst = 0.0
    for i in indices:
        xp = x.copy()
        xp[i] += h
        xm = x.copy()
        xm[i] -= h
        fp = float(np.asarray(loss_fn(xp)[0]))
        fm = float(np.asarray(loss_fn(xm)[0]))
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise numeric_exceptions.NonFiniteValues(
                f'loss at perturbed coordinate {i}')
        numeric = (fp - fm) / (2.0 * h)
        worst = max(worst, _relative_error(analytic[i], numeric, floor))
    return worst


def grad_check_tensors(loss_fn, tensors, h=1e-5, max_coords=None, rng=None,
                       floor=1e-12):
    """ grad_check over a name -> array dict that loss_fn closes over.

        loss_fn() returns (loss, grads_dict). Each tensor is perturbed in
        place and restored. With max_coords, at most that many randomly
        chosen coordinates per tensor are checked.

        Returns (worst relative error, name of the worst tensor).
    """
    _, analytic = loss_fn()
    analytic = {name: np.array(g, dtype=np.float64, copy=True)
                for name, g in analytic.items()}

    worst = 0.0
    worst_name = None
    for name, arr in tensors.items():
        flat = arr.reshape(-1)
        if not np.shares_memory(flat, arr):
            raise ValueError(f"grad_check_tensors: {name} is not contiguous")
        grad = analytic.get(name)
        grad = np.zeros(arr.size) if grad is None else grad.reshape(-1)

        if max_coords is None or arr.size <= max_coords:
            indices = np.arange(arr.size)
        else:
            indices = rng.choice(arr.size, size=max_coords, replace=False)

        for i in indices:
            original = flat[i]
            flat[i] = original + h
            fp = float(loss_fn()[0])
            flat[i] = original - h
            fm = float(loss_fn()[0])
            flat[i] = original
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise numeric_exceptions.NonFiniteValues(
                    f'loss at perturbed {name}[{i}]')
            err = _relative_error(grad[i], (fp - fm) / (2.0 * h), floor)
            if err > worst:
                worst = err
                worst_name = name
    return worst, worst_name
