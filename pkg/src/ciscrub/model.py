"""Dense-network engine: forward pass with slice activations, backprop,
finite-difference block Hessians, training and checkpoint I/O.

Parameters are addressed through a flat vector laid out layer by layer,
each layer contributing its row-major weight matrix followed by its bias.
A *slice* ``(l, j)`` is weight column ``j`` of layer ``l`` plus bias entry
``j``; slices partition the parameter vector.
"""

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.optimize import minimize

from . import seeding
from .errors import BlockTooLarge, ConfigError, DimensionMismatch, FormatError, NonFinite, SingularHessian

LOSSES = ("softmax_cross_entropy", "logistic")
NONLINEARITIES = ("relu", "identity")
CHECKPOINT_VERSION = 1


@dataclass
class DenseLayer:
    weights: np.ndarray
    bias: np.ndarray
    nonlinearity: str = "identity"

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        self.bias = np.asarray(self.bias, dtype=float)
        if self.weights.ndim != 2 or self.bias.shape != (self.weights.shape[1],):
            raise DimensionMismatch(f"weights {self.weights.shape} and bias {self.bias.shape} disagree")
        if self.nonlinearity not in NONLINEARITIES:
            raise ConfigError(f"unknown nonlinearity {self.nonlinearity!r}")

    @property
    def rows(self):
        return self.weights.shape[0]

    @property
    def cols(self):
        return self.weights.shape[1]

    @property
    def size(self):
        return self.weights.size + self.bias.size


@dataclass
class MlpModel:
    layers: list
    loss: str = "softmax_cross_entropy"
    weight_decay: float = 0.0

    def __post_init__(self):
        if not self.layers:
            raise ConfigError("model needs at least one layer")
        if self.loss not in LOSSES:
            raise ConfigError(f"unknown loss {self.loss!r}")
        if not self.weight_decay >= 0:
            raise ConfigError("weight_decay must be nonnegative")
        for a, b in zip(self.layers, self.layers[1:]):
            if a.cols != b.rows:
                raise DimensionMismatch(f"layer output {a.cols} does not feed input {b.rows}")
        if self.loss == "logistic" and self.layers[-1].cols != 1:
            raise DimensionMismatch("logistic loss needs a single output unit")

    @property
    def n_inputs(self):
        return self.layers[0].rows

    @property
    def n_params(self):
        return sum(layer.size for layer in self.layers)

    @property
    def n_slices(self):
        return sum(layer.cols for layer in self.layers)

    def offsets(self):
        out, pos = [], 0
        for layer in self.layers:
            out.append(pos)
            pos += layer.size
        return out

    def flat(self):
        return np.concatenate([np.concatenate([l.weights.ravel(), l.bias]) for l in self.layers])

    def with_flat(self, flat):
        """New model with parameters taken from ``flat`` (copied)."""
        flat = np.asarray(flat, dtype=float)
        if flat.shape != (self.n_params,):
            raise DimensionMismatch(f"expected {self.n_params} parameters, got {flat.shape}")
        layers, pos = [], 0
        for l in self.layers:
            w = flat[pos:pos + l.weights.size].reshape(l.weights.shape).copy()
            pos += l.weights.size
            b = flat[pos:pos + l.cols].copy()
            pos += l.cols
            layers.append(DenseLayer(w, b, l.nonlinearity))
        return replace(self, layers=layers)

    def copy(self):
        return self.with_flat(self.flat())


@dataclass(frozen=True, order=True)
class SliceId:
    layer_index: int
    column_index: int


def all_slices(model):
    return [SliceId(l, j) for l, layer in enumerate(model.layers) for j in range(layer.cols)]


def slice_param_indices(model, slices):
    """Flat parameter indices of ``slices``, in slice order (weights column then bias)."""
    offs = model.offsets()
    out = []
    for s in slices:
        if not 0 <= s.layer_index < len(model.layers):
            raise IndexError(f"{s} out of range")
        layer = model.layers[s.layer_index]
        if not 0 <= s.column_index < layer.cols:
            raise IndexError(f"{s} out of range")
        o = offs[s.layer_index]
        out.append(o + np.arange(layer.rows) * layer.cols + s.column_index)
        out.append([o + layer.weights.size + s.column_index])
    if not out:
        return np.empty(0, dtype=np.int64)
    return np.concatenate(out).astype(np.int64)


def slice_sizes(model, slices):
    return [model.layers[s.layer_index].rows + 1 for s in slices]


def init_mlp(sizes, loss="softmax_cross_entropy", weight_decay=0.0, hidden="relu", seed=0):
    """Randomly initialised network with layer widths ``sizes`` (inputs first).

    Hidden layers use ``hidden``; the output layer is linear.  Weights are
    ``N(0, gain / fan_in)`` with gain 2 for ReLU and 1 otherwise.
    """
    if len(sizes) < 2:
        raise ConfigError("sizes needs an input and an output width")
    rng = seeding.stream(seed, seeding.TRAIN, 0)
    layers = []
    for k, (a, b) in enumerate(zip(sizes, sizes[1:])):
        nl = "identity" if k == len(sizes) - 2 else hidden
        gain = 2.0 if nl == "relu" else 1.0
        layers.append(DenseLayer(rng.standard_normal((a, b)) * np.sqrt(gain / a), np.zeros(b), nl))
    return MlpModel(layers, loss, weight_decay)


# --------------------------------------------------------------------------
# forward / backward

@dataclass
class ActivationTrace:
    """Pre-nonlinearity outputs of every slice (columns) for a set of inputs (rows)."""

    per_slice: np.ndarray
    losses: np.ndarray

    def __post_init__(self):
        if self.per_slice.shape[0] != self.losses.shape[0]:
            raise DimensionMismatch("per_slice and losses differ in row count")


@dataclass
class ForwardResult:
    probs: np.ndarray
    losses: np.ndarray
    pre: list
    post: list = field(repr=False, default=None)

    @property
    def per_slice(self):
        return np.hstack(self.pre)

    def trace(self):
        return ActivationTrace(self.per_slice, self.losses)


def _check_inputs(model, X):
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != model.n_inputs:
        raise DimensionMismatch(f"input has shape {X.shape}, model expects {model.n_inputs} features")
    return X


def _logsumexp(a):
    m = a.max(axis=1, keepdims=True)
    return (m + np.log(np.exp(a - m).sum(axis=1, keepdims=True)))[:, 0]


def _softmax(a):
    e = np.exp(a - a.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def forward(model, X, y=None):
    """Run ``X`` through the network.

    Returns class probabilities, per-sample losses (``nan`` when ``y`` is
    omitted) and the pre-nonlinearity output ``a_l = a_{l-1} W_l + b_l`` of
    every layer.
    """
    X = _check_inputs(model, X)
    pre, post = [], [X]
    a = X
    for layer in model.layers:
        z = a @ layer.weights + layer.bias
        pre.append(z)
        a = np.maximum(z, 0.0) if layer.nonlinearity == "relu" else z
        post.append(a)
    out = pre[-1]
    if model.loss == "softmax_cross_entropy":
        probs = _softmax(out)
    else:
        p1 = 1.0 / (1.0 + np.exp(-out[:, 0]))
        probs = np.column_stack([1 - p1, p1])
    if y is None:
        losses = np.full(X.shape[0], np.nan)
    else:
        y = _labels(model, y, X.shape[0])
        if model.loss == "softmax_cross_entropy":
            losses = _logsumexp(out) - out[np.arange(len(y)), y]
        else:
            s = np.where(y == 1, 1.0, -1.0)
            losses = np.logaddexp(0.0, -s * out[:, 0])
    return ForwardResult(probs, losses, pre, post)


def _labels(model, y, n):
    y = np.asarray(y).ravel()
    if y.shape[0] != n:
        raise DimensionMismatch(f"{y.shape[0]} labels for {n} inputs")
    y = y.astype(np.int64)
    k = 2 if model.loss == "logistic" else model.layers[-1].cols
    if y.size and (y.min() < 0 or y.max() >= k):
        raise DimensionMismatch(f"labels must lie in [0, {k})")
    return y


def predict(model, X):
    return forward(model, X).probs.argmax(axis=1)


def accuracy(model, X, y):
    y = np.asarray(y).ravel()
    if y.size == 0:
        return float("nan")
    return float(np.mean(predict(model, X) == y))


def _output_delta(model, fr, y):
    out = fr.pre[-1]
    if model.loss == "softmax_cross_entropy":
        d = fr.probs.copy()
        d[np.arange(len(y)), y] -= 1.0
        return d
    return (fr.probs[:, 1] - (y == 1))[:, None].astype(float)


def _backprop(model, X, y, per_sample=False):
    X = _check_inputs(model, X)
    y = _labels(model, y, X.shape[0])
    fr = forward(model, X, y)
    delta = _output_delta(model, fr, y)
    n = X.shape[0]
    grads = [None] * len(model.layers)
    for l in range(len(model.layers) - 1, -1, -1):
        a_prev = fr.post[l]
        if per_sample:
            gw = np.einsum("ni,nj->nij", a_prev, delta).reshape(n, -1)
            grads[l] = np.hstack([gw, delta])
        else:
            grads[l] = np.concatenate([(a_prev.T @ delta).ravel() / n, delta.sum(axis=0) / n])
        if l > 0:
            delta = delta @ model.layers[l].weights.T
            if model.layers[l - 1].nonlinearity == "relu":
                delta = delta * (fr.pre[l - 1] > 0)
    return np.hstack(grads) if per_sample else np.concatenate(grads)


def gradient(model, X, y, include_reg=True):
    """Flat gradient of ``mean loss + (weight_decay / 2) * ||w||^2`` over ``(X, y)``."""
    g = _backprop(model, X, y)
    if include_reg and model.weight_decay:
        g = g + model.weight_decay * model.flat()
    return g


def per_sample_gradients(model, X, y, include_reg=False):
    """Matrix whose row ``i`` is the flat gradient of the loss at sample ``i``."""
    G = _backprop(model, X, y, per_sample=True)
    if include_reg and model.weight_decay:
        G = G + model.weight_decay * model.flat()
    return G


def layerwise_norm(model, flat):
    """Sum over layers of the 2-norm of each layer's block of ``flat``."""
    flat = np.asarray(flat, dtype=float)
    if flat.shape != (model.n_params,):
        raise DimensionMismatch(f"expected {model.n_params} entries, got {flat.shape}")
    offs = model.offsets() + [model.n_params]
    return float(sum(np.linalg.norm(flat[a:b]) for a, b in zip(offs, offs[1:])))


def objective(model, X, y):
    """``mean loss + (weight_decay / 2) * ||w||^2``."""
    w = model.flat()
    return float(forward(model, X, y).losses.mean() + 0.5 * model.weight_decay * (w @ w))


# --------------------------------------------------------------------------
# curvature

@dataclass
class HessianBlock:
    matrix: np.ndarray
    slice_params: np.ndarray
    damping_added: float = 0.0
    fd_step: float = 1e-4
    asymmetry: float = 0.0


def fd_steps(w, h):
    """Per-coordinate central-difference steps ``h * max(1, |w_k|)``."""
    return h * np.maximum(1.0, np.abs(w))


def fd_hessian(grad_fn, w, idx, h=1e-4):
    """Unsymmetrised central-difference Jacobian of ``grad_fn`` on coordinates ``idx``."""
    idx = np.asarray(idx, dtype=np.int64)
    steps = fd_steps(w[idx], h)
    H = np.empty((idx.size, idx.size))
    for k in range(idx.size):
        wp = w.copy()
        wp[idx[k]] += steps[k]
        wm = w.copy()
        wm[idx[k]] -= steps[k]
        H[:, k] = (grad_fn(wp)[idx] - grad_fn(wm)[idx]) / (2 * steps[k])
    return H


def block_hessian(model, X, y, slices, h=1e-4, max_params=4096):
    """Central-difference Hessian of the objective restricted to ``slices``.

    Column ``k`` is ``(g_P(w + h_k e_k) - g_P(w - h_k e_k)) / (2 h_k)`` with
    ``g_P`` the objective gradient on the slice parameters; the result is
    symmetrised.  ``asymmetry`` records ``||H - H^T|| / ||H||`` before that.
    """
    if not slices:
        raise ConfigError("need at least one slice")
    idx = slice_param_indices(model, slices)
    p = idx.size
    if p > max_params:
        raise BlockTooLarge(f"block has {p} parameters, cap is {max_params}")
    w = model.flat()
    H = fd_hessian(lambda v: gradient(model.with_flat(v), X, y), w, idx, h)
    if not np.all(np.isfinite(H)):
        raise NonFinite("finite differencing produced non-finite entries")
    norm = np.linalg.norm(H)
    asym = float(np.linalg.norm(H - H.T) / norm) if norm > 0 else 0.0
    return HessianBlock(0.5 * (H + H.T), idx, 0.0, h, asym)


def pd_repair(matrix, weight_decay, max_doublings=10):
    """Cholesky factor of ``matrix + tau * I`` for the smallest tau in the damping schedule.

    Tries ``tau = 0`` first, then ``weight_decay`` (``1e-4`` if that is 0),
    doubling up to ``2**max_doublings`` times that value.  Returns
    ``(cholesky_factor, tau)``; raises :class:`SingularHessian` when the
    schedule is exhausted.
    """
    A = np.asarray(matrix, dtype=float)
    base = weight_decay if weight_decay > 0 else 1e-4
    schedule = [0.0] + [base * 2.0 ** k for k in range(max_doublings + 1)]
    eye = np.eye(A.shape[0])
    for tau in schedule:
        try:
            return np.linalg.cholesky(A + tau * eye), tau
        except np.linalg.LinAlgError:
            continue
    raise SingularHessian(f"not positive definite after damping {schedule[-1]:g}")


def cholesky_solve(L, b):
    from scipy.linalg import solve_triangular

    return solve_triangular(L.T, solve_triangular(L, b, lower=True), lower=False)


# --------------------------------------------------------------------------
# training

@dataclass(frozen=True)
class TrainConfig:
    """Optimizer settings.

    ``method="sgd"`` runs minibatch SGD with ``learning_rate``,
    ``batch_size`` and ``epochs``.  ``method="lbfgs"`` minimises the full-batch
    objective to gradient tolerance ``tol`` (for convex problems that must
    be trained to convergence).
    """

    learning_rate: float = 0.1
    batch_size: int = 256
    epochs: int = 50
    seed: int = 0
    method: str = "sgd"
    tol: float = 1e-10
    max_iter: int = 5000

    def __post_init__(self):
        if self.method not in ("sgd", "lbfgs"):
            raise ConfigError(f"unknown method {self.method!r}")
        if self.learning_rate <= 0 or self.batch_size < 1 or self.epochs < 0:
            raise ConfigError("learning_rate and batch_size must be positive, epochs nonnegative")
        seeding.check_seed(self.seed)


@dataclass
class TrainResult:
    model: MlpModel
    snapshots: list
    history: list


def train(model, X, y, cfg=TrainConfig()):
    """Fit ``model`` to ``(X, y)``; the input model is not modified.

    ``snapshots`` holds the full-batch objective gradient after the
    penultimate and the last epoch (fewer if fewer epochs ran).
    """
    X = _check_inputs(model, X)
    y = _labels(model, y, X.shape[0])
    if X.shape[0] == 0:
        raise ConfigError("empty training set")
    if cfg.method == "lbfgs":
        return _train_lbfgs(model, X, y, cfg)
    rng = seeding.stream(cfg.seed, seeding.TRAIN, 1)
    w = model.flat()
    current = model.with_flat(w)
    snapshots, history = [], []
    n = X.shape[0]
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            b = order[start:start + cfg.batch_size]
            w = w - cfg.learning_rate * gradient(current, X[b], y[b])
            current = current.with_flat(w)
        snapshots = (snapshots + [gradient(current, X, y)])[-2:]
        history.append(objective(current, X, y))
    if not np.all(np.isfinite(w)):
        raise NonFinite("training diverged")
    return TrainResult(current, snapshots, history)


def _train_lbfgs(model, X, y, cfg):
    def fun(w):
        m = model.with_flat(w)
        return objective(m, X, y), gradient(m, X, y)

    res = minimize(fun, model.flat(), jac=True, method="L-BFGS-B",
                   options={"maxiter": cfg.max_iter, "gtol": cfg.tol, "ftol": 0.0, "maxcor": 30})
    out = model.with_flat(res.x)
    return TrainResult(out, [gradient(out, X, y)], [float(res.fun)])


def newton_polish(model, X, y, iters=5, h=1e-4):
    """Full Newton iterations with a finite-difference Hessian; for small models only."""
    slices = all_slices(model)
    for _ in range(iters):
        g = gradient(model, X, y)
        blk = block_hessian(model, X, y, slices, h, max_params=model.n_params)
        L, _ = pd_repair(blk.matrix, model.weight_decay)
        w = model.flat()
        w[blk.slice_params] -= cholesky_solve(L, g[blk.slice_params])
        model = model.with_flat(w)
    return model


# --------------------------------------------------------------------------
# checkpoints

def checkpoint_dict(model):
    return {
        "version": CHECKPOINT_VERSION,
        "loss": model.loss,
        "weight_decay": float(model.weight_decay),
        "layers": [
            {
                "rows": l.rows,
                "cols": l.cols,
                "nonlinearity": l.nonlinearity,
                "weights": [float(v) for v in l.weights.ravel()],
                "bias": [float(v) for v in l.bias],
            }
            for l in model.layers
        ],
    }


def save_checkpoint(model, path):
    Path(path).write_text(json.dumps(checkpoint_dict(model)))


def model_from_dict(doc):
    if not isinstance(doc, dict) or "version" not in doc:
        raise FormatError("checkpoint has no version tag")
    if doc["version"] != CHECKPOINT_VERSION:
        raise FormatError(f"unsupported checkpoint version {doc['version']!r} (expected {CHECKPOINT_VERSION})")
    try:
        layers = []
        for k, spec in enumerate(doc["layers"]):
            r, c = int(spec["rows"]), int(spec["cols"])
            w = np.asarray(spec["weights"], dtype=float)
            b = np.asarray(spec["bias"], dtype=float)
            if w.size != r * c or b.size != c:
                raise FormatError(f"layer {k}: expected {r}x{c} weights and {c} biases")
            layers.append(DenseLayer(w.reshape(r, c), b, spec.get("nonlinearity", "identity")))
        model = MlpModel(layers, doc["loss"], float(doc["weight_decay"]))
    except FormatError:
        raise
    except (KeyError, TypeError, ValueError, ConfigError, DimensionMismatch) as exc:
        raise FormatError(f"malformed checkpoint: {exc}") from exc
    if not np.all(np.isfinite(model.flat())):
        raise FormatError("checkpoint contains non-finite parameters")
    return model


def load_checkpoint(path):
    try:
        doc = json.loads(Path(path).read_text())
    except OSError as exc:
        raise FormatError(f"{path}: cannot open ({exc.strerror})") from exc
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: not valid JSON at char {exc.pos}") from exc
    return model_from_dict(doc)
