"""Sample removal by a conditional-dependence-selected block Newton step.

Pipeline for one delete request ``z' = (x', y')`` drawn from a training set
of size ``n``:

1. perturb ``x'`` ``m`` times and record the loss and every slice activation;
2. run L-FOCI with the losses as response and slice activations as
   candidates to pick a parameter block ``P``;
3. build ``H' = (n H_F - H_f) / (n - 1)`` on ``P`` from finite-difference
   blocks of the full objective and of the single-sample objective;
4. set ``w'_P = w_P + H'^{-1} grad f(w, z')_P / (n - 1)`` and add
   Gaussian-mechanism noise on ``P``.

Because ``F = (1/n) sum_i f_i`` with the weight-decay term inside every
``f_i``, ``H'`` is exactly the Hessian of the residual objective and the
step is one Newton step on it from ``w`` when ``grad F(w) = 0``.
"""

import csv
import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import seeding
from .errors import ConfigError, DimensionMismatch
from .model import (
    accuracy,
    all_slices,
    block_hessian,
    cholesky_solve,
    forward,
    gradient,
    layerwise_norm,
    pd_repair,
    slice_sizes,
)
from .selection import SelectionConfig, SufficientSet, l_foci

REPORT_COLUMNS = (
    "removal_ordinal",
    "sample_index",
    "p",
    "damping_added",
    "pre_sample_gnorm",
    "post_sample_gnorm",
    "pre_resid_gnorm",
    "post_resid_gnorm",
    "val_acc",
    "resid_acc",
    "sigma_dp",
    "wall_ms",
)


@dataclass(frozen=True)
class UnlearnConfig:
    """Settings for :func:`scrub`.

    ``perturb_sigma=None`` uses 0.1 times the per-coordinate standard
    deviation of the training inputs.  ``lambda_sc=None`` uses the model's
    weight decay.  ``max_block`` caps the summed parameter count of the
    selected slices; the first selected slice is always kept.
    """

    epsilon: float = 0.1
    delta: float = 0.01
    m: int = 1000
    perturb_sigma: object = None
    fd_step: float = 1e-4
    max_block: int = 4096
    L_lip: float = None
    M_hess: float = None
    lambda_sc: float = None
    seed: int = 0
    noise: bool = True
    negate_step: bool = False
    max_features: int = 64
    seed_policy: str = "fixed_per_run"
    single_slice_mode: bool = False
    accuracy_floor: float = None

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ConfigError("epsilon must be > 0")
        if not 0 < self.delta < 1:
            raise ConfigError("delta must lie in (0, 1)")
        if int(self.m) < 2:
            raise ConfigError("m must be >= 2")
        if not self.fd_step > 0:
            raise ConfigError("fd_step must be > 0")
        if int(self.max_block) < 1:
            raise ConfigError("max_block must be >= 1")
        if self.perturb_sigma is not None and np.any(np.asarray(self.perturb_sigma) < 0):
            raise ConfigError("perturb_sigma must be nonnegative")
        if self.lambda_sc is not None and not self.lambda_sc > 0:
            raise ConfigError("lambda_sc must be > 0")
        seeding.check_seed(self.seed)

    def selection(self, ordinal=0):
        return SelectionConfig(
            max_features=self.max_features,
            seed=seeding.child_seed(self.seed, seeding.TIE, ordinal),
            seed_policy=self.seed_policy,
            single_slice_mode=self.single_slice_mode,
        )


@dataclass
class ScrubRequest:
    """Delete request for row ``index`` of ``(X, y)``.

    ``X_val, y_val`` are an optional held-out set used only for reporting.
    ``ordinal`` indexes the request within a sequence and keys its random
    substreams.
    """

    model: object
    X: np.ndarray
    y: np.ndarray
    index: int
    cfg: UnlearnConfig = field(default_factory=UnlearnConfig)
    X_val: np.ndarray = None
    y_val: np.ndarray = None
    ordinal: int = 0
    snapshots: list = None

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        self.y = np.asarray(self.y).ravel()
        n = self.X.shape[0]
        if self.y.shape[0] != n:
            raise DimensionMismatch(f"{self.y.shape[0]} labels for {n} rows")
        if n < 2:
            raise ConfigError("training set needs at least 2 rows")
        if not 0 <= int(self.index) < n:
            raise IndexError(f"sample index {self.index} out of range for n={n}")
        self.index = int(self.index)

    @property
    def n(self):
        return self.X.shape[0]

    def residual(self):
        keep = np.arange(self.n) != self.index
        return self.X[keep], self.y[keep]


@dataclass
class ScrubReport:
    removal_ordinal: int
    sample_index: int
    selected_slices: list
    p: int
    damping_added: float
    pre_sample_gnorm: float
    post_sample_gnorm: float
    pre_resid_gnorm: float
    post_resid_gnorm: float
    pre_val_acc: float
    val_acc: float
    pre_resid_acc: float
    resid_acc: float
    sigma_dp: float
    wall_ms: float
    degenerate: bool = False
    fallback: str = None
    stop_reason: str = None
    hessian_asymmetry: float = 0.0
    snapshot_gnorms: list = None

    def row(self):
        return [getattr(self, c) for c in REPORT_COLUMNS]


@dataclass
class SliceSelection:
    slices: list
    sufficient: SufficientSet
    degenerate: bool = False
    fallback: str = None


def default_perturb_sigma(X):
    """0.1 times the per-coordinate standard deviation of ``X``."""
    return 0.1 * np.asarray(X, dtype=float).std(axis=0)


def perturb_and_trace(model, x, label, m, sigma, seed=0, counter=0):
    """Loss and slice activations at ``m`` Gaussian perturbations of ``x``.

    ``sigma`` is a scalar or a per-coordinate vector of standard deviations.
    Row ``j`` of the result corresponds to ``x + xi_j`` with
    ``xi_j ~ N(0, diag(sigma^2))`` drawn from the ``PERTURB`` substream.
    """
    x = np.asarray(x, dtype=float).ravel()
    if x.size != model.n_inputs:
        raise DimensionMismatch(f"sample has {x.size} features, model expects {model.n_inputs}")
    xs = perturb_inputs(x, m, sigma, seed, counter)
    return forward(model, xs, np.full(int(m), int(label))).trace()


def perturb_inputs(x, m, sigma, seed=0, counter=0):
    """``m`` rows ``x + xi_j`` with ``xi_j ~ N(0, diag(sigma^2))``."""
    x = np.asarray(x, dtype=float).ravel()
    if int(m) < 2:
        raise ConfigError("m must be >= 2")
    sigma = np.broadcast_to(np.asarray(sigma, dtype=float), x.shape)
    rng = seeding.stream(seed, seeding.PERTURB, counter)
    return x + rng.standard_normal((int(m), x.size)) * sigma


def select_slices(trace, model, cfg=UnlearnConfig(), ordinal=0):
    """Run L-FOCI on a trace and map the result to slices.

    An empty selection falls back to the single slice with the largest
    first-step coefficient, or, when the losses are constant, to the slice
    whose activation varies most (flagged degenerate).  The result is then truncated to ``cfg.max_block``
    parameters, dropping later-selected slices first but always keeping one.
    """
    slices_all = all_slices(model)
    if trace.per_slice.shape[1] != len(slices_all):
        raise DimensionMismatch(f"trace has {trace.per_slice.shape[1]} columns, model has {len(slices_all)} slices")
    sel = l_foci(trace.losses, trace.per_slice, cfg.selection(ordinal))
    order = list(sel.ordered_features)
    degenerate, fallback = sel.degenerate, None
    if not order:
        if degenerate:
            fallback = "activation_variance"
            order = [int(np.argmax(trace.per_slice.var(axis=0)))]
        else:
            fallback = "initial_argmax"
            order = [int(np.argmax(sel.initial_scores))]
    chosen = [slices_all[k] for k in order]
    sizes = slice_sizes(model, chosen)
    kept, total = [chosen[0]], sizes[0]
    for s, size in zip(chosen[1:], sizes[1:]):
        if total + size > cfg.max_block:
            break
        kept.append(s)
        total += size
    return SliceSelection(kept, sel, degenerate, fallback)


def calibrate_noise(cfg, n, weight_decay=None):
    """Gaussian-mechanism standard deviation for one removal.

    ``sigma = (gamma / epsilon) * sqrt(2 ln(1.25 / delta))`` with sensitivity
    ``gamma = 2 M L^2 / (lambda^2 n^2)``.  Returns 0 when noise is off.
    """
    if not cfg.noise:
        return 0.0
    lam = cfg.lambda_sc if cfg.lambda_sc is not None else weight_decay
    if cfg.L_lip is None or cfg.M_hess is None or lam is None:
        raise ConfigError("noise needs L_lip, M_hess and lambda_sc (or a weight decay) to be set")
    if not lam > 0:
        raise ConfigError("lambda_sc must be > 0 when noise is enabled")
    if n < 1:
        raise ConfigError("n must be >= 1")
    gamma = 2.0 * cfg.M_hess * cfg.L_lip ** 2 / (lam ** 2 * float(n) ** 2)
    return gamma / cfg.epsilon * math.sqrt(2.0 * math.log(1.25 / cfg.delta))


def _val_acc(model, req):
    if req.X_val is None:
        return float("nan")
    return accuracy(model, req.X_val, req.y_val)


def scrub(req, slices=None):
    """Remove sample ``req.index`` from ``req.model``.

    ``slices`` overrides the L-FOCI selection (used for full-block and
    random-block comparisons); an override must fit in ``cfg.max_block``.

    Returns
    -------
    (MlpModel, ScrubReport)
    """
    t0 = time.perf_counter()
    cfg, model = req.cfg, req.model
    n = req.n
    xz, yz = req.X[req.index:req.index + 1], req.y[req.index:req.index + 1]
    Xr, yr = req.residual()

    fallback, degenerate, stop_reason = None, False, None
    if slices is None:
        sigma = default_perturb_sigma(req.X) if cfg.perturb_sigma is None else cfg.perturb_sigma
        trace = perturb_and_trace(model, xz[0], yz[0], cfg.m, sigma, cfg.seed, req.ordinal)
        choice = select_slices(trace, model, cfg, req.ordinal)
        slices, fallback, degenerate = choice.slices, choice.fallback, choice.degenerate
        stop_reason = choice.sufficient.stop_reason
        cap = max(cfg.max_block, slice_sizes(model, slices[:1])[0])
    else:
        slices = list(slices)
        cap = cfg.max_block

    H_F = block_hessian(model, req.X, req.y, slices, cfg.fd_step, cap)
    H_f = block_hessian(model, xz, yz, slices, cfg.fd_step, cap)
    H_res = (n * H_F.matrix - H_f.matrix) / (n - 1)
    L, tau = pd_repair(H_res, model.weight_decay)

    idx = H_F.slice_params
    g_z = gradient(model, xz, yz)
    step = cholesky_solve(L, g_z[idx]) / (n - 1)
    if cfg.negate_step:
        step = -step
    w = model.flat()
    w_new = w.copy()
    w_new[idx] = w[idx] + step

    sigma_dp = calibrate_noise(cfg, n, model.weight_decay)
    if sigma_dp > 0:
        rng = seeding.stream(cfg.seed, seeding.DP_NOISE, req.ordinal)
        w_new[idx] += rng.normal(0.0, sigma_dp, size=idx.size)
    new_model = model.with_flat(w_new)

    report = ScrubReport(
        removal_ordinal=req.ordinal,
        sample_index=req.index,
        selected_slices=[(s.layer_index, s.column_index) for s in slices],
        p=int(idx.size),
        damping_added=float(tau),
        pre_sample_gnorm=float(np.linalg.norm(gradient(model, xz, yz, include_reg=False))),
        post_sample_gnorm=float(np.linalg.norm(gradient(new_model, xz, yz, include_reg=False))),
        pre_resid_gnorm=layerwise_norm(model, gradient(model, Xr, yr)),
        post_resid_gnorm=layerwise_norm(new_model, gradient(new_model, Xr, yr)),
        pre_val_acc=_val_acc(model, req),
        val_acc=_val_acc(new_model, req),
        pre_resid_acc=accuracy(model, Xr, yr),
        resid_acc=accuracy(new_model, Xr, yr),
        sigma_dp=float(sigma_dp),
        wall_ms=0.0,
        degenerate=bool(degenerate),
        fallback=fallback,
        stop_reason=stop_reason,
        hessian_asymmetry=max(H_F.asymmetry, H_f.asymmetry),
        snapshot_gnorms=None if req.snapshots is None else [float(np.linalg.norm(g)) for g in req.snapshots],
    )
    report.wall_ms = (time.perf_counter() - t0) * 1e3
    return new_model, report


def dense_update(model, X, y, index, h=1e-4):
    """Same step as :func:`scrub` with every slice selected and no noise."""
    cfg = UnlearnConfig(noise=False, fd_step=h, max_block=model.n_params)
    return scrub(ScrubRequest(model, X, y, index, cfg), slices=all_slices(model))[0]


def scrub_sequence(model, X, y, removals, cfg=UnlearnConfig(), X_val=None, y_val=None, snapshots=None, start_ordinal=0):
    """Apply :func:`scrub` for each original row index in ``removals`` in turn.

    The training set shrinks by one row per step.  Stops early when the
    validation accuracy (residual training accuracy if no validation set
    is given) drops below ``cfg.accuracy_floor``.  Step ``k`` keys its
    random substreams by ``start_ordinal + k``.

    Returns
    -------
    (MlpModel, list of ScrubReport)
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y).ravel()
    removals = [int(r) for r in removals]
    if len(set(removals)) != len(removals):
        raise ConfigError("removal indices must be distinct")
    for r in removals:
        if not 0 <= r < X.shape[0]:
            raise IndexError(f"removal index {r} out of range for n={X.shape[0]}")
    active = np.arange(X.shape[0])
    reports = []
    for k, r in enumerate(removals):
        pos = int(np.searchsorted(active, r))
        req = ScrubRequest(model, X[active], y[active], pos, cfg, X_val, y_val, start_ordinal + k, snapshots)
        model, rep = scrub(req)
        rep.sample_index = r
        reports.append(rep)
        active = np.delete(active, pos)
        if cfg.accuracy_floor is not None:
            acc = rep.val_acc if X_val is not None else rep.resid_acc
            if acc < cfg.accuracy_floor:
                break
    return model, reports


def write_report(reports, path):
    """Write reports as CSV with :data:`REPORT_COLUMNS` (floats in ``repr`` form)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REPORT_COLUMNS)
        for rep in reports:
            w.writerow([repr(v) if isinstance(v, float) else v for v in rep.row()])
