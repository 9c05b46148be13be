"""Greedy Markov-blanket selection with randomized CODEC (L-FOCI)."""

import time
from dataclasses import dataclass, field

import numpy as np

from . import seeding
from .errors import ConfigError, DegenerateInput, DimensionMismatch
from .rank_dependence import (
    TieNoiseConfig,
    _codec_from_neighbors,
    _nn_first,
    as_feature_matrix,
    tie_noise,
)

STOP_REASONS = ("nonpositive_gain", "cap_reached", "exhausted")
SEED_POLICIES = ("fixed_per_run", "resample_per_call")


@dataclass(frozen=True)
class SelectionConfig:
    max_features: int = 64
    seed: int = 0
    seed_policy: str = "fixed_per_run"
    single_slice_mode: bool = False
    scale_divisor: float = 10.0

    def __post_init__(self):
        if int(self.max_features) < 1:
            raise ConfigError("max_features must be >= 1")
        if self.seed_policy not in SEED_POLICIES:
            raise ConfigError(f"seed_policy must be one of {SEED_POLICIES}")
        seeding.check_seed(self.seed)


@dataclass
class SufficientSet:
    """Ordered output of :func:`l_foci`.

    ``initial_scores`` holds the unconditional coefficient of every
    candidate from the first step; callers use it for fallbacks.
    """

    ordered_features: list = field(default_factory=list)
    gain_trace: list = field(default_factory=list)
    stop_reason: str = "nonpositive_gain"
    initial_scores: np.ndarray = None
    degenerate: bool = False

    def __len__(self):
        return len(self.ordered_features)


class _Scorer:
    """Coefficient evaluator holding one tie-noise realization (or fresh ones per call)."""

    def __init__(self, response, candidates, cfg):
        self.cfg = cfg
        self.noise = TieNoiseConfig(cfg.seed, cfg.scale_divisor)
        self.constant_y = np.ptp(response) == 0
        self.calls = 0
        if cfg.seed_policy == "fixed_per_run":
            response, candidates = self._perturb(response, candidates, seeding.stream(cfg.seed, seeding.TIE))
        self.y = response
        self.X = candidates

    def _perturb(self, y, X, rng):
        block = tie_noise(np.column_stack([y, X]), self.noise, rng)
        if self.constant_y:
            block[:, 0] = y
        return block[:, 0], block[:, 1:]

    def step(self, selected, candidates):
        """Coefficient of every candidate given the selected set."""
        out = np.empty(len(candidates))
        y, X = self.y, self.X
        fixed = self.cfg.seed_policy == "fixed_per_run"
        nn_x = _nn_first(X[:, selected]) if (selected and fixed) else None
        for k, j in enumerate(candidates):
            if not fixed:
                rng = seeding.stream(self.cfg.seed, seeding.TIE, self.calls)
                y, X = self._perturb(self.y, self.X, rng)
                nn_x = _nn_first(X[:, selected]) if selected else None
            self.calls += 1
            nn_xz = _nn_first(X[:, selected + [j]])
            out[k] = _codec_from_neighbors(y, nn_xz, nn_x).value
        return out


def l_foci(response, candidates, cfg=SelectionConfig()):
    """Select a sufficient set of candidate columns for ``response``.

    Step one takes the candidate with the largest unconditional coefficient;
    each later step takes the unselected candidate with the largest
    coefficient conditional on the current set.  A candidate is accepted only
    when that value is strictly positive.

    Parameters
    ----------
    response : array of shape (m,)
    candidates : array of shape (m, d)
        Scalar candidate features, one per column.
    cfg : SelectionConfig

    Returns
    -------
    SufficientSet
    """
    y = np.asarray(response, dtype=float).ravel()
    m = y.size
    if m < 2:
        raise DegenerateInput("l_foci needs at least 2 samples")
    X = as_feature_matrix(candidates, name="candidates")
    if X.shape[0] != m:
        raise DimensionMismatch(f"response has {m} rows, candidates have {X.shape[0]}")
    d = X.shape[1]
    if d < 1:
        raise DimensionMismatch("need at least one candidate")

    scorer = _Scorer(y, X, cfg)
    result = SufficientSet(degenerate=bool(scorer.constant_y))
    selected = []
    remaining = list(range(d))
    while True:
        if not remaining:
            result.stop_reason = "exhausted"
            break
        if len(selected) >= cfg.max_features:
            result.stop_reason = "cap_reached"
            break
        scores = scorer.step(selected, remaining)
        if not selected:
            result.initial_scores = scores.copy()
        k = int(np.argmax(scores))
        if not scores[k] > 0:
            result.stop_reason = "nonpositive_gain"
            break
        selected.append(remaining.pop(k))
        result.gain_trace.append(float(scores[k]))
        if cfg.single_slice_mode:
            result.stop_reason = "cap_reached"
            break
    result.ordered_features = selected
    return result


def condition_number_trace(candidates, selection):
    """2-norm condition number of the covariance of each prefix of the selection.

    Singular prefixes report ``inf``.  Diagnostic only.
    """
    X = as_feature_matrix(candidates, name="candidates")
    order = list(selection.ordered_features if isinstance(selection, SufficientSet) else selection)
    if not order:
        raise DegenerateInput("selection is empty")
    out = []
    for k in range(1, len(order) + 1):
        cov = np.atleast_2d(np.cov(X[:, order[:k]], rowvar=False))
        if np.linalg.matrix_rank(cov) < k:
            out.append(float("inf"))
        else:
            out.append(float(np.linalg.cond(cov, 2)))
    return out


def score_blanket(selected, true_blanket, n_candidates):
    """True- and false-positive rates of a selected feature set.

    An empty true blanket gives TPR 1.0 by convention.
    """
    sel, true = set(selected), set(true_blanket)
    tpr = len(sel & true) / len(true) if true else 1.0
    negatives = n_candidates - len(true)
    fpr = len(sel - true) / negatives if negatives > 0 else 0.0
    return tpr, fpr


def blanket_benchmark(graph_spec, n_samples, cfg=SelectionConfig(), seed=0):
    """Generate data from ``graph_spec``, run :func:`l_foci`, score against the true blanket.

    Returns ``(tpr, fpr, runtime_seconds)``; runtime covers selection only.
    """
    from .data import sample_dag

    if n_samples < 2:
        raise ConfigError("n_samples must be >= 2")
    sample = sample_dag(graph_spec, n_samples, seed)
    t0 = time.perf_counter()
    sel = l_foci(sample.response, sample.features, cfg)
    runtime = time.perf_counter() - t0
    tpr, fpr = score_blanket(sel.ordered_features, sample.blanket, sample.features.shape[1])
    return tpr, fpr, runtime
