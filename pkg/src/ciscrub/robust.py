"""Outlier filtering on centered per-sample gradients, followed by scrubbing.

Each round scores every sample in the current inlier set by its squared
projection on the top right singular vector of the centered gradient
matrix, removes the high scorers with :func:`ciscrub.unlearn.scrub`, and
repeats until nothing is flagged or the round budget runs out.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DegenerateInput, DimensionMismatch
from .model import per_sample_gradients
from .unlearn import UnlearnConfig, scrub_sequence


@dataclass
class OutlierScores:
    tau: np.ndarray
    singular_vector: np.ndarray
    iterations_used: int
    degenerate: bool = False


def top_right_singular_vector(G, tol=1e-8, max_iter=200):
    """Power iteration on ``G^T G`` without forming it.

    Starts from the largest-norm row of ``G``.  Returns ``(v, iterations)``;
    ``v`` is ``None`` when ``G`` is zero.
    """
    G = np.asarray(G, dtype=float)
    norms = np.linalg.norm(G, axis=1)
    if G.size == 0 or norms.max() == 0:
        return None, 0
    v = G[int(np.argmax(norms))] / norms.max()
    for it in range(1, max_iter + 1):
        u = G.T @ (G @ v)
        nu = np.linalg.norm(u)
        if nu == 0:
            return v, it
        u /= nu
        if u @ v < 0:
            u = -u
        done = np.linalg.norm(u - v) < tol
        v = u
        if done:
            return v, it
    return v, max_iter


def score_gradients(G, tol=1e-8, max_iter=200):
    """Outlier scores ``tau_i = ((g_i - mean) . v)^2`` for gradient rows ``G``."""
    G = np.asarray(G, dtype=float)
    if G.ndim != 2 or G.shape[0] < 2:
        raise DegenerateInput("need at least 2 gradient rows")
    C = G - G.mean(axis=0)
    v, it = top_right_singular_vector(C, tol, max_iter)
    if v is None:
        # all gradients identical: direction undefined, nothing stands out
        e = np.zeros(G.shape[1])
        e[0] = 1.0
        return OutlierScores(np.zeros(G.shape[0]), e, 0, True)
    v = v / np.linalg.norm(v)
    return OutlierScores((C @ v) ** 2, v, it)


def score_outliers(model, X, y, tol=1e-8, max_iter=200):
    """Score every sample of ``(X, y)`` by its loss gradient at ``model``."""
    return score_gradients(per_sample_gradients(model, X, y), tol, max_iter)


def filter_outliers(scores, sigma_thresh=3.0, rho_max=0.1):
    """Indices with ``tau > mean + sigma_thresh * std``, at most ``ceil(rho_max * n)`` of them.

    When the cap binds the largest scores are kept.  Returned in ascending
    index order.
    """
    tau = np.asarray(scores.tau if isinstance(scores, OutlierScores) else scores, dtype=float)
    if tau.size == 0:
        return np.empty(0, dtype=np.int64)
    flagged = np.flatnonzero(tau > tau.mean() + sigma_thresh * tau.std())
    cap = math.ceil(rho_max * tau.size)
    if flagged.size > cap:
        # stable sort keeps the lower index first among equal scores
        flagged = flagged[np.argsort(-tau[flagged], kind="stable")[:cap]]
    return np.sort(flagged).astype(np.int64)


@dataclass(frozen=True)
class RobustConfig:
    sigma_thresh: float = 3.0
    rho_max: float = 0.1
    max_rounds: int = 5
    unlearn: UnlearnConfig = field(default_factory=UnlearnConfig)

    def __post_init__(self):
        if self.sigma_thresh < 0 or not 0 < self.rho_max <= 1 or self.max_rounds < 0:
            raise ConfigError("need sigma_thresh >= 0, 0 < rho_max <= 1, max_rounds >= 0")


@dataclass
class RobustRound:
    round_index: int
    removed: list
    scores: OutlierScores
    reports: list


def robust_scrub(model, X, y, cfg=RobustConfig(), X_val=None, y_val=None):
    """Alternate scoring, filtering and scrubbing.

    Returns
    -------
    model : MlpModel
    inliers : ndarray
        Original row indices still in the training set.
    rounds : list of RobustRound
        One entry per round that removed something.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y).ravel()
    if X.shape[0] == 0:
        raise ConfigError("dataset is empty")
    if y.shape[0] != X.shape[0]:
        raise DimensionMismatch(f"{y.shape[0]} labels for {X.shape[0]} rows")
    inliers = np.arange(X.shape[0])
    rounds, ordinal = [], 0
    for r in range(cfg.max_rounds):
        if inliers.size < 3:
            break
        scores = score_outliers(model, X[inliers], y[inliers])
        flagged = filter_outliers(scores, cfg.sigma_thresh, cfg.rho_max)
        if flagged.size == 0:
            break
        model, reports = scrub_sequence(
            model, X[inliers], y[inliers], flagged, cfg.unlearn, X_val, y_val, start_ordinal=ordinal
        )
        ordinal += len(reports)
        removed = inliers[flagged[: len(reports)]]
        for rep, orig in zip(reports, removed):
            rep.sample_index = int(orig)
        rounds.append(RobustRound(r, removed.tolist(), scores, reports))
        inliers = np.setdiff1d(inliers, removed)
    return model, inliers, rounds
