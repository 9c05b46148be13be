"""Rank-based dependence estimators: Chatterjee's xi, CODEC and L-CODEC.

All estimators follow Azadkia & Chatterjee (2021).  For a response ``y`` with
ascending ranks ``R_i = #{j: y_j <= y_i}`` and descending ranks
``L_i = #{j: y_j >= y_i}``:

* unconditional ``T(Y, Z) = sum(n*min(R_i, R_M(i)) - L_i**2) / sum(L_i*(n - L_i))``
  with ``M(i)`` the nearest neighbour of row ``i`` in ``Z``;
* conditional ``T(Y, Z | X) = sum(min(R_i, R_M(i)) - min(R_i, R_N(i)))
  / sum(R_i - min(R_i, R_N(i)))`` with ``N(i)`` the nearest neighbour in ``X``
  and ``M(i)`` the nearest neighbour in ``(X, Z)``.

L-CODEC breaks ties with truncated Gaussian noise so neighbour search never
has to expand large groups of equidistant points.  The noise is bounded by
half the smallest gap between distinct values of a column, so distinct values
keep their order.
"""

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from . import seeding
from .errors import DegenerateInput, DimensionMismatch, TieError

# Candidate count for the first k-d tree query; rows whose candidates all tie
# are expanded with a ball query.
_KNN_BATCH = 8
# Relative noise scale used for constant predictor columns (no gap to respect).
_CONSTANT_COLUMN_SCALE = 1e-6


@dataclass(frozen=True)
class TieNoiseConfig:
    """Seeded tie-breaking noise.

    Per column the noise is ``N(0, (d_min / scale_divisor)**2)`` clipped to
    the open interval ``(-d_min/2, d_min/2)``, where ``d_min`` is the smallest
    nonzero gap between values of that column.
    """

    seed: int = 0
    scale_divisor: float = 10.0

    def __post_init__(self):
        seeding.check_seed(self.seed)
        if not self.scale_divisor > 2:
            raise ValueError("scale_divisor must exceed 2")


@dataclass(frozen=True)
class CoefficientResult:
    value: float
    numerator: float
    denominator: float
    degenerate: bool = False

    def __float__(self):
        return float(self.value)


@dataclass(frozen=True)
class NeighborMap:
    indices: np.ndarray
    metric: str = "sqeuclidean"
    tie_policy: str = "naive-first"


def as_feature_matrix(values, n=None, name="values"):
    """Coerce ``values`` to a finite float ``(n, d)`` array (1-D becomes one column)."""
    arr = np.asarray(values, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise DimensionMismatch(f"{name} must be 1-D or 2-D, got shape {arr.shape}")
    if n is not None and arr.shape[0] != n:
        raise DimensionMismatch(f"{name} has {arr.shape[0]} rows, expected {n}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


def ascending_ranks(y):
    """``R_i = #{j : y_j <= y_i}`` as int64."""
    y = np.asarray(y, dtype=float).ravel()
    return np.searchsorted(np.sort(y), y, side="right").astype(np.int64)


def descending_ranks(y):
    """``L_i = #{j : y_j >= y_i}`` as int64."""
    y = np.asarray(y, dtype=float).ravel()
    return (y.size - np.searchsorted(np.sort(y), y, side="left")).astype(np.int64)


def has_ties(column):
    column = np.asarray(column).ravel()
    return np.unique(column).size < column.size


def _min_gap(column):
    u = np.unique(column)
    if u.size < 2:
        return None
    return float(np.min(np.diff(u)))


def tie_noise(values, noise, rng=None, columns="tied"):
    """Return a perturbed copy of the 2-D array ``values``.

    ``columns="tied"`` perturbs only columns that contain repeated values;
    tie-free columns are returned untouched since noise cannot change their
    ranks.  ``columns="all"`` perturbs every column.  Constant columns use a
    tiny scale relative to their magnitude.
    """
    values = np.array(values, dtype=float, copy=True)
    if values.ndim == 1:
        values = values[:, None]
    if rng is None:
        rng = seeding.stream(noise.seed, seeding.TIE)
    # one draw per entry regardless of which columns are perturbed, so a
    # column's noise does not depend on its neighbours
    draws = rng.standard_normal(values.shape)
    for j in range(values.shape[1]):
        col = values[:, j]
        if columns == "tied" and not has_ties(col):
            continue
        gap = _min_gap(col)
        if gap is None:
            gap = _CONSTANT_COLUMN_SCALE * max(1.0, float(np.abs(col[0])))
        half = 0.5 * gap
        eps = np.clip(draws[:, j] * (gap / noise.scale_divisor), -half, half)
        # keep strictly inside the open interval
        lim = np.nextafter(half, 0.0)
        values[:, j] = col + np.clip(eps, -lim, lim)
    return values


def nearest_neighbors(points, noise=None):
    """Exact nearest neighbour (squared Euclidean) of every row, excluding itself.

    Ties are broken by the lowest index.  With ``noise`` the search runs on
    a tie-broken copy of ``points`` (every tied column perturbed).
    """
    pts = as_feature_matrix(points, name="points")
    n = pts.shape[0]
    if n < 2:
        raise DegenerateInput("nearest_neighbors needs at least 2 points")
    policy = "naive-first"
    if noise is not None:
        pts = tie_noise(pts, noise)
        policy = "randomized"
    return NeighborMap(indices=_nn_first(pts), tie_policy=policy)


def _nn_first(pts):
    n = pts.shape[0]
    k = min(n, _KNN_BATCH)
    tree = cKDTree(pts)
    _, cand = tree.query(pts, k=k)
    cand = np.asarray(cand).reshape(n, k)
    d2 = ((pts[cand] - pts[:, None, :]) ** 2).sum(axis=-1)
    d2[cand == np.arange(n)[:, None]] = np.inf
    best = d2.min(axis=1)
    # lowest index among the candidates at the best distance
    masked = np.where(d2 == best[:, None], cand, n)
    out = masked.min(axis=1)
    if k < n:
        # rows where every returned candidate ties may have more tied
        # neighbours beyond the first k
        worst = np.where(np.isinf(d2), -np.inf, d2).max(axis=1)
        for i in np.flatnonzero(worst <= best):
            radius = np.sqrt(best[i]) * (1 + 1e-9) + 1e-300
            ball = np.asarray(tree.query_ball_point(pts[i], radius), dtype=np.int64)
            ball = ball[ball != i]
            bd = ((pts[ball] - pts[i]) ** 2).sum(axis=-1)
            out[i] = ball[bd == bd.min()].min()
    return out.astype(np.int64)


def _nn_exhaustive(pts, rng, chunk=256):
    """Brute-force neighbours; ties resolved uniformly at random among all tied rows."""
    n = pts.shape[0]
    out = np.empty(n, dtype=np.int64)
    for start in range(0, n, chunk):
        block = pts[start:start + chunk]
        d2 = ((block[:, None, :] - pts[None, :, :]) ** 2).sum(axis=-1)
        rows = np.arange(block.shape[0])
        d2[rows, start + rows] = np.inf
        best = d2.min(axis=1)
        for r in rows:
            tied = np.flatnonzero(d2[r] == best[r])
            out[start + r] = tied[rng.integers(tied.size)] if tied.size > 1 else tied[0]
    return out


def _codec_from_neighbors(y, nn_xz, nn_x=None):
    n = y.size
    R = ascending_ranks(y)
    if nn_x is None:
        L = descending_ranks(y)
        num = int(np.sum(n * np.minimum(R, R[nn_xz]) - L * L))
        den = int(np.sum(L * (n - L)))
    else:
        rn = np.minimum(R, R[nn_x])
        num = int(np.sum(np.minimum(R, R[nn_xz]) - rn))
        den = int(np.sum(R - rn))
    if den == 0:
        return CoefficientResult(0.0, float(num), 0.0, True)
    return CoefficientResult(num / den, float(num), float(den), False)


def _prepare(y, z, x):
    y = np.asarray(y, dtype=float).ravel()
    n = y.size
    if n < 2:
        raise DegenerateInput("need at least 2 samples")
    if not np.all(np.isfinite(y)):
        raise ValueError("y contains non-finite entries")
    z = as_feature_matrix(z, n, "z")
    if x is None:
        x = np.empty((n, 0))
    else:
        x = as_feature_matrix(x, n, "x")
    return y, z, x


def codec(y, z, x=None, tie_policy="first", seed=0):
    """Coefficient of conditional dependence ``T(y, z | x)``; ``x=None`` is unconditional.

    Parameters
    ----------
    y : array of shape (n,)
    z : array of shape (n,) or (n, dz)
    x : array of shape (n, dx), optional
        Conditioning set.  Empty or ``None`` gives ``T(y, z)``.
    tie_policy : {"first", "exhaustive"}
        ``"first"`` resolves equidistant neighbours by lowest index.
        ``"exhaustive"`` enumerates every tied neighbour and draws one
        uniformly (seeded); this is the quadratic reference path.

    Returns
    -------
    CoefficientResult
        ``degenerate`` is set, and ``value`` is 0, when the denominator
        vanishes (e.g. constant ``y``).
    """
    y, z, x = _prepare(y, z, x)
    if tie_policy == "first":
        find = _nn_first
    elif tie_policy == "exhaustive":
        rng = seeding.stream(seed, seeding.TIE, 1)
        find = lambda pts: _nn_exhaustive(pts, rng)  # noqa: E731
    else:
        raise ValueError(f"unknown tie_policy {tie_policy!r}")
    if x.shape[1] == 0:
        return _codec_from_neighbors(y, find(z))
    return _codec_from_neighbors(y, find(np.hstack([x, z])), find(x))


def l_codec(y, z, x=None, noise=TieNoiseConfig()):
    """Randomized CODEC: tie-break ``y``, ``z`` and ``x`` with seeded noise, then :func:`codec`.

    Only columns that contain ties are perturbed, so tie-free input gives
    exactly the :func:`codec` value.  A constant ``y`` is left untouched
    and yields a degenerate result.
    """
    y, z, x = _prepare(y, z, x)
    rng = seeding.stream(noise.seed, seeding.TIE)
    block = np.hstack([y[:, None], x, z])
    if np.ptp(y) == 0:
        pert = tie_noise(block[:, 1:], noise, rng)
        pert = np.hstack([y[:, None], pert])
    else:
        pert = tie_noise(block, noise, rng)
    dx = x.shape[1]
    yp, xp, zp = pert[:, 0], pert[:, 1:1 + dx], pert[:, 1 + dx:]
    return codec(yp, zp, xp if dx else None)


def xi_coefficient(x, y, noise=None):
    """Chatterjee's rank correlation ``xi_n(x -> y)``.

    ``xi = 1 - 3 * sum_i |r_(i+1) - r_(i)| / (n**2 - 1)`` where ``r_(i)`` is
    the rank of ``y`` at the i-th smallest ``x``.  The result stores
    ``numerator = n**2 - 1 - 3 * sum|...|`` over ``denominator = n**2 - 1``.

    Without ``noise`` both inputs must be tie-free; with ``noise`` ties are
    broken first.  A constant input carries no signal and is reported as
    degenerate with value 0.
    """
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    n = x.size
    if n < 2:
        raise DegenerateInput("xi_coefficient needs at least 2 samples")
    if y.size != n:
        raise DimensionMismatch(f"x has {n} entries, y has {y.size}")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise ValueError("inputs contain non-finite entries")
    if np.ptp(x) == 0 or np.ptp(y) == 0:
        return CoefficientResult(0.0, 0.0, 0.0, True)
    if noise is None:
        if has_ties(x) or has_ties(y):
            raise TieError("ties present; pass a TieNoiseConfig to break them")
    else:
        both = tie_noise(np.column_stack([x, y]), noise)
        x, y = both[:, 0], both[:, 1]
    r = ascending_ranks(y)[np.argsort(x, kind="stable")]
    s = int(np.abs(np.diff(r)).sum())
    den = n * n - 1
    num = den - 3 * s
    return CoefficientResult(num / den, float(num), float(den), False)
