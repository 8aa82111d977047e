"""Training objectives with analytic gradients w.r.t. the embedding batch.

All functions return a :class:`LossValue` holding the scalar value and
``grad`` with the shape of the differentiated input.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import DegenerateBatchError, SemhashError

EPS_NU = 1e-12
EPS_TAU = 1e-12
EULER_GAMMA = 0.5772156649015329


@dataclass(frozen=True)
class PairWeightParams:
    """Pair weighting for :func:`sim_loss`.

    With ``relative`` set, weights are computed on ``d / max(d)`` so the
    loss stays invariant to rescaling the target distances; unset, the raw
    distances are used.
    """
    gamma: float = 0.1
    rho: float = 2.0
    relative: bool = True

    def __post_init__(self):
        if not (self.gamma > 0 and self.rho > 0):
            raise ValueError("gamma and rho must be positive")


@dataclass(frozen=True)
class LossWeights:
    lambda1: float = 0.01
    lambda2: float = 0.01

    def __post_init__(self):
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ValueError("loss weights must be nonnegative")


@dataclass
class LossValue:
    value: float
    grad: np.ndarray

    def __add__(self, other: "LossValue") -> "LossValue":
        return LossValue(self.value + other.value, self.grad + other.grad)

    def scaled(self, c: float) -> "LossValue":
        return LossValue(c * self.value, c * self.grad)


def _as_batch(z) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    if z.ndim == 1:
        z = z[:, None]
    if z.ndim != 2:
        raise ValueError(f"expected a B x dim matrix, got shape {z.shape}")
    return z


def pair_weight(d, p: PairWeightParams = PairWeightParams()):
    """``gamma**rho / (gamma + d)**rho``; equals 1 at d=0 and decays slowly."""
    return p.gamma**p.rho / (p.gamma + np.asarray(d, dtype=float)) ** p.rho


def sim_loss(z, d, p: PairWeightParams = PairWeightParams()) -> LossValue:
    """Scale-invariant match between normalized L1 output distances and
    normalized target distances, weighted toward similar pairs.

    Subgradient convention: sign(0) = 0.
    """
    z = _as_batch(z)
    d = np.asarray(d, dtype=float)
    B, dim = z.shape
    if d.shape != (B, B):
        raise ValueError(f"distance matrix shape {d.shape} does not match batch size {B}")
    if B < 2:
        raise DegenerateBatchError("sim_loss needs at least two rows")

    dz = np.zeros((B, B))
    for k in range(dim):
        dz += np.abs(z[:, k, None] - z[None, :, k])
    tau_z = dz.sum()
    tau_y = d.sum()
    if tau_z < EPS_TAU:
        raise DegenerateBatchError("all embeddings in the batch coincide")
    if tau_y < EPS_TAU:
        raise DegenerateBatchError("all target distances are zero")

    w = pair_weight(d / d.max() if p.relative else d, p)
    u = dz / tau_z - d / tau_y
    value = float(np.sum(np.abs(u) * w))

    ws = w * np.sign(u)
    # dL/d(dz_bb') including the dependence of tau_z on every pair
    g = (ws - np.sum(ws * dz) / tau_z) / tau_z
    g = g + g.T
    grad = np.empty_like(z)
    for k in range(dim):
        grad[:, k] = np.sum(g * np.sign(z[:, k, None] - z[None, :, k]), axis=1)
    return LossValue(value, grad)


def _sq_dists(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    sq = (a * a).sum(1)[:, None] + (b * b).sum(1)[None, :] - 2.0 * a @ b.T
    return np.maximum(sq, 0.0)


def nearest_neighbors(queries, pool, exclude_self: bool = False, chunk: int = 2048):
    """Index and Euclidean distance of the closest ``pool`` row to every
    query row. With ``exclude_self`` query i never matches pool row i.

    Ties go to the lowest pool index. The winning distance is recomputed
    directly so coincident points give exactly 0.
    """
    q = _as_batch(queries)
    pool = _as_batch(pool)
    n = pool.shape[0] - (1 if exclude_self else 0)
    if n < 1:
        raise SemhashError("nearest-neighbor pool is empty")
    idx = np.empty(q.shape[0], dtype=np.int64)
    for s in range(0, q.shape[0], chunk):
        sq = _sq_dists(q[s:s + chunk], pool)
        if exclude_self:
            r = np.arange(s, min(s + chunk, q.shape[0]))
            sq[r - s, r] = np.inf
        idx[s:s + chunk] = np.argmin(sq, axis=1)
    dist = np.sqrt(((q - pool[idx]) ** 2).sum(1))
    return idx, dist


def nn_distance(v, pool, exclude_self: bool = False, self_index: int | None = None) -> float:
    """Euclidean distance from ``v`` to its nearest ``pool`` row, floored at
    ``EPS_NU``. ``self_index`` names the pool row to skip when
    ``exclude_self`` is set."""
    v = np.atleast_1d(np.asarray(v, dtype=float))
    pool = _as_batch(pool)
    dist = np.sqrt(((pool - v[None, :]) ** 2).sum(1))
    if exclude_self:
        if self_index is None:
            raise ValueError("exclude_self requires self_index")
        dist = np.delete(dist, self_index)
    if dist.size == 0:
        raise SemhashError("nearest-neighbor pool is empty")
    return max(float(dist.min()), EPS_NU)


def kl_loss(z, target) -> LossValue:
    """Empirical KL(p || q) from nearest-neighbor distances.

    ``mean_b [log nu(z_b; target) - log nu(z_b; z without b)]``. The target
    sample is a constant; gradients reach z through both distances,
    including through the neighbor row of the within term.
    """
    z = _as_batch(z)
    t = _as_batch(target)
    B = z.shape[0]
    if B < 2:
        raise DegenerateBatchError("kl_loss needs at least two embeddings")
    if t.shape[1] != z.shape[1]:
        raise ValueError("target sample dimension does not match embeddings")

    jx, nu_x = nearest_neighbors(z, t)
    jw, nu_w = nearest_neighbors(z, z, exclude_self=True)
    value = float(np.mean(np.log(np.maximum(nu_x, EPS_NU)) - np.log(np.maximum(nu_w, EPS_NU))))

    grad = np.zeros_like(z)
    ok = nu_x >= EPS_NU
    diff = z[ok] - t[jx[ok]]
    grad[ok] += diff / nu_x[ok, None] ** 2
    ok = nu_w >= EPS_NU
    diff = (z[ok] - z[jw[ok]]) / nu_w[ok, None] ** 2
    grad[ok] -= diff
    np.add.at(grad, jw[ok], diff)
    return LossValue(value, grad / B)


def log_unit_ball_volume(dim: int) -> float:
    return 0.5 * dim * math.log(math.pi) - math.lgamma(0.5 * dim + 1.0)


def entropy_estimate(points) -> float:
    """Kozachenko-Leonenko differential entropy (nats), k=1."""
    x = _as_batch(points)
    N, dim = x.shape
    if N < 2:
        raise SemhashError("entropy estimate needs at least two points")
    _, nu = nearest_neighbors(x, x, exclude_self=True)
    nu = np.maximum(nu, EPS_NU)
    return float(dim * np.mean(np.log(nu)) + math.log(N - 1) + log_unit_ball_volume(dim) + EULER_GAMMA)


def sample_target(n: int, dim: int, alpha: float = 0.1, rng=None) -> np.ndarray:
    """Draw ``n x dim`` i.i.d. entries ``2 * Beta(alpha, alpha) - 1``.

    ``rng`` is a Generator or a seed.
    """
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    rng = np.random.default_rng(rng)
    return 2.0 * rng.beta(alpha, alpha, size=(n, dim)) - 1.0


def cross_entropy_loss(logits, labels) -> LossValue:
    logits = _as_batch(logits)
    labels = np.asarray(labels, dtype=np.int64)
    B = logits.shape[0]
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1))
    logp = shifted - log_norm[:, None]
    value = float(-np.mean(logp[np.arange(B), labels]))
    grad = np.exp(logp)
    grad[np.arange(B), labels] -= 1.0
    return LossValue(value, grad / B)


def regression_loss(z, targets) -> LossValue:
    z = _as_batch(z)
    targets = _as_batch(targets)
    if z.shape != targets.shape:
        raise ValueError(f"prediction shape {z.shape} does not match targets {targets.shape}")
    r = z - targets
    return LossValue(float(np.mean(r * r)), 2.0 * r / r.size)


def combine_losses(sim: LossValue | None = None, kl: LossValue | None = None,
                   aux: LossValue | None = None, w: LossWeights = LossWeights()) -> LossValue:
    """``sim + lambda1 * kl + lambda2 * aux``; absent terms are skipped.

    All present terms must carry gradients of the same shape.
    """
    parts = [(sim, 1.0), (kl, w.lambda1), (aux, w.lambda2)]
    parts = [(t, c) for t, c in parts if t is not None]
    if not parts:
        raise ValueError("no loss terms to combine")
    total = parts[0][0].scaled(parts[0][1])
    for t, c in parts[1:]:
        total = total + t.scaled(c)
    return total
