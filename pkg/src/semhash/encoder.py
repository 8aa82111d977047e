"""Feed-forward encoder with hand-written backprop, AdamW, the training
loop and thresholding into hash codes."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, fields

import numpy as np

from . import DegenerateBatchError, SemhashError
from .index import HashCodeSet
from .losses import (LossWeights, PairWeightParams, combine_losses,
                     cross_entropy_loss, kl_loss, regression_loss,
                     sample_target, sim_loss)

log = logging.getLogger(__name__)

LOSS_FLAGS = ("sim", "kl", "class", "reg")


class NumericError(SemhashError):
    """NaN or Inf appeared during training."""


@dataclass
class Mlp:
    """Affine layers with tanh between them and a linear output layer.

    ``weights[i]`` has shape ``(sizes[i], sizes[i+1])``.
    """
    sizes: list[int]
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    @classmethod
    def init(cls, sizes, rng=None) -> "Mlp":
        """Glorot-uniform weights, zero biases."""
        rng = np.random.default_rng(rng)
        sizes = [int(s) for s in sizes]
        if len(sizes) < 2 or min(sizes) < 1:
            raise ValueError(f"bad layer sizes {sizes}")
        ws, bs = [], []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            lim = np.sqrt(6.0 / (fan_in + fan_out))
            ws.append(rng.uniform(-lim, lim, size=(fan_in, fan_out)))
            bs.append(np.zeros(fan_out))
        return cls(sizes, ws, bs)

    @property
    def params(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def copy(self) -> "Mlp":
        return Mlp(list(self.sizes), [w.copy() for w in self.weights], [b.copy() for b in self.biases])

    @property
    def in_dim(self):
        return self.sizes[0]

    @property
    def out_dim(self):
        return self.sizes[-1]


def forward(m: Mlp, x):
    """Return the output batch and the activations needed by :func:`backward`."""
    a = np.asarray(x, dtype=float)
    acts = [a]
    n = len(m.weights)
    for i, (w, b) in enumerate(zip(m.weights, m.biases)):
        a = a @ w + b
        if i < n - 1:
            a = np.tanh(a)
        acts.append(a)
    return a, acts


def backward(m: Mlp, cache, grad_out) -> list[np.ndarray]:
    """Parameter gradients in ``m.params`` order, plus nothing else.

    Use :func:`backward_input` when the gradient w.r.t. the input is needed.
    """
    grads, _ = _backward(m, cache, grad_out)
    return grads


def backward_input(m: Mlp, cache, grad_out):
    return _backward(m, cache, grad_out)


def _backward(m, acts, grad_out):
    g = np.asarray(grad_out, dtype=float)
    n = len(m.weights)
    gw, gb = [None] * n, [None] * n
    for i in range(n - 1, -1, -1):
        if i < n - 1:
            g = g * (1.0 - acts[i + 1] ** 2)
        gw[i] = acts[i].T @ g
        gb[i] = g.sum(axis=0)
        g = g @ m.weights[i].T
    out = []
    for w, b in zip(gw, gb):
        out += [w, b]
    return out, g


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0

    @classmethod
    def zeros_like(cls, params):
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params])


def adam_step(params, grads, state: AdamState, lr: float, weight_decay: float = 0.0,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> AdamState:
    """One in-place Adam update with decoupled weight decay."""
    state.t += 1
    t = state.t
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p -= lr * ((m / c1) / (np.sqrt(v / c2) + eps) + weight_decay * p)
    return state


@dataclass
class TrainConfig:
    epochs: int = 200
    batch_size: int = 512
    learning_rate: float = 5e-4
    weight_decay: float = 1e-4
    losses: tuple[str, ...] = ("sim", "kl")
    lambda1: float = 0.01
    lambda2: float = 0.01
    alpha: float = 0.1
    gamma: float = 0.1
    rho: float = 2.0
    seed: int = 0
    hidden: tuple[int, ...] = (64,)
    code_dim: int = 16
    target_size: int = 0  # target sample rows per batch; 0 means the batch size

    def __post_init__(self):
        if isinstance(self.losses, str):
            self.losses = tuple(s.strip() for s in self.losses.split(",") if s.strip())
        self.losses = tuple(self.losses)
        bad = set(self.losses) - set(LOSS_FLAGS)
        if bad or not self.losses:
            raise ValueError(f"loss flags must be a non-empty subset of {LOSS_FLAGS}, got {self.losses}")
        if isinstance(self.hidden, str):
            self.hidden = tuple(int(s) for s in self.hidden.split(",") if s.strip())
        self.hidden = tuple(int(h) for h in self.hidden)
        if self.target_size < 0:
            raise ValueError("target_size must be >= 0")
        if self.epochs < 0 or self.batch_size < 2 or self.code_dim < 1:
            raise ValueError("epochs >= 0, batch_size >= 2 and code_dim >= 1 required")
        if self.learning_rate < 0 or self.weight_decay < 0 or self.alpha <= 0:
            raise ValueError("learning_rate, weight_decay must be >= 0 and alpha > 0")
        if self.lambda1 < 0 or self.lambda2 < 0 or self.gamma <= 0 or self.rho <= 0:
            raise ValueError("lambdas must be >= 0, gamma and rho > 0")

    @classmethod
    def keys(cls):
        return [f.name for f in fields(cls)]


@dataclass
class TrainResult:
    model: Mlp
    trace: list[dict] = field(default_factory=list)
    skipped: int = 0
    heads: dict[str, Mlp] = field(default_factory=dict)


def train(m: Mlp, x, cfg: TrainConfig, distances=None, class_ids=None, reg_targets=None,
          heads: dict | None = None, log_every: int = 0) -> TrainResult:
    """Minimise ``sim + lambda1 kl + lambda2 aux`` over shuffled minibatches.

    ``distances(rows)`` returns the target distance matrix of a batch (needed
    for ``sim``); ``class_ids`` and ``reg_targets`` feed the auxiliary
    classification and regression heads. The model is updated in place and
    returned in the result together with a per-epoch trace.
    """
    x = np.asarray(x, dtype=float)
    flags = set(cfg.losses)
    if "sim" in flags and distances is None:
        raise ValueError("the sim loss needs a distance provider")
    if "class" in flags and class_ids is None:
        raise ValueError("the class loss needs class ids")
    if "reg" in flags and reg_targets is None:
        raise ValueError("the reg loss needs regression targets")
    if "class" in flags and "reg" in flags:
        raise ValueError("class and reg are alternative auxiliary losses")

    rng = np.random.default_rng(cfg.seed)
    heads = dict(heads or {})
    if "class" in flags and "class" not in heads:
        n_cls = int(np.max(class_ids)) + 1
        heads["class"] = Mlp.init([m.out_dim, n_cls], rng)
    if "reg" in flags and "reg" not in heads:
        heads["reg"] = Mlp.init([m.out_dim, np.asarray(reg_targets).shape[1]], rng)

    params = m.params + [p for h in heads.values() for p in h.params]
    state = AdamState.zeros_like(params)
    pw = PairWeightParams(cfg.gamma, cfg.rho)
    lw = LossWeights(cfg.lambda1 if "kl" in flags else 0.0, cfg.lambda2)
    result = TrainResult(m, heads=heads)
    N = x.shape[0]

    for epoch in range(cfg.epochs):
        order = rng.permutation(N)
        sums = {"total": 0.0, "sim": 0.0, "kl": 0.0, "aux": 0.0}
        n_batches = 0
        for s in range(0, N, cfg.batch_size):
            rows = order[s:s + cfg.batch_size]
            if len(rows) < 2:
                continue
            z, cache = forward(m, x[rows])
            n_target = cfg.target_size or len(rows)
            target = sample_target(n_target, m.out_dim, cfg.alpha, rng) if "kl" in flags else None
            try:
                sim = sim_loss(z, distances(rows), pw) if "sim" in flags else None
                kl = kl_loss(z, target) if "kl" in flags else None
            except DegenerateBatchError as exc:
                log.warning("epoch %d: skipping degenerate batch (%s)", epoch, exc)
                result.skipped += 1
                continue
            aux, head_grads = None, []
            for name in ("class", "reg"):
                if name not in flags:
                    continue
                h = heads[name]
                out, hcache = forward(h, z)
                lv = cross_entropy_loss(out, class_ids[rows]) if name == "class" \
                    else regression_loss(out, reg_targets[rows])
                hg, gz = backward_input(h, hcache, lv.grad)
                aux = type(lv)(lv.value, gz)
                head_grads = [lw.lambda2 * g for g in hg]
            total = combine_losses(sim, kl, aux, lw)
            if not np.isfinite(total.value) or not np.all(np.isfinite(total.grad)):
                raise NumericError(f"non-finite loss at epoch {epoch}")
            grads = backward(m, cache, total.grad)
            for name in heads:
                if name in flags:
                    grads += head_grads
                else:
                    grads += [np.zeros_like(p) for p in heads[name].params]
            adam_step(params, grads, state, cfg.learning_rate, cfg.weight_decay)
            sums["total"] += total.value
            sums["sim"] += sim.value if sim else 0.0
            sums["kl"] += kl.value if kl else 0.0
            sums["aux"] += aux.value if aux else 0.0
            n_batches += 1
        row = {"epoch": epoch}
        row.update({k: v / max(n_batches, 1) for k, v in sums.items()})
        result.trace.append(row)
        if log_every and (epoch % log_every == 0 or epoch == cfg.epochs - 1):
            log.info("epoch %d total %.6f sim %.6f kl %.4f aux %.4f", epoch,
                     row["total"], row["sim"], row["kl"], row["aux"])
    return result


def binarize(z, ids=None) -> HashCodeSet:
    """Threshold at zero: bit is 1 iff z >= 0."""
    z = np.asarray(z, dtype=float)
    if z.ndim == 1:
        z = z[None, :]
    return HashCodeSet.from_bits(z >= 0, ids)


def encode_dataset(m: Mlp, x, ids=None, chunk: int = 4096):
    """Float embeddings and their hash codes for every row of ``x``."""
    x = np.asarray(x, dtype=float)
    z = np.concatenate([forward(m, x[s:s + chunk])[0] for s in range(0, max(len(x), 1), chunk)]) \
        if len(x) else np.zeros((0, m.out_dim))
    return binarize(z, ids), z


def train_classifier(x, class_ids, cfg: TrainConfig) -> Mlp:
    """Softmax classifier ``features -> hidden -> classes`` trained with cross-entropy.

    Used for one-hot baselines, whose codes come from predicted classes.
    """
    x = np.asarray(x, dtype=float)
    class_ids = np.asarray(class_ids)
    rng = np.random.default_rng(cfg.seed)
    m = Mlp.init([x.shape[1], *cfg.hidden, int(class_ids.max()) + 1], rng)
    state = AdamState.zeros_like(m.params)
    for _ in range(cfg.epochs):
        order = rng.permutation(len(x))
        for s in range(0, len(x), cfg.batch_size):
            rows = order[s:s + cfg.batch_size]
            out, cache = forward(m, x[rows])
            lv = cross_entropy_loss(out, class_ids[rows])
            if not np.isfinite(lv.value):
                raise NumericError("non-finite classifier loss")
            adam_step(m.params, backward(m, cache, lv.grad), state, cfg.learning_rate, cfg.weight_decay)
    return m
