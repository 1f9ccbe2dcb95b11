"""Episodic N-way K-shot evaluation with a logistic-regression probe.

Protocol: sample N classes from a (class-disjoint) pool, K support and
Q query rows per class, embed everything with the frozen backbone,
apply a sign-preserving power transform, fit a multinomial logistic
probe on the support set by full-batch gradient descent with Armijo
backtracking, and score query accuracy. Episode i draws from
default_rng([seed, i]), so results are independent of execution order
and worker count.
"""

from __future__ import annotations

import csv
import io
import functools
import os
from dataclasses import dataclass

import numpy as np

from .data import EpisodePool
from .errors import ConfigError, ContractViolationError
from .ioutil import atomic_write_text
from .models import EncoderStack
from .parallel import fork_map


@dataclass(frozen=True)
class EpisodeSpec:
    n_way: int = 5
    k_shot: int = 5
    n_query: int = 15
    episodes: int = 3000
    seed: int = 0

    def __post_init__(self):
        if self.n_way < 2:
            raise ContractViolationError("n_way must be >= 2")
        if self.k_shot < 1 or self.n_query < 1:
            raise ContractViolationError("k_shot and n_query must be >= 1")
        if self.episodes < 1:
            raise ContractViolationError("episodes must be >= 1")


@dataclass(frozen=True)
class ProbeConfig:
    power: float = 0.5
    reg: float | None = None     # None means 1 / (n_way * k_shot)
    max_iter: int = 500
    tol: float = 1e-7

    def __post_init__(self):
        if not (0.0 < self.power <= 1.0):
            raise ContractViolationError(f"power must lie in (0, 1], got {self.power}")
        if self.reg is not None and self.reg < 0:
            raise ContractViolationError("reg must be >= 0")
        if self.max_iter < 1 or self.tol <= 0:
            raise ContractViolationError("max_iter must be >= 1 and tol > 0")


@dataclass
class Episode:
    support_x: np.ndarray
    support_y: np.ndarray
    query_x: np.ndarray
    query_y: np.ndarray
    class_ids: np.ndarray    # original pool class ids, len n_way


@dataclass
class ProbeFit:
    weights: np.ndarray      # (d, c)
    bias: np.ndarray         # (c,)
    converged: bool
    n_iter: int
    loss: float


@dataclass
class EvalResult:
    accuracies: np.ndarray
    mean: float
    ci95: float
    spec: EpisodeSpec


def sample_episode(pool: EpisodePool, spec: EpisodeSpec,
                   rng: np.random.Generator) -> Episode:
    """Draw one episode. Rows are grouped class-major; labels are the
    position of the class within this episode (0..n_way-1)."""
    if pool.n_classes < spec.n_way:
        raise ConfigError(
            f"pool has {pool.n_classes} classes, episode needs {spec.n_way}")
    need = spec.k_shot + spec.n_query
    chosen = rng.choice(pool.n_classes, size=spec.n_way, replace=False)
    sup, sup_y, qry, qry_y = [], [], [], []
    for label, ci in enumerate(chosen):
        rows = pool.class_data[ci]
        if rows.shape[0] < need:
            raise ConfigError(
                f"class {int(pool.class_ids[ci])} has {rows.shape[0]} rows, "
                f"episode needs {need}")
        idx = rng.choice(rows.shape[0], size=need, replace=False)
        sup.append(rows[idx[:spec.k_shot]])
        qry.append(rows[idx[spec.k_shot:]])
        sup_y.append(np.full(spec.k_shot, label))
        qry_y.append(np.full(spec.n_query, label))
    return Episode(support_x=np.concatenate(sup), support_y=np.concatenate(sup_y),
                   query_x=np.concatenate(qry), query_y=np.concatenate(qry_y),
                   class_ids=pool.class_ids[chosen].copy())


def power_transform(features: np.ndarray, beta: float) -> np.ndarray:
    """sign(v) * |v| ** beta, elementwise."""
    if not (0.0 < beta <= 1.0):
        raise ContractViolationError(f"beta must lie in (0, 1], got {beta}")
    f = np.asarray(features, dtype=np.float64)
    return np.sign(f) * np.abs(f) ** beta


def _probe_loss(x, y, w, b, reg) -> float:
    logits = x @ w + b
    m = logits.max(axis=1, keepdims=True)
    lse = (m + np.log(np.exp(logits - m).sum(axis=1, keepdims=True))).ravel()
    nll = (lse - logits[np.arange(len(y)), y]).mean()
    return float(nll + 0.5 * reg * (w * w).sum())


def _probe_grad(x, y, w, b, reg) -> tuple[float, np.ndarray, np.ndarray]:
    n = len(y)
    logits = x @ w + b
    m = logits.max(axis=1, keepdims=True)
    lse = (m + np.log(np.exp(logits - m).sum(axis=1, keepdims=True))).ravel()
    nll = (lse - logits[np.arange(n), y]).mean()
    p = np.exp(logits - lse[:, None])
    p[np.arange(n), y] -= 1.0
    gw = x.T @ p / n + reg * w
    gb = p.sum(axis=0) / n
    return float(nll + 0.5 * reg * (w * w).sum()), gw, gb


def fit_probe(x: np.ndarray, y: np.ndarray, cfg: ProbeConfig) -> ProbeFit:
    """Multinomial logistic regression from a zero init.

    Full-batch gradient descent with Armijo backtracking: each accepted
    step strictly decreases the regularized loss, so the loss sequence
    is non-increasing. Returns the best iterate seen, flagged converged
    when the gradient infinity-norm drops below tol. The bias is not
    regularized.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y)
    if x.ndim != 2 or y.shape != (x.shape[0],):
        raise ContractViolationError(
            f"need x (n, d) with matching labels, got {x.shape} and {y.shape}")
    if not np.issubdtype(y.dtype, np.integer):
        raise ContractViolationError("labels must be integers")
    c = int(y.max()) + 1
    if y.min() < 0 or len(np.unique(y)) != c:
        raise ContractViolationError("labels must cover 0..C-1 with every class present")
    reg = cfg.reg if cfg.reg is not None else 1.0 / x.shape[0]
    w = np.zeros((x.shape[1], c))
    b = np.zeros(c)
    best = (_probe_loss(x, y, w, b, reg), w.copy(), b.copy())
    step = 1.0
    converged = False
    it = 0
    for it in range(1, cfg.max_iter + 1):
        loss, gw, gb = _probe_grad(x, y, w, b, reg)
        if loss < best[0]:
            best = (loss, w.copy(), b.copy())
        gmax = max(np.abs(gw).max(), np.abs(gb).max())
        if gmax < cfg.tol:
            converged = True
            break
        g2 = (gw * gw).sum() + (gb * gb).sum()
        accepted = False
        while step >= 1e-12:
            w2 = w - step * gw
            b2 = b - step * gb
            if _probe_loss(x, y, w2, b2, reg) <= loss - 1e-4 * step * g2:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            break
        w, b = w2, b2
        step = min(step * 2.0, 1e3)
    final_loss = _probe_loss(x, y, w, b, reg)
    if final_loss < best[0]:
        best = (final_loss, w.copy(), b.copy())
    return ProbeFit(weights=best[1], bias=best[2], converged=converged,
                    n_iter=it, loss=best[0])


def probe_accuracy(support_x, support_y, query_x, query_y, cfg: ProbeConfig) -> float:
    """Transform, fit on support, score on queries. Ties in the class
    scores resolve to the lowest class index (first argmax)."""
    fit = fit_probe(power_transform(support_x, cfg.power), support_y, cfg)
    scores = power_transform(query_x, cfg.power) @ fit.weights + fit.bias
    pred = np.argmax(scores, axis=1)
    return float((pred == np.asarray(query_y)).mean())


def encode_pool(stack: EncoderStack, pool: EpisodePool) -> EpisodePool:
    """Backbone features (eval mode) for every row of a pool."""
    feats = [stack.features(m, training=False).data for m in pool.class_data]
    return EpisodePool(split=pool.split, class_ids=pool.class_ids.copy(),
                       class_data=feats)


def evaluate_episode(stack: EncoderStack, episode: Episode,
                     cfg: ProbeConfig) -> float:
    sup = stack.features(episode.support_x, training=False).data
    qry = stack.features(episode.query_x, training=False).data
    return probe_accuracy(sup, episode.support_y, qry, episode.query_y, cfg)


def _episode_range_accuracies(index_range: tuple[int, int], *, pool: EpisodePool,
                              spec: EpisodeSpec, cfg: ProbeConfig,
                              shuffle_labels: bool = False) -> np.ndarray:
    lo, hi = index_range
    out = np.empty(hi - lo)
    for i in range(lo, hi):
        rng = np.random.default_rng([spec.seed, i])
        ep = sample_episode(pool, spec, rng)
        sup_y = ep.support_y
        if shuffle_labels:
            # chance-level control: break the feature/label pairing
            sup_y = rng.permutation(sup_y)
        out[i - lo] = probe_accuracy(ep.support_x, sup_y,
                                     ep.query_x, ep.query_y, cfg)
    return out


def evaluate(stack: EncoderStack, pool: EpisodePool, spec: EpisodeSpec,
             cfg: ProbeConfig | None = None, workers: int = 1,
             shuffle_labels: bool = False) -> EvalResult:
    """Run the full episodic protocol on a raw-data pool.

    Features are computed once for the whole pool; episodes then sample
    feature rows. Worker count never changes the result, only wall time
    (episode i always uses default_rng([seed, i])). With shuffle_labels
    the support labels of every episode are permuted before the probe
    fit, which should drive accuracy to chance.
    """
    cfg = cfg or ProbeConfig()
    feat_pool = encode_pool(stack, pool)
    worker = functools.partial(_episode_range_accuracies, pool=feat_pool,
                               spec=spec, cfg=cfg,
                               shuffle_labels=shuffle_labels)
    n = spec.episodes
    k = max(1, min(workers, n))
    bounds = np.linspace(0, n, k + 1).astype(int)
    ranges = [(int(bounds[i]), int(bounds[i + 1])) for i in range(k)
              if bounds[i] < bounds[i + 1]]
    accs = np.concatenate(fork_map(worker, ranges, workers))
    mean, ci = aggregate(accs)
    return EvalResult(accuracies=accs, mean=mean, ci95=ci, spec=spec)


def ci95_halfwidth(std: float, n: int) -> float:
    """Half-width of a normal 95% interval: 1.96 * std / sqrt(n)."""
    if n < 1:
        raise ContractViolationError("n must be >= 1")
    if std < 0:
        raise ContractViolationError("std must be >= 0")
    return 1.96 * std / np.sqrt(n)


def aggregate(values: np.ndarray) -> tuple[float, float]:
    """Mean and 95% interval half-width (sample std, ddof=1) of a run."""
    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 1 or v.size < 2:
        raise ContractViolationError("aggregate needs at least 2 values")
    return float(v.mean()), float(ci95_halfwidth(v.std(ddof=1), v.size))


def write_episode_csv(result: EvalResult, path: str | os.PathLike) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["episode", "accuracy"])
    for i, a in enumerate(result.accuracies):
        writer.writerow([i, repr(float(a))])
    atomic_write_text(path, buf.getvalue())


def write_summary_csv(result: EvalResult, path: str | os.PathLike) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["mean", "ci95", "n"])
    writer.writerow([repr(result.mean), repr(result.ci95), len(result.accuracies)])
    atomic_write_text(path, buf.getvalue())
