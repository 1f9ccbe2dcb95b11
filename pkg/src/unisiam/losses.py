"""Contrastive and distillation losses over paired unit-norm embeddings.

Batch layout: 2B rows where row i and row i+B are two augmented views
of the same instance. All losses take embeddings on the unit sphere
(checked) and return scalars built on the autodiff graph.

Three contrastive objectives share an alignment/uniformity split:

  * nce: alignment -(1/B) sum_i z_i.z_{i+B}/tau plus a per-anchor
    uniformity (mean over rows of log sum_{j != i} e^{z_i.z_j/tau}).
  * mine: same alignment, but uniformity pools all negative pairs under
    a single log (log sum_i sum_{j in Neg(i)} e^{z_i.z_j/tau}), which
    bounds the per-anchor version from above by Jensen.
  * amine: asymmetric variant. Alignment is a stop-gradient predictor
    match -(1/2B) sum_i (p_i.sg(z_{i+B}) + p_{i+B}.sg(z_i)) with no
    temperature, plus uniformity_weight times the pooled mine
    uniformity evaluated on z (gradients flow through z there).

Excluded similarity pairs are masked additively with -1e9 before the
log-sum-exp; after max subtraction their exponentials underflow to an
exact 0.0, so they contribute exactly zero to both value and gradient.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ContractViolationError

MASK_VALUE = -1e9

NEG_EXCLUDE_SELF = "exclude-self"
NEG_EXCLUDE_SELF_AND_POSITIVE = "exclude-self-and-positive"
_NEG_POLICIES = (NEG_EXCLUDE_SELF, NEG_EXCLUDE_SELF_AND_POSITIVE)


@dataclass(frozen=True)
class LossConfig:
    temperature: float = 2.0
    uniformity_weight: float = 0.1
    # Weight on the self-supervised term when combining with
    # distillation: total = alpha * amine + (1 - alpha) * distill.
    alpha: float = 0.5
    neg_policy: str = NEG_EXCLUDE_SELF_AND_POSITIVE

    def __post_init__(self):
        if self.temperature <= 0:
            raise ContractViolationError(f"temperature must be > 0, got {self.temperature}")
        if self.uniformity_weight < 0:
            raise ContractViolationError(
                f"uniformity_weight must be >= 0, got {self.uniformity_weight}")
        if not (0.0 <= self.alpha <= 1.0):
            raise ContractViolationError(
                f"alpha must lie in [0, 1], got {self.alpha}")
        if self.neg_policy not in _NEG_POLICIES:
            raise ContractViolationError(
                f"neg_policy must be one of {_NEG_POLICIES}, got {self.neg_policy!r}")


@dataclass
class PairBatch:
    """2B rows of paired data (raw views or their embeddings).

    instance_ids[i] identifies the source instance of row i; rows i and
    i+B must share an id and ids are unique within each half.
    """

    views: Tensor | np.ndarray
    pair_count: int
    instance_ids: np.ndarray

    def __post_init__(self):
        if self.pair_count < 1:
            raise ContractViolationError("pair_count must be >= 1")
        n = 2 * self.pair_count
        shape = self.views.shape
        if len(shape) != 2 or shape[0] != n:
            raise ContractViolationError(
                f"views must have shape ({n}, d), got {shape}")
        self.instance_ids = np.asarray(self.instance_ids)
        if self.instance_ids.shape != (n,):
            raise ContractViolationError(
                f"instance_ids must have shape ({n},), got {self.instance_ids.shape}")
        first, second = self.instance_ids[:self.pair_count], self.instance_ids[self.pair_count:]
        if not np.array_equal(first, second):
            raise ContractViolationError("rows i and i+B must share an instance id")
        if len(set(first.tolist())) != self.pair_count:
            raise ContractViolationError("instance ids must be unique within a half")

    def tensor(self) -> Tensor:
        if isinstance(self.views, Tensor):
            return self.views
        return ad.constant(np.asarray(self.views, dtype=np.float64))

    def array(self) -> np.ndarray:
        if isinstance(self.views, Tensor):
            return self.views.data
        return np.asarray(self.views, dtype=np.float64)

    def with_views(self, views) -> "PairBatch":
        return PairBatch(views=views, pair_count=self.pair_count,
                         instance_ids=self.instance_ids.copy())


@dataclass
class LossBreakdown:
    """Scalar loss tensors: total = alignment + uniformity_weight * uniformity.

    sg_target holds the stopped-gradient alignment target when the loss
    has one, so a caller in debug mode can verify no gradient ever
    reaches it.
    """

    total: Tensor
    alignment: Tensor
    uniformity: Tensor
    uniformity_weight: float
    sg_target: Tensor | None = None


def _check_unit_rows(arr: np.ndarray, what: str, tol: float = 1e-4) -> None:
    norms = np.sqrt((arr * arr).sum(axis=1))
    worst = float(np.abs(norms - 1.0).max())
    if worst > tol:
        raise ContractViolationError(
            f"{what} rows must be unit-norm (worst deviation {worst:.2e})")


def _exclusion_mask(ids: np.ndarray, policy: str) -> np.ndarray:
    """Additive mask: MASK_VALUE at excluded (i, j) pairs, 0 elsewhere."""
    n = ids.shape[0]
    if policy == NEG_EXCLUDE_SELF:
        excluded = np.eye(n, dtype=bool)
    else:
        excluded = ids[:, None] == ids[None, :]
    if (~excluded).sum(axis=1).min() < 1:
        raise ContractViolationError(
            f"negative set is empty under policy {policy!r} (batch too small)")
    return np.where(excluded, MASK_VALUE, 0.0)


def _similarities(z: Tensor, tau: float) -> Tensor:
    return ad.scale(ad.matmul(z, ad.transpose(z)), 1.0 / tau)


def _paired_alignment(z: Tensor, b: int, tau: float) -> Tensor:
    """-(1/(B*tau)) sum_i z_i . z_{i+B}"""
    z1 = ad.slice_rows(z, 0, b)
    z2 = ad.slice_rows(z, b, 2 * b)
    return ad.scale(ad.tsum(ad.mul(z1, z2)), -1.0 / (b * tau))


def nce_loss(batch: PairBatch, cfg: LossConfig) -> LossBreakdown:
    """Per-anchor contrastive loss. Negatives are every other row
    (self excluded); the configured neg_policy does not apply here.
    """
    z = batch.tensor()
    _check_unit_rows(z.data, "embedding")
    b = batch.pair_count
    align = _paired_alignment(z, b, cfg.temperature)
    sims = _similarities(z, cfg.temperature)
    mask = ad.constant(np.where(np.eye(2 * b, dtype=bool), MASK_VALUE, 0.0))
    row_lse = ad.logsumexp(ad.add(sims, mask), axis=1)
    unif = ad.tmean(row_lse)
    total = ad.add(align, unif)
    return LossBreakdown(total, align, unif, uniformity_weight=1.0)


def _pooled_uniformity(z: Tensor, batch: PairBatch, cfg: LossConfig) -> Tensor:
    sims = _similarities(z, cfg.temperature)
    mask = ad.constant(_exclusion_mask(batch.instance_ids, cfg.neg_policy))
    return ad.logsumexp(ad.add(sims, mask), axis=None)


def mine_loss(batch: PairBatch, cfg: LossConfig) -> LossBreakdown:
    """Alignment as in nce_loss, uniformity pooled under a single log."""
    z = batch.tensor()
    _check_unit_rows(z.data, "embedding")
    align = _paired_alignment(z, batch.pair_count, cfg.temperature)
    unif = _pooled_uniformity(z, batch, cfg)
    total = ad.add(align, unif)
    return LossBreakdown(total, align, unif, uniformity_weight=1.0)


def amine_loss(z_batch: PairBatch, p_batch: PairBatch, cfg: LossConfig) -> LossBreakdown:
    """Asymmetric loss: predictor-to-stopped-target alignment (no
    temperature) plus uniformity_weight times the pooled uniformity on z.
    """
    if z_batch.pair_count != p_batch.pair_count:
        raise ContractViolationError("z and p batches must have the same pair count")
    if not np.array_equal(z_batch.instance_ids, p_batch.instance_ids):
        raise ContractViolationError("z and p batches must be aligned row-for-row")
    z = z_batch.tensor()
    p = p_batch.tensor()
    _check_unit_rows(z.data, "projection")
    _check_unit_rows(p.data, "prediction")
    b = z_batch.pair_count
    target = ad.stop_gradient(z)
    p1 = ad.slice_rows(p, 0, b)
    p2 = ad.slice_rows(p, b, 2 * b)
    t1 = ad.slice_rows(target, 0, b)
    t2 = ad.slice_rows(target, b, 2 * b)
    align = ad.scale(
        ad.add(ad.tsum(ad.mul(p1, t2)), ad.tsum(ad.mul(p2, t1))), -1.0 / (2 * b))
    unif = _pooled_uniformity(z, z_batch, cfg)
    total = ad.add(align, ad.scale(unif, cfg.uniformity_weight))
    return LossBreakdown(total, align, unif,
                         uniformity_weight=cfg.uniformity_weight,
                         sg_target=target)


def distill_loss(student: PairBatch, teacher: PairBatch) -> Tensor:
    """-(1/2B) sum_i d_i . t_i between student distillation embeddings
    and frozen teacher embeddings. Teacher rows must carry no gradient.
    """
    if student.pair_count != teacher.pair_count:
        raise ContractViolationError("student/teacher batches must match in size")
    if not np.array_equal(student.instance_ids, teacher.instance_ids):
        raise ContractViolationError("student/teacher batches must be aligned")
    if isinstance(teacher.views, Tensor) and teacher.views.requires_grad:
        raise ContractViolationError(
            "teacher embeddings must not require grad (wrap in stop_gradient)")
    d = student.tensor()
    t = teacher.tensor()
    _check_unit_rows(d.data, "student distillation embedding")
    _check_unit_rows(t.data, "teacher embedding")
    if d.shape != t.shape:
        raise ContractViolationError(
            f"student/teacher embedding dims differ: {d.shape} vs {t.shape}")
    return ad.scale(ad.tsum(ad.mul(d, t)), -1.0 / (2 * student.pair_count))


def total_loss(amine_total: Tensor, distill_total: Tensor, cfg: LossConfig) -> Tensor:
    """alpha * amine + (1 - alpha) * distill."""
    a = cfg.alpha
    return ad.add(ad.scale(amine_total, a), ad.scale(distill_total, 1.0 - a))


def cross_entropy_loss(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean softmax cross-entropy (supervised baseline objective)."""
    return ad.softmax_cross_entropy(logits, labels)
