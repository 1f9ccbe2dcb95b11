"""Training loops: self-supervised pretraining, supervised baseline,
and teacher-student distillation.

Seeding discipline: the run seed spawns one stream for parameter init
and one for data order + augmentation. Components draw from the init
stream in a fixed order (backbone, proj, pred, dist, classifier), so a
regime that adds a later component consumes identical draws for the
earlier ones. Together with the additive zero contribution of a
zero-weighted loss term, this makes a distillation run with mix weight
1.0 reproduce a plain asymmetric pretraining run bit-for-bit on the
shared components.
"""

from __future__ import annotations

import csv
import io
import os
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .data import EpisodePool, augment, augment_policy, build_pair_batch
from .diagnostics import singular_spectrum
from .errors import ContractViolationError, DivergenceError
from .ioutil import atomic_write_text
from .losses import (LossConfig, amine_loss, distill_loss, mine_loss,
                     nce_loss, total_loss)
from .models import (EncoderStack, Mlp, MlpSpec, SGDState, TEACHER,
                     default_stack, sgd_step)

REGIMES = ("nce", "mine", "unisiam", "simsiam", "supervised", "distill")
RANK_PROBE_ROWS = 512


@dataclass(frozen=True)
class TrainConfig:
    regime: str
    epochs: int = 100
    batch_size: int = 64
    lr: float = 0.1
    seed: int = 0
    augment: str = "default"
    loss: LossConfig = field(default_factory=LossConfig)
    eval_every: int = 25
    momentum: float = 0.9
    weight_decay: float = 1e-4

    def __post_init__(self):
        if self.regime not in REGIMES:
            raise ContractViolationError(
                f"regime must be one of {REGIMES}, got {self.regime!r}")
        if self.epochs < 1:
            raise ContractViolationError("epochs must be >= 1")
        if self.batch_size < 2:
            raise ContractViolationError("batch_size must be >= 2")
        if self.lr < 0:
            raise ContractViolationError("lr must be >= 0")
        if self.eval_every < 0:
            raise ContractViolationError("eval_every must be >= 0")
        augment_policy(self.augment)


@dataclass
class TrainRow:
    epoch: int
    total: float
    alignment: float
    uniformity: float
    lr: float
    effective_rank: float | None
    wall_time: float


class TrainLog:
    """Per-epoch training trace.

    The CSV written to disk excludes wall_time so that identically
    seeded runs produce byte-identical files.
    """

    CSV_HEADER = ("epoch", "total", "alignment", "uniformity", "lr", "effective_rank")

    def __init__(self):
        self.rows: list[TrainRow] = []

    def append(self, row: TrainRow) -> None:
        self.rows.append(row)

    def to_csv(self, path: str | os.PathLike) -> None:
        buf = io.StringIO()
        writer = csv.writer(buf)
        writer.writerow(self.CSV_HEADER)
        for r in self.rows:
            writer.writerow([
                r.epoch, repr(r.total), repr(r.alignment), repr(r.uniformity),
                repr(r.lr),
                "" if r.effective_rank is None else repr(r.effective_rank),
            ])
        atomic_write_text(path, buf.getvalue())


def rank_probe_rows(pool: EpisodePool, max_rows: int = RANK_PROBE_ROWS) -> np.ndarray:
    """Deterministic probe batch: the first rows of a pool, class-major."""
    x = np.concatenate(pool.class_data, axis=0)
    return x[:max_rows]


def projection_effective_rank(stack: EncoderStack, pool: EpisodePool,
                              max_rows: int = RANK_PROBE_ROWS) -> float:
    """Effective rank of eval-mode projection embeddings on the probe batch."""
    z = stack.project(rank_probe_rows(pool, max_rows), training=False).data
    return singular_spectrum(z, source="projection").effective_rank


def _trainable(stack: EncoderStack, regime: str,
               classifier: Mlp | None) -> list[tuple[str, ad.Tensor]]:
    comps = {"nce": ("backbone", "proj"),
             "mine": ("backbone", "proj"),
             "unisiam": ("backbone", "proj", "pred"),
             "simsiam": ("backbone", "proj", "pred"),
             "supervised": ("backbone",),
             "distill": ("backbone", "proj", "pred", "dist")}[regime]
    params = [(f"{c}.{n}", p) for c, m in stack.components() if c in comps
              for n, p in m.parameters()]
    if classifier is not None:
        params.extend((f"classifier.{n}", p) for n, p in classifier.parameters())
    return params


def _zero_all(stack: EncoderStack, classifier: Mlp | None,
              teacher: EncoderStack | None) -> None:
    stack.zero_grads()
    if classifier is not None:
        for _, p in classifier.parameters():
            p.zero_grad()
    if teacher is not None:
        teacher.zero_grads()


def _run(config: TrainConfig, pools: dict[str, EpisodePool],
         teacher: EncoderStack | None) -> tuple[EncoderStack, TrainLog]:
    if "train" not in pools or "val" not in pools:
        raise ContractViolationError("pools must include 'train' and 'val'")
    train_pool = pools["train"]
    x_all, y_all = train_pool.stacked()
    n, dim = x_all.shape
    if n < config.batch_size:
        raise ContractViolationError(
            f"train pool has {n} rows, batch needs {config.batch_size}")
    if teacher is not None:
        if teacher.role != TEACHER:
            raise ContractViolationError("distillation teacher must be frozen")
        if teacher.input_dim != dim:
            raise ContractViolationError(
                f"teacher expects {teacher.input_dim}-D input, data is {dim}-D")

    init_ss, data_ss = np.random.SeedSequence(config.seed).spawn(2)
    init_rng = np.random.default_rng(init_ss)
    data_rng = np.random.default_rng(data_ss)

    stack = default_stack(dim, init_rng, with_pred=True,
                          with_dist=(config.regime == "distill"))
    classifier = None
    if config.regime == "supervised":
        n_classes = train_pool.n_classes
        classifier = Mlp(MlpSpec(stack.backbone.spec.out_dim, (n_classes,), (False,)),
                         init_rng)

    policy = augment_policy(config.augment)
    loss_cfg = config.loss
    if config.regime == "simsiam":
        loss_cfg = replace(loss_cfg, uniformity_weight=0.0)
    params = _trainable(stack, config.regime, classifier)
    steps_per_epoch = n // config.batch_size
    opt = SGDState(lr0=config.lr, total_steps=config.epochs * steps_per_epoch,
                   momentum=config.momentum, weight_decay=config.weight_decay)
    log = TrainLog()
    t0 = time.perf_counter()

    for epoch in range(1, config.epochs + 1):
        perm = data_rng.permutation(n)
        totals, aligns, unifs = [], [], []
        lr_used = 0.0
        for s in range(steps_per_epoch):
            idx = perm[s * config.batch_size:(s + 1) * config.batch_size]
            bd = None
            if config.regime == "supervised":
                views = np.stack([augment(row, policy, data_rng) for row in x_all[idx]])
                feats = stack.features(views, training=True)
                logits = classifier.forward(feats, training=True)
                loss = ad.softmax_cross_entropy(logits, y_all[idx])
                align_v = unif_v = float("nan")
            else:
                batch = build_pair_batch(x_all[idx], policy, data_rng,
                                         instance_ids=idx)
                h = stack.features(batch.views, training=True)
                z = stack.proj.forward(h, training=True)
                zb = batch.with_views(z)
                if config.regime == "nce":
                    bd = nce_loss(zb, loss_cfg)
                    loss = bd.total
                elif config.regime == "mine":
                    bd = mine_loss(zb, loss_cfg)
                    loss = bd.total
                else:
                    p = stack.pred.forward(z, training=True)
                    bd = amine_loss(zb, batch.with_views(p), loss_cfg)
                    loss = bd.total
                    if config.regime == "distill":
                        d_emb = stack.dist.forward(h, training=True)
                        z_t = teacher.project(batch.views)
                        dl = distill_loss(batch.with_views(d_emb),
                                          batch.with_views(z_t))
                        loss = total_loss(bd.total, dl, loss_cfg)
                align_v = bd.alignment.item()
                unif_v = bd.uniformity.item()
            if not np.isfinite(loss.data).all():
                raise DivergenceError(
                    f"non-finite loss at epoch {epoch} step {s}", log=log)
            loss.backward()
            if ad.debug_enabled() and bd is not None and bd.sg_target is not None:
                # alignment targets sit behind a stop-gradient; nothing
                # may ever accumulate there
                if bd.sg_target.grad is not None:
                    raise ContractViolationError(
                        "gradient leaked through the alignment stop-gradient")
            try:
                lr_used = sgd_step(params, opt)
            except DivergenceError as e:
                e.log = log
                raise
            totals.append(loss.item())
            aligns.append(align_v)
            unifs.append(unif_v)
            _zero_all(stack, classifier, teacher)
        rank = None
        if config.eval_every > 0 and (epoch % config.eval_every == 0
                                      or epoch == config.epochs):
            rank = projection_effective_rank(stack, pools["val"])
        log.append(TrainRow(epoch=epoch, total=float(np.mean(totals)),
                            alignment=float(np.mean(aligns)),
                            uniformity=float(np.mean(unifs)), lr=lr_used,
                            effective_rank=rank,
                            wall_time=time.perf_counter() - t0))
    return stack, log


def pretrain(config: TrainConfig,
             pools: dict[str, EpisodePool]) -> tuple[EncoderStack, TrainLog]:
    """Train a fresh stack under one of the non-distillation regimes."""
    if config.regime == "distill":
        raise ContractViolationError("use distill() for the distillation regime")
    return _run(config, pools, teacher=None)


def distill(config: TrainConfig, teacher: EncoderStack,
            pools: dict[str, EpisodePool]) -> tuple[EncoderStack, TrainLog]:
    """Train a student against a frozen teacher.

    The student optimizes loss.alpha times the asymmetric contrastive
    loss plus (1 - alpha) times the embedding-match distillation loss;
    both see the same two augmented views per instance.
    """
    if config.regime != "distill":
        config = replace(config, regime="distill")
    return _run(config, pools, teacher=teacher)
