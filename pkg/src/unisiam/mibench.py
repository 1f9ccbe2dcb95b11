"""Mutual-information estimation benchmark on correlated Gaussians.

Ground truth: x, y are d-dimensional standard normal with
corr(x_i, y_j) = rho when i == j and 0 otherwise, so
I(x; y) = -(d/2) * ln(1 - rho^2) exactly.

For each (rho, seed) cell one critic network is trained with the
bias-corrected lower-bound objective (exponential moving average in
the partition-function gradient), then frozen and read out with two
estimators over held-out batches:

  * a softmax-contrast estimate, mean_i [T(x_i, y_i) - logmeanexp_j
    T(x_i, y_j)], which can never exceed ln(batch); and
  * a lower-bound estimate, mean T(joint) - logmeanexp T(marginal),
    which is unbounded.

Sharing the critic isolates the estimator difference from critic
capacity.
"""

from __future__ import annotations

import csv
import io
import functools
import os
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import ContractViolationError, DivergenceError
from .ioutil import atomic_write_text
from .models import Mlp, MlpSpec, SGDState, sgd_step
from .parallel import fork_map

MI_CSV_HEADER = ("rho", "true_mi", "est_nce", "est_mine", "batch", "steps", "seed")


@dataclass(frozen=True)
class GaussianSpec:
    dim: int = 16
    rho: float = 0.5

    def __post_init__(self):
        if self.dim < 1:
            raise ContractViolationError("dim must be >= 1")
        if not (-1.0 < self.rho < 1.0):
            raise ContractViolationError(f"|rho| must be < 1, got {self.rho}")


def analytic_mi(spec: GaussianSpec) -> float:
    """Exact mutual information in nats."""
    return -0.5 * spec.dim * float(np.log1p(-spec.rho * spec.rho))


def sample_pairs(spec: GaussianSpec, n: int,
                 rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """n correlated pairs with standard-normal marginals."""
    if n < 1:
        raise ContractViolationError("need n >= 1 samples")
    x = rng.standard_normal((n, spec.dim))
    y = spec.rho * x + np.sqrt(1.0 - spec.rho ** 2) * rng.standard_normal((n, spec.dim))
    return x, y


def roll_marginal(x: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Product-of-marginals batch by pairing each x with the next y."""
    if x.shape[0] < 2:
        raise ContractViolationError("marginal batch needs >= 2 rows")
    return x, np.roll(y, 1, axis=0)


class Critic:
    """Scalar score network T(x, y) over concatenated pairs.

    The relu MLP output is squashed through bound * tanh(raw / bound), a
    soft clamp that leaves moderate scores nearly untouched but caps
    |T| at bound. An unbounded critic is a runaway under the
    lower-bound objective at high MI: the matched-pair term pushes
    scores up without limit, and training ends in overflow or a dead
    network. The scale is chosen well above the score range an optimal
    critic needs here, so the clamp binds only against divergence.
    """

    def __init__(self, dim: int, rng: np.random.Generator,
                 hidden: tuple[int, ...] = (256, 256), bound: float = 50.0):
        if bound <= 0:
            raise ContractViolationError("bound must be > 0")
        widths = hidden + (1,)
        self.dim = dim
        self.bound = float(bound)
        self.mlp = Mlp(MlpSpec(2 * dim, widths, (False,) * len(widths)), rng)

    def score(self, x: np.ndarray, y: np.ndarray) -> ad.Tensor:
        """(n, 1) scores with gradient support."""
        if x.shape != y.shape or x.ndim != 2 or x.shape[1] != self.dim:
            raise ContractViolationError(
                f"expected matching (n, {self.dim}) arrays, got {x.shape}/{y.shape}")
        joint = np.concatenate([x, y], axis=1)
        raw = self.mlp.forward(joint, training=True)
        return ad.scale(ad.tanh(ad.scale(raw, 1.0 / self.bound)), self.bound)

    def score_values(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        return self.score(x, y).data.ravel()

    def score_matrix(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        """(n, n) matrix of T(x_i, y_j) without gradients."""
        n = x.shape[0]
        xx = np.repeat(x, n, axis=0)
        yy = np.tile(y, (n, 1))
        return self.score_values(xx, yy).reshape(n, n)

    def parameters(self):
        return [(f"critic.{n}", p) for n, p in self.mlp.parameters()]


def nce_mi_estimate(critic: Critic, x: np.ndarray, y: np.ndarray) -> float:
    """Softmax-contrast readout; bounded above by ln(batch)."""
    n = x.shape[0]
    if n < 2:
        raise ContractViolationError("estimate needs >= 2 pairs")
    s = critic.score_matrix(x, y)
    m = s.max(axis=1, keepdims=True)
    lse = (m + np.log(np.exp(s - m).sum(axis=1, keepdims=True))).ravel()
    return float(np.diag(s).mean() - lse.mean() + np.log(n))


def mine_mi_estimate(critic: Critic, joint: tuple[np.ndarray, np.ndarray],
                     marginal: tuple[np.ndarray, np.ndarray]) -> float:
    """Lower-bound readout: mean T(joint) - logmeanexp T(marginal)."""
    tj = critic.score_values(*joint)
    tm = critic.score_values(*marginal)
    if tj.size < 1 or tm.size < 2:
        raise ContractViolationError("joint needs >= 1 and marginal >= 2 scores")
    m = tm.max()
    lme = m + np.log(np.exp(tm - m).mean())
    return float(tj.mean() - lme)


def train_critic(spec: GaussianSpec, rng: np.random.Generator, *,
                 steps: int = 2000, batch: int = 64, lr0: float = 0.01,
                 ema_decay: float = 0.99, anchor: float = 0.1) -> Critic:
    """Fit a critic by maximizing the smoothed lower bound with SGD.

    Two stabilizers, both required at high MI:

    * The partition-function gradient is rescaled by
      exp(logmeanexp(T_marg) - log ema), the slow-moving average of
      the same quantity, clamped to [0.5, 2]. The EMA lives in log
      space so spikes cannot overflow it, and the clamp keeps the
      restraining force alive after a spike (an unclamped factor
      decays to zero and the matched-pair term then grows unopposed).
    * anchor * mean(T_marg)^2 pins the score offset near zero. The
      bound itself is shift-invariant, so this costs nothing at the
      optimum, but without it the concentrated softmax gradient drags
      all scores downward together until every relu unit is dead.

    Non-finite losses raise a divergence error.
    """
    if steps < 1 or batch < 2:
        raise ContractViolationError("need steps >= 1 and batch >= 2")
    if not (0.0 <= ema_decay < 1.0):
        raise ContractViolationError("ema_decay must lie in [0, 1)")
    if anchor < 0:
        raise ContractViolationError("anchor must be >= 0")
    critic = Critic(spec.dim, rng)
    opt = SGDState(lr0=lr0, total_steps=steps, momentum=0.9, weight_decay=1e-4)
    log_ema = None
    for _ in range(steps):
        x, y = sample_pairs(spec, batch, rng)
        xm, ym = roll_marginal(x, y)
        t_joint = critic.score(x, y)
        t_marg = critic.score(xm, ym)
        lme = ad.sub(ad.logsumexp(t_marg, axis=None), ad.constant(np.log(batch)))
        v = float(lme.data)
        log_ema = v if log_ema is None else float(
            np.logaddexp(np.log(ema_decay) + log_ema, np.log1p(-ema_decay) + v))
        factor = float(np.clip(np.exp(np.clip(v - log_ema, -10.0, 10.0)), 0.5, 2.0))
        loss = ad.sub(ad.scale(lme, factor), ad.tmean(t_joint))
        if anchor > 0:
            mt = ad.tmean(t_marg)
            loss = ad.add(loss, ad.scale(ad.mul(mt, mt), anchor))
        if not np.isfinite(loss.data).all():
            raise DivergenceError("critic training produced a non-finite loss")
        loss.backward()
        sgd_step(critic.parameters(), opt)
        for _, p in critic.parameters():
            p.zero_grad()
    return critic


@dataclass
class MIBenchResult:
    rho: float
    true_mi: float
    est_nce: float
    est_mine: float
    batch: int
    steps: int
    seed: int
    diverged: bool = False


def _rho_key(rho: float) -> int:
    return int(round(rho * 1_000_000))


def _run_cell(cell: tuple[float, int], *, dim: int, batch: int, steps: int,
              eval_batches: int, lr0: float) -> MIBenchResult:
    rho, seed = cell
    spec = GaussianSpec(dim=dim, rho=rho)
    train_rng = np.random.default_rng([0x7261, seed, _rho_key(rho)])
    eval_rng = np.random.default_rng([0xE7A1, seed, _rho_key(rho)])
    try:
        critic = train_critic(spec, train_rng, steps=steps, batch=batch, lr0=lr0)
    except DivergenceError:
        return MIBenchResult(rho=rho, true_mi=analytic_mi(spec), est_nce=float("nan"),
                             est_mine=float("nan"), batch=batch, steps=steps,
                             seed=seed, diverged=True)
    nce_vals = np.empty(eval_batches)
    mine_vals = np.empty(eval_batches)
    for i in range(eval_batches):
        x, y = sample_pairs(spec, batch, eval_rng)
        nce_vals[i] = nce_mi_estimate(critic, x, y)
        mine_vals[i] = mine_mi_estimate(critic, (x, y), roll_marginal(x, y))
    return MIBenchResult(rho=rho, true_mi=analytic_mi(spec),
                         est_nce=float(nce_vals.mean()),
                         est_mine=float(mine_vals.mean()),
                         batch=batch, steps=steps, seed=seed)


def run_bias_sweep(rhos, seeds=(0,), *, dim: int = 16, batch: int = 64,
                   steps: int = 2000, eval_batches: int = 100,
                   lr0: float = 0.01, workers: int = 1) -> list[MIBenchResult]:
    """Train and read out one critic per (rho, seed) cell.

    Output rows follow the grid order (rho-major, then seed) regardless
    of worker count. A diverged cell yields NaN estimates and a flag
    instead of aborting the sweep.
    """
    rhos = list(rhos)
    seeds = list(seeds)
    if not rhos or not seeds:
        raise ContractViolationError("need at least one rho and one seed")
    if eval_batches < 1:
        raise ContractViolationError("eval_batches must be >= 1")
    cells = [(float(r), int(s)) for r in rhos for s in seeds]
    runner = functools.partial(_run_cell, dim=dim, batch=batch, steps=steps,
                               eval_batches=eval_batches, lr0=lr0)
    return fork_map(runner, cells, workers)


def write_mi_csv(results: list[MIBenchResult], path: str | os.PathLike) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(MI_CSV_HEADER)
    for r in results:
        writer.writerow([repr(r.rho), repr(r.true_mi), repr(r.est_nce),
                         repr(r.est_mine), r.batch, r.steps, r.seed])
    atomic_write_text(path, buf.getvalue())
