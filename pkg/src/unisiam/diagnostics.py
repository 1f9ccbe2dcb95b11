"""Embedding-collapse diagnostics via the singular spectrum.

The spectrum of a (row-centered) embedding matrix is computed from the
d x d Gram matrix with a self-contained cyclic Jacobi eigensolver, not
a library call, so it can be cross-checked against an independent
routine in tests. Effective rank is the exponentiated entropy of the
normalized spectrum: 1.0 for rank-one embeddings (full collapse) up to
d for an isotropic cloud.
"""

from __future__ import annotations

import csv
import io
import os
from dataclasses import dataclass

import numpy as np

from .errors import ContractViolationError, DegenerateInputError
from .ioutil import atomic_write_text
from .losses import PairBatch, _check_unit_rows

SPECTRUM_CSV_HEADER = ("k", "sigma", "log10_sigma", "sigma_norm")
_LOG_FLOOR = 1e-300


def jacobi_eigh(a: np.ndarray, tol: float = 1e-12,
                max_sweeps: int = 100) -> tuple[np.ndarray, np.ndarray]:
    """Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.

    Returns (w, v) with eigenvalues w descending and a ~= v @ diag(w) @ v.T.
    Sweeps stop when the off-diagonal Frobenius mass falls below
    tol * max(1, ||a||_F).
    """
    a = np.array(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ContractViolationError(f"need a square matrix, got {a.shape}")
    if not np.isfinite(a).all():
        raise ContractViolationError("matrix has non-finite entries")
    asym = np.abs(a - a.T).max() if a.size else 0.0
    scale = max(1.0, np.abs(a).max() if a.size else 0.0)
    if asym > 1e-10 * scale:
        raise ContractViolationError(f"matrix is not symmetric (asymmetry {asym:.3e})")
    n = a.shape[0]
    v = np.eye(n)
    if n == 1:
        return a.reshape(1).copy(), v
    a = 0.5 * (a + a.T)
    fro = np.sqrt((a * a).sum())
    threshold = tol * max(1.0, fro)
    for _ in range(max_sweeps):
        off = np.sqrt(2.0 * (np.triu(a, 1) ** 2).sum())
        if off <= threshold:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if abs(apq) <= 1e-300:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = 1.0 / (abs(theta) + np.sqrt(theta * theta + 1.0))
                if theta < 0:
                    t = -t
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                col_p = a[:, p].copy()
                col_q = a[:, q].copy()
                a[:, p] = c * col_p - s * col_q
                a[:, q] = s * col_p + c * col_q
                row_p = a[p, :].copy()
                row_q = a[q, :].copy()
                a[p, :] = c * row_p - s * row_q
                a[q, :] = s * row_p + c * row_q
                a[p, q] = 0.0
                a[q, p] = 0.0
                vp = v[:, p].copy()
                vq = v[:, q].copy()
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq
    else:
        raise ContractViolationError(
            f"Jacobi failed to converge in {max_sweeps} sweeps")
    w = np.diag(a).copy()
    order = np.argsort(w)[::-1]
    return w[order], v[:, order]


def effective_rank(singular_values: np.ndarray) -> float:
    """exp(entropy) of the L1-normalized singular value distribution."""
    s = np.asarray(singular_values, dtype=np.float64)
    if s.ndim != 1 or s.size == 0:
        raise ContractViolationError("singular_values must be a non-empty vector")
    if (s < 0).any():
        raise ContractViolationError("singular values must be non-negative")
    total = s.sum()
    if total <= 0:
        raise DegenerateInputError("all singular values are zero")
    p = s / total
    ent = -np.where(p > 0, p * np.log(np.where(p > 0, p, 1.0)), 0.0).sum()
    return float(np.exp(ent))


@dataclass
class SpectrumReport:
    source: str
    sample_count: int
    singular_values: np.ndarray
    log10_values: np.ndarray
    normalized: np.ndarray
    effective_rank: float


def singular_spectrum(embeddings: np.ndarray, source: str = "projection",
                      ) -> SpectrumReport:
    """Singular spectrum of a row-centered embedding matrix (n, d).

    Singular values are those of the centered matrix itself (so the
    energy identity sum(sigma^2) == ||X - mean||_F^2 holds), computed
    through the Gram matrix with the in-house Jacobi solver.
    """
    x = np.asarray(embeddings, dtype=np.float64)
    if x.ndim != 2:
        raise ContractViolationError(f"embeddings must be 2-D, got {x.shape}")
    n, d = x.shape
    if n < 2:
        raise ContractViolationError("need at least 2 samples for a spectrum")
    xc = x - x.mean(axis=0)
    gram = xc.T @ xc
    w, _ = jacobi_eigh(gram)
    sigma = np.sqrt(np.maximum(w, 0.0))
    if sigma.sum() <= 0:
        raise DegenerateInputError("embedding matrix is constant; spectrum is zero")
    log10 = np.log10(np.maximum(sigma, _LOG_FLOOR))
    normalized = sigma / sigma[0] if sigma[0] > 0 else np.zeros_like(sigma)
    return SpectrumReport(source=source, sample_count=n, singular_values=sigma,
                          log10_values=log10, normalized=normalized,
                          effective_rank=effective_rank(sigma))


def write_spectrum_csv(report: SpectrumReport, path: str | os.PathLike) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(SPECTRUM_CSV_HEADER)
    for k in range(len(report.singular_values)):
        writer.writerow([k + 1,
                         repr(float(report.singular_values[k])),
                         repr(float(report.log10_values[k])),
                         repr(float(report.normalized[k]))])
    atomic_write_text(path, buf.getvalue())


def write_rank_summary_csv(report: SpectrumReport, dim: int,
                           path: str | os.PathLike) -> None:
    """One-row summary: effective rank plus the batch geometry."""
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["effective_rank", "n", "d", "source"])
    writer.writerow([repr(report.effective_rank), report.sample_count, dim,
                     report.source])
    atomic_write_text(path, buf.getvalue())


def alignment_uniformity(batch: PairBatch, temperature: float = 2.0,
                         ) -> tuple[float, float]:
    """Gradient-free alignment/uniformity scores of an embedded batch.

    Alignment is the mean positive-pair cosine (1.0 when every pair
    coincides, -1.0 when antipodal). Uniformity is the log of the mean
    of exp(cosine / temperature) over all ordered non-positive pairs,
    excluding each row itself and its partner view; higher values mean
    the negatives crowd together, lower values mean the sphere is
    better covered.
    """
    if temperature <= 0:
        raise ContractViolationError("temperature must be > 0")
    z = batch.array()
    _check_unit_rows(z, "embedding")
    b = batch.pair_count
    n = 2 * b
    align = float((z[:b] * z[b:]).sum()) / b
    sims = (z @ z.T) / temperature
    keep = ~np.eye(n, dtype=bool)
    idx = np.arange(n)
    keep[idx, (idx + b) % n] = False
    vals = sims[keep]
    m = float(vals.max())
    unif = m + np.log(np.exp(vals - m).mean())
    return align, float(unif)
