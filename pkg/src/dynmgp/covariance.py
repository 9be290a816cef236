"""Closed-form non-stationary covariance functions and block assembly.

The three covariance functions share one functional form (the convolution of
two Gaussian smoothing kernels); they differ only in which parameter channel
supplies each side.  `assemble` materializes the block-partitioned covariance
used everywhere else: per-source auto blocks (block diagonal), source-target
cross blocks, and the target auto block.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cholesky

from . import kernels
from .model import Dataset, DynamicParams

__all__ = [
    "CovBlocks",
    "source_auto_cov",
    "cross_cov",
    "target_auto_cov",
    "assemble",
    "chol_with_jitter",
    "JITTER_REL",
]

# relative jitter added to every diagonal before factorization
JITTER_REL = 1e-8
# escalation: retry x10 up to this relative level on factorization failure
JITTER_REL_MAX = 1e-4


def _check_positive(*thetas):
    for th in thetas:
        if np.any(np.asarray(th) <= 0):
            raise ValueError("length-scales must be strictly positive")


def _pair(x, xp, a, ap, th, thp):
    x = np.atleast_1d(np.asarray(x, dtype=float))
    xp = np.atleast_1d(np.asarray(xp, dtype=float))
    th = np.atleast_1d(np.asarray(th, dtype=float))
    thp = np.atleast_1d(np.asarray(thp, dtype=float))
    K = kernels.pairwise_cov(x[None, :], xp[None, :],
                             np.atleast_1d(float(a)), th[None, :],
                             np.atleast_1d(float(ap)), thp[None, :])
    return float(K[0, 0])


def source_auto_cov(x, xp, a_t, a_tp, th_t, th_tp):
    """Auto-covariance of one source between inputs at times t and t'."""
    _check_positive(th_t, th_tp)
    return _pair(x, xp, a_t, a_tp, th_t, th_tp)


def cross_cov(x, xp, a_ii_t, a_im_tp, th_ii_t, th_im_tp):
    """Covariance between source i at time t and the target at time t'."""
    _check_positive(th_ii_t, th_im_tp)
    return _pair(x, xp, a_ii_t, a_im_tp, th_ii_t, th_im_tp)


def target_auto_cov(x, xp, a_m_t, a_m_tp, th_m_t, th_m_tp):
    """Target auto-covariance: sum of per-channel terms over all j in I.

    a_m_t, a_m_tp : (m,) amplitudes at t and t'; th_m_t, th_m_tp : (m, d).
    """
    a_m_t = np.atleast_1d(np.asarray(a_m_t, dtype=float))
    a_m_tp = np.atleast_1d(np.asarray(a_m_tp, dtype=float))
    th_m_t = np.atleast_2d(np.asarray(th_m_t, dtype=float))
    th_m_tp = np.atleast_2d(np.asarray(th_m_tp, dtype=float))
    _check_positive(th_m_t, th_m_tp)
    return sum(
        _pair(x, xp, a_m_t[j], a_m_tp[j], th_m_t[j], th_m_tp[j])
        for j in range(len(a_m_t))
    )


@dataclass
class CovBlocks:
    """Block-partitioned covariance with noise and jitter on the diagonals.

    k_ss : list of per-source (n_i, n_i) auto blocks
    k_sm : list of (n_i, n_m) source-target cross blocks
    k_mm : (n_m, n_m) target auto block
    """

    k_ss: list
    k_sm: list
    k_mm: np.ndarray

    def full_matrix(self) -> np.ndarray:
        """Dense covariance over all outputs (sources stacked, target last)."""
        ns = [b.shape[0] for b in self.k_ss]
        n_m = self.k_mm.shape[0]
        N = sum(ns) + n_m
        K = np.zeros((N, N))
        off = 0
        for b, c in zip(self.k_ss, self.k_sm):
            n = b.shape[0]
            K[off:off + n, off:off + n] = b
            K[off:off + n, N - n_m:] = c
            K[N - n_m:, off:off + n] = c.T
            off += n
        K[N - n_m:, N - n_m:] = self.k_mm
        return K


def _add_jitter(block, rel=JITTER_REL):
    jit = rel * float(np.mean(np.diag(block)))
    block[np.diag_indices_from(block)] += jit
    return block


def assemble(dataset: Dataset, params: DynamicParams, jitter: bool = True) -> CovBlocks:
    """Materialize all covariance blocks for a dataset under given params."""
    n_m = dataset.target.n
    if params.target_amp_u.shape != (dataset.m, n_m):
        raise ValueError(
            f"target amplitude shape {params.target_amp_u.shape} does not match "
            f"(m={dataset.m}, n_m={n_m})"
        )
    xm = dataset.target.inputs
    a_t = params.target_amp()
    th_t = params.target_ls()

    k_ss, k_sm = [], []
    for i, src in enumerate(dataset.sources):
        if params.source_amp_u[i].shape[0] != src.n:
            raise ValueError(f"source {i} parameter length does not match its grid")
        a_s = params.source_amp(i)
        th_s = params.source_ls(i)
        block = kernels.pairwise_cov(src.inputs, src.inputs, a_s, th_s, a_s, th_s)
        block[np.diag_indices_from(block)] += params.source_noise_var()[i]
        if jitter:
            _add_jitter(block)
        k_ss.append(block)
        k_sm.append(kernels.pairwise_cov(src.inputs, xm, a_s, th_s, a_t[i], th_t[i]))

    k_mm = np.zeros((n_m, n_m))
    for j in range(dataset.m):
        k_mm += kernels.pairwise_cov(xm, xm, a_t[j], th_t[j], a_t[j], th_t[j])
    k_mm[np.diag_indices_from(k_mm)] += params.target_noise_var()
    if jitter:
        _add_jitter(k_mm)
    return CovBlocks(k_ss=k_ss, k_sm=k_sm, k_mm=k_mm)


def chol_with_jitter(mat: np.ndarray, name: str = "matrix") -> np.ndarray:
    """Lower Cholesky factor, escalating diagonal jitter x10 on failure."""
    rel = 0.0
    mean_diag = float(np.mean(np.diag(mat)))
    while True:
        try:
            work = mat if rel == 0.0 else mat + rel * mean_diag * np.eye(mat.shape[0])
            return cholesky(work, lower=True)
        except np.linalg.LinAlgError:
            pass
        rel = JITTER_REL if rel == 0.0 else rel * 10.0
        if rel > JITTER_REL_MAX:
            raise np.linalg.LinAlgError(
                f"Cholesky of {name} failed even with relative jitter {JITTER_REL_MAX}"
            )
