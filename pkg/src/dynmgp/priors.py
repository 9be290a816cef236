"""Log-densities and gradients for the spike and slab priors.

All functions are elementwise over numpy arrays and return a PriorTerm
bundling the log-density with its gradients w.r.t. the current and previous
constrained values.  The gapped soft slab is the exact multi-step AR(1)
transition: mean rho^gap * prev, variance nu1 * (1 - rho^(2*gap)) / (1 - rho^2),
so it reduces to the one-step form at gap 1 and integrates to one for any gap.
The hard slab has no gap dependence.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import HardSlab, SoftSlab, SpikeSlabConfig

__all__ = [
    "PriorTerm",
    "spike_logpdf",
    "hard_slab_logpdf",
    "soft_slab_logpdf",
    "gap_soft_slab_logpdf",
    "gap_hard_slab_logpdf",
    "slab_logpdf",
]


@dataclass
class PriorTerm:
    logp: np.ndarray
    dlogp_dcur: np.ndarray
    dlogp_dprev: np.ndarray


def spike_logpdf(alpha, nu0) -> PriorTerm:
    """Laplace spike centered at zero; subgradient at 0 taken as 0."""
    alpha = np.asarray(alpha, dtype=float)
    logp = -np.log(2.0 * nu0) - np.abs(alpha) / nu0
    dcur = -np.sign(alpha) / nu0
    return PriorTerm(logp, dcur, np.zeros_like(dcur))


def hard_slab_logpdf(cur, prev, nu1) -> PriorTerm:
    """Laplace prior on the step cur - prev."""
    diff = np.asarray(cur, dtype=float) - np.asarray(prev, dtype=float)
    logp = -np.log(2.0 * nu1) - np.abs(diff) / nu1
    dcur = -np.sign(diff) / nu1
    return PriorTerm(logp, dcur, -dcur)


def soft_slab_logpdf(cur, prev, nu1, rho) -> PriorTerm:
    """Gaussian AR(1) one-step transition prior."""
    return gap_soft_slab_logpdf(cur, prev, 1, nu1, rho)


def gap_soft_slab_logpdf(cur, prev, gap, nu1, rho) -> PriorTerm:
    """AR(1) transition across `gap` stamps (exact multi-step normalizer)."""
    cur = np.asarray(cur, dtype=float)
    prev = np.asarray(prev, dtype=float)
    gap = np.asarray(gap, dtype=float)
    if np.any(gap < 1):
        raise ValueError("gap must be >= 1")
    rg = rho ** gap
    var = nu1 * (1.0 - rg * rg) / (1.0 - rho * rho)
    resid = cur - rg * prev
    logp = -0.5 * np.log(2.0 * np.pi * var) - resid * resid / (2.0 * var)
    dcur = -resid / var
    dprev = rg * resid / var
    return PriorTerm(logp, dcur, dprev)


def gap_hard_slab_logpdf(cur, prev, gap, nu1) -> PriorTerm:
    """Hard slab across a gap: identical to the contiguous form."""
    gap = np.asarray(gap)
    if np.any(gap < 1):
        raise ValueError("gap must be >= 1")
    return hard_slab_logpdf(cur, prev, nu1)


def slab_logpdf(cur, prev, gap, slab: HardSlab | SoftSlab) -> PriorTerm:
    """Dispatch on the slab kind, honoring non-contiguous stamps."""
    if isinstance(slab, HardSlab):
        return gap_hard_slab_logpdf(cur, prev, gap, slab.nu1)
    return gap_soft_slab_logpdf(cur, prev, gap, slab.nu1, slab.rho)
