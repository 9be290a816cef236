"""Hyperparameter selection for the spike and slab scales.

A two-dimensional grid over (spike scale nu0, slab scale nu_slab) is scored
with a BIC-style criterion: N times the Gaussian marginal log-likelihood of
the fitted model minus log(N) times the number of target-side amplitudes
classified nonzero.  The winning cell is refit at full budget.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from joblib import Parallel, delayed

from .inference import FitConfig, FitResult, fit, marginal_loglik
from .model import Dataset, HardSlab, SoftSlab, SpikeSlabConfig

__all__ = ["TuningGrid", "TuningResult", "criterion", "grid_search",
           "DEFAULT_GRID"]

# threshold below which a constrained amplitude counts as zero
NONZERO_TOL = 1e-3
# per-cell fits run at this reduced inner-iteration budget
CELL_K_IN = 200


@dataclass(frozen=True)
class TuningGrid:
    """Grid of (nu_slab, nu0 = nu_slab / ratio) pairs.

    pairs : list of (nu0, nu_slab) tuples, deduplicated, order-preserving
    """

    pairs: tuple

    def __post_init__(self):
        seen, out = set(), []
        for nu0, nu_slab in self.pairs:
            if nu0 <= 0 or nu_slab <= 0:
                raise ValueError("grid scales must be positive")
            key = (float(nu0), float(nu_slab))
            if key not in seen:
                seen.add(key)
                out.append(key)
        if not out:
            raise ValueError("tuning grid is empty")
        object.__setattr__(self, "pairs", tuple(out))

    @staticmethod
    def from_ratios(slab_values, ratios) -> "TuningGrid":
        """Pairs (nu_slab / r, nu_slab) for every slab value and ratio r."""
        return TuningGrid(tuple((s / r, s) for s in slab_values for r in ratios))


# 6-cell default: slab scale in {1/5, 1/10, 1/15}, spike = slab / r, r in {5, 10}
DEFAULT_GRID = TuningGrid.from_ratios([1 / 5, 1 / 10, 1 / 15], [5, 10])


@dataclass
class TuningResult:
    best_config: SpikeSlabConfig
    best_fit: FitResult
    table: list  # rows of (nu0, nu_slab, criterion or None on failure)


def active_count(fit_result: FitResult) -> int:
    """Number of target-side amplitudes classified nonzero: slab membership
    at the incoming transition and magnitude above NONZERO_TOL."""
    a_t = fit_result.params.target_amp()
    gamma = fit_result.gamma.values
    # first stamp has no transition; reuse the first column's membership
    member = np.concatenate([gamma[:, :1], gamma], axis=1) >= 0.5
    return int(np.sum(member & (a_t > NONZERO_TOL)))


def criterion(fit_result: FitResult, dataset: Dataset) -> float:
    """N * marginal log-likelihood - log(N) * active amplitude count."""
    N = dataset.total_points
    ll = marginal_loglik(dataset, fit_result.params)
    return N * ll - np.log(N) * active_count(fit_result)


def _make_config(template: SpikeSlabConfig, nu0: float, nu_slab: float):
    if isinstance(template.slab, HardSlab):
        slab = HardSlab(nu_slab)
    else:
        slab = SoftSlab(nu_slab, template.slab.rho)
    return SpikeSlabConfig(nu0=nu0, slab=slab, eta=template.eta)


def _fit_cell(dataset, ss_config, fit_config, seed):
    cfg = replace(fit_config, k_in=min(CELL_K_IN, fit_config.k_in), seed=seed)
    return fit(dataset, ss_config, cfg)


def grid_search(dataset: Dataset, grid: TuningGrid, fit_config: FitConfig,
                template: SpikeSlabConfig | None = None,
                n_jobs: int = 1) -> TuningResult:
    """Score every grid cell and refit the winner at full budget.

    template supplies the slab kind, rho (soft slab) and eta; defaults to a
    hard slab with eta = 0.5.  Failed cells are skipped with a warning; ties
    go to the earlier cell.
    """
    if template is None:
        template = SpikeSlabConfig(nu0=grid.pairs[0][0],
                                   slab=HardSlab(grid.pairs[0][1]))
    configs = [_make_config(template, nu0, nu_slab)
               for nu0, nu_slab in grid.pairs]
    seeds = [fit_config.seed + 1000 * k for k in range(len(configs))]

    def one(cfg, seed):
        try:
            f = _fit_cell(dataset, cfg, fit_config, seed)
            return f, criterion(f, dataset)
        except (np.linalg.LinAlgError, FloatingPointError) as exc:
            warnings.warn(f"tuning cell nu0={cfg.nu0:g} failed: {exc}")
            return None, None

    results = Parallel(n_jobs=n_jobs)(
        delayed(one)(cfg, seed) for cfg, seed in zip(configs, seeds))

    table, best_idx, best_val = [], None, -np.inf
    for k, ((_, val), (nu0, nu_slab)) in enumerate(zip(results, grid.pairs)):
        table.append((nu0, nu_slab, val))
        if val is not None and val > best_val:
            best_idx, best_val = k, val
    if best_idx is None:
        raise RuntimeError("every tuning grid cell failed to fit")

    best_config = configs[best_idx]
    best_fit = fit(dataset, best_config,
                   replace(fit_config, seed=seeds[best_idx]))
    return TuningResult(best_config=best_config, best_fit=best_fit, table=table)
