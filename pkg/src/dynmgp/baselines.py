"""Comparison methods: a single-output GP and a static L1-penalized
multi-output GP.

The static multi-output baseline ties every time-varying kernel parameter to
a single value per output and penalizes the source-to-target amplitudes with
an L1 term, so source selection is global rather than per-stamp.  It reuses
the same covariance code path as the dynamic model through a constant-over-
time parameter view.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize

from .inference import AdamState, _Constrained, _Grads, _gaussian_term
from .model import (Dataset, DynamicParams, OutputSeries, softplus,
                    softplus_grad, softplus_inv)
from .prediction import Prediction, Predictor

__all__ = ["StaticParams", "gp_fit", "gp_predict", "gp_fit_predict",
           "mgp_l1_fit", "mgp_l1_predict", "mgp_l1_cv",
           "LAMBDA_GRID", "CV_FOLDS"]

LAMBDA_GRID = (0.1, 0.3, 1.0, 3.0, 10.0)
CV_FOLDS = 3


# ---------------------------------------------------------------------------
# Single-output GP with a squared-exponential kernel
# ---------------------------------------------------------------------------

def _se_kernel(xa, xb, amp, ls):
    d2 = np.sum(((xa[:, None, :] - xb[None, :, :]) / ls) ** 2, axis=2)
    return amp * amp * np.exp(-0.5 * d2)


@dataclass
class GpParams:
    amp: float
    ls: np.ndarray
    noise: float


def gp_fit(series: OutputSeries, restarts: int = 3, seed: int = 0) -> GpParams:
    """Maximum-likelihood amplitude, per-dimension length-scale and noise."""
    if series.n < 2:
        raise ValueError("GP fit needs at least two observations")
    x, y = series.inputs, series.values
    d = series.d
    rng = np.random.default_rng(seed)

    def nll(logp):
        amp, ls, noise = np.exp(logp[0]), np.exp(logp[1:1 + d]), np.exp(logp[-1])
        K = _se_kernel(x, x, amp, ls)
        K[np.diag_indices_from(K)] += noise ** 2 + 1e-8
        try:
            L = np.linalg.cholesky(K)
        except np.linalg.LinAlgError:
            return 1e10
        a = np.linalg.solve(L, y)
        return float(0.5 * a @ a + np.sum(np.log(np.diag(L))))

    best, best_val = None, np.inf
    starts = [np.zeros(d + 2)]
    starts += [rng.normal(0.0, 1.0, size=d + 2) for _ in range(restarts - 1)]
    for x0 in starts:
        res = minimize(nll, x0, method="Nelder-Mead",
                       options={"maxiter": 400 * (d + 2), "xatol": 1e-6,
                                "fatol": 1e-8})
        if res.fun < best_val:
            best, best_val = res.x, res.fun
    amp, ls, noise = np.exp(best[0]), np.exp(best[1:1 + d]), np.exp(best[-1])
    return GpParams(amp=float(amp), ls=ls, noise=float(max(noise, 1e-4)))


def gp_predict(series: OutputSeries, gp: GpParams, x_star) -> list:
    """Standard GP posterior mean/variance at query inputs."""
    x_star = np.atleast_2d(np.asarray(x_star, dtype=float))
    K = _se_kernel(series.inputs, series.inputs, gp.amp, gp.ls)
    K[np.diag_indices_from(K)] += gp.noise ** 2 + 1e-8
    L = np.linalg.cholesky(K)
    alpha = np.linalg.solve(L.T, np.linalg.solve(L, series.values))
    ks = _se_kernel(series.inputs, x_star, gp.amp, gp.ls)
    v = np.linalg.solve(L, ks)
    mean = ks.T @ alpha
    var = gp.amp ** 2 + gp.noise ** 2 - np.sum(v * v, axis=0)
    return [Prediction(mean=float(m), variance=float(max(s, 0.0)), time=-1)
            for m, s in zip(mean, var)]


def gp_fit_predict(series: OutputSeries, x_star, seed: int = 0) -> list:
    return gp_predict(series, gp_fit(series, seed=seed), x_star)


# ---------------------------------------------------------------------------
# Static L1-penalized multi-output GP
# ---------------------------------------------------------------------------

@dataclass
class StaticParams:
    """Time-constant kernel parameters (unconstrained) plus the L1 weight."""

    source_amp_u: np.ndarray   # (S,)
    source_ls_u: np.ndarray    # (S, d)
    target_amp_u: np.ndarray   # (m,)
    target_ls_u: np.ndarray    # (m, d)
    source_noise_u: np.ndarray  # (S,)
    target_noise_u: float
    lam: float = 0.0

    def expand(self, dataset: Dataset) -> DynamicParams:
        """Broadcast constants over each output's time grid."""
        d = dataset.d
        return DynamicParams(
            source_amp_u=[np.full(s.n, self.source_amp_u[i])
                          for i, s in enumerate(dataset.sources)],
            source_ls_u=[np.tile(self.source_ls_u[i], (s.n, 1))
                         for i, s in enumerate(dataset.sources)],
            target_amp_u=np.tile(self.target_amp_u[:, None],
                                 (1, dataset.target.n)),
            target_ls_u=np.tile(self.target_ls_u[:, None, :],
                                (1, dataset.target.n, 1)),
            source_noise_u=self.source_noise_u.copy(),
            target_noise_u=float(self.target_noise_u),
        )

    def target_amp(self):
        return softplus(self.target_amp_u)

    def selected_sources(self, tol: float = 1e-3) -> np.ndarray:
        """Indices of sources whose target-channel amplitude exceeds tol."""
        return np.where(self.target_amp()[:-1] > tol)[0]


def _static_objective(sp: StaticParams, dataset: Dataset):
    """Penalized marginal log-likelihood and its gradient over the static
    unconstrained values, by collapsing per-stamp gradients."""
    dyn = sp.expand(dataset)
    cp = _Constrained(dyn, dataset.n_sources)
    grads = _Grads(cp)
    value = _gaussian_term(dataset, cp, grads)

    a_t = softplus(sp.target_amp_u)
    value -= sp.lam * float(np.sum(a_t[:-1]))

    S = dataset.n_sources
    g_amp_s = np.array([grads.a_s[i].sum() for i in range(S)])
    g_ls_s = np.vstack([grads.th_s[i].sum(axis=0) for i in range(S)]) \
        if S else np.zeros((0, dataset.d))
    g_amp_t = grads.a_t.sum(axis=1)
    g_amp_t[:-1] -= sp.lam
    g_ls_t = grads.th_t.sum(axis=1)

    grad = np.concatenate([
        g_amp_s * softplus_grad(sp.source_amp_u),
        (g_ls_s * softplus_grad(sp.source_ls_u)).ravel(),
        g_amp_t * softplus_grad(sp.target_amp_u),
        (g_ls_t * softplus_grad(sp.target_ls_u)).ravel(),
        grads.s2_s * 2.0 * cp.sig_s * softplus_grad(sp.source_noise_u),
        np.array([grads.s2_m * 2.0 * cp.sig_m
                  * softplus_grad(sp.target_noise_u)]),
    ])
    return value, grad


def _static_pack(sp: StaticParams) -> np.ndarray:
    return np.concatenate([
        sp.source_amp_u, sp.source_ls_u.ravel(), sp.target_amp_u,
        sp.target_ls_u.ravel(), sp.source_noise_u,
        np.array([sp.target_noise_u]),
    ])


def _static_unpack(vec: np.ndarray, dataset: Dataset, lam: float) -> StaticParams:
    S, m, d = dataset.n_sources, dataset.m, dataset.d
    k = 0
    amp_s = vec[k:k + S]; k += S
    ls_s = vec[k:k + S * d].reshape(S, d); k += S * d
    amp_t = vec[k:k + m]; k += m
    ls_t = vec[k:k + m * d].reshape(m, d); k += m * d
    noise_s = vec[k:k + S]; k += S
    noise_t = float(vec[k])
    return StaticParams(amp_s.copy(), ls_s.copy(), amp_t.copy(), ls_t.copy(),
                        noise_s.copy(), noise_t, lam=lam)


def mgp_l1_fit(dataset: Dataset, lam: float, iters: int = 400,
               seed: int = 0) -> StaticParams:
    """Maximize the L1-penalized static marginal likelihood by gradient
    ascent on soft-plus-unconstrained values."""
    S, m, d = dataset.n_sources, dataset.m, dataset.d
    rng = np.random.default_rng(seed)
    sp = StaticParams(
        source_amp_u=rng.uniform(0.1, 0.5, size=S),
        source_ls_u=np.full((S, d), softplus_inv(1.0)),
        target_amp_u=rng.uniform(0.1, 0.5, size=m),
        target_ls_u=np.full((m, d), softplus_inv(1.0)),
        source_noise_u=np.full(S, softplus_inv(0.1)),
        target_noise_u=softplus_inv(0.1),
        lam=lam,
    )
    vec = _static_pack(sp)
    adam = AdamState(vec.size)
    for _ in range(iters):
        cur = _static_unpack(vec, dataset, lam)
        value, grad = _static_objective(cur, dataset)
        if not np.isfinite(value) or not np.all(np.isfinite(grad)):
            raise FloatingPointError("non-finite static objective")
        vec = adam.update(vec, grad)
    return _static_unpack(vec, dataset, lam)


def mgp_l1_predict(dataset: Dataset, sp: StaticParams, x_star) -> list:
    """Posterior predictions of the static model at query inputs."""
    from .inference import FitResult
    from .model import GammaPosterior, HardSlab, SpikeSlabConfig
    dyn = sp.expand(dataset)
    n_m = dataset.target.n
    fit_like = FitResult(params=dyn,
                         gamma=GammaPosterior(np.ones((dataset.m,
                                                       max(n_m - 1, 1)))))
    ss = SpikeSlabConfig(nu0=1.0, slab=HardSlab(1.0))
    pred = Predictor(fit_like, dataset, ss)
    alpha = softplus(sp.target_amp_u)
    theta = softplus(sp.target_ls_u)
    x_star = np.atleast_2d(np.asarray(x_star, dtype=float))
    return [pred.predict_at(x, -1, alpha, theta) for x in x_star]


def mgp_l1_cv(dataset: Dataset, lambdas=LAMBDA_GRID, folds: int = CV_FOLDS,
              iters: int = 400, seed: int = 0) -> StaticParams:
    """Select the L1 weight by cross-validation over contiguous target time
    blocks (scored by held-out MAE), then refit on all data."""
    tgt = dataset.target
    if tgt.n < folds * 2:
        raise ValueError("too few target points for cross-validation")
    edges = np.linspace(0, tgt.n, folds + 1).astype(int)
    scores = []
    for lam in lambdas:
        errs = []
        for f in range(folds):
            held = np.arange(edges[f], edges[f + 1])
            keep = np.setdiff1d(np.arange(tgt.n), held)
            sub_tgt = OutputSeries(tgt.id, tgt.times[keep], tgt.inputs[keep],
                                   tgt.values[keep])
            sub = Dataset(sources=dataset.sources, target=sub_tgt)
            sp = mgp_l1_fit(sub, lam, iters=iters, seed=seed + f)
            preds = mgp_l1_predict(sub, sp, tgt.inputs[held])
            errs.append(np.mean([abs(p.mean - y) for p, y in
                                 zip(preds, tgt.values[held])]))
        scores.append(float(np.mean(errs)))
    best = lambdas[int(np.argmin(scores))]
    return mgp_l1_fit(dataset, best, iters=iters, seed=seed)
