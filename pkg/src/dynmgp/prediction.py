"""Parameter extrapolation/interpolation to unobserved stamps and Gaussian
posterior prediction for the target output.

Target-side kernel parameters at a query stamp come from the slab prior's
mode (forecasting) or the AR(1) bridge between the nearest observed stamps
(recovery); amplitudes classified into the spike (E[gamma] < 0.5 at the
anchor stamp) are set to exactly zero.  Interpolation acts on constrained
values by default, where the slab priors live; pass space="unconstrained"
to interpolate pre-softplus values instead.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve

from . import kernels
from .covariance import JITTER_REL, chol_with_jitter
from .inference import FitResult
from .model import Dataset, HardSlab, SoftSlab, SpikeSlabConfig, softplus, softplus_inv

__all__ = ["Prediction", "Predictor", "forecast_params", "recover_params", "predict"]


@dataclass
class Prediction:
    mean: float
    variance: float
    time: int


def _param_views(fit: FitResult, space: str):
    if space == "constrained":
        return fit.params.target_amp(), fit.params.target_ls()
    if space == "unconstrained":
        return fit.params.target_amp_u, fit.params.target_ls_u
    raise ValueError(f"unknown interpolation space {space!r}")


def _from_view(alpha, theta, space, zero_rows):
    """Map interpolated view values back to constrained ones; zero the
    spike-classified amplitude rows afterwards so zeros stay exact."""
    if space == "unconstrained":
        alpha = softplus(alpha)
        theta = softplus(theta)
    alpha = np.asarray(alpha, dtype=float).copy()
    alpha[zero_rows] = 0.0
    return alpha, np.asarray(theta, dtype=float)


def forecast_params(fit: FitResult, dataset: Dataset, t_star: int,
                    ss_config: SpikeSlabConfig, space: str = "constrained"):
    """Target-side (alpha, theta) at a stamp beyond the training range."""
    times = dataset.target.times
    t_n = int(times[-1])
    if t_star <= t_n:
        raise ValueError(f"forecast stamp {t_star} must exceed the last "
                         f"training stamp {t_n}")
    a, th = _param_views(fit, space)
    a_n, th_n = a[:, -1], th[:, -1, :]
    if isinstance(ss_config.slab, SoftSlab):
        decay = ss_config.slab.rho ** (t_star - t_n)
        a_n, th_n = decay * a_n, decay * th_n
    zero_rows = fit.gamma.values[:, -1] < 0.5
    return _from_view(a_n, th_n, space, zero_rows)


def recover_params(fit: FitResult, dataset: Dataset, t_star: int,
                   ss_config: SpikeSlabConfig, space: str = "constrained"):
    """Target-side (alpha, theta) at an interior missing stamp."""
    times = dataset.target.times
    before = np.where(times < t_star)[0]
    after = np.where(times > t_star)[0]
    if len(before) == 0 or len(after) == 0:
        raise ValueError(f"stamp {t_star} has no observed neighbors on both sides")
    i_be, i_af = before[-1], after[0]
    t_be, t_af = int(times[i_be]), int(times[i_af])
    # earlier stamp wins ties
    i_near = i_be if (t_star - t_be) <= (t_af - t_star) else i_af
    a, th = _param_views(fit, space)
    if isinstance(ss_config.slab, HardSlab):
        a_star, th_star = a[:, i_near], th[:, i_near, :]
    else:
        rho = ss_config.slab.rho
        d1, d2 = float(t_star - t_be), float(t_af - t_star)
        denom = 1.0 - rho ** (2.0 * (d1 + d2))
        w_be = rho ** d1 * (1.0 - rho ** (2.0 * d2)) / denom
        w_af = rho ** d2 * (1.0 - rho ** (2.0 * d1)) / denom
        a_star = w_be * a[:, i_be] + w_af * a[:, i_af]
        th_star = w_be * th[:, i_be, :] + w_af * th[:, i_af, :]
    col = max(i_near - 1, 0)
    zero_rows = fit.gamma.values[:, col] < 0.5
    return _from_view(a_star, th_star, space, zero_rows)


class Predictor:
    """Posterior prediction with factorizations shared across queries."""

    def __init__(self, fit: FitResult, dataset: Dataset,
                 ss_config: SpikeSlabConfig, space: str = "constrained"):
        self.fit = fit
        self.dataset = dataset
        self.ss_config = ss_config
        self.space = space
        params = fit.params
        S = dataset.n_sources
        self._a_s = [params.source_amp(i) for i in range(S)]
        self._th_s = [params.source_ls(i) for i in range(S)]
        self._a_t = params.target_amp()
        self._th_t = params.target_ls()
        s2_s = params.source_noise_var()
        self._s2_m = params.target_noise_var()
        tgt = dataset.target

        mu = np.zeros(tgt.n)
        self._beta0, self._A, self._chols = [], [], []
        Kmm = np.zeros((tgt.n, tgt.n))
        for j in range(dataset.m):
            Kmm += kernels.pairwise_cov(tgt.inputs, tgt.inputs,
                                        self._a_t[j], self._th_t[j],
                                        self._a_t[j], self._th_t[j])
        Kmm[np.diag_indices_from(Kmm)] += self._s2_m
        self._jitter = JITTER_REL * float(np.mean(np.diag(Kmm)))
        Kmm[np.diag_indices_from(Kmm)] += self._jitter
        Sigma = Kmm
        for i in range(S):
            src = dataset.sources[i]
            Kii = kernels.pairwise_cov(src.inputs, src.inputs, self._a_s[i],
                                       self._th_s[i], self._a_s[i], self._th_s[i])
            Kii[np.diag_indices_from(Kii)] += s2_s[i]
            Kii[np.diag_indices_from(Kii)] += JITTER_REL * np.mean(np.diag(Kii))
            L = chol_with_jitter(Kii, name=f"source {i} auto block")
            beta0 = cho_solve((L, True), src.values)
            Kim = kernels.pairwise_cov(src.inputs, tgt.inputs, self._a_s[i],
                                       self._th_s[i], self._a_t[i], self._th_t[i])
            A = cho_solve((L, True), Kim)
            mu += Kim.T @ beta0
            Sigma = Sigma - Kim.T @ A
            self._chols.append(L)
            self._beta0.append(beta0)
            self._A.append(A)
        self._Lm = chol_with_jitter(Sigma, name="target conditional covariance")
        self._resid_weights = cho_solve((self._Lm, True), tgt.values - mu)

    def params_at(self, t_star: int):
        """Constrained target-side (alpha, theta) at any stamp."""
        times = self.dataset.target.times
        hit = np.where(times == t_star)[0]
        if len(hit):
            i = int(hit[0])
            return self._a_t[:, i].copy(), self._th_t[:, i, :].copy()
        if t_star > times[-1]:
            return forecast_params(self.fit, self.dataset, t_star,
                                   self.ss_config, self.space)
        return recover_params(self.fit, self.dataset, t_star,
                              self.ss_config, self.space)

    def predict_many(self, x_stars, t_star, alpha_star, theta_star):
        """Vectorized posterior over query rows sharing one parameter set.

        Returns (means, variances) arrays of length len(x_stars).
        """
        ds = self.dataset
        X = np.atleast_2d(np.asarray(x_stars, dtype=float))
        q = X.shape[0]
        alpha_star = np.asarray(alpha_star, dtype=float)
        theta_star = np.atleast_2d(np.asarray(theta_star, dtype=float))
        a_rep = [np.full(q, alpha_star[j]) for j in range(ds.m)]
        th_rep = [np.tile(theta_star[j], (q, 1)) for j in range(ds.m)]
        mu_star = np.zeros(q)
        sig_cross = np.zeros((ds.target.n, q))
        k_ss_quad = np.zeros(q)
        active = alpha_star > 0
        for i in range(ds.n_sources):
            if not active[i]:
                continue
            src = ds.sources[i]
            k_is = kernels.pairwise_cov(src.inputs, X, self._a_s[i],
                                        self._th_s[i], a_rep[i], th_rep[i])
            mu_star += k_is.T @ self._beta0[i]
            sig_cross -= self._A[i].T @ k_is
            k_ss_quad += np.sum(k_is * cho_solve((self._chols[i], True), k_is),
                                axis=0)
        # each channel's self-covariance at a point is alpha^2 * 2^(-d/2)
        k_star_star = (self._s2_m + self._jitter
                       + float(np.sum(alpha_star[active] ** 2))
                       * 2.0 ** (-0.5 * ds.d))
        for j in range(ds.m):
            if not active[j]:
                continue
            sig_cross += kernels.pairwise_cov(ds.target.inputs, X,
                                              self._a_t[j], self._th_t[j],
                                              a_rep[j], th_rep[j])
        means = mu_star + sig_cross.T @ self._resid_weights
        quad = np.sum(sig_cross * cho_solve((self._Lm, True), sig_cross),
                      axis=0)
        variances = np.maximum(k_star_star - k_ss_quad - quad, 0.0)
        return means, variances

    def predict_at(self, x_star, t_star, alpha_star, theta_star) -> Prediction:
        """Posterior mean/variance given explicit parameters at the query."""
        means, variances = self.predict_many(
            np.atleast_2d(np.asarray(x_star, dtype=float)), t_star,
            alpha_star, theta_star)
        return Prediction(mean=float(means[0]), variance=float(variances[0]),
                          time=int(t_star))

    def predict(self, t_star: int, x_star) -> Prediction:
        alpha_star, theta_star = self.params_at(t_star)
        return self.predict_at(x_star, t_star, alpha_star, theta_star)


def predict(fit: FitResult, dataset: Dataset, ss_config: SpikeSlabConfig,
            t_star: int, x_star, params_at_tstar=None) -> Prediction:
    """One-shot posterior prediction at (t_star, x_star)."""
    pred = Predictor(fit, dataset, ss_config)
    if params_at_tstar is not None:
        alpha_star, theta_star = params_at_tstar
        return pred.predict_at(x_star, t_star, alpha_star, theta_star)
    return pred.predict(t_star, x_star)
