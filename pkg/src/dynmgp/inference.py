"""EM fitting: slab-membership E-step, gradient M-step, source warm start.

The expected complete log-posterior splits into a Gaussian data term (source
marginals plus the target conditional, exploiting the block-diagonal source
covariance) and prior sums.  Gradients of the Gaussian term are accumulated
per covariance block from G = 0.5 * (beta beta^T - K^{-1}), expressed with
block inverses so nothing bigger than one block is ever factorized, then
chained through the kernel closed form and the soft-plus map.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_solve

from . import kernels
from .covariance import JITTER_REL, chol_with_jitter
from .model import (Dataset, DynamicParams, GammaPosterior, SpikeSlabConfig,
                    softplus, softplus_grad)
from .priors import slab_logpdf, spike_logpdf

__all__ = ["FitConfig", "FitResult", "AdamState", "e_step", "q_objective",
           "marginal_loglik", "init_sources", "fit"]


@dataclass
class FitConfig:
    k_out: int = 5
    k_in: int = 400
    batches: int = 4
    adam_step: float = 0.01
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    gamma_init: float = 0.99
    seed: int = 0
    # tie per-time source parameters to a single value (stationary sources)
    static_sources: bool = False

    def __post_init__(self):
        if self.k_out < 1 or self.k_in < 1 or self.batches < 1:
            raise ValueError("k_out, k_in and batches must all be >= 1")


@dataclass
class FitResult:
    params: DynamicParams
    gamma: GammaPosterior
    trace: list = field(default_factory=list)
    wallclock: float = 0.0


class AdamState:
    """Plain ADAM for gradient ascent on a flat parameter vector."""

    def __init__(self, size, step=0.01, beta1=0.9, beta2=0.999, eps=1e-8):
        self.step = step
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0

    def update(self, x, grad):
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad * grad
        mhat = self.m / (1 - self.beta1 ** self.t)
        vhat = self.v / (1 - self.beta2 ** self.t)
        return x + self.step * mhat / (np.sqrt(vhat) + self.eps)


# ---------------------------------------------------------------------------
# Gaussian data term
# ---------------------------------------------------------------------------

class _Constrained:
    """Constrained parameter views plus chain-rule factors, computed once."""

    def __init__(self, params: DynamicParams, n_sources: int):
        self.a_s = [params.source_amp(i) for i in range(n_sources)]
        self.th_s = [params.source_ls(i) for i in range(n_sources)]
        self.a_t = params.target_amp()
        self.th_t = params.target_ls()
        self.s2_s = params.source_noise_var()
        self.s2_m = params.target_noise_var()
        self.sig_s = softplus(params.source_noise_u)
        self.sig_m = softplus(params.target_noise_u)


class _Grads:
    """Gradient accumulators over constrained values, mirroring _Constrained."""

    def __init__(self, cp: _Constrained):
        self.a_s = [np.zeros_like(a) for a in cp.a_s]
        self.th_s = [np.zeros_like(t) for t in cp.th_s]
        self.a_t = np.zeros_like(cp.a_t)
        self.th_t = np.zeros_like(cp.th_t)
        self.s2_s = np.zeros_like(cp.s2_s)
        self.s2_m = 0.0


def _gaussian_term(dataset: Dataset, cp: _Constrained, grads: _Grads | None,
                   batch=None, weight_sources=1.0):
    """Log-likelihood of sources plus target conditional; accumulates grads.

    batch: optional sorted index array restricting the target rows used in
    the conditional term (mini-batching).  Source terms are scaled by
    weight_sources.
    """
    S = dataset.n_sources
    tgt = dataset.target
    if batch is None:
        B = np.arange(tgt.n)
    else:
        B = np.asarray(batch)
    xmB = tgt.inputs[B]
    ymB = tgt.values[B]
    a_tB = cp.a_t[:, B]
    th_tB = cp.th_t[:, B, :]

    value = 0.0
    mu = np.zeros(len(B))
    chols, beta0s, As, Kims = [], [], [], []
    for i in range(S):
        src = dataset.sources[i]
        Kk = kernels.pairwise_cov(src.inputs, src.inputs,
                                  cp.a_s[i], cp.th_s[i], cp.a_s[i], cp.th_s[i])
        Kii = Kk.copy()
        Kii[np.diag_indices_from(Kii)] += cp.s2_s[i]
        Kii[np.diag_indices_from(Kii)] += JITTER_REL * np.mean(np.diag(Kii))
        L = chol_with_jitter(Kii, name=f"source {i} auto block")
        beta0 = cho_solve((L, True), src.values)
        value += weight_sources * (
            -0.5 * float(src.values @ beta0) - float(np.sum(np.log(np.diag(L))))
            - 0.5 * src.n * np.log(2.0 * np.pi)
        )
        Kim = kernels.pairwise_cov(src.inputs, xmB, cp.a_s[i], cp.th_s[i],
                                   a_tB[i], th_tB[i])
        A = cho_solve((L, True), Kim)
        mu += Kim.T @ beta0
        chols.append((L, Kk))
        beta0s.append(beta0)
        As.append(A)
        Kims.append(Kim)

    Kmm_parts = []
    Kmm = np.zeros((len(B), len(B)))
    for j in range(dataset.m):
        Kj = kernels.pairwise_cov(xmB, xmB, a_tB[j], th_tB[j], a_tB[j], th_tB[j])
        Kmm_parts.append(Kj)
        Kmm += Kj
    Kmm[np.diag_indices_from(Kmm)] += cp.s2_m
    Kmm[np.diag_indices_from(Kmm)] += JITTER_REL * np.mean(np.diag(Kmm))

    Sigma = Kmm - sum(Kims[i].T @ As[i] for i in range(S)) if S else Kmm
    Lm = chol_with_jitter(Sigma, name="target conditional covariance")
    r = ymB - mu
    gm = cho_solve((Lm, True), r)
    value += (-0.5 * float(r @ gm) - float(np.sum(np.log(np.diag(Lm))))
              - 0.5 * len(B) * np.log(2.0 * np.pi))

    if grads is None:
        return value

    eye = np.eye(len(B))
    Sinv = cho_solve((Lm, True), eye)
    G_mm = 0.5 * (np.outer(gm, gm) - Sinv)
    for j in range(dataset.m):
        daL, dthL, daR, dthR = kernels.pairwise_cov_grads(
            xmB, xmB, a_tB[j], th_tB[j], a_tB[j], th_tB[j],
            Kmm_parts[j], G_mm)
        grads.a_t[j, B] += daL + daR
        grads.th_t[j, B, :] += dthL + dthR
    grads.s2_m += float(np.trace(G_mm))

    for i in range(S):
        src = dataset.sources[i]
        L, Kk = chols[i]
        beta0 = beta0s[i]
        Kim, Ai = Kims[i], As[i]
        beta_i = beta0 - Ai @ gm
        Ai_Sinv = Ai @ Sinv
        G_im = 0.5 * (np.outer(beta_i, gm) + Ai_Sinv)
        Kii_inv = cho_solve((L, True), np.eye(src.n))
        # marginal part carries weight_sources; conditional part never does
        G_ii = (0.5 * weight_sources * (np.outer(beta0, beta0) - Kii_inv)
                + 0.5 * (np.outer(beta_i, beta_i) - np.outer(beta0, beta0)
                         - Ai_Sinv @ Ai.T))
        daL, dthL, daR, dthR = kernels.pairwise_cov_grads(
            src.inputs, src.inputs, cp.a_s[i], cp.th_s[i],
            cp.a_s[i], cp.th_s[i], Kk, G_ii)
        grads.a_s[i] += daL + daR
        grads.th_s[i] += dthL + dthR
        grads.s2_s[i] += float(np.trace(G_ii))

        daL, dthL, daR, dthR = kernels.pairwise_cov_grads(
            src.inputs, xmB, cp.a_s[i], cp.th_s[i], a_tB[i], th_tB[i],
            Kim, 2.0 * G_im)
        grads.a_s[i] += daL
        grads.th_s[i] += dthL
        grads.a_t[i, B] += daR
        grads.th_t[i, B, :] += dthR

    return value


# ---------------------------------------------------------------------------
# Prior sums
# ---------------------------------------------------------------------------

def _source_prior_terms(dataset, cp, grads, ss_config, weight=1.0):
    """Slab priors on each source's amplitude and length-scale paths."""
    value = 0.0
    for i, src in enumerate(dataset.sources):
        if src.n < 2:
            continue
        gaps = np.diff(src.times).astype(float)
        a = cp.a_s[i]
        term = slab_logpdf(a[1:], a[:-1], gaps, ss_config.slab)
        value += weight * float(np.sum(term.logp))
        if grads is not None:
            grads.a_s[i][1:] += weight * term.dlogp_dcur
            grads.a_s[i][:-1] += weight * term.dlogp_dprev
        th = cp.th_s[i]
        term = slab_logpdf(th[1:], th[:-1], gaps[:, None], ss_config.slab)
        value += weight * float(np.sum(term.logp))
        if grads is not None:
            grads.th_s[i][1:] += weight * term.dlogp_dcur
            grads.th_s[i][:-1] += weight * term.dlogp_dprev
    return value


def _target_prior_terms(dataset, cp, grads, ss_config, gamma_values, mask=None):
    """Slab priors on target length-scales plus the spike-and-slab mixture on
    the target amplitudes, weighted by E[gamma].

    mask: optional boolean array over transitions (length n_m - 1) selecting
    which prior terms to include (mini-batching).
    """
    tgt = dataset.target
    if tgt.n < 2:
        return 0.0
    gaps = np.diff(tgt.times).astype(float)
    sel = np.ones(tgt.n - 1, dtype=bool) if mask is None else mask
    value = 0.0
    for j in range(dataset.m):
        th = cp.th_t[j]
        term = slab_logpdf(th[1:], th[:-1], gaps[:, None], ss_config.slab)
        w = sel[:, None].astype(float)
        value += float(np.sum(w * term.logp))
        if grads is not None:
            grads.th_t[j, 1:, :] += w * term.dlogp_dcur
            grads.th_t[j, :-1, :] += w * term.dlogp_dprev
        a = cp.a_t[j]
        eg = gamma_values[j]
        sp_term = spike_logpdf(a[1:], ss_config.nu0)
        sl_term = slab_logpdf(a[1:], a[:-1], gaps, ss_config.slab)
        ws = sel.astype(float)
        value += float(np.sum(ws * ((1.0 - eg) * sp_term.logp + eg * sl_term.logp)))
        if grads is not None:
            grads.a_t[j, 1:] += ws * ((1.0 - eg) * sp_term.dlogp_dcur
                                      + eg * sl_term.dlogp_dcur)
            grads.a_t[j, :-1] += ws * eg * sl_term.dlogp_dprev
    return value


# ---------------------------------------------------------------------------
# Objective, E-step, fitting
# ---------------------------------------------------------------------------

def _chain_to_unconstrained(params: DynamicParams, grads: _Grads, cp: _Constrained):
    """Map constrained-value gradients to the packed unconstrained vector."""
    parts = []
    for i in range(len(params.source_amp_u)):
        parts.append((grads.a_s[i] * softplus_grad(params.source_amp_u[i])).ravel())
    for i in range(len(params.source_ls_u)):
        parts.append((grads.th_s[i] * softplus_grad(params.source_ls_u[i])).ravel())
    parts.append((grads.a_t * softplus_grad(params.target_amp_u)).ravel())
    parts.append((grads.th_t * softplus_grad(params.target_ls_u)).ravel())
    dsig_s = grads.s2_s * 2.0 * cp.sig_s * softplus_grad(params.source_noise_u)
    parts.append(np.asarray(dsig_s).ravel())
    dsig_m = grads.s2_m * 2.0 * cp.sig_m * softplus_grad(params.target_noise_u)
    parts.append(np.array([dsig_m]))
    return np.concatenate(parts)


def q_objective(params: DynamicParams, gamma: GammaPosterior, dataset: Dataset,
                ss_config: SpikeSlabConfig, batch=None, weight_sources=1.0,
                with_grad=True, include_source_priors=True):
    """Expected complete log-posterior (up to constants) and its gradient
    over the packed unconstrained parameter vector."""
    cp = _Constrained(params, dataset.n_sources)
    grads = _Grads(cp) if with_grad else None
    value = _gaussian_term(dataset, cp, grads, batch=batch,
                           weight_sources=weight_sources)
    if include_source_priors:
        value += _source_prior_terms(dataset, cp, grads, ss_config,
                                     weight=weight_sources)
    mask = None
    if batch is not None and dataset.target.n >= 2:
        mask = np.zeros(dataset.target.n - 1, dtype=bool)
        idx = np.asarray(batch)
        mask[idx[idx >= 1] - 1] = True
    value += _target_prior_terms(dataset, cp, grads, ss_config,
                                 gamma.values, mask=mask)
    if not with_grad:
        return value, None
    grad = _chain_to_unconstrained(params, grads, cp)
    return value, grad


def marginal_loglik(dataset: Dataset, params: DynamicParams) -> float:
    """Gaussian marginal log-likelihood of all outputs, no priors."""
    cp = _Constrained(params, dataset.n_sources)
    return _gaussian_term(dataset, cp, None)


def e_step(params: DynamicParams, ss_config: SpikeSlabConfig,
           target_times: np.ndarray) -> GammaPosterior:
    """Posterior slab membership for every target amplitude transition."""
    if len(target_times) < 2:
        raise ValueError("E-step needs at least two target time stamps")
    a_t = params.target_amp()
    gaps = np.diff(np.asarray(target_times)).astype(float)
    log_spike = spike_logpdf(a_t[:, 1:], ss_config.nu0).logp
    log_slab = slab_logpdf(a_t[:, 1:], a_t[:, :-1], gaps[None, :],
                           ss_config.slab).logp
    eta = ss_config.eta
    if eta >= 1.0:
        return GammaPosterior(np.ones_like(log_spike))
    logit = np.log(eta) - np.log1p(-eta) + log_slab - log_spike
    values = 1.0 / (1.0 + np.exp(-np.clip(logit, -700, 700)))
    return GammaPosterior(values)


def _tie_source_grads(params: DynamicParams, grad: np.ndarray):
    """Sum per-time source gradients so tied (stationary) source parameters
    move together; operates in packed order, in place."""
    k = 0
    for a in params.source_amp_u:
        grad[k:k + a.size] = np.sum(grad[k:k + a.size])
        k += a.size
    for l in params.source_ls_u:
        g = grad[k:k + l.size].reshape(l.shape)
        grad[k:k + l.size] = np.broadcast_to(g.sum(axis=0), l.shape).ravel()
        k += l.size


def _check_finite(value, grad, where):
    if not np.isfinite(value):
        raise FloatingPointError(f"non-finite objective during {where}")
    if grad is not None and not np.all(np.isfinite(grad)):
        idx = int(np.argmin(np.isfinite(grad)))
        raise FloatingPointError(
            f"non-finite gradient entry at packed index {idx} during {where}")


def init_sources(dataset: Dataset, ss_config: SpikeSlabConfig,
                 fit_config: FitConfig, params: DynamicParams) -> DynamicParams:
    """Warm-start source parameters by ascending each source's marginal
    log-likelihood plus its parameter priors (sources are independent)."""
    out = params.copy()
    for i, src in enumerate(dataset.sources):
        sub = Dataset(sources=[], target=src)
        sub_params = DynamicParams(
            source_amp_u=[], source_ls_u=[],
            target_amp_u=out.source_amp_u[i][None, :].copy(),
            target_ls_u=out.source_ls_u[i][None, :, :].copy(),
            source_noise_u=np.zeros(0),
            target_noise_u=float(out.source_noise_u[i]),
        )
        gamma = GammaPosterior(np.ones((1, max(src.n - 1, 0))))
        vec = sub_params.pack()
        adam = AdamState(vec.size, fit_config.adam_step, fit_config.adam_beta1,
                         fit_config.adam_beta2, fit_config.adam_eps)
        include_priors = not fit_config.static_sources
        for epoch in range(fit_config.k_in):
            cur = sub_params.unpack(vec)
            value, grad = _single_output_objective(sub, cur, ss_config, gamma,
                                                   include_priors)
            _check_finite(value, grad, f"source {i} initialization")
            if fit_config.static_sources:
                _tie_single_output_grads(cur, grad)
            vec = adam.update(vec, grad)
        final = sub_params.unpack(vec)
        out.source_amp_u[i] = final.target_amp_u[0]
        out.source_ls_u[i] = final.target_ls_u[0]
        out.source_noise_u[i] = final.target_noise_u
    return out


def _single_output_objective(sub: Dataset, cur: DynamicParams,
                             ss_config: SpikeSlabConfig, gamma, include_priors):
    """Marginal log-likelihood (+ slab priors) for one output modeled through
    the target-side machinery of a source-free dataset."""
    cp = _Constrained(cur, 0)
    grads = _Grads(cp)
    value = _gaussian_term(sub, cp, grads)
    if include_priors and sub.target.n >= 2:
        gaps = np.diff(sub.target.times).astype(float)
        a = cp.a_t[0]
        term = slab_logpdf(a[1:], a[:-1], gaps, ss_config.slab)
        value += float(np.sum(term.logp))
        grads.a_t[0, 1:] += term.dlogp_dcur
        grads.a_t[0, :-1] += term.dlogp_dprev
        th = cp.th_t[0]
        term = slab_logpdf(th[1:], th[:-1], gaps[:, None], ss_config.slab)
        value += float(np.sum(term.logp))
        grads.th_t[0, 1:, :] += term.dlogp_dcur
        grads.th_t[0, :-1, :] += term.dlogp_dprev
    grad = _chain_to_unconstrained(cur, grads, cp)
    return value, grad


def _tie_single_output_grads(cur: DynamicParams, grad: np.ndarray):
    n_amp = cur.target_amp_u.size
    grad[:n_amp] = np.sum(grad[:n_amp])
    g = grad[n_amp:n_amp + cur.target_ls_u.size].reshape(cur.target_ls_u.shape)
    grad[n_amp:n_amp + cur.target_ls_u.size] = np.broadcast_to(
        g.sum(axis=(0, 1)), cur.target_ls_u.shape).ravel()


def _batch_slices(n, batches, rng):
    """Contiguous chunks of target indices, random circular offset."""
    if batches <= 1 or n <= batches:
        return [np.arange(n)]
    offset = int(rng.integers(n))
    order = np.roll(np.arange(n), offset)
    return [np.sort(chunk) for chunk in np.array_split(order, batches)]


def fit(dataset: Dataset, ss_config: SpikeSlabConfig,
        fit_config: FitConfig | None = None) -> FitResult:
    """Run the full EM loop: source warm start, then alternating E-steps and
    stochastic-ADAM M-steps over the expected complete log-posterior."""
    fit_config = fit_config or FitConfig()
    rng = np.random.default_rng(fit_config.seed)
    t0 = time.perf_counter()
    params = DynamicParams.init_random(dataset, rng)
    if fit_config.static_sources:
        # tied gradients keep equal values equal, so tie the start too
        for a in params.source_amp_u:
            a[:] = np.mean(a)
    if dataset.n_sources:
        params = init_sources(dataset, ss_config, fit_config, params)

    n_m = dataset.target.n
    gamma = GammaPosterior(np.full((dataset.m, max(n_m - 1, 0)),
                                   fit_config.gamma_init))
    vec = params.pack()
    trace = []
    for k in range(fit_config.k_out):
        if k > 0:
            gamma = e_step(params.unpack(vec), ss_config, dataset.target.times)
        adam = AdamState(vec.size, fit_config.adam_step, fit_config.adam_beta1,
                         fit_config.adam_beta2, fit_config.adam_eps)
        chunks = _batch_slices(n_m, fit_config.batches, rng)
        w = 1.0 / len(chunks)
        for epoch in range(fit_config.k_in):
            if epoch % len(chunks) == 0 and epoch > 0:
                chunks = _batch_slices(n_m, fit_config.batches, rng)
            B = chunks[epoch % len(chunks)]
            cur = params.unpack(vec)
            batch = None if len(chunks) == 1 else B
            value, grad = q_objective(cur, gamma, dataset, ss_config,
                                      batch=batch, weight_sources=w,
                                      include_source_priors=not fit_config.static_sources)
            _check_finite(value, grad, f"M-step outer iteration {k}")
            if fit_config.static_sources:
                _tie_source_grads(cur, grad)
            vec = adam.update(vec, grad)
        cur = params.unpack(vec)
        full_value, _ = q_objective(cur, gamma, dataset, ss_config,
                                    with_grad=False,
                                    include_source_priors=not fit_config.static_sources)
        trace.append(full_value)
    final = params.unpack(vec)
    if n_m >= 2:
        gamma = e_step(final, ss_config, dataset.target.times)
    return FitResult(params=final, gamma=gamma, trace=trace,
                     wallclock=time.perf_counter() - t0)
