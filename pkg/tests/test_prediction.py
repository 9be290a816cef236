import numpy as np
import pytest

from dynmgp import kernels
from dynmgp.covariance import JITTER_REL
from dynmgp.inference import FitConfig, fit
from dynmgp.model import (GammaPosterior, HardSlab, SoftSlab, SpikeSlabConfig,
                          softplus, softplus_inv)
from dynmgp.prediction import (Predictor, forecast_params, predict,
                               recover_params)
from conftest import make_dataset, random_params

HARD = SpikeSlabConfig(nu0=0.02, slab=HardSlab(0.1), eta=0.5)
SOFT = SpikeSlabConfig(nu0=0.02, slab=SoftSlab(0.1, 0.9), eta=0.5)


def _fit_result(ds, seed=0):
    from dynmgp.inference import FitResult
    p = random_params(ds, seed=seed)
    g = np.random.default_rng(seed).uniform(0.0, 1.0,
                                            (ds.m, max(ds.target.n - 1, 1)))
    return FitResult(params=p, gamma=GammaPosterior(g))


def _dense_oracle(ds, params, x_star, alpha_star, theta_star):
    """Conditional of one extra target point under the joint Gaussian,
    with the same per-block jitter the predictor applies."""
    S = ds.n_sources
    a_s = [params.source_amp(i) for i in range(S)]
    th_s = [params.source_ls(i) for i in range(S)]
    a_t, th_t = params.target_amp(), params.target_ls()
    s2_s, s2_m = params.source_noise_var(), params.target_noise_var()
    X = np.atleast_2d(np.asarray(x_star, dtype=float))
    q = np.full(1, 0.0)

    blocks, y = [], []
    for i in range(S):
        src = ds.sources[i]
        Kii = kernels.pairwise_cov(src.inputs, src.inputs, a_s[i], th_s[i],
                                   a_s[i], th_s[i])
        Kii[np.diag_indices_from(Kii)] += s2_s[i]
        Kii[np.diag_indices_from(Kii)] += JITTER_REL * np.mean(np.diag(Kii))
        blocks.append(Kii)
        y.append(src.values)
    tgt = ds.target
    Kmm = np.zeros((tgt.n, tgt.n))
    for j in range(ds.m):
        Kmm += kernels.pairwise_cov(tgt.inputs, tgt.inputs, a_t[j], th_t[j],
                                    a_t[j], th_t[j])
    Kmm[np.diag_indices_from(Kmm)] += s2_m
    jit_m = JITTER_REL * float(np.mean(np.diag(Kmm)))
    Kmm[np.diag_indices_from(Kmm)] += jit_m
    blocks.append(Kmm)
    y.append(tgt.values)

    ns = [b.shape[0] for b in blocks]
    N = sum(ns)
    K = np.zeros((N + 1, N + 1))
    off = 0
    offs = []
    for b in blocks:
        K[off:off + b.shape[0], off:off + b.shape[0]] = b
        offs.append(off)
        off += b.shape[0]
    tgt_off = offs[-1]
    for i in range(S):
        src = ds.sources[i]
        Kim = kernels.pairwise_cov(src.inputs, tgt.inputs, a_s[i], th_s[i],
                                   a_t[i], th_t[i])
        K[offs[i]:offs[i] + src.n, tgt_off:tgt_off + tgt.n] = Kim
        K[tgt_off:tgt_off + tgt.n, offs[i]:offs[i] + src.n] = Kim.T

    a_rep = [np.atleast_1d(alpha_star[j]) for j in range(ds.m)]
    th_rep = [np.atleast_2d(theta_star[j]) for j in range(ds.m)]
    for i in range(S):
        src = ds.sources[i]
        if alpha_star[i] <= 0:
            continue
        k_is = kernels.pairwise_cov(src.inputs, X, a_s[i], th_s[i],
                                    a_rep[i], th_rep[i])
        K[offs[i]:offs[i] + src.n, N] = k_is[:, 0]
        K[N, offs[i]:offs[i] + src.n] = k_is[:, 0]
    k_ms = np.zeros(tgt.n)
    for j in range(ds.m):
        if alpha_star[j] <= 0:
            continue
        k_ms += kernels.pairwise_cov(tgt.inputs, X, a_t[j], th_t[j],
                                     a_rep[j], th_rep[j])[:, 0]
    K[tgt_off:tgt_off + tgt.n, N] = k_ms
    K[N, tgt_off:tgt_off + tgt.n] = k_ms
    active = np.asarray(alpha_star) > 0
    K[N, N] = (s2_m + jit_m
               + float(np.sum(np.asarray(alpha_star)[active] ** 2))
               * 2.0 ** (-0.5 * ds.d))

    yv = np.concatenate(y)
    Koo = K[:N, :N]
    ko = K[:N, N]
    sol = np.linalg.solve(Koo, ko)
    mean = float(sol @ yv)
    var = float(K[N, N] - ko @ sol)
    return mean, var


@pytest.mark.parametrize("seed,n_sources,n,d", [
    (0, 2, 7, 1), (1, 3, 8, 2), (2, 1, 12, 1), (3, 0, 10, 1),
])
def test_posterior_matches_dense_conditional(seed, n_sources, n, d):
    ds = make_dataset(n_sources=n_sources, n=n, d=d, seed=seed)
    fr = _fit_result(ds, seed=seed)
    pred = Predictor(fr, ds, HARD)
    rng = np.random.default_rng(seed + 50)
    for _ in range(3):
        i = int(rng.integers(ds.target.n))
        t_star = int(ds.target.times[i])
        alpha_star, theta_star = pred.params_at(t_star)
        x_star = rng.uniform(0, 5, d)
        got = pred.predict_at(x_star, t_star, alpha_star, theta_star)
        want_mean, want_var = _dense_oracle(ds, fr.params, x_star,
                                            alpha_star, theta_star)
        assert got.mean == pytest.approx(want_mean, abs=1e-8)
        assert got.variance == pytest.approx(want_var, abs=1e-8)


def test_predict_many_matches_predict_at():
    ds = make_dataset(n_sources=2, n=9, seed=4)
    fr = _fit_result(ds, seed=4)
    pred = Predictor(fr, ds, HARD)
    t_star = int(ds.target.times[3])
    a, th = pred.params_at(t_star)
    X = np.random.default_rng(1).uniform(0, 5, (5, 1))
    means, variances = pred.predict_many(X, t_star, a, th)
    for k in range(5):
        p = pred.predict_at(X[k], t_star, a, th)
        assert p.mean == pytest.approx(means[k], rel=1e-12)
        assert p.variance == pytest.approx(variances[k], rel=1e-12)


def test_forecast_hard_slab_copies_last_column():
    ds = make_dataset(n_sources=2, n=6, seed=5)
    fr = _fit_result(ds, seed=5)
    a, th = forecast_params(fr, ds, int(ds.target.times[-1]) + 3, HARD)
    a_last = fr.params.target_amp()[:, -1]
    keep = fr.gamma.values[:, -1] >= 0.5
    assert np.allclose(a[keep], a_last[keep])
    assert np.all(a[~keep] == 0.0)
    assert np.allclose(th, fr.params.target_ls()[:, -1, :])


def test_forecast_soft_slab_decays():
    ds = make_dataset(n_sources=1, n=6, seed=6)
    fr = _fit_result(ds, seed=6)
    fr.gamma.values[:] = 1.0
    t_n = int(ds.target.times[-1])
    a1, _ = forecast_params(fr, ds, t_n + 1, SOFT)
    a3, _ = forecast_params(fr, ds, t_n + 3, SOFT)
    a_last = fr.params.target_amp()[:, -1]
    assert np.allclose(a1, 0.9 * a_last)
    assert np.allclose(a3, 0.9 ** 3 * a_last)


def test_forecast_rejects_interior_stamp():
    ds = make_dataset(n_sources=1, n=6, seed=7)
    fr = _fit_result(ds, seed=7)
    with pytest.raises(ValueError, match="exceed"):
        forecast_params(fr, ds, int(ds.target.times[0]), HARD)


def _gapped_dataset(seed=8):
    """Target observed at stamps 1..4 and 8..11 (gap at 5, 6, 7)."""
    from dynmgp.model import Dataset, OutputSeries
    rng = np.random.default_rng(seed)
    times = np.array([1, 2, 3, 4, 8, 9, 10, 11])
    src = OutputSeries(0, np.arange(1, 12),
                       np.arange(11.0)[:, None], rng.normal(size=11))
    tgt = OutputSeries(1, times, times.astype(float)[:, None],
                       rng.normal(size=8))
    return Dataset(sources=[src], target=tgt)


def test_recover_hard_slab_takes_nearest_with_earlier_tie_break():
    ds = _gapped_dataset()
    fr = _fit_result(ds, seed=8)
    fr.gamma.values[:] = 1.0
    a_t = fr.params.target_amp()
    a5, _ = recover_params(fr, ds, 5, HARD)
    assert np.allclose(a5, a_t[:, 3])      # stamp 4 is nearest
    a7, _ = recover_params(fr, ds, 7, HARD)
    assert np.allclose(a7, a_t[:, 4])      # stamp 8 is nearest
    a6, _ = recover_params(fr, ds, 6, HARD)
    assert np.allclose(a6, a_t[:, 3])      # tie: earlier stamp wins


def test_recover_soft_slab_bridge_is_symmetric_at_midpoint():
    ds = _gapped_dataset()
    fr = _fit_result(ds, seed=9)
    fr.gamma.values[:] = 1.0
    a_t = fr.params.target_amp()
    a6, _ = recover_params(fr, ds, 6, SOFT)
    rho, d1, d2 = 0.9, 2.0, 2.0
    w = rho ** d1 * (1 - rho ** (2 * d2)) / (1 - rho ** (2 * (d1 + d2)))
    assert np.allclose(a6, w * (a_t[:, 3] + a_t[:, 4]))


def test_recover_rejects_exterior_stamp():
    ds = _gapped_dataset()
    fr = _fit_result(ds, seed=10)
    with pytest.raises(ValueError, match="neighbors"):
        recover_params(fr, ds, 0, HARD)


def test_unconstrained_interpolation_space():
    ds = _gapped_dataset()
    fr = _fit_result(ds, seed=11)
    fr.gamma.values[:] = 1.0
    a_c, _ = recover_params(fr, ds, 6, SOFT, space="constrained")
    a_u, _ = recover_params(fr, ds, 6, SOFT, space="unconstrained")
    # interpolating pre-softplus then mapping differs from the constrained path
    assert not np.allclose(a_c, a_u)
    with pytest.raises(ValueError, match="space"):
        recover_params(fr, ds, 6, SOFT, space="banana")


def test_module_level_predict_smoke():
    ds = make_dataset(n_sources=1, n=8, seed=12)
    res = fit(ds, HARD, FitConfig(k_out=1, k_in=20, batches=1))
    p = predict(res, ds, HARD, int(ds.target.times[2]), ds.target.inputs[2])
    assert np.isfinite(p.mean) and p.variance >= 0.0


def test_noiseless_interpolation_recovers_training_values():
    """With amplitudes fixed and tiny noise, prediction at a training input
    reproduces the observation."""
    from dynmgp.model import Dataset, DynamicParams, OutputSeries
    from dynmgp.inference import FitResult
    n = 12
    x = np.linspace(0, 4, n)[:, None]
    y = np.sin(x[:, 0])
    tgt = OutputSeries(0, np.arange(1, n + 1), x, y)
    ds = Dataset(sources=[], target=tgt)
    params = DynamicParams(
        source_amp_u=[], source_ls_u=[],
        target_amp_u=np.full((1, n), softplus_inv(1.0)),
        target_ls_u=np.full((1, n, 1), softplus_inv(0.5)),
        source_noise_u=np.zeros(0),
        target_noise_u=softplus_inv(1e-3),
    )
    fr = FitResult(params=params, gamma=GammaPosterior(np.ones((1, n - 1))))
    pred = Predictor(fr, ds, HARD)
    p = pred.predict(3, x[2])
    assert p.mean == pytest.approx(y[2], abs=1e-3)
    assert p.variance < 1e-4
