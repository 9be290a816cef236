import numpy as np
import pytest
from scipy.integrate import quad
from scipy.stats import norm

from dynmgp.experiments import (GAP_LENGTH, GAP_WINDOWS, CaseSpec,
                                MetricReport, crps, default_ss_config,
                                gen_case1, gen_case2, generate, mae,
                                mean_crps, read_csv_dataset, remove_gaps,
                                rescale_outputs, run_benchmark, true_support,
                                write_csv_dataset)
from dynmgp.inference import FitConfig
from dynmgp.model import HardSlab, SoftSlab
from dynmgp.prediction import Prediction


def test_case_spec_shapes():
    spec = CaseSpec(case=1, k=2, seed=0)
    assert spec.m == 9
    ds = generate(spec)
    assert ds.n_sources == 8 and ds.target.n == 130
    assert all(s.n == 130 for s in ds.sources)
    assert np.array_equal(ds.target.times, np.arange(1, 131))


def test_generate_is_deterministic():
    a = generate(CaseSpec(case=1, k=1, seed=5))
    b = generate(CaseSpec(case=1, k=1, seed=5))
    c = generate(CaseSpec(case=1, k=1, seed=6))
    assert np.array_equal(a.target.values, b.target.values)
    assert not np.array_equal(a.target.values, c.target.values)


def test_gen_case_dispatch():
    with pytest.raises(ValueError):
        gen_case1(CaseSpec(case=2, k=1, seed=0))
    with pytest.raises(ValueError):
        gen_case2(CaseSpec(case=1, k=1, seed=0))
    assert gen_case2(CaseSpec(case=2, k=1, seed=0)).target.n == 130


def test_cases_differ():
    a = generate(CaseSpec(case=1, k=1, seed=3))
    b = generate(CaseSpec(case=2, k=1, seed=3))
    assert not np.allclose(a.target.values, b.target.values)


def test_true_support_case1_pattern():
    spec = CaseSpec(case=1, k=1, seed=0)
    sup = true_support(spec)
    assert sup.shape == (4, 130)
    t = np.arange(1, 131)
    assert np.array_equal(sup[0], t < 40)    # active early only
    assert np.array_equal(sup[1], t >= 40)   # takes over at 40
    assert np.array_equal(sup[2], t >= 80)   # joins at 80
    assert not sup[3].any()                  # never correlated


def test_true_support_case2_pattern():
    sup = true_support(CaseSpec(case=2, k=1, seed=0))
    assert sup.shape == (4, 130)
    assert sup[:3].any(axis=1).all()
    assert not sup[3].any()
    # replicated copies repeat the same designed pattern
    sup2 = true_support(CaseSpec(case=2, k=2, seed=0))
    assert np.array_equal(sup2[4:], sup)


def test_remove_gaps_partitions_target():
    ds = generate(CaseSpec(case=1, k=1, seed=2))
    train, held = remove_gaps(ds, np.random.default_rng(0))
    assert held.n == len(GAP_WINDOWS) * GAP_LENGTH
    assert train.target.n + held.n == ds.target.n
    merged = np.sort(np.concatenate([train.target.times, held.times]))
    assert np.array_equal(merged, ds.target.times)
    for lo, hi in GAP_WINDOWS:
        inside = (held.times >= lo) & (held.times <= hi)
        assert inside.sum() == GAP_LENGTH


def test_mae_basic_and_validation():
    assert mae([1.0, 2.0], [0.0, 4.0]) == 1.5
    with pytest.raises(ValueError):
        mae([], [])
    with pytest.raises(ValueError):
        mae([1.0], [1.0, 2.0])


def _crps_quadrature(mean, variance, y):
    sigma = np.sqrt(variance)

    def integrand(u):
        return (norm.cdf(u, loc=mean, scale=sigma) - float(u >= y)) ** 2

    lo = min(mean, y) - 12 * sigma
    hi = max(mean, y) + 12 * sigma
    a, _ = quad(integrand, lo, y, limit=200)
    b, _ = quad(integrand, y, hi, limit=200)
    return a + b


def test_crps_matches_quadrature(rng):
    for _ in range(25):
        m = rng.normal()
        v = rng.uniform(0.05, 4.0)
        y = rng.normal()
        assert crps(m, v, y) == pytest.approx(_crps_quadrature(m, v, y),
                                              abs=1e-7)


def test_crps_degenerate_variance():
    assert crps(1.0, 0.0, 3.0) == 2.0


def test_mean_crps_averages():
    preds = [Prediction(0.0, 1.0, 0), Prediction(1.0, 1.0, 0)]
    got = mean_crps(preds, [0.0, 1.0])
    assert got == pytest.approx(crps(0.0, 1.0, 0.0), rel=1e-12)


def test_default_ss_config_kinds():
    assert isinstance(default_ss_config(1).slab, HardSlab)
    assert isinstance(default_ss_config(2).slab, SoftSlab)


def test_rescale_outputs_bounds():
    ds = generate(CaseSpec(case=1, k=1, seed=7))
    scaled = rescale_outputs(ds)
    for s in scaled.sources + [scaled.target]:
        assert np.max(np.abs(s.values)) == pytest.approx(2.0, rel=1e-12)


def test_csv_round_trip(tmp_path):
    ds = generate(CaseSpec(case=1, k=1, seed=9))
    path = tmp_path / "data.csv"
    write_csv_dataset(ds, path)
    back = read_csv_dataset(path)
    assert back.n_sources == ds.n_sources
    assert np.array_equal(back.target.times, ds.target.times)
    assert np.allclose(back.target.values, ds.target.values)
    assert np.allclose(back.sources[2].inputs, ds.sources[2].inputs)
    explicit = read_csv_dataset(path, target_id=0)
    assert explicit.target.n == ds.sources[0].n


def test_metric_report_aggregates():
    r = MetricReport(method="GP", mae_values=[1.0, 3.0],
                     crps_values=[0.5, 1.5])
    assert r.mae_mean == 2.0 and r.mae_std == 1.0
    assert r.crps_mean == 1.0
    empty = MetricReport(method="GP")
    assert np.isnan(empty.mae_mean)


def test_run_benchmark_single_gp_replication():
    spec = CaseSpec(case=1, k=1, seed=0)
    reports = run_benchmark(spec, methods=("GP",), replications=1)
    r = reports["GP"]
    assert r.failures == 0 and len(r.mae_values) == 1
    assert 0.0 < r.mae_mean < 3.0
    assert r.fit_seconds[0] > 0
