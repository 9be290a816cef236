import csv

import numpy as np
import yaml

from dynmgp.cli import load_fit, main, save_fit
from dynmgp.experiments import read_csv_dataset
from dynmgp.inference import FitConfig, fit
from dynmgp.model import HardSlab, SoftSlab, SpikeSlabConfig
from conftest import make_dataset


def _write_yaml(path, doc):
    with open(path, "w") as fh:
        yaml.safe_dump(doc, fh)


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_simulate_outputs(tmp_path):
    cfg = tmp_path / "sim.yaml"
    _write_yaml(cfg, {"case": 1, "k": 1, "noise": 0.3})
    out = tmp_path / "out"
    rc = main(["simulate", "--config", str(cfg), "--seed", "3",
               "--out", str(out)])
    assert rc == 0
    ds = read_csv_dataset(out / "dataset.csv")
    assert ds.n_sources == 4
    assert ds.target.n == 100          # 130 minus three gaps of 10
    gaps = _rows(out / "gaps.csv")
    assert len(gaps) == 30
    resolved = yaml.safe_load((out / "resolved_config.yaml").read_text())
    assert resolved["seed"] == 3 and resolved["case"] == 1


def test_simulate_seed_changes_gaps(tmp_path):
    cfg = tmp_path / "sim.yaml"
    _write_yaml(cfg, {"case": 1})
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["simulate", "--config", str(cfg), "--seed", "1",
                 "--out", str(a)]) == 0
    assert main(["simulate", "--config", str(cfg), "--seed", "2",
                 "--out", str(b)]) == 0
    ta = [r["t"] for r in _rows(a / "gaps.csv")]
    tb = [r["t"] for r in _rows(b / "gaps.csv")]
    assert ta != tb


def test_unknown_config_key_is_rejected(tmp_path, capsys):
    cfg = tmp_path / "sim.yaml"
    _write_yaml(cfg, {"case": 1, "bogus": 7})
    rc = main(["simulate", "--config", str(cfg), "--out", str(tmp_path)])
    assert rc == 1
    assert "bogus" in capsys.readouterr().err


def test_fit_predict_round_trip(tmp_path):
    sim_cfg = tmp_path / "sim.yaml"
    _write_yaml(sim_cfg, {"case": 1, "k": 1})
    sim_out = tmp_path / "sim"
    assert main(["simulate", "--config", str(sim_cfg), "--seed", "0",
                 "--out", str(sim_out)]) == 0

    fit_cfg = tmp_path / "fit.yaml"
    _write_yaml(fit_cfg, {
        "data": str(sim_out / "dataset.csv"),
        "spike_slab": {"nu0": 0.02, "slab": {"kind": "hard", "nu1": 0.1}},
        "fit": {"k_out": 1, "k_in": 10, "batches": 1},
    })
    fit_out = tmp_path / "fit"
    assert main(["fit", "--config", str(fit_cfg), "--seed", "0",
                 "--out", str(fit_out)]) == 0
    gamma_rows = _rows(fit_out / "gamma.csv")
    assert len(gamma_rows) == 5 * 99   # m outputs x (n_target - 1) stamps

    queries = tmp_path / "queries.csv"
    queries.write_text("t,x1\n15,15.0\n135,135.0\n")
    pred_cfg = tmp_path / "pred.yaml"
    _write_yaml(pred_cfg, {
        "data": str(sim_out / "dataset.csv"),
        "model": str(fit_out / "params.json"),
        "queries": str(queries),
    })
    pred_out = tmp_path / "pred"
    assert main(["predict", "--config", str(pred_cfg),
                 "--out", str(pred_out)]) == 0
    rows = _rows(pred_out / "predictions.csv")
    assert len(rows) == 2
    assert all(np.isfinite(float(r["mean"])) for r in rows)
    assert all(float(r["variance"]) >= 0 for r in rows)


def test_parameter_archive_round_trip(tmp_path):
    ds = make_dataset(n_sources=2, n=8, seed=1)
    ss = SpikeSlabConfig(nu0=0.05, slab=SoftSlab(0.2, 0.85), eta=0.4)
    res = fit(ds, ss, FitConfig(k_out=1, k_in=10, batches=1))
    path = tmp_path / "params.json"
    save_fit(res, ss, path)
    back, ss_back = load_fit(path)
    assert np.array_equal(back.params.pack(), res.params.pack())
    assert np.array_equal(back.gamma.values, res.gamma.values)
    assert ss_back == ss


def test_load_fit_rejects_foreign_json(tmp_path):
    path = tmp_path / "other.json"
    path.write_text('{"hello": 1}')
    import pytest
    with pytest.raises(ValueError, match="archive"):
        load_fit(path)


def test_tune_subcommand(tmp_path):
    sim_cfg = tmp_path / "sim.yaml"
    _write_yaml(sim_cfg, {"case": 1})
    sim_out = tmp_path / "sim"
    assert main(["simulate", "--config", str(sim_cfg), "--seed", "1",
                 "--out", str(sim_out)]) == 0
    tune_cfg = tmp_path / "tune.yaml"
    _write_yaml(tune_cfg, {
        "data": str(sim_out / "dataset.csv"),
        "grid": {"pairs": [[0.02, 0.1], [0.01, 0.05]]},
        "fit": {"k_out": 1, "k_in": 5, "batches": 1},
    })
    tune_out = tmp_path / "tuned"
    assert main(["tune", "--config", str(tune_cfg), "--seed", "0",
                 "--out", str(tune_out)]) == 0
    table = _rows(tune_out / "criterion_table.csv")
    assert len(table) == 2
    assert (tune_out / "params.json").exists()


def test_missing_required_key_fails(tmp_path, capsys):
    cfg = tmp_path / "fit.yaml"
    _write_yaml(cfg, {"fit": {"k_in": 5}})
    assert main(["fit", "--config", str(cfg), "--out", str(tmp_path)]) == 1
    assert "data" in capsys.readouterr().err


def test_floats_round_trip_through_csv(tmp_path):
    sim_cfg = tmp_path / "sim.yaml"
    _write_yaml(sim_cfg, {"case": 1})
    out = tmp_path / "out"
    assert main(["simulate", "--config", str(sim_cfg), "--seed", "5",
                 "--out", str(out)]) == 0
    from dynmgp.experiments import CaseSpec, generate
    full = generate(CaseSpec(case=1, k=1, seed=5))
    ds = read_csv_dataset(out / "dataset.csv")
    # written with 17 significant digits: values survive exactly
    src_full = full.sources[0].values
    src_back = ds.sources[0].values
    assert np.array_equal(src_back, src_full)
