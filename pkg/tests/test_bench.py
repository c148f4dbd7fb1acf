import csv
import json
from dataclasses import replace

import numpy as np
import pytest

from saas import bench
from saas.data import DataConfig, build_dataset, build_split, corrupt_labels
from saas.saas_core import Phase2Config, SaasConfig, cumulative_loss
from saas.seeding import derive_seed

CFG = SaasConfig(arch=[2, 8, 2], outer_epochs=2, inner_epochs=1, batch_u=20, batch_l=6,
                 phase2=Phase2Config(0.1, halve_after_epochs=2, lr_stop=0.05), master_seed=3)
DATA = DataConfig(n=200, n_labeled=6, n_unlabeled=40, n_validation=20)


def test_corruption_rows_and_summary():
    fr = [0.0, 0.5, 1.0]
    res = bench.corruption_speed_experiment(CFG, DATA, fr, n_seeds=2, epochs_budget=3)
    assert len(res.rows) == 3 * 2 * 3
    for f, mean_lt, std_lt in res.summary:
        per_seed = [np.mean([r[3] for r in res.rows if r[0] == f and r[1] == s]) for s in range(2)]
        assert abs(mean_lt - np.mean(per_seed)) <= 1e-9
        assert abs(std_lt - np.std(per_seed, ddof=1)) <= 1e-9


def test_clean_run_matches_direct_curve():
    res = bench.corruption_speed_experiment(CFG, DATA, [0.0], n_seeds=1, epochs_budget=2)
    seed = derive_seed(CFG.master_seed, "corruption-speed", 0)
    ds = build_dataset(DATA, seed)
    curve = bench.supervised_curve(ds.X, ds.y, ds.K, CFG.arch, derive_seed(seed, "train"), 2,
                                   0.1, 0.0, CFG.batch_u)
    assert [r[3] for r in res.rows] == bench.epoch_means(curve)
    assert res.summary[0][1] == pytest.approx(cumulative_loss(curve), abs=1e-12)


def test_clean_labels_train_faster_than_random():
    ds = build_dataset(replace(DATA, n=400), 1)
    noisy = corrupt_labels(ds.y, 1.0, 2, seed=2, mode="uniform")
    clean = bench.supervised_curve(ds.X, ds.y, 2, [2, 16, 2], 5, 5)
    rand = bench.supervised_curve(ds.X, noisy, 2, [2, 16, 2], 5, 5)
    assert cumulative_loss(clean) < cumulative_loss(rand)


def test_outer_epoch_zero_is_chance():
    data = replace(DATA, n=1000, n_unlabeled=600)
    res = bench.outer_epoch_speed_experiment(CFG, data, [0], probe_epochs=2, n_seeds=1)
    assert abs(res.summary[0][3] - 0.5) <= 0.05
    assert len(res.rows) == 2
    assert res.artifacts["pseudo_labels_M0_seed0"].shape == (600, 1)


def test_outer_epoch_deterministic():
    a = bench.outer_epoch_speed_experiment(CFG, DATA, [1, 2], probe_epochs=2, n_seeds=1)
    b = bench.outer_epoch_speed_experiment(CFG, DATA, [2, 1], probe_epochs=2, n_seeds=1)
    assert a.rows == b.rows and a.summary == b.summary


def test_sweep_rows_and_empty_pool():
    res = bench.unlabeled_sweep_experiment(CFG, DATA, [0, 20, 40], n_seeds=2)
    assert len(res.rows) == 6
    zero = [r for r in res.rows if r[0] == 0]
    assert all(np.isnan(r[3]) for r in zero)
    for c, mean_acc, _, _ in res.summary:
        assert mean_acc == pytest.approx(np.mean([1 - r[2] for r in res.rows if r[0] == c]))


def test_ssl_schema_and_artifacts():
    res = bench.run_ssl(CFG, DATA, n_seeds=2)
    assert [r[1] for r in res.rows[:3]] == list(bench.SSL_METRICS)
    assert len(res.rows) == 6
    for s in range(2):
        P = res.artifacts[f"posterior_seed{s}"]
        split = build_split(DATA, derive_seed(CFG.master_seed, "saas", s))
        err = np.mean(P.argmax(axis=1) != split.unlabeled_true_y)
        row = [r for r in res.rows if r[0] == s and r[1] == "saas_unlabeled_error"][0]
        assert row[2] == pytest.approx(err)
    assert len(res.metadata["phase1"]) == 2


def test_baseline_matches_ssl_baseline():
    ssl = bench.run_ssl(CFG, DATA, n_seeds=1)
    base = bench.baseline_experiment(CFG, DATA, n_seeds=1)
    assert base.rows[0][2] == ssl.rows[0][2]


def test_jobs_do_not_change_results():
    a = bench.corruption_speed_experiment(CFG, DATA, [0.0, 1.0], n_seeds=2, epochs_budget=2, jobs=1)
    b = bench.corruption_speed_experiment(CFG, DATA, [0.0, 1.0], n_seeds=2, epochs_budget=2, jobs=2)
    assert a.rows == b.rows and a.summary == b.summary


def test_write_result(tmp_path):
    res = bench.run_ssl(CFG, DATA, n_seeds=1)
    paths = bench.write_result(res, tmp_path, {"note": "x"})
    names = sorted(p.name for p in paths)
    assert names == ["saas.csv", "saas.json", "saas_posterior_seed0.csv", "saas_summary.csv"]
    with open(tmp_path / "saas.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["seed", "metric", "value"]
    assert float(rows[1][2]) == res.rows[0][2]  # .17g round-trips
    meta = json.loads((tmp_path / "saas.json").read_text())
    assert meta["note"] == "x" and meta["kind"] == "saas" and "wall_time" not in meta
    assert not list(tmp_path.glob(".*tmp"))


def test_csv_formatting():
    text = bench.to_csv(["a", "b", "c"], [(1, 0.1, True)])
    assert text == "a,b,c\n1,0.10000000000000001,true\n"
