import json
import math

import numpy as np
import pytest

from exactqueue.distributions import drift_constant_at, model_from_config
from exactqueue.errors import InsufficientData, Unstable
from exactqueue.harness.cli import main, mmc
from exactqueue.harness.experiment import (
    PILOT_OFFSET,
    ExperimentConfig,
    read_records,
    run_experiment,
    tune_drift_constant,
    write_plot_csv,
)
from exactqueue.harness.oracles import (
    batch_means_ci,
    chi_square_pmf,
    chi_square_two_sample,
    coupled_forward,
    erlang_pmf,
    forward_fifo_q,
    gof_test,
    intervals_overlap,
    ks_mixed,
    mean_ci,
    merge_bins,
    mm1_delay_cdf,
)
from exactqueue import Exponential


def test_erlang_pmf_mm2():
    pmf, tail = erlang_pmf(3.0, 2.0, 2)
    assert pmf[0] == pytest.approx(1 / 7, rel=1e-12)
    assert pmf[1] == pytest.approx(1.5 / 7, rel=1e-12)
    assert pmf[3] / pmf[2] == pytest.approx(0.75, rel=1e-12)
    assert tail < 1e-12
    assert pmf.sum() + tail == pytest.approx(1.0, abs=1e-14)


def test_erlang_pmf_single_server_is_geometric():
    pmf, tail = erlang_pmf(3.0, 5.0, 1, K=30)
    k = np.arange(31)
    assert np.allclose(pmf, 0.4 * 0.6**k, rtol=1e-12)
    assert tail == pytest.approx(0.6**31, rel=1e-10)


def test_erlang_pmf_short_table():
    pmf, tail = erlang_pmf(10.0, 2.0, 10, K=3)
    full, _ = erlang_pmf(10.0, 2.0, 10)
    assert np.allclose(pmf, full[:4])
    assert tail == pytest.approx(1 - full[:4].sum(), rel=1e-10)


def test_merge_bins_from_the_right():
    obs, exp = merge_bins(np.array([50.0, 30, 3, 1, 1]), np.array([48.0, 32, 4, 2, 1]))
    assert exp.tolist() == [48.0, 32.0, 7.0]
    assert obs.tolist() == [50.0, 30.0, 5.0]


def test_chi_square_holds_its_level():
    pmf, tail = erlang_pmf(3.0, 2.0, 2)
    rng = np.random.default_rng(80)
    p = np.array([chi_square_pmf(rng.choice(pmf.size, 2000, p=pmf / pmf.sum()), pmf, tail)[1] for _ in range(400)])
    rate = (p < 0.01).mean()
    assert rate < 0.01 + 4 * math.sqrt(0.01 * 0.99 / 400)


def test_chi_square_detects_wrong_load():
    pmf, tail = erlang_pmf(3.0, 2.0, 2)
    wrong, _ = erlang_pmf(3.3, 2.0, 2)
    x = np.random.default_rng(81).choice(wrong.size, 5000, p=wrong / wrong.sum())
    assert chi_square_pmf(x, pmf, tail)[1] < 1e-6


def test_chi_square_needs_data():
    with pytest.raises(InsufficientData):
        chi_square_pmf([0, 1, 2], [0.5, 0.5])


def test_two_sample_identical_samples():
    x = np.random.default_rng(82).integers(0, 6, 1000)
    assert chi_square_two_sample(x, x) == (0.0, 1.0)
    assert gof_test(x, x, "two-sample")[1] == 1.0


def test_ks_mixed_level_and_power():
    rng = np.random.default_rng(83)
    cdf = mm1_delay_cdf(3.0, 5.0)
    ps = []
    for _ in range(200):
        n = 2000
        busy = rng.random(n) < 0.6
        x = np.where(busy, rng.exponential(1 / 2.0, n), 0.0)
        ps.append(ks_mixed(x, cdf, rng)[1])
    assert (np.array(ps) < 0.01).mean() < 0.01 + 4 * math.sqrt(0.01 * 0.99 / 200)
    x = np.where(rng.random(5000) < 0.6, rng.exponential(1 / 1.8, 5000), 0.0)
    assert ks_mixed(x, cdf, rng)[1] < 1e-4


def test_gof_dispatch():
    with pytest.raises(ValueError):
        gof_test([1, 2], None, "other")
    x = np.random.default_rng(84).uniform(size=500)
    assert gof_test(x, lambda y: np.clip(y, 0, 1), "KS")[1] > 0.01


def test_mean_ci_and_batch_means():
    with pytest.raises(InsufficientData):
        mean_ci(np.ones(10))
    m, h = mean_ci(np.arange(100))
    assert m == 49.5 and h > 0
    x = np.random.default_rng(85).normal(size=10**5)
    m, h = batch_means_ci(x)
    assert abs(m) < 4 / math.sqrt(1e5) and h < 0.05
    assert intervals_overlap((0.0, 1.0), (1.5, 0.6))
    assert not intervals_overlap((0.0, 1.0), (2.0, 0.5))


def test_forward_fifo_mean_matches_erlang():
    pmf, _ = erlang_pmf(3.0, 2.0, 2)
    q = forward_fifo_q(Exponential(3.0), Exponential(2.0), 2, 2 * 10**6, np.random.default_rng(86))
    m, h = batch_means_ci(q)
    assert abs(m - (np.arange(pmf.size) * pmf).sum()) < h * 2


@pytest.mark.parametrize("c", [2, 3, 5])
def test_coupled_forward_domination(c):
    rng = np.random.default_rng(87 + c)
    n = 5000
    T = rng.uniform(0.05, 0.45, n)
    S = rng.exponential(0.2 * c, n)
    U = rng.integers(0, c, n)
    qf, qr, vf, vr = coupled_forward(T, S, U, c)
    assert np.all(qf <= qr)
    assert np.all(vf <= vr + 1e-9)


def _cfg(tmp_path, name, **kw):
    base = dict(model=mmc(3.0, 2.0, 2), algorithm="empty-ra", n=60, seed=5, out=str(tmp_path / name))
    base.update(kw)
    return ExperimentConfig(**base)


def test_records_are_byte_identical_across_runs_and_workers(tmp_path):
    run_experiment(_cfg(tmp_path, "a.jsonl"))
    run_experiment(_cfg(tmp_path, "b.jsonl"))
    run_experiment(_cfg(tmp_path, "c.jsonl", workers=2))
    a = (tmp_path / "a.jsonl").read_bytes()
    assert a == (tmp_path / "b.jsonl").read_bytes() == (tmp_path / "c.jsonl").read_bytes()
    recs = read_records(tmp_path / "a.jsonl")
    assert [r["replication"] for r in recs] == list(range(60))
    assert all(r["runtime_ms"] is None for r in recs)


def test_sandwich_and_harris_records(tmp_path):
    rep = run_experiment(_cfg(tmp_path, "s.jsonl", algorithm="sandwich", n=40))
    assert rep.summary["errors"] == 0
    assert all(r["coalesced"] for r in rep.records)
    never = {"arrival": {"family": "uniform", "params": [0.5, 0.9]},
             "service": {"family": "shifted-exponential", "params": [1.0, 5.0]}, "servers": 2}
    rep = run_experiment(_cfg(tmp_path, "h.jsonl", algorithm="harris", model=never, n=5))
    assert rep.summary["errors"] == 0
    # empty-RA does not apply to this model: every replication becomes an error record
    rep = run_experiment(_cfg(tmp_path, "e.jsonl", model=never, n=3))
    assert rep.summary["errors"] == 3
    assert rep.records[0]["error"] == "NotApplicable"


def test_budget_errors_are_recorded(tmp_path):
    rep = run_experiment(_cfg(tmp_path, "b.jsonl", model=mmc(9.0, 5.0, 2), budget=5, n=5))
    assert rep.summary["errors"] >= 1
    assert {r["error"] for r in rep.records if "error" in r} == {"BudgetExceeded"}


def test_timing_flag(tmp_path):
    rep = run_experiment(_cfg(tmp_path, "t.jsonl", n=3, timing=True))
    assert all(r["runtime_ms"] > 0 for r in rep.records)


def test_ci_shrinks_with_sample_size():
    h1 = run_experiment(ExperimentConfig(mmc(3.0, 2.0, 2), n=1000, seed=6)).summary["Q0"][1]
    h2 = run_experiment(ExperimentConfig(mmc(3.0, 2.0, 2), n=2000, seed=7)).summary["Q0"][1]
    assert h2 / h1 == pytest.approx(1 / math.sqrt(2), rel=0.15)


def test_config_validation():
    with pytest.raises(ValueError):
        ExperimentConfig(mmc(3.0, 2.0, 2), algorithm="other")
    with pytest.raises(ValueError):
        ExperimentConfig(mmc(3.0, 2.0, 2), n=0)


def test_tune_drift_constant_uses_disjoint_pilot_runs():
    cfg = ExperimentConfig(mmc(5.0, 5.0, 2), "sandwich", n=10, seed=8)
    a, costs = tune_drift_constant(cfg, fractions=(0.2, 0.5), pilot=30)
    assert set(costs) == {0.2, 0.5}
    best = min(costs, key=costs.get)
    assert a == pytest.approx(drift_constant_at(model_from_config(cfg.model), best))
    assert cfg.first_replication == 0 and PILOT_OFFSET > 10**9


def test_plot_csv(tmp_path):
    path = tmp_path / "plot.csv"
    write_plot_csv([0, 1, 1, 4], [0.5, 0.25, 0.25], path)
    lines = path.read_text().splitlines()
    assert lines[0] == "bin,empirical_freq,analytic_pmf"
    assert len(lines) == 6
    assert lines[2].startswith("1,0.5,0.25")


def _model_file(tmp_path, cfg):
    path = tmp_path / "model.json"
    path.write_text(json.dumps(cfg))
    return str(path)


def test_cli_sample_and_validate(tmp_path, capsys):
    model = _model_file(tmp_path, mmc(3.0, 2.0, 2))
    out = tmp_path / "s.jsonl"
    assert main(["sample", "--model", model, "--n", "50", "--seed", "1", "--out", str(out)]) == 0
    assert len(read_records(out)) == 50
    plot = tmp_path / "plot.csv"
    code = main(["validate", "--model", model, "--n", "400", "--seed", "2", "--plot-csv", str(plot)])
    text = capsys.readouterr().out
    assert "chi-square" in text and code in (0, 1)
    assert plot.exists()
    uni = _model_file(tmp_path, {"arrival": {"family": "uniform", "params": [0.2, 0.9]},
                                 "service": {"family": "exponential", "params": [2.0]}, "servers": 2})
    assert main(["validate", "--model", uni, "--n", "10"]) == 2


def test_cli_validate_brute_force(tmp_path, capsys):
    model = _model_file(tmp_path, {"arrival": {"family": "uniform", "params": [0.2, 0.9]},
                                   "service": {"family": "exponential", "params": [2.0]}, "servers": 2})
    code = main(["validate", "--model", model, "--oracle", "brute-force", "--oracle-arrivals", "200000",
                 "--n", "300", "--seed", "3"])
    assert code in (0, 1)
    assert "p=" in capsys.readouterr().out


def test_cli_bench(tmp_path, capsys):
    assert main(["bench", "--fig3", "--n", "30", "--out-dir", str(tmp_path)]) == 0
    assert (tmp_path / "fig3.csv").read_text().splitlines()[0] == \
        "lambda,rho,algorithm,mean_backward_arrivals,ci_halfwidth,n"
    assert main(["bench", "--table1", "--midpoint", "--n", "30", "--out-dir", str(tmp_path)]) == 0
    rows = (tmp_path / "table1.csv").read_text().splitlines()
    assert len(rows) == 5


def test_cli_rejects_bad_model(tmp_path):
    bad = _model_file(tmp_path, {"arrival": {"family": "exponential", "params": [5.0]},
                                 "service": {"family": "exponential", "params": [2.0]}, "servers": 2})
    with pytest.raises(Unstable):
        main(["sample", "--model", bad, "--out", str(tmp_path / "x.jsonl")])
