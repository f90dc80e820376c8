import json
import os
import random

import numpy as np
import pytest

from rekit import harness, ksat
from rekit.records import RunRecord

SMALL_RSA = dict(algorithm="rsa", model=dict(N=51, alpha=0.2),
                 params=dict(y=3, gamma0=0.1, betaf=0.01, gammaf=0.01), seeds=[0, 1, 2])


def rsa_config(tmp_path, **kw):
    d = dict(SMALL_RSA, output=str(tmp_path), name="exp")
    d.update(kw)
    return harness.ExperimentConfig.from_dict(d)


@pytest.mark.parametrize("bad", [
    dict(algorithm="tabu"),
    dict(model=dict(N=50, alpha=0.2)),
    dict(model=dict(N=51, alpha=-1.0)),
    dict(params=dict(y=3, temperature=2.0)),
    dict(params=dict(y=0)),
    dict(seeds=[]),
    dict(seeds=[1, 1]),
    dict(colour="red"),
])
def test_invalid_configs(tmp_path, bad):
    with pytest.raises(ValueError):
        harness.ExperimentConfig.from_dict(dict(SMALL_RSA, **bad))


def test_invalid_solver_params():
    for algo, model in [("rsgd", dict(N=105, K=5, alpha=0.2)), ("fbp", dict(N=51, alpha=0.2)),
                        ("ksat", dict(N=50, alpha=3.0, K=3))]:
        with pytest.raises(ValueError):
            harness.ExperimentConfig(algo, model, params=dict(nonsense=1))
    with pytest.raises(ValueError):
        harness.ExperimentConfig("ksat", dict(cnf="/nonexistent.cnf"))


def test_run_experiment_is_idempotent(tmp_path, monkeypatch):
    cfg = rsa_config(tmp_path)
    recs = harness.run_experiment(cfg)
    assert [r.seed for r in recs] == [0, 1, 2]
    files = sorted((tmp_path / "exp").glob("seed-*.json"))
    assert len(files) == 3
    mtimes = [f.stat().st_mtime_ns for f in files]

    def boom(*a, **k):
        raise AssertionError("completed seeds must not re-run")

    monkeypatch.setattr(harness, "run_single", boom)
    again = harness.run_experiment(cfg)
    assert [r.deterministic_dict() for r in again] == [r.deterministic_dict() for r in recs]
    assert [f.stat().st_mtime_ns for f in files] == mtimes


def test_force_reruns_and_config_mismatch(tmp_path):
    cfg = rsa_config(tmp_path, seeds=[0])
    first = harness.run_experiment(cfg)[0]
    other = rsa_config(tmp_path, seeds=[0], params=dict(y=5))
    with pytest.raises(ValueError):
        harness.run_experiment(other)
    rerun = harness.run_experiment(cfg, force=True)[0]
    assert rerun.deterministic_dict() == first.deterministic_dict()


def test_interrupted_run_leaves_no_partial_files(tmp_path, monkeypatch):
    cfg = rsa_config(tmp_path)
    real = harness.run_single

    def flaky(config, seed):
        if seed == 1:
            raise KeyboardInterrupt
        return real(config, seed)

    monkeypatch.setattr(harness, "run_single", flaky)
    with pytest.raises(KeyboardInterrupt):
        harness.run_experiment(cfg)
    names = sorted(os.listdir(tmp_path / "exp"))
    assert names == ["experiment.json", "seed-00000.json"]
    json.loads((tmp_path / "exp" / "seed-00000.json").read_text())


def test_write_atomic_failure_leaves_nothing(tmp_path, monkeypatch):
    target = tmp_path / "a.json"

    def fail(src, dst):
        raise OSError("disk full")

    monkeypatch.setattr(harness.os, "replace", fail)
    with pytest.raises(OSError):
        harness.write_atomic(target, "{}")
    assert os.listdir(tmp_path) == []


def test_output_root_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv(harness.OUTPUT_ENV, str(tmp_path / "root"))
    cfg = harness.ExperimentConfig.from_dict(dict(SMALL_RSA, seeds=[0]))
    assert cfg.directory().parent == tmp_path / "root"
    assert cfg.directory().name.startswith("rsa-")
    harness.run_experiment(cfg)
    assert (cfg.directory() / "seed-00000.json").exists()


def test_solved_records_replay(tmp_path):
    recs = harness.run_experiment(rsa_config(tmp_path))
    assert all(r.solved for r in recs)
    for path in sorted((tmp_path / "exp").glob("seed-*.json")):
        rec = harness.load_record(path)
        assert harness.verify_record(rec)
        bad = harness.load_record(path)
        bad.solution = [-v for v in bad.solution]
        assert not harness.verify_record(bad)


@pytest.mark.parametrize("algo,model,params", [
    ("rsgd", dict(N=105, K=5, kind="committee", alpha=0.2),
     dict(y=3, minibatch=5, eta_prime=0.002, gamma0=0.1, dgamma=0.001, init_scale=0.1, max_epochs=500)),
    ("fbp", dict(N=101, alpha=0.3), dict(y=5, damping=0.5, gamma_step=0.2)),
    ("ksat", dict(N=150, alpha=3.0, K=3), dict(sweeps_per_step=300)),
])
def test_each_algorithm_through_the_harness(tmp_path, algo, model, params):
    cfg = harness.ExperimentConfig(algo, model, params, seeds=[0, 1], output=str(tmp_path), name=algo)
    recs = harness.run_experiment(cfg)
    assert all(r.solved for r in recs)
    for r in harness.load_records([tmp_path / algo]):
        assert harness.verify_record(r)
        assert r.config["instance"]["seed"] == r.seed


def test_ksat_cnf_instance_replay(tmp_path):
    inst = ksat.generate_ksat(120, 3.0, 3, 9)
    cnf = tmp_path / "x.cnf"
    cnf.write_text(ksat.serialize_cnf(inst))
    cfg = harness.ExperimentConfig("ksat", dict(cnf=str(cnf)), dict(sweeps_per_step=300), seeds=[0, 1],
                                   output=str(tmp_path), name="cnf")
    recs = harness.run_experiment(cfg)
    assert all(r.solved and harness.verify_record(r) for r in recs)
    cnf.write_text(ksat.serialize_cnf(ksat.generate_ksat(120, 3.0, 3, 10)))
    with pytest.raises(ValueError):
        harness.verify_record(recs[0])


def test_parallel_matches_serial(tmp_path):
    a = harness.run_experiment(rsa_config(tmp_path, name="serial"))
    b = harness.run_experiment(rsa_config(tmp_path, name="pool"), workers=2)
    assert [r.deterministic_dict() for r in a] == [r.deterministic_dict() for r in b]


# ---------------------------------------------------------------------------
# fits


def test_power_fit_recovers_parameters():
    N = np.array([201, 401, 801, 1601, 3201], dtype=float)
    fit = harness.fit_power(N, 0.13 * N ** 1.7)
    assert fit.params["a"] == pytest.approx(0.13, rel=1e-3)
    assert fit.params["b"] == pytest.approx(1.7, rel=1e-3)
    assert fit.residual < 1e-10


def test_stretched_fit_on_exact_model():
    N = np.array([101, 201, 401, 801, 1201, 1601, 2401, 3201], dtype=float)
    T = 0.2 * N ** 1.5 * np.exp(6.6e-4 * N ** 1.1)
    fit = harness.fit_stretched(N, T)
    assert fit.residual < 1e-6
    assert fit.params["d"] == pytest.approx(1.1, rel=1e-2)
    assert np.allclose(fit.predict(N), T, rtol=1e-5)


def fake(N, seed, iters, status="solved", algorithm="rsa", **cfg):
    return RunRecord(algorithm=algorithm, config=dict(N=N, alpha=0.3, y=3, gamma0=0.1, pattern_seed=seed, **cfg),
                     seed=seed, status=status, iterations=int(iters))


def test_fit_scaling_uses_per_sample_minima_in_log_scale():
    rng = np.random.default_rng(0)
    recs = []
    for N in (201, 401, 801, 1601):
        for s in range(5):
            base = 0.13 * N ** 1.7 * np.exp(rng.normal(0, 0.1))
            recs += [fake(N, s, base), fake(N, s, 3 * base), fake(N, s, 0, status="timeout")]
    fit = harness.fit_scaling(recs)
    assert fit.n_points == 20
    assert fit.params["b"] == pytest.approx(1.7, abs=0.1)
    samples = harness.per_sample_minima(recs)
    st = fit.log_stats[401]
    lv = np.log(samples[401])
    assert st["geo_mean"] == pytest.approx(np.exp(lv.mean()))
    assert st["log_std"] == pytest.approx(lv.std())
    random.Random(1).shuffle(recs)
    again = harness.fit_scaling(recs)
    assert again.params == fit.params


def test_fit_needs_enough_data():
    recs = [fake(N, s, 100 * N) for N in (201, 401) for s in range(5)]
    with pytest.raises(ValueError):
        harness.fit_scaling(recs)
    recs += [fake(801, s, 1000) for s in range(2)]
    with pytest.raises(ValueError):
        harness.fit_scaling(recs)
    with pytest.raises(ValueError):
        harness.fit_scaling(recs, form="cubic")


# ---------------------------------------------------------------------------
# emission


def test_emit_fbp_curves(tmp_path):
    cfg = harness.ExperimentConfig("fbp", dict(N=101, alpha=0.3), dict(y=5, damping=0.5, gamma_step=0.25),
                                   seeds=[0], output=str(tmp_path), name="f")
    recs = harness.run_experiment(cfg)
    rows = harness.read_curves(harness.emit_curves(recs, "fbp", tmp_path / "f.csv"))
    assert len(rows) == len(recs[0].trace)
    assert list(rows[0]) == harness.CURVE_COLUMNS["fbp"]
    for row, t in zip(rows, recs[0].trace):
        assert float(row["distance"]) == pytest.approx(t["distance"])
        assert float(row["local_entropy"]) == pytest.approx(t["local_entropy"])


def test_emit_ksat_probabilities(tmp_path):
    recs = [fake(1000, s, 10, status="solved" if s % 3 else "contradiction", algorithm="ksat")
            for s in range(10)]
    for r in recs[5:]:
        r.config["alpha"] = 9.9
    rows = harness.read_curves(harness.emit_curves(recs, "ksat", tmp_path / "k.csv"))
    assert [float(r["alpha"]) for r in rows] == [0.3, 9.9]
    for r in rows:
        assert 0 <= float(r["success_probability"]) <= 1
    assert [int(r["solved"]) for r in rows] == [3, 3]


def test_emit_empty_and_mixed(tmp_path):
    path = harness.emit_curves([], "rsgd", tmp_path / "e.csv")
    assert path.read_text() == ",".join(harness.CURVE_COLUMNS["rsgd"]) + "\n"
    with pytest.raises(ValueError):
        harness.emit_curves([fake(101, 0, 5), fake(101, 1, 5, algorithm="ksat")], "rsa", tmp_path / "m.csv")


# ---------------------------------------------------------------------------
# grid search


def test_rank_grid_dominance_and_shuffle_stability():
    good = [fake(101, s, 50 + s) for s in range(4)]
    fast_but_flaky = [fake(101, 0, 5)] + [fake(101, s, 0, status="timeout") for s in range(1, 4)]
    slow = [fake(101, s, 500) for s in range(4)]
    results = [({"p": 1}, fast_but_flaky), ({"p": 2}, slow), ({"p": 3}, good)]
    ranking = harness.rank_grid(results)
    assert [r["point"]["p"] for r in ranking] == [3, 2, 1]
    for seed in range(5):
        shuffled = [(p, random.Random(seed).sample(r, len(r))) for p, r in results]
        random.Random(seed).shuffle(shuffled)
        assert harness.rank_grid(shuffled) == ranking
    with pytest.raises(ValueError):
        harness.grid_points({})
    with pytest.raises(ValueError):
        harness.grid_points({"y": []})


def test_grid_search_selects_the_working_point(tmp_path):
    cfg = rsa_config(tmp_path, name="grid", seeds=[0, 1])
    report = harness.grid_search(cfg, {"max_iters": [1, 10**7]})
    assert report["best"] == {"max_iters": 10**7}
    assert report["ranking"][1]["success_rate"] == 0.0
    saved = json.loads((tmp_path / "grid" / "grid-report.json").read_text())
    assert saved["best"] == report["best"]
