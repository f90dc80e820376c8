"""Experiment configuration, record persistence, scaling fits and data emission."""

from __future__ import annotations

import csv
import hashlib
import itertools
import json
import math
import os
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
from scipy.optimize import minimize_scalar

from . import fbp, ksat, model, rsa, rsgd
from .records import RunRecord, solution_hash

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

ALGORITHMS = ("rsa", "rsgd", "fbp", "ksat")
OUTPUT_ENV = "RE_KIT_OUTPUT"
DEFAULT_OUTPUT = "re-kit-runs"

_RSA_RUN_KEYS = ("y", "proposal", "max_iters", "track_center")
_SCHEDULE_KEYS = tuple(f.name for f in fields(rsa.SaSchedule))


# ---------------------------------------------------------------------------
# configuration


@dataclass
class ExperimentConfig:
    """One experiment: an algorithm, an instance family and a list of seeds.

    ``model`` holds N, K, kind and alpha for networks; N, K and alpha (or a
    ``cnf`` path) for K-SAT. ``params`` holds the algorithm parameters. Seed s
    draws the instance with seed s and runs the solver with seed s; with a
    CNF file the instance is fixed and only the solver seed changes.
    """

    algorithm: str
    model: dict
    params: dict = field(default_factory=dict)
    seeds: list = field(default_factory=lambda: [0])
    name: str | None = None
    output: str | None = None

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {self.algorithm!r}")
        self.seeds = [int(s) for s in self.seeds]
        if not self.seeds:
            raise ValueError("need at least one seed")
        if len(set(self.seeds)) != len(self.seeds):
            raise ValueError("seeds must be distinct")
        self.model = dict(self.model)
        self.params = dict(self.params)
        self.validate()

    def validate(self) -> None:
        """Build the instance descriptor and solver parameters once; raises ValueError."""
        if self.algorithm == "ksat":
            m = self.model
            if "cnf" in m:
                if not Path(m["cnf"]).is_file():
                    raise ValueError(f"CNF file {m['cnf']} not found")
            else:
                for k in ("N", "alpha"):
                    if k not in m:
                        raise ValueError(f"K-SAT model needs {k!r} or a 'cnf' path")
                if int(m.get("K", 4)) < 1 or int(m["N"]) < int(m.get("K", 4)):
                    raise ValueError("need 1 <= K <= N")
                if not float(m["alpha"]) > 0:
                    raise ValueError("alpha must be positive")
        else:
            _topology(self.model)
            if not float(self.model.get("alpha", 0)) > 0:
                raise ValueError("alpha must be positive")
        _solver_args(self.algorithm, self.params)

    def key(self) -> str:
        """Short hash of everything except seeds and paths."""
        blob = json.dumps(dict(algorithm=self.algorithm, model=self.model, params=self.params),
                          sort_keys=True, default=str)
        return hashlib.sha256(blob.encode()).hexdigest()[:10]

    def directory(self) -> Path:
        root = Path(self.output or os.environ.get(OUTPUT_ENV, DEFAULT_OUTPUT))
        return root / (self.name or f"{self.algorithm}-{self.key()}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ValueError(f"unknown config keys {sorted(unknown)}")
        if "algorithm" not in d or "model" not in d:
            raise ValueError("config needs 'algorithm' and a [model] table")
        return cls(**d)


def load_config(path, overrides: dict | None = None) -> ExperimentConfig:
    """Read a TOML experiment file; ``overrides`` (same layout) win over file values."""
    with open(path, "rb") as fh:
        d = tomllib.load(fh)
    d.pop("grid", None)
    return ExperimentConfig.from_dict(merge_config(d, overrides or {}))


def load_grid(path) -> dict:
    with open(path, "rb") as fh:
        return dict(tomllib.load(fh).get("grid", {}))


def merge_config(base: dict, overrides: dict) -> dict:
    out = dict(base)
    for k, v in overrides.items():
        if isinstance(v, dict):
            out[k] = {**out.get(k, {}), **v}
        else:
            out[k] = v
    return out


def _topology(m: dict) -> model.Topology:
    if "N" not in m:
        raise ValueError("model needs N")
    return model.Topology.make(int(m["N"]), int(m.get("K", 1)), m.get("kind"))


def _fbp_protocol(params: dict) -> fbp.FbpProtocol:
    p = dict(params)
    if "gamma_max" in p or "gamma_step" in p:
        lo, st, hi = p.pop("gamma_min", 0.0), p.pop("gamma_step", 0.1), p.pop("gamma_max", 2.5)
        if not st > 0:
            raise ValueError("gamma_step must be positive")
        p["gammas"] = list(np.round(np.arange(lo, hi + st / 2, st), 10))
    return fbp.FbpProtocol(**p)


def _solver_args(algorithm: str, params: dict):
    """Typed solver parameters; unknown or invalid keys raise ValueError."""
    try:
        if algorithm == "rsa":
            p = dict(params)
            run = {k: p.pop(k) for k in _RSA_RUN_KEYS if k in p}
            sched = rsa.SaSchedule(**{k: p.pop(k) for k in _SCHEDULE_KEYS if k in p})
            if p:
                raise TypeError(f"unexpected keys {sorted(p)}")
            run.setdefault("y", 3)
            if int(run["y"]) < 1:
                raise ValueError("y must be >= 1")
            return sched, run
        if algorithm == "rsgd":
            return rsgd.SgdConfig(**params)
        if algorithm == "fbp":
            return _fbp_protocol(params)
        return ksat.KsatProtocol(**params)
    except TypeError as e:
        raise ValueError(f"invalid {algorithm} parameters: {e}") from None


# ---------------------------------------------------------------------------
# instances, single runs and replay


def make_instance(algorithm: str, m: dict, seed: int):
    if algorithm == "ksat":
        if "cnf" in m:
            return ksat.parse_cnf(Path(m["cnf"]).read_text())
        return ksat.generate_ksat(int(m["N"]), float(m["alpha"]), int(m.get("K", 4)), seed)
    return model.generate_patterns(_topology(m), float(m["alpha"]), seed)


def instance_descriptor(algorithm: str, m: dict, seed: int) -> dict:
    if algorithm == "ksat" and "cnf" in m:
        data = Path(m["cnf"]).read_bytes()
        return dict(cnf=str(m["cnf"]), sha256=hashlib.sha256(data).hexdigest())
    d = dict(m, seed=int(seed))
    if algorithm == "ksat":
        d.setdefault("K", 4)
    return d


def run_single(config: ExperimentConfig, seed: int) -> RunRecord:
    inst = make_instance(config.algorithm, config.model, seed)
    args = _solver_args(config.algorithm, config.params)
    if config.algorithm == "rsa":
        sched, run = args
        rec = rsa.run_sa(inst, int(run.pop("y")), sched, seed, **run)
    elif config.algorithm == "rsgd":
        rec = rsgd.run_rsgd(inst, args, seed)
    elif config.algorithm == "fbp":
        rec = fbp.solve_fbp(inst, args, seed)
    else:
        rec = ksat.solve_ksat(inst, args, seed)
    rec.config["instance"] = instance_descriptor(config.algorithm, config.model, seed)
    return rec


def verify_record(rec: RunRecord, instance=None) -> bool:
    """Replay a solved record's solution on its regenerated instance.

    Uses only the stored configuration (or an explicitly given instance), no
    solver state. Unsolved records verify trivially.
    """
    if not rec.solved:
        return True
    if rec.solution is None:
        return False
    if instance is None:
        desc = rec.config.get("instance")
        if rec.algorithm == "ksat":
            if desc is None:
                raise ValueError("K-SAT record carries no instance descriptor; pass the instance")
            if "cnf" in desc:
                data = Path(desc["cnf"]).read_bytes()
                if hashlib.sha256(data).hexdigest() != desc["sha256"]:
                    raise ValueError("CNF file changed since the run")
                instance = ksat.parse_cnf(data.decode())
            else:
                instance = ksat.generate_ksat(int(desc["N"]), float(desc["alpha"]), int(desc["K"]),
                                              int(desc["seed"]))
        else:
            c = rec.config
            t = model.Topology.make(int(c["N"]), int(c["K"]), c["kind"])
            if c.get("pattern_seed") is None:
                raise ValueError("record has no pattern seed; pass the instance")
            instance = model.generate_patterns(t, float(c["alpha"]), int(c["pattern_seed"]))
    if rec.solution_hash != solution_hash(rec.solution):
        return False
    sigma = np.asarray(rec.solution, dtype=np.int8)
    if rec.algorithm == "ksat":
        return ksat.count_violated(instance, sigma) == 0
    return model.total_energy(sigma.astype(np.int64), instance) == 0


# ---------------------------------------------------------------------------
# persistence


def record_path(directory: Path, seed: int) -> Path:
    return Path(directory) / f"seed-{int(seed):05d}.json"


def write_atomic(path: Path, text: str) -> None:
    """Write-temp-then-rename so readers never see a partial file."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_record(path) -> RunRecord:
    with open(path) as fh:
        return RunRecord.from_dict(json.load(fh))


def load_records(paths) -> list:
    """Records from files and/or directories (``seed-*.json`` inside), sorted by path."""
    out = []
    for p in paths:
        p = Path(p)
        files = sorted(p.rglob("seed-*.json")) if p.is_dir() else [p]
        out.extend(load_record(f) for f in files)
    return out


def _run_job(args):
    config, seed = args
    return seed, run_single(config, seed)


def run_experiment(config: ExperimentConfig, workers: int = 1, force: bool = False,
                   progress=None) -> list:
    """Run every seed that has no completed record yet; returns all records by seed.

    Records are written by this process only, one atomic rename per seed. A
    directory written under a different configuration is refused unless forced.
    """
    directory = config.directory()
    directory.mkdir(parents=True, exist_ok=True)
    meta = directory / "experiment.json"
    snapshot = dict(config.to_dict(), key=config.key())
    snapshot.pop("output")
    if meta.exists() and not force:
        old = json.loads(meta.read_text())
        if old.get("key") != config.key():
            raise ValueError(f"{directory} holds records of a different configuration; use force")
    write_atomic(meta, json.dumps(snapshot, indent=1, default=str))

    todo = [s for s in config.seeds if force or not record_path(directory, s).exists()]
    records = {}

    def store(seed, rec):
        write_atomic(record_path(directory, seed), rec.to_json())
        records[seed] = rec
        if progress is not None:
            progress(seed, rec)

    if workers <= 1 or len(todo) <= 1:
        for s in todo:
            store(*_run_job((config, s)))
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for seed, rec in pool.map(_run_job, [(config, s) for s in todo]):
                store(seed, rec)
    for s in config.seeds:
        if s not in records:
            records[s] = load_record(record_path(directory, s))
    return [records[s] for s in config.seeds]


# ---------------------------------------------------------------------------
# scaling fits


@dataclass
class ScalingFit:
    form: str
    params: dict
    residual: float
    n_points: int
    log_stats: dict = field(default_factory=dict)

    def predict(self, N):
        N = np.asarray(N, dtype=float)
        p = self.params
        out = np.log(p["a"]) + p["b"] * np.log(N)
        if self.form == "stretched":
            out = out + p["c"] * N ** p["d"]
        return np.exp(out)


def _power_lstsq(logN, logT):
    A = np.column_stack([np.ones_like(logN), logN])
    coef, *_ = np.linalg.lstsq(A, logT, rcond=None)
    return coef, logT - A @ coef


def _stretched_lstsq(N, logN, logT, d):
    A = np.column_stack([np.ones_like(logN), logN, N ** d])
    coef, *_ = np.linalg.lstsq(A, logT, rcond=None)
    return coef, logT - A @ coef


def fit_power(N, iterations) -> ScalingFit:
    """Least squares of log T = log a + b log N."""
    N, T = _fit_arrays(N, iterations, 2)
    coef, r = _power_lstsq(np.log(N), np.log(T))
    return ScalingFit("power", dict(a=float(np.exp(coef[0])), b=float(coef[1])),
                      float(np.sqrt(np.mean(r ** 2))), len(N))


def fit_stretched(N, iterations, d_range=(0.05, 3.0)) -> ScalingFit:
    """Least squares of log T = log a + b log N + c N^d.

    Linear in (log a, b, c) at fixed d, so only d is searched (grid, then a
    bounded scalar refinement).
    """
    N, T = _fit_arrays(N, iterations, 4)
    if len(np.unique(N)) < 4:
        raise ValueError("the four-parameter form needs at least 4 distinct N")
    logN, logT = np.log(N), np.log(T)
    # rescale N to keep N^d well conditioned; c is mapped back below
    s = float(np.max(N))
    x = N / s

    def sse(d):
        return float(np.sum(_stretched_lstsq(x, logN, logT, d)[1] ** 2))

    grid = np.linspace(*d_range, 120)
    k = int(np.argmin([sse(d) for d in grid]))
    lo, hi = grid[max(k - 1, 0)], grid[min(k + 1, len(grid) - 1)]
    d = float(minimize_scalar(sse, bounds=(lo, hi), method="bounded",
                              options=dict(xatol=1e-12, maxiter=500)).x)
    coef, r = _stretched_lstsq(x, logN, logT, d)
    params = dict(a=float(np.exp(coef[0])), b=float(coef[1]), c=float(coef[2] / s ** d), d=d)
    return ScalingFit("stretched", params, float(np.sqrt(np.mean(r ** 2))), len(N))


def _fit_arrays(N, T, need):
    N = np.asarray(N, dtype=float).ravel()
    T = np.asarray(T, dtype=float).ravel()
    if N.shape != T.shape:
        raise ValueError("N and iteration arrays differ in length")
    ok = np.isfinite(N) & np.isfinite(T) & (N > 0) & (T > 0)
    N, T = N[ok], T[ok]
    if len(np.unique(N)) < need:
        raise ValueError(f"need at least {need} distinct N values")
    order = np.lexsort((T, N))
    return N[order], T[order]


def per_sample_minima(records) -> dict:
    """{N: sorted list of per-instance minimum iterations over solved records}.

    Several records of the same instance (e.g. grid points) collapse to the
    fastest one.
    """
    best = {}
    for r in records:
        if not r.solved:
            continue
        key = (int(r.config["N"]), _instance_key(r))
        best[key] = min(best.get(key, math.inf), r.iterations)
    out = {}
    for (N, _), v in best.items():
        out.setdefault(N, []).append(v)
    return {N: sorted(v) for N, v in sorted(out.items())}


def _instance_key(r: RunRecord):
    inst = r.config.get("instance")
    if inst is not None:
        return json.dumps(inst, sort_keys=True, default=str)
    return str(r.config.get("pattern_seed", r.seed))


def log_stats(samples: dict) -> dict:
    """Mean and standard deviation of log(iterations) per N, back-transformed."""
    out = {}
    for N, v in samples.items():
        lv = np.log(np.asarray(v, dtype=float))
        out[N] = dict(n=len(v), geo_mean=float(np.exp(lv.mean())), log_std=float(lv.std()),
                      median=float(np.median(v)))
    return out


def fit_scaling(records, form: str = "power", min_per_n: int = 3) -> ScalingFit:
    """Fit iterations-to-solution against N over records grouped by N."""
    if form not in ("power", "stretched"):
        raise ValueError(f"unknown fit form {form!r}")
    samples = {N: v for N, v in per_sample_minima(records).items() if len(v) >= min_per_n}
    need = 3 if form == "power" else 4
    if len(samples) < need:
        raise ValueError(f"need >= {need} N values with >= {min_per_n} solved samples each")
    N = np.concatenate([[n] * len(v) for n, v in samples.items()])
    T = np.concatenate(list(samples.values()))
    fit = fit_power(N, T) if form == "power" else fit_stretched(N, T)
    fit.log_stats = log_stats(samples)
    return fit


# ---------------------------------------------------------------------------
# data emission

CURVE_COLUMNS = {
    "rsa": ["N", "alpha", "y", "gamma0", "seed", "status", "iterations"],
    "rsgd": ["alpha", "y", "eta_prime", "seed", "status", "min_error", "epochs"],
    "fbp": ["alpha", "y", "seed", "gamma", "rho", "distance", "local_entropy", "q", "error_rate"],
    "ksat": ["alpha", "runs", "solved", "success_probability"],
}


def _fmt(v):
    if isinstance(v, float):
        return repr(v) if math.isfinite(v) else str(v)
    return v


def curve_rows(records, kind: str) -> list:
    if kind not in CURVE_COLUMNS:
        raise ValueError(f"unknown curve kind {kind!r}")
    kinds = {r.algorithm for r in records}
    if kinds - {kind}:
        raise ValueError(f"records of kind {sorted(kinds)} cannot be emitted as {kind!r}")
    rows = []
    if kind == "ksat":
        by_alpha = {}
        for r in records:
            a = round(float(r.config["alpha"]), 10)
            by_alpha.setdefault(a, []).append(r.solved)
        for a in sorted(by_alpha):
            v = by_alpha[a]
            rows.append([a, len(v), int(sum(v)), sum(v) / len(v)])
        return rows
    for r in sorted(records, key=lambda r: (r.config.get("N", 0), r.config.get("alpha", 0), r.seed)):
        c = r.config
        if kind == "rsa":
            rows.append([c["N"], c["alpha"], c["y"], c["gamma0"], r.seed, r.status, r.iterations])
        elif kind == "rsgd":
            rows.append([c["alpha"], c["y"], c["eta_prime"], r.seed, r.status,
                         r.summary.get("min_error_rate"), r.iterations])
        else:
            for t in r.trace:
                rows.append([c["alpha"], t.get("y"), r.seed, t.get("gamma"), t.get("rho"),
                             t.get("distance"), t.get("local_entropy"), t.get("q"), t.get("error_rate")])
    return rows


def emit_curves(records, kind: str, path) -> Path:
    """CSV table of the figure-ready columns for ``kind`` (header only when empty)."""
    rows = curve_rows(list(records), kind)
    buf = [",".join(CURVE_COLUMNS[kind])]
    buf += [",".join(str(_fmt(v)) for v in row) for row in rows]
    path = Path(path)
    write_atomic(path, "\n".join(buf) + "\n")
    return path


def read_curves(path) -> list:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


# ---------------------------------------------------------------------------
# grid search


def grid_points(grid: dict) -> list:
    if not grid or any(len(v) == 0 for v in grid.values()):
        raise ValueError("empty parameter grid")
    keys = sorted(grid)
    return [dict(zip(keys, vals)) for vals in itertools.product(*(grid[k] for k in keys))]


def rank_grid(results) -> list:
    """Rank (point, records) pairs by success rate (desc), then mean iterations of solved runs.

    The final key is the point itself so ties order deterministically.
    """
    rows = []
    for point, recs in results:
        recs = list(recs)
        solved = [r.iterations for r in recs if r.solved]
        rows.append(dict(
            point=dict(point),
            runs=len(recs),
            solved=len(solved),
            success_rate=len(solved) / len(recs) if recs else 0.0,
            mean_iterations=float(np.mean(solved)) if solved else math.inf,
            min_iterations=int(min(solved)) if solved else None,
        ))
    rows.sort(key=lambda d: (-d["success_rate"], d["mean_iterations"],
                             json.dumps(d["point"], sort_keys=True, default=str)))
    for i, d in enumerate(rows):
        d["rank"] = i + 1
        if not math.isfinite(d["mean_iterations"]):
            d["mean_iterations"] = None
    return rows


def grid_search(template: ExperimentConfig, grid: dict, workers: int = 1, force: bool = False) -> dict:
    """Run the template at every grid point and persist the ranking report."""
    points = grid_points(grid)
    results = []
    base = template.directory()
    for point in points:
        d = template.to_dict()
        d["params"] = {**d["params"], **point}
        tag = "-".join(f"{k}={v}" for k, v in point.items())
        d["name"] = f"{base.name}/{tag}"
        d["output"] = str(base.parent)
        cfg = ExperimentConfig.from_dict(d)
        results.append((point, run_experiment(cfg, workers=workers, force=force)))
    report = dict(template=template.to_dict(), grid=grid, ranking=rank_grid(results))
    report["best"] = report["ranking"][0]["point"]
    write_atomic(base / "grid-report.json", json.dumps(report, indent=1, default=str))
    return report
