"""Binary perceptrons and committee machines: patterns, energies, flip costs.

Conventions
-----------
A network has ``N`` binary synapses split into ``K`` hidden units of ``n = N // K``
inputs each.  Weights are stored flat, ``j = k * n + i``.  Pattern inputs are
stored as an ``(M, K, n)`` int8 array; for the fully-connected committee the
``K`` slices of one pattern are identical.  Desired outputs are folded into the
inputs at generation time, so every pattern asks for output ``+1``.

The per-pattern energy is the minimal number of synapses to switch so that the
pattern becomes correctly classified.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numba import njit

KINDS = ("perceptron", "committee", "tree")

# sentinel for unused slots of the sorted repair-cost rows
_NO_COST = np.iinfo(np.int32).max


@dataclass(frozen=True)
class Topology:
    N: int
    K: int = 1
    kind: str = "perceptron"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown network kind {self.kind!r}")
        if self.K < 1 or self.K % 2 == 0:
            raise ValueError("K must be a positive odd integer")
        if self.N < 1 or self.N % self.K:
            raise ValueError(f"N={self.N} is not divisible by K={self.K}")
        if (self.N // self.K) % 2 == 0:
            raise ValueError("N/K must be odd")
        if (self.kind == "perceptron") != (self.K == 1):
            raise ValueError("perceptron kind requires K=1 and vice versa")

    @property
    def n(self) -> int:
        """Inputs per hidden unit."""
        return self.N // self.K

    @classmethod
    def make(cls, N: int, K: int = 1, kind: str | None = None) -> "Topology":
        if kind is None:
            kind = "perceptron" if K == 1 else "committee"
        return cls(N=N, K=K, kind=kind)


@dataclass(frozen=True)
class PatternSet:
    topology: Topology
    alpha: float
    seed: int | None
    xi: np.ndarray = field(repr=False)

    @property
    def M(self) -> int:
        return self.xi.shape[0]

    def __len__(self):
        return self.M


def n_patterns(alpha: float, N: int) -> int:
    return int(math.floor(alpha * N + 0.5))


def generate_patterns(topology: Topology, alpha: float, seed: int) -> PatternSet:
    """Draw ``round(alpha N)`` i.i.d. unbiased patterns, outputs folded to +1."""
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    M = n_patterns(alpha, topology.N)
    rng = np.random.default_rng(seed)
    K, n = topology.K, topology.n
    if topology.kind == "tree":
        raw = rng.integers(0, 2, size=(M, K, n), dtype=np.int8) * 2 - 1
    else:
        # shared input vector: only the first unit's values are drawn
        one = rng.integers(0, 2, size=(M, 1, n), dtype=np.int8) * 2 - 1
        raw = np.repeat(one, K, axis=1)
    outputs = rng.integers(0, 2, size=M, dtype=np.int8) * 2 - 1
    xi = np.ascontiguousarray(raw * outputs[:, None, None], dtype=np.int8)
    xi.setflags(write=False)
    return PatternSet(topology, float(alpha), seed, xi)


def pattern_set_from_array(topology: Topology, xi, alpha=None, seed=None) -> PatternSet:
    xi = np.asarray(xi, dtype=np.int8)
    if xi.ndim == 2:
        xi = np.repeat(xi[:, None, :], topology.K, axis=1) if topology.kind != "tree" else xi.reshape(
            xi.shape[0], topology.K, topology.n
        )
    if xi.shape[1:] != (topology.K, topology.n):
        raise ValueError(f"pattern shape {xi.shape} does not match {topology}")
    if not np.all(np.abs(xi) == 1):
        raise ValueError("pattern entries must be +-1")
    if topology.kind == "committee" and xi.shape[0] and np.any(xi != xi[:, :1, :]):
        raise ValueError("fully-connected committee needs identical inputs across units")
    if alpha is None:
        alpha = xi.shape[0] / topology.N
    xi = np.ascontiguousarray(xi)
    xi.setflags(write=False)
    return PatternSet(topology, float(alpha), seed, xi)


def save_patterns(patterns: PatternSet, path) -> None:
    """CSV: one header comment line, then one row of K*n entries per pattern."""
    t = patterns.topology
    path = Path(path)
    header = f"# N={t.N},K={t.K},kind={t.kind},alpha={patterns.alpha!r},seed={patterns.seed}"
    rows = patterns.xi.reshape(patterns.M, -1)
    with path.open("w") as fh:
        fh.write(header + "\n")
        for r in rows:
            fh.write(",".join(map(str, r.tolist())) + "\n")


def load_patterns(path) -> PatternSet:
    path = Path(path)
    with path.open() as fh:
        first = fh.readline().strip()
        if not first.startswith("#"):
            raise ValueError("missing pattern-file header")
        meta = dict(kv.split("=", 1) for kv in first[1:].strip().split(","))
        rows = [list(map(int, line.split(","))) for line in fh if line.strip()]
    topo = Topology(int(meta["N"]), int(meta["K"]), meta["kind"])
    seed = None if meta["seed"] == "None" else int(meta["seed"])
    xi = np.array(rows, dtype=np.int8).reshape(-1, topo.K, topo.n)
    return pattern_set_from_array(topo, xi, float(meta["alpha"]), seed)


def random_weights(topology: Topology, rng) -> np.ndarray:
    return (rng.integers(0, 2, size=topology.N, dtype=np.int8) * 2 - 1).astype(np.int8)


def sign(x):
    """Elementwise sign with sign(0) = +1."""
    return np.where(np.asarray(x) >= 0, 1, -1).astype(np.int8)


def _check_dims(w, pattern, topology):
    if np.shape(w) != (topology.N,):
        raise ValueError(f"weight vector of shape {np.shape(w)}, expected ({topology.N},)")
    if pattern is not None and np.shape(pattern) != (topology.K, topology.n):
        raise ValueError(f"pattern of shape {np.shape(pattern)}, expected ({topology.K}, {topology.n})")


def unit_fields(w, xi, topology: Topology) -> np.ndarray:
    """Integer pre-activations; ``xi`` is one (K, n) pattern or an (M, K, n) stack."""
    wk = np.asarray(w, dtype=np.int64).reshape(topology.K, topology.n)
    return np.einsum("...ki,ki->...k", np.asarray(xi, dtype=np.int64), wk)


def network_output(w, pattern, topology: Topology) -> int:
    _check_dims(w, pattern, topology)
    d = unit_fields(w, pattern, topology)
    return int(sign(sign(d).sum()))


def _energy_from_fields(d: np.ndarray) -> np.ndarray:
    """Per-pattern energies from an (M, K) array of unit fields."""
    d = np.atleast_2d(d)
    out = np.where(d > 0, 1, -1).sum(axis=1)
    c = (1 - out) // 2
    cost = np.where(d < 0, (1 - d) // 2, np.iinfo(np.int64).max)
    cost.sort(axis=1)
    K = d.shape[1]
    take = np.arange(K)[None, :] < c[:, None]
    return np.where(out < 0, np.where(take, cost, 0).sum(axis=1), 0)


def pattern_energy(w, pattern, topology: Topology) -> int:
    _check_dims(w, pattern, topology)
    return int(_energy_from_fields(unit_fields(w, pattern, topology)[None, :])[0])


def pattern_energies(w, patterns: PatternSet) -> np.ndarray:
    _check_dims(w, None, patterns.topology)
    if patterns.M == 0:
        return np.zeros(0, dtype=np.int64)
    return _energy_from_fields(unit_fields(w, patterns.xi, patterns.topology))


def total_energy(w, patterns: PatternSet) -> int:
    return int(pattern_energies(w, patterns).sum())


def training_errors(w, patterns: PatternSet) -> int:
    """Number of misclassified patterns."""
    if patterns.M == 0:
        return 0
    d = unit_fields(w, patterns.xi, patterns.topology)
    return int(np.count_nonzero(np.where(d > 0, 1, -1).sum(axis=1) < 0))


def replica_distance(wa, wb) -> float:
    """Squared distance 1/2 sum_j (wa_j - wb_j)^2, i.e. twice the Hamming distance."""
    wa = np.asarray(wa, dtype=np.int64)
    wb = np.asarray(wb, dtype=np.int64)
    if wa.shape != wb.shape:
        raise ValueError("replicas have different lengths")
    return 0.5 * float(np.sum((wa - wb) ** 2))


# ---------------------------------------------------------------------------
# incremental cache (numba kernels; reused by the replicated sampler)


@njit(cache=True)
def _refresh_pattern(d, s, out, c, chi, mu, K):
    """Rebuild Delta_out, sorted costs, c and chi for pattern ``mu`` from its unit fields."""
    nv = 0
    o = 0
    for k in range(K):
        dk = d[mu, k]
        if dk > 0:
            o += 1
        else:
            o -= 1
            v = (1 - dk) // 2
            # insertion into the sorted prefix
            p = nv
            while p > 0 and s[mu, p - 1] > v:
                s[mu, p] = s[mu, p - 1]
                p -= 1
            s[mu, p] = v
            nv += 1
    for p in range(nv, K):
        s[mu, p] = 2147483647
    out[mu] = o
    if o < 0:
        cm = (1 - o) // 2
        c[mu] = cm
        chi[mu] = 1 if (cm < K and s[mu, cm - 1] == s[mu, cm]) else 0
    else:
        c[mu] = 0
        chi[mu] = 0


@njit(cache=True)
def _pattern_energy_cached(s, out, c, mu):
    if out[mu] >= 0:
        return 0
    e = 0
    for p in range(c[mu]):
        e += s[mu, p]
    return e


@njit(cache=True)
def _shift(d, s, out, c, chi, mu, k, xi_val, w_val):
    """Energy change of pattern ``mu`` when the weight ``w_val`` (input ``xi_val``) of unit k flips."""
    o = out[mu]
    dk = d[mu, k]
    if o == 1:
        if xi_val != w_val:
            return 0
        if dk != 1:
            return 0
        return 1
    elif o < 0:
        if dk > 1:
            return 0
        dd = -xi_val * w_val
        if dk > 0 and dd == 1:
            return 0
        if dk == 1:
            return 1
        v = -(dk + 1) // 2 + 1
        sc = s[mu, c[mu] - 1]
        if v > sc:
            return 0
        if v < sc:
            return -dd
        if dd == 1:
            return -1
        if chi[mu] == 1:
            return 0
        return 1
    return 0


@njit(cache=True)
def _flip_shift(d, s, out, c, chi, xi, k, i, w_val):
    """Total energy change over all patterns for flipping synapse (k, i)."""
    tot = 0
    for mu in range(xi.shape[0]):
        tot += _shift(d, s, out, c, chi, mu, k, xi[mu, k, i], w_val)
    return tot


@njit(cache=True)
def _apply_flip(d, s, out, c, chi, xi, k, i, new_w):
    """Update the cache after synapse (k, i) was set to ``new_w``."""
    K = d.shape[1]
    step = 2 * new_w
    for mu in range(xi.shape[0]):
        d[mu, k] += step * xi[mu, k, i]
        _refresh_pattern(d, s, out, c, chi, mu, K)


@njit(cache=True)
def _build(d, s, out, c, chi, K):
    for mu in range(d.shape[0]):
        _refresh_pattern(d, s, out, c, chi, mu, K)


@dataclass
class PatternCache:
    """Per-pattern auxiliary quantities for one weight configuration.

    ``fields`` holds the integer unit fields, ``out`` their sign-sum, ``costs`` the
    ascending repair costs of violated units (padded with a large sentinel),
    ``c`` the number of units to fix and ``chi`` the tie flag between the c-th and
    (c+1)-th cheapest violated unit.
    """

    fields: np.ndarray
    costs: np.ndarray
    out: np.ndarray
    c: np.ndarray
    chi: np.ndarray

    @property
    def plus(self) -> np.ndarray:
        return np.flatnonzero(self.out == 1)

    @property
    def minus(self) -> np.ndarray:
        return np.flatnonzero(self.out < 0)

    def energy(self) -> int:
        K = self.fields.shape[1]
        take = np.arange(K)[None, :] < self.c[:, None]
        return int(np.where(take & (self.out[:, None] < 0), self.costs, 0).sum())

    def copy(self) -> "PatternCache":
        return PatternCache(*(a.copy() for a in (self.fields, self.costs, self.out, self.c, self.chi)))

    def equals(self, other: "PatternCache") -> bool:
        return all(
            np.array_equal(a, b)
            for a, b in zip(
                (self.fields, self.costs, self.out, self.c, self.chi),
                (other.fields, other.costs, other.out, other.c, other.chi),
            )
        )


def empty_cache_arrays(M: int, K: int, lead=()):
    return (
        np.zeros(lead + (M, K), dtype=np.int64),
        np.full(lead + (M, K), _NO_COST, dtype=np.int64),
        np.zeros(lead + (M,), dtype=np.int64),
        np.zeros(lead + (M,), dtype=np.int64),
        np.zeros(lead + (M,), dtype=np.int64),
    )


def build_cache(w, patterns: PatternSet) -> PatternCache:
    t = patterns.topology
    _check_dims(w, None, t)
    d, s, out, c, chi = empty_cache_arrays(patterns.M, t.K)
    if patterns.M:
        d[:] = unit_fields(w, patterns.xi, t)
        _build(d, s, out, c, chi, t.K)
    return PatternCache(d, s, out, c, chi)


def energy_shift(cache: PatternCache, mu: int, k: int, i: int, w, patterns: PatternSet) -> int:
    """E^mu(w with synapse (k, i) flipped) - E^mu(w), in O(1) from the cache."""
    n = patterns.topology.n
    return int(
        _shift(cache.fields, cache.costs, cache.out, cache.c, cache.chi, mu, k,
               int(patterns.xi[mu, k, i]), int(w[k * n + i]))
    )


def flip_energy_shift(cache: PatternCache, k: int, i: int, w, patterns: PatternSet) -> int:
    n = patterns.topology.n
    return int(_flip_shift(cache.fields, cache.costs, cache.out, cache.c, cache.chi,
                           patterns.xi, k, i, int(w[k * n + i])))


def update_cache(cache: PatternCache, k: int, i: int, w, patterns: PatternSet) -> PatternCache:
    """Refresh ``cache`` in place after ``w[k*n+i]`` has been flipped (``w`` holds the new value)."""
    n = patterns.topology.n
    _apply_flip(cache.fields, cache.costs, cache.out, cache.c, cache.chi,
                patterns.xi, k, i, int(w[k * n + i]))
    return cache
