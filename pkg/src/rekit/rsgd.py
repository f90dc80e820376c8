"""Replicated two-level stochastic gradient descent for binary networks.

Every replica keeps real-valued shadow weights; the binary weights used for the
energy and its gradient are their signs.  A step on replica ``a`` applies the
minibatch gradient of the energy to the shadow weights, then an elastic pull
towards the replica consensus ``tanh(gamma T_i)``, with ``T_i = sum_b W_i^b``.
"""

from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass

import numpy as np
from numba import njit

from . import model
from .model import PatternSet, Topology
from .records import RunRecord, make_rng

VARIANTS = ("standard", "corrected", "continuous")
_VARIANT_CODE = {v: i for i, v in enumerate(VARIANTS)}


@njit(cache=True)
def _interaction(T, w, gamma, y, variant):
    if variant == 2:
        return T / y - w
    if math.isinf(gamma):
        # tanh -> sign; both tanh-based variants coincide here
        t = 0.0 if T == 0 else (1.0 if T > 0 else -1.0)
        return t - w
    t = math.tanh(gamma * T)
    if variant == 0:
        return t - w
    return t - math.tanh(gamma * y) * w


def interaction_term(T: int, w: int, gamma: float, y: int, variant: str = "standard") -> float:
    """Consensus pull on one shadow weight (before multiplication by eta')."""
    if variant not in _VARIANT_CODE:
        raise ValueError(f"unknown interaction variant {variant!r}")
    return float(_interaction(float(T), float(w), float(gamma), float(y), _VARIANT_CODE[variant]))


@njit(cache=True)
def _select_units(d, K, chosen):
    """Mark the c cheapest violated units (ties by lowest index); returns how many."""
    o = 0
    for k in range(K):
        o += 1 if d[k] > 0 else -1
        chosen[k] = False
    if o > 0:
        return 0
    c = (1 - o) // 2
    for _ in range(c):
        best = -1
        for k in range(K):
            if d[k] < 0 and not chosen[k] and (best < 0 or d[k] > d[best]):
                best = k
        chosen[best] = True
    return c


@njit(cache=True)
def _accumulate_gradient(wa, xi, mu, G, d, chosen):
    """Add dE^mu/dW (entries -xi/2 on the selected units) into G."""
    K, n = xi.shape[1], xi.shape[2]
    for k in range(K):
        t = 0
        for i in range(n):
            t += xi[mu, k, i] * wa[k * n + i]
        d[k] = t
    if _select_units(d, K, chosen) == 0:
        return False
    for k in range(K):
        if chosen[k]:
            for i in range(n):
                G[k * n + i] -= 0.5 * xi[mu, k, i]
    return True


@njit(cache=True)
def _binarize(shadow, W, T, a, eps):
    N = shadow.shape[1]
    for j in range(N):
        v = shadow[a, j]
        if v == 0.0:
            v = eps
            shadow[a, j] = v
        s = 1 if v > 0 else -1
        if s != W[a, j]:
            T[j] += 2 * s
            W[a, j] = s


@njit(cache=True)
def _step(shadow, W, T, xi, batch, a, eta, eta_p, gamma, variant, G, d, chosen):
    y, N = W.shape
    m = batch.shape[0]
    G[:] = 0.0
    any_err = False
    for mu in batch:
        if _accumulate_gradient(W[a], xi, mu, G, d, chosen):
            any_err = True
    eps = eta / (2.0 * m)
    if any_err:
        scale = eta / m
        for j in range(N):
            shadow[a, j] -= scale * G[j]
    # gradient step moves W^a but T keeps the pre-step value for the interaction
    T_old = T.copy()
    _binarize(shadow, W, T, a, eps)
    if eta_p != 0.0:
        for j in range(N):
            shadow[a, j] += eta_p * _interaction(float(T_old[j]), float(W[a, j]), gamma, float(y), variant)
        _binarize(shadow, W, T, a, eps)


@njit(cache=True)
def _epoch(shadow, W, T, xi, perms, order, bsize, eta, eta_p, gamma, variant):
    y, M = perms.shape
    N = W.shape[1]
    K = xi.shape[1]
    G = np.zeros(N)
    d = np.zeros(K, dtype=np.int64)
    chosen = np.zeros(K, dtype=np.bool_)
    nxt = np.zeros(y, dtype=np.int64)
    for a in order:
        start = nxt[a] * bsize
        stop = min(start + bsize, M)
        nxt[a] += 1
        _step(shadow, W, T, xi, perms[a, start:stop], a, eta, eta_p, gamma, variant, G, d, chosen)


@njit(cache=True)
def _errors(wa, xi):
    M, K, n = xi.shape
    e = 0
    for mu in range(M):
        o = 0
        for k in range(K):
            t = 0
            for i in range(n):
                t += xi[mu, k, i] * wa[k * n + i]
            o += 1 if t > 0 else -1
        if o < 0:
            e += 1
    return e


def pattern_gradient(w, pattern, topology: Topology) -> np.ndarray:
    """Gradient of one pattern's energy w.r.t. the binary weights (flat, entries 0 or +-1/2)."""
    model._check_dims(w, pattern, topology)
    xi = np.asarray(pattern, dtype=np.int8)[None]
    G = np.zeros(topology.N)
    _accumulate_gradient(np.asarray(w, dtype=np.int64), xi, 0, G,
                         np.zeros(topology.K, np.int64), np.zeros(topology.K, np.bool_))
    return G


@dataclass
class SgdConfig:
    y: int = 7
    minibatch: int = 80
    eta: float = 1.0
    eta_prime: float = 0.0
    gamma0: float = 0.0
    dgamma: float = 0.0
    max_epochs: int = 10_000
    variant: str = "standard"
    init_scale: float = 1.0

    def __post_init__(self):
        if self.minibatch < 1:
            raise ValueError("minibatch size must be >= 1")
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be >= 1")
        if self.y < 1:
            raise ValueError("y must be >= 1")
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown interaction variant {self.variant!r}")


@dataclass
class ShadowWeights:
    """Shadow (real) weights of all replicas plus their binary view and site sums."""

    shadow: np.ndarray
    W: np.ndarray
    T: np.ndarray

    @classmethod
    def from_shadow(cls, shadow) -> "ShadowWeights":
        shadow = np.array(shadow, dtype=np.float64, ndmin=2)
        W = np.where(shadow >= 0, 1, -1).astype(np.int64)
        return cls(shadow, W, W.sum(axis=0))

    @classmethod
    def equal_start(cls, topology: Topology, y: int, rng, scale: float = 1.0) -> "ShadowWeights":
        w = model.random_weights(topology, rng).astype(np.float64) * scale
        return cls.from_shadow(np.repeat(w[None, :], y, axis=0))


def sgd_step(state: ShadowWeights, a: int, batch, patterns: PatternSet, config: SgdConfig, gamma: float) -> None:
    """One minibatch step on replica ``a`` (gradient, then consensus pull), in place."""
    N, K = patterns.topology.N, patterns.topology.K
    _step(state.shadow, state.W, state.T, patterns.xi, np.asarray(batch, dtype=np.int64), int(a),
          float(config.eta), float(config.eta_prime), float(gamma), _VARIANT_CODE[config.variant],
          np.zeros(N), np.zeros(K, np.int64), np.zeros(K, np.bool_))


def run_rsgd(patterns: PatternSet, config: SgdConfig, seed: int, progress=None) -> RunRecord:
    """Train ``y`` coupled replicas until one classifies every pattern or epochs run out."""
    started = time.time()
    t = patterns.topology
    rng = make_rng(seed, 0)
    state = ShadowWeights.equal_start(t, config.y, rng, config.init_scale)
    M, y, b = patterns.M, config.y, config.minibatch
    nb = -(-M // b)
    xi = patterns.xi
    variant = _VARIANT_CODE[config.variant]
    trace = []
    errs = [_errors(state.W[a], xi) for a in range(y)]
    status, epoch, solved_by = "timeout", 0, None
    if min(errs) == 0:
        status, solved_by = "solved", int(np.argmin(errs))
    while status != "solved" and epoch < config.max_epochs:
        gamma = config.gamma0 + epoch * config.dgamma
        perms = np.stack([rng.permutation(M) for _ in range(y)])
        order = rng.permutation(np.repeat(np.arange(y), nb))
        _epoch(state.shadow, state.W, state.T, xi, perms, order, b, float(config.eta),
               float(config.eta_prime), float(gamma), variant)
        epoch += 1
        errs = [_errors(state.W[a], xi) for a in range(y)]
        trace.append(dict(epoch=epoch, gamma=gamma, min_errors=int(min(errs)),
                          min_error_rate=min(errs) / M if M else 0.0, mean_errors=float(np.mean(errs))))
        if progress is not None:
            progress(trace[-1])
        if min(errs) == 0:
            status, solved_by = "solved", int(np.argmin(errs))
    best = int(np.argmin(errs))
    summary = dict(
        epochs=epoch,
        min_errors=int(min(errs)),
        best_min_errors=int(min([r["min_errors"] for r in trace], default=min(errs))),
        min_error_rate=(min([r["min_errors"] for r in trace], default=min(errs)) / M) if M else 0.0,
        final_gamma=config.gamma0 + max(epoch - 1, 0) * config.dgamma,
        best_replica=best,
    )
    cfg = dict(N=t.N, K=t.K, kind=t.kind, alpha=patterns.alpha, pattern_seed=patterns.seed, **asdict(config))
    rec = RunRecord(
        algorithm="rsgd",
        config=cfg,
        seed=int(seed),
        status=status,
        iterations=epoch,
        trace=trace,
        summary=summary,
        solution=state.W[solved_by].copy() if solved_by is not None else None,
    )
    return rec.stamp(started)
