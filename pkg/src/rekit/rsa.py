"""Replicated simulated annealing with the reference configuration traced out.

``y`` replicas of the binary network are sampled from

    P({W^a}) ~ exp(-beta sum_a E(W^a)) prod_j 2 cosh(gamma T_j),   T_j = sum_a W_j^a.

Flipping ``W_j^a`` changes the interaction weight by ``exp(-2 c_j)`` with
``c_j = W_j^a k_j`` and ``k_j = atanh(tanh(gamma) tanh(gamma S_j))``, where
``S_j = T_j - W_j^a``.  ``c_j`` only depends on ``u = W_j^a S_j``, so the sites of a
replica fall into ``y`` classes.  Instead of paying ``exp(-2 c_j)`` in the
acceptance, the biased sampler picks a super-class (a pair of classes ``+c, -c``)
proportionally to its size, then one of its two sides with probability
``phi(n_c, q_c, exp(-2c))``, then a uniform site of that side; only the energy
shift enters the Metropolis test, plus a small residual rejection when the whole
super-class is aligned.

Class bookkeeping uses unsorted member arrays with a position lookup table, so
every accepted flip costs O(y) besides the O(M K) cache refresh.
"""

from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass

import numpy as np
from numba import njit

from . import model
from .model import PatternSet, _refresh_pattern, _shift
from .records import RunRecord, kernel_seed, make_rng
from .specfun import atanh_prod

# beyond this super-class size the series expansion replaces the tabulated
# recursion whenever x = q - n (1 - lambda) is large enough
PHI_TABLE_Q = 256
PHI_SERIES_X = 40.0

RUNNING, SOLVED, GAVE_UP, MAX_ITERS = 0, 1, 2, 3
_STATUS = {SOLVED: "solved", GAVE_UP: "timeout", MAX_ITERS: "timeout"}
_REASON = {SOLVED: "zero-energy", GAVE_UP: "give-up", MAX_ITERS: "max-iters"}

# trace columns
TRACE_COLUMNS = ("iterations", "accepted", "beta", "gamma", "min_energy", "mean_energy",
                 "center_energy", "acceptance_rate")


# ---------------------------------------------------------------------------
# class-pick probability


@njit(cache=True)
def _phi_row(q, lam, out, off):
    """phi(n, q, lam) for n = 0..q into ``out[off:off+q+1]``.

    The upward recursion phi(n+1) = lam (n+1)/(q-n) (1 - phi(n)) amplifies
    rounding errors by lam (n+1)/(q-n) per step, so it is only run while that
    factor is <= 1; the rest of the row is filled downward from
    phi(q, q) = 1 - (1 - lam)^q, where the inverse step is contracting.
    """
    out[off] = 0.0
    if q == 0:
        return
    if lam >= 1.0:
        for n in range(q + 1):
            out[off + n] = n / q
        return
    out[off + q] = -math.expm1(q * math.log1p(-lam))
    n = 0
    while n < q and lam * (n + 1) <= (q - n):
        out[off + n + 1] = lam * (n + 1) / (q - n) * (1.0 - out[off + n])
        n += 1
    m = q
    while m - 1 > n:
        out[off + m - 1] = 1.0 - out[off + m] * (q - m + 1) / (lam * m)
        m -= 1


@njit(cache=True)
def _phi_series(n, q, lam):
    x = q - n * (1.0 - lam)
    rho = n * lam / x
    a = 1.0 - lam
    return rho * (1.0 - (1.0 - rho) * a / x * (1.0 + (1.0 - (2.0 - 3.0 * rho) * a) / x))


@njit(cache=True)
def _phi_lookup(n, q, lam, tab, have, pc):
    if q > PHI_TABLE_Q and q - n * (1.0 - lam) >= PHI_SERIES_X:
        return _phi_series(n, q, lam)
    off = q * (q + 1) // 2
    if not have[pc, q]:
        _phi_row(q, lam, tab[pc], off)
        have[pc, q] = True
    return tab[pc, off + n]


def _check_phi_args(n, q, lam):
    if not (0 <= n <= q) or q < 0:
        raise ValueError(f"need 0 <= n <= q, got n={n}, q={q}")
    if not (0.0 < lam <= 1.0):
        raise ValueError(f"need 0 < lambda <= 1, got {lam}")


def phi_exact(n: int, q: int, lam: float) -> float:
    """Class-pick probability by the (stabilised) exact recursion."""
    _check_phi_args(n, q, lam)
    row = np.empty(q + 1)
    _phi_row(int(q), float(lam), row, 0)
    return float(row[n])


def phi_series(n: int, q: int, lam: float) -> float:
    """Second-order large-x expansion of the class-pick probability."""
    _check_phi_args(n, q, lam)
    if q - n * (1.0 - lam) <= 0:
        raise ValueError("series needs x = q - n(1 - lambda) > 0")
    return float(_phi_series(int(n), int(q), float(lam)))


def phi(n: int, q: int, lam: float) -> float:
    """Probability of picking side ``K_c`` (size ``n``) of a super-class of size ``q``.

    Equals ``lam n/(q-n+1) 2F1(1, 1-n; q-n+2; lam)``.  Small super-classes use
    the exact recursion; large ones use the series once ``x >= 40``.
    """
    _check_phi_args(n, q, lam)
    if q > PHI_TABLE_Q and q - n * (1.0 - lam) >= PHI_SERIES_X:
        return float(_phi_series(int(n), int(q), float(lam)))
    return phi_exact(n, q, lam)


def interaction_field(T_j: int, w_ja: int, gamma: float, y: int) -> float:
    """Field k_j acting on replica a at site j, from the other replicas' sum."""
    S = T_j - w_ja
    if abs(S) > y - 1:
        raise ValueError("replica sum inconsistent with y")
    return float(atanh_prod(gamma * S, gamma))


def class_values(gamma: float, y: int) -> np.ndarray:
    """Values c = W_j k_j of the y classes, indexed by (u + y - 1)/2 with u = W_j S_j."""
    u = 2 * np.arange(y) - (y - 1)
    return np.array([atanh_prod(gamma * float(v), gamma) for v in u])


# ---------------------------------------------------------------------------
# compiled move machinery


@njit(cache=True)
def _move_member(b, j, old, new, cls, pos, members, count):
    p = pos[b, j]
    last = members[b, old, count[b, old] - 1]
    members[b, old, p] = last
    pos[b, last] = p
    count[b, old] -= 1
    members[b, new, count[b, new]] = j
    pos[b, j] = count[b, new]
    count[b, new] += 1
    cls[b, j] = new


@njit(cache=True)
def _build_partition(W, T, cls, pos, members, count):
    y, N = W.shape
    count[:] = 0
    for b in range(y):
        for j in range(N):
            u = W[b, j] * (T[j] - W[b, j])
            ci = (u + y - 1) // 2
            members[b, ci, count[b, ci]] = j
            pos[b, j] = count[b, ci]
            count[b, ci] += 1
            cls[b, j] = ci


@njit(cache=True)
def _propose(a, r1, r2, r3, cls, members, count, lam, tab, have, N, y):
    """Pick a site for replica ``a`` from three uniforms.

    Returns (site, class index of the site, residual acceptance factor).
    """
    j0 = min(int(r1 * N), N - 1)
    ci0 = cls[a, j0]
    cp = ci0 if 2 * ci0 >= y - 1 else y - 1 - ci0
    if 2 * cp == y - 1 or lam[cp] >= 1.0:
        return j0, ci0, 1.0
    cn = y - 1 - cp
    nc = count[a, cp]
    q = nc + count[a, cn]
    lc = lam[cp]
    if nc == q:
        side = cp
        acc = -math.expm1(q * math.log1p(-lc))
    else:
        pc = cp - (y - y // 2)
        side = cp if r2 < _phi_lookup(nc, q, lc, tab, have, pc) else cn
        acc = 1.0
    k = min(int(r3 * count[a, side]), count[a, side] - 1)
    return members[a, side, k], side, acc


@njit(cache=True)
def _flip_delta(da, sa, outa, cca, chia, xiT, k, i, w_val):
    tot = 0
    col = xiT[k, i]
    for mu in range(col.shape[0]):
        tot += _shift(da, sa, outa, cca, chia, mu, k, col[mu], w_val)
    return tot


@njit(cache=True)
def _accept_flip(a, j, W, T, d, s, out, cc, chi, cls, pos, members, count, xiT):
    y = W.shape[0]
    K, n = xiT.shape[0], xiT.shape[1]
    k = j // n
    i = j - k * n
    new = -W[a, j]
    W[a, j] = new
    da, sa, outa, cca, chia = d[a], s[a], out[a], cc[a], chi[a]
    col = xiT[k, i]
    step = 2 * new
    for mu in range(col.shape[0]):
        da[mu, k] += step * col[mu]
        _refresh_pattern(da, sa, outa, cca, chia, mu, K)
    T[j] += step
    for b in range(y):
        old = cls[b, j]
        if b == a:
            nw = y - 1 - old
        else:
            nw = old + new * W[b, j]
        if nw != old:
            _move_member(b, j, old, nw, cls, pos, members, count)


@njit(cache=True)
def _attempt(W, T, d, s, out, cc, chi, E, cls, pos, members, count, xiT,
             lam, cval, tab, have, beta, metropolis):
    """One Monte Carlo step. Returns (accepted, energy shift, replica)."""
    y, N = W.shape
    n = xiT.shape[1]
    a = min(int(np.random.random() * y), y - 1)
    r1 = np.random.random()
    r2 = np.random.random()
    r3 = np.random.random()
    r = np.random.random()
    if metropolis:
        j = min(int(r1 * N), N - 1)
        extra = 2.0 * cval[cls[a, j]]
        k = j // n
        dE = _flip_delta(d[a], s[a], out[a], cc[a], chi[a], xiT, k, j - k * n, W[a, j])
        x = -beta * dE - extra
        ok = x >= 0.0 or r < math.exp(x)
    else:
        j, ci, acc = _propose(a, r1, r2, r3, cls, members, count, lam, tab, have, N, y)
        if r >= acc:
            return False, 0, a
        k = j // n
        dE = _flip_delta(d[a], s[a], out[a], cc[a], chi[a], xiT, k, j - k * n, W[a, j])
        ok = dE <= 0 or r < acc * math.exp(-beta * dE)
    if ok:
        _accept_flip(a, j, W, T, d, s, out, cc, chi, cls, pos, members, count, xiT)
        E[a] += dE
    return ok, dE, a


@njit(cache=True)
def _set_gamma(gamma, y, lam, cval, have):
    for ci in range(y):
        u = 2 * ci - (y - 1)
        cv = atanh_prod(gamma * u, gamma)
        cval[ci] = cv
        lam[ci] = math.exp(-2.0 * cv)
    have[:] = False


@njit(cache=True)
def _config_energy(w, xiT):
    K, n, M = xiT.shape
    e = 0
    d = np.empty((1, K), dtype=np.int64)
    sc = np.empty((1, K), dtype=np.int64)
    o = np.empty(1, dtype=np.int64)
    c = np.empty(1, dtype=np.int64)
    chi = np.empty(1, dtype=np.int64)
    for mu in range(M):
        for k in range(K):
            t = 0
            for i in range(n):
                t += w[k * n + i] * xiT[k, i, mu]
            d[0, k] = t
        _refresh_pattern(d, sc, o, c, chi, 0, K)
        if o[0] < 0:
            for p in range(c[0]):
                e += sc[0, p]
    return e


@njit(cache=True)
def _seed_kernel(s):
    np.random.seed(s)


@njit(cache=True)
def _anneal(W, T, d, s, out, cc, chi, E, cls, pos, members, count, xiT,
            lam, cval, tab, have, fstate, istate, trace, metropolis, track_center):
    """Run the annealing/scoping loop until a stop condition or a full trace buffer.

    fstate = [beta, gamma, betaf, gammaf]
    istate = [iterations, accepted, acc_in_step, att_in_step, nonimproving,
              step_moves, give_up, max_iters, ntrace]
    """
    y = W.shape[0]
    beta, gamma, betaf, gammaf = fstate[0], fstate[1], fstate[2], fstate[3]
    it, acc_tot, acc_step, att_step, nonimp = istate[0], istate[1], istate[2], istate[3], istate[4]
    step_moves, give_up, max_iters, ntrace = istate[5], istate[6], istate[7], istate[8]
    status = RUNNING
    for b in range(y):
        if E[b] == 0:
            status = SOLVED
    while status == RUNNING:
        if it >= max_iters:
            status = MAX_ITERS
            break
        ok, dE, a = _attempt(W, T, d, s, out, cc, chi, E, cls, pos, members, count, xiT,
                             lam, cval, tab, have, beta, metropolis)
        it += 1
        att_step += 1
        if ok:
            acc_tot += 1
            acc_step += 1
            if dE < 0:
                nonimp = 0
            else:
                nonimp += 1
            if E[a] == 0:
                status = SOLVED
                break
        else:
            nonimp += 1
        if nonimp >= give_up:
            status = GAVE_UP
            break
        if acc_step >= step_moves:
            if ntrace < trace.shape[0]:
                row = trace[ntrace]
                row[0] = it
                row[1] = acc_tot
                row[2] = beta
                row[3] = gamma
                emin = E[0]
                esum = 0.0
                for b in range(y):
                    emin = min(emin, E[b])
                    esum += E[b]
                row[4] = emin
                row[5] = esum / y
                if track_center:
                    wc = np.empty(W.shape[1], dtype=np.int64)
                    for j in range(W.shape[1]):
                        wc[j] = 1 if T[j] >= 0 else -1
                    row[6] = _config_energy(wc, xiT)
                else:
                    row[6] = -1.0
                row[7] = acc_step / att_step
                ntrace += 1
            beta *= 1.0 + betaf
            if gammaf != 0.0:
                gamma *= 1.0 + gammaf
                _set_gamma(gamma, y, lam, cval, have)
            acc_step = 0
            att_step = 0
            if ntrace >= trace.shape[0]:
                break
    fstate[0] = beta
    fstate[1] = gamma
    istate[0], istate[1], istate[2], istate[3], istate[4] = it, acc_tot, acc_step, att_step, nonimp
    istate[8] = ntrace
    return status


@njit(cache=True)
def _histogram(W, T, d, s, out, cc, chi, E, cls, pos, members, count, xiT,
               lam, cval, tab, have, beta, metropolis, n_steps, hist):
    """Fixed beta/gamma chain; counts the visited joint state after every step."""
    y, N = W.shape
    code = 0
    for b in range(y):
        for j in range(N):
            if W[b, j] > 0:
                code |= 1 << (b * N + j)
    for _ in range(n_steps):
        ok, dE, a = _attempt(W, T, d, s, out, cc, chi, E, cls, pos, members, count, xiT,
                             lam, cval, tab, have, beta, metropolis)
        if ok:
            code = 0
            for b in range(y):
                for j in range(N):
                    if W[b, j] > 0:
                        code |= 1 << (b * N + j)
        hist[code] += 1


# ---------------------------------------------------------------------------
# Python-level state


@dataclass
class FieldClassPartition:
    """Per-replica partition of the sites by interaction class.

    ``cls[a, j]`` is the class index of site j in replica a, ``members[a, c, :count[a, c]]``
    the (unsorted) sites of class c and ``pos[a, j]`` the slot of j in its class array.
    """

    cls: np.ndarray
    pos: np.ndarray
    members: np.ndarray
    count: np.ndarray

    @classmethod
    def build(cls_, W, T) -> "FieldClassPartition":
        y, N = W.shape
        part = cls_(np.zeros((y, N), np.int64), np.zeros((y, N), np.int64),
                    np.zeros((y, y, N), np.int64), np.zeros((y, y), np.int64))
        _build_partition(W, T, part.cls, part.pos, part.members, part.count)
        return part

    def class_sets(self, a: int) -> list:
        return [set(self.members[a, c, : self.count[a, c]].tolist()) for c in range(self.count.shape[1])]

    def is_consistent(self) -> bool:
        y, N = self.cls.shape
        for a in range(y):
            if self.count[a].sum() != N:
                return False
            for c in range(y):
                m = self.members[a, c, : self.count[a, c]]
                if np.any(self.cls[a, m] != c) or np.any(self.pos[a, m] != np.arange(len(m))):
                    return False
        return True

    def same_classes(self, other: "FieldClassPartition") -> bool:
        return np.array_equal(self.cls, other.cls) and all(
            self.class_sets(a) == other.class_sets(a) for a in range(self.cls.shape[0])
        )


class ReplicaSystem:
    """``y`` replicas with their pattern caches, site sums ``T`` and class partition."""

    def __init__(self, patterns: PatternSet, W, gamma: float = 0.0):
        self.patterns = patterns
        t = patterns.topology
        W = np.array(W, dtype=np.int64, ndmin=2)
        if W.shape[1] != t.N:
            raise ValueError("replica length does not match the network")
        self.W = np.ascontiguousarray(W)
        self.y = W.shape[0]
        self.xiT = np.ascontiguousarray(np.transpose(patterns.xi, (1, 2, 0)))
        self.T = self.W.sum(axis=0)
        y, M, K = self.y, patterns.M, t.K
        self.d, self.s, self.out, self.cc, self.chi = model.empty_cache_arrays(M, K, lead=(y,))
        for a in range(y):
            c = model.build_cache(self.W[a], patterns)
            self.d[a], self.s[a], self.out[a], self.cc[a], self.chi[a] = c.fields, c.costs, c.out, c.c, c.chi
        self.E = np.array([model.total_energy(self.W[a], patterns) for a in range(y)], dtype=np.int64)
        self.partition = FieldClassPartition.build(self.W, self.T)
        npos = max(y // 2, 1)
        self.tab = np.zeros((npos, (t.N + 1) * (t.N + 2) // 2))
        self.have = np.zeros((npos, t.N + 1), dtype=np.bool_)
        self.lam = np.ones(y)
        self.cval = np.zeros(y)
        self.set_gamma(gamma)

    @classmethod
    def equal_start(cls, patterns: PatternSet, y: int, rng, gamma: float = 0.0) -> "ReplicaSystem":
        w = model.random_weights(patterns.topology, rng)
        return cls(patterns, np.repeat(w[None, :], y, axis=0), gamma)

    def set_gamma(self, gamma: float) -> None:
        self.gamma = float(gamma)
        _set_gamma(self.gamma, self.y, self.lam, self.cval, self.have)

    @property
    def N(self) -> int:
        return self.W.shape[1]

    def cache(self, a: int) -> model.PatternCache:
        return model.PatternCache(self.d[a], self.s[a], self.out[a], self.cc[a], self.chi[a])

    def center(self) -> np.ndarray:
        return center_config(self)

    def flip(self, a: int, j: int) -> int:
        """Flip W_j^a unconditionally, keeping all bookkeeping in sync; returns the energy shift."""
        n = self.patterns.topology.n
        k = j // n
        dE = int(_flip_delta(self.d[a], self.s[a], self.out[a], self.cc[a], self.chi[a],
                             self.xiT, k, j - k * n, self.W[a, j]))
        p = self.partition
        _accept_flip(a, j, self.W, self.T, self.d, self.s, self.out, self.cc, self.chi,
                     p.cls, p.pos, p.members, p.count, self.xiT)
        self.E[a] += dE
        return dE

    def check_consistency(self) -> None:
        """Raise AssertionError if any derived quantity disagrees with a rebuild."""
        assert np.array_equal(self.T, self.W.sum(axis=0)), "site sums out of sync"
        for a in range(self.y):
            fresh = model.build_cache(self.W[a], self.patterns)
            assert self.cache(a).equals(fresh), f"cache of replica {a} out of sync"
            assert self.E[a] == model.total_energy(self.W[a], self.patterns), "energy out of sync"
        assert self.partition.is_consistent(), "partition lookup broken"
        assert self.partition.same_classes(FieldClassPartition.build(self.W, self.T)), "classes out of sync"

    def _args(self):
        p = self.partition
        return (self.W, self.T, self.d, self.s, self.out, self.cc, self.chi, self.E,
                p.cls, p.pos, p.members, p.count, self.xiT, self.lam, self.cval, self.tab, self.have)


def center_config(system: ReplicaSystem) -> np.ndarray:
    """Site-wise majority of the replicas (ties -> +1)."""
    return model.sign(system.T)


def propose_move(system: ReplicaSystem, rng) -> tuple:
    """Draw (replica, class index, site, residual acceptance) with the biased proposal."""
    a = int(rng.integers(system.y))
    r1, r2, r3 = rng.random(3)
    p = system.partition
    j, ci, acc = _propose(a, r1, r2, r3, p.cls, p.members, p.count, system.lam,
                          system.tab, system.have, system.N, system.y)
    return a, int(ci), int(j), float(acc)


def residual_acceptance(c: float, n_c: int, q_c: int) -> float:
    """Extra acceptance factor a_c of a flip picked from the favoured side of a super-class."""
    if c > 0 and n_c == q_c:
        return float(-math.expm1(q_c * math.log1p(-math.exp(-2.0 * c))))
    return 1.0


def acceptance_probability(dE: float, beta: float, c: float, n_c: int, q_c: int) -> float:
    return min(1.0, math.exp(-beta * dE)) * residual_acceptance(c, n_c, q_c)


def accept_move(dE, beta, c, n_c, q_c, rng) -> bool:
    return bool(rng.random() < acceptance_probability(dE, beta, c, n_c, q_c))


def sample_histogram(system: ReplicaSystem, beta: float, n_steps: int, seed: int,
                     proposal: str = "biased") -> np.ndarray:
    """Visit counts of every joint replica state along a fixed-temperature chain.

    State code: bit ``a*N + j`` is set iff ``W_j^a = +1``. Only for tiny systems.
    """
    nbits = system.y * system.N
    if nbits > 26:
        raise ValueError("state space too large for a histogram")
    hist = np.zeros(1 << nbits, dtype=np.int64)
    _seed_kernel(kernel_seed(seed, 1))
    _histogram(*system._args(), float(beta), proposal == "metropolis", int(n_steps), hist)
    return hist


# ---------------------------------------------------------------------------
# annealing driver


@dataclass
class SaSchedule:
    """Annealing (beta) and scoping (gamma) schedule.

    Both are multiplied by (1 + factor) every ``step_moves`` accepted moves
    (default 1000 y). The run gives up after ``give_up`` consecutive
    non-improving moves (default 1000 N y).
    """

    beta0: float = 1.0
    betaf: float = 0.0
    gamma0: float = 0.0
    gammaf: float = 0.0
    step_moves: int | None = None
    give_up: int | None = None

    def __post_init__(self):
        if not self.beta0 > 0:
            raise ValueError("beta0 must be positive")
        if self.betaf < 0 or self.gammaf < 0 or self.gamma0 < 0:
            raise ValueError("schedule factors and gamma0 must be non-negative")


def run_sa(patterns: PatternSet, y: int, schedule: SaSchedule, seed: int,
           max_iters: int = 10**9, proposal: str = "biased", track_center: bool = True,
           trace_buffer: int = 4096) -> RunRecord:
    """Anneal ``y`` equally initialised replicas until one of them has zero energy.

    ``iterations`` in the record counts attempted moves over all replicas.
    """
    if proposal not in ("biased", "metropolis"):
        raise ValueError(f"unknown proposal {proposal!r}")
    if y < 1:
        raise ValueError("y must be >= 1")
    started = time.time()
    t = patterns.topology
    system = ReplicaSystem.equal_start(patterns, y, make_rng(seed, 0), schedule.gamma0)
    step_moves = schedule.step_moves or 1000 * y
    give_up = schedule.give_up or 1000 * t.N * y
    fstate = np.array([schedule.beta0, schedule.gamma0, schedule.betaf, schedule.gammaf])
    istate = np.array([0, 0, 0, 0, 0, step_moves, give_up, max_iters, 0], dtype=np.int64)
    _seed_kernel(kernel_seed(seed, 1))
    rows = []
    while True:
        trace = np.zeros((trace_buffer, len(TRACE_COLUMNS)))
        istate[8] = 0
        status = _anneal(*system._args(), fstate, istate, trace, proposal == "metropolis", track_center)
        rows.extend(trace[: istate[8]].tolist())
        if status != RUNNING:
            break
    best = int(np.argmin(system.E))
    center = center_config(system)
    summary = dict(
        reason=_REASON[status],
        accepted=int(istate[1]),
        schedule_steps=len(rows),
        final_beta=float(fstate[0]),
        final_gamma=float(fstate[1]),
        energies=system.E.tolist(),
        min_energy=int(system.E[best]),
        center_energy=model.total_energy(center, patterns),
        best_replica=best,
    )
    trace_dicts = [
        {c: (int(v) if c in ("iterations", "accepted") else float(v)) for c, v in zip(TRACE_COLUMNS, r)}
        for r in rows
    ]
    config = dict(N=t.N, K=t.K, kind=t.kind, alpha=patterns.alpha, pattern_seed=patterns.seed, y=y,
                  proposal=proposal, max_iters=int(max_iters), **asdict(schedule))
    config.update(step_moves=step_moves, give_up=give_up)
    rec = RunRecord(
        algorithm="rsa",
        config=config,
        seed=int(seed),
        status=_STATUS[status],
        iterations=int(istate[0]),
        trace=trace_dicts,
        summary=summary,
        solution=system.W[best].copy() if status == SOLVED else None,
    )
    return rec.stamp(started)
