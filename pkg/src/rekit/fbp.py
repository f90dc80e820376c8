"""Belief propagation with focusing and reinforcement for binary networks.

All messages are stored as fields, ``h = atanh(m)``, clipped to ``+-H_MAX``.

Variables are the synapses ``W_j`` and, for committees, the hidden outputs
``tau_{mu k}``.  Factors are the first-layer constraints
``Theta(tau ξ^{mu k}·W_k)``, the second-layer majority ``Theta(sum_k tau_k)``
and one external field ``h_star`` per synapse.  A hidden output has exactly two
neighbours, so its messages are the factor messages themselves:

* ``h_fv[mu, k, i]``: first-layer factor -> synapse
* ``h_fo[mu, k]``: first-layer factor -> tau (= tau -> majority)
* ``h_go[mu, k]``: majority -> tau (= tau -> first-layer factor)

The external field implements the replicated reference system traced out on
a symmetric fixed point (focusing), or a copy of the current field
(reinforcement).  First-layer factors are Gaussian (central limit) or exact
(convolution); the majority is always exact.
"""

from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np
from numba import njit

from . import model
from .model import PatternSet
from .records import RunRecord, make_rng
from .specfun import (LOG2, SQRT2, atanh_erf, atanh_prod, log_ndtr, logaddexp, logcosh, sech2,
                      softplus, stable_atanh_erf)

H_MAX = 30.0
# fan-in up to which the first layer uses the exact convolution in "auto" mode
EXACT_FAN_IN = 64
# Gaussian variances are floored here; all-saturated inputs are deterministic
_B_EPS = 1e-12
# the erf-ratio form of the cavity message is used while |argument| stays below
# this and the output message is not saturated; the log form is used elsewhere
_FAST_X = 4.0
_FAST_H = 5.0

NONE, FBP, RBP = 0, 1, 2
MODES = ("bp", "fbp", "rbp")

__all__ = [
    "H_MAX", "CavityGraph", "FbpProtocol", "ConvergenceReport", "focusing_message",
    "reinforcement_message", "ramp_map", "variable_update", "factor_update", "solve_fbp",
    "stable_atanh_erf",
]


# ---------------------------------------------------------------------------
# scalar rules


@njit(cache=True)
def _clip(h):
    if h > H_MAX:
        return H_MAX
    if h < -H_MAX:
        return -H_MAX
    return h


@njit(cache=True)
def _focus_field(hc, gamma, y):
    """Field sent by the traced reference to a synapse with cavity field hc."""
    if y == 1.0 or gamma == 0.0:
        return 0.0
    return atanh_prod((y - 1.0) * atanh_prod(hc, gamma), gamma)


def focusing_message(m_to_ref: float, gamma: float, y: float) -> float:
    """Magnetization sent back by the reference: tanh((y-1) atanh(m tanh g)) tanh g."""
    if y == 1 or gamma == 0:
        return 0.0
    t = 1.0 if math.isinf(gamma) else math.tanh(gamma)
    return math.tanh((y - 1) * math.atanh(m_to_ref * t)) * t


def reinforcement_message(m: float, rho: float) -> float:
    """tanh(rho atanh(m)); saturated marginals stay saturated for rho > 0."""
    if rho == 0:
        return 0.0
    if abs(m) >= 1:
        return math.copysign(1.0, m)
    return math.tanh(rho * math.atanh(m))


def ramp_map(rho: float, x: float) -> tuple[float, float]:
    """(gamma, y) of the focusing schedule equivalent to reinforcement rho along x.

    x = 0 reaches the reinforcement limit (gamma = inf, y = 1 + rho/(1-rho)).
    """
    if not 0.0 <= rho < 1.0:
        raise ValueError("rho must lie in [0, 1)")
    gamma = math.inf if x == 0 else math.atanh(rho ** x)
    return gamma, 1.0 + rho ** (1.0 - 2.0 * x) / (1.0 - rho)


def variable_update(incoming, h_star: float = 0.0):
    """Cavity fields towards each neighbour and the total field of one variable."""
    h = np.asarray(incoming, dtype=np.float64)
    total = float(h.sum() + h_star)
    return np.clip(total - h, -H_MAX, H_MAX), total


# ---------------------------------------------------------------------------
# first-layer factor


@njit(cache=True)
def _tau_logs(h_go, clamped):
    """log P(tau=+1), log P(tau=-1) from the field on a hidden output."""
    if clamped:
        return 0.0, -math.inf
    return -softplus(-2.0 * h_go), -softplus(2.0 * h_go)


@njit(cache=True)
def _gauss_moments(xi_row, cav, m, s):
    a = 0.0
    b = 0.0
    for i in range(cav.shape[0]):
        m[i] = math.tanh(cav[i])
        s[i] = sech2(cav[i])
        a += xi_row[i] * m[i]
        b += s[i]
    return a, max(b, _B_EPS)


@njit(cache=True)
def _gauss_out(a, b):
    return _clip(atanh_erf(a / math.sqrt(2.0 * b)))


@njit(cache=True)
def _gauss_logz(a, b, lp, lm):
    z = a / math.sqrt(b)
    return logaddexp(lp + log_ndtr(z), lm + log_ndtr(-z))


@njit(cache=True)
def _gauss_in(xi_row, m, s, a, b, h_go, clamped, out):
    lp, lm = _tau_logs(h_go, clamped)
    mt = 1.0 if clamped else math.tanh(h_go)
    fast_tau = clamped or abs(h_go) < _FAST_H
    for i in range(m.shape[0]):
        x = xi_row[i]
        ac = a - x * m[i]
        bc = b - s[i]
        if bc < _B_EPS:
            bc = _B_EPS
        sq = math.sqrt(bc)
        xp = (ac + x) / sq
        xm = (ac - x) / sq
        if fast_tau and abs(xp) < _FAST_X and abs(xm) < _FAST_X:
            gp = math.erf(xp / SQRT2)
            gm = math.erf(xm / SQRT2)
            r = mt * (gp - gm) / (2.0 + mt * (gp + gm))
            out[i] = _clip(math.atanh(r))
        else:
            lfp = logaddexp(lp + log_ndtr(xp), lm + log_ndtr(-xp))
            lfm = logaddexp(lp + log_ndtr(xm), lm + log_ndtr(-xm))
            out[i] = _clip(0.5 * (lfp - lfm))


@njit(cache=True)
def _exact_tables(xi_row, cav, pre, suf):
    """Prefix/suffix distributions of the number of aligned inputs."""
    n = cav.shape[0]
    pre[0, :] = 0.0
    pre[0, 0] = 1.0
    for i in range(n):
        p = 1.0 / (1.0 + math.exp(-2.0 * xi_row[i] * cav[i]))
        pre[i + 1, 0] = pre[i, 0] * (1.0 - p)
        for c in range(1, i + 2):
            pre[i + 1, c] = pre[i, c] * (1.0 - p) + pre[i, c - 1] * p
    suf[n, :] = 0.0
    suf[n, 0] = 1.0
    for i in range(n - 1, -1, -1):
        p = 1.0 / (1.0 + math.exp(-2.0 * xi_row[i] * cav[i]))
        ln = n - i
        suf[i, 0] = suf[i + 1, 0] * (1.0 - p)
        for c in range(1, ln + 1):
            suf[i, c] = suf[i + 1, c] * (1.0 - p) + suf[i + 1, c - 1] * p


@njit(cache=True)
def _log_tails(dist, length, thr):
    """log P(count >= thr), log P(count < thr) for a distribution over 0..length-1."""
    up = 0.0
    lo = 0.0
    for c in range(length):
        if c >= thr:
            up += dist[c]
        else:
            lo += dist[c]
    lu = math.log(up) if up > 0 else -math.inf
    ll = math.log(lo) if lo > 0 else -math.inf
    return lu, ll


@njit(cache=True)
def _half_log_ratio(lf_plus, lf_minus):
    if lf_plus == lf_minus:
        return 0.0
    if lf_minus == -math.inf:
        return H_MAX
    if lf_plus == -math.inf:
        return -H_MAX
    return _clip(0.5 * (lf_plus - lf_minus))


@njit(cache=True)
def _exact_out(pre, n):
    # ξ·W > 0 iff more than n/2 inputs are aligned (n odd)
    lu, ll = _log_tails(pre[n], n + 1, (n + 1) // 2)
    return _half_log_ratio(lu, ll), lu, ll


@njit(cache=True)
def _exact_in(xi_row, pre, suf, h_go, clamped, dist, out):
    n = xi_row.shape[0]
    lp, lm = _tau_logs(h_go, clamped)
    half = (n + 1) // 2
    for j in range(n):
        # count distribution of the other n-1 inputs
        for c in range(n):
            dist[c] = 0.0
        for c1 in range(j + 1):
            p1 = pre[j, c1]
            if p1 == 0.0:
                continue
            for c2 in range(n - j):
                dist[c1 + c2] += p1 * suf[j + 1, c2]
        # aligned input (xi_j sigma_j = +1) adds one to the count
        au, al = _log_tails(dist, n, half - 1)
        bu, bl = _log_tails(dist, n, half)
        lf_al = logaddexp(lp + au, lm + al)
        lf_anti = logaddexp(lp + bu, lm + bl)
        if xi_row[j] > 0:
            out[j] = _half_log_ratio(lf_al, lf_anti)
        else:
            out[j] = _half_log_ratio(lf_anti, lf_al)


# ---------------------------------------------------------------------------
# second layer


@njit(cache=True)
def _majority(h_fo_row, out, lp_buf, lm_buf, dist):
    """Exact majority messages to every hidden output; returns log P(majority holds)."""
    K = h_fo_row.shape[0]
    for k in range(K):
        lp_buf[k] = -softplus(-2.0 * h_fo_row[k])
        lm_buf[k] = -softplus(2.0 * h_fo_row[k])
    half = (K + 1) // 2
    for k in range(K):
        dist[0] = 0.0
        for c in range(1, K):
            dist[c] = -math.inf
        L = 1
        for l in range(K):
            if l == k:
                continue
            dist[L] = -math.inf
            for c in range(L, 0, -1):
                dist[c] = logaddexp(dist[c] + lm_buf[l], dist[c - 1] + lp_buf[l])
            dist[0] = dist[0] + lm_buf[l]
            L += 1
        fp = -math.inf
        fm = -math.inf
        for c in range(K):
            if c >= half - 1:
                fp = logaddexp(fp, dist[c])
            if c >= half:
                fm = logaddexp(fm, dist[c])
        out[k] = _half_log_ratio(fp, fm)
    # full distribution for the free-entropy term
    dist[0] = 0.0
    for c in range(1, K + 1):
        dist[c] = -math.inf
    for l in range(K):
        for c in range(l + 1, 0, -1):
            dist[c] = logaddexp(dist[c] + lm_buf[l], dist[c - 1] + lp_buf[l])
        dist[0] = dist[0] + lm_buf[l]
    z = -math.inf
    for c in range(half, K + 1):
        z = logaddexp(z, dist[c])
    return z


# ---------------------------------------------------------------------------
# sweeps


@njit(cache=True)
def _dm(old, new):
    return abs(new - old)


@njit(cache=True)
def _pattern_update(mu, xi, H, h_fv, h_fo, h_go, damping, exact, perceptron,
                    cav, m, s, ab, pre, suf, dist, fv_new, go_new, lp_buf, lm_buf, mdist):
    """Recompute every message of pattern mu from the current total fields.

    Writes new damped values in place and updates H; returns the largest
    field change.
    """
    K, n = xi.shape[1], xi.shape[2]
    delta = 0.0
    # outputs of the first layer
    for k in range(K):
        for i in range(n):
            cav[k, i] = H[k * n + i] - h_fv[mu, k, i]
        if exact:
            _exact_tables(xi[mu, k], cav[k], pre[k], suf[k])
            new, _, _ = _exact_out(pre[k], n)
        else:
            a, b = _gauss_moments(xi[mu, k], cav[k], m[k], s[k])
            ab[k, 0] = a
            ab[k, 1] = b
            new = _gauss_out(a, b)
        new = damping * h_fo[mu, k] + (1.0 - damping) * new
        delta = max(delta, _dm(h_fo[mu, k], new))
        h_fo[mu, k] = new
    # majority
    if not perceptron:
        _majority(h_fo[mu], go_new, lp_buf, lm_buf, mdist)
        for k in range(K):
            new = damping * h_go[mu, k] + (1.0 - damping) * go_new[k]
            delta = max(delta, _dm(h_go[mu, k], new))
            h_go[mu, k] = new
    # inputs of the first layer
    for k in range(K):
        if exact:
            _exact_in(xi[mu, k], pre[k], suf[k], h_go[mu, k], perceptron, dist, fv_new)
        else:
            _gauss_in(xi[mu, k], m[k], s[k], ab[k, 0], ab[k, 1], h_go[mu, k], perceptron, fv_new)
        for i in range(n):
            old = h_fv[mu, k, i]
            new = damping * old + (1.0 - damping) * fv_new[i]
            delta = max(delta, _dm(old, new))
            h_fv[mu, k, i] = new
            H[k * n + i] += new - old
    return delta


@njit(cache=True)
def _focus_update(H, h_star, mode, gamma, y, rho, damping):
    delta = 0.0
    for j in range(H.shape[0]):
        old = h_star[j]
        if mode == FBP:
            new = _focus_field(H[j] - old, gamma, y)
        elif mode == RBP:
            new = rho * H[j]
        else:
            new = 0.0
        new = _clip(damping * old + (1.0 - damping) * new)
        delta = max(delta, _dm(old, new))
        h_star[j] = new
        H[j] += new - old
    return delta


@njit(cache=True)
def _recompute_totals(h_fv, h_star, H):
    M, K, n = h_fv.shape
    for j in range(H.shape[0]):
        H[j] = h_star[j]
    for mu in range(M):
        for k in range(K):
            for i in range(n):
                H[k * n + i] += h_fv[mu, k, i]


@njit(cache=True)
def _sweep(xi, H, h_fv, h_fo, h_go, h_star, order, synchronous, damping, exact, perceptron,
           mode, gamma, y, rho):
    M, K, n = xi.shape
    cav = np.empty((K, n))
    m = np.empty((K, n))
    s = np.empty((K, n))
    ab = np.empty((K, 2))
    if exact:
        pre = np.zeros((K, n + 1, n + 1))
        suf = np.zeros((K, n + 1, n + 1))
    else:
        pre = np.zeros((K, 1, 1))
        suf = np.zeros((K, 1, 1))
    dist = np.empty(n + 1)
    fv_new = np.empty(n)
    go_new = np.empty(K)
    lp_buf = np.empty(K)
    lm_buf = np.empty(K)
    mdist = np.empty(K + 1)
    delta = 0.0
    if synchronous:
        # every factor reads the fields of the previous sweep
        H0 = H.copy()
        for mu in range(M):
            delta = max(delta, _sync_pattern(mu, xi, H0, h_fv, h_fo, h_go, damping, exact, perceptron,
                                             cav, m, s, ab, pre, suf, dist, fv_new, go_new,
                                             lp_buf, lm_buf, mdist))
        _recompute_totals(h_fv, h_star, H)
    else:
        for mu in order:
            delta = max(delta, _pattern_update(mu, xi, H, h_fv, h_fo, h_go, damping, exact, perceptron,
                                               cav, m, s, ab, pre, suf, dist, fv_new, go_new,
                                               lp_buf, lm_buf, mdist))
    delta = max(delta, _focus_update(H, h_star, mode, gamma, y, rho, damping))
    return delta


@njit(cache=True)
def _sync_pattern(mu, xi, H0, h_fv, h_fo, h_go, damping, exact, perceptron,
                  cav, m, s, ab, pre, suf, dist, fv_new, go_new, lp_buf, lm_buf, mdist):
    """Like _pattern_update, but every message of pattern mu is computed from old values."""
    K, n = xi.shape[1], xi.shape[2]
    delta = 0.0
    fo_new = np.empty(K)
    for k in range(K):
        for i in range(n):
            cav[k, i] = H0[k * n + i] - h_fv[mu, k, i]
        if exact:
            _exact_tables(xi[mu, k], cav[k], pre[k], suf[k])
            fo_new[k], _, _ = _exact_out(pre[k], n)
        else:
            a, b = _gauss_moments(xi[mu, k], cav[k], m[k], s[k])
            ab[k, 0] = a
            ab[k, 1] = b
            fo_new[k] = _gauss_out(a, b)
    if not perceptron:
        _majority(h_fo[mu], go_new, lp_buf, lm_buf, mdist)
    for k in range(K):
        if exact:
            _exact_in(xi[mu, k], pre[k], suf[k], h_go[mu, k], perceptron, dist, fv_new)
        else:
            _gauss_in(xi[mu, k], m[k], s[k], ab[k, 0], ab[k, 1], h_go[mu, k], perceptron, fv_new)
        for i in range(n):
            old = h_fv[mu, k, i]
            new = damping * old + (1.0 - damping) * fv_new[i]
            delta = max(delta, _dm(old, new))
            h_fv[mu, k, i] = new
        new = damping * h_fo[mu, k] + (1.0 - damping) * fo_new[k]
        delta = max(delta, _dm(h_fo[mu, k], new))
        h_fo[mu, k] = new
        if not perceptron:
            new = damping * h_go[mu, k] + (1.0 - damping) * go_new[k]
            delta = max(delta, _dm(h_go[mu, k], new))
            h_go[mu, k] = new
    return delta


# ---------------------------------------------------------------------------
# free entropy


@njit(cache=True)
def _nsum_add(acc, comp, x):
    # Neumaier compensated summation
    t = acc + x
    if abs(acc) >= abs(x):
        comp += (acc - t) + x
    else:
        comp += (x - t) + acc
    return t, comp


@njit(cache=True)
def _bethe(xi, H, h_fv, h_fo, h_go, h_star, exact, perceptron, gamma, y):
    """Free entropy pieces of one replica's graph and of the traced reference.

    Returns (replica part, reference part, reference marginal entropy, overlap sum).
    """
    M, K, n = xi.shape
    N = H.shape[0]
    acc = 0.0
    comp = 0.0
    cav = np.empty(n)
    m = np.empty(n)
    s = np.empty(n)
    sz = n + 1 if exact else 1
    pre = np.zeros((sz, sz))
    suf = np.zeros((sz, sz))
    go_new = np.empty(K)
    lp_buf = np.empty(K)
    lm_buf = np.empty(K)
    mdist = np.empty(K + 1)
    for mu in range(M):
        for k in range(K):
            for i in range(n):
                cav[i] = H[k * n + i] - h_fv[mu, k, i]
            lp, lm = _tau_logs(h_go[mu, k], perceptron)
            if exact:
                _exact_tables(xi[mu, k], cav, pre, suf)
                _, lu, ll = _exact_out(pre, n)
                z = logaddexp(lp + lu, lm + ll)
            else:
                a, b = _gauss_moments(xi[mu, k], cav, m, s)
                z = _gauss_logz(a, b, lp, lm)
            acc, comp = _nsum_add(acc, comp, z)
            if not perceptron:
                # hidden output with two neighbours
                h1 = h_fo[mu, k]
                h2 = h_go[mu, k]
                acc, comp = _nsum_add(acc, comp, LOG2 + logcosh(h1) + logcosh(h2) - logcosh(h1 + h2))
        if not perceptron:
            acc, comp = _nsum_add(acc, comp, _majority(h_fo[mu], go_new, lp_buf, lm_buf, mdist))
    # synapses: M pattern edges plus the reference edge
    for j in range(N):
        k = j // n
        i = j - k * n
        Hj = H[j]
        acc, comp = _nsum_add(acc, comp, LOG2 - M * logcosh(Hj))
        for mu in range(M):
            acc, comp = _nsum_add(acc, comp, logcosh(Hj - h_fv[mu, k, i]))
        acc, comp = _nsum_add(acc, comp, logcosh(Hj - h_star[j]))
    ref = 0.0
    ref_c = 0.0
    ent = 0.0
    ent_c = 0.0
    ovl = 0.0
    t = math.tanh(gamma)
    for j in range(N):
        hc = H[j] - h_star[j]
        u = atanh_prod(hc, gamma)
        hv = (y - 1.0) * u
        # pair factor between synapse and reference
        zpsi = logaddexp(gamma + logcosh(hc + hv), -gamma + logcosh(hc - hv))
        acc, comp = _nsum_add(acc, comp, zpsi - LOG2 - logcosh(hc) - logcosh(hv))
        ref, ref_c = _nsum_add(ref, ref_c, LOG2 + (1.0 - y) * logcosh(y * u) + y * logcosh(hv))
        yu = y * u
        ent, ent_c = _nsum_add(ent, ent_c, LOG2 + logcosh(yu) - yu * math.tanh(yu))
        mm = math.tanh(hc)
        v = math.tanh(hv)
        ovl += (t + mm * v) / (1.0 + t * mm * v)
    return acc + comp, ref + ref_c, ent + ent_c, ovl


# ---------------------------------------------------------------------------
# graph object


@dataclass
class ConvergenceReport:
    converged: bool
    sweeps: int
    delta: float
    finite: bool = True


class CavityGraph:
    """Message store and update loop for one pattern set.

    ``first_layer`` is "gaussian", "exact" or "auto" (exact up to ``EXACT_FAN_IN``
    inputs per unit).  ``schedule`` is "sequential" (patterns in a fresh random
    order every sweep, fields refreshed after each pattern) or "synchronous".
    """

    def __init__(self, patterns: PatternSet, first_layer: str = "auto", schedule: str = "sequential",
                 damping: float = 0.0, noise: float = 1e-3, seed: int = 0):
        if first_layer not in ("auto", "exact", "gaussian"):
            raise ValueError(f"unknown first-layer mode {first_layer!r}")
        if schedule not in ("sequential", "synchronous"):
            raise ValueError(f"unknown schedule {schedule!r}")
        if not 0.0 <= damping < 1.0:
            raise ValueError("damping must lie in [0, 1)")
        self.patterns = patterns
        t = patterns.topology
        self.xi = np.ascontiguousarray(patterns.xi, dtype=np.int8)
        M, K, n = patterns.M, t.K, t.n
        self.exact = first_layer == "exact" or (first_layer == "auto" and n <= EXACT_FAN_IN)
        self.synchronous = schedule == "synchronous"
        self.perceptron = K == 1
        self.damping = float(damping)
        self.rng = make_rng(seed, 2)
        self.h_fv = self.rng.uniform(-noise, noise, size=(M, K, n)) if noise > 0 else np.zeros((M, K, n))
        self.h_fo = np.zeros((M, K))
        self.h_go = np.zeros((M, K))
        self.h_star = np.zeros(t.N)
        self.H = np.zeros(t.N)
        _recompute_totals(self.h_fv, self.h_star, self.H)
        self.mode, self.gamma, self.y, self.rho = NONE, 0.0, 1.0, 0.0

    # -- parameters
    def set_focusing(self, gamma: float, y: float) -> None:
        if gamma < 0 or y < 1:
            raise ValueError("need gamma >= 0 and y >= 1")
        self.mode, self.gamma, self.y, self.rho = FBP, float(gamma), float(y), 0.0

    def set_reinforcement(self, rho: float) -> None:
        if not 0 <= rho <= 1:
            raise ValueError("rho must lie in [0, 1]")
        self.mode, self.gamma, self.y, self.rho = RBP, 0.0, 1.0, float(rho)

    def set_plain(self) -> None:
        self.mode, self.gamma, self.y, self.rho = NONE, 0.0, 1.0, 0.0

    def perturb(self, noise: float) -> None:
        """Add uniform noise in [-noise, noise] to the factor-to-synapse fields."""
        if noise > 0:
            self.h_fv += self.rng.uniform(-noise, noise, size=self.h_fv.shape)
            _recompute_totals(self.h_fv, self.h_star, self.H)

    # -- iteration
    def sweep(self) -> float:
        order = self.rng.permutation(self.patterns.M) if not self.synchronous else np.arange(self.patterns.M)
        return float(_sweep(self.xi, self.H, self.h_fv, self.h_fo, self.h_go, self.h_star, order,
                            self.synchronous, self.damping, self.exact, self.perceptron,
                            self.mode, self.gamma, self.y, self.rho))

    def iterate(self, max_sweeps: int = 1000, tol: float = 1e-5) -> ConvergenceReport:
        delta = math.inf
        for t in range(1, max_sweeps + 1):
            delta = self.sweep()
            if not np.isfinite(delta) or not np.all(np.isfinite(self.H)):
                return ConvergenceReport(False, t, float("nan"), finite=False)
            if delta < tol:
                return ConvergenceReport(True, t, delta)
        return ConvergenceReport(False, max_sweeps, delta)

    # -- readouts
    def magnetizations(self) -> np.ndarray:
        return np.tanh(self.H)

    def weights(self) -> np.ndarray:
        return np.where(self.H >= 0, 1, -1).astype(np.int8)

    def observables(self) -> dict:
        """Overlap q, replica/reference overlap S, distance and local entropy.

        The local entropy needs a finite coupling; it is NaN otherwise.
        """
        N = self.patterns.topology.N
        m = self.magnetizations()
        out = dict(q=float(np.mean(m * m)))
        y = self.y if self.mode == FBP else 1.0
        gamma = self.gamma if self.mode == FBP else 0.0
        if math.isinf(gamma):
            out.update(S=1.0, distance=0.0, free_entropy=math.nan, local_entropy=math.nan)
            return out
        rep, ref, ent, ovl = _bethe(self.xi, self.H, self.h_fv, self.h_fo, self.h_go, self.h_star,
                                    self.exact, self.perceptron, gamma, y)
        S = ovl / N
        phi = (y * rep + ref - ent) / (N * y)
        out.update(S=float(S), distance=float((1 - S) / 2), free_entropy=float(phi),
                   local_entropy=float(phi - gamma * S), bethe=float(y * rep + ref))
        return out


def factor_update(m_in, xi_row, m_tau: float | None = None, mode: str = "gaussian"):
    """Messages of one first-layer factor.

    ``m_in`` are the cavity magnetizations of the inputs, ``m_tau`` that of the
    hidden output (None for a clamped perceptron output).  Returns the
    magnetizations sent to each input and to the output.
    """
    m_in = np.asarray(m_in, dtype=np.float64)
    xi_row = np.asarray(xi_row, dtype=np.int8)
    cav = np.clip(np.arctanh(np.clip(m_in, -1.0, 1.0)), -H_MAX, H_MAX)
    n = cav.shape[0]
    clamped = m_tau is None
    h_go = H_MAX if clamped else float(np.clip(np.arctanh(m_tau), -H_MAX, H_MAX))
    out = np.empty(n)
    if mode == "exact":
        pre = np.zeros((n + 1, n + 1))
        suf = np.zeros((n + 1, n + 1))
        _exact_tables(xi_row, cav, pre, suf)
        h_out, _, _ = _exact_out(pre, n)
        _exact_in(xi_row, pre, suf, h_go, clamped, np.empty(n + 1), out)
    elif mode == "gaussian":
        m = np.empty(n)
        s = np.empty(n)
        a, b = _gauss_moments(xi_row, cav, m, s)
        h_out = _gauss_out(a, b)
        _gauss_in(xi_row, m, s, a, b, h_go, clamped, out)
    else:
        raise ValueError(f"unknown factor mode {mode!r}")
    return np.tanh(out), math.tanh(h_out)


# ---------------------------------------------------------------------------
# protocols


@dataclass
class FbpProtocol:
    """Annealing protocol for the focusing / reinforcement parameters.

    mode "fbp" walks ``gammas`` at fixed ``y``; "rbp" walks ``rhos``;
    "joint" walks ``rhos`` and maps each to (gamma, y) with ``ramp_map(rho, x)``;
    "bp" runs plain BP once.  ``step_noise`` re-perturbs the messages at the
    start of every step, so that a symmetric fixed point reached at small
    coupling can still break later on the ramp.
    """

    mode: str = "fbp"
    y: float = 7.0
    gammas: list = field(default_factory=lambda: list(np.round(np.arange(0.0, 2.51, 0.1), 10)))
    rhos: list = field(default_factory=list)
    x: float = 0.5
    damping: float = 0.0
    max_sweeps: int = 1000
    tol: float = 1e-5
    first_layer: str = "auto"
    schedule: str = "sequential"
    noise: float = 1e-3
    step_noise: float = 0.0
    patience: int = 0
    entropy: bool = True
    stop_when_solved: bool = True

    def __post_init__(self):
        if self.mode not in ("bp", "fbp", "rbp", "joint"):
            raise ValueError(f"unknown protocol mode {self.mode!r}")
        if self.mode in ("rbp", "joint") and not len(self.rhos):
            raise ValueError(f"mode {self.mode!r} needs a rho schedule")
        if self.mode == "fbp" and not len(self.gammas):
            raise ValueError("mode 'fbp' needs a gamma schedule")
        if self.noise < 0 or self.step_noise < 0:
            raise ValueError("noise amplitudes must be >= 0")
        self.gammas = [float(g) for g in self.gammas]
        self.rhos = [float(r) for r in self.rhos]

    def steps(self):
        if self.mode == "bp":
            return [("bp", 0.0, 1.0, 0.0)]
        if self.mode == "fbp":
            return [("fbp", g, float(self.y), 0.0) for g in self.gammas]
        if self.mode == "rbp":
            return [("rbp", 0.0, 1.0, r) for r in self.rhos]
        return [("fbp", *ramp_map(r, self.x), r) for r in self.rhos]


def solve_fbp(patterns: PatternSet, protocol: FbpProtocol, seed: int = 0, progress=None) -> RunRecord:
    """Run the protocol, reading out sign(m) after each step; stop at the first solution."""
    started = time.time()
    g = CavityGraph(patterns, protocol.first_layer, protocol.schedule, protocol.damping,
                    protocol.noise, seed)
    trace = []
    total = 0
    status, reason, solution = "timeout", "schedule exhausted", None
    solved_step = None
    misses = 0
    for kind, gamma, y, rho in protocol.steps():
        if kind == "fbp":
            g.set_focusing(gamma, y)
        elif kind == "rbp":
            g.set_reinforcement(rho)
        else:
            g.set_plain()
        g.perturb(protocol.step_noise)
        rep = g.iterate(protocol.max_sweeps, protocol.tol)
        total += rep.sweeps
        row = dict(gamma=gamma, y=y, rho=rho, sweeps=rep.sweeps, converged=rep.converged,
                   delta=rep.delta)
        if not rep.finite:
            trace.append(row)
            status, reason = "bp-failure", "non-finite messages"
            break
        w = g.weights()
        errors = model.training_errors(w, patterns)
        row["errors"] = int(errors)
        row["error_rate"] = errors / patterns.M if patterns.M else 0.0
        if protocol.entropy:
            row.update(g.observables())
        else:
            row["q"] = float(np.mean(np.tanh(g.H) ** 2))
        trace.append(row)
        if progress is not None:
            progress(row)
        if errors == 0 and solution is None:
            solution, solved_step = w, len(trace) - 1
            if protocol.stop_when_solved:
                break
        misses = 0 if rep.converged else misses + 1
        if protocol.patience and misses >= protocol.patience:
            status, reason = "bp-failure", f"no convergence in {misses} consecutive steps"
            break
    if solution is not None:
        status, reason = "solved", "zero training errors"
    elif status == "timeout" and trace and not trace[-1]["converged"]:
        status, reason = "bp-failure", "no convergence at the last step"
    t = patterns.topology
    le = [r["local_entropy"] for r in trace if "local_entropy" in r and np.isfinite(r["local_entropy"])]
    summary = dict(reason=reason, steps=len(trace), sweeps=total, solved_step=solved_step,
                   min_errors=min((r.get("errors", patterns.M) for r in trace), default=patterns.M),
                   min_local_entropy=min(le) if le else None,
                   exact_first_layer=bool(g.exact))
    cfg = dict(N=t.N, K=t.K, kind=t.kind, alpha=patterns.alpha, pattern_seed=patterns.seed,
               **asdict(protocol))
    rec = RunRecord(algorithm="fbp", config=cfg, seed=int(seed), status=status, iterations=total,
                    trace=trace, summary=summary, solution=solution)
    return rec.stamp(started)
