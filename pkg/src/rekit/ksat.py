"""Random K-SAT: instances, DIMACS I/O, and BP-based solvers.

Messages follow the zero-temperature cavity parametrization.  For the edge
between clause ``mu`` and variable ``i`` with coupling ``J``:

* ``eta[e]``: weight the clause gives to the violating value ``sigma_i = -J``
  (the satisfying value has weight 1), ``eta = 1 - prod_{j != i} zeta_j``;
* ``zeta[e]``: cavity probability that ``i`` violates ``mu``.

The variable weights are ``w_i(sigma) = pt_i(sigma) * A_i(sigma)`` with
``A_i(sigma)`` the product of ``eta`` over the clauses that ``sigma``
violates; ``pt`` is 1 for plain BP, a power of the previous marginal for
reinforcement, ``1 + sigma m_star`` for focusing, and a hard 0/1 mask for
decimated variables.
"""

from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass

import numpy as np
from numba import njit

from .records import RunRecord, make_rng
from .fbp import H_MAX, _focus_field

BP, FBP, RBP = 0, 1, 2


@dataclass(frozen=True)
class KSatInstance:
    """CNF formula in compressed rows: clause ``mu`` owns ``var[ptr[mu]:ptr[mu+1]]``."""

    N: int
    ptr: np.ndarray
    var: np.ndarray
    J: np.ndarray

    def __post_init__(self):
        if self.N < 1:
            raise ValueError("need at least one variable")
        if len(self.ptr) < 1 or self.ptr[0] != 0 or self.ptr[-1] != len(self.var) or len(self.var) != len(self.J):
            raise ValueError("inconsistent clause arrays")
        if np.any(np.diff(self.ptr) < 1):
            raise ValueError("empty clause")
        if len(self.var) and (self.var.min() < 0 or self.var.max() >= self.N):
            raise ValueError("variable index out of range")
        if not np.all(np.abs(self.J) == 1):
            raise ValueError("couplings must be +-1")
        for mu in range(self.M):
            v = self.var[self.ptr[mu]:self.ptr[mu + 1]]
            if len(np.unique(v)) != len(v):
                raise ValueError(f"clause {mu} repeats a variable")

    @classmethod
    def from_clauses(cls, N: int, clauses, couplings) -> "KSatInstance":
        lens = [len(c) for c in clauses]
        if len(couplings) != len(clauses) or any(len(j) != l for j, l in zip(couplings, lens)):
            raise ValueError("couplings do not match clauses")
        ptr = np.zeros(len(lens) + 1, dtype=np.int64)
        ptr[1:] = np.cumsum(lens)
        var = np.concatenate([np.asarray(c, dtype=np.int64) for c in clauses]) if lens else np.zeros(0, np.int64)
        J = np.concatenate([np.asarray(j, dtype=np.int8) for j in couplings]) if lens else np.zeros(0, np.int8)
        return cls(N, ptr, var, J)

    @property
    def M(self) -> int:
        return len(self.ptr) - 1

    @property
    def alpha(self) -> float:
        return self.M / self.N

    @property
    def clauses(self) -> list:
        return [self.var[self.ptr[m]:self.ptr[m + 1]] for m in range(self.M)]

    @property
    def couplings(self) -> list:
        return [self.J[self.ptr[m]:self.ptr[m + 1]] for m in range(self.M)]


def generate_ksat(N: int, alpha: float, K: int, seed: int) -> KSatInstance:
    """round(alpha N) clauses on uniform K-subsets with uniform +-1 couplings."""
    if K > N:
        raise ValueError("K must not exceed N")
    M = int(math.floor(alpha * N + 0.5))
    rng = make_rng(seed, 0)
    var = np.empty((M, K), dtype=np.int64)
    for mu in range(M):
        var[mu] = rng.choice(N, size=K, replace=False)
    J = rng.choice(np.array([-1, 1], dtype=np.int8), size=(M, K))
    return KSatInstance(N, np.arange(M + 1, dtype=np.int64) * K, var.ravel(), J.ravel())


def generate_tree_instance(K: int, M: int, seed: int) -> KSatInstance:
    """Random acyclic instance: every new clause touches one old variable and K-1 fresh ones."""
    rng = make_rng(seed, 0)
    clauses, couplings = [list(range(K))], [rng.choice([-1, 1], K)]
    n = K
    for _ in range(1, M):
        old = int(rng.integers(n))
        clauses.append([old] + list(range(n, n + K - 1)))
        couplings.append(rng.choice([-1, 1], K))
        n += K - 1
    return KSatInstance.from_clauses(n, clauses, couplings)


def parse_cnf(text: str) -> KSatInstance:
    """Read DIMACS CNF; negative literals become J = -1."""
    N = M = None
    clauses, current = [], []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("c"):
            continue
        if line.startswith("%"):
            break
        if line.startswith("p"):
            parts = line.split()
            if N is not None or len(parts) != 4 or parts[1] != "cnf":
                raise ValueError(f"line {lineno}: malformed header {raw!r}")
            try:
                N, M = int(parts[2]), int(parts[3])
            except ValueError:
                raise ValueError(f"line {lineno}: malformed header {raw!r}") from None
            if N < 1 or M < 0:
                raise ValueError(f"line {lineno}: malformed header {raw!r}")
            continue
        if N is None:
            raise ValueError(f"line {lineno}: clause before header")
        for tok in line.split():
            try:
                lit = int(tok)
            except ValueError:
                raise ValueError(f"line {lineno}: bad literal {tok!r}") from None
            if lit == 0:
                if not current:
                    raise ValueError(f"line {lineno}: empty clause")
                clauses.append(current)
                current = []
            elif abs(lit) > N:
                raise ValueError(f"line {lineno}: literal {lit} out of range")
            else:
                current.append(lit)
    if N is None:
        raise ValueError("missing header")
    if current:
        clauses.append(current)
    if len(clauses) != M:
        raise ValueError(f"header announces {M} clauses, found {len(clauses)}")
    return KSatInstance.from_clauses(
        N, [[abs(l) - 1 for l in c] for c in clauses], [[1 if l > 0 else -1 for l in c] for c in clauses])


def serialize_cnf(inst: KSatInstance, comment: str | None = None) -> str:
    lines = [f"c {comment}"] if comment else []
    lines.append(f"p cnf {inst.N} {inst.M}")
    for v, j in zip(inst.clauses, inst.couplings):
        lines.append(" ".join(str(int((a + 1) * s)) for a, s in zip(v, j)) + " 0")
    return "\n".join(lines) + "\n"


def format_solution(sigma) -> str:
    """DIMACS-style value lines."""
    lits = [str(i + 1 if s > 0 else -(i + 1)) for i, s in enumerate(sigma)]
    out = []
    for k in range(0, len(lits), 20):
        out.append("v " + " ".join(lits[k:k + 20]))
    out.append("v 0")
    return "\n".join(out) + "\n"


@njit(cache=True)
def _count_violated(ptr, var, J, sigma):
    bad = 0
    for mu in range(ptr.shape[0] - 1):
        sat = False
        for e in range(ptr[mu], ptr[mu + 1]):
            if sigma[var[e]] == J[e]:
                sat = True
                break
        if not sat:
            bad += 1
    return bad


def count_violated(inst: KSatInstance, sigma) -> int:
    """Number of clauses with every literal false."""
    s = np.asarray(sigma)
    if s.shape != (inst.N,):
        raise ValueError(f"assignment has shape {s.shape}, expected ({inst.N},)")
    return int(_count_violated(inst.ptr, inst.var, inst.J, s.astype(np.int64)))


# ---------------------------------------------------------------------------
# message passing


@njit(cache=True)
def _side_products(i, vptr, vedge, J, eta):
    """Products of eta over the clauses violated by +1 (J=-1) and by -1 (J=+1).

    Zeros are counted separately so cavity products can divide them out.
    """
    pp, zp, pm, zm = 1.0, 0, 1.0, 0
    for k in range(vptr[i], vptr[i + 1]):
        e = vedge[k]
        x = eta[e]
        if J[e] < 0:
            if x == 0.0:
                zp += 1
            else:
                pp *= x
        else:
            if x == 0.0:
                zm += 1
            else:
                pm *= x
    return pp, zp, pm, zm


@njit(cache=True)
def _without(p, z, x):
    if x == 0.0:
        return p if z == 1 else 0.0
    return 0.0 if z > 0 else p / x


@njit(cache=True)
def _full(p, z):
    return 0.0 if z > 0 else p


@njit(cache=True)
def _ksat_sweep(ptr, var, J, vptr, vedge, eta, zeta, pt, fixed, damping, mode, gamma, y, rho, mag):
    """One synchronous sweep; returns (max |d eta|, contradiction flag)."""
    N = vptr.shape[0] - 1
    M = ptr.shape[0] - 1
    for i in range(N):
        pp, zp, pm, zm = _side_products(i, vptr, vedge, J, eta)
        for k in range(vptr[i], vptr[i + 1]):
            e = vedge[k]
            if J[e] < 0:
                ap = _without(pp, zp, eta[e])
                am = _full(pm, zm)
            else:
                ap = _full(pp, zp)
                am = _without(pm, zm, eta[e])
            wp = pt[i, 0] * ap
            wm = pt[i, 1] * am
            s = wp + wm
            if s == 0.0:
                return 0.0, True
            zeta[e] = (wm if J[e] > 0 else wp) / s
    delta = 0.0
    for mu in range(M):
        for e in range(ptr[mu], ptr[mu + 1]):
            prod = 1.0
            for f in range(ptr[mu], ptr[mu + 1]):
                if f != e:
                    prod *= zeta[f]
            new = damping * eta[e] + (1.0 - damping) * (1.0 - prod)
            d = abs(new - eta[e])
            if d > delta:
                delta = d
            eta[e] = new
    for i in range(N):
        pp, zp, pm, zm = _side_products(i, vptr, vedge, J, eta)
        ap = _full(pp, zp)
        am = _full(pm, zm)
        if not fixed[i]:
            if mode == FBP:
                # cavity field towards the reference, from the clause weights alone
                if ap == 0.0 and am == 0.0:
                    return delta, True
                if am == 0.0:
                    h = H_MAX
                elif ap == 0.0:
                    h = -H_MAX
                else:
                    h = min(max(0.5 * (math.log(ap) - math.log(am)), -H_MAX), H_MAX)
                ms = math.tanh(_focus_field(h, gamma, y))
                pt[i, 0] = 1.0 + ms
                pt[i, 1] = 1.0 - ms
            elif mode == RBP:
                wp = pt[i, 0] * ap
                wm = pt[i, 1] * am
                s = wp + wm
                if s > 0:
                    pt[i, 0] = (wp / s) ** rho
                    pt[i, 1] = (wm / s) ** rho
        wp = pt[i, 0] * ap
        wm = pt[i, 1] * am
        s = wp + wm
        if s == 0.0:
            return delta, True
        mag[i] = (wp - wm) / s
    return delta, False


def _var_index(inst: KSatInstance):
    """Edges of every variable in CSR form."""
    order = np.argsort(inst.var, kind="stable")
    counts = np.bincount(inst.var, minlength=inst.N)
    vptr = np.zeros(inst.N + 1, dtype=np.int64)
    vptr[1:] = np.cumsum(counts)
    return vptr, order.astype(np.int64)


class KSatMessages:
    """Message store for one instance."""

    def __init__(self, inst: KSatInstance, seed: int = 0, noise: float = 0.0):
        self.inst = inst
        self.vptr, self.vedge = _var_index(inst)
        E = len(inst.var)
        rng = make_rng(seed, 2)
        self.eta = 0.5 + (rng.uniform(-noise, noise, E) if noise > 0 else np.zeros(E))
        self.zeta = np.full(E, 0.5)
        self.pt = np.ones((inst.N, 2))
        self.fixed = np.zeros(inst.N, dtype=np.bool_)
        self.mag = np.zeros(inst.N)
        self.mode, self.gamma, self.y, self.rho = BP, 0.0, 1.0, 0.0

    def set_bp(self):
        self.mode = BP
        self.pt[~self.fixed] = 1.0

    def set_focusing(self, gamma: float, y: float):
        if gamma < 0 or y < 1:
            raise ValueError("need gamma >= 0 and y >= 1")
        self.mode, self.gamma, self.y = FBP, float(gamma), float(y)

    def set_reinforcement(self, rho: float):
        if not 0 <= rho <= 1:
            raise ValueError("rho must lie in [0, 1]")
        self.mode, self.rho = RBP, float(rho)

    def fix(self, i: int, value: int):
        self.fixed[i] = True
        self.pt[i] = (1.0, 0.0) if value > 0 else (0.0, 1.0)

    def sweep(self, damping: float = 0.5):
        """Returns (max eta change, contradiction)."""
        d, bad = _ksat_sweep(self.inst.ptr, self.inst.var, self.inst.J, self.vptr, self.vedge, self.eta,
                             self.zeta, self.pt, self.fixed, float(damping), self.mode, self.gamma, self.y,
                             self.rho, self.mag)
        return float(d), bool(bad)

    def assignment(self) -> np.ndarray:
        return np.where(self.mag >= 0, 1, -1).astype(np.int8)

    def violated(self) -> int:
        return count_violated(self.inst, self.assignment())


def ksat_sweep(messages: KSatMessages, damping: float = 0.5) -> float:
    """One sweep in the messages' current mode; raises on contradiction."""
    d, bad = messages.sweep(damping)
    if bad:
        raise ArithmeticError("contradiction: a variable has zero weight for both values")
    return d


def bp_marginals(inst: KSatInstance, max_sweeps: int = 10_000, tol: float = 1e-12, damping: float = 0.0):
    """Plain BP magnetizations (iterated to tolerance)."""
    msg = KSatMessages(inst)
    for _ in range(max_sweeps):
        if ksat_sweep(msg, damping) < tol:
            break
    return msg.mag.copy()


# ---------------------------------------------------------------------------
# solvers


@dataclass
class KsatProtocol:
    """mode: "fbp" (gamma ramp at fixed y), "rbp" (rho ramp), "bp-dec" (decimation)."""

    mode: str = "fbp"
    y: float = 6.0
    gamma0: float = 0.01
    gamma_step: float = 0.01
    gamma_max: float = 0.6
    rho0: float = 0.0
    rho_step: float = 0.01
    rho_max: float = 1.0
    sweeps_per_step: int = 2000
    damping: float = 0.5
    tol: float = 1e-5
    fraction: float = 0.01
    check_every_sweep: bool = False

    def __post_init__(self):
        if self.mode not in ("fbp", "rbp", "bp-dec"):
            raise ValueError(f"unknown K-SAT mode {self.mode!r}")
        if not 0 <= self.damping < 1:
            raise ValueError("damping must lie in [0, 1)")
        if not 0 < self.fraction <= 1:
            raise ValueError("fraction must lie in (0, 1]")

    def ramp(self):
        if self.mode == "fbp":
            lo, st, hi = self.gamma0, self.gamma_step, self.gamma_max
        else:
            lo, st, hi = self.rho0, self.rho_step, self.rho_max
        n = int(math.floor((hi - lo) / st + 1e-9)) + 1
        return [round(lo + k * st, 12) for k in range(n)]


def _iterate(msg, proto, check):
    """Sweep until converged or the cap; returns (sweeps, delta, contradiction, solved_mid)."""
    d = math.inf
    for t in range(1, proto.sweeps_per_step + 1):
        d, bad = msg.sweep(proto.damping)
        if bad:
            return t, d, True, False
        if check and msg.violated() == 0:
            return t, d, False, True
        if d < proto.tol:
            return t, d, False, False
    return proto.sweeps_per_step, d, False, False


def solve_ksat(inst: KSatInstance, protocol: KsatProtocol, seed: int = 0, progress=None) -> RunRecord:
    """Run the protocol; the returned solution (if any) is re-verified with ``count_violated``."""
    started = time.time()
    msg = KSatMessages(inst, seed)
    trace = []
    total = 0
    status, reason, solution = "timeout", "schedule exhausted", None
    last_conv = True
    if protocol.mode == "bp-dec":
        msg.set_bp()
        while True:
            sw, d, bad, _ = _iterate(msg, protocol, False)
            total += sw
            row = dict(round=len(trace), sweeps=sw, delta=d, converged=d < protocol.tol,
                       fixed=int(msg.fixed.sum()))
            if bad:
                trace.append(row)
                status, reason = "contradiction", "zero-weight variable"
                break
            sigma = msg.assignment()
            row["violated"] = count_violated(inst, sigma)
            trace.append(row)
            if progress is not None:
                progress(row)
            if row["violated"] == 0:
                status, reason, solution = "solved", "all clauses satisfied", sigma
                break
            free = np.flatnonzero(~msg.fixed)
            if not len(free):
                status, reason = "contradiction", "all variables fixed"
                break
            k = max(1, int(math.ceil(protocol.fraction * len(free))))
            pick = free[np.lexsort((free, -np.abs(msg.mag[free])))][:k]
            for i in pick:
                msg.fix(int(i), 1 if msg.mag[i] >= 0 else -1)
            if _fixed_violation(inst, msg):
                status, reason = "contradiction", "a clause has all literals fixed false"
                break
    else:
        for v in protocol.ramp():
            if protocol.mode == "fbp":
                msg.set_focusing(v, protocol.y)
            else:
                msg.set_reinforcement(v)
            sw, d, bad, mid = _iterate(msg, protocol, protocol.check_every_sweep)
            total += sw
            last_conv = d < protocol.tol
            row = dict(param=v, sweeps=sw, delta=d, converged=last_conv)
            if bad:
                trace.append(row)
                status, reason = "contradiction", "zero-weight variable"
                break
            sigma = msg.assignment()
            row["violated"] = count_violated(inst, sigma)
            trace.append(row)
            if progress is not None:
                progress(row)
            if row["violated"] == 0:
                status, reason, solution = "solved", "all clauses satisfied", sigma
                break
        if status == "timeout" and not last_conv:
            status, reason = "bp-failure", "no convergence at the last step"
    if solution is not None and count_violated(inst, solution) != 0:
        raise AssertionError("solver returned an unsatisfying assignment")
    summary = dict(reason=reason, steps=len(trace), sweeps=total,
                   min_violated=min((r.get("violated", inst.M) for r in trace), default=inst.M))
    cfg = dict(N=inst.N, M=inst.M, alpha=inst.alpha, **asdict(protocol))
    rec = RunRecord(algorithm="ksat", config=cfg, seed=int(seed), status=status, iterations=total,
                    trace=trace, summary=summary, solution=solution)
    return rec.stamp(started)


def _fixed_violation(inst: KSatInstance, msg: KSatMessages) -> bool:
    fixed = msg.fixed
    val = np.where(msg.pt[:, 0] > 0, 1, -1)
    lit_true = (val[inst.var] == inst.J) | ~fixed[inst.var]
    sat = np.logical_or.reduceat(lit_true, inst.ptr[:-1]) if inst.M else np.zeros(0, bool)
    return bool(np.any(~sat))
