"""Fundamental-matrix quantities: hitting times, certified spectral radii, norms, rate curves."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
from scipy import sparse
from scipy.sparse import csgraph
from scipy.sparse.linalg import splu

from .chain import TransitionSystem

DENSE_LIMIT = 2000
SOLVE_TOL = 1e-10
BRACKET_TOL = 1e-10
MAX_ITER = 100_000
WARM_START_AFTER = 2000


class NonConvergentError(ArithmeticError):
    """Some transient state can never reach the optimal set, so I - Q is singular."""


@dataclass(frozen=True)
class RadiusEstimate:
    """Spectral radius of Q with a bracket ``lo <= rho <= hi``."""

    rho: float
    lo: float
    hi: float
    certified: bool
    method: str
    iterations: int = 0

    def __iter__(self):
        yield self.rho
        yield (self.lo, self.hi)

    @property
    def width(self) -> float:
        return self.hi - self.lo


@dataclass(frozen=True)
class SpectralReport:
    rho_Q: float
    rho_Q_bracket: tuple[float, float]
    certified: bool
    rho_N: float
    rho_N_bracket: tuple[float, float]
    m: np.ndarray | None
    norm_inf: float
    norm_a: float
    convergent: bool
    residual: float
    method: str
    n_states: int

    def as_dict(self) -> dict:
        return {
            "n_states": self.n_states,
            "convergent": self.convergent,
            "rho_Q": self.rho_Q,
            "rho_Q_bracket": list(self.rho_Q_bracket),
            "rho_Q_certified": self.certified,
            "rho_Q_method": self.method,
            "rho_N": self.rho_N,
            "rho_N_bracket": list(self.rho_N_bracket),
            "norm_inf": self.norm_inf,
            "norm_a": self.norm_a,
            "m_min": float(self.m.min()) if self.m is not None and self.m.size else None,
            "m_max": float(self.m.max()) if self.m is not None and self.m.size else None,
            "solve_residual": self.residual,
        }


@dataclass
class DistributionTrace:
    """q_t = q_0 Q^t and the t-generation average convergence rates."""

    mass: np.ndarray
    rates: np.ndarray
    q: list[np.ndarray] = field(default_factory=list)


# ---------------------------------------------------------------------------
# convergence and linear solves


def leaking_closure(ts: TransitionSystem) -> np.ndarray:
    """Mask of transient states from which absorption has positive probability."""
    can = ts.absorption > 0
    if can.all():
        return can
    # reverse reachability: i reaches a leaking state if some successor does
    rev = ts.Q.T.tocsr()
    order = list(np.flatnonzero(can))
    while order:
        j = order.pop()
        for i in rev.indices[rev.indptr[j]:rev.indptr[j + 1]]:
            if not can[i]:
                can[i] = True
                order.append(i)
    return can


def is_convergent(ts: TransitionSystem) -> bool:
    return bool(leaking_closure(ts).all())


class _Solver:
    """LU factorization of I - Q (dense up to DENSE_LIMIT states, sparse beyond)."""

    def __init__(self, Q):
        n = Q.shape[0]
        self.n = n
        if n <= DENSE_LIMIT:
            A = np.eye(n) - (Q.toarray() if sparse.issparse(Q) else np.asarray(Q))
            self.A = A
            self._lu = sla.lu_factor(A, check_finite=False)
            self._solve = lambda b: sla.lu_solve(self._lu, b, check_finite=False)
        else:
            A = (sparse.identity(n, format="csc") - sparse.csc_matrix(Q)).tocsc()
            self.A = A
            self._lu = splu(A)
            self._solve = self._lu.solve

    def solve(self, b: np.ndarray, refine: int = 1) -> np.ndarray:
        x = self._solve(b)
        for _ in range(refine):
            x = x + self._solve(b - self.A @ x)
        return x

    def residual(self, x: np.ndarray, b: np.ndarray) -> float:
        return float(np.max(np.abs(self.A @ x - b))) if self.n else 0.0


def hitting_vector(ts: TransitionSystem, *, return_residual: bool = False):
    """Expected generations to reach the optimal set: solves (I - Q) m = 1."""
    if not is_convergent(ts):
        stuck = np.flatnonzero(~leaking_closure(ts))
        raise NonConvergentError(f"{stuck.size} transient state(s) never reach the optimal set")
    ones = np.ones(ts.n)
    solver = _Solver(ts.Q)
    m = solver.solve(ones)
    res = solver.residual(m, ones)
    if res > SOLVE_TOL * max(1.0, float(np.max(m))):
        m = solver.solve(ones, refine=3)
        res = solver.residual(m, ones)
    return (m, res) if return_residual else m


def fundamental_matrix(ts: TransitionSystem, *, max_states: int = DENSE_LIMIT) -> np.ndarray:
    """Explicit N = (I - Q)^-1, only for small chains."""
    if ts.n > max_states:
        raise ValueError(f"refusing to form N for {ts.n} > {max_states} states")
    if not is_convergent(ts):
        raise NonConvergentError("I - Q is singular")
    return _Solver(ts.Q).solve(np.eye(ts.n))


# ---------------------------------------------------------------------------
# spectral radius


def _widen(lo: float, hi: float, ulps: int = 4) -> tuple[float, float]:
    for _ in range(ulps):
        lo, hi = math.nextafter(lo, -math.inf), math.nextafter(hi, math.inf)
    return max(lo, 0.0), min(hi, 1.0)


def _blocks_valid(ts: TransitionSystem) -> bool:
    """True when no transition leads into a later block (block lower triangular)."""
    block_id = np.empty(ts.n, dtype=np.int64)
    for k, (lo, hi) in enumerate(ts.blocks):
        block_id[lo:hi] = k
    coo = ts.Q.tocoo()
    return bool(np.all(block_id[coo.col] <= block_id[coo.row]))


def _perron_guess(Qc: np.ndarray) -> np.ndarray | None:
    try:
        vals, vecs = np.linalg.eig(Qc)
    except np.linalg.LinAlgError:
        return None
    k = int(np.argmax(vals.real))
    v = np.abs(vecs[:, k].real)
    return v + 1e-3 * max(float(v.max()), 1e-300)


def _irreducible_radius(Qc, tol: float, max_iter: int) -> tuple[float, float, bool, int]:
    """Collatz-Wielandt bracket for an irreducible leaking block via power iteration on N."""
    n = Qc.shape[0]
    solver = _Solver(Qc)
    v = np.ones(n)
    lo_q, hi_q = 0.0, 1.0
    it = 0
    warm = False
    while it < max_iter:
        it += 1
        w = solver.solve(v, refine=0)
        if np.any(w <= 0):
            # rounding produced a non-positive entry; nudge back into the cone
            w = np.maximum(w, 1e-300)
        ratios = w / v
        lo_n, hi_n = float(ratios.min()), float(ratios.max())
        lo_q = max(lo_q, 1.0 - 1.0 / lo_n) if lo_n >= 1.0 else lo_q
        hi_q = min(hi_q, 1.0 - 1.0 / hi_n)
        if hi_q - lo_q < tol:
            return lo_q, hi_q, True, it
        v = w / np.max(w)
        if not warm and it >= WARM_START_AFTER and n <= DENSE_LIMIT:
            warm = True
            guess = _perron_guess(Qc.toarray() if sparse.issparse(Qc) else Qc)
            if guess is not None:
                v = guess
    return lo_q, hi_q, False, it


def spectral_radius(ts: TransitionSystem, *, tol: float = BRACKET_TOL,
                    max_iter: int = MAX_ITER) -> RadiusEstimate:
    """rho(Q), exact on triangular chains and bracketed otherwise."""
    n = ts.n
    if n == 0:
        return RadiusEstimate(0.0, 0.0, 0.0, True, "empty")
    if ts.triangular:
        d = float(ts.Q.diagonal().max())
        return RadiusEstimate(d, d, d, True, "triangular")
    Q = ts.Q.tocsr()
    blocks = ts.blocks if _blocks_valid(ts) else ((0, n),)
    leak = ts.absorption.copy()
    lo_all = hi_all = 0.0
    iterations = 0
    method = "block" if len(blocks) > 1 else "scc"
    for lo, hi in blocks:
        if hi - lo == 1:
            d = float(Q[lo, lo])
            lo_all, hi_all = max(lo_all, d), max(hi_all, d)
            continue
        QB = Q[lo:hi, lo:hi]
        ncomp, labels = csgraph.connected_components(QB, directed=True, connection="strong")
        for c in range(ncomp):
            idx = np.flatnonzero(labels == c)
            if idx.size == 1:
                d = float(QB[idx[0], idx[0]])
                lo_all, hi_all = max(lo_all, d), max(hi_all, d)
                continue
            Qc = QB[idx][:, idx]
            rows = lo + idx
            inside = np.asarray(Qc.sum(axis=1)).ravel()
            outside = np.asarray(Q[rows].sum(axis=1)).ravel() - inside
            if not np.any(leak[rows] > 0) and not np.any(outside > 0):
                lo_all = hi_all = 1.0
                continue
            l, h, ok, it = _irreducible_radius(Qc, tol, max_iter)
            l, h = _widen(l, h)
            iterations += it
            lo_all, hi_all = max(lo_all, l), max(hi_all, h)
    if lo_all == hi_all == 1.0:
        return RadiusEstimate(1.0, 1.0, 1.0, True, method, iterations)
    certified = hi_all - lo_all <= tol + 1e-15
    return RadiusEstimate(0.5 * (lo_all + hi_all), lo_all, hi_all, certified, method, iterations)


def argmax_self_transition(ts: TransitionSystem) -> int:
    """State (instance index) with the largest self-loop; the first one in canonical order on ties."""
    if ts.mu != 1:
        raise ValueError("x_rho is defined on the (1+1) chain")
    d = ts.Q.diagonal()
    return ts.states[int(np.argmax(d))]


# ---------------------------------------------------------------------------
# rate curves and reports


def exact_rate_curve(ts: TransitionSystem, q0, t_max: int, *, keep: bool = False) -> DistributionTrace:
    """Iterate q_t^T = q_{t-1}^T Q and record 1 - (|q_t| / |q_0|)^(1/t)."""
    q = np.asarray(q0, dtype=float)
    if q.shape != (ts.n,):
        raise ValueError(f"q0 must have length {ts.n}")
    if np.any(q <= 0):
        raise ValueError("q0 must be strictly positive on every transient state")
    QT = ts.Q.T.tocsr()
    mass = np.empty(t_max + 1)
    mass[0] = q.sum()
    qs = [q.copy()] if keep else []
    for t in range(1, t_max + 1):
        q = QT @ q
        mass[t] = q.sum()
        if keep:
            qs.append(q.copy())
    t = np.arange(1, t_max + 1)
    with np.errstate(divide="ignore"):
        rates = 1.0 - (mass[1:] / mass[0]) ** (1.0 / t)
    return DistributionTrace(mass, rates, qs)


def uniform_start(ts: TransitionSystem) -> np.ndarray:
    """Initial law proportional to the number of ordered populations per state."""
    return ts.weights / ts.weights.sum()


def analyze(ts: TransitionSystem) -> SpectralReport:
    radius = spectral_radius(ts)
    if not is_convergent(ts):
        inf = math.inf
        return SpectralReport(radius.rho, (radius.lo, radius.hi), radius.certified, inf, (inf, inf),
                              None, inf, inf, False, math.nan, radius.method, ts.n)
    m, res = hitting_vector(ts, return_residual=True)
    w = ts.weights
    norm_a = float(w @ m / w.sum())
    return SpectralReport(
        rho_Q=radius.rho,
        rho_Q_bracket=(radius.lo, radius.hi),
        certified=radius.certified,
        rho_N=1.0 / (1.0 - radius.rho),
        rho_N_bracket=(1.0 / (1.0 - radius.lo), 1.0 / (1.0 - radius.hi)),
        m=m,
        norm_inf=float(m.max()),
        norm_a=norm_a,
        convergent=True,
        residual=res,
        method=radius.method,
        n_states=ts.n,
    )
