"""Absorbing Markov chains of elitist (1+1) and (mu+mu) EAs.

Transient states are stored in the canonical order: fitness of the elite
descending, populations sharing an elite grouped into one contiguous
block. Under elitist selection ``Q`` is then block lower triangular.
"""
from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from itertools import combinations_with_replacement
from typing import Sequence

import numpy as np
from scipy import sparse

from .model import Instance, PopulationState, tuple_count
from .operators import MutationKernel, SelectionRule

DEFAULT_STATE_CAP = 200_000
CAP_ENV = "POPSCALE_STATE_CAP"


class CapExceeded(RuntimeError):
    def __init__(self, required: int, cap: int):
        super().__init__(f"state space needs {required} transient states, cap is {cap}")
        self.required = required
        self.cap = cap


class ChainError(ValueError):
    pass


def state_cap(cap: int | None = None) -> int:
    if cap is not None:
        return int(cap)
    return int(os.environ.get(CAP_ENV, DEFAULT_STATE_CAP))


@dataclass(frozen=True, eq=False)
class TransitionSystem:
    """Transient part of an absorbing chain.

    ``Q[i, j]`` is the one-step probability between transient states,
    ``absorption[i]`` the probability of entering the optimal set, and
    ``weights[i]`` the number of ordered populations (tuples of individuals)
    that state ``i`` stands for.
    """

    states: tuple
    Q: sparse.csr_matrix
    absorption: np.ndarray
    blocks: tuple[tuple[int, int], ...]
    mu: int
    triangular: bool
    weights: np.ndarray
    best: np.ndarray
    best_fitness: np.ndarray
    instance: Instance | None = None
    kind: str = "population"
    _lookup: dict = field(init=False, repr=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "_lookup", {s: i for i, s in enumerate(self.states)})

    @property
    def transient_states(self) -> tuple:
        return self.states

    @property
    def n(self) -> int:
        return self.Q.shape[0]

    def index(self, state) -> int:
        if isinstance(state, str) and self.instance is not None:
            state = self.instance.index(state)
        if isinstance(state, (int, np.integer)):
            state = int(state)
            if self.kind == "population":
                return state
        try:
            return self._lookup[state]
        except KeyError:
            raise ChainError(f"{state!r} is not a transient state of this chain") from None

    def block_of(self, i: int) -> tuple[int, int]:
        for lo, hi in self.blocks:
            if lo <= i < hi:
                return lo, hi
        raise IndexError(i)

    def block_for_best(self, x: int) -> tuple[int, int]:
        for lo, hi in self.blocks:
            if self.best[lo] == x:
                return lo, hi
        raise ChainError(f"no block with elite {x}")

    @property
    def row_residual(self) -> float:
        rows = np.asarray(self.Q.sum(axis=1)).ravel()
        return float(np.max(np.abs(rows + self.absorption - 1.0))) if self.n else 0.0

    @classmethod
    def from_matrix(cls, Q, absorption=None, *, blocks=None, weights=None,
                    best_fitness=None, mu: int = 1) -> "TransitionSystem":
        """Wrap a raw substochastic matrix (states are its row indices)."""
        Qs = sparse.csr_matrix(np.asarray(Q, dtype=float) if not sparse.issparse(Q) else Q)
        n = Qs.shape[0]
        if absorption is None:
            absorption = 1.0 - np.asarray(Qs.sum(axis=1)).ravel()
            # row sums that miss 1 only by rounding do not leak
            absorption[absorption <= 4 * np.finfo(float).eps] = 0.0
        triangular = sparse.triu(Qs, k=1).nnz == 0
        if blocks is None:
            blocks = tuple((i, i + 1) for i in range(n)) if triangular else ((0, n),)
        best = np.empty(n, dtype=np.int64)
        for k, (lo, hi) in enumerate(blocks):
            best[lo:hi] = k
        bf = -best.astype(float) if best_fitness is None else np.asarray(best_fitness, dtype=float)
        return cls(
            states=tuple(range(n)),
            Q=Qs,
            absorption=np.asarray(absorption, dtype=float),
            blocks=tuple(tuple(b) for b in blocks),
            mu=mu,
            triangular=triangular,
            weights=np.ones(n) if weights is None else np.asarray(weights, dtype=float),
            best=best,
            best_fitness=bf,
            kind="matrix",
        )


def _finish(instance, states, rows, absorption, weights, mu, kind) -> TransitionSystem:
    n = len(states)
    data, ri, ci = [], [], []
    for i, row in enumerate(rows):
        for j, p in row.items():
            if p != 0.0:
                ri.append(i)
                ci.append(j)
                data.append(p)
    Q = sparse.csr_matrix((data, (ri, ci)), shape=(n, n))
    Q.sum_duplicates()
    if kind in ("lumped", "one_plus_one"):
        best = np.array(states, dtype=np.int64)
    else:
        best = np.array([s.best for s in states], dtype=np.int64)
    blocks = []
    lo = 0
    for i in range(1, n + 1):
        if i == n or best[i] != best[lo]:
            blocks.append((lo, i))
            lo = i
    return TransitionSystem(
        states=tuple(states),
        Q=Q,
        absorption=np.asarray(absorption, dtype=float),
        blocks=tuple(blocks),
        mu=mu,
        triangular=sparse.triu(Q, k=1).nnz == 0,
        weights=np.asarray(weights, dtype=float),
        best=best,
        best_fitness=instance.fitness[best] if n else np.zeros(0),
        instance=instance,
        kind=kind,
    )


def build_one_plus_one_chain(instance: Instance, kernel: MutationKernel) -> TransitionSystem:
    """(1+1) elitist EA: accept a child only if it is strictly fitter."""
    probs = kernel.label_probs
    f = instance.fitness
    opt = instance.optimal_mask
    states = instance.non_optimal
    pos = {x: i for i, x in enumerate(states)}
    rows, absorption = [], []
    for x in states:
        higher = f > f[x]
        row = {pos[y]: float(probs[x, y]) for y in np.flatnonzero(higher & ~opt) if probs[x, y] > 0}
        row[pos[x]] = float(probs[x, ~higher].sum())
        rows.append(row)
        absorption.append(float(probs[x, opt].sum()))
    weights = [int(instance.multiplicity[x]) for x in states]
    return _finish(instance, states, rows, absorption, weights, 1, "one_plus_one")


# ---------------------------------------------------------------------------
# population chains


def population_states(instance: Instance, mu: int) -> list[PopulationState]:
    """Every non-optimal population, with each admissible elite, in canonical order."""
    rank = instance.rank
    f = instance.fitness
    out = []
    for members in combinations_with_replacement(sorted(instance.non_optimal), mu):
        top = max(f[m] for m in members)
        for b in sorted({m for m in members if f[m] == top}):
            out.append(PopulationState(b, members))
    out.sort(key=lambda s: (rank[s.best], tuple(sorted(rank[m] for m in s.members))))
    return out


def population_weight(instance: Instance, state: PopulationState) -> int:
    """Ordered populations mapping to ``state``: tuples whose first top-fitness member is the elite."""
    f = instance.fitness
    top = f[state.best]
    n_top = sum(1 for m in state.members if f[m] == top)
    n_best = state.members.count(state.best)
    total = tuple_count(instance, state.members)
    q, r = divmod(total * n_best, n_top)
    assert r == 0
    return q


def estimated_state_count(instance: Instance, mu: int) -> int:
    L = len(instance.non_optimal)
    return math.comb(L + mu - 1, mu)


def _child_table(instance: Instance, kernel: MutationKernel, include_optimal: bool):
    probs = kernel.label_probs
    opt = instance.optimal_mask
    table = {}
    for x in range(instance.size):
        ys = [(int(y), float(probs[x, y])) for y in np.flatnonzero(probs[x] > 0)
              if include_optimal or not opt[y]]
        table[x] = (ys, float(probs[x, opt].sum()))
    return table


def _children_distribution(members: Sequence[int], table, prune_optimal: bool):
    """Law of the sorted child multiset; with pruning, any optimal child counts as absorbed."""
    dist: dict[tuple[int, ...], float] = {(): 1.0}
    absorbed = 0.0
    for m in members:
        ys, opt_mass = table[m]
        nxt: dict[tuple[int, ...], float] = {}
        for t, p in dist.items():
            if prune_optimal:
                absorbed += p * opt_mass
            for y, q in ys:
                key = tuple(sorted(t + (y,)))
                nxt[key] = nxt.get(key, 0.0) + p * q
        dist = nxt
    return dist, absorbed


def _best_child_law(instance: Instance, kernel: MutationKernel, members: Sequence[int]):
    """P(fittest child = y) for the children of ``members`` (canonical tie-break).

    Returns ``(order, law)`` where ``law[k]`` is the probability that the
    best child is ``order[k]``.
    """
    order = instance.canonical_order
    probs = kernel.label_probs[:, order]
    # tail[i, k] = P(child of i has canonical position >= k)
    tail = np.concatenate([np.cumsum(probs[:, ::-1], axis=1)[:, ::-1], np.zeros((probs.shape[0], 1))], axis=1)
    G = np.prod(tail[list(members)], axis=0)
    return order, G[:-1] - G[1:], G


def build_population_chain(instance: Instance, kernel: MutationKernel, rule: SelectionRule,
                           mu: int, *, cap: int | None = None) -> TransitionSystem:
    """Exact chain of the (mu+mu) EA on canonical populations.

    Every member mutates independently; the rule then maps parents and
    children to the next population. Populations containing an optimal
    individual are absorbing and only their total mass is kept.
    """
    if mu < 1:
        raise ChainError("mu must be >= 1")
    if not rule.exchangeable:
        raise ChainError("multiset populations need an exchangeable selection rule")
    limit = state_cap(cap)
    required = estimated_state_count(instance, mu)
    if required > limit:
        raise CapExceeded(required, limit)
    states = population_states(instance, mu)
    pos = {s: i for i, s in enumerate(states)}
    opt = instance.optimal_mask
    f = instance.fitness
    rows, absorption = [], []

    if rule.best_determined:
        order = instance.canonical_order
        for X in states:
            _, law, G = _best_child_law(instance, kernel, X.members)
            row: dict[int, float] = {}
            absorbed = 0.0
            stay = 0.0
            for k, y in enumerate(order):
                if law[k] == 0.0:
                    continue
                if opt[y]:
                    absorbed += law[k]
                elif f[y] > f[X.best]:
                    j = pos[PopulationState.homogeneous(y, mu)]
                    row[j] = row.get(j, 0.0) + float(law[k])
            # mass where no child beats the elite, computed directly from the tail
            first_not_better = next(k for k, y in enumerate(order) if f[y] <= f[X.best])
            stay = float(G[first_not_better])
            j = pos[PopulationState.homogeneous(X.best, mu)]
            row[j] = row.get(j, 0.0) + stay
            rows.append(row)
            absorption.append(float(absorbed))
    else:
        table = _child_table(instance, kernel, include_optimal=not rule.elitist)
        rank = instance.rank.tolist()
        fit = f.tolist()
        memo: dict[tuple[int, ...], tuple[dict, float]] = {}
        # the built-in rules see (parents, children) only through the next
        # elite and the combined multiset, so successor rows are shared
        succ_cache: dict[tuple, list[tuple[int, float]]] = {}
        for X in states:
            if X.members not in memo:
                memo[X.members] = _children_distribution(X.members, table, prune_optimal=rule.elitist)
            dist, absorbed = memo[X.members]
            row = {}
            for children, p in dist.items():
                champion = min(children, key=rank.__getitem__)
                elite = champion if fit[champion] > fit[X.best] else X.best
                key = (elite, tuple(sorted(X.members + children)))
                succ = succ_cache.get(key)
                if succ is None:
                    succ = [(-1 if any(opt[m] for m in Z.members) else pos[Z], q)
                            for Z, q in rule.successors(instance, X, children).items()]
                    succ_cache[key] = succ
                for j, q in succ:
                    if j < 0:
                        absorbed += p * q
                    else:
                        row[j] = row.get(j, 0.0) + p * q
            rows.append(row)
            absorption.append(float(absorbed))

    weights = [population_weight(instance, s) for s in states]
    return _finish(instance, states, rows, absorption, weights, mu,
                   "population")


def lumped_weights(instance: Instance, mu: int) -> dict[int, int]:
    """Number of non-optimal ordered populations whose elite is each state."""
    f = instance.fitness
    w = instance.multiplicity
    non = instance.non_optimal
    out = {}
    for x in non:
        le = sum(int(w[y]) for y in non if f[y] <= f[x])
        lt = sum(int(w[y]) for y in non if f[y] < f[x])
        eq = le - lt
        q, r = divmod((le ** mu - lt ** mu) * int(w[x]), eq)
        assert r == 0
        out[x] = q
    return out


def build_lumped_chain(instance: Instance, kernel: MutationKernel, rule: SelectionRule,
                       mu: int) -> TransitionSystem:
    """Chain on homogeneous populations (x, ..., x) for best-determined rules.

    Valid because such a rule always returns mu copies of the elite, so from
    (x, ..., x) the next population is again homogeneous. ``weights`` count
    the ordered populations whose elite is ``x``.
    """
    if not rule.best_determined:
        raise ChainError(f"rule {rule.kind!r} is not best-determined; lumping is not exact")
    if mu < 1:
        raise ChainError("mu must be >= 1")
    states = instance.non_optimal
    pos = {x: i for i, x in enumerate(states)}
    opt = instance.optimal_mask
    f = instance.fitness
    order = instance.canonical_order
    rows, absorption = [], []
    for x in states:
        _, law, G = _best_child_law(instance, kernel, (x,) * mu)
        row: dict[int, float] = {}
        absorbed = 0.0
        for k, y in enumerate(order):
            if opt[y]:
                absorbed += law[k]
            elif f[y] > f[x] and law[k] > 0:
                row[pos[y]] = float(law[k])
        first_not_better = next(k for k, y in enumerate(order) if f[y] <= f[x])
        row[pos[x]] = float(G[first_not_better])
        rows.append(row)
        absorption.append(float(absorbed))
    lw = lumped_weights(instance, mu)
    return _finish(instance, states, rows, absorption, [lw[x] for x in states], mu, "lumped")


# ---------------------------------------------------------------------------
# structural checks


@dataclass
class ElitistReport:
    residuals: np.ndarray
    max_residual: float
    ok: bool


def verify_elitist_property(ts: TransitionSystem, tol: float = 1e-12) -> ElitistReport:
    """Residuals of P(X, same(x)) + P(X, high(x)) = 1 for every transient X."""
    Q = ts.Q.tocsr()
    res = np.zeros(ts.n)
    for i in range(ts.n):
        lo, hi = Q.indptr[i], Q.indptr[i + 1]
        cols, vals = Q.indices[lo:hi], Q.data[lo:hi]
        same = vals[ts.best[cols] == ts.best[i]].sum()
        higher = vals[ts.best_fitness[cols] > ts.best_fitness[i]].sum() + ts.absorption[i]
        res[i] = abs(1.0 - same - higher)
    worst = float(res.max()) if ts.n else 0.0
    return ElitistReport(res, worst, worst < tol)


@dataclass
class MutationPropertyReport:
    population_mass: float
    product_formula: float
    member_masses: list[float]
    lower_ok: bool
    upper_ok: bool
    strict: bool
    ok: bool


def verify_mutation_property(kernel: MutationKernel, instance: Instance, X: PopulationState,
                             tol: float = 1e-12) -> MutationPropertyReport:
    """Check P_M(X, high(x)) against the product formula and its member bounds."""
    x = X.best
    higher = instance.fitness > instance.fitness[x]
    probs = kernel.label_probs
    member = [float(probs[m, higher].sum()) for m in X.members]
    product = 1.0 - math.prod(1.0 - p for p in member)
    # independent route: enumerate the child multiset law
    table = _child_table(instance, kernel, include_optimal=True)
    dist, _ = _children_distribution(X.members, table, prune_optimal=False)
    direct = sum(p for ch, p in dist.items() if any(higher[c] for c in ch))
    lower = all(direct >= m - tol for m in member)
    upper = direct <= sum(member) + tol
    strict = None
    ok = abs(direct - product) <= 1e-10 and lower and upper
    if kernel.is_global and X.mu >= 2:
        strict = all(direct > m for m in member) and direct < sum(member)
        ok = ok and strict
    return MutationPropertyReport(direct, product, member, lower, upper, bool(strict), ok)
