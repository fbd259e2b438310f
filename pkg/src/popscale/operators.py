"""Mutation kernels and elitist selection rules with exact transition laws."""
from __future__ import annotations

import bisect
import itertools
import math
import random
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .model import Instance, InstanceError, PopulationState

ROW_TOL = 1e-9
EXACT_TOL = 1e-12


class KernelError(ValueError):
    pass


class SelectionConfigError(ValueError):
    """The selection rule is undefined for the given populations."""


@dataclass(frozen=True, eq=False)
class MutationKernel:
    """Per-individual mutation probabilities.

    ``matrix[x, y]`` is the probability that one individual in state ``x``
    mutates into one particular individual of state ``y``. With
    multiplicities, rows satisfy ``sum_y multiplicity[y] * matrix[x, y] == 1``;
    :attr:`label_probs` gives that weighted (per declared state) form.
    """

    matrix: np.ndarray
    weights: np.ndarray
    is_global: bool

    @property
    def label_probs(self) -> np.ndarray:
        return self.matrix * self.weights[None, :]

    @property
    def size(self) -> int:
        return self.matrix.shape[0]


def _is_global(label_probs: np.ndarray, instance: Instance) -> bool:
    opt = instance.optimal_mask
    mass = label_probs[:, opt].sum(axis=1)
    return bool(np.all(mass[~opt] > 0))


def _finish(matrix: np.ndarray, instance: Instance) -> MutationKernel:
    w = instance.multiplicity.astype(float)
    probs = matrix * w[None, :]
    sums = probs.sum(axis=1)
    bad = np.flatnonzero(np.abs(sums - 1.0) > ROW_TOL)
    if bad.size:
        i = int(bad[0])
        raise KernelError(f"row {i} ({instance.labels[i]}) sums to {float(sums[i])!r}, not 1")
    matrix = matrix / sums[:, None]
    matrix.setflags(write=False)
    wr = w.copy()
    wr.setflags(write=False)
    return MutationKernel(matrix, wr, _is_global(matrix * w[None, :], instance))


def tabular_mutation(rows: Sequence[Sequence[float]], instance: Instance) -> MutationKernel:
    """Kernel from an explicit per-individual probability table."""
    try:
        m = np.array(rows, dtype=float)
    except (TypeError, ValueError) as exc:
        raise KernelError(f"mutation table is not numeric: {exc}") from None
    if m.shape != (instance.size, instance.size):
        raise KernelError(f"mutation table has shape {m.shape}, expected {(instance.size,) * 2}")
    neg = np.argwhere(m < 0)
    if neg.size:
        i, j = (int(v) for v in neg[0])
        raise KernelError(f"row {i} ({instance.labels[i]}) has a negative entry in column {j}")
    if not np.all(np.isfinite(m)):
        raise KernelError("mutation table contains non-finite entries")
    return _finish(m, instance)


def bitwise_rejection_mutation(instance: Instance, flip_prob: float) -> MutationKernel:
    """Independent bit flips; an infeasible offspring is replaced by its parent."""
    enc = instance.encoding
    if enc is None:
        raise KernelError("bitwise mutation needs a bitstring encoding")
    if not 0.0 < flip_prob < 1.0:
        raise KernelError("flip probability must lie in (0, 1)")
    if np.any(instance.multiplicity != 1):
        raise KernelError("bitwise mutation does not support multiplicities")
    codes = np.array(enc.codes, dtype=np.int64)
    dist = np.zeros((len(codes), len(codes)), dtype=np.int64)
    xor = codes[:, None] ^ codes[None, :]
    for b in range(enc.n):
        dist += (xor >> b) & 1
    p, n = float(flip_prob), enc.n
    m = p ** dist * (1.0 - p) ** (n - dist)
    np.fill_diagonal(m, 0.0)
    # the diagonal absorbs the exact self-mass plus every rejected offspring
    np.fill_diagonal(m, 1.0 - m.sum(axis=1))
    return _finish(m, instance)


def mix_with_global(base: MutationKernel, epsilon: float) -> MutationKernel:
    """Apply ``base`` w.p. 1-epsilon and a uniform draw over all individuals w.p. epsilon."""
    if not 0.0 < epsilon < 1.0:
        raise KernelError("epsilon must lie in (0, 1)")
    total = float(base.weights.sum())
    m = (1.0 - epsilon) * base.matrix + epsilon / total
    m.setflags(write=False)
    return MutationKernel(m, base.weights, True)


def mutation_mass(kernel: MutationKernel, x: int, target: Iterable[int]) -> float:
    """P_M(x, target), counting every individual represented by a target state."""
    idx = sorted(set(int(t) for t in target))
    if not idx:
        return 0.0
    return float(kernel.label_probs[int(x), idx].sum())


# ---------------------------------------------------------------------------
# selection


def _elite(instance: Instance, incumbent: int, children: Sequence[int]) -> tuple[int, bool]:
    """Next elite: the fittest child if strictly fitter than the incumbent."""
    if not children:
        return incumbent, False
    rank = instance.rank
    champion = min(children, key=lambda c: rank[c])
    if instance.fitness[champion] > instance.fitness[incumbent]:
        return int(champion), True
    return incumbent, False


def _pool(parents: PopulationState, children: Sequence[int], elite: int) -> list[int]:
    pool = list(parents.members) + list(children)
    # drop the individual occupying the elite slot; copies share a label
    pool.remove(elite)
    return pool


@dataclass(frozen=True)
class SelectionRule:
    """An elitist (mu+mu) replacement rule.

    :meth:`successors` returns the exact law of the next population given
    the parents and the multiset of their children; :meth:`sample` draws
    from the same law procedurally.
    """

    kind: str
    elitist: bool = True
    exchangeable: bool = True
    best_determined: bool = False
    preserves_diversity: bool = False

    def successors(self, instance: Instance, parents: PopulationState,
                   children: Sequence[int]) -> dict[PopulationState, float]:
        mu = parents.mu
        elite, _ = _elite(instance, parents.best, children)
        if self.kind == "replicate_best":
            return {PopulationState.homogeneous(elite, mu): 1.0}
        pool = _pool(parents, children, elite)
        if self.kind == "elitist_truncation":
            rank = instance.rank
            kept = sorted(pool, key=lambda s: (rank[s], s))[: mu - 1]
            return {PopulationState(elite, tuple(sorted(kept + [elite]))): 1.0}
        if self.kind == "elitist_proportional":
            if mu == 1:
                return {PopulationState(elite, (elite,)): 1.0}
            probs = _proportional_probs(instance, pool)
            labels = sorted(probs)
            out: dict[PopulationState, float] = {}
            for combo in itertools.combinations_with_replacement(labels, mu - 1):
                counts = Counter(combo)
                p = float(math.factorial(mu - 1))
                for s, k in counts.items():
                    p *= probs[s] ** k / math.factorial(k)
                if p > 0.0:
                    z = PopulationState(elite, tuple(sorted(combo + (elite,))))
                    out[z] = out.get(z, 0.0) + p
            return out
        raise SelectionConfigError(f"unknown selection rule {self.kind!r}")

    def sample(self, instance: Instance, parents: PopulationState, children: Sequence[int],
               rng: random.Random) -> PopulationState:
        mu = parents.mu
        elite, _ = _elite(instance, parents.best, children)
        if self.kind == "replicate_best":
            return PopulationState.homogeneous(elite, mu)
        pool = _pool(parents, children, elite)
        if self.kind == "elitist_truncation":
            rank = instance.rank
            kept = sorted(pool, key=lambda s: (rank[s], s))[: mu - 1]
            return PopulationState(elite, tuple(sorted(kept + [elite])))
        if self.kind == "elitist_proportional":
            if mu == 1:
                return PopulationState(elite, (elite,))
            fit = [float(instance.fitness[s]) for s in pool]
            if min(fit) < 0:
                raise SelectionConfigError("proportional selection needs non-negative fitness")
            total = sum(fit)
            if total > 0:
                cum = list(itertools.accumulate(fit))
                picks = [pool[min(bisect.bisect_right(cum, rng.random() * total), len(pool) - 1)]
                         for _ in range(mu - 1)]
            else:
                picks = [pool[rng.randrange(len(pool))] for _ in range(mu - 1)]
            return PopulationState(elite, tuple(sorted(picks + [elite])))
        raise SelectionConfigError(f"unknown selection rule {self.kind!r}")


def _proportional_probs(instance: Instance, pool: Sequence[int]) -> dict[int, float]:
    fit = np.array([instance.fitness[s] for s in pool], dtype=float)
    if np.any(fit < 0):
        raise SelectionConfigError("proportional selection needs non-negative fitness")
    total = fit.sum()
    slot = fit / total if total > 0 else np.full(len(pool), 1.0 / len(pool))
    probs: dict[int, float] = {}
    for s, p in zip(pool, slot):
        probs[s] = probs.get(s, 0.0) + float(p)
    return probs


def replicate_best_selection() -> SelectionRule:
    """mu copies of the best of parents and children (the (1+mu) scheme)."""
    return SelectionRule("replicate_best", best_determined=True, preserves_diversity=False)


def elitist_proportional_selection() -> SelectionRule:
    """Elite slot plus mu-1 fitness-proportional draws (with replacement) from the rest."""
    return SelectionRule("elitist_proportional", preserves_diversity=True)


def elitist_truncation_selection() -> SelectionRule:
    """Elite slot plus the mu-1 fittest of the remaining individuals."""
    return SelectionRule("elitist_truncation", preserves_diversity=False)


RULES = {
    "replicate_best": replicate_best_selection,
    "elitist_proportional": elitist_proportional_selection,
    "elitist_truncation": elitist_truncation_selection,
}


def selection_rule(name: str) -> SelectionRule:
    try:
        return RULES[name.replace("-", "_")]()
    except KeyError:
        raise InstanceError(f"unknown selection rule {name!r}; choose from {sorted(RULES)}") from None
