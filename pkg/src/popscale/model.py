"""Problem instances: individuals, fitness, multiplicities and fitness levels."""
from __future__ import annotations

import itertools
import math
from functools import cached_property
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

#: Largest bitstring length that may be enumerated exhaustively.
DEFAULT_ENUMERATION_CAP = 16


class InstanceError(ValueError):
    """Raised for malformed or inconsistent instance descriptions."""


@dataclass(frozen=True)
class BitEncoding:
    """Bitstring metadata; ``codes[i]`` is the integer code of state ``i`` (s1 is the MSB)."""

    n: int
    codes: tuple[int, ...]
    feasibility: str = "all"


@dataclass(frozen=True)
class StatePartition:
    optimal: frozenset[int]
    non_optimal: frozenset[int]


@dataclass(frozen=True)
class FitnessLevelIndex:
    levels: tuple[float, ...]
    level_of: tuple[int, ...]


@dataclass(frozen=True)
class PopulationState:
    """A population in canonical multiset form with its designated elite.

    ``members`` holds state indices in non-decreasing order and includes
    ``best``. The elite is tracked explicitly: under strict elitist
    acceptance an equal-fitness newcomer never takes over, so two
    populations with the same members but different elites are different
    chain states.
    """

    best: int
    members: tuple[int, ...]

    @property
    def mu(self) -> int:
        return len(self.members)

    @classmethod
    def homogeneous(cls, x: int, mu: int) -> "PopulationState":
        return cls(x, (x,) * mu)


@dataclass(frozen=True, eq=False)
class Instance:
    """A finite search space with fitness values and state multiplicities.

    A declared state with multiplicity ``k`` stands for ``k`` distinct
    individuals sharing the same fitness and the same mutation behaviour.
    Instances are immutable once built.
    """

    labels: tuple[str, ...]
    fitness: np.ndarray
    multiplicity: np.ndarray
    encoding: BitEncoding | None = None
    name: str = ""
    _index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        labels = tuple(str(s) for s in self.labels)
        if not labels:
            raise InstanceError("instance has no states")
        if len(set(labels)) != len(labels):
            dupes = sorted({s for s in labels if labels.count(s) > 1})
            raise InstanceError(f"duplicate state labels: {dupes}")
        fitness = np.asarray(self.fitness, dtype=float).copy()
        mult = np.asarray(self.multiplicity, dtype=np.int64).copy()
        if fitness.shape != (len(labels),) or mult.shape != (len(labels),):
            raise InstanceError("fitness and multiplicity must have one entry per state")
        if not np.all(np.isfinite(fitness)):
            raise InstanceError("fitness values must be finite")
        if np.any(mult < 1):
            raise InstanceError("multiplicities must be >= 1")
        if int(mult.sum()) < 2:
            raise InstanceError("the space of individuals needs at least 2 states")
        fitness.setflags(write=False)
        mult.setflags(write=False)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "fitness", fitness)
        object.__setattr__(self, "multiplicity", mult)
        object.__setattr__(self, "_index", {s: i for i, s in enumerate(labels)})

    # -- basic queries -------------------------------------------------

    @property
    def size(self) -> int:
        """Number of declared states."""
        return len(self.labels)

    @property
    def effective_size(self) -> int:
        """Number of individuals once multiplicities are expanded."""
        return int(self.multiplicity.sum())

    def index(self, state: str | int) -> int:
        if isinstance(state, (int, np.integer)):
            if not 0 <= int(state) < self.size:
                raise InstanceError(f"unknown state index {state}")
            return int(state)
        try:
            return self._index[str(state)]
        except KeyError:
            raise InstanceError(f"unknown state {state!r}") from None

    @cached_property
    def max_fitness(self) -> float:
        return float(self.fitness.max())

    @cached_property
    def partition(self) -> StatePartition:
        opt = np.flatnonzero(self.fitness == self.max_fitness)
        non = np.flatnonzero(self.fitness != self.max_fitness)
        return StatePartition(frozenset(int(i) for i in opt), frozenset(int(i) for i in non))

    @cached_property
    def optimal_mask(self) -> np.ndarray:
        return self.fitness == self.max_fitness

    @cached_property
    def non_optimal(self) -> list[int]:
        """Non-optimal state indices in canonical order."""
        return [i for i in self.canonical_order if not self.optimal_mask[i]]

    @cached_property
    def non_optimal_count(self) -> int:
        """|S_non| counted with multiplicities."""
        return int(self.multiplicity[~self.optimal_mask].sum())

    @cached_property
    def canonical_order(self) -> list[int]:
        """State indices sorted by fitness (descending), declaration order within a level."""
        return sorted(range(self.size), key=lambda i: (-self.fitness[i], i))

    @cached_property
    def rank(self) -> np.ndarray:
        """``rank[i]`` is the position of state ``i`` in the canonical order."""
        r = np.empty(self.size, dtype=np.int64)
        r[self.canonical_order] = np.arange(self.size)
        return r

    @cached_property
    def levels(self) -> FitnessLevelIndex:
        values = tuple(sorted({float(f) for f in self.fitness}, reverse=True))
        pos = {v: k for k, v in enumerate(values)}
        return FitnessLevelIndex(values, tuple(pos[float(f)] for f in self.fitness))

    def high_set(self, x: str | int) -> set[int]:
        """States strictly fitter than ``x``."""
        return high_set(self, x)

    def describe(self) -> dict[str, Any]:
        out: dict[str, Any] = {
            "name": self.name,
            "states": list(self.labels),
            "fitness": [float(f) for f in self.fitness],
            "multiplicity": [int(m) for m in self.multiplicity],
        }
        if self.encoding is not None:
            out["encoding"] = {"n": self.encoding.n, "feasibility": self.encoding.feasibility}
        return out


def high_set(instance: Instance, x: str | int) -> set[int]:
    """S_high(x): indices of states whose fitness is strictly above f(x)."""
    i = instance.index(x)
    return {int(j) for j in np.flatnonzero(instance.fitness > instance.fitness[i])}


def build_tabular_instance(spec: Mapping[str, Any]) -> Instance:
    """Build an instance from ``{"states": [...], "fitness": [...], "multiplicity": [...]}``.

    ``multiplicity`` is optional and defaults to 1 for every state.
    """
    try:
        states = list(spec["states"])
        fitness = [float(v) for v in spec["fitness"]]
    except KeyError as exc:
        raise InstanceError(f"tabular instance is missing field {exc.args[0]!r}") from None
    except (TypeError, ValueError) as exc:
        raise InstanceError(f"bad fitness values: {exc}") from None
    if not states:
        raise InstanceError("instance has no states")
    if len(fitness) != len(states):
        raise InstanceError(f"{len(states)} states but {len(fitness)} fitness values")
    mult = spec.get("multiplicity")
    if mult is None:
        mult = [1] * len(states)
    mult = list(mult)
    if len(mult) != len(states):
        raise InstanceError(f"{len(states)} states but {len(mult)} multiplicities")
    if any(int(m) != m for m in mult):
        raise InstanceError("multiplicities must be integers")
    return Instance(tuple(states), np.array(fitness), np.array(mult, dtype=np.int64),
                    name=str(spec.get("name", "")))


def _bits(code: int, n: int) -> str:
    return format(code, f"0{n}b")


def build_knapsack_instance(
    n: int,
    values: Sequence[float],
    weights: Sequence[float],
    capacity: float,
    *,
    enumeration_cap: int = DEFAULT_ENUMERATION_CAP,
    name: str = "knapsack",
) -> Instance:
    """Enumerate the feasible strings of a 0-1 knapsack instance.

    Fitness is the packed value; infeasible strings are excluded from the
    state space. States are labelled by their bitstring, item 1 first.
    """
    if n < 2:
        raise InstanceError("knapsack needs n >= 2")
    if n > enumeration_cap:
        raise InstanceError(f"n={n} exceeds the enumeration cap {enumeration_cap}")
    if len(values) != n or len(weights) != n:
        raise InstanceError("values and weights must both have length n")
    if not capacity > 0:
        raise InstanceError("capacity must be positive")
    v = np.asarray(values, dtype=float)
    w = np.asarray(weights, dtype=float)
    labels, fit, codes = [], [], []
    for bits in itertools.product((0, 1), repeat=n):
        s = np.array(bits)
        # small slack so that e.g. C = 0.5 n with integral weights is exact
        if float(w @ s) <= capacity + 1e-9 * max(1.0, abs(capacity)):
            code = int("".join(map(str, bits)), 2)
            labels.append(_bits(code, n))
            fit.append(float(v @ s))
            codes.append(code)
    if not labels:
        raise InstanceError("no feasible string")
    enc = BitEncoding(n, tuple(codes), feasibility=f"knapsack(C={capacity:g})")
    return Instance(tuple(labels), np.array(fit), np.ones(len(labels), dtype=np.int64),
                    encoding=enc, name=name)


def onemax_knapsack(n: int, **kw: Any) -> Instance:
    """Knapsack with unit values and weights and capacity n/2 (OneMax-like)."""
    return build_knapsack_instance(n, [1.0] * n, [1.0] * n, 0.5 * n, name=f"onemax-knapsack-{n}", **kw)


def deceptive_knapsack(n: int, **kw: Any) -> Instance:
    """Knapsack whose heavy first item is the unique optimum (deceptive)."""
    values = [float(n)] + [1.0] * (n - 1)
    weights = [float(n - 1)] + [1.0] * (n - 1)
    return build_knapsack_instance(n, values, weights, float(n - 1), name=f"deceptive-knapsack-{n}", **kw)


def tuple_count(instance: Instance, members: Iterable[int]) -> int:
    """Number of ordered tuples of individuals represented by a multiset of states."""
    members = list(members)
    counts: dict[int, int] = {}
    for m in members:
        counts[m] = counts.get(m, 0) + 1
    total = math.factorial(len(members))
    for state, k in counts.items():
        total //= math.factorial(k)
        total *= int(instance.multiplicity[state]) ** k
    return total
