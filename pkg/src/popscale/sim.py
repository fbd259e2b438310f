"""Monte Carlo runs of the (mu+mu) EA, independent of the chain construction."""
from __future__ import annotations

import bisect
import math
import random
from dataclasses import dataclass, field
from itertools import accumulate
from typing import Sequence

import numpy as np

from .model import Instance, PopulationState
from .operators import MutationKernel, SelectionRule

INITS = ("fixed", "uniform_non_optimal", "uniform_all")


@dataclass(frozen=True)
class SimConfig:
    runs: int = 10_000
    t_cap: int = 100_000
    seed: int = 0
    init: str = "fixed"
    start: tuple[int, ...] | None = None
    t_rate: int = 200

    def __post_init__(self) -> None:
        if self.runs < 1 or self.t_cap < 1:
            raise ValueError("runs and t_cap must be >= 1")
        if self.init not in INITS:
            raise ValueError(f"init must be one of {INITS}")
        if self.init == "fixed" and not self.start:
            raise ValueError("fixed initialisation needs a start population")


@dataclass
class SimEstimate:
    runs: int
    mean_hitting: float
    std_error: float
    censored: int
    survival: np.ndarray
    empirical_rate: np.ndarray
    hitting_times: list[int | None] = field(repr=False, default_factory=list)

    @property
    def usable(self) -> bool:
        return self.censored < self.runs

    def as_dict(self) -> dict:
        return {
            "runs": self.runs,
            "mean_hitting": self.mean_hitting,
            "std_error": self.std_error,
            "censored": self.censored,
            "usable": self.usable,
            "survival_at": {str(t): float(self.survival[t])
                            for t in (1, 10, 100, 200, 1000) if t < len(self.survival)},
            "empirical_rate_at": {str(t): float(self.empirical_rate[t - 1])
                                  for t in (1, 10, 100, 200) if t <= len(self.empirical_rate)},
        }


def run_rng(seed: int, run_index: int) -> random.Random:
    """Independent stream for one run, fixed by (seed, run index) alone."""
    return random.Random((int(seed) << 32) | int(run_index))


class _Sampler:
    def __init__(self, instance: Instance, kernel: MutationKernel):
        self.instance = instance
        probs = kernel.label_probs
        self.cum = [list(accumulate(row.tolist())) for row in probs]
        self.opt = instance.optimal_mask.tolist()
        self.fit = instance.fitness.tolist()
        self.last = instance.size - 1
        # individuals (with multiplicity) for uniform initial draws
        w = instance.multiplicity.tolist()
        self.all_cum = list(accumulate(w))
        non = [i for i in range(instance.size) if not self.opt[i]]
        self.non = non
        self.non_cum = list(accumulate(w[i] for i in non))

    def mutate(self, x: int, rng: random.Random) -> int:
        row = self.cum[x]
        return min(bisect.bisect_right(row, rng.random() * row[-1]), self.last)

    def initial(self, config: SimConfig, mu: int, rng: random.Random) -> list[int]:
        if config.init == "fixed":
            return list(config.start)
        if config.init == "uniform_all":
            cum, pool = self.all_cum, range(self.instance.size)
        else:
            cum, pool = self.non_cum, self.non
        return [pool[bisect.bisect_right(cum, rng.random() * cum[-1])] for _ in range(mu)]


def _population(sampler: _Sampler, members: Sequence[int]) -> PopulationState:
    top = max(sampler.fit[m] for m in members)
    elite = next(m for m in members if sampler.fit[m] == top)
    return PopulationState(elite, tuple(sorted(members)))


def _run(sampler: _Sampler, rule: SelectionRule, members: list[int], t_cap: int,
         rng: random.Random) -> int | None:
    opt = sampler.opt
    if any(opt[m] for m in members):
        return 0
    X = _population(sampler, members)
    instance = sampler.instance
    for t in range(1, t_cap + 1):
        children = tuple(sampler.mutate(m, rng) for m in X.members)
        if rule.elitist and any(opt[c] for c in children):
            return t
        X = rule.sample(instance, X, children, rng)
        if any(opt[m] for m in X.members):
            return t
    return None


def run_once(instance: Instance, kernel: MutationKernel, rule: SelectionRule, mu: int, seed: int,
             *, start: Sequence[int] | None = None, t_cap: int = 100_000,
             init: str = "fixed") -> int | None:
    """First generation whose population holds an optimal individual; ``None`` if censored."""
    config = SimConfig(runs=1, t_cap=t_cap, seed=seed, init=init,
                       start=tuple(start) if start is not None else None)
    sampler = _Sampler(instance, kernel)
    rng = run_rng(seed, 0)
    members = sampler.initial(config, mu, rng)
    if len(members) != mu:
        raise ValueError(f"start population has {len(members)} members, expected {mu}")
    return _run(sampler, rule, members, t_cap, rng)


def estimate(instance: Instance, kernel: MutationKernel, rule: SelectionRule, mu: int,
             config: SimConfig) -> SimEstimate:
    """Aggregate ``config.runs`` independent runs (run i uses stream (seed, i))."""
    sampler = _Sampler(instance, kernel)
    times: list[int | None] = []
    for i in range(config.runs):
        rng = run_rng(config.seed, i)
        members = sampler.initial(config, mu, rng)
        if len(members) != mu:
            raise ValueError(f"start population has {len(members)} members, expected {mu}")
        times.append(_run(sampler, rule, members, config.t_cap, rng))
    hit = np.array([t for t in times if t is not None], dtype=float)
    censored = len(times) - hit.size
    mean = float(hit.mean()) if hit.size else math.nan
    se = float(hit.std(ddof=1) / math.sqrt(hit.size)) if hit.size > 1 else math.nan
    horizon = min(config.t_cap, max(config.t_rate, int(hit.max()) if hit.size else 0))
    # survival[t] = fraction of runs still without an optimum after t generations
    counts = np.bincount(hit.astype(np.int64), minlength=horizon + 1)[: horizon + 1]
    survival = (len(times) - np.cumsum(counts)) / len(times)
    t = np.arange(1, horizon + 1)
    with np.errstate(divide="ignore", invalid="ignore"):
        rates = np.where(survival[0] > 0, 1.0 - (survival[1:] / survival[0]) ** (1.0 / t), math.nan)
    return SimEstimate(len(times), mean, se, censored, survival, rates, times)
