"""Random chains and instances for property checks."""
from __future__ import annotations

import numpy as np

from .chain import TransitionSystem
from .instances import Problem
from .model import build_tabular_instance
from .operators import mix_with_global, tabular_mutation


def random_block_chain(rng: np.random.Generator, n_states: int) -> TransitionSystem:
    """Block lower-triangular substochastic Q in which every state can leak.

    Blocks are dense (hence irreducible); each block has at least one row
    with direct absorption, other rows leak with probability 1/2.
    """
    sizes = []
    left = n_states
    while left:
        s = int(rng.integers(1, min(6, left) + 1))
        sizes.append(s)
        left -= s
    Q = np.zeros((n_states, n_states))
    absorption = np.zeros(n_states)
    blocks = []
    lo = 0
    for s in sizes:
        hi = lo + s
        blocks.append((lo, hi))
        leaking = rng.random(s) < 0.5
        leaking[rng.integers(s)] = True
        for r, i in enumerate(range(lo, hi)):
            inside = rng.random(s) + 0.05
            earlier = rng.random(lo) * (rng.random(lo) < 0.3)
            leak = rng.uniform(0.01, 0.5) if leaking[r] else 0.0
            total = inside.sum() + earlier.sum()
            scale = (1.0 - leak) / total
            Q[i, lo:hi] = inside * scale
            Q[i, :lo] = earlier * scale
            absorption[i] = leak
        lo = hi
    return TransitionSystem.from_matrix(Q, absorption, blocks=tuple(blocks))


def random_problem(rng: np.random.Generator, n_states: int, *, epsilon: float | None = None,
                   levels: int | None = None, density: float = 0.6) -> Problem:
    """Random tabular instance and kernel; ``epsilon`` mixes in uniform mutation."""
    levels = levels or n_states
    fitness = rng.integers(0, levels, size=n_states).astype(float)
    fitness[rng.integers(n_states)] = levels  # at least one optimum
    inst = build_tabular_instance({
        "name": "random",
        "states": [f"s{i}" for i in range(n_states)],
        "fitness": fitness.tolist(),
    })
    rows = rng.random((n_states, n_states)) * (rng.random((n_states, n_states)) < density)
    rows[np.arange(n_states), np.arange(n_states)] += 0.1
    rows /= rows.sum(axis=1, keepdims=True)
    kernel = tabular_mutation(rows, inst)
    if epsilon is not None:
        kernel = mix_with_global(kernel, epsilon)
    return Problem(inst, kernel, {"n_states": n_states, "epsilon": epsilon})
