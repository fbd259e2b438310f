"""Code-defined instances: the two counterexample tables and the knapsack case studies."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Callable

from .model import Instance, InstanceError, build_tabular_instance, deceptive_knapsack, onemax_knapsack
from .operators import MutationKernel, bitwise_rejection_mutation, tabular_mutation


@dataclass(frozen=True)
class Problem:
    """An instance together with the mutation kernel it is analysed under."""

    instance: Instance
    kernel: MutationKernel
    params: dict


def table12(eps: float = 0.0) -> Problem:
    """Five states with fitness 5..1; x4 jumps to x2 or x3, the others jump straight up."""
    inst = build_tabular_instance({
        "name": "paper-table12",
        "states": ["x0", "x1", "x2", "x3", "x4"],
        "fitness": [5, 4, 3, 2, 1],
    })
    e = float(eps)
    up = [1 - 4 * e, e, e, e, e]
    rows = [up, up, [e, 1 - 4 * e, e, e, e], up, [e, e, 0.5, 0.5 - 3 * e, e]]
    return Problem(inst, tabular_mutation(rows, inst), {"eps": e})


def table34(eps: float = 0.0, copies: int = 100) -> Problem:
    """Like :func:`table12` but the lowest state stands for ``copies`` identical individuals."""
    inst = build_tabular_instance({
        "name": "paper-table34",
        "states": ["x0", "x1", "x2", "x3", "x4"],
        "fitness": [5, 4, 3, 2, 1],
        "multiplicity": [1, 1, 1, 1, copies],
    })
    e = float(eps)
    low = e / copies
    up = [1 - 4 * e, e, e, e, low]
    rows = [up, up, [e, 1 - 4 * e, e, e, low], up, [e, e, 0.5, 0.5 - 3 * e, low]]
    return Problem(inst, tabular_mutation(rows, inst), {"eps": e, "copies": copies})


def _knapsack(factory: Callable[..., Instance]) -> Callable[..., Problem]:
    def build(n: int = 4, flip_prob: float | None = None) -> Problem:
        n = int(n)
        inst = factory(n)
        p = 1.0 / n if flip_prob is None else float(flip_prob)
        return Problem(inst, bitwise_rejection_mutation(inst, p), {"n": n, "flip_prob": p})
    build.__doc__ = f"{factory.__doc__} Bitwise mutation, default flip probability 1/n."
    return build


onemax_problem = _knapsack(onemax_knapsack)
deceptive_problem = _knapsack(deceptive_knapsack)

BUILTINS: dict[str, Callable[..., Problem]] = {
    "paper-table12": table12,
    "paper-table34": table34,
    "onemax-knapsack": onemax_problem,
    "deceptive-knapsack": deceptive_problem,
}

_ALIASES = {"ε": "eps", "epsilon": "eps", "p": "flip_prob"}


def builtin(name: str, **params: Any) -> Problem:
    try:
        factory = BUILTINS[name]
    except KeyError:
        raise InstanceError(f"unknown builtin {name!r}; choose from {sorted(BUILTINS)}") from None
    kwargs = {_ALIASES.get(k, k): v for k, v in params.items()}
    try:
        return factory(**kwargs)
    except TypeError as exc:
        raise InstanceError(f"bad parameters for {name}: {exc}") from None
