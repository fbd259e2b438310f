"""Population-scalability metrics, bridgeable points and the road-condition checkers."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Union

import numpy as np

from .chain import (
    TransitionSystem,
    build_lumped_chain,
    build_one_plus_one_chain,
    build_population_chain,
)
from .model import Instance, PopulationState
from .operators import MutationKernel, SelectionRule, mutation_mass
from .spectral import (
    NonConvergentError,
    RadiusEstimate,
    SpectralReport,
    analyze,
    argmax_self_transition,
    spectral_radius,
)

Value = Union[float, str]
INFINITE = "infinite"
UNDEFINED = "undefined"
DEFAULT_K_MAX = 100


def classify(value: Value | None, mu: int) -> str | None:
    if value is None:
        return None
    if isinstance(value, str):
        return value
    if value <= 1.0:
        return "none"
    if value <= mu:
        return "sublinear"
    return "superlinear"


def build_chains(instance: Instance, kernel: MutationKernel, rule: SelectionRule, mu: int,
                 method: str = "auto", cap: int | None = None) -> tuple[TransitionSystem, TransitionSystem]:
    """The (1+1) chain and the (mu+mu) chain.

    ``method="auto"`` uses the lumped chain on homogeneous populations for
    best-determined rules and the full population chain otherwise.
    """
    one = build_one_plus_one_chain(instance, kernel)
    if method not in ("auto", "full", "lumped"):
        raise ValueError(f"unknown chain method {method!r}")
    lumped = method == "lumped" or (method == "auto" and rule.best_determined)
    if lumped:
        many = build_lumped_chain(instance, kernel, rule, mu)
    else:
        many = build_population_chain(instance, kernel, rule, mu, cap=cap)
    return one, many


@dataclass
class ScalabilityReport:
    mu: int
    rho_scal: Value
    rho_scal_bracket: tuple[float, float] | None
    inf_scal: float | None
    a_scal: float | None
    a_hat_scal: float | None
    classification: dict[str, str | None]
    one: SpectralReport
    many: SpectralReport
    method: str

    def as_dict(self) -> dict:
        return {
            "mu": self.mu,
            "method": self.method,
            "rho_scal": self.rho_scal,
            "rho_scal_bracket": list(self.rho_scal_bracket) if self.rho_scal_bracket else None,
            "inf_scal": self.inf_scal,
            "a_scal": self.a_scal,
            "a_hat_scal": self.a_hat_scal,
            "classification": dict(self.classification),
            "superlinear": self.classification.get("rho") == "superlinear",
        }


def _rho_ratio(r1: RadiusEstimate, rm: RadiusEstimate) -> tuple[Value, tuple[float, float] | None]:
    if r1.lo >= 1.0:
        return (UNDEFINED if rm.lo >= 1.0 else INFINITE), None
    if rm.lo >= 1.0:
        return 0.0, (0.0, 0.0)
    value = (1.0 - rm.rho) / (1.0 - r1.rho)
    return value, ((1.0 - rm.hi) / (1.0 - r1.lo), (1.0 - rm.lo) / (1.0 - r1.hi))


def non_optimal_tuples(instance: Instance, mu: int) -> int:
    """|S_non^(mu)|: ordered populations without an optimal individual."""
    return instance.non_optimal_count ** mu


def scalability_report(instance: Instance, kernel: MutationKernel, rule: SelectionRule, mu: int,
                       *, method: str = "auto", cap: int | None = None) -> ScalabilityReport:
    one, many = build_chains(instance, kernel, rule, mu, method, cap)
    s1, sm = analyze(one), analyze(many)
    r1 = RadiusEstimate(s1.rho_Q, *s1.rho_Q_bracket, s1.certified, s1.method)
    rm = RadiusEstimate(sm.rho_Q, *sm.rho_Q_bracket, sm.certified, sm.method)
    rho, bracket = _rho_ratio(r1, rm)
    inf_s = a_s = a_hat = None
    if s1.convergent and sm.convergent:
        inf_s = s1.norm_inf / sm.norm_inf
        a_s = s1.norm_a / sm.norm_a
        a_hat = instance.non_optimal_count / non_optimal_tuples(instance, mu) * a_s
    cls = {"rho": classify(rho, mu), "inf": classify(inf_s, mu),
           "a": classify(a_s, mu), "a_hat": classify(a_hat, mu)}
    if bracket is not None and cls["rho"] in ("sublinear", "superlinear", "none"):
        # only claim a class the whole bracket agrees with
        lo_cls, hi_cls = classify(bracket[0], mu), classify(bracket[1], mu)
        if lo_cls != hi_cls:
            cls["rho"] = f"{lo_cls}|{hi_cls}"
    return ScalabilityReport(mu, rho, bracket, inf_s, a_s, a_hat, cls, s1, sm, many.kind)


def rho_scalability(instance, kernel, rule, mu, *, method="auto", cap=None) -> Value:
    one, many = build_chains(instance, kernel, rule, mu, method, cap)
    return _rho_ratio(spectral_radius(one), spectral_radius(many))[0]


def _norm_ratio(instance, kernel, rule, mu, attr, method, cap) -> float:
    one, many = build_chains(instance, kernel, rule, mu, method, cap)
    s1, sm = analyze(one), analyze(many)
    if not (s1.convergent and sm.convergent):
        raise NonConvergentError("norm-based scalability needs both chains to be convergent")
    return getattr(s1, attr) / getattr(sm, attr)


def inf_scalability(instance, kernel, rule, mu, *, method="auto", cap=None) -> float:
    return _norm_ratio(instance, kernel, rule, mu, "norm_inf", method, cap)


def a_scalability(instance, kernel, rule, mu, *, method="auto", cap=None) -> float:
    return _norm_ratio(instance, kernel, rule, mu, "norm_a", method, cap)


def a_hat_scalability(instance, kernel, rule, mu, *, method="auto", cap=None) -> float:
    a = a_scalability(instance, kernel, rule, mu, method=method, cap=cap)
    return instance.non_optimal_count / non_optimal_tuples(instance, mu) * a


# ---------------------------------------------------------------------------
# bridgeable points


@dataclass
class BridgeAnalysis:
    bridge_points: dict[int, set[int]]
    landscape: str
    x_rho: int
    weak_bridge_points: dict[int, set[int]] = field(default_factory=dict)

    def as_dict(self, instance: Instance) -> dict:
        lab = instance.labels
        return {
            "landscape": self.landscape,
            "x_rho": lab[self.x_rho],
            "bridge_points": {lab[x]: sorted(lab[y] for y in ys)
                              for x, ys in self.bridge_points.items() if ys},
            "weak_bridge_points": {lab[x]: sorted(lab[y] for y in ys)
                                   for x, ys in self.weak_bridge_points.items() if ys},
        }


def bridge_analysis(instance: Instance, kernel: MutationKernel, tol: float = 1e-12) -> BridgeAnalysis:
    """Bridgeable points of every non-optimal state.

    ``y`` is a bridgeable point of ``x`` when ``y != x``, ``f(y) <= f(x)`` and
    a mutation of ``y`` lands in the states above ``x`` with strictly larger
    probability than a mutation of ``x`` does. Pairs that only tie are kept
    separately in ``weak_bridge_points``.
    """
    probs = kernel.label_probs
    f = instance.fitness
    non = instance.non_optimal
    strict: dict[int, set[int]] = {}
    weak: dict[int, set[int]] = {}
    for x in non:
        higher = f > f[x]
        mass = probs[:, higher].sum(axis=1)
        own = mass[x]
        # symmetric states can differ by summation order alone
        strict[x] = {y for y in non if y != x and f[y] <= f[x] and mass[y] > own + tol}
        weak[x] = {y for y in non if y != x and f[y] <= f[x] and abs(mass[y] - own) <= tol}
    landscape = "bridgeable" if any(strict.values()) else "non_bridgeable"
    x_rho = argmax_self_transition(build_one_plus_one_chain(instance, kernel))
    return BridgeAnalysis(strict, landscape, x_rho, weak)


# ---------------------------------------------------------------------------
# roads


def road_probability(ts: TransitionSystem, k: int, *, block: tuple[int, int] | None = None) -> np.ndarray:
    """P(road(X, target, k)) = 1 - (Q^k 1)(X).

    The target is the optimal set, or with ``block`` the states above the
    block's elite (Q is then restricted to that diagonal block).
    """
    if k < 1:
        raise ValueError("road length must be >= 1")
    Q = ts.Q if block is None else ts.Q[block[0]:block[1], block[0]:block[1]]
    v = np.ones(Q.shape[0])
    for _ in range(k):
        v = Q @ v
    return np.clip(1.0 - v, 0.0, 1.0)


@dataclass
class RoadCheckResult:
    k: int
    lhs: np.ndarray
    rhs: float
    satisfied: bool
    feasible: bool


@dataclass
class Theorem2Result:
    mu: int
    rho_one: float
    threshold_rate: float
    feasible: bool
    checks: list[RoadCheckResult]
    satisfied_at: int | None
    k_max: int

    @property
    def satisfied(self) -> bool:
        return self.satisfied_at is not None

    def as_dict(self) -> dict:
        return {
            "mu": self.mu,
            "rho_Q_one": self.rho_one,
            "mu_times_rate": self.threshold_rate,
            "feasible": self.feasible,
            "k_max": self.k_max,
            "satisfied_at": self.satisfied_at,
            "verdict": ("superlinear" if self.satisfied
                        else "infeasible" if not self.feasible
                        else f"not certified up to k={self.k_max}"),
            "min_lhs_at_k_max": float(self.checks[-1].lhs.min()) if self.checks and self.checks[-1].lhs.size else None,
            "rhs_at_k_max": self.checks[-1].rhs if self.checks else None,
        }


def _threshold(mu: int, rho_one: float, k: int) -> float:
    return 1.0 - (1.0 - mu * (1.0 - rho_one)) ** k


def check_theorem2(instance, kernel, rule, mu, k_max: int = DEFAULT_K_MAX, *,
                   method: str = "auto", cap=None, chains=None) -> Theorem2Result:
    """Road condition on the whole (mu+mu) chain: some k with min_X P(road) > threshold."""
    one, many = chains or build_chains(instance, kernel, rule, mu, method, cap)
    rho_one = spectral_radius(one).rho
    if rho_one >= 1.0:
        raise NonConvergentError("the (1+1) chain is not convergent")
    c = mu * (1.0 - rho_one)
    feasible = c < 1.0
    checks = []
    first = None
    v = np.ones(many.n)
    for k in range(1, k_max + 1):
        v = many.Q @ v
        lhs = np.clip(1.0 - v, 0.0, 1.0)
        rhs = _threshold(mu, rho_one, k) if feasible else math.nan
        ok = bool(feasible and np.all(lhs > rhs))
        checks.append(RoadCheckResult(k, lhs, rhs, ok, feasible))
        if ok and first is None:
            first = k
            break
    return Theorem2Result(mu, rho_one, c, feasible, checks, first, k_max)


@dataclass
class BlockRoadCheck:
    """Road condition inside the block of populations whose elite is ``x``."""

    x: int
    size: int
    satisfied_at: int | None
    total: np.ndarray
    through_bridge: np.ndarray
    over_gap: np.ndarray
    rhs: float
    k: int


@dataclass
class Theorem3Result:
    mu: int
    feasible: bool
    blocks: list[BlockRoadCheck]
    k_max: int

    @property
    def satisfied(self) -> bool:
        return self.feasible and all(b.satisfied_at is not None for b in self.blocks)

    def as_dict(self, instance: Instance) -> dict:
        return {
            "mu": self.mu,
            "feasible": self.feasible,
            "k_max": self.k_max,
            "satisfied": self.satisfied,
            "blocks": [{
                "x": instance.labels[b.x],
                "populations": b.size,
                "satisfied_at": b.satisfied_at,
                "k": b.k,
                "min_total": float(b.total.min()),
                "min_through_bridge": float(b.through_bridge.min()),
                "max_through_bridge": float(b.through_bridge.max()),
                "rhs": b.rhs,
            } for b in self.blocks],
        }


def _contains_bridge(ts: TransitionSystem, lo: int, hi: int, bridges: set[int]) -> np.ndarray:
    if ts.kind in ("lumped", "one_plus_one"):
        return np.array([ts.states[i] in bridges for i in range(lo, hi)])
    return np.array([any(m in bridges for m in ts.states[i].members) for i in range(lo, hi)])


def _block_roads(QB, b: np.ndarray, k: int):
    """Per-step totals and through-bridge probabilities inside one block.

    ``h_j(Y)`` is the probability of leaving the block within ``j`` steps
    from ``Y`` given that ``Y`` is an intermediate population of the road;
    it counts the whole remaining road once ``Y`` holds a bridgeable point.
    """
    v = np.ones(QB.shape[0])
    h_prev = np.zeros(QB.shape[0])
    for _ in range(k):
        through = QB @ h_prev
        v = QB @ v
        total = np.clip(1.0 - v, 0.0, 1.0)
        h_prev = np.where(b, total, through)
        yield total, np.minimum(through, total)


def check_theorem3(instance, kernel, rule, mu, k_max: int = DEFAULT_K_MAX, *,
                   method: str = "full", cap=None, chains=None) -> Theorem3Result:
    """Blockwise road condition split into through-bridge and over-gap parts."""
    if not rule.elitist:
        raise ValueError("the block decomposition needs an elitist rule")
    one, many = chains or build_chains(instance, kernel, rule, mu, method, cap)
    rho_one = spectral_radius(one).rho
    if rho_one >= 1.0:
        raise NonConvergentError("the (1+1) chain is not convergent")
    bridges = bridge_analysis(instance, kernel).bridge_points
    feasible = mu * (1.0 - rho_one) < 1.0
    Q = many.Q.tocsr()
    out = []
    for lo, hi in many.blocks:
        x = int(many.best[lo])
        QB = Q[lo:hi, lo:hi]
        b = _contains_bridge(many, lo, hi, bridges.get(x, set()))
        first = None
        last = None
        for k, (total, through) in enumerate(_block_roads(QB, b, k_max), start=1):
            rhs = _threshold(mu, rho_one, k) if feasible else math.nan
            last = (k, total, through, rhs)
            if feasible and np.all(total > rhs):
                first = k
                break
        k, total, through, rhs = last
        out.append(BlockRoadCheck(x, hi - lo, first, total, through, total - through, rhs, k))
    return Theorem3Result(mu, feasible, out, k_max)


@dataclass
class Theorem4Result:
    verdict: str
    x_rho: int
    bridge_points: set[int]
    reachable_bridge_populations: int
    through_bridge: float
    k_max: int

    def as_dict(self, instance: Instance) -> dict:
        return {
            "verdict": self.verdict,
            "x_rho": instance.labels[self.x_rho],
            "bridge_points": sorted(instance.labels[y] for y in self.bridge_points),
            "reachable_bridge_populations": self.reachable_bridge_populations,
            "through_bridge_from_X_rho": self.through_bridge,
            "k_max": self.k_max,
        }


def check_theorem4_necessary(instance, kernel, rule, mu, k_max: int = DEFAULT_K_MAX, *,
                             cap=None) -> Theorem4Result:
    """Necessary condition: a road through a bridgeable point must leave (x_rho, ..., x_rho).

    Decided by reachability inside the block of x_rho in the full
    population chain; the probability after ``k_max`` steps is reported
    alongside.
    """
    if not rule.elitist:
        raise ValueError("the necessary condition is stated for elitist rules")
    analysis = bridge_analysis(instance, kernel)
    x_rho = analysis.x_rho
    bridges = analysis.bridge_points.get(x_rho, set())
    if not bridges:
        return Theorem4Result("no-superlinear-possible", x_rho, set(), 0, 0.0, k_max)
    many = build_population_chain(instance, kernel, rule, mu, cap=cap)
    lo, hi = many.block_for_best(x_rho)
    Q = many.Q.tocsr()
    QB = Q[lo:hi, lo:hi]
    start = many.index(PopulationState.homogeneous(x_rho, mu))
    b = _contains_bridge(many, lo, hi, bridges)
    leaks = (many.absorption[lo:hi] + np.asarray(Q[lo:hi].sum(axis=1)).ravel()
             - np.asarray(QB.sum(axis=1)).ravel()) > 0
    # populations reachable from X_rho in at least one step
    seen = np.zeros(hi - lo, dtype=bool)
    stack = list(QB[start - lo].indices)
    while stack:
        j = stack.pop()
        if not seen[j]:
            seen[j] = True
            stack.extend(QB[j].indices)
    # populations that can still leave the block
    can_leave = leaks.copy()
    rev = QB.T.tocsr()
    stack = list(np.flatnonzero(leaks))
    while stack:
        j = stack.pop()
        for i in rev[j].indices:
            if not can_leave[i]:
                can_leave[i] = True
                stack.append(i)
    hits = int(np.count_nonzero(seen & b & can_leave))
    through = 0.0
    for _, thr in _block_roads(QB, b, k_max):
        through = float(thr[start - lo])
    verdict = "no-superlinear-possible" if hits == 0 else "inconclusive"
    return Theorem4Result(verdict, x_rho, set(bridges), hits, through, k_max)


# ---------------------------------------------------------------------------
# sufficient conditions for superlinear scaling


@dataclass
class Prop2Report:
    mu: int
    x_rho: int
    second_level: bool
    all_lower_bridgeable: bool
    factor_condition: bool
    factor_ratio: float
    pass_condition: bool
    pass_ratio: float
    diversity_preserving: bool | None
    p_opt_x_rho: float
    p_bridge_x_rho: float

    @property
    def holds(self) -> bool:
        return (self.second_level and self.all_lower_bridgeable and self.factor_condition
                and self.pass_condition and self.diversity_preserving is not False)

    def as_dict(self, instance: Instance) -> dict:
        return {
            "mu": self.mu,
            "x_rho": instance.labels[self.x_rho],
            "x_rho_second_level": self.second_level,
            "lower_states_bridgeable": self.all_lower_bridgeable,
            "opt_factor_holds": self.factor_condition,
            "min_opt_ratio": self.factor_ratio,
            "bridge_pass_holds": self.pass_condition,
            "bridge_pass_ratio": self.pass_ratio,
            "diversity_preserving": self.diversity_preserving,
            "holds": self.holds,
        }


def check_prop2_conditions(instance: Instance, kernel: MutationKernel, mu: int,
                           rule: SelectionRule | None = None) -> Prop2Report:
    """Sufficient conditions for superlinear rho-scalability on a bridgeable landscape.

    The ratios are P_M(y, opt) / P_M(x_rho, opt) minimised over the lower
    states and P_M(x_rho, bridges) / P_M(x_rho, opt); each condition holds
    when its ratio is at least ``mu``.
    """
    analysis = bridge_analysis(instance, kernel)
    x = analysis.x_rho
    f = instance.fitness
    levels = instance.levels.levels
    second = len(levels) >= 2 and f[x] == levels[1]
    lower = [y for y in instance.non_optimal if f[y] < f[x]]
    bridges = analysis.bridge_points.get(x, set())
    all_bridge = bool(lower) and all(y in bridges for y in lower)
    opt = np.flatnonzero(instance.optimal_mask)
    p_x = mutation_mass(kernel, x, opt)
    p_bridge = mutation_mass(kernel, x, bridges)
    if p_x > 0:
        ratio_b = min((mutation_mass(kernel, y, opt) / p_x for y in bridges), default=0.0)
        ratio_c = p_bridge / p_x
    else:
        ratio_b = math.inf if bridges else 0.0
        ratio_c = math.inf if p_bridge > 0 else 0.0
    factor = bool(bridges) and all(mutation_mass(kernel, y, opt) >= mu * p_x for y in bridges)
    passing = p_bridge >= mu * p_x
    diversity = None if rule is None else rule.preserves_diversity
    return Prop2Report(mu, x, bool(second), all_bridge, factor, ratio_b, passing, ratio_c,
                       diversity, p_x, p_bridge)
