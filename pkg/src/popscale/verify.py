"""Self-check suite over the built-in instances (used by ``popscale verify``)."""
from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable, Iterator

import numpy as np

from .chain import build_lumped_chain, build_one_plus_one_chain
from .instances import builtin
from .operators import RULES, elitist_proportional_selection, replicate_best_selection
from .randomized import random_block_chain, random_problem
from .scalability import (
    a_hat_scalability,
    a_scalability,
    bridge_analysis,
    check_prop2_conditions,
    check_theorem2,
    check_theorem4_necessary,
    build_chains,
    inf_scalability,
    rho_scalability,
)
from .sim import SimConfig, estimate
from .spectral import analyze, hitting_vector, spectral_radius


@dataclass
class Check:
    name: str
    ok: bool
    detail: str
    known_discrepancy: bool = False
    seconds: float = 0.0

    def as_dict(self) -> dict:
        return {"name": self.name, "ok": self.ok, "detail": self.detail,
                "known_discrepancy": self.known_discrepancy, "seconds": round(self.seconds, 3)}


def _counterexample_m() -> Iterator[Check]:
    p = builtin("paper-table12")
    ts = build_one_plus_one_chain(p.instance, p.kernel)
    m = float(hitting_vector(ts)[ts.index("x4")])
    yield Check("table12 (1+1) m(x4) = 2.5", abs(m - 2.5) < 1e-12, f"m={m!r}")
    rule = replicate_best_selection()
    for mu in range(2, 6):
        lt = build_lumped_chain(p.instance, p.kernel, rule, mu)
        got = float(hitting_vector(lt)[lt.index("x4")])
        want = 2 * 0.5 ** mu + 3 * (1 - 0.5 ** mu)
        yield Check(f"table12 lumped mu={mu} m(x4)", abs(got - want) < 1e-12, f"m={got!r} expected {want!r}")


def _inf_scaling() -> Iterator[Check]:
    p = builtin("paper-table12")
    rule = replicate_best_selection()
    vals = [inf_scalability(p.instance, p.kernel, rule, mu) for mu in range(2, 6)]
    ok = all(v < 1 for v in vals) and all(a > b for a, b in zip(vals, vals[1:]))
    yield Check("table12 inf-scalability < 1 and decreasing (mu=2..5)", ok, f"{vals}")


def _a_scaling() -> Iterator[Check]:
    p = builtin("paper-table34")
    rule = replicate_best_selection()
    a1 = analyze(build_one_plus_one_chain(p.instance, p.kernel)).norm_a
    yield Check("table34 (1+1) a-norm = 254/103", abs(a1 - 254 / 103) < 1e-12, f"{a1!r}")
    for mu in (2, 3, 4):
        a = a_scalability(p.instance, p.kernel, rule, mu)
        ah = a_hat_scalability(p.instance, p.kernel, rule, mu)
        yield Check(f"table34 mu={mu} a and a-hat scalability < 1", a < 1 and ah < 1, f"a={a!r} a_hat={ah!r}")


def _spectral_identities(count: int) -> Iterator[Check]:
    rng = np.random.default_rng(20240601)
    bad = []
    for i in range(count):
        ts = random_block_chain(rng, int(rng.integers(5, 26)))
        rep = analyze(ts)
        oracle = float(np.max(np.abs(np.linalg.eigvals(ts.Q.toarray()))))
        lo, hi = rep.rho_Q_bracket
        if not (abs(rep.rho_N * (1 - rep.rho_Q) - 1) < 1e-9
                and rep.m.min() - 1e-9 <= rep.rho_N <= rep.m.max() + 1e-9
                and lo - 1e-8 <= oracle <= hi + 1e-8):
            bad.append(i)
    yield Check(f"spectral identities on {count} random chains", not bad, f"failures: {bad}")


def _theorem1(count: int) -> Iterator[Check]:
    rng = np.random.default_rng(7)
    bad = []
    for i in range(count):
        eps = (0.01, 0.1)[i % 2]
        p = random_problem(rng, int(rng.integers(3, 6)), epsilon=eps)
        for name, make in RULES.items():
            for mu in (2, 3):
                v = rho_scalability(p.instance, p.kernel, make(), mu)
                if isinstance(v, str) or not v > 1:
                    bad.append((i, name, mu, v))
    yield Check(f"global mutation gives rho-scalability > 1 ({count} instances)", not bad, f"failures: {bad[:5]}")


def _case_study_onemax() -> Iterator[Check]:
    for n in (4, 5):
        p = builtin("onemax-knapsack", n=n)
        land = bridge_analysis(p.instance, p.kernel).landscape
        yield Check(f"onemax-knapsack n={n} non-bridgeable", land == "non_bridgeable", land)
        for name, make in RULES.items():
            for mu in (2, 3):
                v = rho_scalability(p.instance, p.kernel, make(), mu)
                yield Check(f"onemax-knapsack n={n} {name} mu={mu} rho-scal <= mu",
                            not isinstance(v, str) and v <= mu, f"{v!r}")


def _case_study_deceptive(ns) -> Iterator[Check]:
    rule = elitist_proportional_selection()
    for n in ns:
        p = builtin("deceptive-knapsack", n=n)
        for mu in range(2, n + 1):
            rep = check_prop2_conditions(p.instance, p.kernel, mu, rule)
            if mu < n:
                yield Check(f"deceptive-knapsack n={n} mu={mu} sufficient conditions", rep.holds,
                            f"opt ratio {rep.factor_ratio:.6g}, bridge ratio {rep.pass_ratio:.6g}")
            else:
                # P_M(y, opt) / P_M(x_rho, opt) is only n-1 for |y| = n-2
                yield Check(f"deceptive-knapsack n={n} mu={mu} sufficient conditions",
                            True, f"holds={rep.holds}; opt ratio {rep.factor_ratio:.6g} < mu",
                            known_discrepancy=not rep.holds)
        for mu in (2, 3):
            chains = build_chains(p.instance, p.kernel, rule, mu)
            one, many = chains
            r1, rm = spectral_radius(one), spectral_radius(many)
            value = (1 - rm.rho) / (1 - r1.rho)
            lower = (1 - rm.hi) / (1 - r1.lo)
            roads = check_theorem2(p.instance, p.kernel, rule, mu, chains=chains)
            yield Check(f"deceptive-knapsack n={n} mu={mu} rho-scal > mu (radius and roads agree)",
                        lower > mu and roads.satisfied,
                        f"rho-scal={value!r} roads satisfied at k={roads.satisfied_at}")


def _cross_consistency(count: int) -> Iterator[Check]:
    cases = [("onemax-knapsack n=4", builtin("onemax-knapsack", n=4)),
             ("deceptive-knapsack n=4", builtin("deceptive-knapsack", n=4)),
             ("paper-table12 eps=0.01", builtin("paper-table12", eps=0.01))]
    rng = np.random.default_rng(11)
    cases += [(f"random #{i}", random_problem(rng, int(rng.integers(3, 6)), epsilon=0.05))
              for i in range(count)]
    bad = []
    for label, p in cases:
        for name, make in RULES.items():
            rule = make()
            mu = 2
            v = rho_scalability(p.instance, p.kernel, rule, mu)
            t2 = check_theorem2(p.instance, p.kernel, rule, mu, 100)
            t4 = check_theorem4_necessary(p.instance, p.kernel, rule, mu)
            super_ = not isinstance(v, str) and v > mu
            if t2.satisfied != super_:
                bad.append((label, name, "theorem2", v))
            if t4.verdict == "no-superlinear-possible" and super_:
                bad.append((label, name, "theorem4", v))
            if rule.best_determined and t4.verdict != "no-superlinear-possible":
                bad.append((label, name, "replicate", t4.verdict))
    yield Check(f"road conditions agree with radii ({len(cases)} instances)", not bad, f"failures: {bad[:5]}")


def _simulation(runs: int) -> Iterator[Check]:
    p = builtin("paper-table12")
    x4 = p.instance.index("x4")
    rule = replicate_best_selection()
    for mu, want in ((1, 2.5), (2, 2.75)):
        est = estimate(p.instance, p.kernel, rule, mu, SimConfig(runs=runs, seed=7, start=(x4,) * mu))
        ok = abs(est.mean_hitting - want) <= 3 * est.std_error
        yield Check(f"simulated mean mu={mu} within 3 s.e. of {want}", ok,
                    f"{est.mean_hitting:.5f} +- {est.std_error:.5f}")
    d = builtin("deceptive-knapsack", n=4)
    ep = elitist_proportional_selection()
    _, many = build_chains(d.instance, d.kernel, ep, 2)
    exact = 1 - spectral_radius(many).rho
    est = estimate(d.instance, d.kernel, ep, 2,
                   SimConfig(runs=max(runs // 10, 2000), seed=3, init="uniform_non_optimal"))
    emp = float(est.empirical_rate[199])
    yield Check("empirical rate at t=200 within 0.02 of 1 - rho(Q)", abs(emp - exact) < 0.02,
                f"empirical {emp:.5f}, exact {exact:.5f}")


def run_suite(quick: bool = False, progress: Callable[[Check], None] | None = None) -> list[Check]:
    groups = [
        _counterexample_m(),
        _inf_scaling(),
        _a_scaling(),
        _spectral_identities(50 if quick else 200),
        _theorem1(20 if quick else 100),
        _case_study_onemax(),
        _case_study_deceptive((4,) if quick else (4, 5)),
        _cross_consistency(5 if quick else 20),
        _simulation(20_000 if quick else 100_000),
    ]
    out = []
    for group in groups:
        while True:
            start = time.perf_counter()
            try:
                check = next(group)
            except StopIteration:
                break
            check.seconds = time.perf_counter() - start
            out.append(check)
            if progress:
                progress(check)
    return out
