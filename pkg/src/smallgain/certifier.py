"""Small-gain condition checks, linear-family multiplier search and the
offset d3 that extends the condition from ``[s_l, cap]`` down to zero.

The condition is checked on a finite grid; a feasible report means
"certified on grid", not a formal proof.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize_scalar

from smallgain import calculus as cc
from smallgain.calculus import FnClass, ScalarFn

GRID_SIZE = 2048
EPS_COND = 1e-12   # relative slack tolerance for float rounding in the loop maps
D3_GRID = 20001


class InfeasibleError(RuntimeError):
    def __init__(self, message: str, report: "MarginReport | None" = None):
        super().__init__(message)
        self.report = report


@dataclass(frozen=True)
class SmallGainProblem:
    """Two output gains and the threshold ``s_l`` above which the loop must contract."""

    gamma1: ScalarFn
    gamma2: ScalarFn
    s_l: float = 0.0
    s_max: float = cc.DEFAULT_CAP
    grid_size: int = GRID_SIZE

    def __post_init__(self):
        if not 0 <= self.s_l < self.s_max:
            raise ValueError(f"need 0 <= s_l < s_max, got s_l={self.s_l}, s_max={self.s_max}")
        for name, g in (("gamma1", self.gamma1), ("gamma2", self.gamma2)):
            rep = cc.classify(g)
            if not rep.satisfies(FnClass.K):
                raise cc.ClassClosureError(f"{name} is not class K: {rep.failures(FnClass.K)}")


def linear_rho(c: float, cap: float, exponent: float = 1.0) -> ScalarFn:
    """Multiplier ``c s^p`` (``p = 1`` by default)."""
    if exponent == 1.0:
        return cc.linear(c, cap)
    return cc.compose(cc.linear(c, cap=max(cap, cap ** exponent)), cc.power(exponent, cap))


def loop_composition(gamma1: ScalarFn, gamma2: ScalarFn, rho1: ScalarFn, rho2: ScalarFn,
                     order: str = "forward") -> ScalarFn:
    """``(Id+rho2) o g2 o (Id+rho1) o g1`` (forward) or the mirrored loop (reverse)."""
    if order == "reverse":
        gamma1, gamma2, rho1, rho2 = gamma2, gamma1, rho2, rho1
    elif order != "forward":
        raise ValueError(f"order must be 'forward' or 'reverse', got {order!r}")
    cap = max(gamma1.cap, rho1.cap, rho2.cap)
    inner = (cc.identity(cap) + rho1) @ gamma1
    return (cc.identity(cap) + rho2) @ (gamma2 @ inner)


def condition_grid(s_l: float, s_max: float, n: int = GRID_SIZE) -> np.ndarray:
    lo = max(s_l, 1e-9)
    pts = np.geomspace(lo, s_max, n)
    return np.unique(np.concatenate([[s_l], pts]))


@dataclass(frozen=True, eq=False)
class MarginReport:
    s: np.ndarray
    slack_forward: np.ndarray
    slack_reverse: np.ndarray
    margin: float
    worst_point: float
    worst_order: str
    score: float
    feasible: bool
    grid_size: int

    def margin_csv(self) -> str:
        lines = ["s,slack_forward,slack_reverse"]
        for s, a, b in zip(self.s, self.slack_forward, self.slack_reverse):
            lines.append(f"{s!r},{a!r},{b!r}")
        return "\n".join(lines) + "\n"


def _slacks(p: SmallGainProblem, rho1: ScalarFn, rho2: ScalarFn):
    fwd = loop_composition(p.gamma1, p.gamma2, rho1, rho2, "forward")
    rev = loop_composition(p.gamma1, p.gamma2, rho1, rho2, "reverse")
    top = min(p.s_max, fwd.cap, rev.cap)
    if top <= p.s_l:
        raise cc.DomainError(f"loop maps are only certified up to {top:.6g} <= s_l")
    s = condition_grid(p.s_l, top, p.grid_size)
    return s, s - fwd._eval(s), s - rev._eval(s)


def check_condition(p: SmallGainProblem, rho1: ScalarFn, rho2: ScalarFn) -> MarginReport:
    """Evaluate both loop orders on the grid over ``[s_l, s_max]``.

    ``margin`` is the smallest absolute slack ``s - loop(s)``; feasibility
    allows a relative rounding tolerance ``EPS_COND * s``.  ``score`` is
    the smallest relative slack over ``s > 0`` and ranks feasible
    multipliers in :func:`search_rho_linear`.
    """
    s, fwd, rev = _slacks(p, rho1, rho2)
    worst = np.minimum(fwd, rev)
    i = int(np.argmin(worst))
    tol = EPS_COND * s
    feasible = bool(np.all(fwd >= -tol) and np.all(rev >= -tol))
    pos = s > 0
    score = float(np.min(worst[pos] / s[pos])) if pos.any() else float(worst[i])
    return MarginReport(
        s=s, slack_forward=fwd, slack_reverse=rev,
        margin=float(worst[i]), worst_point=float(s[i]),
        worst_order="forward" if fwd[i] <= rev[i] else "reverse",
        score=score, feasible=feasible, grid_size=int(p.grid_size),
    )


@dataclass(frozen=True, eq=False)
class SmallGainWitness:
    rho1: ScalarFn
    rho2: ScalarFn
    c1: float | None
    c2: float | None
    margin: float
    score: float
    d3: float
    feasible: bool
    report: MarginReport = field(repr=False)
    s_l: float = 0.0

    def to_dict(self) -> dict:
        return {
            "feasible": self.feasible,
            "rho1": {"expr": self.rho1.to_expr(), "coefficient": self.c1},
            "rho2": {"expr": self.rho2.to_expr(), "coefficient": self.c2},
            "margin": self.margin,
            "relative_margin": self.score,
            "worst_point": self.report.worst_point,
            "worst_order": self.report.worst_order,
            "d3": self.d3,
            "s_l": self.s_l,
            "grid_size": self.report.grid_size,
            "certified": "on grid",
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def search_rho_linear(p: SmallGainProblem, c_grid, exponents=(1.0,)) -> SmallGainWitness:
    """Scan ``rho_i = c_i s^p`` over the cartesian grid and keep the best witness.

    Best means largest relative margin; ties go to the lexicographically
    smallest ``(c1, c2)``.  Raises :class:`InfeasibleError` (carrying the
    least-bad report) when nothing on the grid satisfies both orders.
    """
    c_grid = sorted(float(c) for c in c_grid)
    if not c_grid:
        raise ValueError("c_grid must be non-empty")
    best = None
    least_bad = None
    for pexp in exponents:
        for c1, c2 in itertools.product(c_grid, repeat=2):
            rho1 = linear_rho(c1, p.s_max, pexp)
            rho2 = linear_rho(c2, p.s_max, pexp)
            rep = check_condition(p, rho1, rho2)
            key = (rep.score, -c1, -c2)
            if rep.feasible:
                if best is None or key > best[0]:
                    best = (key, rho1, rho2, c1, c2, rep)
            elif least_bad is None or rep.margin > least_bad.margin:
                least_bad = rep
    if best is None:
        raise InfeasibleError(
            f"small-gain condition fails for every multiplier on the grid "
            f"(worst margin {least_bad.margin:.6g} at s={least_bad.worst_point:.6g})",
            report=least_bad)
    _, rho1, rho2, c1, c2, rep = best
    d3 = compute_d3(p, rho1, rho2)
    return SmallGainWitness(rho1, rho2, c1, c2, rep.margin, rep.score, d3, True, rep, p.s_l)


def offset_deficit(p: SmallGainProblem, rho1: ScalarFn, rho2: ScalarFn, s) -> tuple:
    """Per-order deficit ``g_j o (Id+rho_i) o g_i (s) - (Id+rho_j)^-1 (s)``."""
    s = np.asarray(s, dtype=float)
    out = []
    for g_in, g_out, r_in, r_out in ((p.gamma1, p.gamma2, rho1, rho2),
                                     (p.gamma2, p.gamma1, rho2, rho1)):
        cap = max(g_in.cap, r_in.cap, r_out.cap)
        lhs = g_out @ ((cc.identity(cap) + r_in) @ g_in)
        contraction = cc.inverse(cc.identity(cap) + r_out)
        out.append(lhs._eval(np.minimum(s, lhs.cap)) - contraction._eval(s))
    return tuple(out)


def compute_d3(p: SmallGainProblem, rho1: ScalarFn, rho2: ScalarFn) -> float:
    """Smallest offset making the contraction bound hold on ``[0, s_max]``.

    Zero when ``s_l = 0``.  Otherwise the deficit is maximized on a dense
    grid over ``[0, s_l]`` and refined locally; positive deficits left on the
    condition grid above ``s_l`` (rounding only, for feasible multipliers)
    are folded in as well.
    """
    rep = check_condition(p, rho1, rho2)
    if not rep.feasible:
        raise InfeasibleError("compute_d3 needs multipliers that satisfy the condition", rep)
    if p.s_l == 0.0:
        return 0.0

    def deficit(x):
        a, b = offset_deficit(p, rho1, rho2, x)
        return np.maximum(a, b)

    s = np.linspace(0.0, p.s_l, D3_GRID)
    vals = deficit(s)
    i = int(np.argmax(vals))
    best = float(vals[i])
    lo = s[max(i - 1, 0)]
    hi = s[min(i + 1, len(s) - 1)]
    if hi > lo:
        res = minimize_scalar(lambda x: -float(deficit(np.asarray(x))), bounds=(lo, hi),
                              method="bounded", options={"xatol": 1e-12})
        best = max(best, -float(res.fun))
    above = deficit(rep.s[rep.s > p.s_l]) if np.any(rep.s > p.s_l) else np.zeros(1)
    return max(best, float(np.max(above)), 0.0)


def certify(p: SmallGainProblem, c_grid, exponents=(1.0,)) -> SmallGainWitness:
    return search_rho_linear(p, c_grid, exponents)
