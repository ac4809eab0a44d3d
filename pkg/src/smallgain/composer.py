"""Construction of the interconnection's IOpS certificate.

Starting from two subsystem contracts and a feasible small-gain witness,
this module builds the composite input gains ``r1``, ``r2``, the Step-2
output and state bounds, the offsets, the auxiliary gain ``alpha``, the
tabulated KL transients and finally the triple
``(beta1' + beta2', r1 + r2 + r3^1 + r3^2, d1' + d2')``.

Two formula modes exist.  ``literal`` builds the printed expressions
verbatim; ``symmetric`` mirrors the subsystem-1 formulas for subsystem 2
and uses ``(Id + rho^-1) o (Id + rho3)^2 o gamma^u`` inside ``r1``/``r2``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable

import numpy as np

from smallgain import calculus as cc
from smallgain._kernels import envelope_linear
from smallgain.calculus import FnClass, KLFn, ScalarFn
from smallgain.certifier import SmallGainWitness

EPS_ENV = 1e-8
K_MAX = 10_000
T_POINTS = 256
S_POINTS = 33
EPS_NUM = 1e-9


class FormulaMode(str, Enum):
    LITERAL = "literal"
    SYMMETRIC = "symmetric"


class CertificateError(RuntimeError):
    pass


class EnvelopeConvergenceError(CertificateError):
    def __init__(self, message, envelope=None):
        super().__init__(message)
        self.envelope = envelope


@dataclass(frozen=True, eq=False)
class SubsystemContract:
    """IOpS triple ``(beta, (gamma_y, gamma_u), d)`` plus the UO couple ``(alpha0, D0)``."""

    beta: KLFn
    gamma_y: ScalarFn
    gamma_u: ScalarFn
    d: float = 0.0
    alpha0: ScalarFn = field(default_factory=cc.identity)
    D0: float = 0.0
    state_dim: int = 1
    input_dim: int = 1
    output_dim: int = 1

    def validate(self) -> list[str]:
        errors = []
        for name, fn, allow_zero in (("gamma_y", self.gamma_y, False),
                                     ("gamma_u", self.gamma_u, True),
                                     ("alpha0", self.alpha0, True)):
            if allow_zero and fn.is_zero:
                continue
            rep = cc.classify(fn)
            for msg in rep.failures(FnClass.K):
                errors.append(f"{name}: {msg}")
        if self.d < 0:
            errors.append("d: must be nonnegative")
        if self.D0 < 0:
            errors.append("D0: must be nonnegative")
        return errors


@dataclass(frozen=True, eq=False)
class StateContract:
    """ISS-style state bound of one subsystem, checked against simulated states."""

    beta: KLFn
    gamma_y: ScalarFn
    gamma_u: ScalarFn


def _mode(mode) -> FormulaMode:
    return mode if isinstance(mode, FormulaMode) else FormulaMode(mode)


def _cap(*fns: ScalarFn) -> float:
    return max(f.cap for f in fns)


def one_plus(rho: ScalarFn, cap: float | None = None) -> ScalarFn:
    """``Id + rho``."""
    return cc.identity(cap or rho.cap) + rho


def one_plus_inv(rho: ScalarFn, cap: float | None = None) -> ScalarFn:
    """``Id + rho^-1``."""
    inv = cc.inverse(rho)
    return cc.identity(cap or inv.cap) + inv


def compose_r_gains(c1: SubsystemContract, c2: SubsystemContract, rho1: ScalarFn,
                    rho2: ScalarFn, rho3: ScalarFn, mode="symmetric") -> tuple[ScalarFn, ScalarFn]:
    """Composite gains from ``u`` to ``y1`` and ``y2``."""
    mode = _mode(mode)
    sq3 = one_plus(rho3) @ one_plus(rho3)

    def build(ca, cb, rho_a, rho_b):
        if mode == FormulaMode.SYMMETRIC:
            inner = one_plus_inv(rho_b) @ (sq3 @ cb.gamma_u)
        else:
            inner = cc.identity(_cap(rho_b, cb.gamma_u)) + cc.inverse(rho_b) @ (sq3 @ cb.gamma_u)
        return one_plus_inv(rho_a) @ (sq3 @ (ca.gamma_u + ca.gamma_y @ inner))

    return build(c1, c2, rho1, rho2), build(c2, c1, rho2, rho1)


@dataclass(frozen=True, eq=False)
class OffsetBound:
    """``Delta_i(v1, v2) = outer(d3 + cross(v_other + d_other) + v_own + d_own)``.

    ``v_i`` stands for ``gamma_i^u(||u_i||)``.
    """

    which: int
    outer: ScalarFn
    cross: ScalarFn
    d_own: float
    d_other: float
    d3: float

    def __call__(self, v1: float, v2: float) -> float:
        v_own, v_other = (v1, v2) if self.which == 1 else (v2, v1)
        inner = self.d3 + self.cross(v_other + self.d_other) + v_own + self.d_own
        return float(self.outer(inner))


@dataclass(frozen=True, eq=False)
class OutputBounds:
    delta1: ScalarFn
    delta2: ScalarFn
    Delta1: OffsetBound
    Delta2: OffsetBound


def compute_output_bounds(c1: SubsystemContract, c2: SubsystemContract, rho1: ScalarFn,
                          rho2: ScalarFn, rho3: ScalarFn, d3: float,
                          mode="symmetric") -> OutputBounds:
    """Step-2 bounds ``|y_i(t)| <= delta_i(|x(0)|) + Delta_i``."""
    mode = _mode(mode)
    b1 = c1.beta.at_time_zero()
    b2 = c2.beta.at_time_zero()
    p1 = one_plus_inv(rho1) @ one_plus_inv(rho3)
    p2 = one_plus_inv(rho2) @ one_plus_inv(rho3)
    q1 = one_plus_inv(rho1) @ one_plus(rho3)
    q2 = one_plus_inv(rho2) @ one_plus(rho3)
    delta1 = p1 @ (b1 + c1.gamma_y @ (p2 @ b2))
    if mode == FormulaMode.SYMMETRIC:
        delta2 = p2 @ (b2 + c2.gamma_y @ (p1 @ b1))
        cross2 = c2.gamma_y @ q1
    else:
        delta2 = p2 @ (b2 + c2.gamma_y @ (p2 @ b2))
        cross2 = c2.gamma_y @ q2
    Delta1 = OffsetBound(1, q1, c1.gamma_y @ q2, c1.d, c2.d, d3)
    Delta2 = OffsetBound(2, q2, cross2, c2.d, c1.d, d3)
    return OutputBounds(delta1, delta2, Delta1, Delta2)


@dataclass(frozen=True, eq=False)
class StateBound:
    """``||x|| <= delta3(|x(0)|) + Delta3`` with ``s_inf`` their sum."""

    delta3: ScalarFn
    alpha_sum: ScalarFn
    bounds: OutputBounds
    D0_sum: float

    def Delta3(self, u_norm: float, v1: float, v2: float) -> float:
        inner = 2 * u_norm + 2 * self.bounds.Delta1(v1, v2) + 2 * self.bounds.Delta2(v1, v2)
        return float(self.alpha_sum(inner)) + self.D0_sum

    def s_inf(self, x0_norm: float, u_norm: float, v1: float, v2: float) -> float:
        return float(self.delta3(x0_norm)) + self.Delta3(u_norm, v1, v2)


def compute_state_bound(c1: SubsystemContract, c2: SubsystemContract,
                        bounds: OutputBounds) -> StateBound:
    alpha_sum = c1.alpha0 + c2.alpha0
    cap = _cap(bounds.delta1, bounds.delta2)
    inner = 2 * cc.identity(cap) + 2 * bounds.delta1 + 2 * bounds.delta2
    delta3 = alpha_sum @ inner if not alpha_sum.is_zero else cc.zero(inner.cap)
    return StateBound(delta3, alpha_sum, bounds, c1.D0 + c2.D0)


def compute_tilde_d(c1: SubsystemContract, c2: SubsystemContract, rho1: ScalarFn,
                    rho2: ScalarFn, rho3: ScalarFn, d3: float) -> tuple[float, float]:
    """Constant parts left after splitting ``Delta_i`` into ``r_i(||u||) + d~_i``."""
    split3 = one_plus(rho3) @ one_plus_inv(rho3)
    t1 = one_plus_inv(rho1) @ split3
    t2 = one_plus_inv(rho2) @ split3
    dt1 = t1(c1.d + d3 + c1.gamma_y(t2(c2.d)))
    dt2 = t2(c2.d + d3 + c2.gamma_y(t1(c1.d)))
    return float(dt1), float(dt2)


@dataclass(frozen=True, eq=False)
class AlphaChoice:
    alpha: ScalarFn
    chain: ScalarFn          # (2 alpha1^0 + 2 alpha2^0) o (4 Id + 4 r1 + 4 r2)
    min_slack: float
    worst_point: float
    passed: bool


def choose_alpha(r31: ScalarFn, delta1: ScalarFn, alpha01: ScalarFn, alpha02: ScalarFn,
                 r1: ScalarFn, r2: ScalarFn, n_grid: int = 512) -> AlphaChoice:
    """``alpha = (Id+delta1)^-1 o r3^1 o (Id + chain)^-1`` and its grid check.

    The check is ``delta1 o alpha o chain (s) <= r3^1(s)``; a negative slack
    beyond rounding means caps or tolerances are too tight.
    """
    cap = _cap(r1, r2, r31)
    chain = (2 * alpha01 + 2 * alpha02) @ (4 * cc.identity(cap) + 4 * r1 + 4 * r2)
    alpha = cc.inverse(one_plus(delta1)) @ (r31 @ cc.inverse(cc.identity(chain.cap) + chain))
    lhs = delta1 @ (alpha @ chain) if not chain.is_zero else cc.zero(chain.cap)
    top = min(lhs.cap, r31.cap)
    s = cc.mixed_grid(top, n_grid)
    lv = lhs._eval(s)
    rv = r31._eval(s)
    slack = rv - lv
    tol = EPS_NUM * np.maximum(rv, 1.0)
    i = int(np.argmin(slack + tol))
    return AlphaChoice(alpha, chain, float(slack[i]), float(s[i]), bool(np.all(slack >= -tol)))


# -- KL envelope -----------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Envelope:
    t: np.ndarray
    values: np.ndarray        # E(s, t)
    asymptote: np.ndarray     # E(s, infinity) = fixed point of x = c(x) + C
    iterations: int
    converged: bool
    residual: float

    @property
    def beta_hat(self) -> np.ndarray:
        return np.maximum(self.values - self.asymptote[..., None], 0.0)


class IncrementModulus:
    """``L(w) = sup_e [c(e + w) - c(e)]`` for a nonlinear contraction ``c``.

    Tabulated on a mixed grid and read off at the next knot above ``w`` so
    the lookup never underestimates.
    """

    def __init__(self, contraction: ScalarFn, top: float, n: int = 513):
        self.w = cc.mixed_grid(top, n)
        e = self.w
        lim = contraction.cap
        W, Ee = np.meshgrid(self.w, e, indexing="ij")
        arg = np.minimum(W + Ee, lim)
        inc = contraction._eval(arg) - contraction._eval(np.minimum(Ee, lim))
        self.values = np.maximum.accumulate(np.max(inc, axis=1))
        self.top = top

    def __call__(self, w):
        w = np.asarray(w, dtype=float)
        if np.any(w > self.top * (1 + 1e-12)):
            raise cc.DomainError(f"increment modulus tabulated only up to {self.top:.6g}")
        idx = np.searchsorted(self.w, w, side="left")
        return self.values[np.minimum(idx, len(self.w) - 1)]


def _contraction_parts(contraction):
    if isinstance(contraction, (int, float)):
        return float(contraction), None
    if isinstance(contraction, ScalarFn):
        k = contraction.linear_coefficient()
        if k is not None:
            return k, None
        return None, contraction._eval
    return None, contraction


def _fixed_point(fn, rhs: np.ndarray) -> np.ndarray:
    """Solve ``x = fn(x) + rhs`` for a contraction ``fn`` (``Id - fn`` increasing)."""
    rhs = np.asarray(rhs, dtype=float)
    hi = np.maximum(2.0 * rhs, 1.0)
    for _ in range(200):
        low = hi - fn(hi) < rhs
        if not low.any():
            break
        hi = np.where(low, 2.0 * hi, hi)
    return cc.bisect_increasing(lambda x: x - fn(x), rhs, 0.0, hi)


def back_index(t_grid: np.ndarray, mu: float = 0.25) -> np.ndarray:
    """Index of the last knot at or below ``mu * t`` for each knot ``t``."""
    return (np.searchsorted(t_grid, mu * t_grid, side="right") - 1).astype(np.intp)


def numeric_kl_envelope(B, contraction, C: float, s_inf, t_grid, seed=None,
                        tol: float = EPS_ENV, k_max: int = K_MAX, mu: float = 0.25) -> Envelope:
    """Envelope of ``z(t) <= B(s_inf, t) + c(sup_{tau >= mu t} z(tau)) + C``.

    Iterates ``E <- min(E, B + c(E(mu t)) + C)`` from a constant seed (by
    default the fixed point of ``x = B(s_inf, 0) + c(x) + C``, which bounds
    ``sup z``) until the sup-norm change drops below ``tol``.  Every iterate
    is itself a valid bound, so the result is monotone in ``t`` and never
    below the true trajectory.  ``mu * t`` is read at the knot just below it,
    which is conservative for a nonincreasing ``E``.
    """
    t = np.asarray(t_grid, dtype=float)
    if t[0] != 0.0 or np.any(np.diff(t) <= 0):
        raise ValueError("t_grid must start at 0 and increase strictly")
    s = np.atleast_1d(np.asarray(s_inf, dtype=float))
    Bv = np.asarray(B(s[:, None], t[None, :]), dtype=float)
    Bv = np.broadcast_to(Bv, (s.size, t.size)).copy()
    # B is nonincreasing in t; enforce it against rounding
    Bv = np.minimum.accumulate(Bv, axis=1)
    back = back_index(t, mu)
    k, fn = _contraction_parts(contraction)
    if k is not None:
        if not 0 <= k < 1:
            raise CertificateError(f"contraction factor {k} is not below 1")
        asym = np.full(s.size, C / (1.0 - k))
        start = (Bv[:, 0] + C) / (1.0 - k)
    else:
        probe = np.geomspace(1e-6, 1e6, 64)
        if np.any(fn(probe) >= probe):
            raise CertificateError("contraction map is not below the identity")
        asym = _fixed_point(fn, np.full(s.size, float(C)))
        start = _fixed_point(fn, Bv[:, 0] + C)
    if seed is None:
        E = np.repeat(start[:, None], t.size, axis=1)
    else:
        E = np.broadcast_to(np.asarray(seed, dtype=float).reshape(-1, 1), (s.size, t.size)).copy()
    if k is not None:
        E, iters, change = envelope_linear(Bv, back, float(k), float(C), E, float(tol), int(k_max))
    else:
        iters, change = 0, np.inf
        while iters < k_max:
            new = np.minimum(E, Bv + fn(E[:, back]) + C)
            change = float(np.max(np.abs(new - E)))
            E = new
            iters += 1
            if change <= tol:
                break
    if k is not None:
        rhs = Bv + k * E[:, back] + C
    else:
        rhs = Bv + fn(E[:, back]) + C
    residual = float(np.max(np.abs(E - np.minimum(E, rhs))))
    return Envelope(t, E, asym, int(iters), bool(change <= tol), residual)


# -- Step-1 bound and certificate ------------------------------------------

def step1_bounds(c1: SubsystemContract, c2: SubsystemContract, rho1: ScalarFn, rho2: ScalarFn,
                 d3: float, x1_norm: float, x2_norm: float, v1: float, v2: float) -> tuple[float, float]:
    """Sup bounds on ``||y1||`` and ``||y2||`` over the whole horizon."""
    b1 = float(c1.beta(x1_norm, 0.0))
    b2 = float(c2.beta(x2_norm, 0.0))
    y2 = one_plus_inv(rho2)(b2 + d3 + c2.gamma_y(one_plus_inv(rho1)(b1 + v1 + c1.d)) + v2 + c2.d)
    y1 = one_plus_inv(rho1)(b1 + d3 + c1.gamma_y(one_plus_inv(rho2)(b2 + v2 + c2.d)) + v1 + c1.d)
    return float(y1), float(y2)


@dataclass(frozen=True, eq=False)
class Certificate:
    mode: FormulaMode
    contracts: tuple
    rho1: ScalarFn
    rho2: ScalarFn
    rho3: ScalarFn
    r31: ScalarFn
    d3: float
    r1: ScalarFn
    r2: ScalarFn
    r32: ScalarFn
    bounds: OutputBounds
    state: StateBound
    alpha: AlphaChoice
    dtilde1: float
    dtilde2: float
    d1p: float
    d2p: float
    beta1p: KLFn
    beta2p: KLFn
    gain_y1: ScalarFn
    gain_y2: ScalarFn
    gain_total: ScalarFn
    envelopes: tuple = field(repr=False, default=())

    @property
    def offset_total(self) -> float:
        return self.d1p + self.d2p

    @property
    def ios(self) -> bool:
        return self.d1p == 0.0 and self.d2p == 0.0

    @property
    def beta_total(self) -> KLFn:
        return cc.kl_sum(self.beta1p, self.beta2p)

    def sigma1(self, s: float, Delta: float, t: float) -> float:
        """Diagnostic ``min(beta_hat1(delta3(s) + Delta, t), delta1(s))``."""
        s_inf = float(self.state.delta3(s)) + Delta
        env = _envelope_for(self, 1, np.array([s_inf]))
        bh = np.interp(t, env.t, env.beta_hat[0])
        return float(min(bh, self.bounds.delta1(s)))

    def functions(self) -> dict:
        return {"rho1": self.rho1, "rho2": self.rho2, "rho3": self.rho3, "r31": self.r31,
                "r1": self.r1, "r2": self.r2, "r32": self.r32,
                "delta1": self.bounds.delta1, "delta2": self.bounds.delta2,
                "delta3": self.state.delta3, "alpha": self.alpha.alpha,
                "gain_y1": self.gain_y1, "gain_y2": self.gain_y2, "gain_total": self.gain_total}

    def to_dict(self) -> dict:
        fns = {}
        for name, fn in self.functions().items():
            fns[name] = {"expr": fn.to_expr(), "linear_coefficient": fn.linear_coefficient(),
                         "class": fn.declared_class.value, "cap": fn.cap}
        return {
            "mode": self.mode.value,
            "d3": self.d3,
            "dtilde": [self.dtilde1, self.dtilde2],
            "d_prime": [self.d1p, self.d2p],
            "offset_total": self.offset_total,
            "ios": self.ios,
            "alpha_check": {"passed": self.alpha.passed, "min_slack": self.alpha.min_slack,
                            "worst_point": self.alpha.worst_point},
            "functions": fns,
            "beta_prime": {"s_grid": list(map(float, self.beta1p.s_grid)),
                           "t_points": int(self.beta1p.t_grid.size),
                           "t_max": float(self.beta1p.t_grid[-1]),
                           "sidecars": ["beta_prime_1.csv", "beta_prime_2.csv"]},
            "envelope_iterations": [e.iterations for e in self.envelopes],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def beta_csv(self, which: int) -> str:
        beta = self.beta1p if which == 1 else self.beta2p
        lines = ["s,t,value"]
        for i, s in enumerate(beta.s_grid):
            for j, t in enumerate(beta.t_grid):
                lines.append(f"{float(s)!r},{float(t)!r},{float(beta.values[i, j])!r}")
        return "\n".join(lines) + "\n"


def default_t_grid(c1: SubsystemContract, c2: SubsystemContract, n: int = T_POINTS,
                   t_max: float | None = None) -> np.ndarray:
    if t_max is None:
        rates = [r for r in (c1.beta.decay_rate, c2.beta.decay_rate) if r]
        t_max = 50.0 / min(rates) if rates else 50.0
    return np.concatenate([[0.0], np.geomspace(t_max * 1e-4, t_max, n - 1)])


def _kl_forcing(ca: SubsystemContract, cb: SubsystemContract, rho_b: ScalarFn,
                rho3: ScalarFn) -> Callable:
    """``B(s, t) = beta_a(s, t/2) + gamma_a o (Id+rho_b^-1) o (Id+rho3^-1)(beta_b(s, t/4))``."""
    gain = ca.gamma_y @ (one_plus_inv(rho_b) @ one_plus_inv(rho3))

    def B(s, t):
        s, t = np.broadcast_arrays(np.asarray(s, dtype=float), np.asarray(t, dtype=float))
        inner = np.asarray(cb.beta(s, t / 4.0))
        return np.asarray(ca.beta(s, t / 2.0)) + gain._eval(np.minimum(inner, gain.cap))

    return B


def _envelope_for(cert_or_parts, which: int, s_inf: np.ndarray, t_grid=None) -> Envelope:
    if isinstance(cert_or_parts, Certificate):
        c1, c2 = cert_or_parts.contracts
        rho1, rho2, rho3 = cert_or_parts.rho1, cert_or_parts.rho2, cert_or_parts.rho3
        t_grid = cert_or_parts.beta1p.t_grid if t_grid is None else t_grid
    else:
        c1, c2, rho1, rho2, rho3 = cert_or_parts
    if which == 1:
        B = _kl_forcing(c1, c2, rho2, rho3)
        contraction = cc.inverse(one_plus(rho1))
    else:
        B = _kl_forcing(c2, c1, rho1, rho3)
        contraction = cc.inverse(one_plus(rho2))
    k = contraction.linear_coefficient()
    if k is None:
        top = float(np.max(B(s_inf, 0.0))) if np.size(s_inf) else 1.0
        contraction = IncrementModulus(contraction, max(4.0 * top, 1.0))
    env = numeric_kl_envelope(B, contraction, 0.0, s_inf, t_grid)
    if not env.converged:
        raise EnvelopeConvergenceError(
            f"KL envelope for y{which} did not converge (change above {EPS_ENV})", env)
    return env


def _shift_left(values: np.ndarray) -> np.ndarray:
    # store E(t_{i-1}) at knot i so linear interpolation in t stays above E
    out = values.copy()
    out[:, 1:] = values[:, :-1]
    return out


def assemble_certificate(c1: SubsystemContract, c2: SubsystemContract,
                         witness: SmallGainWitness, rho3: ScalarFn | None = None,
                         r31: ScalarFn | None = None, mode="symmetric", s_points=(),
                         s_max_tab: float | None = None, t_grid=None,
                         n_s: int = S_POINTS) -> Certificate:
    """Build every object of the composed certificate.

    ``s_points`` are |x(0)| values that must be exact knots of the
    tabulated transients (scenario initial conditions); ``s_max_tab`` bounds
    the tabulation in ``s``.
    """
    mode = _mode(mode)
    if not witness.feasible:
        raise CertificateError("certificate needs a feasible small-gain witness")
    rho1, rho2 = witness.rho1, witness.rho2
    cap = _cap(rho1, rho2)
    rho3 = rho3 if rho3 is not None else cc.identity(cap)
    r31 = r31 if r31 is not None else cc.linear(0.1, cap)
    d3 = witness.d3

    r1, r2 = compose_r_gains(c1, c2, rho1, rho2, rho3, mode)
    bounds = compute_output_bounds(c1, c2, rho1, rho2, rho3, d3, mode)
    state = compute_state_bound(c1, c2, bounds)
    dt1, dt2 = compute_tilde_d(c1, c2, rho1, rho2, rho3, d3)
    if not cc.classify(bounds.delta1).strictly_increasing:
        raise CertificateError("delta1 is not strictly increasing; r3^2 needs its inverse")
    choice = choose_alpha(r31, bounds.delta1, c1.alpha0, c2.alpha0, r1, r2)
    alpha = choice.alpha
    r32 = bounds.delta2 @ (cc.inverse(bounds.delta1) @ r31)

    offset_arg = float((2 * c1.alpha0 + 2 * c2.alpha0)(4 * dt1 + 4 * dt2)) if not (
        c1.alpha0.is_zero and c2.alpha0.is_zero) else 0.0
    offset_arg += 2 * c1.D0 + 2 * c2.D0
    d1p = dt1 + float(bounds.delta1(alpha(offset_arg)))
    d2p = dt2 + float(bounds.delta2(alpha(offset_arg)))

    pts = sorted({float(p) for p in s_points} | {0.0})
    top = s_max_tab if s_max_tab is not None else max(max(pts) * 1.5, 10.0)
    base = np.concatenate([[0.0], np.geomspace(top * 1e-3, top, n_s - 1)])
    s_grid = np.unique(np.concatenate([base, pts]))
    alpha_inv = cc.inverse(alpha)
    s_inf = state.delta3(s_grid) + alpha_inv(s_grid)
    beta_cap = min(c1.beta.cap, c2.beta.cap)
    if float(s_inf[-1]) > beta_cap:
        raise CertificateError(
            f"transients need beta up to s = {float(s_inf[-1]):.6g}, above its cap "
            f"{beta_cap:.6g}; raise s_max")
    t = default_t_grid(c1, c2) if t_grid is None else np.asarray(t_grid, dtype=float)
    env1 = _envelope_for((c1, c2, rho1, rho2, rho3), 1, s_inf, t)
    env2 = _envelope_for((c1, c2, rho1, rho2, rho3), 2, s_inf, t)
    beta1p = cc.tabulated(s_grid, t, _shift_left(env1.beta_hat))
    beta2p = cc.tabulated(s_grid, t, _shift_left(env2.beta_hat))

    return Certificate(
        mode=mode, contracts=(c1, c2), rho1=rho1, rho2=rho2, rho3=rho3, r31=r31, d3=d3,
        r1=r1, r2=r2, r32=r32, bounds=bounds, state=state, alpha=choice,
        dtilde1=dt1, dtilde2=dt2, d1p=d1p, d2p=d2p, beta1p=beta1p, beta2p=beta2p,
        gain_y1=r1 + r31, gain_y2=r2 + r32, gain_total=r1 + r2 + r31 + r32,
        envelopes=(env1, env2),
    )
