"""Comparison-function calculus.

Class K, K-infinity and KL functions represented as immutable expression
trees.  Every node is nondecreasing, so evaluation, composition, sums and
inverses stay monotone by construction; inverses are closed form where the
tree allows it and bracketed bisection otherwise.

Classes
-------
ScalarFn
    One-argument comparison function ``s -> f(s)`` on ``[0, cap]``.
KLFn
    Two-argument function ``beta(s, t)``, class K in ``s`` and decaying in ``t``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Callable

import numpy as np
from scipy.interpolate import RegularGridInterpolator

DEFAULT_CAP = 1e6
EPS_INV = 1e-9
EPS_MONO = 1e-12
BISECT_MAX_ITER = 256


class FnClass(str, Enum):
    K = "K"
    KINF = "Kinf"
    POSITIVE_AFFINE = "PositiveAffine"
    MONOTONE = "Monotone"


_KLIKE = (FnClass.K, FnClass.KINF)


class CalculusError(ValueError):
    """Base class for comparison-function errors."""


class DomainError(CalculusError):
    """Argument exceeds the certified domain ``[0, cap]``; enlarge the cap."""


class OutOfRangeError(CalculusError):
    """Inversion requested for a value outside ``[f(0), f(cap)]``."""


class ClassClosureError(CalculusError):
    """Construction would produce a node outside the supported classes."""


class NotStrictlyMonotoneError(ClassClosureError):
    """Inversion of a function that is not strictly increasing."""


def bisect_increasing(fn: Callable[[np.ndarray], np.ndarray], y, lo, hi,
                      max_iter: int = BISECT_MAX_ITER) -> np.ndarray:
    """Solve ``fn(s) = y`` elementwise for nondecreasing ``fn`` on ``[lo, hi]``.

    Bisection runs until no float lies strictly between the bracket ends,
    then returns whichever end has the smaller residual.
    """
    y = np.asarray(y, dtype=float)
    lo = np.array(np.broadcast_to(lo, y.shape), dtype=float)
    hi = np.array(np.broadcast_to(hi, y.shape), dtype=float)
    hi = np.where(fn(lo) >= y, lo, hi)      # already solved at the left end
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        active = (mid > lo) & (mid < hi)
        if not active.any():
            break
        v = fn(mid)
        below = v < y
        hit = active & (v == y)
        lo = np.where(active & below | hit, mid, lo)
        hi = np.where(active & ~below, mid, hi)
    err_lo = np.abs(fn(lo) - y)
    err_hi = np.abs(fn(hi) - y)
    return np.where(err_lo <= err_hi, lo, hi)


def _sum_class(a: FnClass, b: FnClass) -> FnClass:
    if a in _KLIKE and b in _KLIKE:
        return FnClass.KINF if FnClass.KINF in (a, b) else FnClass.K
    if {a, b} <= {FnClass.K, FnClass.KINF, FnClass.POSITIVE_AFFINE}:
        return FnClass.POSITIVE_AFFINE
    return FnClass.MONOTONE


def _compose_class(outer: FnClass, inner: FnClass) -> FnClass:
    # K-infinity survives composition only when both factors are unbounded.
    if outer in _KLIKE and inner in _KLIKE:
        if outer == FnClass.KINF and inner == FnClass.KINF:
            return FnClass.KINF
        return FnClass.K
    if outer in _KLIKE + (FnClass.POSITIVE_AFFINE,) and inner in _KLIKE + (FnClass.POSITIVE_AFFINE,):
        return FnClass.POSITIVE_AFFINE
    return FnClass.MONOTONE


@dataclass(frozen=True)
class ScalarFn:
    """Nonnegative, nondecreasing scalar function of one nonnegative variable.

    Build instances with the module-level constructors (:func:`identity`,
    :func:`linear`, :func:`compose`, ...) rather than directly; they derive
    ``declared_class`` and propagate ``cap`` so that every internal
    evaluation stays inside each child's certified domain.

    ``f + g`` is the pointwise sum, ``f @ g`` the composition ``f o g`` and
    ``k * f`` the composition with the linear map ``k s``.
    """

    op: str
    args: tuple = ()
    param: float = 0.0
    declared_class: FnClass = FnClass.KINF
    cap: float = DEFAULT_CAP

    # -- structure ---------------------------------------------------------
    @property
    def is_zero(self) -> bool:
        return self.op == "const" and self.param == 0.0

    @property
    def is_class_k(self) -> bool:
        return self.declared_class in _KLIKE

    def linear_coefficient(self) -> float | None:
        """Return ``k`` when the tree is exactly ``s -> k s``, else None."""
        op = self.op
        if op == "id":
            return 1.0
        if op == "lin":
            return self.param
        if op == "pow":
            return 1.0 if self.param == 1.0 else None
        if op == "const":
            return 0.0 if self.param == 0.0 else None
        if op in ("sum", "compose"):
            a = self.args[0].linear_coefficient()
            if a is None:
                return None
            b = self.args[1].linear_coefficient()
            if b is None:
                return None
            return a + b if op == "sum" else a * b
        if op == "inv":
            k = self.args[0].linear_coefficient()
            return None if not k else 1.0 / k
        return None

    def to_expr(self) -> str:
        """Serialize to the function grammar understood by :mod:`smallgain.grammar`."""
        op = self.op
        if op == "id":
            return "id"
        if op == "const":
            return _fmt(self.param)
        if op == "lin":
            return f"{_fmt(self.param)}*s"
        if op == "pow":
            return f"s^{_fmt(self.param)}"
        if op == "sat":
            return f"{_fmt(self.param)}*s/(1+s)"
        if op == "sum":
            return f"({self.args[0].to_expr()} + {self.args[1].to_expr()})"
        if op == "compose":
            return f"({self.args[0].to_expr()} . {self.args[1].to_expr()})"
        if op == "inv":
            return f"inv({self.args[0].to_expr()})"
        if op == "min":
            return f"min({self.args[0].to_expr()}, {self.args[1].to_expr()})"
        raise AssertionError(op)

    def __str__(self) -> str:
        return self.to_expr()

    # -- operators ---------------------------------------------------------
    def __add__(self, other: "ScalarFn") -> "ScalarFn":
        return fsum(self, other)

    def __matmul__(self, other: "ScalarFn") -> "ScalarFn":
        return compose(self, other)

    def __rmul__(self, k: float) -> "ScalarFn":
        return compose(linear(float(k), cap=_range_cap(self, k)), self)

    # -- evaluation --------------------------------------------------------
    def __call__(self, s):
        arr = np.asarray(s, dtype=float)
        if np.any(arr < 0) or np.any(np.isnan(arr)):
            raise DomainError(f"negative or NaN argument for {self}")
        if np.any(arr > self.cap * (1.0 + 1e-12)):
            raise DomainError(
                f"argument {float(np.max(arr)):.6g} exceeds cap {self.cap:.6g} of {self}")
        out = self._eval(np.minimum(arr, self.cap))
        if np.ndim(out) == 0:
            return float(out)
        return out

    def _eval(self, s: np.ndarray) -> np.ndarray:
        op = self.op
        if op == "id":
            return s
        if op == "lin":
            return self.param * s
        if op == "pow":
            return np.power(s, self.param)
        if op == "sat":
            return self.param * s / (1.0 + s)
        if op == "const":
            return np.full(np.shape(s), self.param)
        if op == "sum":
            return self.args[0]._eval(s) + self.args[1]._eval(s)
        if op == "compose":
            outer, inner = self.args
            return outer._eval(np.minimum(inner._eval(s), outer.cap))
        if op == "min":
            return np.minimum(self.args[0]._eval(s), self.args[1]._eval(s))
        if op == "inv":
            return _inverse_eval(self.args[0], s)
        raise AssertionError(op)


def _fmt(x: float) -> str:
    x = float(x)
    if x.is_integer() and abs(x) < 1e15:
        return str(int(x))
    return repr(x)


def _range_cap(f: ScalarFn, k: float) -> float:
    # cap for a linear prefactor so that compose() does not shrink f's domain
    top = float(f._eval(np.asarray(f.cap)))
    return max(top, f.cap)


def _inverse_eval(node: ScalarFn, y: np.ndarray) -> np.ndarray:
    op = node.op
    if op == "id":
        return y
    if op == "lin":
        return y / node.param
    if op == "pow":
        return np.power(y, 1.0 / node.param)
    if op == "sat":
        a = node.param
        with np.errstate(divide="ignore"):
            out = np.where(y < a, y / np.maximum(a - y, 1e-300), np.inf)
        return np.minimum(out, node.cap)
    if op == "compose":
        outer, inner = node.args
        mid = _inverse_eval(outer, y)
        top = inner._eval(np.asarray(inner.cap))
        return _inverse_eval(inner, np.minimum(mid, top))
    if op == "inv":
        return node.args[0]._eval(y)
    k = node.linear_coefficient()
    if k:
        return y / k
    return bisect_increasing(node._eval, y, 0.0, node.cap)


def _largest_within(g: ScalarFn, bound: float) -> float:
    """Largest ``s <= g.cap`` with ``g(s) <= bound`` (g nondecreasing)."""
    if float(g._eval(np.asarray(g.cap))) <= bound:
        return g.cap
    if g.is_class_k:
        s = float(_inverse_eval(g, np.asarray(bound)))
    else:
        s = float(bisect_increasing(g._eval, np.asarray(bound), 0.0, g.cap))
    while s > 0 and float(g._eval(np.asarray(s))) > bound * (1 + 1e-12):
        s = np.nextafter(s, 0.0)
    return s


# -- constructors -----------------------------------------------------------

def identity(cap: float = DEFAULT_CAP) -> ScalarFn:
    return ScalarFn("id", cap=float(cap))


def constant(c: float, cap: float = DEFAULT_CAP) -> ScalarFn:
    if c < 0:
        raise ClassClosureError("constant offsets must be nonnegative")
    return ScalarFn("const", param=float(c), declared_class=FnClass.MONOTONE, cap=float(cap))


def zero(cap: float = DEFAULT_CAP) -> ScalarFn:
    return constant(0.0, cap)


def linear(k: float, cap: float = DEFAULT_CAP) -> ScalarFn:
    if not k > 0:
        raise ClassClosureError(f"linear scale must be positive, got {k}")
    return ScalarFn("lin", param=float(k), cap=float(cap))


def power(p: float, cap: float = DEFAULT_CAP) -> ScalarFn:
    if not p > 0:
        raise ClassClosureError(f"power must be positive, got {p}")
    return ScalarFn("pow", param=float(p), cap=float(cap))


def saturation(a: float, cap: float = DEFAULT_CAP) -> ScalarFn:
    """``a s / (1 + s)``: class K, bounded by ``a``."""
    if not a > 0:
        raise ClassClosureError(f"saturation level must be positive, got {a}")
    return ScalarFn("sat", param=float(a), declared_class=FnClass.K, cap=float(cap))


def fsum(f: ScalarFn, g: ScalarFn) -> ScalarFn:
    if f.is_zero:
        return g if g.cap <= f.cap else _with_cap(g, f.cap)
    if g.is_zero:
        return f if f.cap <= g.cap else _with_cap(f, g.cap)
    cls = _sum_class(f.declared_class, g.declared_class)
    # c + (strictly increasing) is strictly increasing, just not zero at zero
    affine = _KLIKE + (FnClass.POSITIVE_AFFINE,)
    if (f.op == "const" and g.declared_class in affine) or (
            g.op == "const" and f.declared_class in affine):
        cls = FnClass.POSITIVE_AFFINE
    return ScalarFn("sum", (f, g), declared_class=cls, cap=min(f.cap, g.cap))


def compose(f: ScalarFn, g: ScalarFn) -> ScalarFn:
    """Return ``f o g`` with its derived class and propagated cap."""
    if g.is_zero:
        v = float(f._eval(np.asarray(0.0)))
        return constant(v, cap=g.cap)
    if f.op == "const":
        return constant(f.param, cap=g.cap)
    if f.op == "id" and g.cap <= f.cap and float(g._eval(np.asarray(g.cap))) <= f.cap:
        return g
    cls = _compose_class(f.declared_class, g.declared_class)
    cap = _largest_within(g, f.cap)
    if cap <= 0:
        raise DomainError(f"range of {g} at 0 already exceeds cap of {f}")
    return ScalarFn("compose", (f, g), declared_class=cls, cap=cap)


def inverse(f: ScalarFn) -> ScalarFn:
    """Numeric inverse node ``f^{-1}`` on ``[0, f(cap)]``."""
    if not f.is_class_k:
        raise NotStrictlyMonotoneError(f"cannot invert {f}: class {f.declared_class.value}")
    if f.op == "inv":
        return f.args[0]
    top = float(f._eval(np.asarray(f.cap)))
    return ScalarFn("inv", (f,), declared_class=f.declared_class, cap=top)


def fmin(f: ScalarFn, g: ScalarFn) -> ScalarFn:
    return ScalarFn("min", (f, g), declared_class=FnClass.MONOTONE, cap=min(f.cap, g.cap))


def _with_cap(f: ScalarFn, cap: float) -> ScalarFn:
    return ScalarFn(f.op, f.args, f.param, f.declared_class, float(cap))


def with_cap(f: ScalarFn, cap: float) -> ScalarFn:
    """Copy of ``f`` with a different certified domain.

    Only atoms and sums can be widened freely; other nodes are rebuilt so
    that composition caps are recomputed.
    """
    if f.op in ("id", "lin", "pow", "sat", "const"):
        return _with_cap(f, cap)
    if f.op == "sum":
        return fsum(with_cap(f.args[0], cap), with_cap(f.args[1], cap))
    if f.op == "min":
        return fmin(with_cap(f.args[0], cap), with_cap(f.args[1], cap))
    if f.op == "compose":
        inner = with_cap(f.args[1], cap)
        top = float(inner._eval(np.asarray(cap)))
        return compose(with_cap(f.args[0], max(top, f.args[0].cap)), inner)
    if f.op == "inv":
        child = f.args[0]
        k = child.linear_coefficient()
        grow = cap / k if k else cap
        return inverse(with_cap(child, max(grow, child.cap)))
    raise AssertionError(f.op)


# -- operations -------------------------------------------------------------

def evaluate(f: ScalarFn, s):
    return f(s)


def invert(f: ScalarFn, y):
    """Solve ``f(s) = y`` on ``[0, f.cap]``.

    Raises :class:`OutOfRangeError` when ``y`` lies above ``f(cap)`` and
    :class:`NotStrictlyMonotoneError` when ``f`` is not class K.
    """
    if not f.is_class_k:
        raise NotStrictlyMonotoneError(f"cannot invert {f}: class {f.declared_class.value}")
    arr = np.asarray(y, dtype=float)
    top = float(f._eval(np.asarray(f.cap)))
    if np.any(arr < 0) or np.any(arr > top * (1 + 1e-12)):
        raise OutOfRangeError(f"value outside [0, {top:.6g}] for {f}")
    out = _inverse_eval(f, np.minimum(arr, top))
    return float(out) if np.ndim(out) == 0 else out


def mixed_grid(cap: float, n_grid: int, lo: float = 1e-9) -> np.ndarray:
    """0, then log-spaced points up to 1, then linear points up to ``cap``."""
    if n_grid < 2:
        raise ValueError("n_grid must be at least 2")
    if cap <= 1.0:
        pts = np.geomspace(min(lo, cap), cap, n_grid - 1)
    else:
        n_log = max((n_grid - 1) // 2, 1)
        n_lin = max(n_grid - 1 - n_log, 1)
        pts = np.concatenate([np.geomspace(lo, 1.0, n_log, endpoint=False),
                              np.linspace(1.0, cap, n_lin)])
    return np.concatenate([[0.0], pts])


@dataclass(frozen=True)
class ClassReport:
    zero_at_zero: bool
    strictly_increasing: bool
    nondecreasing: bool
    worst_violation: float
    worst_point: float
    unbounded: bool
    value_at_cap: float
    n_grid: int

    def satisfies(self, cls: FnClass) -> bool:
        if cls == FnClass.KINF:
            return self.zero_at_zero and self.strictly_increasing and self.unbounded
        if cls == FnClass.K:
            return self.zero_at_zero and self.strictly_increasing
        if cls == FnClass.POSITIVE_AFFINE:
            return self.strictly_increasing
        return self.nondecreasing

    def failures(self, cls: FnClass) -> list[str]:
        out = []
        if cls in _KLIKE and not self.zero_at_zero:
            out.append("zero_at_zero violated")
        if cls != FnClass.MONOTONE and not self.strictly_increasing:
            out.append(f"strictly_increasing violated at s={self.worst_point:.6g}")
        if cls == FnClass.MONOTONE and not self.nondecreasing:
            out.append(f"nondecreasing violated at s={self.worst_point:.6g}")
        if cls == FnClass.KINF and not self.unbounded:
            out.append(f"unbounded heuristic failed: f(cap)={self.value_at_cap:.6g}")
        return out


def classify(f: ScalarFn, n_grid: int = 512, required_range: float = 1e3) -> ClassReport:
    """Numerically check class membership of ``f`` on a mixed grid over ``[0, cap]``.

    Unboundedness is a heuristic: ``f(cap) >= 0.9 * required_range``.
    """
    s = mixed_grid(f.cap, n_grid)
    v = np.asarray(f._eval(s), dtype=float)
    inc = np.diff(v)
    scale = np.maximum(np.maximum(np.abs(v[1:]), np.abs(v[:-1])), np.finfo(float).tiny)
    rel = inc / scale
    i = int(np.argmin(rel))
    return ClassReport(
        zero_at_zero=bool(v[0] == 0.0),
        strictly_increasing=bool(np.all(inc > 0)),
        nondecreasing=bool(np.all(rel >= -EPS_MONO)),
        worst_violation=float(rel[i]),
        worst_point=float(s[i + 1]),
        unbounded=bool(v[-1] >= 0.9 * min(required_range, np.inf)),
        value_at_cap=float(v[-1]),
        n_grid=int(n_grid),
    )


@dataclass(frozen=True)
class SplitWitness:
    lhs: float
    rhs: float
    slack: float


def weak_triangle_split(gamma: ScalarFn, rho: ScalarFn, a, b) -> SplitWitness:
    """Evaluate ``gamma(a+b) <= gamma((Id+rho)(a)) + gamma((Id+rho^-1)(b))``."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    lhs = gamma(a + b)
    rhs = gamma(a + rho(a)) + gamma(b + invert(rho, b))
    slack = rhs - lhs
    if np.ndim(slack) == 0:
        return SplitWitness(float(lhs), float(rhs), float(slack))
    return SplitWitness(lhs, rhs, slack)


@dataclass(frozen=True)
class IdentityReport:
    max_error: float
    worst_point: float
    n_grid: int


def verify_inverse_identity(rho: ScalarFn, n_grid: int = 512,
                            s_max: float | None = None) -> IdentityReport:
    """Check ``[Id - (Id+rho)^-1]^-1 = Id + rho^-1`` by numeric double inversion."""
    one_plus = identity(rho.cap) + rho
    back = inverse(one_plus)
    top = float(one_plus._eval(np.asarray(one_plus.cap)))
    reach = top - float(_inverse_eval(one_plus, np.asarray(top)))
    if s_max is None:
        s_max = min(reach, float(rho._eval(np.asarray(rho.cap))))
    if s_max > reach * (1 + 1e-12):
        raise DomainError(f"s_max {s_max:.6g} exceeds reachable range {reach:.6g}")
    s = np.linspace(0.0, s_max, n_grid)

    def gap(x):
        return x - back._eval(np.minimum(x, top))

    lhs = bisect_increasing(gap, s, 0.0, top)
    rhs = s + _inverse_eval(rho, np.minimum(s, float(rho._eval(np.asarray(rho.cap)))))
    err = np.abs(lhs - rhs)
    i = int(np.argmax(err))
    return IdentityReport(float(err[i]), float(s[i]), int(n_grid))


# -- KL functions -----------------------------------------------------------

@dataclass(frozen=True, eq=False)
class KLFn:
    """Class-KL function ``beta(s, t)``.

    Families: ``exp_decay`` (``M s e^{-lam t}``), ``scaled``
    (``f(s) e^{-lam t}``) and ``tabulated`` (bilinear in ``(s, t)``, clamped
    to the last column beyond the final time knot).
    """

    family: str
    M: float = 1.0
    lam: float = 1.0
    f: ScalarFn | None = None
    s_grid: np.ndarray | None = None
    t_grid: np.ndarray | None = None
    values: np.ndarray | None = None
    cap: float = DEFAULT_CAP
    _interp: object = field(default=None, repr=False)

    @property
    def decay_rate(self) -> float | None:
        return None if self.family == "tabulated" else self.lam

    def at_time_zero(self) -> ScalarFn:
        """``s -> beta(s, 0)`` as a ScalarFn."""
        if self.family == "exp_decay":
            return linear(self.M, cap=self.cap)
        if self.family == "scaled":
            return self.f
        raise NotImplementedError("tabulated KL functions have no tree form")

    def __call__(self, s, t):
        s = np.asarray(s, dtype=float)
        t = np.asarray(t, dtype=float)
        if np.any(s < 0) or np.any(t < 0):
            raise DomainError("KL arguments must be nonnegative")
        if np.any(s > self.cap * (1 + 1e-12)):
            raise DomainError(f"s={float(np.max(s)):.6g} exceeds cap {self.cap:.6g}")
        if self.family == "exp_decay":
            out = self.M * s * np.exp(-self.lam * t)
        elif self.family == "scaled":
            out = self.f(np.minimum(s, self.f.cap)) * np.exp(-self.lam * t)
        else:
            ss, tt = np.broadcast_arrays(s, np.minimum(t, self.t_grid[-1]))
            pts = np.stack([ss.ravel(), tt.ravel()], axis=-1)
            out = self._interp(pts).reshape(ss.shape)
        return float(out) if np.ndim(out) == 0 else out

    def check_invariants(self, n_s: int = 64, n_t: int = 64, tol: float = 1e-8,
                         t_max: float | None = None) -> dict:
        """Sampled KL checks: zero at s=0, increasing in s, nonincreasing in t."""
        if self.family == "tabulated":
            s = self.s_grid
            t = self.t_grid
        else:
            s = np.concatenate([[0.0], np.geomspace(1e-6, min(self.cap, 1e6), n_s - 1)])
            t = np.linspace(0.0, t_max or 50.0 / self.lam, n_t)
        S, T = np.meshgrid(s, t, indexing="ij")
        v = np.asarray(self(S, T))
        scale = max(float(np.max(np.abs(v))), 1.0)
        ds = np.diff(v, axis=0)
        dt = np.diff(v, axis=1)
        last = v[:, -1]
        return {
            "zero_at_zero": bool(np.all(v[0] == 0.0)),
            "increasing_in_s": bool(np.all(ds >= -tol * scale)),
            "nonincreasing_in_t": bool(np.all(dt <= tol * scale)),
            "decays": bool(np.all(last <= v[:, 0] + tol * scale)),
            "last_column_max": float(np.max(last)),
        }


def exp_decay(M: float, lam: float, cap: float = DEFAULT_CAP) -> KLFn:
    if not (M > 0 and lam > 0):
        raise ClassClosureError("exp_decay needs M > 0 and lam > 0")
    return KLFn("exp_decay", M=float(M), lam=float(lam), cap=float(cap))


def scaled_decay(f: ScalarFn, lam: float) -> KLFn:
    if not f.is_class_k:
        raise ClassClosureError(f"scaled KL needs a class-K profile, got {f.declared_class.value}")
    if not lam > 0:
        raise ClassClosureError("scaled KL needs lam > 0")
    return KLFn("scaled", lam=float(lam), f=f, cap=f.cap)


def tabulated(s_grid, t_grid, values) -> KLFn:
    s_grid = np.asarray(s_grid, dtype=float)
    t_grid = np.asarray(t_grid, dtype=float)
    values = np.asarray(values, dtype=float)
    if values.shape != (s_grid.size, t_grid.size):
        raise ValueError(f"values shape {values.shape} != ({s_grid.size}, {t_grid.size})")
    if s_grid[0] != 0.0 or t_grid[0] != 0.0:
        raise ValueError("tabulation grids must start at 0")
    if np.any(np.diff(s_grid) <= 0) or np.any(np.diff(t_grid) <= 0):
        raise ValueError("tabulation grids must be strictly increasing")
    interp = RegularGridInterpolator((s_grid, t_grid), values, method="linear")
    return KLFn("tabulated", s_grid=s_grid, t_grid=t_grid, values=values,
                cap=float(s_grid[-1]), _interp=interp)


def kl_eval(beta: KLFn, s, t):
    return beta(s, t)


def kl_sum(a: KLFn, b: KLFn) -> KLFn:
    """Pointwise sum of two tabulated KL functions on a shared grid."""
    if a.family != "tabulated" or b.family != "tabulated":
        raise ValueError("kl_sum is defined for tabulated families")
    if not (np.array_equal(a.s_grid, b.s_grid) and np.array_equal(a.t_grid, b.t_grid)):
        raise ValueError("tabulations must share grids")
    return tabulated(a.s_grid, a.t_grid, a.values + b.values)
