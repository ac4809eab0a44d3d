"""Simulation of the feedback pair and empirical checks of the bounds.

Vector norms are max-norms throughout, so the norm of a stacked signal is
the max of its components' norms.  Sup-norms are maxima over samples.
"""

from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from smallgain import _kernels
from smallgain import calculus as cc
from smallgain.calculus import ScalarFn

DT = 1e-3
EPS_LOOP = 1e-10
K_LOOP = 100
ESCAPE = 1e9
EPS_VERIFY = 1e-6

PHI_KINDS = {"linear": 0, "sat": 1, "tanh": 2}


class LoopDivergenceError(RuntimeError):
    """The output loop failed to settle at a state (non-contraction)."""


class GridExtentError(ValueError):
    """A bound was queried outside the tabulated transient grid."""


def _phi(kind: str, v):
    if kind == "linear":
        return v
    if kind == "sat":
        return v / (1.0 + np.abs(v))
    return np.tanh(v)


@dataclass(frozen=True, eq=False)
class SubsystemDynamics:
    """Generic subsystem ``x' = f(x, y_other, u)``, ``y = h(x, y_other, u)``."""

    f: Callable
    h: Callable
    n: int
    m: int
    p: int
    q: int
    feedthrough: bool = False

    packed = None


@dataclass(frozen=True, eq=False)
class LinearSubsystem:
    """Parametric subsystem handled by the compiled kernels.

    ``x' = A x + E phi(y_other) + B u + sum_k P_k x**k`` and
    ``y = C x + F phi(y_other) + G u`` where ``x**k`` is elementwise and
    ``phi`` is ``linear``, ``sat`` (``v/(1+|v|)``) or ``tanh``.
    """

    A: np.ndarray
    E: np.ndarray
    B: np.ndarray
    C: np.ndarray
    F: np.ndarray | None = None
    G: np.ndarray | None = None
    poly: dict = field(default_factory=dict)
    phi: str = "linear"

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        n = A.shape[0]
        E = np.asarray(self.E, dtype=float).reshape(n, -1)
        B = np.asarray(self.B, dtype=float).reshape(n, -1)
        C = np.asarray(self.C, dtype=float).reshape(-1, n)
        p, q, m = C.shape[0], E.shape[1], B.shape[1]
        F = np.zeros((p, q)) if self.F is None else np.asarray(self.F, dtype=float).reshape(p, q)
        G = np.zeros((p, m)) if self.G is None else np.asarray(self.G, dtype=float).reshape(p, m)
        if A.shape != (n, n):
            raise ValueError(f"A must be square, got {A.shape}")
        if self.phi not in PHI_KINDS:
            raise ValueError(f"phi must be one of {sorted(PHI_KINDS)}")
        deg = max([int(k) for k in self.poly] + [1])
        if deg > 5:
            raise ValueError("polynomial degree is capped at 5")
        P = np.zeros((deg - 1, n, n))
        for k, mat in self.poly.items():
            if int(k) < 2:
                raise ValueError("polynomial terms start at degree 2")
            P[int(k) - 2] = np.asarray(mat, dtype=float).reshape(n, n)
        for name, val in (("A", A), ("E", E), ("B", B), ("C", C), ("F", F), ("G", G), ("P", P)):
            object.__setattr__(self, name, val)

    n = property(lambda self: self.A.shape[0])
    m = property(lambda self: self.B.shape[1])
    p = property(lambda self: self.C.shape[0])
    q = property(lambda self: self.E.shape[1])

    @property
    def feedthrough(self) -> bool:
        return bool(np.any(self.F != 0))

    def f(self, x, yo, u):
        dx = self.A @ x + self.E @ _phi(self.phi, yo) + self.B @ u
        xp = x
        for k in range(self.P.shape[0]):
            xp = xp * x
            dx = dx + self.P[k] @ xp
        return dx

    def h(self, x, yo, u):
        return self.C @ x + self.F @ _phi(self.phi, yo) + self.G @ u

    def packed(self):
        return (self.A, self.E, self.B, self.C, self.F, self.G, self.P, PHI_KINDS[self.phi])


@dataclass(frozen=True)
class InputSignal:
    """Exogenous input ``u(t) = amplitude * w(t)``.

    Waveforms: ``constant`` (1), ``step`` (1 from ``t0`` on), ``sinusoid``
    (``sin(omega t + phase)``) and ``table`` (level ``values[k]`` from
    ``times[k]`` until the next breakpoint).
    """

    kind: str = "constant"
    amplitude: float | tuple = 0.0
    dim: int = 1
    t0: float = 0.0
    omega: float = 1.0
    phase: float = 0.0
    times: tuple = ()
    values: tuple = ()

    def __post_init__(self):
        if self.kind not in ("constant", "step", "sinusoid", "table"):
            raise ValueError(f"unknown input kind {self.kind!r}")
        if self.kind == "table":
            if len(self.times) != len(self.values) or not self.times or self.times[0] != 0.0:
                raise ValueError("table needs matching times/values starting at t=0")
            if any(b <= a for a, b in zip(self.times, self.times[1:])):
                raise ValueError("table times must increase")

    @property
    def amp(self) -> np.ndarray:
        return np.broadcast_to(np.asarray(self.amplitude, dtype=float), (self.dim,))

    def waveform(self, t):
        t = np.asarray(t, dtype=float)
        if self.kind == "constant":
            return np.ones_like(t)
        if self.kind == "step":
            return (t >= self.t0).astype(float)
        if self.kind == "sinusoid":
            return np.sin(self.omega * t + self.phase)
        idx = np.searchsorted(np.asarray(self.times), t, side="right") - 1
        return np.asarray(self.values, dtype=float)[idx]

    def sample(self, t) -> np.ndarray:
        return self.waveform(t)[..., None] * self.amp

    def sup_waveform(self, T: float) -> float:
        """Exact ``sup |w|`` over ``[0, T]``."""
        if self.kind == "constant":
            return 1.0
        if self.kind == "step":
            return 1.0 if T >= self.t0 else 0.0
        if self.kind == "table":
            active = [abs(v) for tk, v in zip(self.times, self.values) if tk <= T]
            return max(active)
        w = self.omega
        if w == 0:
            return abs(math.sin(self.phase))
        if abs(w) * T >= math.pi:
            return 1.0
        best = max(abs(math.sin(self.phase)), abs(math.sin(w * T + self.phase)))
        # interior peaks where w t + phase = pi/2 + k pi
        lo, hi = sorted((self.phase, w * T + self.phase))
        k = math.ceil((lo - math.pi / 2) / math.pi)
        if math.pi / 2 + k * math.pi <= hi:
            best = 1.0
        return best

    def sup_norm(self, T: float) -> float:
        return float(np.max(np.abs(self.amp))) * self.sup_waveform(T)


# -- trajectories -----------------------------------------------------------

@dataclass(frozen=True, eq=False)
class TrajectoryRecord:
    t: np.ndarray
    x1: np.ndarray
    x2: np.ndarray
    y1: np.ndarray
    y2: np.ndarray
    u1: np.ndarray
    u2: np.ndarray
    dt: float
    T: float
    u_norms: tuple = (0.0, 0.0)     # closed-form sup-norms over [0, T]
    status: str = "ok"              # ok | escaped | loop_divergence
    escape_time: float | None = None
    growth_rate: float | None = None
    sup_norms: dict = field(default_factory=dict, init=False)

    SIGNALS = ("x1", "x2", "y1", "y2", "u1", "u2")

    def __post_init__(self):
        sup = {name: _kernels.running_abs_max(getattr(self, name)) for name in self.SIGNALS}
        object.__setattr__(self, "sup_norms", sup)

    @property
    def x0(self) -> tuple[np.ndarray, np.ndarray]:
        return self.x1[0], self.x2[0]

    @property
    def escaped(self) -> bool:
        return self.status == "escaped"

    def norm(self, name: str) -> np.ndarray:
        return np.max(np.abs(getattr(self, name)), axis=1)

    def to_csv(self) -> str:
        cols = ["t"]
        blocks = [self.t[:, None]]
        for name in self.SIGNALS:
            arr = getattr(self, name)
            cols += [f"{name}_{k}" for k in range(arr.shape[1])]
            blocks.append(arr)
        buf = io.StringIO()
        np.savetxt(buf, np.hstack(blocks), delimiter=",", fmt="%.17g",
                   header=",".join(cols), comments="")
        return buf.getvalue()

    def diagnosis(self) -> dict:
        return {"status": self.status, "escape_time": self.escape_time,
                "growth_rate": self.growth_rate, "samples": int(self.t.size),
                "dt": self.dt, "T": self.T}


def sup_norm(rec: TrajectoryRecord, signal: str, t1: float, t2: float) -> float:
    """Max of the sample max-norm of ``signal`` over ``[t1, t2]``."""
    if not 0 <= t1 <= t2:
        raise ValueError(f"need 0 <= t1 <= t2, got [{t1}, {t2}]")
    slack = 1e-9 * rec.dt
    mask = (rec.t >= t1 - slack) & (rec.t <= t2 + slack)
    if not mask.any():
        raise ValueError(f"no samples in window [{t1}, {t2}]")
    return float(np.max(np.abs(getattr(rec, signal)[mask])))


def solve_output_loop(x1, x2, u1, u2, sys1, sys2, eps: float = EPS_LOOP,
                      k_max: int = K_LOOP) -> tuple[np.ndarray, np.ndarray]:
    """Consistent output pair of ``y1 = h1(x1, y2, u1)``, ``y2 = h2(x2, y1, u2)``."""
    y1 = np.asarray(sys1.h(x1, np.zeros(sys1.q), u1), dtype=float)
    y2 = np.asarray(sys2.h(x2, np.zeros(sys2.q), u2), dtype=float)
    if not sys1.feedthrough and not sys2.feedthrough:
        return y1, y2
    if not sys1.feedthrough:
        return y1, np.asarray(sys2.h(x2, y1, u2), dtype=float)
    if not sys2.feedthrough:
        return np.asarray(sys1.h(x1, y2, u1), dtype=float), y2
    for _ in range(k_max):
        n1 = np.asarray(sys1.h(x1, y2, u1), dtype=float)
        n2 = np.asarray(sys2.h(x2, y1, u2), dtype=float)
        change = max(np.max(np.abs(n1 - y1)), np.max(np.abs(n2 - y2)))
        y1, y2 = n1, n2
        if change <= eps:
            return y1, y2
    raise LoopDivergenceError(
        f"output loop did not settle in {k_max} iterations (last change {change:.3g})")


def _rk4_generic(sys1, sys2, x01, x02, U1, U2, dt, N, escape, eps, kmax):
    X1 = np.zeros((N + 1, sys1.n))
    X2 = np.zeros((N + 1, sys2.n))
    Y1 = np.zeros((N + 1, sys1.p))
    Y2 = np.zeros((N + 1, sys2.p))
    x1 = np.asarray(x01, dtype=float).copy()
    x2 = np.asarray(x02, dtype=float).copy()
    c1 = np.zeros_like(x1)
    c2 = np.zeros_like(x2)

    def rhs(a1, a2, j):
        y1, y2 = solve_output_loop(a1, a2, U1[j], U2[j], sys1, sys2, eps, kmax)
        return np.asarray(sys1.f(a1, y2, U1[j])), np.asarray(sys2.f(a2, y1, U2[j])), y1, y2

    for i in range(N + 1):
        e1, e2 = x1 - c1, x2 - c2
        try:
            k11, k12, y1, y2 = rhs(e1, e2, 2 * i)
        except LoopDivergenceError:
            X1[i], X2[i] = e1, e2
            return X1, X2, Y1, Y2, i + 1, _kernels.LOOP_DIVERGED
        X1[i], X2[i], Y1[i], Y2[i] = e1, e2, y1, y2
        big = max(np.max(np.abs(e1)), np.max(np.abs(e2)))
        if not np.isfinite(big) or big > escape:
            return X1, X2, Y1, Y2, i + 1, _kernels.ESCAPED
        if i == N:
            break
        h = 0.5 * dt
        try:
            k21, k22, _, _ = rhs(e1 + h * k11, e2 + h * k12, 2 * i + 1)
            k31, k32, _, _ = rhs(e1 + h * k21, e2 + h * k22, 2 * i + 1)
            k41, k42, _, _ = rhs(e1 + dt * k31, e2 + dt * k32, 2 * i + 2)
        except LoopDivergenceError:
            return X1, X2, Y1, Y2, i + 1, _kernels.LOOP_DIVERGED
        inc1 = dt / 6.0 * (k11 + 2 * k21 + 2 * k31 + k41) - c1
        inc2 = dt / 6.0 * (k12 + 2 * k22 + 2 * k32 + k42) - c2
        t1, t2 = x1 + inc1, x2 + inc2
        c1, c2 = (t1 - x1) - inc1, (t2 - x2) - inc2
        x1, x2 = t1, t2
    return X1, X2, Y1, Y2, N + 1, _kernels.OK


def _growth_rate(t: np.ndarray, X: np.ndarray) -> float | None:
    """Slope of ``log |x|`` over the late part of a trajectory."""
    mag = np.max(np.abs(X), axis=1)
    keep = np.isfinite(mag) & (mag > 0)
    t, mag = t[keep], mag[keep]
    if t.size < 10:
        return None
    tail = slice(int(0.6 * t.size), None)
    slope = np.polyfit(t[tail], np.log(mag[tail]), 1)[0]
    return float(slope)


def integrate(sys1, sys2, x0, inputs: Sequence[InputSignal], T: float, dt: float = DT,
              backend: str | None = None, escape: float = ESCAPE,
              eps_loop: float = EPS_LOOP, k_loop: int = K_LOOP) -> TrajectoryRecord:
    """Fixed-step RK4 run of the feedback pair from ``x0 = (x1(0), x2(0))``.

    Parametric subsystems go through the kernels; anything else uses the
    generic Python loop.  Escape past ``escape`` or a failed output loop
    ends the run early and is recorded in ``status``.
    """
    if not dt > 0 or T < dt:
        raise ValueError(f"need dt > 0 and T >= dt, got dt={dt}, T={T}")
    N = int(round(T / dt))
    x01 = np.asarray(x0[0], dtype=float).reshape(sys1.n)
    x02 = np.asarray(x0[1], dtype=float).reshape(sys2.n)
    in1, in2 = inputs
    th = np.arange(2 * N + 1) * (0.5 * dt)
    U1 = np.ascontiguousarray(in1.sample(th).reshape(2 * N + 1, sys1.m))
    U2 = np.ascontiguousarray(in2.sample(th).reshape(2 * N + 1, sys2.m))
    args = (x01, x02, U1, U2, float(dt), N, float(escape), float(eps_loop), int(k_loop))
    if callable(sys1.packed) and callable(sys2.packed):
        X1, X2, Y1, Y2, n, st = _kernels.rk4_parametric(sys1.packed(), sys2.packed(), *args,
                                                        backend=backend)
    else:
        X1, X2, Y1, Y2, n, st = _rk4_generic(sys1, sys2, *args)
    t = np.arange(n) * dt
    status = {_kernels.OK: "ok", _kernels.ESCAPED: "escaped",
              _kernels.LOOP_DIVERGED: "loop_divergence"}[st]
    X = np.hstack([X1[:n], X2[:n]])
    return TrajectoryRecord(
        t=t, x1=X1[:n], x2=X2[:n], y1=Y1[:n], y2=Y2[:n], u1=U1[0:2 * n:2], u2=U2[0:2 * n:2],
        dt=float(dt), T=float(T), u_norms=(in1.sup_norm(T), in2.sup_norm(T)), status=status,
        escape_time=float(t[-1]) if status == "escaped" else None,
        growth_rate=_growth_rate(t, X) if status == "escaped" else None,
    )


# -- verification -----------------------------------------------------------

@dataclass(frozen=True)
class VerificationReport:
    bound_name: str
    min_slack: float
    worst_time: float
    passed: bool
    n_samples: int = 0

    def to_dict(self) -> dict:
        return {"bound": self.bound_name, "min_slack": self.min_slack,
                "worst_time": self.worst_time, "pass": self.passed,
                "samples": self.n_samples}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def _report(name: str, t: np.ndarray, rhs, observed, eps: float = EPS_VERIFY) -> VerificationReport:
    slack = np.broadcast_to(np.asarray(rhs, dtype=float) - np.asarray(observed, dtype=float),
                            t.shape)
    i = int(np.argmin(slack))
    ms = float(slack[i])
    return VerificationReport(name, ms, float(t[i]), bool(ms >= -eps), int(t.size))


def _g(fn: ScalarFn, v):
    return fn(np.minimum(np.asarray(v, dtype=float), fn.cap))


def _pick(rec: TrajectoryRecord, which: int):
    if which not in (1, 2):
        raise ValueError("which must be 1 or 2")
    other = 2 if which == 1 else 1
    return f"x{which}", f"y{which}", f"y{other}", rec.u_norms[which - 1]


def verify_iops_subsystem(rec: TrajectoryRecord, contract, which: int) -> VerificationReport:
    """``|y_i(t)| <= beta(|x_i(0)|, t) + gamma^y(||y_j,t||) + gamma^u(||u_i||) + d``."""
    xn, yn, on, un = _pick(rec, which)
    x0 = float(np.max(np.abs(getattr(rec, xn)[0])))
    rhs = (np.asarray(contract.beta(x0, rec.t)) + _g(contract.gamma_y, rec.sup_norms[on])
           + float(_g(contract.gamma_u, un)) + contract.d)
    return _report(f"iops_{yn}", rec.t, rhs, rec.norm(yn))


def verify_uo(rec: TrajectoryRecord, alpha0: ScalarFn, D0: float, which: int) -> VerificationReport:
    """``|x_i(t)| <= alpha0(|x_i(0)| + ||(u_i, y_j, y_i)_t||) + D0``."""
    xn, yn, on, _ = _pick(rec, which)
    x0 = float(np.max(np.abs(getattr(rec, xn)[0])))
    io_sup = np.maximum.reduce([rec.sup_norms[f"u{which}"], rec.sup_norms[on], rec.sup_norms[yn]])
    rhs = _g(alpha0, x0 + io_sup) + D0
    return _report(f"uo_{xn}", rec.t, rhs, rec.norm(xn))


def _beta_at(beta, s: float, t: np.ndarray):
    if beta.family == "tabulated" and s > beta.s_grid[-1] * (1 + 1e-12):
        raise GridExtentError(
            f"|x(0)| = {s:.6g} beyond the tabulated range {beta.s_grid[-1]:.6g}; extend the grid")
    return np.asarray(beta(s, t))


def verify_certificate(rec: TrajectoryRecord, cert, x0=None, inputs=None):
    """Reports for the ``y1``, ``y2`` and total bounds of a certificate.

    ``x0``/``inputs`` default to the record's own initial state and input
    sup-norms.
    """
    if x0 is None:
        x0 = rec.x0
    s = float(max(np.max(np.abs(x0[0])), np.max(np.abs(x0[1]))))
    if inputs is None:
        u = float(max(rec.u_norms))
    else:
        u = float(max(inp.sup_norm(rec.T) for inp in inputs))
    b1 = _beta_at(cert.beta1p, s, rec.t)
    b2 = _beta_at(cert.beta2p, s, rec.t)
    y1, y2 = rec.norm("y1"), rec.norm("y2")
    r1 = b1 + float(_g(cert.gain_y1, u)) + cert.d1p
    r2 = b2 + float(_g(cert.gain_y2, u)) + cert.d2p
    rt = b1 + b2 + float(_g(cert.gain_total, u)) + cert.offset_total
    return (_report("cert_y1", rec.t, r1, y1),
            _report("cert_y2", rec.t, r2, y2),
            _report("cert_total", rec.t, rt, y1 + y2))


def verify_step1(rec: TrajectoryRecord, cert) -> tuple[VerificationReport, VerificationReport]:
    """Horizon-wide output bounds from the first step of the argument."""
    from smallgain.composer import step1_bounds

    c1, c2 = cert.contracts
    x1n = float(np.max(np.abs(rec.x1[0])))
    x2n = float(np.max(np.abs(rec.x2[0])))
    v1 = float(_g(c1.gamma_u, rec.u_norms[0]))
    v2 = float(_g(c2.gamma_u, rec.u_norms[1]))
    b1, b2 = step1_bounds(c1, c2, cert.rho1, cert.rho2, cert.d3, x1n, x2n, v1, v2)
    return (_report("step1_y1", rec.t, b1, rec.sup_norms["y1"]),
            _report("step1_y2", rec.t, b2, rec.sup_norms["y2"]))


def verify_iss_remark(rec: TrajectoryRecord, state_contracts, cert=None) -> list[VerificationReport]:
    """Per-subsystem state bounds, plus the combined state bound when ``cert`` is given."""
    out = []
    for which, sc in enumerate(state_contracts, start=1):
        xn, _, on, un = _pick(rec, which)
        x0 = float(np.max(np.abs(getattr(rec, xn)[0])))
        rhs = (np.asarray(sc.beta(x0, rec.t)) + _g(sc.gamma_y, rec.sup_norms[on])
               + float(_g(sc.gamma_u, un)))
        out.append(_report(f"iss_{xn}", rec.t, rhs, rec.norm(xn)))
    if cert is not None:
        c1, c2 = cert.contracts
        x0 = float(max(np.max(np.abs(rec.x1[0])), np.max(np.abs(rec.x2[0]))))
        u = float(max(rec.u_norms))
        v1 = float(_g(c1.gamma_u, rec.u_norms[0]))
        v2 = float(_g(c2.gamma_u, rec.u_norms[1]))
        bound = cert.state.s_inf(x0, u, v1, v2)
        xnorm = np.maximum(rec.norm("x1"), rec.norm("x2"))
        out.append(_report("iss_combined", rec.t, bound, xnorm))
    return out


# -- open-loop gain sweeps ------------------------------------------------------

@dataclass(frozen=True, eq=False)
class GainSweep:
    amplitudes: np.ndarray
    sup_y: np.ndarray
    envelope: np.ndarray          # running max, monotone in the amplitude
    saturating: bool              # log-log slope at the top below 0.1
    escaped_at: float | None = None

    def linear_bound(self) -> float:
        """Smallest ``k`` with ``envelope <= k a`` on the sampled amplitudes."""
        pos = self.amplitudes > 0
        return float(np.max(self.envelope[pos] / self.amplitudes[pos])) if pos.any() else 0.0


def _open_loop_sup(dyn, yo: np.ndarray, u: np.ndarray, T: float, dt: float) -> float:
    x = np.zeros(dyn.n)
    best = float(np.max(np.abs(dyn.h(x, yo, u))))
    h = 0.5 * dt
    for _ in range(int(round(T / dt))):
        k1 = dyn.f(x, yo, u)
        k2 = dyn.f(x + h * k1, yo, u)
        k3 = dyn.f(x + h * k2, yo, u)
        k4 = dyn.f(x + dt * k3, yo, u)
        x = x + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.all(np.isfinite(x)) or np.max(np.abs(x)) > ESCAPE:
            return math.inf
        best = max(best, float(np.max(np.abs(dyn.h(x, yo, u)))))
    return best


def estimate_gain_sweep(dyn, amplitudes, T_settle: float, channel: str = "y",
                        dt: float = 1e-2) -> GainSweep:
    """Open-loop ``sup |y|`` for constant ``y_other`` (channel ``y``) or ``u`` (channel ``u``)."""
    amps = np.sort(np.asarray(amplitudes, dtype=float))
    sups = []
    escaped = None
    for a in amps:
        yo = np.full(dyn.q, a if channel == "y" else 0.0)
        u = np.full(dyn.m, a if channel == "u" else 0.0)
        v = _open_loop_sup(dyn, yo, u, T_settle, dt)
        if not math.isfinite(v):
            escaped = float(a)
            break
        sups.append(v)
    amps = amps[:len(sups)]
    sups = np.asarray(sups)
    env = np.maximum.accumulate(sups) if sups.size else sups
    saturating = False
    pos = (amps > 0) & (env > 0)
    if pos.sum() >= 2:
        a, e = amps[pos][-2:], env[pos][-2:]
        slope = (math.log(e[1]) - math.log(e[0])) / (math.log(a[1]) - math.log(a[0]))
        saturating = slope < 0.1
    return GainSweep(amps, sups, env, saturating, escaped)
