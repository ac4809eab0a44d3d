"""Numpy reference implementations of the hot loops.

Signatures match the compiled module exactly; the two are interchangeable.
"""

import numpy as np

OK, ESCAPED, LOOP_DIVERGED = 0, 1, 2


def _phi(kind, v):
    if kind == 0:
        return v
    if kind == 1:
        return v / (1.0 + np.abs(v))
    return np.tanh(v)


class _Sys:
    def __init__(self, A, E, B, C, F, G, P, phi):
        self.A, self.E, self.B = A, E, B
        self.C, self.F, self.G = C, F, G
        self.P = P
        self.phi = int(phi)
        self.feed = bool(np.any(F != 0))

    def out(self, x, yo, u):
        return self.C @ x + self.F @ _phi(self.phi, yo) + self.G @ u

    def rhs(self, x, yo, u):
        dx = self.A @ x + self.E @ _phi(self.phi, yo) + self.B @ u
        xp = x
        for k in range(self.P.shape[0]):
            xp = xp * x
            dx = dx + self.P[k] @ xp
        return dx


def solve_loop(s1, s2, x1, x2, u1, u2, eps, kmax):
    """Consistent outputs; returns ``(y1, y2, status)``."""
    y1 = s1.out(x1, np.zeros(s1.E.shape[1]), u1)
    y2 = s2.out(x2, np.zeros(s2.E.shape[1]), u2)
    if not s1.feed and not s2.feed:
        return y1, y2, OK
    if not s1.feed:
        return y1, s2.out(x2, y1, u2), OK
    if not s2.feed:
        return s1.out(x1, y2, u1), y2, OK
    for _ in range(kmax):
        n1 = s1.out(x1, y2, u1)
        n2 = s2.out(x2, y1, u2)
        change = max(np.max(np.abs(n1 - y1)), np.max(np.abs(n2 - y2)))
        y1, y2 = n1, n2
        if change <= eps:
            return y1, y2, OK
    return y1, y2, LOOP_DIVERGED


def rk4_parametric(p1, p2, x01, x02, U1, U2, dt, N, escape, eps_loop, k_loop):
    """Fixed-step RK4 for two coupled parametric subsystems.

    ``U1``/``U2`` hold inputs sampled every ``dt/2`` (``2N+1`` rows).  State
    updates use compensated summation so the stored trajectory is not
    limited by accumulated rounding.  Returns
    ``(X1, X2, Y1, Y2, n_done, status)``.
    """
    s1, s2 = _Sys(*p1), _Sys(*p2)
    X1 = np.zeros((N + 1, s1.A.shape[0]))
    X2 = np.zeros((N + 1, s2.A.shape[0]))
    Y1 = np.zeros((N + 1, s1.C.shape[0]))
    Y2 = np.zeros((N + 1, s2.C.shape[0]))
    x1 = np.array(x01, dtype=float)
    x2 = np.array(x02, dtype=float)
    c1 = np.zeros_like(x1)
    c2 = np.zeros_like(x2)

    def stage(a1, a2, j):
        y1, y2, st = solve_loop(s1, s2, a1, a2, U1[j], U2[j], eps_loop, k_loop)
        return s1.rhs(a1, y2, U1[j]), s2.rhs(a2, y1, U2[j]), y1, y2, st

    for i in range(N + 1):
        # evaluate and record the compensated state
        e1, e2 = x1 - c1, x2 - c2
        k11, k12, y1, y2, st = stage(e1, e2, 2 * i)
        X1[i], X2[i], Y1[i], Y2[i] = e1, e2, y1, y2
        if st:
            return X1, X2, Y1, Y2, i + 1, LOOP_DIVERGED
        big = max(np.max(np.abs(e1)), np.max(np.abs(e2)))
        if not np.isfinite(big) or big > escape:
            return X1, X2, Y1, Y2, i + 1, ESCAPED
        if i == N:
            break
        h = 0.5 * dt
        k21, k22, _, _, st2 = stage(e1 + h * k11, e2 + h * k12, 2 * i + 1)
        k31, k32, _, _, st3 = stage(e1 + h * k21, e2 + h * k22, 2 * i + 1)
        k41, k42, _, _, st4 = stage(e1 + dt * k31, e2 + dt * k32, 2 * i + 2)
        if st2 or st3 or st4:
            return X1, X2, Y1, Y2, i + 1, LOOP_DIVERGED
        inc1 = dt / 6.0 * (k11 + 2.0 * k21 + 2.0 * k31 + k41) - c1
        inc2 = dt / 6.0 * (k12 + 2.0 * k22 + 2.0 * k32 + k42) - c2
        t1 = x1 + inc1
        t2 = x2 + inc2
        c1 = (t1 - x1) - inc1
        c2 = (t2 - x2) - inc2
        x1, x2 = t1, t2
    return X1, X2, Y1, Y2, N + 1, OK


def envelope_linear(Bv, back, k, C, E, tol, kmax):
    """Iterate ``E <- min(E, B + k E[:, back] + C)``; returns ``(E, iters, change)``."""
    E = np.array(E, dtype=float)
    change = np.inf
    it = 0
    while it < kmax:
        new = np.minimum(E, Bv + k * E[:, back] + C)
        change = float(np.max(np.abs(new - E))) if E.size else 0.0
        E = new
        it += 1
        if change <= tol:
            break
    return E, it, change


def running_abs_max(X):
    """Running maximum of the row max-norm of a 2-D sample array."""
    X = np.asarray(X, dtype=float)
    if X.shape[0] == 0:
        return np.zeros(0)
    return np.maximum.accumulate(np.max(np.abs(X), axis=1))
