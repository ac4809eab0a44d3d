# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled versions of the integration and envelope loops."""

import numpy as np
from libc.math cimport fabs, tanh, isfinite

cdef enum:
    OK = 0
    ESCAPED = 1
    LOOP_DIVERGED = 2


cdef inline double _phi(int kind, double v) noexcept nogil:
    if kind == 0:
        return v
    if kind == 1:
        return v / (1.0 + fabs(v))
    return tanh(v)


cdef class _Sys:
    cdef double[:, ::1] A, E, B, C, F, G
    cdef double[:, :, ::1] P
    cdef int phi, n, q, m, p, npoly
    cdef bint feed

    def __init__(self, A, E, B, C, F, G, P, phi):
        self.A = np.ascontiguousarray(A, dtype=np.float64)
        self.E = np.ascontiguousarray(E, dtype=np.float64)
        self.B = np.ascontiguousarray(B, dtype=np.float64)
        self.C = np.ascontiguousarray(C, dtype=np.float64)
        self.F = np.ascontiguousarray(F, dtype=np.float64)
        self.G = np.ascontiguousarray(G, dtype=np.float64)
        self.P = np.ascontiguousarray(P, dtype=np.float64).reshape(-1, self.A.shape[0], self.A.shape[0])
        self.phi = int(phi)
        self.n = self.A.shape[0]
        self.q = self.E.shape[1]
        self.m = self.B.shape[1]
        self.p = self.C.shape[0]
        self.npoly = self.P.shape[0]
        self.feed = bool(np.any(np.asarray(F) != 0))

    cdef void out(self, double* x, double* yo, double* u, double* y) noexcept:
        cdef int i, j
        cdef double acc
        for i in range(self.p):
            acc = 0.0
            for j in range(self.n):
                acc += self.C[i, j] * x[j]
            for j in range(self.q):
                acc += self.F[i, j] * _phi(self.phi, yo[j])
            for j in range(self.m):
                acc += self.G[i, j] * u[j]
            y[i] = acc

    cdef void rhs(self, double* x, double* yo, double* u, double* dx) noexcept:
        cdef int i, j, k
        cdef double acc, xp
        for i in range(self.n):
            acc = 0.0
            for j in range(self.n):
                acc += self.A[i, j] * x[j]
            for j in range(self.q):
                acc += self.E[i, j] * _phi(self.phi, yo[j])
            for j in range(self.m):
                acc += self.B[i, j] * u[j]
            dx[i] = acc
        for j in range(self.n):
            xp = x[j]
            for k in range(self.npoly):
                xp = xp * x[j]
                for i in range(self.n):
                    dx[i] += self.P[k, i, j] * xp


cdef int _solve(_Sys s1, _Sys s2, double* x1, double* x2, double* u1, double* u2,
                double* y1, double* y2, double* t1, double* t2, double* z1, double* z2,
                double eps, int kmax) noexcept:
    cdef int i, it
    cdef double change
    for i in range(s1.q):
        z1[i] = 0.0
    for i in range(s2.q):
        z2[i] = 0.0
    s1.out(x1, z1, u1, y1)
    s2.out(x2, z2, u2, y2)
    if not s1.feed and not s2.feed:
        return OK
    if not s1.feed:
        s2.out(x2, y1, u2, y2)
        return OK
    if not s2.feed:
        s1.out(x1, y2, u1, y1)
        return OK
    for it in range(kmax):
        s1.out(x1, y2, u1, t1)
        s2.out(x2, y1, u2, t2)
        change = 0.0
        for i in range(s1.p):
            change = max(change, fabs(t1[i] - y1[i]))
            y1[i] = t1[i]
        for i in range(s2.p):
            change = max(change, fabs(t2[i] - y2[i]))
            y2[i] = t2[i]
        if change <= eps:
            return OK
    return LOOP_DIVERGED


def rk4_parametric(p1, p2, x01, x02, U1, U2, double dt, int N, double escape,
                   double eps_loop, int k_loop):
    cdef _Sys s1 = _Sys(*p1)
    cdef _Sys s2 = _Sys(*p2)
    cdef int n1 = s1.n, n2 = s2.n
    cdef double[:, ::1] u1 = np.ascontiguousarray(U1, dtype=np.float64)
    cdef double[:, ::1] u2 = np.ascontiguousarray(U2, dtype=np.float64)
    X1a = np.zeros((N + 1, n1)); X2a = np.zeros((N + 1, n2))
    Y1a = np.zeros((N + 1, s1.p)); Y2a = np.zeros((N + 1, s2.p))
    cdef double[:, ::1] X1 = X1a, X2 = X2a, Y1 = Y1a, Y2 = Y2a
    # state, compensation, stage slopes, stage points: rows of one scratch block
    cdef double[:, ::1] w1 = np.zeros((7, n1))
    cdef double[:, ::1] w2 = np.zeros((7, n2))
    cdef double[:, ::1] o1 = np.zeros((4, max(s1.p, s2.q)))
    cdef double[:, ::1] o2 = np.zeros((4, max(s2.p, s1.q)))
    cdef double[:, ::1] zz = np.zeros((2, max(s1.q, s2.q) + 1))
    cdef double[:, ::1] k1 = np.zeros((4, n1))
    cdef double[:, ::1] k2 = np.zeros((4, n2))
    cdef double* x1 = &w1[0, 0]
    cdef double* c1 = &w1[1, 0]
    cdef double* a1 = &w1[2, 0]
    cdef double* x2 = &w2[0, 0]
    cdef double* c2 = &w2[1, 0]
    cdef double* a2 = &w2[2, 0]
    cdef double* e1 = &w1[3, 0]
    cdef double* e2 = &w2[3, 0]
    cdef int i, j, st, stage, jj
    cdef double big, h, inc, tnew
    cdef double coef[4]
    coef[0] = 0.5; coef[1] = 0.5; coef[2] = 1.0; coef[3] = 0.0
    for j in range(n1):
        x1[j] = x01[j]
    for j in range(n2):
        x2[j] = x02[j]
    for i in range(N + 1):
        # stage 1 doubles as the recorded sample; evaluate the compensated state
        for j in range(n1):
            e1[j] = x1[j] - c1[j]
        for j in range(n2):
            e2[j] = x2[j] - c2[j]
        st = _solve(s1, s2, e1, e2, &u1[2 * i, 0], &u2[2 * i, 0], &o1[0, 0], &o2[0, 0],
                    &o1[1, 0], &o2[1, 0], &zz[0, 0], &zz[1, 0], eps_loop, k_loop)
        for j in range(n1):
            X1[i, j] = e1[j]
        for j in range(n2):
            X2[i, j] = e2[j]
        for j in range(s1.p):
            Y1[i, j] = o1[0, j]
        for j in range(s2.p):
            Y2[i, j] = o2[0, j]
        if st != OK:
            return X1a, X2a, Y1a, Y2a, i + 1, LOOP_DIVERGED
        big = 0.0
        for j in range(n1):
            if not isfinite(e1[j]):
                big = escape * 2 + 1
            big = max(big, fabs(e1[j]))
        for j in range(n2):
            if not isfinite(e2[j]):
                big = escape * 2 + 1
            big = max(big, fabs(e2[j]))
        if big > escape:
            return X1a, X2a, Y1a, Y2a, i + 1, ESCAPED
        if i == N:
            break
        s1.rhs(e1, &o2[0, 0], &u1[2 * i, 0], &k1[0, 0])
        s2.rhs(e2, &o1[0, 0], &u2[2 * i, 0], &k2[0, 0])
        for stage in range(1, 4):
            h = coef[stage - 1] * dt
            jj = 2 * i + 1 if stage < 3 else 2 * i + 2
            for j in range(n1):
                a1[j] = e1[j] + h * k1[stage - 1, j]
            for j in range(n2):
                a2[j] = e2[j] + h * k2[stage - 1, j]
            st = _solve(s1, s2, a1, a2, &u1[jj, 0], &u2[jj, 0], &o1[2, 0], &o2[2, 0],
                        &o1[3, 0], &o2[3, 0], &zz[0, 0], &zz[1, 0], eps_loop, k_loop)
            if st != OK:
                return X1a, X2a, Y1a, Y2a, i + 1, LOOP_DIVERGED
            s1.rhs(a1, &o2[2, 0], &u1[jj, 0], &k1[stage, 0])
            s2.rhs(a2, &o1[2, 0], &u2[jj, 0], &k2[stage, 0])
        for j in range(n1):
            inc = dt / 6.0 * (k1[0, j] + 2.0 * k1[1, j] + 2.0 * k1[2, j] + k1[3, j]) - c1[j]
            tnew = x1[j] + inc
            c1[j] = (tnew - x1[j]) - inc
            x1[j] = tnew
        for j in range(n2):
            inc = dt / 6.0 * (k2[0, j] + 2.0 * k2[1, j] + 2.0 * k2[2, j] + k2[3, j]) - c2[j]
            tnew = x2[j] + inc
            c2[j] = (tnew - x2[j]) - inc
            x2[j] = tnew
    return X1a, X2a, Y1a, Y2a, N + 1, OK


def envelope_linear(Bv, back, double k, double C, E, double tol, int kmax):
    cdef double[:, ::1] b = np.ascontiguousarray(Bv, dtype=np.float64)
    cdef Py_ssize_t[::1] bk = np.ascontiguousarray(back, dtype=np.intp)
    Ea = np.array(E, dtype=np.float64, order="C")
    Na = np.empty_like(Ea)
    cdef double[:, ::1] cur = Ea
    cdef double[:, ::1] nxt = Na
    cdef double[:, ::1] tmp
    cdef Py_ssize_t ns = cur.shape[0], nt = cur.shape[1], i, j
    cdef int it = 0
    cdef double change = float("inf"), v
    with nogil:
        while it < kmax:
            change = 0.0
            for i in range(ns):
                for j in range(nt):
                    v = b[i, j] + k * cur[i, bk[j]] + C
                    if v > cur[i, j]:
                        v = cur[i, j]
                    nxt[i, j] = v
                    change = max(change, fabs(v - cur[i, j]))
            tmp = cur
            cur = nxt
            nxt = tmp
            it += 1
            if change <= tol:
                break
    return np.asarray(cur).copy(), it, change


def running_abs_max(X):
    cdef double[:, ::1] x = np.ascontiguousarray(X, dtype=np.float64)
    cdef Py_ssize_t n = x.shape[0], d = x.shape[1], i, j
    out = np.zeros(n)
    cdef double[::1] o = out
    cdef double run = 0.0
    for i in range(n):
        for j in range(d):
            if fabs(x[i, j]) > run:
                run = fabs(x[i, j])
        o[i] = run
    return out
