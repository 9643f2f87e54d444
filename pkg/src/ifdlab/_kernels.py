"""Compiled inner loops for the explicit RK4 period maps.

Coefficient tables are periodic in their first axis with ``nf`` rows over
one period. A stage at half-step index m (time m * dt / 2) reads the table
at position m * nf / (2 S) through 4-point periodic Lagrange interpolation,
which is exact when the position is an integer.
"""

import numpy as np
from numba import njit

OK = 0
NEGATIVE = 1
NONFINITE = 2


@njit(cache=True, nogil=True)
def _interp(table, pos, out):
    nf = table.shape[0]
    k = int(np.floor(pos))
    f = pos - k
    m = table.shape[1]
    if f == 0.0:
        i1 = k % nf
        for c in range(m):
            out[c] = table[i1, c]
        return
    w0 = -f * (f - 1.0) * (f - 2.0) / 6.0
    w1 = (f + 1.0) * (f - 1.0) * (f - 2.0) / 2.0
    w2 = -(f + 1.0) * f * (f - 2.0) / 2.0
    w3 = (f + 1.0) * f * (f - 1.0) / 6.0
    i0 = (k - 1) % nf
    i1 = k % nf
    i2 = (k + 1) % nf
    i3 = (k + 2) % nf
    for c in range(m):
        out[c] = w0 * table[i0, c] + w1 * table[i1, c] + w2 * table[i2, c] + w3 * table[i3, c]


@njit(cache=True, nogil=True)
def _div_apply(u, muf, pf, h, out):
    # d/dx [mu u_x - P u] with J = 0 on both boundary faces
    nx = u.shape[0]
    jprev = 0.0
    for i in range(nx - 1):
        j = muf[i + 1] * (u[i + 1] - u[i]) / h - pf[i + 1] * 0.5 * (u[i] + u[i + 1])
        out[i] = (j - jprev) / h
        jprev = j
    out[nx - 1] = -jprev / h


@njit(cache=True, nogil=True)
def _nondiv_apply(u, muf, bf, h, out):
    # transpose of _div_apply: d/dx[mu u_x] + b u_x with zero-gradient ends
    nx = u.shape[0]
    aprev = 0.0
    cprev = 0.0
    for i in range(nx):
        if i < nx - 1:
            d = u[i + 1] - u[i]
            a = muf[i + 1] * d / h
            c = 0.5 * bf[i + 1] * d
        else:
            a = 0.0
            c = 0.0
        out[i] = (a - aprev) / h + (c + cprev) / h
        aprev = a
        cprev = c


@njit(cache=True, nogil=True)
def _linear_rhs(y, muf, df, pot, nondiv, h, out):
    if nondiv:
        _nondiv_apply(y, muf, df, h, out)
    else:
        _div_apply(y, muf, df, h, out)
    for i in range(y.shape[0]):
        out[i] += pot[i] * y[i]


@njit(cache=True, nogil=True)
def linear_period(y, mu_tab, dr_tab, pot_tab, nondiv, h, dt, S, snap_every, snaps):
    """Advance ``y`` in place over one period of phi_t = L(t) phi + V phi.

    Returns a status code; snapshots are taken every ``snap_every`` steps
    when ``snaps`` has rows.
    """
    nx = y.shape[0]
    nf = mu_tab.shape[0]
    ratio = nf / (2.0 * S)
    mu0 = np.empty(nx + 1)
    d0 = np.empty(nx + 1)
    p0 = np.empty(nx)
    mu1 = np.empty(nx + 1)
    d1 = np.empty(nx + 1)
    p1 = np.empty(nx)
    mu2 = np.empty(nx + 1)
    d2 = np.empty(nx + 1)
    p2 = np.empty(nx)
    k1 = np.empty(nx)
    k2 = np.empty(nx)
    k3 = np.empty(nx)
    k4 = np.empty(nx)
    tmp = np.empty(nx)
    _interp(mu_tab, 0.0, mu0)
    _interp(dr_tab, 0.0, d0)
    _interp(pot_tab, 0.0, p0)
    record = snaps.shape[0] > 0
    for s in range(S):
        if record and s % snap_every == 0:
            snaps[s // snap_every, :] = y
        pos1 = (2 * s + 1) * ratio
        pos2 = (2 * s + 2) * ratio
        _interp(mu_tab, pos1, mu1)
        _interp(dr_tab, pos1, d1)
        _interp(pot_tab, pos1, p1)
        _interp(mu_tab, pos2, mu2)
        _interp(dr_tab, pos2, d2)
        _interp(pot_tab, pos2, p2)
        _linear_rhs(y, mu0, d0, p0, nondiv, h, k1)
        for i in range(nx):
            tmp[i] = y[i] + 0.5 * dt * k1[i]
        _linear_rhs(tmp, mu1, d1, p1, nondiv, h, k2)
        for i in range(nx):
            tmp[i] = y[i] + 0.5 * dt * k2[i]
        _linear_rhs(tmp, mu1, d1, p1, nondiv, h, k3)
        for i in range(nx):
            tmp[i] = y[i] + dt * k3[i]
        _linear_rhs(tmp, mu2, d2, p2, nondiv, h, k4)
        bad = False
        for i in range(nx):
            y[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
            if not np.isfinite(y[i]):
                bad = True
        if bad:
            return NONFINITE
        mu0, mu2 = mu2, mu0
        d0, d2 = d2, d0
        p0, p2 = p2, p0
    return OK


@njit(cache=True, nogil=True)
def _nonlinear_rhs(U, mu_s, p_s, r, K, h, out, tot, tmp):
    N = U.shape[0]
    nx = U.shape[1]
    for i in range(nx):
        tot[i] = 0.0
    for n in range(N):
        for i in range(nx):
            tot[i] += U[n, i]
    for n in range(N):
        _div_apply(U[n], mu_s[n], p_s[n], h, tmp)
        for i in range(nx):
            out[n, i] = tmp[i] + r[i] * U[n, i] * (1.0 - tot[i] / K[i])


@njit(cache=True, nogil=True)
def _interp_species(tabs, pos, out):
    for n in range(tabs.shape[0]):
        _interp(tabs[n], pos, out[n])


@njit(cache=True, nogil=True)
def nonlinear_period(U, mu_tabs, p_tabs, r_tab, K_tab, h, dt, S, snap_every, snaps, neg_tol, react):
    """One period of u_n' = A_n(t) u_n + r u_n (1 - sum(u) / K), in place.

    ``react`` (length N) accumulates the time integral of the reaction
    term's spatial sum for each species, as combined by the RK4 weights.
    """
    N = U.shape[0]
    nx = U.shape[1]
    nf = r_tab.shape[0]
    ratio = nf / (2.0 * S)
    mu0 = np.empty((N, nx + 1))
    q0 = np.empty((N, nx + 1))
    r0 = np.empty(nx)
    K0 = np.empty(nx)
    mu1 = np.empty((N, nx + 1))
    q1 = np.empty((N, nx + 1))
    r1 = np.empty(nx)
    K1 = np.empty(nx)
    mu2 = np.empty((N, nx + 1))
    q2 = np.empty((N, nx + 1))
    r2 = np.empty(nx)
    K2 = np.empty(nx)
    k1 = np.empty((N, nx))
    k2 = np.empty((N, nx))
    k3 = np.empty((N, nx))
    k4 = np.empty((N, nx))
    Y = np.empty((N, nx))
    tot = np.empty(nx)
    tmp = np.empty(nx)
    _interp_species(mu_tabs, 0.0, mu0)
    _interp_species(p_tabs, 0.0, q0)
    _interp(r_tab, 0.0, r0)
    _interp(K_tab, 0.0, K0)
    record = snaps.shape[0] > 0
    for s in range(S):
        if record and s % snap_every == 0:
            snaps[s // snap_every, :, :] = U
        pos1 = (2 * s + 1) * ratio
        pos2 = (2 * s + 2) * ratio
        _interp_species(mu_tabs, pos1, mu1)
        _interp_species(p_tabs, pos1, q1)
        _interp(r_tab, pos1, r1)
        _interp(K_tab, pos1, K1)
        _interp_species(mu_tabs, pos2, mu2)
        _interp_species(p_tabs, pos2, q2)
        _interp(r_tab, pos2, r2)
        _interp(K_tab, pos2, K2)

        _nonlinear_rhs(U, mu0, q0, r0, K0, h, k1, tot, tmp)
        for n in range(N):
            for i in range(nx):
                Y[n, i] = U[n, i] + 0.5 * dt * k1[n, i]
        _nonlinear_rhs(Y, mu1, q1, r1, K1, h, k2, tot, tmp)
        for n in range(N):
            for i in range(nx):
                Y[n, i] = U[n, i] + 0.5 * dt * k2[n, i]
        _nonlinear_rhs(Y, mu1, q1, r1, K1, h, k3, tot, tmp)
        for n in range(N):
            for i in range(nx):
                Y[n, i] = U[n, i] + dt * k3[n, i]
        _nonlinear_rhs(Y, mu2, q2, r2, K2, h, k4, tot, tmp)

        for n in range(N):
            acc = 0.0
            for i in range(nx):
                inc = k1[n, i] + 2.0 * k2[n, i] + 2.0 * k3[n, i] + k4[n, i]
                acc += inc
                v = U[n, i] + dt / 6.0 * inc
                if not np.isfinite(v):
                    return NONFINITE
                if v < 0.0:
                    if v < -neg_tol:
                        return NEGATIVE
                    v = 0.0
                U[n, i] = v
            # dispersal sums to zero, so acc * h is the reaction contribution
            react[n] += dt / 6.0 * acc * h
        mu0, mu2 = mu2, mu0
        q0, q2 = q2, q0
        r0, r2 = r2, r0
        K0, K2 = K2, K0
    return OK
