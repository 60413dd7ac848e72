"""Jitted fixed-step RK4 trajectories and their discrete adjoints.

Training differentiates through the unrolled integrator
(discretize-then-optimize), so the gradient here is the exact derivative of
the computation solve_fixed performs: same stage arithmetic, same
non-negativity floor, same clamp kinks, reversed by hand.  The reverse sweep
per substep, with g the incoming cotangent after the floor mask:

    kb4 = g*h/6;          ub4 = kb4 * df/dM|s4
    kb3 = g*h/3 + ub4*h;  ub3 = kb3 * df/dM|s3
    kb2 = g*h/3 + ub3*h/2; ub2 = kb2 * df/dM|s2
    kb1 = g*h/6 + ub2*h/2; ub1 = kb1 * df/dM|s1
    lam = g + ub1 + ub2 + ub3 + ub4
    pbar += sum_s kbs * df/dp|s

Subgradient conventions match autodiff: clamps and floors pass gradient only
strictly inside, relu'(0) = 0, abs'(0) = 0 via sign().

Forward kernels record every stage input state in U[(interval, substep,
stage)] so the adjoint never re-integrates.  The floor mask is recovered for
free: the post-floor output of substep s is the stage-1 input of substep s+1
(or Y[i+1] at interval boundaries).

Everything compiles under numba when available and runs as plain Python
otherwise; the fallback is orders of magnitude slower but identical in
arithmetic.

Parameter vector layouts (documented here once, relied on by train/cli):

    mech  p[5]  : alpha0, beta, kappa, K, p_decay
    ude   q[35] : alpha0, beta, K, p_decay, then the (1,10,1) network
                  (w1[10], b1[10], w2[10], b2)
    node  psi[337]: the (2,16,16,1) network, per-layer row-major weights
                  then biases
"""

from __future__ import annotations

import numpy as np

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only on bare installs
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]

        def wrap(f):
            return f

        return wrap


SENTINEL_LOSS = 1.0e12

N_MECH = 5
N_UDE = 35
N_NODE = 337


@njit(cache=True)
def _eta_at(eta_t, eta_v, x):
    # piecewise linear with constant extrapolation; mirrors Interpolant exactly
    n = eta_t.shape[0]
    if x <= eta_t[0]:
        return eta_v[0]
    if x >= eta_t[n - 1]:
        return eta_v[n - 1]
    lo = 0
    hi = n - 1
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if eta_t[mid] <= x:
            lo = mid
        else:
            hi = mid
    return eta_v[lo] + (x - eta_t[lo]) * (eta_v[lo + 1] - eta_v[lo]) / (
        eta_t[lo + 1] - eta_t[lo]
    )


# ---------------------------------------------------------------------------
# mechanistic model


@njit(cache=True)
def _mech_f(p, M, t, eta_t, eta_v, t_max):
    Mp = M if M > 0.0 else 0.0
    a0 = abs(p[0])
    b = abs(p[1])
    kap = abs(p[2])
    K = p[3]
    pd = abs(p[4])
    at = a0 * np.exp(-pd * t / t_max)
    growth = at * Mp * (1.0 - Mp / K)
    external = _eta_at(eta_t, eta_v, t)
    suppression = b * Mp * Mp
    feedback = kap * Mp * np.log1p(Mp)
    return growth + external - suppression + feedback


@njit(cache=True)
def _mech_partials(p, M, t, t_max):
    # df/dM and df/dp at one stage point; eta contributes to neither
    Mp = M if M > 0.0 else 0.0
    mask = 1.0 if M > 0.0 else 0.0
    a0 = abs(p[0])
    b = abs(p[1])
    kap = abs(p[2])
    K = p[3]
    pd = abs(p[4])
    s0 = np.sign(p[0])
    s1 = np.sign(p[1])
    s2 = np.sign(p[2])
    s4 = np.sign(p[4])
    E = np.exp(-pd * t / t_max)
    at = a0 * E
    l1p = np.log1p(Mp)
    dfdM = mask * (
        at * (1.0 - 2.0 * Mp / K) - 2.0 * b * Mp + kap * (l1p + Mp / (1.0 + Mp))
    )
    gshape = Mp * (1.0 - Mp / K)
    dp0 = s0 * E * gshape
    dp1 = -s1 * Mp * Mp
    dp2 = s2 * Mp * l1p
    dp3 = at * Mp * Mp / (K * K)
    dp4 = s4 * (-t / t_max) * at * gshape
    return dfdM, dp0, dp1, dp2, dp3, dp4


@njit(cache=True)
def mech_forward(p, grid, S, eta_t, eta_v, t_max, M0):
    n = grid.shape[0]
    Y = np.zeros(n)
    U = np.zeros((n - 1, S, 4))
    y = M0 if M0 > 0.0 else 0.0
    Y[0] = y
    for i in range(n - 1):
        h = (grid[i + 1] - grid[i]) / S
        for s in range(S):
            t = grid[i] + s * h
            U[i, s, 0] = y
            k1 = _mech_f(p, y, t, eta_t, eta_v, t_max)
            u2 = y + 0.5 * h * k1
            U[i, s, 1] = u2
            k2 = _mech_f(p, u2, t + 0.5 * h, eta_t, eta_v, t_max)
            u3 = y + 0.5 * h * k2
            U[i, s, 2] = u3
            k3 = _mech_f(p, u3, t + 0.5 * h, eta_t, eta_v, t_max)
            u4 = y + h * k3
            U[i, s, 3] = u4
            k4 = _mech_f(p, u4, t + h, eta_t, eta_v, t_max)
            y = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            if not np.isfinite(y):
                return Y, U, False, t
            if y < 0.0:
                y = 0.0
        Y[i + 1] = y
    return Y, U, True, 0.0


@njit(cache=True)
def mech_adjoint(p, grid, S, eta_t, eta_v, t_max, Y, U, dY):
    n = grid.shape[0]
    pbar = np.zeros(5)
    lam = dY[n - 1]
    for i in range(n - 2, -1, -1):
        h = (grid[i + 1] - grid[i]) / S
        for s in range(S - 1, -1, -1):
            t = grid[i] + s * h
            y_out = Y[i + 1] if s == S - 1 else U[i, s + 1, 0]
            g = lam if y_out > 0.0 else 0.0
            t2 = t + 0.5 * h
            t4 = t + h

            a4, q0, q1, q2, q3, q4 = _mech_partials(p, U[i, s, 3], t4, t_max)
            kb4 = g * (h / 6.0)
            ub4 = kb4 * a4
            pbar[0] += kb4 * q0
            pbar[1] += kb4 * q1
            pbar[2] += kb4 * q2
            pbar[3] += kb4 * q3
            pbar[4] += kb4 * q4

            a3, q0, q1, q2, q3, q4 = _mech_partials(p, U[i, s, 2], t2, t_max)
            kb3 = g * (h / 3.0) + ub4 * h
            ub3 = kb3 * a3
            pbar[0] += kb3 * q0
            pbar[1] += kb3 * q1
            pbar[2] += kb3 * q2
            pbar[3] += kb3 * q3
            pbar[4] += kb3 * q4

            a2, q0, q1, q2, q3, q4 = _mech_partials(p, U[i, s, 1], t2, t_max)
            kb2 = g * (h / 3.0) + ub3 * (0.5 * h)
            ub2 = kb2 * a2
            pbar[0] += kb2 * q0
            pbar[1] += kb2 * q1
            pbar[2] += kb2 * q2
            pbar[3] += kb2 * q3
            pbar[4] += kb2 * q4

            a1, q0, q1, q2, q3, q4 = _mech_partials(p, U[i, s, 0], t, t_max)
            kb1 = g * (h / 6.0) + ub2 * (0.5 * h)
            ub1 = kb1 * a1
            pbar[0] += kb1 * q0
            pbar[1] += kb1 * q1
            pbar[2] += kb1 * q2
            pbar[3] += kb1 * q3
            pbar[4] += kb1 * q4

            lam = g + ub1 + ub2 + ub3 + ub4
        lam = lam + dY[i]
    return pbar


# ---------------------------------------------------------------------------
# hybrid model: 4 rectified rate constants + (1,10,1) network
# q: [alpha0, beta, K, p_decay, w1[4:14], b1[14:24], w2[24:34], b2[34]]


@njit(cache=True)
def _ude_f(q, M, t, eta_t, eta_v, t_max, max_eta):
    hi = 5.0 * max_eta
    Mc = M
    if Mc < 0.0:
        Mc = 0.0
    elif Mc > hi:
        Mc = hi
    a0 = abs(q[0])
    b = abs(q[1])
    K = abs(q[2])
    pd = abs(q[3])
    at = a0 * np.exp(-pd * t / t_max)
    growth = at * Mc * (1.0 - Mc / K)
    external = _eta_at(eta_t, eta_v, t)
    suppression = b * Mc * Mc
    m = Mc / max_eta
    raw = q[34]
    for j in range(10):
        pre = q[4 + j] * m + q[14 + j]
        if pre > 0.0:
            raw += q[24 + j] * pre
    if not np.isfinite(raw):
        return np.nan  # diverged network output is an error, never clamped
    learned = raw
    if learned < -1000.0:
        learned = -1000.0
    elif learned > 1000.0:
        learned = 1000.0
    return growth + external - suppression + learned


@njit(cache=True)
def _ude_acc(q, M, t, t_max, max_eta, kb, qbar):
    # accumulate kb * df/dq into qbar, return df/dM
    hi = 5.0 * max_eta
    mask_c = 1.0 if (M > 0.0 and M < hi) else 0.0
    Mc = M
    if Mc < 0.0:
        Mc = 0.0
    elif Mc > hi:
        Mc = hi
    a0 = abs(q[0])
    b = abs(q[1])
    K = abs(q[2])
    pd = abs(q[3])
    s0 = np.sign(q[0])
    s1 = np.sign(q[1])
    s2 = np.sign(q[2])
    s3 = np.sign(q[3])
    E = np.exp(-pd * t / t_max)
    at = a0 * E
    m = Mc / max_eta
    raw = q[34]
    dnn_dm = 0.0
    for j in range(10):
        pre = q[4 + j] * m + q[14 + j]
        if pre > 0.0:
            raw += q[24 + j] * pre
            dnn_dm += q[24 + j] * q[4 + j]
    mask_out = 1.0 if (raw > -1000.0 and raw < 1000.0) else 0.0
    gshape = Mc * (1.0 - Mc / K)
    dfdM = mask_c * (
        at * (1.0 - 2.0 * Mc / K) - 2.0 * b * Mc + mask_out * dnn_dm / max_eta
    )
    qbar[0] += kb * (s0 * E * gshape)
    qbar[1] += kb * (-s1 * Mc * Mc)
    qbar[2] += kb * (s2 * at * Mc * Mc / (K * K))
    qbar[3] += kb * (s3 * (-t / t_max) * at * gshape)
    if mask_out == 1.0:
        qbar[34] += kb
        for j in range(10):
            pre = q[4 + j] * m + q[14 + j]
            if pre > 0.0:
                qbar[24 + j] += kb * pre
                qbar[4 + j] += kb * q[24 + j] * m
                qbar[14 + j] += kb * q[24 + j]
    return dfdM


@njit(cache=True)
def ude_forward(q, grid, S, eta_t, eta_v, t_max, max_eta, M0):
    n = grid.shape[0]
    Y = np.zeros(n)
    U = np.zeros((n - 1, S, 4))
    y = M0 if M0 > 0.0 else 0.0
    Y[0] = y
    for i in range(n - 1):
        h = (grid[i + 1] - grid[i]) / S
        for s in range(S):
            t = grid[i] + s * h
            U[i, s, 0] = y
            k1 = _ude_f(q, y, t, eta_t, eta_v, t_max, max_eta)
            u2 = y + 0.5 * h * k1
            U[i, s, 1] = u2
            k2 = _ude_f(q, u2, t + 0.5 * h, eta_t, eta_v, t_max, max_eta)
            u3 = y + 0.5 * h * k2
            U[i, s, 2] = u3
            k3 = _ude_f(q, u3, t + 0.5 * h, eta_t, eta_v, t_max, max_eta)
            u4 = y + h * k3
            U[i, s, 3] = u4
            k4 = _ude_f(q, u4, t + h, eta_t, eta_v, t_max, max_eta)
            y = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            if not np.isfinite(y):
                return Y, U, False, t
            if y < 0.0:
                y = 0.0
        Y[i + 1] = y
    return Y, U, True, 0.0


@njit(cache=True)
def ude_adjoint(q, grid, S, eta_t, eta_v, t_max, max_eta, Y, U, dY):
    n = grid.shape[0]
    qbar = np.zeros(35)
    lam = dY[n - 1]
    for i in range(n - 2, -1, -1):
        h = (grid[i + 1] - grid[i]) / S
        for s in range(S - 1, -1, -1):
            t = grid[i] + s * h
            y_out = Y[i + 1] if s == S - 1 else U[i, s + 1, 0]
            g = lam if y_out > 0.0 else 0.0
            t2 = t + 0.5 * h
            t4 = t + h

            kb4 = g * (h / 6.0)
            a4 = _ude_acc(q, U[i, s, 3], t4, t_max, max_eta, kb4, qbar)
            ub4 = kb4 * a4
            kb3 = g * (h / 3.0) + ub4 * h
            a3 = _ude_acc(q, U[i, s, 2], t2, t_max, max_eta, kb3, qbar)
            ub3 = kb3 * a3
            kb2 = g * (h / 3.0) + ub3 * (0.5 * h)
            a2 = _ude_acc(q, U[i, s, 1], t2, t_max, max_eta, kb2, qbar)
            ub2 = kb2 * a2
            kb1 = g * (h / 6.0) + ub2 * (0.5 * h)
            a1 = _ude_acc(q, U[i, s, 0], t, t_max, max_eta, kb1, qbar)
            ub1 = kb1 * a1

            lam = g + ub1 + ub2 + ub3 + ub4
        lam = lam + dY[i]
    return qbar


# ---------------------------------------------------------------------------
# black-box model: (2,16,16,1) network of normalized state and time
# psi: W0[0:32] (16x2), b0[32:48], W1[48:304] (16x16), b1[304:320],
#      W2[320:336] (1x16), b2[336]


@njit(cache=True)
def _node_f(psi, M, t, t_data_max, max_eta, h1, h2):
    hi = 5.0 * max_eta
    Mc = M
    if Mc < 0.0:
        Mc = 0.0
    elif Mc > hi:
        Mc = hi
    x0 = Mc / max_eta
    x1 = t / t_data_max
    for j in range(16):
        pre = psi[2 * j] * x0 + psi[2 * j + 1] * x1 + psi[32 + j]
        h1[j] = pre if pre > 0.0 else 0.0
    for j in range(16):
        acc = psi[304 + j]
        base = 48 + 16 * j
        for l in range(16):
            acc += psi[base + l] * h1[l]
        h2[j] = acc if acc > 0.0 else 0.0
    raw = psi[336]
    for l in range(16):
        raw += psi[320 + l] * h2[l]
    if not np.isfinite(raw):
        return np.nan
    if raw < -1000.0:
        return -1000.0
    if raw > 1000.0:
        return 1000.0
    return raw


@njit(cache=True)
def _node_acc(psi, M, t, t_data_max, max_eta, kb, pbar, p1, a1, p2, a2):
    # accumulate kb * df/dpsi into pbar, return df/dM; p*/a* are scratch(16)
    hi = 5.0 * max_eta
    mask_c = 1.0 if (M > 0.0 and M < hi) else 0.0
    Mc = M
    if Mc < 0.0:
        Mc = 0.0
    elif Mc > hi:
        Mc = hi
    x0 = Mc / max_eta
    x1 = t / t_data_max
    for j in range(16):
        pre = psi[2 * j] * x0 + psi[2 * j + 1] * x1 + psi[32 + j]
        p1[j] = pre
        a1[j] = pre if pre > 0.0 else 0.0
    for j in range(16):
        acc = psi[304 + j]
        base = 48 + 16 * j
        for l in range(16):
            acc += psi[base + l] * a1[l]
        p2[j] = acc
        a2[j] = acc if acc > 0.0 else 0.0
    raw = psi[336]
    for l in range(16):
        raw += psi[320 + l] * a2[l]
    if not (raw > -1000.0 and raw < 1000.0):
        return 0.0  # clamp kink or saturation: nothing flows anywhere
    pbar[336] += kb
    for l in range(16):
        pbar[320 + l] += kb * a2[l]
    # delta through the second hidden layer
    dx0 = 0.0
    for l in range(16):
        acc = 0.0
        for j in range(16):
            if p2[j] > 0.0:
                acc += psi[320 + j] * psi[48 + 16 * j + l]
        if p1[l] > 0.0:
            pbar[32 + l] += kb * acc
            pbar[2 * l] += kb * acc * x0
            pbar[2 * l + 1] += kb * acc * x1
            dx0 += acc * psi[2 * l]
    for j in range(16):
        if p2[j] > 0.0:
            d2 = psi[320 + j]
            pbar[304 + j] += kb * d2
            base = 48 + 16 * j
            for l in range(16):
                pbar[base + l] += kb * d2 * a1[l]
    return mask_c * dx0 / max_eta


@njit(cache=True)
def node_forward(psi, grid, S, t_data_max, max_eta, M0):
    n = grid.shape[0]
    Y = np.zeros(n)
    U = np.zeros((n - 1, S, 4))
    h1 = np.empty(16)
    h2 = np.empty(16)
    y = M0 if M0 > 0.0 else 0.0
    Y[0] = y
    for i in range(n - 1):
        h = (grid[i + 1] - grid[i]) / S
        for s in range(S):
            t = grid[i] + s * h
            U[i, s, 0] = y
            k1 = _node_f(psi, y, t, t_data_max, max_eta, h1, h2)
            u2 = y + 0.5 * h * k1
            U[i, s, 1] = u2
            k2 = _node_f(psi, u2, t + 0.5 * h, t_data_max, max_eta, h1, h2)
            u3 = y + 0.5 * h * k2
            U[i, s, 2] = u3
            k3 = _node_f(psi, u3, t + 0.5 * h, t_data_max, max_eta, h1, h2)
            u4 = y + h * k3
            U[i, s, 3] = u4
            k4 = _node_f(psi, u4, t + h, t_data_max, max_eta, h1, h2)
            y = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            if not np.isfinite(y):
                return Y, U, False, t
            if y < 0.0:
                y = 0.0
        Y[i + 1] = y
    return Y, U, True, 0.0


@njit(cache=True)
def node_adjoint(psi, grid, S, t_data_max, max_eta, Y, U, dY):
    n = grid.shape[0]
    pbar = np.zeros(337)
    p1 = np.empty(16)
    a1 = np.empty(16)
    p2 = np.empty(16)
    a2 = np.empty(16)
    lam = dY[n - 1]
    for i in range(n - 2, -1, -1):
        h = (grid[i + 1] - grid[i]) / S
        for s in range(S - 1, -1, -1):
            t = grid[i] + s * h
            y_out = Y[i + 1] if s == S - 1 else U[i, s + 1, 0]
            g = lam if y_out > 0.0 else 0.0
            t2 = t + 0.5 * h
            t4 = t + h

            kb4 = g * (h / 6.0)
            a4 = _node_acc(psi, U[i, s, 3], t4, t_data_max, max_eta, kb4, pbar, p1, a1, p2, a2)
            ub4 = kb4 * a4
            kb3 = g * (h / 3.0) + ub4 * h
            a3 = _node_acc(psi, U[i, s, 2], t2, t_data_max, max_eta, kb3, pbar, p1, a1, p2, a2)
            ub3 = kb3 * a3
            kb2 = g * (h / 3.0) + ub3 * (0.5 * h)
            a2_ = _node_acc(psi, U[i, s, 1], t2, t_data_max, max_eta, kb2, pbar, p1, a1, p2, a2)
            ub2 = kb2 * a2_
            kb1 = g * (h / 6.0) + ub2 * (0.5 * h)
            a1_ = _node_acc(psi, U[i, s, 0], t, t_data_max, max_eta, kb1, pbar, p1, a1, p2, a2)
            ub1 = kb1 * a1_

            lam = g + ub1 + ub2 + ub3 + ub4
        lam = lam + dY[i]
    return pbar
