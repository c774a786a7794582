"""Fixed-step RK4 integrator for the feeder, switched or averaged.

State layout: ``x = [i_1..i_n, v_1..v_n, e_1..e_n]`` where ``e`` is the
design state (RC-leg capacitor voltage or shunt-capacitor node voltage) and
is absent when ``design`` has none.
"""

import numpy as np
from numba import njit

DESIGN_NONE = 0
DESIGN_SHUNT_R = 1
DESIGN_RC = 2
DESIGN_CS = 3

LINE_SWITCHED = 0
LINE_PHYSICAL = 1
LINE_PAPER = 2


@njit(cache=True)
def _node_voltages(x, c, n, Vg, R, design, Rf, M, W, u):
    # u = Vg - R M (c*i), with the RC legs folded in through W
    if design == DESIGN_CS:
        if R == 0.0:
            for k in range(n):
                u[k] = Vg
        else:
            for k in range(n):
                u[k] = x[2 * n + k]
        return
    tmp = np.empty(n)
    for j in range(n):
        acc = 0.0
        for m in range(n):
            acc += M[j, m] * c[m] * x[m]
        tmp[j] = Vg - R * acc
        if design == DESIGN_RC:
            acc2 = 0.0
            for m in range(n):
                acc2 += M[j, m] * x[2 * n + m]
            tmp[j] += (R / Rf) * acc2
    if design == DESIGN_RC:
        # (I + (R/Rf) M) u = Vg - R M (c*i) + (R/Rf) M vf
        for j in range(n):
            acc = 0.0
            for m in range(n):
                acc += W[j, m] * tmp[m]
            u[j] = acc
    else:
        for j in range(n):
            u[j] = tmp[j]


@njit(cache=True)
def _rhs(x, s, line_mode, n, Vg, R, L, C, P, Vmin, Vmax, design, Rs, Rf, Cf, Cs, M, W, dx, u, il):
    c = np.empty(n)
    for k in range(n):
        c[k] = 1.0 if line_mode == LINE_PAPER else s[k]
    _node_voltages(x, c, n, Vg, R, design, Rf, M, W, u)
    for k in range(n):
        i = x[k]
        v = x[n + k]
        if v >= Vmin[k] and v <= Vmax[k]:
            il[k] = P[k] / v
        else:
            il[k] = 0.0
        dx[k] = (s[k] * u[k] - v) / L[k]
        out = i - il[k]
        if design == DESIGN_SHUNT_R:
            out -= v / Rs
        dx[n + k] = out / C[k]
    if design == DESIGN_RC:
        tau = Rf * Cf
        for k in range(n):
            dx[2 * n + k] = (u[k] - x[2 * n + k]) / tau
    elif design == DESIGN_CS:
        if R == 0.0:
            for k in range(n):
                dx[2 * n + k] = 0.0
        else:
            G = 1.0 / R
            for k in range(n):
                up = Vg if k == 0 else u[k - 1]
                flow = G * (up - u[k])
                if k < n - 1:
                    flow -= G * (u[k] - u[k + 1])
                dx[2 * n + k] = (flow - c[k] * x[k]) / Cs


@njit(cache=True)
def _on_fraction(t, dt, T, D):
    # share of [t, t + dt] during which the PWM switch is in position 1
    p = np.floor(t / T + 1e-9)
    on = 0.0
    for m in range(2):
        a = (p + m) * T
        b = a + D * T
        lo = max(t, a)
        hi = min(t + dt, b)
        if hi > lo:
            on += hi - lo
    return on / dt


@njit(cache=True)
def _duty(x, d0, G, xref, n, N, out):
    for k in range(n):
        acc = d0[k]
        for j in range(N):
            acc += G[k, j] * (x[j] - xref[j])
        if acc < 0.0:
            acc = 0.0
        elif acc > 1.0:
            acc = 1.0
        out[k] = acc


@njit(cache=True)
def integrate(
    x0, switched, line_mode, n, Vg, R, L, C, P, Vmin, Vmax, T,
    design, Rs, Rf, Cf, Cs, M, W, d0, G, xref,
    dt, n_steps, record_every, bound,
):
    """Integrate and record every ``record_every`` steps.

    Returns ``(n_records, diverged, t, x, u, d, q, il)``.  In switched mode
    each converter's duty is latched at its own period boundaries from the
    state averaged over the period just finished.
    """
    N = x0.shape[0]
    n_rec_max = n_steps // record_every + 2
    rt = np.empty(n_rec_max)
    rx = np.empty((n_rec_max, N))
    ru = np.empty((n_rec_max, n))
    rd = np.empty((n_rec_max, n))
    rq = np.empty((n_rec_max, n))
    ril = np.empty((n_rec_max, n))

    x = x0.copy()
    xs = np.empty(N)
    k1 = np.empty(N)
    k2 = np.empty(N)
    k3 = np.empty(N)
    k4 = np.empty(N)
    u = np.empty(n)
    il = np.empty(n)
    s = np.empty(n)
    D = np.empty(n)
    _duty(x, d0, G, xref, n, N, D)

    acc = np.zeros((n, N))
    cnt = np.zeros(n)
    period = np.zeros(n, dtype=np.int64)

    rec = 0
    diverged = False
    for step in range(n_steps + 1):
        t = step * dt
        if switched:
            for k in range(n):
                p = int(np.floor(t / T[k] + 1e-9))
                if p != period[k]:
                    period[k] = p
                    avg = acc[k] / cnt[k] if cnt[k] > 0 else x
                    D1 = np.empty(n)
                    _duty(avg, d0, G, xref, n, N, D1)
                    D[k] = D1[k]
                    acc[k, :] = 0.0
                    cnt[k] = 0.0
                for j in range(N):
                    acc[k, j] += x[j]
                cnt[k] += 1.0
                s[k] = _on_fraction(t, dt, T[k], D[k])
        else:
            _duty(x, d0, G, xref, n, N, s)

        if step % record_every == 0 or step == n_steps:
            _rhs(x, s, line_mode, n, Vg, R, L, C, P, Vmin, Vmax, design, Rs, Rf, Cf, Cs, M, W, k1, u, il)
            rt[rec] = t
            for j in range(N):
                rx[rec, j] = x[j]
            for k in range(n):
                ru[rec, k] = u[k]
                rd[rec, k] = D[k] if switched else s[k]
                if switched:
                    ph = t / T[k] - np.floor(t / T[k] + 1e-9)
                    rq[rec, k] = 1.0 if ph < D[k] else 2.0
                else:
                    rq[rec, k] = 0.0
                ril[rec, k] = il[k]
            rec += 1
        if step == n_steps:
            break

        bad = False
        for j in range(N):
            if not np.isfinite(x[j]) or abs(x[j]) > bound:
                bad = True
        if bad:
            diverged = True
            break

        # RK4; in switched mode s is held over the step
        _rhs(x, s, line_mode, n, Vg, R, L, C, P, Vmin, Vmax, design, Rs, Rf, Cf, Cs, M, W, k1, u, il)
        for j in range(N):
            xs[j] = x[j] + 0.5 * dt * k1[j]
        if not switched:
            _duty(xs, d0, G, xref, n, N, s)
        _rhs(xs, s, line_mode, n, Vg, R, L, C, P, Vmin, Vmax, design, Rs, Rf, Cf, Cs, M, W, k2, u, il)
        for j in range(N):
            xs[j] = x[j] + 0.5 * dt * k2[j]
        if not switched:
            _duty(xs, d0, G, xref, n, N, s)
        _rhs(xs, s, line_mode, n, Vg, R, L, C, P, Vmin, Vmax, design, Rs, Rf, Cf, Cs, M, W, k3, u, il)
        for j in range(N):
            xs[j] = x[j] + dt * k3[j]
        if not switched:
            _duty(xs, d0, G, xref, n, N, s)
        _rhs(xs, s, line_mode, n, Vg, R, L, C, P, Vmin, Vmax, design, Rs, Rf, Cf, Cs, M, W, k4, u, il)
        for j in range(N):
            x[j] += dt * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]) / 6.0

    return rec, diverged, rt[:rec], rx[:rec], ru[:rec], rd[:rec], rq[:rec], ril[:rec]
