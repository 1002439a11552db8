"""Pure-Python Dormand-Prince 5(4) stepper with dense output and event location.

States are plain Python lists; for the small systems integrated here this is
faster than numpy arrays.  The compiled kernel in ``_kernel.pyx`` mirrors this
routine operation for operation for the full four-dimensional system.
"""

from __future__ import annotations

import math

# Dormand-Prince tableau
C2, C3, C4, C5 = 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0
A21 = 1.0 / 5.0
A31, A32 = 3.0 / 40.0, 9.0 / 40.0
A41, A42, A43 = 44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0
A51, A52, A53, A54 = 19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0
A61, A62, A63, A64, A65 = 9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0
A71, A73, A74, A75, A76 = 35.0 / 384.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0
E1, E3, E4, E5, E6, E7 = (71.0 / 57600.0, -71.0 / 16695.0, 71.0 / 1920.0,
                          -17253.0 / 339200.0, 22.0 / 525.0, -1.0 / 40.0)
D1, D3, D4, D5, D6, D7 = (-12715105075.0 / 11282082432.0, 87487479700.0 / 32700410799.0,
                          -10690763975.0 / 1880347072.0, 701980252875.0 / 199316789632.0,
                          -1453857185.0 / 822651844.0, 69997945.0 / 29380423.0)

SAFETY = 0.9
FAC_MIN = 0.2
FAC_MAX = 10.0
EVENT_TTOL = 1e-9

# status codes shared with the compiled kernel
OK, UNDERFLOW, NONFINITE, MAXSTEPS = 0, 1, 2, 3

# event types
EV_DERIV, EV_LEVEL, EV_FUNC = 0, 1, 2


def dense_coeffs(y, yn, k1, k3, k4, k5, k6, k7, h):
    n = len(y)
    r2 = [0.0] * n
    r3 = [0.0] * n
    r4 = [0.0] * n
    r5 = [0.0] * n
    for i in range(n):
        yd = yn[i] - y[i]
        bs = h * k1[i] - yd
        r2[i] = yd
        r3[i] = bs
        r4[i] = yd - h * k7[i] - bs
        r5[i] = h * (D1 * k1[i] + D3 * k3[i] + D4 * k4[i] + D5 * k5[i] + D6 * k6[i] + D7 * k7[i])
    return r2, r3, r4, r5


def dense_value(y, r, th, i):
    r2, r3, r4, r5 = r
    th1 = 1.0 - th
    return y[i] + th * (r2[i] + th1 * (r3[i] + th * (r4[i] + th1 * r5[i])))


def dense_state(y, r, th):
    return [dense_value(y, r, th, i) for i in range(len(y))]


def dense_deriv(r, th, i, h):
    r2, r3, r4, r5 = r
    return (r2[i] + (1.0 - 2.0 * th) * r3[i] + th * (2.0 - 3.0 * th) * r4[i]
            + 2.0 * th * (1.0 - th) * (1.0 - 2.0 * th) * r5[i]) / h


def _event_value(ev, y, r, th, h):
    kind, etype, idx, val, direction, fn = ev
    if etype == EV_DERIV:
        return dense_deriv(r, th, idx, h)
    if etype == EV_LEVEL:
        return dense_value(y, r, th, idx) - val
    return fn(dense_state(y, r, th))


def _crossed(g0, g1, direction):
    if direction > 0:
        return g0 < 0.0 <= g1
    if direction < 0:
        return g0 > 0.0 >= g1
    return (g0 < 0.0 <= g1) or (g0 > 0.0 >= g1)


def _locate(ev, y, r, h, g0, g1):
    """Bisection on the dense output to time accuracy EVENT_TTOL."""
    lo, hi = 0.0, 1.0
    glo = g0
    tol = EVENT_TTOL / abs(h)
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        gm = _event_value(ev, y, r, mid, h)
        if (gm < 0.0) == (glo < 0.0) and gm != 0.0:
            lo, glo = mid, gm
        else:
            hi = mid
    return hi


def initial_step(fun, t0, y0, f0, rtol, atol, hmax):
    n = len(y0)
    d0 = math.sqrt(sum((y0[i] / (atol + rtol * abs(y0[i]))) ** 2 for i in range(n)) / n)
    d1 = math.sqrt(sum((f0[i] / (atol + rtol * abs(y0[i]))) ** 2 for i in range(n)) / n)
    h0 = 1e-6 if (d0 < 1e-5 or d1 < 1e-5) else 0.01 * d0 / d1
    h0 = min(h0, hmax)
    y1 = [y0[i] + h0 * f0[i] for i in range(n)]
    f1 = fun(t0 + h0, y1)
    d2 = math.sqrt(sum(((f1[i] - f0[i]) / (atol + rtol * abs(y0[i]))) ** 2 for i in range(n)) / n) / h0
    if d1 <= 1e-15 and d2 <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** 0.2
    return min(100.0 * h0, h1, hmax)


def dopri5(fun, t0, y0, t1, rtol=1e-9, atol=1e-9, h0=0.0, hmax=math.inf, hmin=1e-12,
           max_steps=10_000_000, events=(), stop_on=None):
    """Integrate ``y' = fun(t, y)`` from t0 to t1 (t1 > t0).

    ``events`` is a sequence of ``(kind, etype, idx, val, direction, fn)``.
    ``stop_on`` is a callable ``(kind, t, y) -> bool`` checked after each
    located event; returning True ends the integration at the event.

    Returns ``(ts, ys, ev_list, status)`` where ``ev_list`` holds
    ``(t, kind, state)`` tuples.
    """
    n = len(y0)
    t = float(t0)
    y = [float(v) for v in y0]
    k1 = list(fun(t, y))
    if h0 <= 0.0:
        h = initial_step(fun, t, y, k1, rtol, atol, hmax)
    else:
        h = min(h0, hmax)
    ts = [t]
    ys = [list(y)]
    evs = []
    gprev = None
    if events:
        gprev = []
        for ev in events:
            if ev[1] == EV_DERIV:
                gprev.append(k1[ev[2]])
            elif ev[1] == EV_LEVEL:
                gprev.append(y[ev[2]] - ev[3])
            else:
                gprev.append(ev[5](y))
    status = OK
    nsteps = 0
    rejected = False
    while t < t1:
        if nsteps >= max_steps:
            status = MAXSTEPS
            break
        if h < hmin:
            status = UNDERFLOW
            break
        last = False
        if t + h >= t1:
            h = t1 - t
            last = True
        yt = [y[i] + h * A21 * k1[i] for i in range(n)]
        k2 = fun(t + C2 * h, yt)
        yt = [y[i] + h * (A31 * k1[i] + A32 * k2[i]) for i in range(n)]
        k3 = fun(t + C3 * h, yt)
        yt = [y[i] + h * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i]) for i in range(n)]
        k4 = fun(t + C4 * h, yt)
        yt = [y[i] + h * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i]) for i in range(n)]
        k5 = fun(t + C5 * h, yt)
        yt = [y[i] + h * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i])
              for i in range(n)]
        k6 = fun(t + h, yt)
        yn = [y[i] + h * (A71 * k1[i] + A73 * k3[i] + A74 * k4[i] + A75 * k5[i] + A76 * k6[i])
              for i in range(n)]
        tn = t + h
        k7 = fun(tn, yn)
        nsteps += 1
        err = 0.0
        finite = True
        for i in range(n):
            ei = h * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i])
            sk = atol + rtol * max(abs(y[i]), abs(yn[i]))
            err += (ei / sk) ** 2
            if not math.isfinite(yn[i]):
                finite = False
        if not finite or not math.isfinite(err):
            if h * 0.2 < hmin:
                status = NONFINITE
                break
            h *= 0.2
            rejected = True
            continue
        err = math.sqrt(err / n)
        if err > 1.0:
            fac = max(FAC_MIN, SAFETY * err ** -0.2)
            h *= fac
            rejected = True
            continue
        # accepted
        stop = False
        if events:
            r = None
            found = []
            for j, ev in enumerate(events):
                if ev[1] == EV_DERIV:
                    gn = k7[ev[2]]
                elif ev[1] == EV_LEVEL:
                    gn = yn[ev[2]] - ev[3]
                else:
                    gn = ev[5](yn)
                if _crossed(gprev[j], gn, ev[4]):
                    if r is None:
                        r = dense_coeffs(y, yn, k1, k3, k4, k5, k6, k7, h)
                    th = _locate(ev, y, r, h, gprev[j], gn)
                    found.append((t + th * h, ev[0], dense_state(y, r, th)))
                gprev[j] = gn
            if found:
                found.sort(key=lambda e: e[0])
                for e in found:
                    evs.append(e)
                    if stop_on is not None and stop_on(e[1], e[0], e[2]):
                        stop = True
                        tn, yn = e[0], list(e[2])  # end exactly on the event
                        break
        t = tn
        y = yn
        k1 = k7
        ts.append(t)
        ys.append(list(y))
        if stop or last:
            break
        if err == 0.0:
            fac = FAC_MAX
        else:
            fac = min(FAC_MAX, max(FAC_MIN, SAFETY * err ** -0.2))
        if rejected:
            fac = min(fac, 1.0)
        rejected = False
        h = min(h * fac, hmax)
    return ts, ys, evs, status
