"""Pure-Python implementation of the full-system integration kernel.

Selected at import when the compiled ``_kernel`` extension is unavailable.
Both implementations share the call signature of :func:`run_full`.
"""

from __future__ import annotations

import math

import numpy as np

from . import _dopri

BACKEND = "python"

# event kind codes
PEAK, TROUGH, SECTION, FOLD = 0, 1, 2, 3


def make_full_rhs(par):
    (C1, C2, I1, I2, phi1, phi2, VCa, VK, VL, Vsyn, th_s, sg_s,
     K1, K2, K3, K4, gCa, gK, gL, gsyn, beta, _gmax, _Qt) = [float(v) for v in par]
    tanh = math.tanh
    cosh = math.cosh
    exp = math.exp

    def fun(t, y):
        V1 = y[0]
        w1 = y[1]
        V2 = y[2]
        w2 = y[3]
        m1 = 0.5 * (1.0 + tanh((V1 - K1) / K2))
        m2 = 0.5 * (1.0 + tanh((V2 - K1) / K2))
        a2 = 1.0 / (1.0 + exp(-(V2 - th_s) / sg_s))
        s2 = a2 / (a2 + beta)
        dV1 = (I1 - gCa * m1 * (V1 - VCa) - gK * w1 * (V1 - VK) - gL * (V1 - VL)
               - gsyn * s2 * (V1 - Vsyn)) / C1
        dw1 = phi1 * (0.5 * (1.0 + tanh((V1 - K3) / K4)) - w1) * cosh((V1 - K3) / (2.0 * K4))
        dV2 = (I2 - gCa * m2 * (V2 - VCa) - gK * w2 * (V2 - VK) - gL * (V2 - VL)) / C2
        dw2 = phi2 * (0.5 * (1.0 + tanh((V2 - K3) / K4)) - w2) * cosh((V2 - K3) / (2.0 * K4))
        return [dV1, dw1, dV2, dw2]

    def fold(y):
        V1 = y[0]
        tt = tanh((V1 - K1) / K2)
        m1 = 0.5 * (1.0 + tt)
        dm1 = 0.5 * (1.0 - tt * tt) / K2
        a2 = 1.0 / (1.0 + exp(-(y[2] - th_s) / sg_s))
        s2 = a2 / (a2 + beta)
        return -gCa * (dm1 * (V1 - VCa) + m1) - gK * y[1] - gL - gsyn * s2

    return fun, fold


def run_full(y0, t0, t1, par, rtol, atol, h0, hmax, hmin, max_steps,
             want_extrema, sec_idx, sec_val, sec_dir, want_fold, stop_kind, stop_count):
    fun, fold = make_full_rhs(par)
    events = []
    if want_extrema:
        events.append((PEAK, _dopri.EV_DERIV, 0, 0.0, -1, None))
        events.append((TROUGH, _dopri.EV_DERIV, 0, 0.0, 1, None))
    if sec_idx >= 0:
        events.append((SECTION, _dopri.EV_LEVEL, int(sec_idx), float(sec_val), int(sec_dir), None))
    if want_fold:
        events.append((FOLD, _dopri.EV_FUNC, 0, 0.0, 0, fold))
    stop_on = None
    if stop_kind >= 0:
        counter = [0]

        def stop_on(kind, t, y):
            if kind == stop_kind:
                counter[0] += 1
                return counter[0] >= stop_count
            return False

    ts, ys, evs, status = _dopri.dopri5(fun, t0, list(y0), t1, rtol, atol, h0, hmax, hmin,
                                        max_steps, events, stop_on)
    ev_t = np.array([e[0] for e in evs], dtype=float)
    ev_k = np.array([e[1] for e in evs], dtype=np.int64)
    ev_y = np.array([e[2] for e in evs], dtype=float).reshape(-1, 4)
    return np.array(ts), np.array(ys).reshape(-1, 4), ev_t, ev_k, ev_y, status
