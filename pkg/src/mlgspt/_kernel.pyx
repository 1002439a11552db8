# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled integration kernel for the full four-dimensional system.

Dormand-Prince 5(4) with dense output and event location, mirroring the
pure-Python stepper in ``_dopri.py`` operation for operation.
"""

from libc.math cimport tanh, cosh, exp, sqrt, fabs, pow, isfinite, INFINITY
from libc.stdlib cimport malloc, realloc, free

import numpy as np
cimport numpy as cnp

cnp.import_array()

BACKEND = "cython"

DEF NDIM = 4
DEF NEV = 4

cdef double C2 = 1.0 / 5.0, C3 = 3.0 / 10.0, C4 = 4.0 / 5.0, C5 = 8.0 / 9.0
cdef double A21 = 1.0 / 5.0
cdef double A31 = 3.0 / 40.0, A32 = 9.0 / 40.0
cdef double A41 = 44.0 / 45.0, A42 = -56.0 / 15.0, A43 = 32.0 / 9.0
cdef double A51 = 19372.0 / 6561.0, A52 = -25360.0 / 2187.0, A53 = 64448.0 / 6561.0, A54 = -212.0 / 729.0
cdef double A61 = 9017.0 / 3168.0, A62 = -355.0 / 33.0, A63 = 46732.0 / 5247.0, A64 = 49.0 / 176.0, A65 = -5103.0 / 18656.0
cdef double A71 = 35.0 / 384.0, A73 = 500.0 / 1113.0, A74 = 125.0 / 192.0, A75 = -2187.0 / 6784.0, A76 = 11.0 / 84.0
cdef double E1 = 71.0 / 57600.0, E3 = -71.0 / 16695.0, E4 = 71.0 / 1920.0
cdef double E5 = -17253.0 / 339200.0, E6 = 22.0 / 525.0, E7 = -1.0 / 40.0
cdef double D1 = -12715105075.0 / 11282082432.0, D3 = 87487479700.0 / 32700410799.0
cdef double D4 = -10690763975.0 / 1880347072.0, D5 = 701980252875.0 / 199316789632.0
cdef double D6 = -1453857185.0 / 822651844.0, D7 = 69997945.0 / 29380423.0

cdef double SAFETY = 0.9, FAC_MIN = 0.2, FAC_MAX = 10.0, EVENT_TTOL = 1e-9

cdef enum:
    OK = 0
    UNDERFLOW = 1
    NONFINITE = 2
    MAXSTEPS = 3

cdef enum:
    EV_DERIV = 0
    EV_LEVEL = 1
    EV_FUNC = 2


cdef struct Par:
    double C1, C2, I1, I2, phi1, phi2, VCa, VK, VL, Vsyn, th_s, sg_s
    double K1, K2, K3, K4, gCa, gK, gL, gsyn, beta


cdef struct Ev:
    int kind
    int etype
    int idx
    double val
    int direction


cdef inline void rhs(const Par* p, const double* y, double* out) nogil:
    cdef double V1 = y[0], w1 = y[1], V2 = y[2], w2 = y[3]
    cdef double m1 = 0.5 * (1.0 + tanh((V1 - p.K1) / p.K2))
    cdef double m2 = 0.5 * (1.0 + tanh((V2 - p.K1) / p.K2))
    cdef double a2 = 1.0 / (1.0 + exp(-(V2 - p.th_s) / p.sg_s))
    cdef double s2 = a2 / (a2 + p.beta)
    out[0] = (p.I1 - p.gCa * m1 * (V1 - p.VCa) - p.gK * w1 * (V1 - p.VK) - p.gL * (V1 - p.VL)
              - p.gsyn * s2 * (V1 - p.Vsyn)) / p.C1
    out[1] = p.phi1 * (0.5 * (1.0 + tanh((V1 - p.K3) / p.K4)) - w1) * cosh((V1 - p.K3) / (2.0 * p.K4))
    out[2] = (p.I2 - p.gCa * m2 * (V2 - p.VCa) - p.gK * w2 * (V2 - p.VK) - p.gL * (V2 - p.VL)) / p.C2
    out[3] = p.phi2 * (0.5 * (1.0 + tanh((V2 - p.K3) / p.K4)) - w2) * cosh((V2 - p.K3) / (2.0 * p.K4))


cdef inline double fold_fn(const Par* p, const double* y) nogil:
    cdef double V1 = y[0]
    cdef double tt = tanh((V1 - p.K1) / p.K2)
    cdef double m1 = 0.5 * (1.0 + tt)
    cdef double dm1 = 0.5 * (1.0 - tt * tt) / p.K2
    cdef double a2 = 1.0 / (1.0 + exp(-(y[2] - p.th_s) / p.sg_s))
    cdef double s2 = a2 / (a2 + p.beta)
    return -p.gCa * (dm1 * (V1 - p.VCa) + m1) - p.gK * y[1] - p.gL - p.gsyn * s2


cdef inline double dense_value(const double* y, const double* r, double th, int i) nogil:
    # r holds r2, r3, r4, r5 consecutively, NDIM each
    cdef double th1 = 1.0 - th
    return y[i] + th * (r[i] + th1 * (r[NDIM + i] + th * (r[2 * NDIM + i] + th1 * r[3 * NDIM + i])))


cdef inline double dense_deriv(const double* r, double th, int i, double h) nogil:
    return (r[i] + (1.0 - 2.0 * th) * r[NDIM + i] + th * (2.0 - 3.0 * th) * r[2 * NDIM + i]
            + 2.0 * th * (1.0 - th) * (1.0 - 2.0 * th) * r[3 * NDIM + i]) / h


cdef inline double event_value(const Par* p, const Ev* ev, const double* y, const double* r,
                               double th, double h) nogil:
    cdef double s[NDIM]
    cdef int i
    if ev.etype == EV_DERIV:
        return dense_deriv(r, th, ev.idx, h)
    if ev.etype == EV_LEVEL:
        return dense_value(y, r, th, ev.idx) - ev.val
    for i in range(NDIM):
        s[i] = dense_value(y, r, th, i)
    return fold_fn(p, s)


cdef inline bint crossed(double g0, double g1, int direction) nogil:
    if direction > 0:
        return g0 < 0.0 <= g1
    if direction < 0:
        return g0 > 0.0 >= g1
    return (g0 < 0.0 <= g1) or (g0 > 0.0 >= g1)


cdef double locate(const Par* p, const Ev* ev, const double* y, const double* r, double h,
                   double g0) nogil:
    cdef double lo = 0.0, hi = 1.0, glo = g0, mid, gm
    cdef double tol = EVENT_TTOL / fabs(h)
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        gm = event_value(p, ev, y, r, mid, h)
        if ((gm < 0.0) == (glo < 0.0)) and gm != 0.0:
            lo = mid
            glo = gm
        else:
            hi = mid
    return hi


cdef double initial_step(const Par* p, double t0, const double* y0, const double* f0,
                         double rtol, double atol, double hmax) nogil:
    cdef int i
    cdef double d0 = 0.0, d1 = 0.0, d2 = 0.0, h0, h1
    cdef double y1[NDIM]
    cdef double f1[NDIM]
    for i in range(NDIM):
        d0 += pow(y0[i] / (atol + rtol * fabs(y0[i])), 2.0)
    d0 = sqrt(d0 / NDIM)
    for i in range(NDIM):
        d1 += pow(f0[i] / (atol + rtol * fabs(y0[i])), 2.0)
    d1 = sqrt(d1 / NDIM)
    if d0 < 1e-5 or d1 < 1e-5:
        h0 = 1e-6
    else:
        h0 = 0.01 * d0 / d1
    if hmax < h0:
        h0 = hmax
    for i in range(NDIM):
        y1[i] = y0[i] + h0 * f0[i]
    rhs(p, y1, f1)
    for i in range(NDIM):
        d2 += pow((f1[i] - f0[i]) / (atol + rtol * fabs(y0[i])), 2.0)
    d2 = sqrt(d2 / NDIM) / h0
    if d1 <= 1e-15 and d2 <= 1e-15:
        h1 = h0 * 1e-3
        if h1 < 1e-6:
            h1 = 1e-6
    else:
        h1 = pow(0.01 / (d1 if d1 > d2 else d2), 0.2)
    if 100.0 * h0 < h1:
        h1 = 100.0 * h0
    if hmax < h1:
        h1 = hmax
    return h1


cdef class _Buf:
    cdef double* data
    cdef Py_ssize_t n, cap, width

    def __cinit__(self, Py_ssize_t width, Py_ssize_t cap):
        self.width = width
        self.cap = cap
        self.n = 0
        self.data = <double*> malloc(cap * width * sizeof(double))
        if self.data == NULL:
            raise MemoryError()

    def __dealloc__(self):
        free(self.data)

    cdef int push(self, const double* row) except -1:
        cdef Py_ssize_t j
        cdef double* nd
        if self.n == self.cap:
            nd = <double*> realloc(self.data, 2 * self.cap * self.width * sizeof(double))
            if nd == NULL:
                raise MemoryError()
            self.data = nd
            self.cap *= 2
        for j in range(self.width):
            self.data[self.n * self.width + j] = row[j]
        self.n += 1
        return 0

    cdef object to_array(self):
        cdef cnp.ndarray[cnp.double_t, ndim=2] out = np.empty((self.n, self.width))
        cdef Py_ssize_t i, j
        for i in range(self.n):
            for j in range(self.width):
                out[i, j] = self.data[i * self.width + j]
        return out


def run_full(y0, double t0, double t1, par, double rtol, double atol, double h0, double hmax,
             double hmin, long max_steps, bint want_extrema, int sec_idx, double sec_val,
             int sec_dir, bint want_fold, int stop_kind, long stop_count):
    cdef Par p
    pv = [float(v) for v in par]
    (p.C1, p.C2, p.I1, p.I2, p.phi1, p.phi2, p.VCa, p.VK, p.VL, p.Vsyn, p.th_s, p.sg_s,
     p.K1, p.K2, p.K3, p.K4, p.gCa, p.gK, p.gL, p.gsyn, p.beta) = pv[:21]

    cdef Ev evs[NEV]
    cdef int nev = 0
    if want_extrema:
        evs[nev].kind = 0; evs[nev].etype = EV_DERIV; evs[nev].idx = 0; evs[nev].val = 0.0; evs[nev].direction = -1
        nev += 1
        evs[nev].kind = 1; evs[nev].etype = EV_DERIV; evs[nev].idx = 0; evs[nev].val = 0.0; evs[nev].direction = 1
        nev += 1
    if sec_idx >= 0:
        evs[nev].kind = 2; evs[nev].etype = EV_LEVEL; evs[nev].idx = sec_idx; evs[nev].val = sec_val; evs[nev].direction = sec_dir
        nev += 1
    if want_fold:
        evs[nev].kind = 3; evs[nev].etype = EV_FUNC; evs[nev].idx = 0; evs[nev].val = 0.0; evs[nev].direction = 0
        nev += 1

    cdef double y[NDIM]
    cdef double yn[NDIM]
    cdef double yt[NDIM]
    cdef double k1[NDIM]
    cdef double k2[NDIM]
    cdef double k3[NDIM]
    cdef double k4[NDIM]
    cdef double k5[NDIM]
    cdef double k6[NDIM]
    cdef double k7[NDIM]
    cdef double r[4 * NDIM]
    cdef double gprev[NEV]
    cdef double gn
    cdef double row[NDIM + 1]
    cdef double erow[NDIM + 2]
    # found events within a step: time, kind, state
    cdef double ft[NEV]
    cdef int fk[NEV]
    cdef double fy[NEV][NDIM]
    cdef int nfound, a, b, tmpk
    cdef double tmpt, th
    cdef double tmpy[NDIM]

    cdef int i, j
    cdef double t = t0, h, tn, err, ei, sk, fac, yi_abs, yn_abs
    cdef long nsteps = 0, stop_counter = 0
    cdef bint rejected = False, last, finite, stop, have_r
    cdef int status = OK

    for i in range(NDIM):
        y[i] = float(y0[i])
    rhs(&p, y, k1)
    if h0 <= 0.0:
        h = initial_step(&p, t, y, k1, rtol, atol, hmax)
    else:
        h = h0 if h0 < hmax else hmax

    cdef _Buf traj = _Buf(NDIM + 1, 1024)
    cdef _Buf evbuf = _Buf(NDIM + 2, 64)
    row[0] = t
    for i in range(NDIM):
        row[i + 1] = y[i]
    traj.push(row)

    for j in range(nev):
        if evs[j].etype == EV_DERIV:
            gprev[j] = k1[evs[j].idx]
        elif evs[j].etype == EV_LEVEL:
            gprev[j] = y[evs[j].idx] - evs[j].val
        else:
            gprev[j] = fold_fn(&p, y)

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
        for i in range(NDIM):
            yt[i] = y[i] + h * A21 * k1[i]
        rhs(&p, yt, k2)
        for i in range(NDIM):
            yt[i] = y[i] + h * (A31 * k1[i] + A32 * k2[i])
        rhs(&p, yt, k3)
        for i in range(NDIM):
            yt[i] = y[i] + h * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i])
        rhs(&p, yt, k4)
        for i in range(NDIM):
            yt[i] = y[i] + h * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i])
        rhs(&p, yt, k5)
        for i in range(NDIM):
            yt[i] = y[i] + h * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i])
        rhs(&p, yt, k6)
        for i in range(NDIM):
            yn[i] = y[i] + h * (A71 * k1[i] + A73 * k3[i] + A74 * k4[i] + A75 * k5[i] + A76 * k6[i])
        tn = t + h
        rhs(&p, yn, k7)
        nsteps += 1
        err = 0.0
        finite = True
        for i in range(NDIM):
            ei = h * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i])
            yi_abs = fabs(y[i])
            yn_abs = fabs(yn[i])
            sk = atol + rtol * (yi_abs if yi_abs >= yn_abs else yn_abs)
            err += pow(ei / sk, 2.0)
            if not isfinite(yn[i]):
                finite = False
        if not finite or not isfinite(err):
            if h * 0.2 < hmin:
                status = NONFINITE
                break
            h *= 0.2
            rejected = True
            continue
        err = sqrt(err / NDIM)
        if err > 1.0:
            fac = SAFETY * pow(err, -0.2)
            if fac < FAC_MIN:
                fac = FAC_MIN
            h *= fac
            rejected = True
            continue
        stop = False
        if nev > 0:
            have_r = False
            nfound = 0
            for j in range(nev):
                if evs[j].etype == EV_DERIV:
                    gn = k7[evs[j].idx]
                elif evs[j].etype == EV_LEVEL:
                    gn = yn[evs[j].idx] - evs[j].val
                else:
                    gn = fold_fn(&p, yn)
                if crossed(gprev[j], gn, evs[j].direction):
                    if not have_r:
                        for i in range(NDIM):
                            r[i] = yn[i] - y[i]
                            r[NDIM + i] = h * k1[i] - r[i]
                            r[2 * NDIM + i] = r[i] - h * k7[i] - r[NDIM + i]
                            r[3 * NDIM + i] = h * (D1 * k1[i] + D3 * k3[i] + D4 * k4[i] + D5 * k5[i]
                                                   + D6 * k6[i] + D7 * k7[i])
                        have_r = True
                    th = locate(&p, &evs[j], y, r, h, gprev[j])
                    ft[nfound] = t + th * h
                    fk[nfound] = evs[j].kind
                    for i in range(NDIM):
                        fy[nfound][i] = dense_value(y, r, th, i)
                    nfound += 1
                gprev[j] = gn
            # stable insertion sort by time
            for a in range(1, nfound):
                b = a
                while b > 0 and ft[b - 1] > ft[b]:
                    tmpt = ft[b]; ft[b] = ft[b - 1]; ft[b - 1] = tmpt
                    tmpk = fk[b]; fk[b] = fk[b - 1]; fk[b - 1] = tmpk
                    for i in range(NDIM):
                        tmpy[i] = fy[b][i]; fy[b][i] = fy[b - 1][i]; fy[b - 1][i] = tmpy[i]
                    b -= 1
            for a in range(nfound):
                erow[0] = ft[a]
                erow[1] = fk[a]
                for i in range(NDIM):
                    erow[i + 2] = fy[a][i]
                evbuf.push(erow)
                if stop_kind >= 0 and fk[a] == stop_kind:
                    stop_counter += 1
                    if stop_counter >= stop_count:
                        stop = True
                        tn = ft[a]  # end exactly on the event
                        for i in range(NDIM):
                            yn[i] = fy[a][i]
                        break
        t = tn
        for i in range(NDIM):
            y[i] = yn[i]
            k1[i] = k7[i]
        row[0] = t
        for i in range(NDIM):
            row[i + 1] = y[i]
        traj.push(row)
        if stop or last:
            break
        if err == 0.0:
            fac = FAC_MAX
        else:
            fac = SAFETY * pow(err, -0.2)
            if fac < FAC_MIN:
                fac = FAC_MIN
            if fac > FAC_MAX:
                fac = FAC_MAX
        if rejected and fac > 1.0:
            fac = 1.0
        rejected = False
        h = h * fac
        if h > hmax:
            h = hmax

    tr = traj.to_array()
    ev = evbuf.to_array()
    return (np.ascontiguousarray(tr[:, 0]), np.ascontiguousarray(tr[:, 1:]),
            np.ascontiguousarray(ev[:, 0]), ev[:, 1].astype(np.int64),
            np.ascontiguousarray(ev[:, 2:]), status)
