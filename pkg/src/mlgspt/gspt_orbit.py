"""Singular periodic orbits at the limits (eps, 0), (0, delta) and (0, 0).

The (V2, w2) pair performs a relaxation oscillation along the V2-nullcline
``w2 = F2(V2)``.  Its knees and landing points split one period into four
phases:

1. superslow drift along the left branch, from the star to the circle,
2. slow jump at ``w2 = w2(circle)`` to the right branch (the square),
3. superslow drift along the right branch, from the square to the triangle,
4. slow jump at ``w2 = w2(triangle)`` back to the star.

During phases 1 and 3 the (V1, w1) pair sits on a stable branch of M_SS
while one exists; where M_SS is unstable the orbit is a continuum of
(V1, w1) relaxation cycles sampled at frozen V2.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from . import model
from ._dopri import EV_FUNC, dopri5
from .errors import AmbiguousStart, CurveLost, NoClosure
from .integrate import Trajectory
from .manifolds import V1_SCAN, fold_roots, h_mss, h_mss_dV1, mss_point, mss_roots
from .model import DEFAULT, ParamSet

LIMITS = ("eps,0", "0,delta", "0,0")
N_CONTINUUM = 50
HANDOFF_TOL = 1e-6
RTOL = 1e-10
FOLD_ETA = 1e-8  # jump once F1V1 > -FOLD_ETA; folded singularities are reached only asymptotically
KNEE_OFFSET = 0.1  # mV; the V2 speed vanishes quadratically at a knee
V2_KNEE_SCAN = (-80.0, 80.0)


def parse_limit(limit) -> str:
    """Normalise ``(eps, 0)``-style spellings to one of LIMITS."""
    if isinstance(limit, (tuple, list)):
        a, b = (str(x).strip().lower() for x in limit)
    else:
        s = str(limit).lower().replace("(", "").replace(")", "").replace(" ", "")
        s = s.replace("ε", "eps").replace("δ", "delta").replace("epsilon", "eps")
        if "," in s:
            a, b = s.split(",", 1)
        else:
            table = {"eps0": ("eps", "0"), "0delta": ("0", "delta"), "00": ("0", "0")}
            if s not in table:
                raise ValueError(f"unknown singular limit {limit!r}")
            a, b = table[s]
    key = f"{'eps' if a not in ('0', '0.0') else '0'},{'delta' if b not in ('0', '0.0') else '0'}"
    if key not in LIMITS:
        raise ValueError(f"unknown singular limit {limit!r}")
    return key


@dataclass(frozen=True)
class OrbitSeed:
    """Choice of representative where the construction is not unique.

    ``start_V2`` places the phase-1 start on lower M_SS (default: the star).
    ``phase2``/``phase4`` pick the (V1, w1) point on the last layer cycle as a
    fraction of its period; ``None`` continues the ongoing layer dynamics.
    """

    start_V2: float | None = None
    phase2: float | None = None
    phase4: float | None = None

    @classmethod
    def from_id(cls, k: int) -> "OrbitSeed":
        if k == 0:
            return cls()
        f = (k % 8) / 8.0
        return cls(phase2=f, phase4=f)


@dataclass
class Segment:
    speed: str  # fast, slow, superslow
    phase: int
    trajectory: Trajectory
    termination: str
    kind: str = "flow"  # flow, jump, manifold, continuum
    cycles: list = field(default_factory=list)


@dataclass
class SingularOrbit:
    limit: str
    segments: list
    landmarks: dict
    closure_error: float
    representatives: dict = field(default_factory=dict)

    def states(self) -> np.ndarray:
        return np.vstack([s.trajectory.states for s in self.segments])

    def phases(self) -> list:
        return [s.phase for s in self.segments]


# -- (V2, w2) skeleton ----------------------------------------------------------------------

def _F2(V2, p):
    return float(model.graph_F2(V2, p))


def _dF2(V2, p):
    return float(model.graph_F2_d(V2, p)[1])


def nullcline_landmarks(p: ParamSet = DEFAULT) -> dict:
    """Knees (circle, triangle) and landing points (square, star) of the V2-nullcline."""
    V = np.linspace(*V2_KNEE_SCAN, 3201)
    d = np.array([_dF2(v, p) for v in V])
    knees = [brentq(_dF2, V[i], V[i + 1], args=(p,), xtol=1e-13)
             for i in range(len(V) - 1) if d[i] * d[i + 1] < 0]
    if len(knees) != 2:
        raise CurveLost(f"expected two knees of the V2-nullcline, found {len(knees)}")
    ka, kb = sorted(knees)
    circle = (ka, _F2(ka, p))  # lower knee: left branch ends
    triangle = (kb, _F2(kb, p))

    def land(w, lo, hi):
        g = lambda v: _F2(v, p) - w
        grid = np.linspace(max(lo, p.V_K + 0.5), hi, 801)
        vals = [g(v) for v in grid]
        for i in range(len(grid) - 1):
            if vals[i] * vals[i + 1] < 0:
                return brentq(g, grid[i], grid[i + 1], xtol=1e-13)
        raise CurveLost(f"no landing point for w2={w}")

    square = land(circle[1], kb + 1e-3, V2_KNEE_SCAN[1] + 40)
    star = land(triangle[1], V2_KNEE_SCAN[0] - 40, ka - 1e-3)
    return {"circle": circle, "triangle": triangle,
            "square": (square, circle[1]), "star": (star, triangle[1])}


def cycle_distance(V2, w2, p: ParamSet = DEFAULT, marks: dict | None = None) -> float:
    """Distance in w2 from (V2, w2) to the singular (V2, w2) relaxation cycle."""
    m = nullcline_landmarks(p) if marks is None else marks
    V2s, Vc, Vt, Vq = m["star"][0], m["circle"][0], m["triangle"][0], m["square"][0]
    best = math.inf
    if V2s - 1e-9 <= V2 <= Vc + 1e-9 or Vt - 1e-9 <= V2 <= Vq + 1e-9:
        best = abs(w2 - _F2(V2, p))
    if Vc - 1e-9 <= V2 <= Vq + 1e-9:
        best = min(best, abs(w2 - m["circle"][1]))
    if V2s - 1e-9 <= V2 <= Vt + 1e-9:
        best = min(best, abs(w2 - m["triangle"][1]))
    return best


# -- stability of M_SS in a given limit -----------------------------------------------------

def _mss_stable(x, p, eps):
    d = model.partials(*x, p)
    if d.f2V2 >= 0:
        return False
    if eps > 0:
        tr = d.f1V1 / eps + d.g1w1
        det = (d.f1V1 * d.g1w1 - d.f1w1 * d.g1V1) / eps
        return tr < 0 and det > 0
    # eps = 0: attracting sheet and stable reduced (V1, w1) flow
    gr = model.graph_F1(x[0], x[2], p)
    if gr.F1V1 >= 0:
        return False
    return (d.g1V1 + d.g1w1 * gr.F1V1) / gr.F1V1 < 0


def _loss_kind(x, p, eps):
    d = model.partials(*x, p)
    if d.f2V2 > -1e-9:
        return "fold_ss1"
    if eps > 0:
        det = (d.f1V1 * d.g1w1 - d.f1w1 * d.g1V1) / eps
        return "dhb" if det > 0 else "fold_ss2"
    gr = model.graph_F1(x[0], x[2], p)
    return "cdh" if abs(gr.F1V1) < 1e-6 else "fold_ss2"


def _track(V2, V1, p):
    for _ in range(60):
        hv = float(h_mss(V1, V2, p))
        dv = float(h_mss_dV1(V1, V2, p))
        if dv == 0 or not math.isfinite(dv):
            return None
        step = hv / dv
        V1 -= step
        if abs(step) < 1e-14 * max(1.0, abs(V1)):
            return V1
    return V1 if abs(float(h_mss(V1, V2, p))) < 1e-12 else None


def _superslow(V2a, V2b, V1a, p, eps, phase, step=0.05):
    """Follow M_SS from V2a towards V2b while stable; returns (segment, end)."""
    n = max(2, int(abs(V2b - V2a) / step) + 1)
    grid = np.linspace(V2a, V2b, n)
    grid[-1] -= math.copysign(1e-9, V2b - V2a)  # f2V2 vanishes exactly at the knee
    pts = []
    V1 = V1a
    term = "fold_ss1"
    for k, V2 in enumerate(grid):
        V1n = _track(V2, V1, p)
        x = None if V1n is None else mss_point(V1n, V2, p)
        if x is None or not _mss_stable(x, p, eps):
            if k == 0:
                return None, mss_point(V1a, V2a, p)
            lo, hi = grid[k - 1], V2
            V1lo = V1

            def ok(v):
                r = _track(v, V1lo, p)
                return r is not None and _mss_stable(mss_point(r, v, p), p, eps)

            for _ in range(80):
                mid = 0.5 * (lo + hi)
                if ok(mid):
                    lo = mid
                else:
                    hi = mid
            xe = mss_point(_track(lo, V1lo, p), lo, p)
            pts.append(xe)
            term = _loss_kind(xe, p, eps) if x is not None else "fold_ss2"
            break
        pts.append(x)
        V1 = V1n
    P = np.array(pts)
    # superslow time: dt = F2'(V2) / g2(V2, F2(V2)) dV2
    rate = np.array([_dF2(v, p) / float(model.g2(v, _F2(v, p), p)) for v in P[:, 2]])
    t = np.concatenate([[0.0], np.cumsum(np.abs(0.5 * (rate[1:] + rate[:-1]) * np.diff(P[:, 2])))])
    traj = Trajectory(t, P, [], "superslow_reduced")
    return Segment("superslow", phase, traj, term, "manifold"), P[-1]


# -- layer flows ------------------------------------------------------------------------------

def _run(fun, y0, t_max, events=(), stop=(), hmax=math.inf):
    """dopri5 wrapper that truncates at the first event whose kind is in ``stop``."""
    ts, ys, evs, status = dopri5(fun, 0.0, list(y0), t_max, rtol=RTOL, atol=RTOL, hmax=hmax,
                                 events=events, stop_on=(lambda k, t, y: k in stop))
    ts, ys = np.asarray(ts), np.asarray(ys)
    hit = next((e for e in evs if e[1] in stop), None)
    if hit is not None:
        keep = ts < hit[0]
        ts = np.append(ts[keep], hit[0])
        ys = np.vstack([ys[keep], hit[2]])
    return ts, ys, hit, status


def _slow_layer_fun(p, w2, eps):
    # scalar transcription of model.f1 / g1 / f2; this closure dominates run time
    tanh, cosh, exp = math.tanh, math.cosh, math.exp
    a1 = 1.0 / (p.g_max * eps)
    b1 = model.T_S * p.phi1
    c2 = model.T_S / p.C2

    def fun(t, y):
        V1, w1, V2 = y
        m1 = 0.5 * (1.0 + tanh((V1 - p.K1) / p.K2))
        x = -(V2 - p.theta_s) / p.sigma_s
        a = 1.0 / (1.0 + exp(x)) if x < 700.0 else 0.0
        s = a / (a + p.beta)
        dV1 = (p.I1 - p.g_Ca * m1 * (V1 - p.V_Ca) - p.g_K * w1 * (V1 - p.V_K)
               - p.g_L * (V1 - p.V_L) - p.g_syn * s * (V1 - p.V_syn)) * a1
        u = (V1 - p.K3) / p.K4
        dw1 = b1 * (0.5 * (1.0 + tanh(u)) - w1) * cosh(0.5 * u)
        m2 = 0.5 * (1.0 + tanh((V2 - p.K1) / p.K2))
        dV2 = c2 * (p.I2 - p.g_Ca * m2 * (V2 - p.V_Ca) - p.g_K * w2 * (V2 - p.V_K)
                    - p.g_L * (V2 - p.V_L))
        return [dV1, dw1, dV2]
    return fun


def _desing_fun(p, w2):
    """Reduced-layer flow (w2 frozen) in desingularized time; state (V1, V2)."""
    def fun(t, y):
        V1, V2 = y
        gr = model.graph_F1(V1, V2, p)
        ff2 = float(model.f2(V2, w2, p))
        return [gr.F1V2 * ff2 - float(model.g1(V1, gr.F1, p)), -gr.F1V1 * ff2]
    return fun


def _desing_full_fun(p, delta):
    def fun(t, y):
        e = model.desing_eval(y[0], y[1], y[2], p, delta)
        return [float(e.F), float(e.G), float(e.H)]
    return fun


def _jump(V1, V2, w2, p, up: bool):
    """Fast V1 jump at frozen (w1, V2, w2) to the opposite attracting sheet."""
    w1 = float(model.graph_F1(V1, V2, p).F1)
    g = lambda v: float(model.f1(v, w1, V2, p))
    grid = np.linspace(V1 + 1e-6, V1_SCAN[1], 4001) if up else np.linspace(V1_SCAN[0], V1 - 1e-6, 4001)
    vals = model.f1(grid, w1, V2, p)
    cand = [brentq(g, grid[i], grid[i + 1], xtol=1e-13)
            for i in np.nonzero(vals[:-1] * vals[1:] < 0)[0]]
    if not cand:
        raise CurveLost(f"no landing sheet for a jump at V1={V1:.6g}, V2={V2:.6g}")
    V1n = max(cand) if up else min(cand)
    return w1, V1n


def _state_on_ms(V1, V2, w2, p):
    return np.array([V1, float(model.graph_F1(V1, V2, p).F1), V2, w2])


def _reduced_piece(y, w2, p, stop_fn=None, t_max=1e12):
    """Flow on M_S (eps = 0) at frozen w2 until the fold or ``stop_fn`` fires.

    Returns (times, states (n, 4), reason, up) with physical slow time.
    """
    fun = _desing_fun(p, w2)
    events = [("fold", EV_FUNC, 0, 0.0, 1, lambda z: model.graph_F1(z[0], z[1], p).F1V1 + FOLD_ETA)]
    stop = ("fold",)
    if stop_fn is not None:
        events.append(("handoff", EV_FUNC, 0, 0.0, -1, stop_fn))
        stop = ("fold", "handoff")
    ts, ys, hit, status = _run(fun, y, t_max, events, stop)
    F1V1 = np.array([model.graph_F1(a, b, p).F1V1 for a, b in ys])
    tt = np.concatenate([[0.0], np.cumsum(0.5 * (-F1V1[1:] - F1V1[:-1]) * np.diff(ts))])
    states = np.array([_state_on_ms(a, b, w2, p) for a, b in ys])
    up = bool(ys[-1, 0] >= ys[max(0, len(ys) - 2), 0])
    reason = hit[1] if hit is not None else "horizon"
    return tt, states, reason, up


# -- frozen-V2 layer cycles (continuum) ---------------------------------------------------------

def _layer_cycle(V2, y0, p, eps, level=None):
    """One (V1, w1) relaxation cycle at frozen V2 (w2 on the V2-nullcline).

    Returns a 4-column Trajectory in slow time, the final state and the V1
    level used as the cycle section (reuse it to warm-start the next V2).
    """
    w2 = _F2(V2, p)
    if eps > 0:
        fun = _slow_layer_fun(p, w2, eps)
        y = [y0[0], y0[1], V2]
        if level is None:
            ts, ys, _, _ = _run(fun, y, 60.0, hmax=0.5)  # transient
            level = 0.5 * (ys[:, 0].max() + ys[:, 0].min())
            y = ys[-1]
        ev = [("up", EV_FUNC, 0, 0.0, 1, lambda z: z[0] - level)]
        _, ys1, _, _ = _run(fun, y, 200.0, ev, ("up",), hmax=0.5)
        ts2, ys2, hit, _ = _run(fun, ys1[-1], 200.0, ev, ("up",), hmax=0.5)
        if hit is None:
            raise CurveLost(f"no (V1, w1) cycle at V2={V2:.6g}")
        st = np.column_stack([ys2[:, 0], ys2[:, 1], np.full(len(ys2), V2), np.full(len(ys2), w2)])
        return Trajectory(ts2, st, [], "slow_layer"), st[-1], level
    # eps = 0: slow pieces on the sheets joined by jumps; three jumps make one cycle
    pieces_t, pieces_x = [], []
    y = [y0[0], V2]
    t0 = 0.0
    landings = 0
    while landings < 3:
        tt, xs, reason, up = _reduced_piece(y, w2, p)
        if reason != "fold":
            raise CurveLost(f"no relaxation cycle at V2={V2:.6g} (layer flow settled)")
        if landings >= 1:
            pieces_t.append(t0 + tt)
            pieces_x.append(xs)
            t0 += tt[-1]
        w1, V1n = _jump(xs[-1, 0], V2, w2, p, up)
        if landings >= 1:
            pieces_t.append(np.array([t0]))
            pieces_x.append(np.array([[V1n, w1, V2, w2]]))
        y = [V1n, V2]
        landings += 1
    ts = np.concatenate(pieces_t)
    st = np.vstack(pieces_x)
    return Trajectory(ts, st, [], "slow_reduced_layer"), st[-1], None


def _continuum(V2a, V2b, x0, p, eps, phase, n=N_CONTINUUM):
    """Layer cycles sampled at ``n`` frozen V2 values between V2a and V2b."""
    cycles = []
    y = np.array(x0, float)
    if eps > 0:
        y = y + np.array([0.5, 0.0, 0.0, 0.0])  # leave the unstable equilibrium
    else:
        y[0] = fold_roots(float(V2a), p)[0] - 0.5  # lower sheet, below its fold
    t_off = 0.0
    ts, xs = [], []
    level = None
    # the first sample sits just past the stability boundary
    V2a = V2a + math.copysign(1e-4, V2b - V2a)
    for V2 in np.linspace(V2a, V2b, n):
        cyc, end, level = _layer_cycle(V2, y, p, eps, level)
        cycles.append(cyc)
        ts.append(cyc.times - cyc.times[0] + t_off)
        xs.append(cyc.states)
        t_off = ts[-1][-1]
        y = end
    traj = Trajectory(np.concatenate(ts), np.vstack(xs), [], "continuum")
    return Segment("superslow", phase, traj, "fold_ss1", "continuum", cycles)


def _pick(cycle: Trajectory, frac):
    if frac is None:
        return cycle.states[-1]
    t = cycle.times
    tf = t[0] + (frac % 1.0) * (t[-1] - t[0])
    k = int(np.searchsorted(t, tf))
    return cycle.states[min(k, len(t) - 1)]


# -- slow transitions (phases 2 and 4) ---------------------------------------------------------

def _transition(x0, knee_V2, w2, target_V2, target_branch, p, eps, phase):
    """Slow flow at frozen w2 from the knee to the landing point.

    Returns (segments, end state).  The run hands off when V2 is within
    HANDOFF_TOL of the landing value and, if M_SS there is stable, when the
    state is within HANDOFF_TOL of it.  The V2 speed vanishes at the knee,
    so the first KNEE_OFFSET mV are drawn as a zero-time piece at constant
    (V1, w1, w2).
    """
    up_dir = 1.0 if target_V2 > knee_V2 else -1.0
    V2s = knee_V2 + up_dir * KNEE_OFFSET
    roots = mss_roots(target_V2, p)
    xt = None
    if roots:
        V1t = roots[-1] if target_branch == "upper" else roots[0]
        cand = mss_point(V1t, target_V2, p)
        if _mss_stable(cand, p, eps):
            xt = cand

    def handoff(z4):
        dv = abs(z4[2] - target_V2)
        if xt is None:
            return dv - HANDOFF_TOL
        return max(dv, float(np.max(np.abs(np.asarray(z4) - xt)))) - HANDOFF_TOL

    segs = []
    if eps > 0:
        fun = _slow_layer_fun(p, w2, eps)
        ev = [("handoff", EV_FUNC, 0, 0.0, -1, lambda z: handoff([z[0], z[1], z[2], w2]))]
        ts, ys, hit, _ = _run(fun, [x0[0], x0[1], V2s], 5000.0, ev, ("handoff",), hmax=0.5)
        if hit is None:
            raise NoClosure(f"phase {phase} never reached the landing point")
        st = np.column_stack([ys, np.full(len(ys), w2)])
        st = np.vstack([[x0[0], x0[1], knee_V2, w2], st])
        ts = np.concatenate([[ts[0]], ts])
        segs.append(Segment("slow", phase, Trajectory(ts, st, [], "slow_layer"), "handoff"))
        return segs, st[-1]
    # eps = 0: reduced layer pieces with fast jumps
    y = [x0[0], V2s]
    t0 = 0.0
    for _ in range(4000):
        tt, xs, reason, up = _reduced_piece(
            y, w2, p, stop_fn=lambda z: handoff(_state_on_ms(z[0], z[1], w2, p)))
        if not segs:
            xs = np.vstack([_state_on_ms(x0[0], knee_V2, w2, p), xs])
            tt = np.concatenate([[tt[0]], tt])
        segs.append(Segment("slow", phase, Trajectory(t0 + tt, xs, [], "slow_reduced_layer"),
                            reason))
        t0 += tt[-1]
        if reason == "handoff":
            return segs, xs[-1]
        if reason != "fold":
            raise NoClosure(f"phase {phase} stalled before the landing point")
        w1, V1n = _jump(xs[-1, 0], xs[-1, 2], w2, p, up)
        jump = np.array([xs[-1], [V1n, w1, xs[-1, 2], w2]])
        segs.append(Segment("fast", phase, Trajectory(np.array([t0, t0]), jump, [], "fast_layer"),
                            "landing", "jump"))
        y = [V1n, xs[-1, 2]]
    raise NoClosure(f"phase {phase} exceeded the segment budget")


# -- assembly -------------------------------------------------------------------------------

def _lower_mss_V1(V2, p):
    roots = mss_roots(V2, p)
    if not roots:
        raise CurveLost(f"no M_SS point at V2={V2:.6g}")
    return roots[0]


def _superslow_phase(x_start, V2_end, p, eps, phase, rep, key, seed_frac):
    """Phase 1 or 3: manifold segment, then a continuum if stability is lost."""
    segs = []
    seg, end = _superslow(x_start[2], V2_end, x_start[0], p, eps, phase)
    if seg is not None:
        segs.append(seg)
    if seg is not None and (seg.termination == "fold_ss1" or abs(end[2] - V2_end) < 1e-6):
        seg.termination = "fold_ss1"
        rep[key] = "unique (M_SS point at the knee)"
        return segs, end
    cont = _continuum(end[2], V2_end, end, p, eps, phase)
    segs.append(cont)
    rep[key] = ("continued layer dynamics" if seed_frac is None
                else f"cycle fraction {seed_frac:g}")
    x = _pick(cont.cycles[-1], seed_frac)
    return segs, np.array([x[0], x[1], V2_end, _F2(V2_end, p)])


def singular_orbit(limit, p: ParamSet = DEFAULT, seed: OrbitSeed | None = None, *,
                   eps: float | None = None, delta: float | None = None,
                   strict: bool = False, max_segments: int = 5000) -> SingularOrbit:
    """Concatenate subsystem segments into a closed singular orbit.

    ``strict`` raises AmbiguousStart when a phase-2/4 start is not unique
    instead of recording the chosen representative.
    """
    lim = parse_limit(limit)
    seed = OrbitSeed() if seed is None else seed
    marks = nullcline_landmarks(p)
    if lim == "0,delta":
        return _orbit_0_delta(p, seed, marks, p.delta if delta is None else delta, max_segments)
    e = (p.eps if eps is None else eps) if lim == "eps,0" else 0.0
    rep = {}
    V2_0 = marks["star"][0] if seed.start_V2 is None else seed.start_V2
    x0 = mss_point(_lower_mss_V1(V2_0, p), V2_0, p)
    if not _mss_stable(x0, p, e):
        raise AmbiguousStart(f"start V2={V2_0:.6g} is not on stable lower M_SS")
    segs = []
    s1, x = _superslow_phase(x0, marks["circle"][0], p, e, 1, rep, "phase2_start", seed.phase2)
    segs += s1
    if strict and rep["phase2_start"].startswith(("continued", "cycle")):
        raise AmbiguousStart("phase-2 start is a choice among a continuum of layer states")
    s2, x = _transition(x, marks["circle"][0], marks["circle"][1], marks["square"][0], "upper",
                        p, e, 2)
    segs += s2
    if segs[-1].termination != "handoff":
        raise NoClosure("phase 2 did not hand off")
    s3, x = _superslow_phase(x, marks["triangle"][0], p, e, 3, rep, "phase4_start", seed.phase4)
    segs += s3
    if strict and rep["phase4_start"].startswith(("continued", "cycle")):
        raise AmbiguousStart("phase-4 start is a choice among a continuum of layer states")
    s4, x = _transition(x, marks["triangle"][0], marks["triangle"][1], marks["star"][0], "lower",
                        p, e, 4)
    segs += s4
    if len(segs) > max_segments:
        raise NoClosure("segment budget exceeded")
    err = float(np.max(np.abs(np.asarray(x) - x0)))
    if seed.start_V2 is None and err > 10 * HANDOFF_TOL:
        raise NoClosure(f"orbit does not close: end-to-start distance {err:.3g}")
    return SingularOrbit(lim, segs, marks, err, rep)


# -- (0, delta): slow reduced flow with fast jumps -----------------------------------------------

def _phase_label(V2, w2, p, marks):
    Vc, Vt = marks["circle"][0], marks["triangle"][0]
    if V2 <= Vc:
        return 1
    if V2 >= Vt:
        return 3
    return 2 if float(model.f2(V2, w2, p)) > 0 else 4


def _orbit_0_delta(p, seed, marks, delta, max_segments, tol=1e-6):
    V2_0 = marks["star"][0] if seed.start_V2 is None else seed.start_V2
    x = mss_point(_lower_mss_V1(V2_0, p), V2_0, p)
    y = [x[0], x[2], x[3]]
    w_sec = 0.5 * (marks["circle"][1] + marks["triangle"][1])
    fun = _desing_full_fun(p, delta)

    def one_loop(y, record):
        """Flow from y until the next downward crossing of w2 = w_sec on the left."""
        segs = []
        t0 = 0.0
        for _ in range(max_segments):
            events = [("fold", EV_FUNC, 0, 0.0, 1, lambda z: model.graph_F1(z[0], z[1], p).F1V1 + FOLD_ETA),
                      ("section", EV_FUNC, 0, 0.0, -1,
                       lambda z: (z[2] - w_sec) if z[1] < marks["circle"][0] else 1.0)]
            ts, ys, hit, status = _run(fun, y, 1e5, events, ("fold", "section"), hmax=2.0)
            if hit is None:
                raise NoClosure("reduced flow ended without reaching the fold or section")
            F1V1 = np.array([model.graph_F1(a, b, p).F1V1 for a, b, _ in ys])
            tt = t0 + np.concatenate([[0.0], np.cumsum(0.5 * (-F1V1[1:] - F1V1[:-1])
                                                        * np.diff(ts))])
            st = np.array([[a, float(model.graph_F1(a, b, p).F1), b, c] for a, b, c in ys])
            if record:
                segs += _split_phases(tt, st, p, marks, hit[1])
            t0 = tt[-1]
            if hit[1] == "section" and len(ts) > 2:
                return segs, list(ys[-1])
            if hit[1] == "section":
                y = list(ys[-1])
                y[2] -= 1e-9
                continue
            up = bool(ys[-1, 0] >= ys[max(0, len(ys) - 2), 0])
            w1, V1n = _jump(ys[-1, 0], ys[-1, 1], ys[-1, 2], p, up)
            if record:
                jump = np.array([st[-1], [V1n, w1, st[-1, 2], st[-1, 3]]])
                segs.append(Segment("fast", _phase_label(st[-1, 2], st[-1, 3], p, marks),
                                    Trajectory(np.array([t0, t0]), jump, [], "fast_layer"),
                                    "landing", "jump"))
            y = [V1n, ys[-1, 1], ys[-1, 2]]
        raise NoClosure("segment budget exceeded within one loop")

    _, y = one_loop(y, False)
    for _ in range(50):
        segs, y_new = one_loop(y, True)
        err = float(np.max(np.abs(np.subtract(y_new, y))))
        if err < tol:
            return SingularOrbit("0,delta", segs, marks, err,
                                 {"phase2_start": "unique (reduced flow with delta > 0)",
                                  "phase4_start": "unique (reduced flow with delta > 0)"})
        y = y_new
    raise NoClosure(f"(0, delta) returns did not converge (last change {err:.3g})")


def _split_phases(tt, st, p, marks, reason):
    lab = np.array([_phase_label(v, w, p, marks) for v, w in st[:, 2:4]])
    out = []
    start = 0
    for k in range(1, len(lab) + 1):
        if k == len(lab) or lab[k] != lab[start]:
            end = k if k == len(lab) else k + 1
            term = reason if k == len(lab) else "phase-change"
            out.append(Segment("slow", int(lab[start]),
                               Trajectory(tt[start:end], st[start:end], [], "slow_reduced"),
                               term))
            start = k
    return out
