"""Continuation of slow-layer bifurcations and of periodic orbits.

Curves live in ``(V1, w1, V2, w2, param)``.  Every defining system contains
the three M_SS equations ``f1 = g1 = f2 = 0`` plus one condition:

* ``hopf``: trace of the (V1, w1) block of J_SL vanishes,
* ``cdh``: ``f1V1 = 0`` (M_SS meets the fold of M_S),
* ``fold_ss2``: determinant of the (V1, w1) block vanishes.

Newton corrections use a finite-difference Jacobian in scaled variables
(voltages / 100, gates unscaled, parameter / its default).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import model
from ._dopri import dopri5
from .errors import NoApproach, NoIntersection, NoSeed, ShootingDiverged, StepCollapse
from .manifolds import (BifPoint, block_det, find_cdh, find_folds_mss, find_hopf, get_branch,
                        hopf_tr, mss_branches)
from .model import DEFAULT, ParamSet

STATE_SCALE = np.array([100.0, 1.0, 100.0, 1.0])
CONTINUABLE = ("C1", "g_syn")
KINDS = ("hopf", "cdh", "fold_ss2")

H0 = 1e-2
H_MAX = 0.2
H_MIN = 1e-9
SHRINK = 0.5
GROW = 1.3
GROW_AFTER = 3
NEWTON_TOL = 1e-11
NEWTON_ITERS = 12
ASYM_SLOPE = 1e4
ASYM_DRIFT = 1e-3
ASYM_WINDOW = 10


@dataclass
class ContinuationCurve:
    param_name: str
    kind: str
    samples: list = field(default_factory=list)  # (param, state, aux)
    special_points: list = field(default_factory=list)  # (kind, data)
    step_history: list = field(default_factory=list)
    base: ParamSet = DEFAULT

    @property
    def params(self) -> np.ndarray:
        return np.array([s[0] for s in self.samples])

    @property
    def states(self) -> np.ndarray:
        return np.array([s[1] for s in self.samples]).reshape(-1, 4)

    def special(self, kind: str) -> list:
        return [d for k, d in self.special_points if k == kind]

    def asymptote(self) -> float | None:
        a = self.special("asymptote-estimate")
        return a[0]["param"] if a else None


@dataclass
class PoBranch:
    orbits: list
    end_reason: str

    def __len__(self):
        return len(self.orbits)

    def __iter__(self):
        return iter(self.orbits)


@dataclass
class PeriodicOrbit:
    anchor: np.ndarray  # (V1, w1, V2) at the V1 maximum
    w2: float
    period: float  # slow time units
    floquet: np.ndarray
    stability: str
    amplitude: float
    closure: float = 0.0


# -- defining systems -------------------------------------------------------------------------

def _with(p: ParamSet, name: str, value: float) -> ParamSet:
    return p.replace(**{name: float(value)})


def defining_system(kind: str, x, p: ParamSet) -> np.ndarray:
    """Residual of ``kind`` at state ``x = (V1, w1, V2, w2)`` (slow time units)."""
    d = model.partials(*x, p)
    extra = {
        "hopf": lambda: d.f1V1 / p.eps + d.g1w1,
        "cdh": lambda: d.f1V1,
        "fold_ss2": lambda: (d.f1V1 * d.g1w1 - d.f1w1 * d.g1V1) / p.eps,
    }[kind]()
    return np.array([d.f1, d.g1, d.f2, extra], dtype=float)


def _aux(kind, x, p):
    det = block_det(x, p)
    out = {"det": det, "tr": hopf_tr(x, p)}
    if kind == "hopf" and det > 0:
        out["frequency"] = math.sqrt(det) / model.T_S
    return out


class _Problem:
    def __init__(self, kind, pname, p):
        if pname not in CONTINUABLE:
            raise ValueError(f"cannot continue in {pname!r}; choose from {CONTINUABLE}")
        if kind not in KINDS:
            raise ValueError(f"unknown curve kind {kind!r}")
        self.kind, self.pname, self.p = kind, pname, p
        self.scale = np.append(STATE_SCALE, getattr(DEFAULT, pname))

    def unpack(self, u):
        x = u * self.scale
        return x[:4], float(x[4])

    def residual(self, u):
        x, lam = self.unpack(u)
        return defining_system(self.kind, x, _with(self.p, self.pname, lam))

    def jac(self, u):
        J = np.empty((4, 5))
        for k in range(5):
            h = 1e-7 * max(1.0, abs(u[k]))
            du = np.zeros(5)
            du[k] = h
            J[:, k] = (self.residual(u + du) - self.residual(u - du)) / (2 * h)
        return J


def _null_tangent(J, prev=None):
    if prev is None:
        t = np.linalg.svd(J)[2][-1]
    else:
        t = np.linalg.solve(np.vstack([J, prev]), np.array([0, 0, 0, 0, 1.0]))
    return t / np.linalg.norm(t)


def _correct(prob, u_pred, t):
    u = u_pred.copy()
    for _ in range(NEWTON_ITERS):
        R = prob.residual(u)
        J = prob.jac(u)
        A = np.vstack([J, t])
        b = -np.append(R, t @ (u - u_pred))
        try:
            du = np.linalg.solve(A, b)
        except np.linalg.LinAlgError:
            return None
        u = u + du
        if not np.all(np.isfinite(u)):
            return None
        if np.max(np.abs(du)) < 1e-12 and np.max(np.abs(prob.residual(u))) < NEWTON_TOL:
            return u
    R = prob.residual(u)
    return u if np.max(np.abs(R)) < NEWTON_TOL else None


def continue_curve(kind: str, seed_state, vary: str, range_, p: ParamSet = DEFAULT, *,
                   direction: int = 1, h0: float = H0, h_max: float = H_MAX,
                   max_steps: int = 4000) -> ContinuationCurve:
    """Pseudo-arclength continuation of ``kind`` from ``seed_state`` at ``p``.

    ``direction`` = +1 starts towards increasing V2.  The run ends when the
    parameter leaves ``range_``, an asymptote is detected, the Hopf
    determinant changes sign or ``max_steps`` is reached.
    """
    prob = _Problem(kind, vary, p)
    lo, hi = sorted(range_)
    u = np.append(np.asarray(seed_state, float), getattr(p, vary)) / prob.scale
    u0 = _correct(prob, u, np.eye(5)[4])  # fix the parameter for the seed
    if u0 is None:
        raise NoSeed(f"{kind} seed does not converge at {vary}={getattr(p, vary)}")
    u = u0
    t = _null_tangent(prob.jac(u))
    if np.sign(t[2]) != np.sign(direction):
        t = -t
    curve = ContinuationCurve(vary, kind, base=p)

    def record(u):
        x, lam = prob.unpack(u)
        q = _with(p, vary, lam)
        curve.samples.append((lam, x.copy(), _aux(kind, x, q)))

    record(u)
    h, ok_run = h0, 0
    for _ in range(max_steps):
        u_new = _correct(prob, u + h * t, t)
        if u_new is None:
            h *= SHRINK
            ok_run = 0
            curve.step_history.append((h, False))
            if h < H_MIN:
                curve.special_points.append(("branch-end", {"reason": "step collapse",
                                                            "param": curve.samples[-1][0]}))
                raise StepCollapse(f"{kind} continuation step collapsed at "
                                   f"{vary}={curve.samples[-1][0]:.10g}", last=curve)
            continue
        curve.step_history.append((h, True))
        t_new = _null_tangent(prob.jac(u_new), t)
        u_prev, u, t = u, u_new, t_new
        record(u)
        ok_run += 1
        if ok_run >= GROW_AFTER:
            h = min(h * GROW, h_max)
            ok_run = 0
        lam = curve.samples[-1][0]
        if kind == "hopf":
            d0, d1 = curve.samples[-2][2]["det"], curve.samples[-1][2]["det"]
            if d0 > 0 >= d1:
                try:
                    bt = locate_bt(prob.unpack(u_prev)[0], curve.samples[-2][0], vary, p)
                    curve.special_points.append(("BT", bt))
                except NoApproach:
                    curve.special_points.append(("branch-end", {"reason": "det sign change",
                                                                "param": lam}))
                curve.samples.pop()
                break
        if not lo <= lam <= hi:
            curve.samples.pop()
            curve.special_points.append(("branch-end", {"reason": "parameter range",
                                                        "param": curve.samples[-1][0]}))
            break
        slope = np.linalg.norm(t[:4]) / max(abs(t[4]), 1e-300)
        if len(curve.samples) > ASYM_WINDOW and slope > ASYM_SLOPE:
            drift = abs(lam - curve.samples[-1 - ASYM_WINDOW][0])
            if drift < ASYM_DRIFT:
                curve.special_points.append(("asymptote-estimate", {
                    "param": lam, "slope": slope, "drift": drift,
                    "V2": float(curve.samples[-1][1][2])}))
                break
    else:
        curve.special_points.append(("branch-end", {"reason": "max steps",
                                                    "param": curve.samples[-1][0]}))
    return curve


def _seed(kind, p, which):
    branches = mss_branches(p=p)
    if kind == "cdh":
        try:
            return find_cdh(p, which).state
        except NoIntersection as exc:
            raise NoSeed(str(exc)) from exc
    try:
        br = get_branch(branches, which)
    except KeyError as exc:
        raise NoSeed(f"no {which} M_SS branch") from exc
    if kind == "hopf":
        pts = find_hopf(br, p)
    else:
        pts = [b for b in find_folds_mss(br, p, branches) if b.kind == "fold_ss2"]
    if not pts:
        raise NoSeed(f"no {kind} point on the {which} branch of M_SS")
    return pts[0].state


def continue_hopf(vary: str, range_, p: ParamSet = DEFAULT, which: str = "upper",
                  **kw) -> ContinuationCurve:
    """Hopf curve of the slow layer problem in ``vary`` (C1 or g_syn)."""
    return continue_curve("hopf", _seed("hopf", p, which), vary, range_, p, **kw)


def continue_cdh(range_, p: ParamSet = DEFAULT, which: str = "upper",
                 **kw) -> ContinuationCurve:
    """CDH curve in g_syn."""
    return continue_curve("cdh", _seed("cdh", p, which), "g_syn", range_, p, **kw)


def continue_fold(vary: str, range_, p: ParamSet = DEFAULT, which: str = "lower",
                  **kw) -> ContinuationCurve:
    """fold_ss2 curve (det of the (V1, w1) block = 0)."""
    return continue_curve("fold_ss2", _seed("fold_ss2", p, which), vary, range_, p, **kw)


# -- Bogdanov-Takens -------------------------------------------------------------------------

def _bt_residual(z, vary, p):
    x, lam = z[:4], z[4]
    q = _with(p, vary, lam)
    d = model.partials(*x, q)
    return np.array([d.f1, d.g1, d.f2, d.f1V1 / q.eps + d.g1w1,
                     (d.f1V1 * d.g1w1 - d.f1w1 * d.g1V1) / q.eps])


def locate_bt(x0, lam0, vary: str, p: ParamSet = DEFAULT, tol: float = 1e-12) -> dict:
    """Newton on {f1, g1, f2, tr, det} in (V1, w1, V2, w2, param)."""
    scale = np.append(STATE_SCALE, getattr(DEFAULT, vary))
    u = np.append(np.asarray(x0, float), lam0) / scale
    for _ in range(50):
        R = _bt_residual(u * scale, vary, p)
        J = np.empty((5, 5))
        for k in range(5):
            h = 1e-7 * max(1.0, abs(u[k]))
            du = np.zeros(5)
            du[k] = h
            J[:, k] = (_bt_residual((u + du) * scale, vary, p)
                       - _bt_residual((u - du) * scale, vary, p)) / (2 * h)
        try:
            step = np.linalg.solve(J, R)
        except np.linalg.LinAlgError as exc:
            raise NoApproach("singular BT Jacobian") from exc
        u = u - step
        if not np.all(np.isfinite(u)):
            raise NoApproach("BT Newton diverged")
        if np.max(np.abs(step)) < 1e-14:
            break
    z = u * scale
    R = _bt_residual(z, vary, p)
    if np.max(np.abs(R)) > tol * 1e3:
        raise NoApproach(f"BT Newton residual {np.max(np.abs(R)):.3g}")
    q = _with(p, vary, z[4])
    J = model.jac_slow_layer(z[:4], q) / model.T_S
    return {"param": float(z[4]), "state": z[:4].copy(),
            "tr": float(J[0, 0] + J[1, 1]),
            "det": float(J[0, 0] * J[1, 1] - J[0, 1] * J[1, 0]),
            "residual": float(np.max(np.abs(R[:3])))}


def detect_bt(hopf_curve: ContinuationCurve, fold_curve: ContinuationCurve,
              max_gap: float = 0.5) -> list:
    """BT points where a Hopf curve meets a fold_ss2 curve.

    Newton is seeded at the closest pair of samples (scaled distance).
    """
    if hopf_curve.param_name != fold_curve.param_name:
        raise ValueError("curves continued in different parameters")
    vary = hopf_curve.param_name
    scale = np.append(STATE_SCALE, getattr(DEFAULT, vary))
    A = np.column_stack([hopf_curve.states, hopf_curve.params]) / scale
    B = np.column_stack([fold_curve.states, fold_curve.params]) / scale
    if len(A) == 0 or len(B) == 0:
        raise NoApproach("empty curve")
    d = np.linalg.norm(A[:, None, :] - B[None, :, :], axis=2)
    i, j = np.unravel_index(int(np.argmin(d)), d.shape)
    if d[i, j] > max_gap:
        raise NoApproach(f"closest approach {d[i, j]:.3g} exceeds {max_gap}")
    for k, dat in hopf_curve.special_points:
        if k == "BT":
            return [dat]
    z = 0.5 * (A[i] + B[j]) * scale
    return [locate_bt(z[:4], z[4], vary, hopf_curve.base)]


# -- periodic orbits of the slow layer problem ------------------------------------------------

def _layer_fun(p, w2, eps):
    def one(y):
        V1, w1, V2 = y
        return [model.f1(V1, w1, V2, p) / eps, model.g1(V1, w1, p), model.f2(V2, w2, p)]
    return one


def _flow_bundle(y0, T, p, w2, eps, dy, rtol):
    """Flow of y0 and of y0 + dy e_k (k = 0..2) integrated as one system."""
    one = _layer_fun(p, w2, eps)

    def fun(t, Y):
        out = []
        for k in range(4):
            out.extend(one(Y[3 * k:3 * k + 3]))
        return [float(v) for v in out]

    Y0 = list(y0)
    for k in range(3):
        z = list(y0)
        z[k] += dy
        Y0.extend(z)
    ts, ys, _, status = dopri5(fun, 0.0, Y0, T, rtol=rtol, atol=rtol * 1e-2, hmax=T / 20)
    if status != 0:
        raise ShootingDiverged(f"integration status {status}")
    ys = np.asarray(ys)
    return ys


def _shoot(y0, T, p, w2, eps, dy=1e-7, rtol=1e-12):
    ys = _flow_bundle(y0, T, p, w2, eps, dy, rtol)
    yT = ys[-1, :3]
    M = np.column_stack([(ys[-1, 3 * (k + 1):3 * (k + 2)] - yT) / dy for k in range(3)])
    return yT, M, ys[:, :3]


def _po_solve(V1a, z, p, eps, tol=1e-10, iters=15):
    """Newton for (w1, V2, T, w2) with V1(0) = V1a and f1(y0) = 0."""
    for _ in range(iters):
        w1, V2, T, w2 = z
        y0 = np.array([V1a, w1, V2])
        yT, M, path = _shoot(y0, T, p, w2, eps)
        f = np.array(_layer_fun(p, w2, eps)(yT), float)
        h = 1e-7
        yTw, _, _ = _shoot(y0, T, p, w2 + h, eps)
        dw = (yTw - yT) / h
        d = model.partials(V1a, w1, V2, w2, p)
        G = np.append(yT - y0, d.f1)
        J = np.zeros((4, 4))
        J[:3, 0] = M[:, 1] - np.array([0, 1, 0])
        J[:3, 1] = M[:, 2] - np.array([0, 0, 1])
        J[:3, 2] = f
        J[:3, 3] = dw
        J[3, :] = [d.f1w1, d.f1V2, 0.0, 0.0]
        try:
            step = np.linalg.solve(J, G)
        except np.linalg.LinAlgError as exc:
            raise ShootingDiverged("singular shooting Jacobian") from exc
        z = z - step
        if not np.all(np.isfinite(z)) or z[2] <= 0:
            raise ShootingDiverged("shooting Newton left the admissible region")
        if np.max(np.abs(step)) < tol:
            return z
    raise ShootingDiverged("shooting Newton did not converge")


def _orbit(V1a, z, p, eps):
    w1, V2, T, w2 = z
    y0 = np.array([V1a, w1, V2])
    yT, M, path = _shoot(y0, T, p, w2, eps)
    mu = np.linalg.eigvals(M)
    mu = mu[np.argsort(-np.abs(mu))]
    trivial = int(np.argmin(np.abs(mu - 1.0)))
    others = np.delete(mu, trivial)
    stable = bool(np.all(np.abs(others) < 1.0))
    return PeriodicOrbit(anchor=y0, w2=float(w2), period=float(T), floquet=mu,
                         stability="stable" if stable else "unstable",
                         amplitude=float(path[:, 0].max() - path[:, 0].min()),
                         closure=float(np.linalg.norm(yT - y0)))


def po_branch(hopf: BifPoint, p: ParamSet = DEFAULT, eps: float | None = None,
              w2_range=None, n_orbits: int = 20, d_amp: float = 0.05,
              amp_growth: float = 1.25) -> PoBranch:
    """Periodic orbits of the slow layer problem emanating from ``hopf``.

    Orbits are parametrised by the anchor ``V1(0) = V1_H + a`` at the V1
    maximum; ``a`` starts at ``d_amp`` mV and grows geometrically.  The
    branch is truncated (not raised) on shooting failure or when w2 leaves
    ``w2_range``; the reason is kept in ``end_reason``.
    """
    eps = p.eps if eps is None else eps
    x = np.asarray(hopf.state, float)
    J = model.jac_slow_layer(x, p, eps)
    lam, vec = np.linalg.eig(J)
    k = int(np.argmax(np.abs(lam.imag)))
    if abs(lam[k].imag) == 0:
        raise ShootingDiverged("Hopf point has no complex pair")
    omega = abs(lam[k].imag)
    v = vec[:, k] / vec[0, k]  # V1 component real and equal to 1
    out = []
    z = None
    a = d_amp
    prev = []
    reason = "n_orbits reached"
    for n in range(n_orbits):
        V1a = x[0] + a
        if z is None:
            z = np.array([x[1] + a * v[1].real, x[2] + a * v[2].real, 2 * math.pi / omega, x[3]])
        else:
            z = _extrapolate(prev, a)
        try:
            z = _po_solve(V1a, z, p, eps)
        except ShootingDiverged as exc:
            reason = f"shooting diverged: {exc}"
            break
        orb = _orbit(V1a, z, p, eps)
        if w2_range is not None and not (min(w2_range) <= orb.w2 <= max(w2_range)):
            reason = "w2 left range"
            break
        out.append(orb)
        prev.append((a, z.copy()))
        a *= amp_growth
    return PoBranch(out, reason)


def _extrapolate(prev, a):
    if len(prev) == 1:
        return prev[0][1].copy()
    (a0, z0), (a1, z1) = prev[-2], prev[-1]
    return z1 + (z1 - z0) * (a - a1) / (a1 - a0)
