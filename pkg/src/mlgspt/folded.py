"""Desingularized reduced flow, folded singularities, FSN points, CDH checks
and the funnel of a folded node.

On a fold of M_S the folded-singularity condition ``F = 0`` is affine in w2,
so the folded curve is computed as an explicit graph over V2: the fold root
V1(V2) comes from a scalar solve and w2 from ``f2 = g1 / F1V2``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from . import model
from ._dopri import dopri5
from .errors import CurveLost, Degenerate, DivisionGuard, NotACdh, NotANode
from .manifolds import fold_roots, fold_roots_many
from .model import DEFAULT, ParamSet, T_S, desing_eval, jac_desing

KINDS = ("node", "saddle", "focus", "fsn1", "fsn2", "cdh", "degenerate")
DIV_GUARD = 1e-12
AMBIGUITY_RATIO = 2.0
ETA = 1e-4


@dataclass
class FoldedPoint:
    V1: float
    V2: float
    w2: float
    lambda_w: complex
    lambda_s: complex
    kind: str
    mu: float = float("nan")
    info: dict = field(default_factory=dict)

    @property
    def xyz(self) -> np.ndarray:
        return np.array([self.V1, self.V2, self.w2])

    @property
    def w1(self) -> float:
        return float(model.graph_F1(self.V1, self.V2).F1) if not self.info.get("p") else \
            float(model.graph_F1(self.V1, self.V2, self.info["p"]).F1)


# -- folded curve -----------------------------------------------------------------------

def folded_w2(V1: float, V2: float, p: ParamSet = DEFAULT) -> float:
    """w2 solving F = 0 at a fold point (V1, V2)."""
    gr = model.graph_F1(V1, V2, p)
    if abs(gr.F1V2) < DIV_GUARD:
        raise DivisionGuard("F1V2 vanishes; F = 0 cannot be solved for w2")
    g1 = float(model.g1(V1, gr.F1, p))
    f2_needed = g1 / gr.F1V2
    m = 0.5 * (1.0 + math.tanh((V2 - p.K1) / p.K2))
    N = p.I2 - p.g_Ca * m * (V2 - p.V_Ca) - p.g_L * (V2 - p.V_L)
    return (N - f2_needed * p.C2 / T_S) / (p.g_K * (V2 - p.V_K))


def _pair(J: np.ndarray):
    """Nontrivial eigenvalue pair of a singular 3x3 matrix (closed form)."""
    tr = J[0, 0] + J[1, 1] + J[2, 2]
    c = (J[0, 0] * J[1, 1] - J[0, 1] * J[1, 0] + J[0, 0] * J[2, 2] - J[0, 2] * J[2, 0]
         + J[1, 1] * J[2, 2] - J[1, 2] * J[2, 1])
    disc = 0.25 * tr * tr - c
    if disc >= 0:
        r = math.sqrt(disc)
        big = 0.5 * tr + math.copysign(r, tr) if tr != 0 else r
        other = c / big if big != 0 else 0.5 * tr - r
        a, b = complex(big), complex(other)
    else:
        im = math.sqrt(-disc)
        a, b = complex(0.5 * tr, im), complex(0.5 * tr, -im)
    if abs(a) < abs(b):
        a, b = b, a
    return b, a, tr, c


def curve_tangent(V1, V2, w2, p: ParamSet = DEFAULT, delta=None) -> np.ndarray:
    """Unit tangent of the folded curve by implicit differentiation in V2."""
    e = desing_eval(V1, V2, w2, p, delta)
    gr = e.graph
    dV1 = -gr.F1V1V2 / gr.F1V1V1
    dw2 = -(e.J[0, 0] * dV1 + e.J[0, 1]) / e.J[0, 2]
    t = np.array([dV1, 1.0, dw2])
    return t / np.linalg.norm(t)


def classify_folded(V1, V2, w2, p: ParamSet = DEFAULT, delta: float | None = None,
                    zero_tol: float = 1e-12) -> FoldedPoint:
    """Type of the folded singularity from the nontrivial pair of J_D.

    The structural zero of J_D is the eigenvalue whose eigenvector is most
    tangent to the folded curve; the remaining pair satisfies
    ``lambda^2 - tr lambda + c = 0`` exactly because det J_D vanishes.
    """
    J = jac_desing((V1, V2, w2), p, delta)
    lw, ls, tr, c = _pair(J)
    if abs(lw) <= zero_tol and abs(ls) <= zero_tol:
        raise Degenerate("both nontrivial eigenvalues vanish")
    if abs(lw.imag) > 0:
        kind, mu = "focus", float("nan")
    elif lw.real * ls.real > 0:
        kind, mu = "node", lw.real / ls.real
    elif lw.real * ls.real < 0:
        kind, mu = "saddle", lw.real / ls.real
    else:
        kind, mu = "degenerate", 0.0
    return FoldedPoint(float(V1), float(V2), float(w2), lw, ls, kind, mu, {"c": c, "tr": tr})


def structural_zero(V1, V2, w2, p: ParamSet = DEFAULT, delta=None):
    """(eigenvalue, eigenvector) of J_D identified as the structural zero by
    maximal |cosine| with the curve tangent."""
    J = jac_desing((V1, V2, w2), p, delta)
    vals, vecs = np.linalg.eig(J)
    t = curve_tangent(V1, V2, w2, p, delta)
    cos = [abs(np.vdot(vecs[:, k], t)) / np.linalg.norm(vecs[:, k]) for k in range(3)]
    k = int(np.argmax(cos))
    return vals[k], np.real_if_close(vecs[:, k])


def folded_curve(p: ParamSet = DEFAULT, delta: float | None = None, w2_range=None,
                 which: str = "lower", V2_range=(-60.0, 55.0), step: float = 0.05) -> list:
    """Folded singularities on the ``which`` fold, sampled in V2.

    Samples with w2 outside ``w2_range`` (if given) are dropped.
    """
    lo, hi = V2_range
    n = int(round((hi - lo) / step)) + 1
    V2s = np.linspace(lo, hi, n)
    roots = fold_roots_many(V2s, p)
    out = []
    misses = 0
    for V2, r in zip(V2s, roots):
        V2 = float(V2)
        if len(r) < 2:
            misses += 1
            if misses >= 5 and out:
                raise CurveLost(f"{which} fold lost near V2={V2:.6g}")
            continue
        misses = 0
        V1 = r[-1] if which == "upper" else r[0]
        try:
            w2 = folded_w2(V1, V2, p)
        except DivisionGuard:
            continue
        if w2_range is not None and not (w2_range[0] <= w2 <= w2_range[1]):
            continue
        fp = classify_folded(V1, V2, w2, p, delta)
        fp.info["which"] = which
        out.append(fp)
    return out


def folded_point_at(V2: float, p: ParamSet = DEFAULT, which: str = "lower",
                    delta: float | None = None) -> FoldedPoint:
    r = fold_roots(V2, p)
    V1 = r[-1] if which == "upper" else r[0]
    fp = classify_folded(V1, V2, folded_w2(V1, V2, p), p, delta)
    fp.info["which"] = which
    return fp


def curve_residuals(fp: FoldedPoint, p: ParamSet = DEFAULT, delta=None):
    """(|F1V1|, |F|, |det J_D|) at a folded point."""
    e = desing_eval(fp.V1, fp.V2, fp.w2, p, delta)
    return abs(e.graph.F1V1), abs(e.F), abs(np.linalg.det(e.J))


# -- FSN --------------------------------------------------------------------------------

def fsn_quantities(fp, p: ParamSet = DEFAULT) -> dict:
    """Q, P and K1..K3; a K whose denominator is below the guard is None."""
    V1, V2, w2 = (fp.V1, fp.V2, fp.w2) if isinstance(fp, FoldedPoint) else fp
    e = desing_eval(V1, V2, w2, p)
    gr, d = e.graph, e.d
    Q = e.J[0, 0] * gr.F1V1V2 - e.J[0, 1] * gr.F1V1V1
    P = d.g2 * gr.F1V2 * d.f2w2 * gr.F1V1V1
    K1 = P / Q if abs(Q) >= DIV_GUARD else None
    K2 = gr.F1V2 * K1 if K1 is not None else None
    K3 = P / d.f2 if abs(d.f2) >= DIV_GUARD else None
    return {"Q": Q, "P": P, "K1": K1, "K2": K2, "K3": K3, "f2": d.f2, "g1": d.g1}


def fsn_condition(V1, V2, w2, p: ParamSet = DEFAULT, delta=None) -> float:
    """f2 Q - delta P; zero exactly where lambda_w vanishes."""
    delta = p.delta if delta is None else delta
    q = fsn_quantities((V1, V2, w2), p)
    return q["f2"] * q["Q"] - delta * q["P"]


def _scales(curve, p):
    qs = [fsn_quantities(fp, p) for fp in curve]
    return (max(abs(q["f2"]) for q in qs) or 1.0, max(abs(q["g1"]) for q in qs) or 1.0,
            max(abs(q["Q"]) for q in qs) or 1.0)


def find_fsn(curve: list, p: ParamSet = DEFAULT, delta: float | None = None) -> list:
    """Zeros of lambda_w along a folded curve, tagged ``fsn1`` or ``fsn2``.

    At any such zero both algebraic forms of the FSN condition hold, so the
    tag compares scale-normalised sizes instead: ``fsn1`` when f2 and g1 are
    small (the point sits near M_SS), ``fsn2`` when Q is small.  Ratios
    within ``AMBIGUITY_RATIO`` are tagged ``ambiguous`` in ``info``.
    """
    if len(curve) < 2:
        return []
    delta = p.delta if delta is None else delta
    which = curve[0].info.get("which", "lower")
    s_f2, s_g1, s_Q = _scales(curve, p)
    cvals = [fsn_condition(fp.V1, fp.V2, fp.w2, p, delta) for fp in curve]
    out = []
    for i in range(len(curve) - 1):
        if cvals[i] * cvals[i + 1] < 0:
            def g(V2):
                fp = folded_point_at(V2, p, which, delta)
                return fsn_condition(fp.V1, fp.V2, fp.w2, p, delta)
            V2 = brentq(g, curve[i].V2, curve[i + 1].V2, xtol=1e-13, rtol=1e-15)
            fp = folded_point_at(V2, p, which, delta)
            q = fsn_quantities(fp, p)
            r1 = max(abs(q["f2"]) / s_f2, abs(q["g1"]) / s_g1)
            r2 = abs(q["Q"]) / s_Q
            fp.kind = "fsn1" if r1 < r2 else "fsn2"
            fp.info.update({"score_fsn1": r1, "score_fsn2": r2,
                            "ambiguous": max(r1, r2) < AMBIGUITY_RATIO * min(r1, r2),
                            "residual": abs(q["f2"] * q["Q"] - delta * q["P"])})
            out.append(fp)
    return out


# -- CDH degeneracy -----------------------------------------------------------------------

def cdh_checks(cdh, p: ParamSet = DEFAULT, tol: float = 1e-8) -> dict:
    """Degeneracy report of a CDH in the double limit (delta = 0)."""
    V1, V2, w2 = (cdh.V1, cdh.V2, cdh.w2) if isinstance(cdh, FoldedPoint) else (
        cdh[0], cdh[2], cdh[3]) if len(cdh) == 4 else cdh
    e = desing_eval(V1, V2, w2, p, 0.0)
    gr, d = e.graph, e.d
    if abs(d.f2) > tol or abs(d.g1) > tol or abs(gr.F1V1) > tol:
        raise NotACdh(f"residuals f2={d.f2:.3g} g1={d.g1:.3g} F1V1={gr.F1V1:.3g}")
    J = e.J
    sv = np.linalg.svd(J, compute_uv=False)
    rank = int(np.sum(sv > 1e-9 * max(sv[0], 1.0)))
    n_c = J[0]
    n_f = np.array([gr.F1V1V1, gr.F1V1V2, 0.0])
    cosang = abs(n_c @ n_f) / (np.linalg.norm(n_c) * np.linalg.norm(n_f))
    angle = math.acos(min(1.0, cosang))
    FV1, FV2, Fw2 = n_c
    u0 = np.array([FV2 * Fw2 * gr.F1V1V2, -FV2 * Fw2 * gr.F1V1V1,
                   FV2 ** 2 * gr.F1V1V1 - FV1 * FV2 * gr.F1V1V2])
    v0 = u0 / np.linalg.norm(u0)
    return {
        "rank": rank,
        "nullity": 3 - rank,
        "singular_values": sv.tolist(),
        "angle": angle,
        "v0": v0.tolist(),
        "v0_dot_nf": float(abs(v0 @ n_f / np.linalg.norm(n_f))),
        "v0_in_kernel": float(np.linalg.norm(J @ v0)),
    }


# -- strong canards and the funnel ----------------------------------------------------------

def strong_canard(node: FoldedPoint, p: ParamSet = DEFAULT, delta: float | None = None,
                  arclength: float = 60.0, eta: float = ETA) -> np.ndarray:
    """Backward desingularized trajectory from the node along the strong
    eigendirection, on the attracting sheet; rows (V1, V2, w2, s) with s the
    chart arclength."""
    if node.kind != "node":
        raise NotANode(f"folded point is a {node.kind}")
    J = jac_desing((node.V1, node.V2, node.w2), p, delta)
    vals, vecs = np.linalg.eig(J)
    k = int(np.argmin(np.abs(vals - node.lambda_s)))
    v = np.real(vecs[:, k])
    v /= np.linalg.norm(v)
    # attracting sheets have F1V1 < 0; step to the side where it is negative
    base = np.array([node.V1, node.V2, node.w2])
    gr_n = model.graph_F1(*(base + eta * v)[:2], p).F1V1
    if gr_n > 0:
        v = -v
    y0 = base + eta * v

    def fun(t, y):
        e = desing_eval(y[0], y[1], y[2], p, delta)
        # backward time; normalise speed to chart arclength in (V1, V2)
        sp = math.hypot(e.F, e.G) or 1.0
        return [-e.F / sp, -e.G / sp, -e.H / sp]

    ts, ys, _, _ = dopri5(fun, 0.0, list(y0), arclength, rtol=1e-9, atol=1e-9, hmax=0.5)
    ys = np.array(ys)
    ts = np.array(ts)
    out = np.column_stack([np.vstack([base, ys]), np.concatenate([[0.0], ts + eta])])
    return out


@dataclass
class FunnelSurface:
    node_samples: list
    canard_segments: list
    fold_boundary: list
    which: str = "upper"

    def to_json(self) -> dict:
        return {
            "which": self.which,
            "nodes": [[fp.V1, fp.V2, fp.w2, fp.lambda_w.real, fp.lambda_s.real]
                      for fp in self.node_samples],
            "canards": [seg.tolist() for seg in self.canard_segments],
            "fold": [seg.tolist() for seg in self.fold_boundary],
        }


def build_funnel(p: ParamSet = DEFAULT, delta: float | None = None, which: str = "upper",
                 n_nodes: int = 200, arclength: float = 60.0, V2_range=(-60.0, 55.0)) -> FunnelSurface:
    """Sample the folded-node segment and attach a strong canard to each node."""
    curve = folded_curve(p, delta, None, which, V2_range, step=0.05)
    nodes = [fp for fp in curve if fp.kind == "node"]
    if not nodes:
        raise NotANode("no folded nodes on the curve")
    # longest contiguous run of nodes
    runs, prev = [], None
    for fp in curve:
        if fp.kind == "node":
            if prev is None or prev.kind != "node":
                runs.append([])
            runs[-1].append(fp)
        prev = fp
    run = max(runs, key=len)
    V2a, V2b = run[0].V2, run[-1].V2
    samples = [folded_point_at(float(v), p, which, delta) for v in np.linspace(V2a, V2b, n_nodes)]
    samples = [fp for fp in samples if fp.kind == "node"]
    canards = [strong_canard(fp, p, delta, arclength) for fp in samples]
    folds = []
    for fp, seg in zip(samples, canards):
        if _sliding_side(fp, p, which, delta) > 0:
            far = max(float(V2_range[1]), float(seg[-1, 1]))
        else:
            far = min(float(V2_range[0]), float(seg[-1, 1]))
        folds.append(_fold_segment(fp, far, p, which))
    return FunnelSurface(samples, canards, folds, which)


def _sliding_side(fp, p, which, delta, dV2=0.5):
    """+1 or -1: the side (in V2) of the node where the reduced flow on the
    fold points into the attracting sheet, so trajectories slide to the node."""
    V1s = fold_roots(fp.V2 + dV2, p)
    V1f = V1s[-1] if which == "upper" else V1s[0]
    into = 1.0 if which == "upper" else -1.0  # attracting sheet beyond the fold
    F = desing_eval(V1f, fp.V2 + dV2, fp.w2, p, delta).F
    return 1 if F * into > 0 else -1


def _fold_segment(fp, V2_far, p, which, n=50):
    """Fold curve in the (V1, V2) chart from ``V2_far`` back to the node."""
    V2s = np.linspace(V2_far, fp.V2, n)
    out = []
    for V2, r in zip(V2s, fold_roots_many(V2s, p)):
        if len(r) >= 2:
            out.append((r[-1] if which == "upper" else r[0], float(V2)))
    return np.array(out)


def _polygon(canard, fold):
    # node -> strong canard -> corner at the V2 cap -> fold back to the node
    corner = [canard[-1, 0], fold[0, 1]]
    return np.vstack([canard[:, :2], corner, fold])


def _inside(poly, x, y):
    """Even-odd ray casting."""
    inside = False
    n = len(poly)
    for i in range(n):
        x1, y1 = poly[i]
        x2, y2 = poly[(i + 1) % n]
        if (y1 > y) != (y2 > y):
            xc = x1 + (y - y1) * (x2 - x1) / (y2 - y1)
            if xc > x:
                inside = not inside
    return inside


def funnel_membership(state, funnel: FunnelSurface) -> str:
    """``inside`` or ``outside`` for a state (V1, w1, V2, w2) or (V1, V2, w2).

    The two node samples bracketing the state's w2 are used; the state is
    inside if the linear interpolation (in w2) of their region memberships
    is at least one half.
    """
    s = np.asarray(state, dtype=float)
    V1, V2, w2 = (s[0], s[2], s[3]) if len(s) == 4 else s
    ws = np.array([fp.w2 for fp in funnel.node_samples])
    order = np.argsort(ws)
    ws = ws[order]
    if w2 < ws[0] or w2 > ws[-1]:
        return "outside"
    k = int(np.searchsorted(ws, w2))
    k0, k1 = max(0, k - 1), min(len(ws) - 1, k)
    i0, i1 = order[k0], order[k1]
    m0 = _inside(_polygon(funnel.canard_segments[i0], funnel.fold_boundary[i0]), V1, V2)
    m1 = _inside(_polygon(funnel.canard_segments[i1], funnel.fold_boundary[i1]), V1, V2)
    lam = 0.0 if ws[k1] == ws[k0] else (w2 - ws[k0]) / (ws[k1] - ws[k0])
    return "inside" if (1 - lam) * m0 + lam * m1 >= 0.5 else "outside"
