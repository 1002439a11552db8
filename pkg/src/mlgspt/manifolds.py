"""Critical-manifold folds, the superslow manifold M_SS and its bifurcations.

M_SS is parametrised by V2: ``w2 = F2(V2)``, ``w1 = w_inf(V1)`` and V1 solves
the scalar equation ``h(V1, V2) = f1(V1, w_inf(V1), V2) = 0``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from . import model
from .errors import NoIntersection
from .model import DEFAULT, ParamSet

V1_SCAN = (-100.0, 150.0)
N_SCAN = 5001
V2_STEP = 0.05
CDH_GAP = 2.0

LABELS = ("stable-node", "stable-focus", "saddle", "saddle-focus", "unstable-focus",
          "unstable-node")


@dataclass
class ManifoldBranch:
    points: np.ndarray  # (n, 4) states (V1, w1, V2, w2)
    residual_norms: np.ndarray
    eigen_data: np.ndarray | None = None  # (n, 5): re l1, im l1, re l2, im l2, f2V2 (1/ms)
    labels: list | None = None
    name: str = ""

    def __len__(self):
        return len(self.points)

    @property
    def V2(self):
        return self.points[:, 2]

    @property
    def V1(self):
        return self.points[:, 0]


@dataclass
class BifPoint:
    kind: str  # hopf, fold_ss1, fold_ss2, cdh
    state: np.ndarray
    residual: float
    extra: dict = field(default_factory=dict)


# -- scalar pieces -------------------------------------------------------------------------

def h_mss(V1, V2, p: ParamSet = DEFAULT):
    """f1 on the w1-nullcline; zeros give the V1 coordinates of M_SS."""
    return model.f1(V1, model.w_inf(V1, p), V2, p)


def h_mss_dV1(V1, V2, p: ParamSet = DEFAULT):
    d = model.partials(V1, model.w_inf(V1, p), V2, 0.0, p)
    _, dw = model._w(V1, p)
    return d.f1V1 + d.f1w1 * dw


def mss_point(V1, V2, p: ParamSet = DEFAULT) -> np.ndarray:
    return np.array([V1, float(model.w_inf(V1, p)), V2, float(model.graph_F2(V2, p))])


def mss_residual(state, p: ParamSet = DEFAULT) -> float:
    V1, w1, V2, w2 = state
    return float(np.linalg.norm([model.f1(V1, w1, V2, p), model.g1(V1, w1, p),
                                 model.f2(V2, w2, p)]))


def bracket_roots(fun, V2s, grid, chunk: int = 256):
    """All sign-change roots in V1 of ``fun(V1, V2)`` for each V2.

    ``fun`` must accept broadcast arrays.  Brackets from the dense ``grid``
    are refined by vectorised bisection to machine precision.  Returns a list
    (one entry per V2) of ascending root lists.
    """
    V2s = np.atleast_1d(np.asarray(V2s, dtype=float))
    out = [[] for _ in V2s]
    for c0 in range(0, len(V2s), chunk):
        v2 = V2s[c0:c0 + chunk]
        vals = fun(grid[None, :], v2[:, None])
        sa = vals[:, :-1]
        sb = vals[:, 1:]
        ii, jj = np.nonzero((sa * sb < 0.0) | (sa == 0.0))
        if len(ii) == 0:
            continue
        a = grid[jj].copy()
        b = grid[jj + 1].copy()
        fa = sa[ii, jj].copy()
        V2b = v2[ii]
        exact = fa == 0.0
        for _ in range(60):
            m = 0.5 * (a + b)
            fm = fun(m, V2b)
            left = (fm * fa > 0.0)
            a = np.where(left, m, a)
            fa = np.where(left, fm, fa)
            b = np.where(left, b, m)
        r = np.where(exact, grid[jj], 0.5 * (a + b))
        for k in range(len(ii)):
            out[c0 + ii[k]].append(float(r[k]))
    return [sorted(x) for x in out]


def mss_roots(V2: float, p: ParamSet = DEFAULT, n_scan: int = N_SCAN) -> list:
    """All V1 with h(V1, V2) = 0 in the scan window, ascending."""
    grid = np.linspace(*V1_SCAN, n_scan)
    return bracket_roots(lambda a, b: h_mss(a, b, p), [V2], grid)[0]


# -- branches ------------------------------------------------------------------------------

def _thread(samples, max_jump):
    """Thread per-V2 root lists into continuous branches by nearest predecessor."""
    branches = []
    active = []  # indices of branches alive at the previous sample
    for V2, roots in samples:
        used = set()
        new_active = []
        for bi in active:
            last = branches[bi][-1][1]
            best, bd = None, max_jump
            for k, r in enumerate(roots):
                if k in used:
                    continue
                d = abs(r - last)
                if d < bd:
                    best, bd = k, d
            if best is not None:
                used.add(best)
                branches[bi].append((V2, roots[best]))
                new_active.append(bi)
        for k, r in enumerate(roots):
            if k not in used:
                branches.append([(V2, r)])
                new_active.append(len(branches) - 1)
        active = new_active
    return branches


def mss_branches(V2_range=(-60.0, 55.0), p: ParamSet = DEFAULT, step: float = V2_STEP,
                 max_jump: float = 5.0) -> list:
    """Branches of M_SS over ``V2_range`` ordered by mean V1, highest first
    (names ``upper``, ``middle``, ``lower`` when three are present)."""
    lo, hi = V2_range
    n = int(round((hi - lo) / step)) + 1
    V2s = np.linspace(lo, hi, n)
    grid = np.linspace(*V1_SCAN, N_SCAN)
    roots = bracket_roots(lambda a, b: h_mss(a, b, p), V2s, grid)
    samples = [(float(v), r) for v, r in zip(V2s, roots)]
    raw = _thread(samples, max_jump)
    out = []
    for br in raw:
        pts = np.array([mss_point(V1, V2, p) for V2, V1 in br])
        res = np.array([mss_residual(s, p) for s in pts])
        out.append(ManifoldBranch(pts, res))
    out.sort(key=lambda b: -float(np.mean(b.points[:, 0])))
    names = {1: ["upper"], 2: ["upper", "lower"], 3: ["upper", "middle", "lower"]}.get(len(out))
    for k, b in enumerate(out):
        b.name = names[k] if names else f"branch{k}"
    return out


def get_branch(branches, name: str) -> ManifoldBranch:
    for b in branches:
        if b.name == name:
            return b
    raise KeyError(name)


# -- eigenvalues -----------------------------------------------------------------------------

def block_eigs(state, p: ParamSet = DEFAULT, eps: float | None = None):
    """(tr, det, lambda1, lambda2, f2V2) of the slow-layer Jacobian in 1/ms."""
    J = model.jac_slow_layer(state, p, eps) / model.T_S
    tr = J[0, 0] + J[1, 1]
    det = J[0, 0] * J[1, 1] - J[0, 1] * J[1, 0]
    disc = 0.25 * tr * tr - det
    if disc >= 0:
        r = math.sqrt(disc)
        # numerically guarded real roots
        big = 0.5 * tr + math.copysign(r, tr) if tr != 0 else r
        l1 = big
        l2 = det / big if big != 0 else 0.5 * tr - r
        lam = (complex(max(l1, l2)), complex(min(l1, l2)))
    else:
        im = math.sqrt(-disc)
        lam = (complex(0.5 * tr, im), complex(0.5 * tr, -im))
    return tr, det, lam[0], lam[1], J[2, 2]


def label_of(l1: complex, l2: complex, l3: float) -> str:
    re = [l1.real, l2.real, l3]
    cplx = abs(l1.imag) > 0
    if all(r < 0 for r in re):
        return "stable-focus" if cplx else "stable-node"
    if all(r > 0 for r in re):
        return "unstable-focus" if cplx else "unstable-node"
    return "saddle-focus" if cplx else "saddle"


def mss_classify(branch: ManifoldBranch, p: ParamSet = DEFAULT,
                 eps: float | None = None) -> ManifoldBranch:
    eig = np.empty((len(branch), 5))
    labels = []
    for i, s in enumerate(branch.points):
        _, _, l1, l2, f2V2 = block_eigs(s, p, eps)
        eig[i] = (l1.real, l1.imag, l2.real, l2.imag, f2V2)
        labels.append(label_of(l1, l2, f2V2))
    branch.eigen_data = eig
    branch.labels = labels
    return branch


# -- bifurcations along a branch -----------------------------------------------------------

def _track_root(V2, V1_guess, p):
    """Newton for h(V1, V2) = 0 near V1_guess with V2 fixed."""
    V1 = V1_guess
    for _ in range(50):
        hv = float(h_mss(V1, V2, p))
        d = float(h_mss_dV1(V1, V2, p))
        step = hv / d
        V1 -= step
        if abs(step) < 1e-13 * max(1.0, abs(V1)):
            break
    return V1


def _refine_along(branch, i, fun, p):
    """Root of fun(state) between samples i and i+1 of a branch (brentq in V2)."""
    V2a, V2b = branch.points[i, 2], branch.points[i + 1, 2]
    V1a, V1b = branch.points[i, 0], branch.points[i + 1, 0]

    def g(V2):
        guess = V1a + (V1b - V1a) * (V2 - V2a) / (V2b - V2a)
        V1 = _track_root(V2, guess, p)
        return fun(mss_point(V1, V2, p))

    V2 = brentq(g, V2a, V2b, xtol=1e-13, rtol=1e-15, maxiter=200)
    guess = V1a + (V1b - V1a) * (V2 - V2a) / (V2b - V2a)
    return mss_point(_track_root(V2, guess, p), V2, p)


def hopf_tr(state, p: ParamSet = DEFAULT, eps: float | None = None) -> float:
    """f1V1/eps + g1w1 (slow time units)."""
    eps = p.eps if eps is None else eps
    d = model.partials(*state, p)
    return d.f1V1 / eps + d.g1w1


def block_det(state, p: ParamSet = DEFAULT, eps: float | None = None) -> float:
    eps = p.eps if eps is None else eps
    d = model.partials(*state, p)
    return (d.f1V1 * d.g1w1 - d.f1w1 * d.g1V1) / eps


def find_hopf(branch: ManifoldBranch, p: ParamSet = DEFAULT, eps: float | None = None) -> list:
    trs = np.array([hopf_tr(s, p, eps) for s in branch.points])
    out = []
    for i in range(len(trs) - 1):
        if trs[i] == 0.0 or trs[i] * trs[i + 1] < 0:
            s = _refine_along(branch, i, lambda x: hopf_tr(x, p, eps), p)
            det = block_det(s, p, eps)
            if det > 0:
                omega = math.sqrt(det) / model.T_S
                out.append(BifPoint("hopf", s, abs(hopf_tr(s, p, eps)) + mss_residual(s, p),
                                    {"frequency": omega, "det": det, "branch": branch.name}))
    return out


def find_folds_mss(branch: ManifoldBranch, p: ParamSet = DEFAULT, branches=None) -> list:
    """fold_ss1 (f2V2 = 0) along the branch and fold_ss2 (det = 0) where the
    branch ends by merging with a neighbour (pass all ``branches`` for the latter)."""
    out = []
    f2v = np.array([model.partials(*s, p).f2V2 for s in branch.points])
    for i in range(len(f2v) - 1):
        if f2v[i] * f2v[i + 1] < 0:
            s = _refine_along(branch, i, lambda x: model.partials(*x, p).f2V2, p)
            out.append(BifPoint("fold_ss1", s, abs(model.partials(*s, p).f2V2) + mss_residual(s, p),
                                {"branch": branch.name}))
    for end in (0, -1):
        fp = _fold_ss2_at_end(branch, end, p, branches)
        if fp is not None:
            out.append(fp)
    return out


def _fold_ss2_at_end(branch, end, p, branches):
    if branches is None:
        return None
    V1e, V2e = branch.points[end, 0], branch.points[end, 2]
    for other in branches:
        if other is branch or len(other) == 0:
            continue
        for oend in (0, -1):
            if abs(other.points[oend, 2] - V2e) < 1e-9 and abs(other.points[oend, 0] - V1e) < 10.0:
                s = solve_fold_ss2(0.5 * (V1e + other.points[oend, 0]), V2e, p)
                if s is not None:
                    return BifPoint("fold_ss2", s, mss_residual(s, p) + abs(block_det(s, p)),
                                    {"branch": branch.name})
    return None


def solve_fold_ss2(V1, V2, p: ParamSet = DEFAULT):
    """Newton on {h = 0, dh/dV1 = 0} for (V1, V2)."""
    x = np.array([V1, V2], dtype=float)
    for _ in range(60):
        F = np.array([float(h_mss(x[0], x[1], p)), float(h_mss_dV1(x[0], x[1], p))])
        J = np.empty((2, 2))
        for k in range(2):
            dx = np.zeros(2)
            dx[k] = 1e-6
            Fp = np.array([float(h_mss(*(x + dx), p)), float(h_mss_dV1(*(x + dx), p))])
            Fm = np.array([float(h_mss(*(x - dx), p)), float(h_mss_dV1(*(x - dx), p))])
            J[:, k] = (Fp - Fm) / 2e-6
        step = np.linalg.solve(J, F)
        x -= step
        if np.max(np.abs(step)) < 1e-12:
            break
    if not np.all(np.isfinite(x)):
        return None
    s = mss_point(x[0], x[1], p)
    return s if mss_residual(s, p) < 1e-9 else None


# -- fold curves of M_S ----------------------------------------------------------------------

def fold_roots(V2: float, p: ParamSet = DEFAULT, n_scan: int = N_SCAN) -> list:
    """V1 roots of F1V1(V1, V2) = 0, ascending (lower fold first)."""
    return fold_roots_many([V2], p, n_scan)[0]


def fold_roots_many(V2s, p: ParamSet = DEFAULT, n_scan: int = N_SCAN) -> list:
    grid = np.linspace(p.V_K + 1.0, V1_SCAN[1], n_scan)
    return bracket_roots(lambda a, b: model.graph_F1(a, b, p).F1V1, V2s, grid)


@dataclass
class FoldCurve:
    which: str
    points: np.ndarray  # (n, 3): V1, V2, w1


def fold_curves_ms(p: ParamSet = DEFAULT, V2_range=(-60.0, 55.0), step: float = V2_STEP):
    """Lower and upper fold curves of M_S (local minimum / maximum of F1 in V1)."""
    lo, hi = V2_range
    n = int(round((hi - lo) / step)) + 1
    lower, upper = [], []
    V2s = np.linspace(lo, hi, n)
    for V2, r in zip(V2s, fold_roots_many(V2s, p)):
        V2 = float(V2)
        if len(r) >= 2:
            lower.append((r[0], V2, float(model.graph_F1(r[0], V2, p).F1)))
            upper.append((r[-1], V2, float(model.graph_F1(r[-1], V2, p).F1)))
    return FoldCurve("lower", np.array(lower).reshape(-1, 3)), \
        FoldCurve("upper", np.array(upper).reshape(-1, 3))


# -- CDH -------------------------------------------------------------------------------------

def _cdh_fun(x, p):
    V1, w1, V2, w2 = x
    d = model.partials(V1, w1, V2, w2, p)
    return np.array([d.f1, d.g1, d.f2, d.f1V1])


def solve_cdh(V1, V2, p: ParamSet = DEFAULT, tol: float = 1e-10):
    """Newton on {f1, g1, f2, f1V1} = 0 in (V1, w1, V2, w2)."""
    x = mss_point(V1, V2, p)
    for _ in range(60):
        F = _cdh_fun(x, p)
        J = np.empty((4, 4))
        for k in range(4):
            h = 1e-7 * max(1.0, abs(x[k]))
            dx = np.zeros(4)
            dx[k] = h
            J[:, k] = (_cdh_fun(x + dx, p) - _cdh_fun(x - dx, p)) / (2 * h)
        step = np.linalg.solve(J, F)
        x = x - step
        if np.max(np.abs(step)) < 1e-13 * max(1.0, np.max(np.abs(x))):
            break
    res = float(np.linalg.norm(_cdh_fun(x, p)))
    return x, res


def find_cdh(p: ParamSet = DEFAULT, which: str = "upper", V2_range=(-60.0, 55.0),
             gap_threshold: float = CDH_GAP) -> BifPoint:
    """Intersection of M_SS with the ``which`` fold of M_S.

    Each M_SS branch is compared with the fold curve at equal V2.  A sign
    change of ``V1_branch - V1_fold`` seeds Newton directly; otherwise the
    closest approach is used if its gap is below ``gap_threshold``.
    """
    branches = mss_branches(V2_range, p)
    lower, upper = fold_curves_ms(p, V2_range)
    fc = upper if which == "upper" else lower
    if len(fc.points) == 0:
        raise NoIntersection(f"no {which} fold in range")
    fold_V1 = dict(zip(np.round(fc.points[:, 1], 9), fc.points[:, 0]))
    seeds = []
    best_gap = math.inf
    for b in branches:
        diffs = []
        for s in b.points:
            Vf = fold_V1.get(round(float(s[2]), 9))
            diffs.append(np.nan if Vf is None else s[0] - Vf)
        diffs = np.array(diffs)
        ok = np.isfinite(diffs)
        if not np.any(ok):
            continue
        best_gap = min(best_gap, float(np.min(np.abs(diffs[ok]))))
        for i in range(len(diffs) - 1):
            if ok[i] and ok[i + 1] and diffs[i] * diffs[i + 1] <= 0:
                seeds.append((0.0, b.points[i, 0], b.points[i, 2]))
        if not seeds:
            k = int(np.nanargmin(np.abs(diffs)))
            seeds.append((abs(diffs[k]), b.points[k, 0], b.points[k, 2]))
    seeds.sort(key=lambda t: t[0])
    for gap, V1s, V2s in seeds:
        if gap >= gap_threshold:
            break
        try:
            x, res = solve_cdh(V1s, V2s, p)
        except np.linalg.LinAlgError:
            continue
        if not np.all(np.isfinite(x)) or res > 1e-10:
            continue
        if not (V2_range[0] - 1.0 <= x[2] <= V2_range[1] + 1.0):
            continue
        fr = fold_roots(float(x[2]), p)
        if fr and abs(x[0] - (fr[-1] if which == "upper" else fr[0])) < 1e-6:
            return BifPoint("cdh", x, res, {"which": which, "seed_gap": gap})
    raise NoIntersection(f"no {which} CDH: minimal M_SS-to-fold gap {best_gap:.6g} mV",
                         gap=best_gap)
