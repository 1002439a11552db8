import math

import numpy as np
import pytest

from mlgspt import model
from mlgspt.errors import NotACdh, NotANode
from mlgspt.folded import (build_funnel, cdh_checks, classify_folded, curve_residuals,
                           find_fsn, folded_curve, folded_point_at, fsn_quantities,
                           funnel_membership, strong_canard)
from mlgspt.manifolds import find_cdh, fold_roots


@pytest.fixture(scope="module")
def lower43(p43):
    return folded_curve(p43, None, None, "lower", (-60.0, -20.0), step=0.05)


@pytest.fixture(scope="module")
def upper44(p44):
    return folded_curve(p44, None, None, "upper", (0.0, 45.0), step=0.05)


def test_det_JD_vanishes_along_curves(lower43, upper44, p43, p44):
    for curve, p in ((lower43, p43), (upper44, p44)):
        assert len(curve) > 100
        for fp in curve:
            F1V1, F, det = curve_residuals(fp, p)
            assert F1V1 < 1e-9 and F < 1e-9 and det < 1e-8


def test_kinds_present(lower43):
    kinds = {fp.kind for fp in lower43}
    assert {"node", "saddle", "focus"} <= kinds
    for fp in lower43:
        if fp.kind == "node":
            assert fp.lambda_w.imag == 0 and fp.lambda_w.real * fp.lambda_s.real > 0
            assert abs(fp.lambda_w) <= abs(fp.lambda_s)
        elif fp.kind == "saddle":
            assert fp.lambda_w.real * fp.lambda_s.real < 0
        elif fp.kind == "focus":
            assert fp.lambda_w.imag != 0


def test_fsn1_upper_44(upper44, p44):
    fs = [f for f in find_fsn(upper44, p44) if f.kind == "fsn1"]
    assert len(fs) == 1
    f = fs[0]
    assert f.V2 == pytest.approx(8.6278, abs=1e-3)
    assert f.info["score_fsn1"] < f.info["score_fsn2"] and not f.info["ambiguous"]
    assert abs(f.lambda_w) < 1e-8 * abs(f.lambda_s)


def test_fsn2_lower_43(lower43, p43):
    fs = find_fsn(lower43, p43)
    fsn2 = [f for f in fs if f.kind == "fsn2"]
    assert len(fsn2) == 1 and fsn2[0].V2 == pytest.approx(-32.738, abs=1e-2)
    f = fsn2[0]
    assert f.info["score_fsn2"] < f.info["score_fsn1"]
    assert abs(f.lambda_w) < 1e-8 * abs(f.lambda_s)
    # Q balances delta * K3 there
    q = fsn_quantities(f, p43)
    assert q["Q"] == pytest.approx(p43.delta * q["K3"], rel=1e-6)


@pytest.mark.xfail(strict=True, reason="at the default delta the lower folded curve near the "
                   "CDH consists of foci; a folded saddle-node of the first kind appears "
                   "there only for delta <= 0.01")
def test_fsn1_lower_43_default_delta(lower43, p43):
    assert any(f.kind == "fsn1" for f in find_fsn(lower43, p43))


def test_fsn1_lower_43_small_delta_converges_to_cdh(p43):
    cdh_V2 = find_cdh(p43, "lower").state[2]
    dist = []
    for d in (0.01, 0.001):
        curve = folded_curve(p43, d, None, "lower", (-50.0, -35.0), step=0.01)
        fs = [f for f in find_fsn(curve, p43, d) if f.kind == "fsn1"]
        assert len(fs) == 1
        dist.append(abs(fs[0].V2 - cdh_V2))
    assert dist[1] < dist[0] / 5 and dist[1] < 0.5


def test_cdh_checks_upper_44(p44):
    c = find_cdh(p44, "upper")
    r = cdh_checks(c.state, p44)
    assert r["nullity"] == 2 and r["rank"] == 1
    assert r["angle"] > 0.1  # transversality of the curve and fold normals
    assert r["v0_dot_nf"] < 1e-8
    assert r["v0_in_kernel"] < 1e-8 * r["singular_values"][0]
    with pytest.raises(NotACdh):
        cdh_checks((c.state[0], c.state[2] + 1.0, c.state[3]), p44)


def test_cdh_classification(p44):
    up = find_cdh(p44, "upper").state
    assert classify_folded(up[0], up[2], up[3], p44, 0.0).kind == "node"
    assert folded_point_at(up[2], p44, "upper").kind == "node"
    lo = find_cdh(p44, "lower").state
    assert folded_point_at(lo[2], p44, "lower").kind == "focus"


def test_strong_canard_tangent(p44):
    node = folded_point_at(11.0, p44, "upper")
    assert node.kind == "node"
    seg = strong_canard(node, p44, arclength=0.05)
    J = model.jac_desing(node.xyz, p44)
    vals, vecs = np.linalg.eig(J)
    v = np.real(vecs[:, np.argmin(np.abs(vals - node.lambda_s))])
    for row in seg[1:]:
        if 1e-3 <= row[3] <= 0.05:
            d = row[:3] - node.xyz
            cos = abs(d @ v) / (np.linalg.norm(d) * np.linalg.norm(v))
            assert math.acos(min(1.0, cos)) < 1e-3
    # the canard starts on the attracting sheet
    assert model.graph_F1(seg[1, 0], seg[1, 1], p44).F1V1 < 0
    with pytest.raises(NotANode):
        strong_canard(folded_point_at(-45.0, p44, "lower"), p44)


def test_funnel_small(p44):
    fun = build_funnel(p44, which="upper", n_nodes=12)
    assert len(fun.node_samples) >= 10
    assert all(fp.kind == "node" for fp in fun.node_samples)
    # low nodes have a wide funnel; at high V2 the canards hug the fold
    n = fun.node_samples[1]
    V1f = lambda V2: fold_roots(V2, p44)[-1]  # noqa: E731
    # on the sliding side of the node, just beyond the fold, lies inside
    assert funnel_membership((V1f(n.V2 + 4.0) + 2.0, n.V2 + 4.0, n.w2), fun) == "inside"
    assert funnel_membership((V1f(n.V2 - 8.0) + 2.0, n.V2 - 8.0, n.w2), fun) == "outside"
    assert funnel_membership((V1f(n.V2) + 2.0, n.V2, 10.0), fun) == "outside"
    js = fun.to_json()
    assert len(js["nodes"]) == len(js["canards"]) == len(js["fold"])
