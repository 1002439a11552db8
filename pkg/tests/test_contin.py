import numpy as np
import pytest

from mlgspt import model
from mlgspt.contin import (continue_cdh, continue_curve, continue_fold, continue_hopf,
                           defining_system, detect_bt, po_branch)
from mlgspt.errors import NoSeed
from mlgspt.manifolds import find_hopf, get_branch, mss_branches
from mlgspt.model import ParamSet


@pytest.fixture(scope="module")
def hopf_g(p43):
    return continue_hopf("g_syn", (3.5, 6.0), p43, "upper")


def _residuals_small(curve, p):
    for lam, x, _ in curve.samples:
        q = p.replace(**{curve.param_name: lam})
        assert np.max(np.abs(defining_system(curve.kind, x, q))) < 1e-9


def test_hopf_gsyn_asymptote(hopf_g, p43):
    assert hopf_g.asymptote() == pytest.approx(4.2628, abs=0.01)
    _residuals_small(hopf_g, p43)
    # the continued Hopf keeps a positive determinant
    assert all(aux["det"] > 0 for _, _, aux in hopf_g.samples)
    assert hopf_g.params[0] == 4.3


def test_cdh_gsyn_asymptote(p44):
    c = continue_cdh((3.5, 6.0), p44, "upper")
    assert c.asymptote() == pytest.approx(4.3213, abs=0.01)
    _residuals_small(c, p44)


def test_no_upper_cdh_seed_at_43(p43):
    with pytest.raises(NoSeed):
        continue_cdh((3.5, 6.0), p43, "upper")


def test_hopf_C1_asymptote(p43):
    c = continue_hopf("C1", (0.5, 50.0), p43, "upper")
    assert c.asymptote() == pytest.approx(2.9097, abs=0.05)


def test_bt_on_lower_branch(p43):
    h = continue_hopf("C1", (0.5, 80.0), p43, "lower", direction=1)
    bt = h.special("BT")
    assert len(bt) == 1
    bt = bt[0]
    assert abs(bt["tr"]) < 1e-8 and abs(bt["det"]) < 1e-8
    assert bt["residual"] < 1e-10
    assert bt["param"] == pytest.approx(41.1305, abs=1e-3)
    # the fold_ss2 curve passes through the same point
    f = continue_fold("C1", (0.5, 80.0), p43, "lower")
    bt2 = detect_bt(h, f)[0]
    assert bt2["param"] == pytest.approx(bt["param"], abs=1e-8)


def test_bad_parameter(p43):
    with pytest.raises(ValueError):
        continue_curve("hopf", np.zeros(4), "phi1", (0, 1), p43)


@pytest.fixture(scope="module")
def po_upper(p43):
    h = find_hopf(get_branch(mss_branches(p=p43), "upper"), p43)[0]
    return h, po_branch(h, p43, n_orbits=8)


def test_po_branch_unit_multiplier(po_upper):
    _, br = po_upper
    assert len(br) == 8
    for o in br:
        assert np.min(np.abs(o.floquet - 1.0)) < 1e-4
        assert o.closure < 1e-9
        assert o.stability == "unstable"  # the upper Hopf is subcritical in w2


def test_po_branch_sqrt_amplitude(po_upper, p43):
    h, br = po_upper
    amp = np.array([o.amplitude for o in br])
    dw = np.abs(np.array([o.w2 for o in br]) - h.state[3])
    slope = np.polyfit(np.log(dw), np.log(amp), 1)[0]
    assert slope == pytest.approx(0.5, abs=0.02)
    # period tends to the Hopf period 2 pi / omega (slow time units)
    J = model.jac_slow_layer(h.state, p43)
    omega = np.sqrt(J[0, 0] * J[1, 1] - J[0, 1] * J[1, 0])
    assert br.orbits[0].period == pytest.approx(2 * np.pi / omega, rel=1e-3)


def test_po_w2_range_truncates(po_upper, p43):
    h, _ = po_upper
    br = po_branch(h, p43, n_orbits=8, w2_range=(h.state[3] - 2e-5, h.state[3] + 1e-3))
    assert br.end_reason == "w2 left range" and 0 < len(br) < 8


def test_hopf_frequency_matches_eigs(hopf_g):
    lam, x, aux = hopf_g.samples[0]
    p = ParamSet(g_syn=lam)
    ev = np.linalg.eigvals(model.jac_slow_layer(x, p)[:2, :2]) / model.T_S
    assert np.max(np.abs(ev.imag)) == pytest.approx(aux["frequency"], rel=1e-9)
