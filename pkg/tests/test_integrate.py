import numpy as np
import pytest
from scipy.integrate import solve_ivp

from mlgspt import _kernel_py, model
from mlgspt.errors import FixedPoint
from mlgspt.integrate import (BACKEND, IntegrationSettings, _param_vector, integrate,
                              limit_cycle)
from mlgspt.mmo import canonical_ic
from mlgspt.model import ParamSet

try:
    from mlgspt import _kernel as _kernel_c
except ImportError:  # pragma: no cover
    _kernel_c = None


def test_settings_validation():
    with pytest.raises(ValueError):
        IntegrationSettings(min_step=1.0, max_step=0.1)
    with pytest.raises(ValueError):
        IntegrationSettings(abs_tol=0.0)
    with pytest.raises(ValueError):
        IntegrationSettings(transient_fraction=1.0)
    with pytest.raises(ValueError):
        integrate("full", [0.0, 0.0, 0.0])


def _raw(kernel, y0, p, t_end, fold=False):
    return kernel.run_full(list(y0), 0.0, t_end, _param_vector(p), 1e-9, 1e-9, 0.0, 2.0, 1e-12,
                           50_000_000, True, 3, 0.15, 1, fold, -1, 0)


@pytest.mark.skipif(_kernel_c is None, reason="compiled kernel not built")
def test_backends_agree(p43):
    y0 = canonical_ic(p43)
    a = _raw(_kernel_py, y0, p43, 1500.0, fold=True)
    b = _raw(_kernel_c, y0, p43, 1500.0, fold=True)
    assert len(a[0]) == len(b[0])
    np.testing.assert_allclose(np.asarray(a[1]), np.asarray(b[1]), rtol=1e-9, atol=1e-9)
    np.testing.assert_allclose(a[2], b[2], rtol=1e-9)
    assert list(a[3]) == list(b[3])


def test_compiled_backend_selected():
    if _kernel_c is not None:
        assert BACKEND != "python"


def test_full_matches_scipy(p43):
    y0 = canonical_ic(p43)
    tr = integrate("full", y0, IntegrationSettings(t_end=300.0, rel_tol=1e-11, abs_tol=1e-11),
                   p43, extrema=False)
    ref = solve_ivp(lambda t, y: model.rhs_dimensional(y, p43), (0, 300.0), y0,
                    method="DOP853", rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(tr.states[-1], ref.y[:, -1], rtol=1e-7, atol=1e-7)


def test_tolerance_self_consistency(p44):
    y0 = canonical_ic(p44)
    a = integrate("full", y0, IntegrationSettings(t_end=400.0), p44, extrema=False)
    b = integrate("full", y0, IntegrationSettings(t_end=400.0, rel_tol=1e-11, abs_tol=1e-11),
                  p44, extrema=False)
    assert np.max(np.abs(a.states[-1] - b.states[-1])) < 1e-5
    assert len(b) > len(a)


def test_events_ordered_and_alternating(p43):
    tr = integrate("full", canonical_ic(p43), IntegrationSettings(t_end=3000.0), p43,
                   section=(3, 0.15, 1), fold=True)
    t = [e.t for e in tr.events]
    assert t == sorted(t)
    assert np.all(np.diff(tr.times) > 0)
    ext = [e.kind for e in tr.events if e.kind.startswith("spike")]
    assert all(a != b for a, b in zip(ext[:-1], ext[1:]))
    for e in tr.events_of("spike-peak"):
        assert abs(model.f1(*e.state[:3], p43)) < 1e-6 * max(1.0, abs(e.state[0]))
    for e in tr.events_of("section-crossing"):
        assert e.state[3] == pytest.approx(0.15, abs=1e-10)
    assert tr.events_of("fold-crossing")


def test_stop_after_and_window(p43):
    tr = integrate("full", canonical_ic(p43), IntegrationSettings(t_end=5000.0), p43,
                   stop_after=("spike-peak", 3))
    assert len(tr.events_of("spike-peak")) == 3
    assert tr.times[-1] == pytest.approx(tr.events_of("spike-peak")[-1].t)
    w = tr.window(100.0, 200.0)
    assert w.times[0] >= 100.0 and w.times[-1] <= 200.0


def test_python_fallback_path(p43):
    # backward integration of the full system is not compiled; it runs the mirror
    y0 = canonical_ic(p43)
    fw = integrate("full", y0, IntegrationSettings(t_end=5.0, rel_tol=1e-11, abs_tol=1e-11),
                   p43, extrema=False)
    bw = integrate("full", fw.states[-1],
                   IntegrationSettings(t_end=5.0, rel_tol=1e-11, abs_tol=1e-11), p43,
                   extrema=False, backward=True)
    np.testing.assert_allclose(bw.states[-1], y0, rtol=1e-6, atol=1e-7)


def test_reduced_systems_run(p43):
    tr = integrate("slow_layer", [-40.0, 0.1, -30.0], IntegrationSettings(t_end=5.0), p43, w2=0.1)
    assert tr.states.shape[1] == 3
    tr = integrate("superslow_reduced", [-50.0], IntegrationSettings(t_end=1.0), p43)
    assert tr.states.shape == (len(tr), 1)


def test_cell2_limit_cycle_and_fixed_point():
    T, cyc = limit_cycle("cell2", [-30.0, 0.1], IntegrationSettings(t_end=4000.0), ParamSet())
    assert 1000.0 < T < 3000.0
    assert cyc.times[-1] - cyc.times[0] == pytest.approx(T, rel=1e-9)
    np.testing.assert_allclose(cyc.states[0], cyc.states[-1], atol=1e-5)
    with pytest.raises(FixedPoint):
        limit_cycle("cell2", [-30.0, 0.1], IntegrationSettings(t_end=4000.0), ParamSet(I2=0.0))
