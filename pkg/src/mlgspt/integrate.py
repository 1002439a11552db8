"""Adaptive integration of the full system and its singular-limit subsystems.

The full four-dimensional system runs through a compiled Dormand-Prince kernel
when available and through an operation-for-operation Python mirror otherwise.
Set ``MLGSPT_BACKEND=python`` to force the fallback.
"""

from __future__ import annotations

import dataclasses
import math
import os
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from . import _dopri
from . import model
from .errors import FixedPoint, NoConvergence, NonFinite, StepUnderflow
from .model import DEFAULT, ParamSet

if os.environ.get("MLGSPT_BACKEND", "").lower() == "python":
    from . import _kernel_py as _kernel
else:
    try:
        from . import _kernel
    except ImportError:  # pragma: no cover - depends on the build
        from . import _kernel_py as _kernel

BACKEND = _kernel.BACKEND

EVENT_KINDS = ("spike-peak", "spike-trough", "section-crossing", "fold-crossing")

#: state variable names per system
SYSTEMS = {
    "full": ("V1", "w1", "V2", "w2"),
    "cell2": ("V2", "w2"),
    "slow_layer": ("V1", "w1", "V2"),
    "slow_reduced_layer": ("V1", "V2"),
    "slow_reduced": ("V1", "V2", "w2"),
    "superslow_reduced": ("V2",),
    "desingularized": ("V1", "V2", "w2"),
}


@dataclass(frozen=True)
class IntegrationSettings:
    abs_tol: float = 1e-9
    rel_tol: float = 1e-9
    max_step: float = 2.0
    min_step: float = 1e-12
    t_end: float = 1000.0
    transient_fraction: float = 0.5
    first_step: float = 0.0
    max_steps: int = 50_000_000

    def __post_init__(self):
        if not (0 < self.min_step <= self.max_step):
            raise ValueError("need 0 < min_step <= max_step")
        if not (self.abs_tol > 0 and self.rel_tol > 0):
            raise ValueError("tolerances must be positive")
        if not (0 <= self.transient_fraction < 1):
            raise ValueError("transient_fraction must lie in [0, 1)")

    def replace(self, **kw) -> "IntegrationSettings":
        return dataclasses.replace(self, **kw)


class Event(NamedTuple):
    t: float
    kind: str
    state: np.ndarray


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    events: list = field(default_factory=list)
    system: str = "full"

    def __len__(self):
        return len(self.times)

    @property
    def variables(self):
        return SYSTEMS[self.system]

    def window(self, t0: float, t1: float = math.inf) -> "Trajectory":
        """Sub-trajectory with t0 <= t <= t1 (events filtered likewise)."""
        m = (self.times >= t0) & (self.times <= t1)
        ev = [e for e in self.events if t0 <= e.t <= t1]
        return Trajectory(self.times[m], self.states[m], ev, self.system)

    def events_of(self, kind: str) -> list:
        return [e for e in self.events if e.kind == kind]


def _param_vector(p: ParamSet):
    return [getattr(p, f.name) for f in dataclasses.fields(p)]


def _raise_status(status, t):
    if status == _dopri.UNDERFLOW:
        raise StepUnderflow(f"step size below minimum at t={t:.17g}")
    if status == _dopri.NONFINITE:
        raise NonFinite(f"non-finite state at t={t:.17g}")
    if status == _dopri.MAXSTEPS:
        raise NoConvergence(f"step budget exhausted at t={t:.17g}")


def _make_events(raw):
    return [Event(float(t), EVENT_KINDS[int(k)], np.array(s, dtype=float)) for t, k, s in raw]


# -- subsystem right-hand sides ------------------------------------------------------

def _system_fun(system, p, w2=None, eps=None, delta=None):
    eps = p.eps if eps is None else eps
    delta = p.delta if delta is None else delta

    if system == "cell2":
        def fun(t, y):
            V2, ww = y
            return [float(model._ionic2(V2, ww, p)) / p.C2,
                    float(p.phi2 * model._gate_rate(V2, ww, p))]
        return fun, None

    if system == "slow_layer":
        if w2 is None:
            raise ValueError("slow_layer needs a frozen w2")

        def fun(t, y):
            V1, w1, V2 = y
            return [float(model.f1(V1, w1, V2, p)) / eps, float(model.g1(V1, w1, p)),
                    float(model.f2(V2, w2, p))]

        def fold(y):
            return float(model.partials(y[0], y[1], y[2], w2, p).f1V1)
        return fun, fold

    if system in ("slow_reduced_layer", "slow_reduced"):
        frozen = system == "slow_reduced_layer"
        if frozen and w2 is None:
            raise ValueError("slow_reduced_layer needs a frozen w2")

        def fun(t, y):
            V1, V2 = y[0], y[1]
            ww = w2 if frozen else y[2]
            gr = model.graph_F1(V1, V2, p)
            ff2 = float(model.f2(V2, ww, p))
            gg1 = float(model.g1(V1, gr.F1, p))
            out = [(gg1 - gr.F1V2 * ff2) / gr.F1V1, ff2]
            if not frozen:
                out.append(delta * float(model.g2(V2, ww, p)))
            return out

        def fold(y):
            return float(model.graph_F1(y[0], y[1], p).F1V1)
        return fun, fold

    if system == "superslow_reduced":
        def fun(t, y):
            V2 = y[0]
            F2, dF2 = model.graph_F2_d(V2, p)
            return [float(model.g2(V2, F2, p)) / float(dF2)]
        return fun, None

    if system == "desingularized":
        def fun(t, y):
            e = model.desing_eval(y[0], y[1], y[2], p, delta)
            return [float(e.F), float(e.G), float(e.H)]

        def fold(y):
            return float(model.graph_F1(y[0], y[1], p).F1V1)
        return fun, fold

    raise ValueError(f"unknown system {system!r}")


def integrate(system: str, y0, settings: IntegrationSettings = IntegrationSettings(),
              p: ParamSet = DEFAULT, *, w2: float | None = None, eps: float | None = None,
              delta: float | None = None, t0: float = 0.0, extrema: bool = True,
              section: tuple | None = None, fold: bool = False,
              stop_after: tuple | None = None, backward: bool = False) -> Trajectory:
    """Integrate ``system`` from ``y0`` over ``[t0, t0 + settings.t_end]``.

    Parameters
    ----------
    system : str
        One of ``full``, ``cell2``, ``slow_layer``, ``slow_reduced_layer``,
        ``slow_reduced``, ``superslow_reduced`` or ``desingularized``.
        ``full`` and ``cell2`` run in ms, the others in slow time (superslow
        time for ``superslow_reduced``).
    section : (index, value, direction), optional
        Poincare section recorded as ``section-crossing`` events.
    fold : bool
        Record ``fold-crossing`` events (sign changes of the fold function).
    stop_after : (kind, count), optional
        End the run at the ``count``-th event of ``kind``.
    backward : bool
        Integrate in reverse time (not available for ``full``).
    """
    n = len(SYSTEMS[system])
    y0 = [float(v) for v in y0]
    if len(y0) != n:
        raise ValueError(f"{system} expects a state of dimension {n}")
    s = settings
    t1 = t0 + s.t_end
    stop_kind, stop_count = -1, 0
    if stop_after is not None:
        stop_kind, stop_count = EVENT_KINDS.index(stop_after[0]), int(stop_after[1])
    if section is None:
        sec_idx, sec_val, sec_dir = -1, 0.0, 0
    else:
        sec_idx, sec_val, sec_dir = int(section[0]), float(section[1]), int(section[2])

    if system == "full" and not backward:
        ts, ys, et, ek, ey, status = _kernel.run_full(
            y0, float(t0), float(t1), _param_vector(p), s.rel_tol, s.abs_tol, s.first_step,
            s.max_step, s.min_step, s.max_steps, bool(extrema), sec_idx, sec_val, sec_dir,
            bool(fold), stop_kind, stop_count)
        _raise_status(status, ts[-1])
        events = [Event(float(t), EVENT_KINDS[int(k)], y.copy()) for t, k, y in zip(et, ek, ey)]
        return Trajectory(ts, ys, events, system)

    if system == "full":
        fun = None
        fparams = _param_vector(p)
        fwd, ffold = _kernel_py_full(fparams)
        fun, fold_fn = fwd, ffold
    else:
        fun, fold_fn = _system_fun(system, p, w2=w2, eps=eps, delta=delta)
    if backward:
        base = fun
        fun = lambda t, y: [-v for v in base(-t, y)]  # noqa: E731

    events = []
    if extrema and SYSTEMS[system][0] == "V1":
        events.append((0, _dopri.EV_DERIV, 0, 0.0, -1 if not backward else 1, None))
        events.append((1, _dopri.EV_DERIV, 0, 0.0, 1 if not backward else -1, None))
    if sec_idx >= 0:
        events.append((2, _dopri.EV_LEVEL, sec_idx, sec_val, sec_dir, None))
    if fold and fold_fn is not None:
        events.append((3, _dopri.EV_FUNC, 0, 0.0, 0, fold_fn))
    stop_on = None
    if stop_kind >= 0:
        counter = [0]

        def stop_on(kind, t, y):
            if kind == stop_kind:
                counter[0] += 1
                return counter[0] >= stop_count
            return False

    ts, ys, evs, status = _dopri.dopri5(fun, t0, y0, t1, s.rel_tol, s.abs_tol, s.first_step,
                                        s.max_step, s.min_step, s.max_steps, events, stop_on)
    _raise_status(status, ts[-1])
    events = [Event(float(t), EVENT_KINDS[k], np.array(y)) for t, k, y in evs]
    ts = np.array(ts)
    if backward:
        ts = -ts if t0 == 0.0 else 2 * t0 - ts
        events = [Event(2 * t0 - e.t, e.kind, e.state) for e in events]
    return Trajectory(ts, np.array(ys).reshape(-1, n), events, system)


def _kernel_py_full(par):
    from ._kernel_py import make_full_rhs
    return make_full_rhs(par)


# -- limit cycles -----------------------------------------------------------------------

def _default_section(system, traj):
    if system == "full":
        idx = 3
    elif system == "cell2":
        idx = 1
    else:
        idx = 0
    x = traj.states[:, idx]
    return idx, float(np.mean(x)), 1


def limit_cycle(system: str, y0, settings: IntegrationSettings = IntegrationSettings(),
                p: ParamSet = DEFAULT, *, section: tuple | None = None, tol: float = 1e-6,
                max_returns: int = 200, max_multiple: int = 8, extrema: bool = True,
                **kw) -> tuple[float, Trajectory]:
    """Converge onto a periodic attractor by successive Poincare returns.

    A preliminary run of length ``settings.t_end`` fixes the section (default
    ``w2 = mean(w2)``, increasing, for the full system) and removes the bulk of
    the transient.  Returns are then collected until two returns ``k`` apart
    (``k <= max_multiple``) agree to ``tol``; the period is the time between
    them.
    """
    pre = integrate(system, y0, settings, p, extrema=False, **kw)
    half = pre.window(pre.times[0] + settings.transient_fraction * (pre.times[-1] - pre.times[0]))
    state = pre.states[-1]
    if section is None:
        section = _default_section(system, half)
    idx = section[0]
    spread = float(np.ptp(half.states[:, idx]))
    if spread < 1e-9 or not (np.min(half.states[:, idx]) < section[1] < np.max(half.states[:, idx])):
        raise FixedPoint(f"no oscillation across the section (spread {spread:.3g})")

    t_start = float(pre.times[-1])
    chunk = settings.replace(t_end=settings.t_end)
    returns = []  # (t, state)
    tr = integrate(system, state, chunk, p, t0=t_start, extrema=False, section=section, **kw)
    total = 0
    while True:
        for e in tr.events_of("section-crossing"):
            returns.append((e.t, e.state))
            total += 1
            for k in range(1, min(max_multiple, len(returns) - 1) + 1):
                if np.max(np.abs(returns[-1][1] - returns[-1 - k][1])) < tol:
                    ta = returns[-1 - k][0]
                    tb = returns[-1][0]
                    cyc = integrate(system, returns[-1 - k][1], settings.replace(t_end=2 * (tb - ta)),
                                    p, t0=ta, extrema=extrema, section=section,
                                    stop_after=("section-crossing", k), **kw)
                    return tb - ta, _trim_cycle(cyc, ta, tb)
            if total >= max_returns:
                raise NoConvergence(f"no periodic return after {max_returns} section crossings")
        if not tr.events_of("section-crossing") and total == 0:
            raise FixedPoint("trajectory no longer crosses the section")
        tr = integrate(system, tr.states[-1], chunk, p, t0=float(tr.times[-1]), extrema=False,
                       section=section, **kw)


def _trim_cycle(cyc: Trajectory, ta: float, tb: float) -> Trajectory:
    # the run starts exactly on the section; drop the first crossing at ta if recorded
    ev = [e for e in cyc.events if e.t > ta + 1e-9 * max(1.0, abs(ta))]
    return Trajectory(cyc.times, cyc.states, ev, cyc.system)
