"""Coupled Morris-Lecar model: parameters, gating, right-hand sides and
closed-form derivatives.

Cell 1 (V1, w1) is fast and slow, cell 2 (V2, w2) is slow and superslow.
Cell 2 drives cell 1 through an excitatory synapse S(V2).

Nondimensional conventions
--------------------------
Slow time is ``t_s = t / T_S`` with ``T_S = 10`` ms.  With this unit the
slow-frame system

    eps dV1/dt_s = f1,   dw1/dt_s = g1,   dV2/dt_s = f2,   dw2/dt_s = delta g2

is an exact rescaling of the dimensional equations, with ``eps = 0.1`` at
``C1 = 8`` and ``delta = 0.053`` at ``phi2 = 0.001``.  ``eps`` scales with
C1 and ``delta`` with phi2.  ``g2`` is normalised by ``delta`` so that
``delta * g2`` is the physical rate.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import SingularGraph

#: slow time unit in ms
T_S = 10.0
EPS_REF = 0.1
C1_REF = 8.0
DELTA_REF = 0.053
PHI2_REF = 0.001
#: |V - V_K| floor for the graph F1, F2
VK_FLOOR = 1e-6


@dataclass(frozen=True)
class ParamSet:
    """Model constants.  Voltages in mV, conductances in mS/cm^2,
    capacitances in uF/cm^2, currents in uA/cm^2, beta in 1/ms."""

    C1: float = 8.0
    C2: float = 100.0
    I1: float = 0.0
    I2: float = 60.0
    phi1: float = 0.01
    phi2: float = 0.001
    V_Ca: float = 120.0
    V_K: float = -84.0
    V_L: float = -60.0
    V_syn: float = 30.0
    theta_s: float = -20.0
    sigma_s: float = 10.0
    K1: float = -1.2
    K2: float = 18.0
    K3: float = 12.0
    K4: float = 17.4
    g_Ca: float = 4.0
    g_K: float = 8.0
    g_L: float = 2.0
    g_syn: float = 4.3
    beta: float = 0.5
    g_max: float = 8.0
    Q_t: float = 18.86

    def __post_init__(self):
        for name in ("C1", "C2", "g_Ca", "g_K", "g_L", "g_max", "Q_t", "phi1", "phi2", "beta"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise ValueError(f"{name} must be positive, got {v!r}")
        if not (math.isfinite(self.g_syn) and self.g_syn >= 0):
            raise ValueError(f"g_syn must be non-negative, got {self.g_syn!r}")
        for name in ("K2", "K4", "sigma_s"):
            if getattr(self, name) == 0:
                raise ValueError(f"{name} must be nonzero")

    @property
    def eps(self) -> float:
        return EPS_REF * self.C1 / C1_REF

    @property
    def delta(self) -> float:
        return DELTA_REF * self.phi2 / PHI2_REF

    def replace(self, **changes) -> "ParamSet":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ParamSet":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown parameter(s): {', '.join(sorted(unknown))}")
        return cls(**{k: float(v) for k, v in d.items()})


DEFAULT = ParamSet()


class GatingValues(NamedTuple):
    m_inf: float
    w_inf: float
    s_inf: float
    tau_w: float
    alpha: float


def gating(V, p: ParamSet = DEFAULT) -> GatingValues:
    """All auxiliary functions at voltage V (scalar or array)."""
    m = 0.5 * (1.0 + np.tanh((V - p.K1) / p.K2))
    w = 0.5 * (1.0 + np.tanh((V - p.K3) / p.K4))
    tau = 1.0 / np.cosh((V - p.K3) / (2.0 * p.K4))
    alpha = 1.0 / (1.0 + np.exp(-(V - p.theta_s) / p.sigma_s))
    s = alpha / (alpha + p.beta)
    return GatingValues(m, w, s, tau, alpha)


# -- gating derivatives -------------------------------------------------------

def _m(V, p):
    t = np.tanh((V - p.K1) / p.K2)
    m = 0.5 * (1.0 + t)
    dm = 0.5 * (1.0 - t * t) / p.K2
    d2m = -t * (1.0 - t * t) / (p.K2 * p.K2)
    return m, dm, d2m


def _m_scalar(V, p):
    t = math.tanh((V - p.K1) / p.K2)
    return 0.5 * (1.0 + t), 0.5 * (1.0 - t * t) / p.K2, -t * (1.0 - t * t) / (p.K2 * p.K2)


def _s_scalar(V, p):
    x = -(V - p.theta_s) / p.sigma_s
    a = 1.0 / (1.0 + math.exp(x)) if x < 700.0 else 0.0
    da = a * (1.0 - a) / p.sigma_s
    d2a = da * (1.0 - 2.0 * a) / p.sigma_s
    den = a + p.beta
    return a / den, p.beta * da / den**2, p.beta * (d2a * den - 2.0 * da * da) / den**3


def _w(V, p):
    t = np.tanh((V - p.K3) / p.K4)
    return 0.5 * (1.0 + t), 0.5 * (1.0 - t * t) / p.K4


def _s(V, p):
    a = 1.0 / (1.0 + np.exp(-(V - p.theta_s) / p.sigma_s))
    da = a * (1.0 - a) / p.sigma_s
    d2a = da * (1.0 - 2.0 * a) / p.sigma_s
    den = a + p.beta
    s = a / den
    ds = p.beta * da / den**2
    d2s = p.beta * (d2a * den - 2.0 * da * da) / den**3
    return s, ds, d2s


def w_inf(V, p: ParamSet = DEFAULT):
    return 0.5 * (1.0 + np.tanh((V - p.K3) / p.K4))


# -- dimensional system --------------------------------------------------------

def _ionic1(V1, w1, V2, p):
    m = 0.5 * (1.0 + np.tanh((V1 - p.K1) / p.K2))
    s = _s(V2, p)[0]
    return (p.I1 - p.g_Ca * m * (V1 - p.V_Ca) - p.g_K * w1 * (V1 - p.V_K)
            - p.g_L * (V1 - p.V_L) - p.g_syn * s * (V1 - p.V_syn))


def _ionic2(V2, w2, p):
    m = 0.5 * (1.0 + np.tanh((V2 - p.K1) / p.K2))
    return p.I2 - p.g_Ca * m * (V2 - p.V_Ca) - p.g_K * w2 * (V2 - p.V_K) - p.g_L * (V2 - p.V_L)


def _gate_rate(V, w, p):
    return (w_inf(V, p) - w) * np.cosh((V - p.K3) / (2.0 * p.K4))


def rhs_dimensional(s, p: ParamSet = DEFAULT) -> np.ndarray:
    """dV1/dt, dw1/dt, dV2/dt, dw2/dt in 1/ms."""
    V1, w1, V2, w2 = s
    return np.array([
        _ionic1(V1, w1, V2, p) / p.C1,
        p.phi1 * _gate_rate(V1, w1, p),
        _ionic2(V2, w2, p) / p.C2,
        p.phi2 * _gate_rate(V2, w2, p),
    ])


# -- nondimensional components -------------------------------------------------

def f1(V1, w1, V2, p: ParamSet = DEFAULT):
    return _ionic1(V1, w1, V2, p) / p.g_max


def g1(V1, w1, p: ParamSet = DEFAULT):
    return T_S * p.phi1 * _gate_rate(V1, w1, p)


def f2(V2, w2, p: ParamSet = DEFAULT):
    return T_S * _ionic2(V2, w2, p) / p.C2


def g2(V2, w2, p: ParamSet = DEFAULT):
    return T_S * p.phi2 / p.delta * _gate_rate(V2, w2, p)


def timescale_params(p: ParamSet = DEFAULT) -> dict:
    """Return eps, delta and Q_t plus the literal reference-time formulas.

    The literal values ``C1/(g_max Q_t)`` and ``Q_t phi2 / min tau_w`` are
    reported for diagnostics only; with ``min tau_w = Q_t phi1`` they come out
    as (0.053, 0.1) at defaults, i.e. swapped with respect to eps and delta.
    """
    min_tau = p.Q_t * p.phi1
    return {
        "eps": p.eps,
        "delta": p.delta,
        "Q_t": p.Q_t,
        "time_unit_ms": T_S,
        "eps_formula": p.C1 / (p.g_max * p.Q_t),
        "delta_formula": p.Q_t * p.phi2 / min_tau,
    }


def rhs_nondim(s, p: ParamSet = DEFAULT, frame: str = "slow",
               eps: float | None = None, delta: float | None = None) -> np.ndarray:
    """Right-hand side in the slow, superslow or fast time frame."""
    eps = p.eps if eps is None else eps
    delta = p.delta if delta is None else delta
    V1, w1, V2, w2 = s
    slow = np.array([f1(V1, w1, V2, p) / eps, g1(V1, w1, p), f2(V2, w2, p),
                     delta * g2(V2, w2, p)])
    if frame == "slow":
        return slow
    if frame == "superslow":
        return slow / delta
    if frame == "fast":
        return slow * eps
    raise ValueError(f"unknown frame {frame!r}")


class Partials(NamedTuple):
    """First partials of the nondimensional components at a state."""
    f1: float
    f1V1: float
    f1w1: float
    f1V2: float
    g1: float
    g1V1: float
    g1w1: float
    f2: float
    f2V2: float
    f2w2: float
    g2: float
    g2V2: float
    g2w2: float


def partials(V1, w1, V2, w2, p: ParamSet = DEFAULT) -> Partials:
    m1, dm1, _ = _m(V1, p)
    m2, dm2, _ = _m(V2, p)
    s2, ds2, _ = _s(V2, p)
    gm = p.g_max
    f1v = f1(V1, w1, V2, p)
    f1V1 = (-p.g_Ca * (dm1 * (V1 - p.V_Ca) + m1) - p.g_K * w1 - p.g_L - p.g_syn * s2) / gm
    f1w1 = -p.g_K * (V1 - p.V_K) / gm
    f1V2 = -p.g_syn * ds2 * (V1 - p.V_syn) / gm

    c1 = T_S * p.phi1
    wi1, dwi1 = _w(V1, p)
    z1 = (V1 - p.K3) / (2.0 * p.K4)
    ch1, sh1 = np.cosh(z1), np.sinh(z1)
    g1v = c1 * (wi1 - w1) * ch1
    g1V1 = c1 * (dwi1 * ch1 + (wi1 - w1) * sh1 / (2.0 * p.K4))
    g1w1 = -c1 * ch1

    c2 = T_S / p.C2
    f2v = f2(V2, w2, p)
    f2V2 = c2 * (-p.g_Ca * (dm2 * (V2 - p.V_Ca) + m2) - p.g_K * w2 - p.g_L)
    f2w2 = -c2 * p.g_K * (V2 - p.V_K)

    k2 = T_S * p.phi2 / p.delta
    wi2, dwi2 = _w(V2, p)
    z2 = (V2 - p.K3) / (2.0 * p.K4)
    ch2, sh2 = np.cosh(z2), np.sinh(z2)
    g2v = k2 * (wi2 - w2) * ch2
    g2V2 = k2 * (dwi2 * ch2 + (wi2 - w2) * sh2 / (2.0 * p.K4))
    g2w2 = -k2 * ch2
    return Partials(f1v, f1V1, f1w1, f1V2, g1v, g1V1, g1w1, f2v, f2V2, f2w2, g2v, g2V2, g2w2)


# -- closed-form graphs ----------------------------------------------------------

class F1Graph(NamedTuple):
    F1: float
    F1V1: float
    F1V2: float
    F1V1V1: float
    F1V1V2: float
    F1V2V2: float


def _check_floor(V, p, what):
    if isinstance(V, float):
        if abs(V - p.V_K) < VK_FLOOR:
            raise SingularGraph(f"{what} within {VK_FLOOR} mV of V_K")
        return
    if np.any(np.abs(np.asarray(V) - p.V_K) < VK_FLOOR):
        raise SingularGraph(f"{what} within {VK_FLOOR} mV of V_K")


def graph_F1(V1, V2, p: ParamSet = DEFAULT) -> F1Graph:
    """w1 = F1(V1, V2) solving f1 = 0, with analytic partials up to order 2."""
    _check_floor(V1, p, "V1")
    if isinstance(V1, float) and isinstance(V2, float):
        m, dm, d2m = _m_scalar(V1, p)
        s, ds, d2s = _s_scalar(V2, p)
    else:
        m, dm, d2m = _m(V1, p)
        s, ds, d2s = _s(V2, p)
    N = p.I1 - p.g_Ca * m * (V1 - p.V_Ca) - p.g_L * (V1 - p.V_L) - p.g_syn * s * (V1 - p.V_syn)
    N1 = -p.g_Ca * (dm * (V1 - p.V_Ca) + m) - p.g_L - p.g_syn * s
    N11 = -p.g_Ca * (d2m * (V1 - p.V_Ca) + 2.0 * dm)
    N2 = -p.g_syn * ds * (V1 - p.V_syn)
    N12 = -p.g_syn * ds
    N22 = -p.g_syn * d2s * (V1 - p.V_syn)
    gk = p.g_K
    D = gk * (V1 - p.V_K)
    F = N / D
    F1 = N1 / D - N * gk / D**2
    F11 = N11 / D - 2.0 * N1 * gk / D**2 + 2.0 * N * gk * gk / D**3
    F2 = N2 / D
    F12 = N12 / D - N2 * gk / D**2
    F22 = N22 / D
    return F1Graph(F, F1, F2, F11, F12, F22)


def graph_F2(V2, p: ParamSet = DEFAULT):
    """w2 solving f2(V2, w2) = 0."""
    return graph_F2_d(V2, p)[0]


def graph_F2_d(V2, p: ParamSet = DEFAULT):
    """(F2, dF2/dV2) for the V2-nullcline."""
    _check_floor(V2, p, "V2")
    m, dm, _ = _m(V2, p)
    N = p.I2 - p.g_Ca * m * (V2 - p.V_Ca) - p.g_L * (V2 - p.V_L)
    N1 = -p.g_Ca * (dm * (V2 - p.V_Ca) + m) - p.g_L
    D = p.g_K * (V2 - p.V_K)
    return N / D, N1 / D - N * p.g_K / D**2


# -- Jacobians -------------------------------------------------------------------

def jac_slow_layer(point, p: ParamSet = DEFAULT, eps: float | None = None) -> np.ndarray:
    """Jacobian of the slow layer problem in (V1, w1, V2) with w2 frozen."""
    eps = p.eps if eps is None else eps
    V1, w1, V2, w2 = point
    d = partials(V1, w1, V2, w2, p)
    return np.array([
        [d.f1V1 / eps, d.f1w1 / eps, d.f1V2 / eps],
        [d.g1V1, d.g1w1, 0.0],
        [0.0, 0.0, d.f2V2],
    ])


class DesingPartials(NamedTuple):
    F: float
    G: float
    H: float
    J: np.ndarray
    graph: F1Graph
    d: Partials


def desing_eval(V1, V2, w2, p: ParamSet = DEFAULT, delta: float | None = None) -> DesingPartials:
    """Desingularized field (F, G, H) and its Jacobian at (V1, V2, w2)."""
    delta = p.delta if delta is None else delta
    gr = graph_F1(V1, V2, p)
    w1 = gr.F1
    d = partials(V1, w1, V2, w2, p)
    F = gr.F1V2 * d.f2 - d.g1
    G = -gr.F1V1 * d.f2
    H = -delta * gr.F1V1 * d.g2
    gh1 = d.g1V1 + d.g1w1 * gr.F1V1
    gh2 = d.g1w1 * gr.F1V2
    J = np.array([
        [gr.F1V1V2 * d.f2 - gh1,
         gr.F1V2V2 * d.f2 + gr.F1V2 * d.f2V2 - gh2,
         gr.F1V2 * d.f2w2],
        [-gr.F1V1V1 * d.f2,
         -gr.F1V1V2 * d.f2 - gr.F1V1 * d.f2V2,
         -gr.F1V1 * d.f2w2],
        [-delta * gr.F1V1V1 * d.g2,
         -delta * (gr.F1V1V2 * d.g2 + gr.F1V1 * d.g2V2),
         -delta * gr.F1V1 * d.g2w2],
    ])
    return DesingPartials(F, G, H, J, gr, d)


def desing_rhs(point, p: ParamSet = DEFAULT, delta: float | None = None) -> np.ndarray:
    V1, V2, w2 = point
    e = desing_eval(V1, V2, w2, p, delta)
    return np.array([e.F, e.G, e.H])


def jac_desing(point, p: ParamSet = DEFAULT, delta: float | None = None) -> np.ndarray:
    V1, V2, w2 = point
    return desing_eval(V1, V2, w2, p, delta).J
