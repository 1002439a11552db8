"""Mixed-mode oscillation detection: peak decomposition, signatures and sweeps."""

from __future__ import annotations

import dataclasses
import functools
import hashlib
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import FixedPoint, NoConvergence, TooShort
from .integrate import IntegrationSettings, Trajectory, integrate, limit_cycle
from .model import DEFAULT, ParamSet, w_inf

MMO_VERDICTS = ("mmo", "mmo-aperiodic")


@dataclass(frozen=True)
class ClassifySettings:
    """Classifier thresholds and horizon.

    ``theta_L`` is relative to the global V1 range, ``theta_s`` is in mV.
    """

    theta_L: float = 0.5
    theta_s: float = 1.75
    n_cycles: int = 10
    n_consistent: int = 3
    max_extensions: int = 4
    integration: IntegrationSettings = field(default_factory=IntegrationSettings)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ClassifySettings":
        d = dict(d)
        integ = d.pop("integration", {})
        return cls(integration=IntegrationSettings(**integ), **d)


@dataclass(frozen=True)
class Peak:
    t: float
    V1: float
    amplitude: float
    cls: str  # "LAO" or "SAO"


@dataclass
class MmoClassification:
    verdict: str
    signature: list
    sao_amplitudes: list
    lao_amplitudes: list
    period: float
    n_sao: int = 0
    n_lao: int = 0

    @property
    def is_mmo(self) -> bool:
        return self.verdict in MMO_VERDICTS


def canonical_ic(p: ParamSet = DEFAULT) -> list:
    return [-40.0, float(w_inf(-40.0, p)), -30.0, float(w_inf(-30.0, p))]


def decompose(traj: Trajectory, theta_L: float = 0.5, theta_s: float = 1.75,
              min_duration: float = 0.0) -> list:
    """Classify each V1 peak by its rise from the preceding trough.

    Peaks with amplitude at least ``theta_L`` times the global V1 range are
    LAOs, those between ``theta_s`` and that bound are SAOs and smaller
    wiggles are dropped.
    """
    if len(traj) < 2 or traj.times[-1] - traj.times[0] < min_duration:
        raise TooShort("trajectory shorter than the requested analysis window")
    V1 = traj.states[:, 0]
    vrange = float(np.max(V1) - np.min(V1))
    if vrange == 0.0:
        return []
    big = theta_L * vrange
    out = []
    trough = None
    for e in traj.events:
        if e.kind == "spike-trough":
            trough = float(e.state[0])
        elif e.kind == "spike-peak" and trough is not None:
            a = float(e.state[0]) - trough
            if a >= big:
                out.append(Peak(e.t, float(e.state[0]), a, "LAO"))
            elif a >= theta_s:
                out.append(Peak(e.t, float(e.state[0]), a, "SAO"))
    return out


@functools.lru_cache(maxsize=64)
def _cell2_cycle(C2, I2, phi2, V_Ca, V_K, V_L, K1, K2, K3, K4, g_Ca, g_K, g_L):
    p = DEFAULT.replace(C2=C2, I2=I2, phi2=phi2, V_Ca=V_Ca, V_K=V_K, V_L=V_L, K1=K1, K2=K2,
                        K3=K3, K4=K4, g_Ca=g_Ca, g_K=g_K, g_L=g_L)
    ic = [-30.0, float(w_inf(-30.0, p))]
    s = IntegrationSettings(abs_tol=1e-9, rel_tol=1e-9, max_step=2.0, t_end=2000.0 + 4.0 / phi2)
    T, cyc = limit_cycle("cell2", ic, s, p, extrema=False)
    return T, float(np.mean(cyc.states[:, 1]))


def cell2_cycle(p: ParamSet = DEFAULT) -> tuple[float, float]:
    """Period (ms) and mean w2 of the autonomous (V2, w2) oscillation."""
    return _cell2_cycle(p.C2, p.I2, p.phi2, p.V_Ca, p.V_K, p.V_L, p.K1, p.K2, p.K3, p.K4,
                        p.g_Ca, p.g_K, p.g_L)


def _signatures(peaks, crossings):
    sig = []
    for a, b in zip(crossings[:-1], crossings[1:]):
        inside = [pk for pk in peaks if a <= pk.t < b]
        sig.append((sum(pk.cls == "LAO" for pk in inside), sum(pk.cls == "SAO" for pk in inside)))
    return sig


def _window_kind(L, s):
    if L and s:
        return "mmo"
    if L:
        return "relaxation"
    if s:
        return "small-only"
    return "steady"


def classify(p: ParamSet = DEFAULT, settings: ClassifySettings = ClassifySettings(),
             y0=None) -> MmoClassification:
    """Integrate from the canonical initial condition and classify the attractor."""
    T2, w2_mean = cell2_cycle(p)
    integ = settings.integration
    y = canonical_ic(p) if y0 is None else list(y0)
    horizon = settings.n_cycles * T2
    tr = integrate("full", y, integ.replace(t_end=horizon), p, section=(3, w2_mean, 1))
    t_cut = integ.transient_fraction * horizon
    parts = [tr.window(t_cut)]
    for ext in range(settings.max_extensions + 1):
        times = np.concatenate([q.times for q in parts])
        states = np.concatenate([q.states for q in parts])
        events = [e for q in parts for e in q.events]
        win = Trajectory(times, states, events, "full")
        peaks = decompose(win, settings.theta_L, settings.theta_s)
        crossings = [e.t for e in win.events_of("section-crossing")]
        sig = _signatures(peaks, crossings)
        n = settings.n_consistent
        if len(sig) >= n and len(set(sig[-n:])) == 1:
            L, s = sig[-1]
            verdict = _window_kind(L, s)
            return _result(verdict, sig, peaks, T2, L, s)
        if ext == settings.max_extensions:
            break
        last = parts[-1]
        parts.append(integrate("full", last.states[-1], integ.replace(t_end=5 * T2), p,
                               t0=float(last.times[-1]), section=(3, w2_mean, 1)).window(
                                   float(last.times[-1]) + 1e-12))
    if sig and all(L and s for L, s in sig):
        return _result("mmo-aperiodic", sig, peaks, T2, *sig[-1])
    return _result("unresolved", sig, peaks, T2, *(sig[-1] if sig else (0, 0)))


def _result(verdict, sig, peaks, T2, L, s):
    return MmoClassification(
        verdict=verdict, signature=[tuple(x) for x in sig],
        sao_amplitudes=[pk.amplitude for pk in peaks if pk.cls == "SAO"],
        lao_amplitudes=[pk.amplitude for pk in peaks if pk.cls == "LAO"],
        period=T2, n_sao=int(s), n_lao=int(L))


# -- sweeps ------------------------------------------------------------------------------

@dataclass
class SweepMap:
    g_syn: float
    phi2: np.ndarray
    C1: np.ndarray
    verdicts: list  # [i_phi2][j_C1]
    n_sao: np.ndarray
    n_lao: np.ndarray
    params: dict
    settings: dict
    digest: str

    def is_mmo(self) -> np.ndarray:
        return np.array([[v in MMO_VERDICTS for v in row] for row in self.verdicts])


def settings_digest(p: ParamSet, settings: ClassifySettings, phi2, C1) -> str:
    blob = json.dumps({"params": p.to_dict(), "settings": settings.to_dict(),
                       "phi2": [float(x).hex() for x in phi2], "C1": [float(x).hex() for x in C1]},
                      sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()


def _cell(args):
    p, settings = args
    try:
        r = classify(p, settings)
        return r.verdict, r.n_sao, r.n_lao
    except (NoConvergence, FixedPoint, TooShort):  # recorded, never fatal
        return "unresolved", 0, 0
    except Exception:  # numerical failure in a single cell
        return "unresolved", 0, 0


def sweep(g_syn: float, phi2_values, C1_values, settings: ClassifySettings = ClassifySettings(),
          p: ParamSet = DEFAULT, jobs: int = 1, log=None) -> SweepMap:
    """Classify every (phi2, C1) lattice cell; output is independent of ``jobs``."""
    phi2_values = np.asarray(phi2_values, dtype=float)
    C1_values = np.asarray(C1_values, dtype=float)
    base = p.replace(g_syn=float(g_syn))
    cells = [(base.replace(phi2=float(a), C1=float(c)), settings)
             for a in phi2_values for c in C1_values]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            results = list(ex.map(_cell, cells, chunksize=1))
    else:
        results = []
        for k, c in enumerate(cells):
            results.append(_cell(c))
            if log is not None:
                log(f"cell {k + 1}/{len(cells)} phi2={c[0].phi2:.6g} C1={c[0].C1:.6g} "
                    f"-> {results[-1][0]}")
    nA, nC = len(phi2_values), len(C1_values)
    verdicts = [[results[i * nC + j][0] for j in range(nC)] for i in range(nA)]
    n_sao = np.array([[results[i * nC + j][1] for j in range(nC)] for i in range(nA)], dtype=int)
    n_lao = np.array([[results[i * nC + j][2] for j in range(nC)] for i in range(nA)], dtype=int)
    return SweepMap(float(g_syn), phi2_values, C1_values, verdicts, n_sao, n_lao,
                    base.to_dict(), settings.to_dict(),
                    settings_digest(base, settings, phi2_values, C1_values))
