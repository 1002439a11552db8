"""CSV/JSON/TOML input and output.

Every float is written with ``%.17g`` so files round-trip to the same
doubles; JSON and manifests are written atomically (temp file + rename).
"""

from __future__ import annotations

import csv
import dataclasses
import json
import math
import os
import sys
import tempfile
from dataclasses import dataclass, field

import numpy as np

from .model import ParamSet

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


def fmt(x) -> str:
    if isinstance(x, (str, bool)) or x is None:
        return str(x)
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return "%.17g" % float(x)


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (bool, np.bool_)):
        return bool(x)
    if isinstance(x, (int, np.integer)):
        return int(x)
    if isinstance(x, complex):
        return [_jsonable(x.real), _jsonable(x.imag)]
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if math.isfinite(x) else str(x)
    if isinstance(x, ParamSet):
        return x.to_dict()
    return x


def write_json(path, obj) -> str:
    """Atomic JSON write; returns ``path``."""
    path = os.fspath(path)
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=".json")
    try:
        with os.fdopen(fd, "w") as fh:
            json.dump(_jsonable(obj), fh, indent=2, sort_keys=True)
            fh.write("\n")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def write_csv(path, header, rows) -> str:
    path = os.fspath(path)
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([fmt(v) for v in r])
    return path


def read_csv(path) -> list:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


# -- config ------------------------------------------------------------------------------

def load_toml(path) -> dict:
    with open(path, "rb") as fh:
        return tomllib.load(fh)


def params_to_toml(p: ParamSet) -> str:
    lines = ["[params]"] + [f"{k} = {fmt(v)}" for k, v in p.to_dict().items()]
    return "\n".join(lines) + "\n"


def params_from_toml(text_or_path) -> ParamSet:
    if os.path.exists(os.fspath(text_or_path)):
        data = load_toml(text_or_path)
    else:
        data = tomllib.loads(text_or_path)
    return ParamSet.from_dict(data.get("params", {}))


# -- per-module exports ----------------------------------------------------------------------

def write_trajectory(traj, stem) -> list:
    """``stem.csv`` (t,V1,w1,V2,w2) and ``stem_events.csv``."""
    names = ["t"] + list(traj.variables)
    a = write_csv(f"{stem}.csv", names,
                  (np.concatenate([[t], y]) for t, y in zip(traj.times, traj.states)))
    b = write_csv(f"{stem}_events.csv", ["t", "kind"] + list(traj.variables),
                  ([e.t, e.kind, *e.state] for e in traj.events))
    return [a, b]


def write_branches(branches, path) -> str:
    rows = []
    for b in branches:
        for k, s in enumerate(b.points):
            e = b.eigen_data[k] if b.eigen_data is not None else [math.nan] * 5
            lab = b.labels[k] if b.labels else ""
            rows.append([s[2], s[0], s[1], s[3], *e, f"{b.name}:{lab}"])
    return write_csv(path, ["V2", "V1", "w1", "w2", "re_l1", "im_l1", "re_l2", "im_l2",
                            "f2V2", "label"], rows)


def bifpoint_record(bp) -> dict:
    return {"kind": bp.kind, "state": bp.state, "residual": bp.residual, **bp.extra}


def write_folded_curve(curve, path, p: ParamSet) -> str:
    from .model import graph_F1
    rows = [[fp.w2, fp.V1, fp.V2, float(graph_F1(fp.V1, fp.V2, p).F1),
             fp.lambda_w.real, fp.lambda_w.imag, fp.lambda_s.real, fp.lambda_s.imag, fp.kind]
            for fp in curve]
    return write_csv(path, ["w2", "V1", "V2", "w1", "re_lw", "im_lw", "re_ls", "im_ls", "kind"],
                     rows)


def folded_record(fp) -> dict:
    info = {k: v for k, v in fp.info.items() if k != "p"}
    return {"kind": fp.kind, "V1": fp.V1, "V2": fp.V2, "w2": fp.w2,
            "lambda_w": complex(fp.lambda_w), "lambda_s": complex(fp.lambda_s), "info": info}


def write_curve(curve, stem) -> list:
    """Continuation curve CSV plus special points JSON."""
    rows = [[par, *state, "regular"] for par, state, _ in curve.samples]
    for kind, d in curve.special_points:
        if "state" in d and "param" in d:
            rows.append([d["param"], *d["state"], kind])
    a = write_csv(f"{stem}.csv", ["param", "V1", "w1", "V2", "w2", "flag"], rows)
    b = write_json(f"{stem}_special.json", {
        "param_name": curve.param_name, "kind": curve.kind,
        "special_points": [{"kind": k, **d} for k, d in curve.special_points]})
    return [a, b]


def write_po_branch(branch, path) -> str:
    """One row per orbit; ``mu1..mu3`` are Floquet multiplier moduli, largest first."""
    rows = []
    for o in branch:
        mu = sorted((abs(z) for z in o.floquet), reverse=True) + [math.nan] * 3
        rows.append([o.w2, o.period, o.amplitude, *mu[:3], o.stability == "stable"])
    return write_csv(path, ["w2", "period", "amplitude", "mu1", "mu2", "mu3", "stable"], rows)


def write_sweep(sm, stem) -> list:
    rows = [[a, c, sm.verdicts[i][j], sm.n_sao[i, j], sm.n_lao[i, j]]
            for i, a in enumerate(sm.phi2) for j, c in enumerate(sm.C1)]
    a = write_csv(f"{stem}.csv", ["phi2", "C1", "verdict", "n_sao", "n_lao"], rows)
    b = write_json(f"{stem}.json", {"g_syn": sm.g_syn, "params": sm.params,
                                    "settings": sm.settings, "digest": sm.digest,
                                    "phi2": sm.phi2, "C1": sm.C1})
    return [a, b]


def write_orbit(orbit, stem) -> list:
    rows = []
    for s in orbit.segments:
        for y in s.trajectory.states:
            rows.append([*y, s.speed, s.phase])
    a = write_csv(f"{stem}.csv", ["V1", "w1", "V2", "w2", "speed", "phase"], rows)
    b = write_json(f"{stem}.json", {
        "limit": orbit.limit, "closure_error": orbit.closure_error,
        "landmarks": orbit.landmarks, "representatives": orbit.representatives,
        "segments": [{"speed": s.speed, "phase": s.phase, "kind": s.kind,
                      "termination": s.termination, "n": len(s.trajectory.states)}
                     for s in orbit.segments]})
    return [a, b]


# -- manifest ----------------------------------------------------------------------------------

@dataclass
class RunManifest:
    command: list
    params: dict
    settings: dict
    settings_digest: str
    version: str
    outputs: list = field(default_factory=list)
    wall_time: float = 0.0
    status: str = "ok"
    error: str | None = None

    def write(self, path) -> str:
        return write_json(path, dataclasses.asdict(self))

    @classmethod
    def read(cls, path) -> "RunManifest":
        with open(path) as fh:
            return cls(**json.load(fh))
