"""Command-line front end.

Every run writes its outputs plus ``manifest.json`` into ``--out``.  Values
are resolved in this order, later winning: built-in defaults, the TOML file
given by ``--config``, then command-line flags.  A manifest holds the fully
resolved command and can be replayed with :func:`replay`.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time

import numpy as np

from . import __version__, io
from .errors import MlgsptError, NoIntersection
from .integrate import IntegrationSettings, integrate
from .model import ParamSet

COMMANDS = ("simulate", "classify", "sweep", "manifolds", "folded", "fsn", "cdh", "funnel",
            "hopf-continue", "cdh-continue", "po-branch", "singular-orbit")

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 2, 3

FLAG_PARAMS = {"gsyn": "g_syn", "c1": "C1", "phi2": "phi2"}

# per-command options: name -> (type, default, help)
OPTIONS = {
    "simulate": {"t_end": (float, None, "horizon in ms (default: classifier horizon)")},
    "classify": {},
    "sweep": {},
    "manifolds": {"v2_range": (str, "-60:55", "V2 window lo:hi")},
    "folded": {"which": (str, "lower", "upper or lower fold"),
               "delta": (float, None, "override delta"),
               "v2_range": (str, "-60:55", "V2 window lo:hi")},
    "fsn": {"which": (str, "lower", "upper or lower fold"),
            "delta": (float, None, "override delta"),
            "v2_range": (str, "-60:55", "V2 window lo:hi")},
    "cdh": {"which": (str, "upper", "upper or lower fold")},
    "funnel": {"which": (str, "upper", "upper or lower fold"),
               "n_nodes": (int, 200, "folded-node samples"),
               "arclength": (float, 60.0, "strong canard arclength")},
    "hopf-continue": {"vary": (str, "g_syn", "g_syn or C1"),
                      "range": (str, "3.5:6", "parameter window lo:hi"),
                      "which": (str, "upper", "M_SS branch of the seed"),
                      "direction": (int, 1, "+1 or -1 along the curve")},
    "cdh-continue": {"range": (str, "3.5:6", "g_syn window lo:hi"),
                     "which": (str, "upper", "fold of the seed"),
                     "direction": (int, 1, "+1 or -1 along the curve")},
    "po-branch": {"which": (str, "upper", "M_SS branch of the Hopf point"),
                  "n_orbits": (int, 20, "orbits to compute")},
    "singular-orbit": {"limit": (str, "eps,0", "eps,0 or 0,delta or 0,0")},
}


class UsageError(Exception):
    pass


# -- parsing ---------------------------------------------------------------------------------

def parse_range(text: str, flag: str):
    """``lo:hi:count`` -> array, ``lo:hi`` -> (lo, hi)."""
    parts = text.split(":")
    try:
        if len(parts) == 3:
            lo, hi, n = float(parts[0]), float(parts[1]), int(parts[2])
            if n < 1:
                raise ValueError
            return np.linspace(lo, hi, n)
        if len(parts) == 2:
            return float(parts[0]), float(parts[1])
    except ValueError:
        pass
    raise UsageError(f"{flag}: expected lo:hi or lo:hi:count, got {text!r}")


def _as_float(text, flag):
    try:
        return float(text)
    except (TypeError, ValueError):
        raise UsageError(f"{flag}: expected a number, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    g = common.add_argument_group("global")
    g.add_argument("--config", default=argparse.SUPPRESS, help="TOML configuration file")
    g.add_argument("--gsyn", default=argparse.SUPPRESS, help="synaptic conductance g_syn")
    g.add_argument("--c1", default=argparse.SUPPRESS, help="C1 (sweep: lo:hi:count)")
    g.add_argument("--phi2", default=argparse.SUPPRESS, help="phi2 (sweep: lo:hi:count)")
    g.add_argument("--out", default=argparse.SUPPRESS, help="output directory (default: out)")
    g.add_argument("--jobs", type=int, default=argparse.SUPPRESS, help="worker processes")
    g.add_argument("--seed-id", type=int, default=argparse.SUPPRESS,
                   help="representative choice for non-unique constructions")
    ap = argparse.ArgumentParser(prog="mlgspt", parents=[common],
                                 description="Three-timescale Morris-Lecar GSPT toolkit")
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True
    for name in COMMANDS:
        sp = sub.add_parser(name, parents=[common])
        for opt, (typ, default, hlp) in OPTIONS[name].items():
            sp.add_argument("--" + opt.replace("_", "-"), dest=opt, type=typ, default=default,
                            help=hlp)
    return ap


def resolve(argv) -> dict:
    """Parse ``argv`` into a fully resolved run description."""
    ns = vars(build_parser().parse_args(argv))
    cmd = ns.pop("command")
    cfg = io.load_toml(ns["config"]) if "config" in ns else {}
    params = dict(cfg.get("params", {}))
    sweep_cfg = dict(cfg.get("sweep", {}))
    for flag, name in FLAG_PARAMS.items():
        if flag not in ns:
            continue
        text = ns[flag]
        if cmd == "sweep" and name in ("C1", "phi2") and ":" in str(text):
            sweep_cfg[name] = text
        else:
            params[name] = _as_float(text, "--" + flag)
    try:
        p = ParamSet.from_dict(params)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"[params]: {exc}") from None
    try:
        integ = IntegrationSettings(**cfg.get("integration", {}))
    except (TypeError, ValueError) as exc:
        raise UsageError(f"[integration]: {exc}") from None
    classify = dict(cfg.get("classify", {}))
    classify["integration"] = integ.__dict__.copy()
    opts = {k: ns[k] for k in OPTIONS[cmd]}
    if cmd == "sweep":
        for name in ("phi2", "C1"):
            v = sweep_cfg.get(name)
            if v is None:
                raise UsageError(f"--{name.lower()}: sweep needs a lo:hi:count range")
            arr = parse_range(v, "--" + name.lower()) if isinstance(v, str) else np.asarray(v, float)
            if isinstance(arr, tuple):
                raise UsageError(f"--{name.lower()}: sweep needs lo:hi:count")
            opts[name] = [float(x) for x in arr]
    return {"command": cmd, "params": p.to_dict(), "integration": integ.__dict__.copy(),
            "classify": classify, "options": opts, "out": ns.get("out", "out"),
            "jobs": int(ns.get("jobs", 1)), "seed_id": int(ns.get("seed_id", 0))}


def digest(run: dict) -> str:
    blob = {k: run[k] for k in ("command", "params", "integration", "classify", "options",
                                "seed_id")}
    return hashlib.sha256(json.dumps(io._jsonable(blob), sort_keys=True).encode()).hexdigest()


# -- commands --------------------------------------------------------------------------------

def _window(text, flag):
    r = parse_range(text, flag)
    if not isinstance(r, tuple):
        raise UsageError(f"{flag}: expected lo:hi")
    return r


def _which(w):
    if w not in ("upper", "lower"):
        raise UsageError(f"--which: expected upper or lower, got {w!r}")
    return w


def _classify_settings(run):
    from .mmo import ClassifySettings
    try:
        return ClassifySettings.from_dict(run["classify"])
    except (TypeError, ValueError) as exc:
        raise UsageError(f"[classify]: {exc}") from None


def _cmd_simulate(run, p, out, outputs):
    from .mmo import canonical_ic, cell2_cycle, classify
    cs = _classify_settings(run)
    T2, w2_mean = cell2_cycle(p)
    t_end = run["options"]["t_end"] or cs.n_cycles * T2
    tr = integrate("full", canonical_ic(p), cs.integration.replace(t_end=t_end), p,
                   section=(3, w2_mean, 1))
    outputs += io.write_trajectory(tr, os.path.join(out, "trajectory"))
    r = classify(p, cs)
    outputs.append(io.write_json(os.path.join(out, "summary.json"), {
        "verdict": r.verdict, "signature": r.signature, "t_end": t_end, "n_points": len(tr)}))


def _cmd_classify(run, p, out, outputs):
    from .mmo import classify
    r = classify(p, _classify_settings(run))
    outputs.append(io.write_json(os.path.join(out, "classify.json"), r.__dict__))


def _cmd_sweep(run, p, out, outputs):
    from .mmo import sweep
    o = run["options"]
    sm = sweep(p.g_syn, o["phi2"], o["C1"], _classify_settings(run), p, jobs=run["jobs"],
               log=lambda s: print(s, file=sys.stderr))
    outputs += io.write_sweep(sm, os.path.join(out, "sweep"))


def _cmd_manifolds(run, p, out, outputs):
    from .manifolds import find_cdh, find_folds_mss, find_hopf, mss_branches, mss_classify
    br = mss_branches(_window(run["options"]["v2_range"], "--v2-range"), p)
    pts = []
    for b in br:
        mss_classify(b, p)
        pts += find_hopf(b, p) + find_folds_mss(b, p, br)
    for w in ("upper", "lower"):
        try:
            pts.append(find_cdh(p, w))
        except NoIntersection:
            pass
    outputs.append(io.write_branches(br, os.path.join(out, "mss_branches.csv")))
    outputs.append(io.write_json(os.path.join(out, "bifpoints.json"),
                                 [io.bifpoint_record(b) for b in pts]))


def _folded_curve(run, p):
    from .folded import folded_curve
    o = run["options"]
    return folded_curve(p, o["delta"], None, _which(o["which"]), _window(o["v2_range"], "--v2-range"))


def _cmd_folded(run, p, out, outputs):
    outputs.append(io.write_folded_curve(_folded_curve(run, p),
                                         os.path.join(out, "folded_curve.csv"), p))


def _cmd_fsn(run, p, out, outputs):
    from .folded import find_fsn
    pts = find_fsn(_folded_curve(run, p), p, run["options"]["delta"])
    outputs.append(io.write_json(os.path.join(out, "fsn.json"), [io.folded_record(f) for f in pts]))


def _cmd_cdh(run, p, out, outputs):
    from .folded import cdh_checks
    from .manifolds import find_cdh
    which = _which(run["options"]["which"])
    try:
        bp = find_cdh(p, which)
    except NoIntersection as exc:
        res = {"found": False, "which": which, "minimal_gap": exc.gap, "message": str(exc)}
    else:
        V1, _, V2, w2 = bp.state
        res = {"found": True, "which": which, "state": bp.state, "residual": bp.residual,
               "checks": cdh_checks((V1, V2, w2), p)}
    outputs.append(io.write_json(os.path.join(out, "cdh.json"), res))


def _cmd_funnel(run, p, out, outputs):
    from .folded import build_funnel
    o = run["options"]
    f = build_funnel(p, None, _which(o["which"]), n_nodes=o["n_nodes"], arclength=o["arclength"])
    outputs.append(io.write_json(os.path.join(out, "funnel.json"), f.to_json()))


def _curve_out(curve, out, outputs):
    outputs += io.write_curve(curve, os.path.join(out, f"{curve.kind}_{curve.param_name}"))
    outputs.append(io.write_json(os.path.join(out, "summary.json"), {
        "asymptote": curve.asymptote(), "n_samples": len(curve.samples),
        "bt": curve.special("BT")}))


def _cmd_hopf_continue(run, p, out, outputs):
    from .contin import CONTINUABLE, continue_hopf
    o = run["options"]
    if o["vary"] not in CONTINUABLE:
        raise UsageError(f"--vary: expected one of {', '.join(CONTINUABLE)}")
    c = continue_hopf(o["vary"], _window(o["range"], "--range"), p, _which(o["which"]),
                      direction=o["direction"])
    _curve_out(c, out, outputs)


def _cmd_cdh_continue(run, p, out, outputs):
    from .contin import continue_cdh
    o = run["options"]
    c = continue_cdh(_window(o["range"], "--range"), p, _which(o["which"]),
                     direction=o["direction"])
    _curve_out(c, out, outputs)


def _cmd_po_branch(run, p, out, outputs):
    from .contin import po_branch
    from .errors import NoSeed
    from .manifolds import find_hopf, get_branch, mss_branches
    o = run["options"]
    try:
        hb = find_hopf(get_branch(mss_branches(p=p), _which(o["which"])), p)
    except KeyError:
        raise NoSeed(f"no {o['which']} M_SS branch") from None
    if not hb:
        raise NoSeed(f"no Hopf point on the {o['which']} branch of M_SS")
    b = po_branch(hb[0], p, n_orbits=o["n_orbits"])
    outputs.append(io.write_po_branch(b, os.path.join(out, "po_branch.csv")))
    outputs.append(io.write_json(os.path.join(out, "summary.json"), {
        "hopf": io.bifpoint_record(hb[0]), "n_orbits": len(b), "end_reason": b.end_reason}))


def _cmd_singular_orbit(run, p, out, outputs):
    from .gspt_orbit import OrbitSeed, parse_limit, singular_orbit
    try:
        lim = parse_limit(run["options"]["limit"])
    except ValueError as exc:
        raise UsageError(f"--limit: {exc}") from None
    o = singular_orbit(lim, p, OrbitSeed.from_id(run["seed_id"]))
    outputs += io.write_orbit(o, os.path.join(out, "orbit"))


HANDLERS = {name: globals()["_cmd_" + name.replace("-", "_")] for name in COMMANDS}


# -- driver ----------------------------------------------------------------------------------

def execute(run: dict, argv=None) -> int:
    """Run a resolved description; always leaves a manifest behind."""
    out = run["out"]
    os.makedirs(out, exist_ok=True)
    p = ParamSet.from_dict(run["params"])
    outputs: list = []
    t0 = time.perf_counter()
    status, err, code = "ok", None, EXIT_OK
    try:
        HANDLERS[run["command"]](run, p, out, outputs)
    except UsageError:
        raise
    except MlgsptError as exc:
        status, err, code = "failed", f"{type(exc).__name__}: {exc}", EXIT_NUMERIC
        print(f"mlgspt: numerical failure: {err}", file=sys.stderr)
    settings = {k: run[k] for k in ("integration", "classify", "options", "jobs", "seed_id")}
    man = io.RunManifest(command=list(argv) if argv is not None else [run["command"]],
                         params=run["params"], settings=settings, settings_digest=digest(run),
                         version=__version__, outputs=[os.path.relpath(f, out) for f in outputs],
                         wall_time=time.perf_counter() - t0, status=status, error=err)
    man.write(os.path.join(out, "manifest.json"))
    return code


def replay(manifest_path, out=None) -> int:
    """Re-run a manifest (optionally into another directory)."""
    m = io.RunManifest.read(manifest_path)
    s = m.settings
    run = {"command": _find_cmd(m.command),
           "params": m.params, "integration": s["integration"], "classify": s["classify"],
           "options": s["options"], "jobs": s["jobs"], "seed_id": s["seed_id"],
           "out": out or os.path.dirname(os.path.abspath(manifest_path))}
    return execute(run, m.command)


def _find_cmd(argv):
    for a in argv:
        if a in COMMANDS:
            return a
    raise UsageError("manifest has no command")


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        run = resolve(argv)
    except SystemExit as exc:  # argparse has already printed the message
        return int(exc.code) if isinstance(exc.code, int) else EXIT_USAGE
    except (UsageError, OSError, ValueError) as exc:  # ValueError covers TOML syntax
        print(f"mlgspt: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        return execute(run, argv)
    except UsageError as exc:
        print(f"mlgspt: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
