"""Command-line interface: ``mpsdispersion {ground,excite,gap-table,validate,show}``.

Settings come from an optional TOML file (``--config``) and are overridden
by command-line flags. The resolved configuration and the tool version are
embedded in every output file.

Exit codes: 0 success, 1 numerical failure, 2 usage error.
"""

import argparse
import copy
import csv
import io
import json
import logging
import math
import sys
import time

import numpy as np

from . import __version__, models, umps
from . import excitations as ex
from . import groundstate as gs
from .errors import CorruptFormat, EnergyMismatch, InvariantViolation, MpsError, UnknownOperator

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

logger = logging.getLogger("mpsdispersion")

EXIT_OK, EXIT_NUMERICAL, EXIT_USAGE = 0, 1, 2

DEFAULTS = {
    "model": {"name": "tfim", "parameters": {}},
    "D": 8,
    "Ds": [],
    "seed": 0,
    "nev": 1,
    "jobs": 1,
    "method": "vumps",
    "max_steps": 2000,
    "tolerances": {"grad_tol": 1e-10, "solver_tol": 1e-12, "degeneracy_tol": 1e-8},
    "sector": {"kind": None, "flip": None},
    "momentum": {"min": 0.0, "max": math.pi, "points": 65, "full_zone": False},
    "paths": {"ground_in": None, "ground_out": None, "spectrum_out": None, "convergence_out": None},
    "format": "csv",
}


class UsageError(Exception):
    pass


def _merge(base, extra, where="config"):
    out = copy.deepcopy(base)
    for key, val in extra.items():
        if key not in out:
            raise UsageError(f"unknown {where} key {key!r}")
        if isinstance(out[key], dict) and key != "parameters":
            if not isinstance(val, dict):
                raise UsageError(f"{where} key {key!r} must be a table")
            out[key] = _merge(out[key], val, f"{where}.{key}")
        else:
            out[key] = val
    return out


def _parse_param(text):
    if "=" not in text:
        raise UsageError(f"model parameter {text!r} must look like name=value")
    key, val = text.split("=", 1)
    try:
        return key.strip(), float(val)
    except ValueError:
        raise UsageError(f"model parameter {key!r} needs a number, got {val!r}") from None


def resolve_config(args):
    """Defaults, then the TOML file, then command-line overrides."""
    cfg = copy.deepcopy(DEFAULTS)
    if getattr(args, "config", None):
        try:
            with open(args.config, "rb") as fh:
                cfg = _merge(cfg, tomllib.load(fh))
        except OSError as exc:
            raise UsageError(f"cannot read config: {exc}") from exc
        except tomllib.TOMLDecodeError as exc:
            raise UsageError(f"invalid TOML in {args.config}: {exc}") from exc
    over = {
        ("model", "name"): getattr(args, "model", None),
        ("D",): getattr(args, "bond_dim", None),
        ("Ds",): getattr(args, "Ds", None),
        ("seed",): getattr(args, "seed", None),
        ("nev",): getattr(args, "nev", None),
        ("jobs",): getattr(args, "jobs", None),
        ("method",): getattr(args, "method", None),
        ("max_steps",): getattr(args, "max_steps", None),
        ("tolerances", "grad_tol"): getattr(args, "grad_tol", None),
        ("tolerances", "solver_tol"): getattr(args, "solver_tol", None),
        ("tolerances", "degeneracy_tol"): getattr(args, "degeneracy_tol", None),
        ("sector", "kind"): getattr(args, "sector", None),
        ("sector", "flip"): getattr(args, "flip", None),
        ("momentum", "min"): getattr(args, "kmin", None),
        ("momentum", "max"): getattr(args, "kmax", None),
        ("momentum", "points"): getattr(args, "points", None),
        ("momentum", "full_zone"): getattr(args, "full_zone", None) or None,
        ("paths", "ground_in"): getattr(args, "state", None),
        ("paths", "ground_out"): getattr(args, "out", None) if args.command == "ground" else None,
        ("paths", "spectrum_out"): getattr(args, "out", None) if args.command != "ground" else None,
        ("paths", "convergence_out"): getattr(args, "log", None),
        ("format",): getattr(args, "format", None),
    }
    for path, val in over.items():
        if val is None:
            continue
        node = cfg
        for key in path[:-1]:
            node = node[key]
        node[path[-1]] = val
    for text in getattr(args, "param", None) or []:
        key, val = _parse_param(text)
        cfg["model"]["parameters"][key] = val
    _validate_config(cfg)
    return cfg


def _validate_config(cfg):
    name = cfg["model"]["name"]
    if name not in models.MODELS:
        raise UsageError(f"unknown model {name!r}; choose from {', '.join(sorted(models.MODELS))}")
    try:
        _, resolved = models.build_model(name, cfg["model"]["parameters"])
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    cfg["model"]["parameters"] = resolved
    if int(cfg["D"]) < 1:
        raise UsageError("bond dimension must be at least 1")
    if int(cfg["nev"]) < 1:
        raise UsageError("nev must be at least 1")
    if int(cfg["momentum"]["points"]) < 1:
        raise UsageError("momentum points must be at least 1")
    if int(cfg["jobs"]) < 1:
        raise UsageError("jobs must be at least 1")
    if cfg["sector"]["kind"] is None:
        # domain walls where a flip symmetry is broken, plain excitations otherwise
        has_flip = models.SYMMETRY[name][0] is not None
        cfg["sector"]["kind"] = "nontrivial" if has_flip else "trivial"
    if cfg["sector"]["kind"] not in ("trivial", "nontrivial", "both"):
        raise UsageError("sector must be trivial, nontrivial or both")
    for key, val in cfg["tolerances"].items():
        if not float(val) > 0:
            raise UsageError(f"tolerance {key} must be positive")
    if cfg["method"] not in ("vumps", "flow"):
        raise UsageError("method must be vumps or flow")
    if cfg["format"] not in ("csv", "json"):
        raise UsageError("format must be csv or json")
    Ds = [int(x) for x in cfg["Ds"]]
    if Ds != sorted(Ds) or len(set(Ds)) != len(Ds):
        raise UsageError("D list must be strictly ascending")


def _metadata(cfg, command, **extra):
    meta = {"tool": "mpsdispersion", "version": __version__, "command": command, "config": cfg}
    meta.update(extra)
    return meta


def _model(cfg):
    h, _ = models.build_model(cfg["model"]["name"], cfg["model"]["parameters"])
    return h


def _flip_name(cfg):
    flip = cfg["sector"]["flip"] or models.SYMMETRY[cfg["model"]["name"]][0]
    if flip is None:
        raise UsageError(f"model {cfg['model']['name']!r} has no default flip operator; pass --flip")
    return flip


def kappa_grid(cfg):
    mom = cfg["momentum"]
    n = int(mom["points"])
    if mom["full_zone"]:
        return [ex.wrap_momentum(-math.pi + 2 * math.pi * j / n) for j in range(n)]
    lo, hi = float(mom["min"]), float(mom["max"])
    if n == 1:
        return [ex.wrap_momentum(lo)]
    grid = np.linspace(lo, hi, n)
    # pi itself is kept as pi so that the endpoint of [0, pi] survives
    return [float(q) if abs(q - math.pi) < 1e-14 else ex.wrap_momentum(q) for q in grid]


def _write_convergence(path, history, meta):
    out = io.StringIO()
    out.write(f"# mpsdispersion {__version__}\n")
    out.write("# config: " + json.dumps(meta, sort_keys=True) + "\n")
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["step", "energy", "grad_norm"])
    for step, e, g in history:
        writer.writerow([step, repr(e), repr(g)])
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(out.getvalue())


def _load_state(path):
    try:
        return umps.load(path)
    except OSError as exc:
        raise UsageError(f"cannot read state file: {exc}") from exc


# ------------------------------------------------------------ commands

def cmd_ground(cfg, out=None):
    out = out or sys.stdout
    h = _model(cfg)
    initial = None
    if cfg["paths"]["ground_in"]:
        initial = _load_state(cfg["paths"]["ground_in"])
    gcfg = gs.GroundSearchConfig(D=int(cfg["D"]), grad_tol=float(cfg["tolerances"]["grad_tol"]),
                                 max_steps=int(cfg["max_steps"]), initial=initial,
                                 seed=int(cfg["seed"]), method=cfg["method"])
    res = gs.find_ground_state(h, gcfg)
    path = cfg["paths"]["ground_out"] or f"ground_{cfg['model']['name']}_D{cfg['D']}.json"
    meta = _metadata(cfg, "ground", energy=res.energy, grad_norm=res.grad_norm,
                     steps=res.steps, converged=res.converged)
    umps.save(res.state, path, metadata=meta)
    log = cfg["paths"]["convergence_out"] or path.rsplit(".", 1)[0] + ".convergence.csv"
    _write_convergence(log, res.history, meta)
    print(f"energy density: {res.energy:.12f}", file=out)
    print(f"gradient norm:  {res.grad_norm:.3e}", file=out)
    order = models.SYMMETRY[cfg["model"]["name"]][1]
    if order is not None:
        m = umps.expectation_one_site(res.state, models.site_operator(order, h.d)).real
        print(f"<{order}> = {m:.6f} ({'broken' if abs(m) > 1e-3 else 'symmetric'})", file=out)
    print(f"state written to {path}", file=out)
    if not res.converged:
        print(f"error: not converged after {res.steps} steps (gradient {res.grad_norm:.2e} > "
              f"{gcfg.grad_tol:.1e}); state file flagged converged=false", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


def _sectors(cfg, state, h):
    kind = cfg["sector"]["kind"]
    out = []
    if kind in ("trivial", "both"):
        out.append(ex.trivial_sector(state, h))
    if kind in ("nontrivial", "both"):
        flip = models.site_operator(_flip_name(cfg), h.d)
        out.append(ex.make_sector(state, gs.degenerate_partner(state, flip), h))
        if not out[-1].topological:
            raise EnergyMismatch(
                "flipped state coincides with the ground state (no symmetry breaking); "
                "the domain-wall sector does not exist")
    return out


def cmd_excite(cfg, out=None):
    out = out or sys.stdout
    if not cfg["paths"]["ground_in"]:
        raise UsageError("excite needs a ground-state file (--state)")
    h = _model(cfg)
    state = _load_state(cfg["paths"]["ground_in"])
    if state.d != h.d:
        raise UsageError(f"state has d={state.d} but model {cfg['model']['name']!r} has d={h.d}")
    cfg = copy.deepcopy(cfg)
    cfg["D"] = state.D
    kappas = kappa_grid(cfg)
    t0 = time.perf_counter()
    spec = ex.Spectrum()
    for sec in _sectors(cfg, state, h):
        part = ex.dispersion_sweep(sec, kappas, k=int(cfg["nev"]),
                                   rel_tol=float(cfg["tolerances"]["degeneracy_tol"]),
                                   jobs=int(cfg["jobs"]),
                                   tol=float(cfg["tolerances"]["solver_tol"]))
        if sec.topological and part.entries:
            ex.check_domain_wall_energies([e.omega for e in part.entries])
        spec.extend(part)
    meta = _metadata(cfg, "excite", seconds=round(time.perf_counter() - t0, 3))
    # timings vary between runs; keep them out of the CSV so reruns are bit-identical
    path = cfg["paths"]["spectrum_out"]
    if cfg["format"] == "json":
        text = spec.to_json(None, meta)
    else:
        meta.pop("seconds")
        text = spec.to_csv(None, meta)
    if path:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)
        print(f"{len(spec.entries)} levels written to {path}", file=out)
    else:
        out.write(text)
    for q, err in spec.failures:
        print(f"error: kappa={q:.6f}: {err}", file=sys.stderr)
    return EXIT_NUMERICAL if spec.failures else EXIT_OK


def _gap_sector(cfg, state, h):
    kind = cfg["sector"]["kind"]
    if kind == "both":
        raise UsageError("gap-table needs a single sector (trivial or nontrivial)")
    return _sectors(cfg, state, h)[0]


def cmd_gap_table(cfg, out=None):
    out = out or sys.stdout
    Ds = [int(x) for x in cfg["Ds"]] or [int(cfg["D"])]
    h = _model(cfg)
    kappas = kappa_grid(cfg)
    rows, failed = [], False
    prev = None
    for D in Ds:
        try:
            res = gs.find_ground_state(h, gs.GroundSearchConfig(
                D=D, grad_tol=float(cfg["tolerances"]["grad_tol"]), max_steps=int(cfg["max_steps"]),
                initial=prev, seed=int(cfg["seed"]), method=cfg["method"]))
            prev = res.state
            sec = _gap_sector(cfg, res.state, h)
            gap = ex.excitation_gap(sec, kappas, tol=float(cfg["tolerances"]["solver_tol"]))
            if sec.topological:
                ex.check_domain_wall_energies([gap])
            rows.append([D, repr(gap), repr(res.energy), res.converged, ""])
            if not res.converged:
                failed = True
                print(f"error: D={D}: ground search not converged (gradient {res.grad_norm:.2e})",
                      file=sys.stderr)
        except MpsError as exc:
            failed = True
            rows.append([D, "", "", False, f"{type(exc).__name__}: {exc}"])
            print(f"error: D={D}: {exc}", file=sys.stderr)
    text = io.StringIO()
    text.write(f"# mpsdispersion {__version__}\n")
    text.write("# config: " + json.dumps(_metadata(cfg, "gap-table"), sort_keys=True) + "\n")
    writer = csv.writer(text, lineterminator="\n")
    writer.writerow(["D", "gap", "energy_density", "converged", "error"])
    writer.writerows(rows)
    path = cfg["paths"]["spectrum_out"]
    if path:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text.getvalue())
        print(f"{len(rows)} rows written to {path}", file=out)
    else:
        out.write(text.getvalue())
    return EXIT_NUMERICAL if failed else EXIT_OK


def cmd_validate(suite="fast", states=(), out=None):
    out = out or sys.stdout
    from . import validation

    failed = []

    def report(res):
        mark = "PASS" if res.passed else "FAIL"
        print(f"{mark}  {res.name:<26} {res.seconds:7.1f}s  {res.detail}", file=out, flush=True)
        if not res.passed:
            failed.append(res.name)

    for path in states:
        t = time.perf_counter()
        try:
            umps.load(path)
            res = validation.CheckResult(f"state:{path}", True, "invariants hold", 0.0)
        except (MpsError, OSError) as exc:
            res = validation.CheckResult(f"state:{path}", False, f"{type(exc).__name__}: {exc}", 0.0)
        res.seconds = time.perf_counter() - t
        report(res)
    validation.run_suite(suite, report=report)
    if failed:
        print(f"failed: {', '.join(failed)}", file=out)
        return EXIT_NUMERICAL
    print("all checks passed", file=out)
    return EXIT_OK


def cmd_show(path, out=None):
    out = out or sys.stdout
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc}") from exc
    stripped = text.lstrip()
    if stripped.startswith("{") and '"tensors"' in text:
        state = umps.loads(text)
        meta = umps.read_metadata(path)
        print(f"uniform MPS  d={state.d}  D={state.D}", file=out)
        if meta:
            cfg = meta.get("config", {})
            print(f"model: {cfg.get('model')}", file=out)
            for key in ("energy", "grad_norm", "steps", "converged"):
                if key in meta:
                    print(f"{key}: {meta[key]}", file=out)
        sv = umps.schmidt_values(state)
        print("Schmidt values: " + " ".join(f"{s:.6e}" for s in sv), file=out)
        return EXIT_OK
    if stripped.startswith("{"):
        doc = json.loads(text)
        entries = doc.get("entries", [])
        rows = [(e["kappa"], e["level"], e["omega"], e["sector"], e["degeneracy"]) for e in entries]
    else:
        rows = [(e.kappa, e.level, e.omega, e.sector, e.degeneracy)
                for e in ex.Spectrum.read_csv(path).entries]
        for line in text.splitlines():
            if line.startswith("#"):
                print(line, file=out)
    if not rows:
        raise UsageError(f"{path} is neither a state file nor a spectrum file")
    print(f"{'kappa':>10} {'level':>5} {'omega':>16} {'sector':>10} {'deg':>4}", file=out)
    for q, lev, w, sec, deg in rows:
        print(f"{q:10.6f} {lev:5d} {w:16.10f} {sec:>10} {deg:4d}", file=out)
    return EXIT_OK


# ------------------------------------------------------------ argument parsing

def _add_common(p, ground=False):
    p.add_argument("--config", help="TOML configuration file")
    p.add_argument("--model", help="model name: " + ", ".join(sorted(models.MODELS)))
    p.add_argument("--param", action="append", metavar="NAME=VALUE", help="model parameter")
    p.add_argument("--seed", type=int)
    p.add_argument("--grad-tol", type=float)
    p.add_argument("--max-steps", type=int)
    p.add_argument("--method", choices=["vumps", "flow"])
    p.add_argument("-v", "--verbose", action="store_true")


def _add_sector(p):
    p.add_argument("--sector", choices=["trivial", "nontrivial", "both"])
    p.add_argument("--flip", help="site operator mapping between the two ground states")
    p.add_argument("--kmin", type=float)
    p.add_argument("--kmax", type=float)
    p.add_argument("--points", type=int)
    p.add_argument("--full-zone", action="store_true", help="uniform grid on [-pi, pi)")
    p.add_argument("--solver-tol", type=float)


def build_parser():
    parser = argparse.ArgumentParser(prog="mpsdispersion", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ground", help="variational ground-state search")
    _add_common(p)
    p.add_argument("-D", "--bond-dim", type=int)
    p.add_argument("--state", help="initial state file")
    p.add_argument("--out", help="output state file")
    p.add_argument("--log", help="convergence CSV path")

    p = sub.add_parser("excite", help="momentum-resolved excitation spectrum")
    _add_common(p)
    _add_sector(p)
    p.add_argument("--state", help="ground-state file")
    p.add_argument("--nev", type=int)
    p.add_argument("--degeneracy-tol", type=float)
    p.add_argument("--jobs", type=int)
    p.add_argument("--format", choices=["csv", "json"])
    p.add_argument("--out", help="spectrum output path (default: stdout)")

    p = sub.add_parser("gap-table", help="gap and energy density versus bond dimension")
    _add_common(p)
    _add_sector(p)
    p.add_argument("--Ds", type=lambda s: [int(x) for x in s.split(",")],
                   help="comma-separated ascending bond dimensions")
    p.add_argument("-D", "--bond-dim", type=int)
    p.add_argument("--out", help="CSV output path (default: stdout)")

    p = sub.add_parser("validate", help="run invariant, oracle and benchmark checks")
    p.add_argument("suite", nargs="?", default="fast", choices=["fast", "all"])
    p.add_argument("--state", action="append", default=[], help="also verify this state file")
    p.add_argument("-v", "--verbose", action="store_true")

    p = sub.add_parser("show", help="pretty-print a state or spectrum file")
    p.add_argument("path")
    p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "validate":
            return cmd_validate(args.suite, args.state)
        if args.command == "show":
            return cmd_show(args.path)
        cfg = resolve_config(args)
        if args.command == "ground":
            return cmd_ground(cfg)
        if args.command == "excite":
            return cmd_excite(cfg)
        return cmd_gap_table(cfg)
    except (UsageError, UnknownOperator) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (CorruptFormat, InvariantViolation) as exc:
        print(f"error: invalid state file: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except MpsError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
