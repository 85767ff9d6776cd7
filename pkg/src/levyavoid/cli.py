"""Scenario runner: ``levyavoid run --scenario file.toml --out dir``.

Scenarios are TOML files with one table per module.  Every run writes
``results.json`` (sorted keys, shortest round-trip floats) and
``manifest.json`` (config hash, seed, versions), plus CSV series with
``--format csv``.  Exit status is 0 on success, 2 when every verdict is
Indeterminate and 1 on errors.
"""
from __future__ import annotations

import argparse
import copy
import hashlib
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import SCHEMA_VERSION, __version__
from . import exponents as ex
from .criteria import (
    CONVERGES,
    DIVERGES,
    INDETERMINATE,
    ClassifyOptions,
    Schedule,
    classify,
    integral_criterion,
    psi_form_criterion,
    ratio_boundedness_test,
    series_criterion,
    series_integral_consistency,
    wiener_annuli_sum,
    wiener_whitney_sum,
    write_series_csv,
)
from .errors import ConfigError, VersionError
from .geometry import (
    ExplicitFamily,
    GeometricFamily,
    LatticeFamily,
    RegularSpec,
    ShellFamily,
    check_separation,
    power_law,
    read_family_csv,
)
from .green import GreenModel
from .poisson import IntensityModel, expected_wiener_sum, percolation_integral, validate_intensity

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

EXIT_OK, EXIT_ERROR, EXIT_INDETERMINATE = 0, 1, 2
NUMBER = (int, float)

SCHEMA = {
    "": {"name": str, "seed": int, "output": str, "schema_version": int, "exponent": dict, "green": dict,
         "family": dict, "intensity": dict, "criteria": dict, "simulation": dict, "sweep": dict},
    "exponent": {"kind": str, "beta": NUMBER, "a": NUMBER, "b": NUMBER, "d": int},
    "green": {"mode": str, "C_G": NUMBER, "C_E": NUMBER},
    "family": {"type": str, "gamma": NUMBER, "scale": NUMBER, "spacing": NUMBER, "min_norm": NUMBER,
               "base": NUMBER, "radius": NUMBER, "n_min": int, "count0": int, "q": NUMBER, "a": NUMBER,
               "radius0": NUMBER, "shell": NUMBER, "per_doubling": int, "csv": str, "eps": NUMBER, "R": NUMBER},
    "intensity": {"gamma": NUMBER, "s": NUMBER, "mu0": NUMBER, "phi0": NUMBER, "C_P": NUMBER},
    "criteria": {"run": list, "start": NUMBER, "doublings": int, "lambdas": list, "c0": NUMBER,
                 "separation_radius": NUMBER},
    "simulation": {"task": str, "paths": int, "R_esc": NUMBER, "start": list, "center": list, "radius": NUMBER,
                   "truncations": list, "s": list, "start_fractions": list, "rho": NUMBER, "levels": int,
                   "w": NUMBER, "ratios": list, "envelope": bool, "bias_check": bool, "k_far": NUMBER,
                   "k_near": NUMBER, "dt": NUMBER, "T_max": NUMBER, "antithetic": bool},
    "sweep": {"parameter": str, "values": list},
}
REQUIRED = {"": ("name", "exponent"), "sweep": ("parameter", "values"), "simulation": ("task",)}
CRITERIA = ("series", "psi_form", "integral", "ratio", "whitney", "annuli", "separation", "classify",
            "consistency", "percolation", "expected_wiener", "intensity_check")
VERB_CRITERIA = {"classify": ["classify"], "series": ["series", "psi_form"], "integral": ["integral", "ratio"],
                 "wiener": ["whitney", "annuli"]}


# scenario parsing


def load_scenario(path):
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as e:
        raise ConfigError(f"cannot read scenario {path}: {e.strerror}") from e
    try:
        cfg = tomllib.loads(raw.decode("utf-8"))
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"{path}: {e}") from e
    validate_scenario(cfg, str(path))
    return cfg


def validate_scenario(cfg, where="scenario"):
    for section, keys in SCHEMA.items():
        table = cfg if not section else cfg.get(section)
        if table is None:
            continue
        label = f"[{section}] " if section else ""
        if not isinstance(table, dict):
            raise ConfigError(f"{where}: {section} must be a table")
        for key, value in table.items():
            if key not in keys:
                raise ConfigError(f"{where}: {label}unknown key '{key}'")
            want = keys[key]
            if isinstance(value, bool) and want is not bool:
                raise ConfigError(f"{where}: {label}{key}: expected {_type_name(want)}, got a boolean")
            if not isinstance(value, want):
                raise ConfigError(f"{where}: {label}{key}: expected {_type_name(want)}, got {value!r}")
        for key in REQUIRED.get(section, ()):
            if key not in table:
                raise ConfigError(f"{where}: {label}missing required key '{key}'")
    version = cfg.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise VersionError(f"{where}: schema_version {version} is not supported (expected {SCHEMA_VERSION})")
    for name in cfg.get("criteria", {}).get("run", []):
        if name not in CRITERIA:
            raise ConfigError(f"{where}: [criteria] run: unknown criterion '{name}'")


def _type_name(t):
    if isinstance(t, tuple):
        return "a number"
    return {str: "a string", int: "an integer", dict: "a table", list: "an array", bool: "a boolean"}[t]


def build_exponent(spec):
    kind = spec.get("kind", "stable")
    d = spec.get("d", 3)
    if kind == "brownian":
        return ex.brownian(d)
    if kind == "stable":
        return ex.stable(spec.get("beta", 2.0), d)
    if kind == "brownian_plus_stable":
        return ex.brownian_plus_stable(spec["beta"], d)
    if kind == "stable_sum":
        return ex.stable_sum(spec["a"], spec["b"], d)
    raise ConfigError(f"[exponent] kind: unsupported kind '{kind}'")


def build_model(exp, spec):
    mode = spec.get("mode", "auto")
    if mode not in ("auto", "exact", "envelope"):
        raise ConfigError(f"[green] mode: unknown mode '{mode}'")
    kw = {k: spec[k] for k in ("C_E",) if k in spec}
    if mode == "envelope" and "C_G" in spec:
        kw["C_G"] = spec["C_G"]
    return GreenModel.for_exponent(exp, mode=mode, **kw)


def build_family(spec, d, base_dir=Path(".")):
    kind = spec.get("type", "lattice")
    if kind == "lattice":
        return LatticeFamily(d, power_law(spec.get("gamma", 2.0), spec.get("scale", 0.5)), spec.get("spacing", 1.0),
                             spec.get("min_norm", 2.0), label=f"lattice(gamma={spec.get('gamma', 2.0)})")
    if kind == "regular":
        gamma = spec.get("gamma", 2.0)
        return RegularSpec(spec.get("eps", 0.4), spec.get("R", 0.9 * math.sqrt(d)),
                           power_law(gamma, spec.get("scale", 0.5)), f"power_law({gamma})")
    if kind == "geometric":
        r = spec.get("radius", 1.0)
        return GeometricFamily(d, spec.get("base", 2.0), lambda n: r, spec.get("n_min", 2))
    if kind == "shell":
        return ShellFamily(spec.get("count0", 8), spec.get("q", 1.0), spec.get("a", 0.0), spec.get("radius0", 0.05),
                           spec.get("shell", 1.5), spec.get("per_doubling", 1))
    if kind == "explicit":
        centers, radii = read_family_csv(base_dir / spec["csv"])
        return ExplicitFamily(centers, radii)
    raise ConfigError(f"[family] type: unknown family type '{kind}'")


def _set_path(cfg, dotted, value):
    parts = dotted.split(".")
    table = cfg
    for p in parts[:-1]:
        table = table.setdefault(p, {})
    table[parts[-1]] = value


def sweep_points(cfg):
    sweep = cfg.get("sweep")
    if not sweep:
        return [(None, cfg)]
    points = []
    for v in sweep["values"]:
        c = copy.deepcopy(cfg)
        c.pop("sweep")
        _set_path(c, sweep["parameter"], v)
        validate_scenario(c, f"sweep value {v!r}")
        points.append((v, c))
    return points


# running


def _schedule(crit):
    return Schedule(crit.get("start", 1.0), crit.get("doublings", 12))


def _needs_family(family, name):
    if family is None or isinstance(family, RegularSpec):
        raise ConfigError(f"criterion '{name}' needs a ball family in [family]")
    return family


def _regular(family, name):
    if isinstance(family, RegularSpec):
        return family
    if family is not None and family.regular is not None:
        return family.regular
    raise ConfigError(f"criterion '{name}' needs a regular family (lattice or regular) in [family]")


def run_criteria(cfg, base_dir=Path(".")):
    exp = build_exponent(cfg["exponent"])
    model = build_model(exp, cfg.get("green", {}))
    family = build_family(cfg["family"], exp.d, base_dir) if "family" in cfg else None
    intensity = None
    if "intensity" in cfg:
        s = cfg["intensity"]
        intensity = IntensityModel.power_law(s.get("gamma", 1.0), s.get("s", 0.0), exp.d, s.get("mu0", 1.0),
                                             s.get("phi0", 0.25), s.get("C_P"))
    crit = cfg.get("criteria", {})
    sched = _schedule(crit)
    out = {}
    for name in crit.get("run", []):
        if name == "series":
            out[name] = series_criterion(_needs_family(family, name), model, sched)
        elif name == "psi_form":
            out[name] = psi_form_criterion(_needs_family(family, name), exp, sched)
        elif name == "integral":
            out[name] = integral_criterion(_regular(family, name), model, schedule=Schedule(crit.get("start", 1.0),
                                                                                            crit.get("doublings", 16)))
        elif name == "ratio":
            label, slope = ratio_boundedness_test(_regular(family, name), model)
            out[name] = {"classification": label, "slope": slope}
        elif name == "whitney":
            out[name] = wiener_whitney_sum(_needs_family(family, name), model, sched)
        elif name == "annuli":
            for lam in crit.get("lambdas", [3.0]):
                out[f"annuli_{lam:g}"] = wiener_annuli_sum(_needs_family(family, name), model, lam, sched)
        elif name == "separation":
            out[name] = check_separation(_needs_family(family, name), exp, model, truncation=sched.last,
                                         c0=crit.get("c0"))
        elif name == "classify":
            opts = ClassifyOptions(sched, crit.get("separation_radius", 64.0), crit.get("c0"))
            out[name] = classify(_needs_family(family, name), exp, model, opts)
        elif name == "consistency":
            out[name] = series_integral_consistency(_regular(family, name), model)
        elif name in ("percolation", "expected_wiener", "intensity_check"):
            if intensity is None:
                raise ConfigError(f"criterion '{name}' needs an [intensity] table")
            if name == "percolation":
                out[name] = percolation_integral(intensity, model, Schedule(crit.get("start", 1.0),
                                                                            crit.get("doublings", 24)))
            elif name == "expected_wiener":
                out[name] = expected_wiener_sum(intensity, model, Schedule(crit.get("start", 1.0),
                                                                           crit.get("doublings", 24)))
            else:
                out[name] = validate_intensity(intensity, exp, model)
    return exp, model, family, out


def run_simulation(cfg, exp, model, family, threads=1):
    from . import simulate as sim

    s = cfg["simulation"]
    seed = int(cfg.get("seed", 0))
    kw = {k: s[k] for k in ("k_far", "k_near", "dt", "T_max", "antithetic") if k in s}
    task = s["task"]
    paths = s.get("paths", 10_000)
    d = exp.d
    if task == "single_ball_hit":
        start = s.get("start", [2.0] + [0.0] * (d - 1))
        c = sim.SimConfig(paths=paths, seed=seed, R_esc=s.get("R_esc", 8.0), threads=threads, **kw)
        return sim.estimate_single_ball_hit(exp, start, (s.get("center", [0.0] * d), s.get("radius", 1.0)), c,
                                            model=model if s.get("envelope", True) else None,
                                            C_E=model.C_E, bias_check=s.get("bias_check", False))
    if task == "escape":
        fam = _needs_family(family, "simulation")
        ts = s.get("truncations", [16.0])
        c = sim.SimConfig(paths=paths, seed=seed, R_esc=s.get("R_esc", 4.0 * max(ts)), threads=threads, **kw)
        ests, ok = sim.escape_ladder(fam, exp, ts, c)
        return {"truncations": ts, "estimates": [e.to_dict() for e in ests], "nonincreasing": ok}
    if task == "overshoot":
        c = sim.SimConfig(paths=paths, seed=seed, threads=threads, **kw)
        r = s.get("radius", 1.0)
        return sim.estimate_overshoot(exp, r, s.get("s", [2 * r * 2**k for k in range(6)]), c,
                                      tuple(s.get("start_fractions", (0.0, 0.5))))
    if task == "recursion":
        c = sim.SimConfig(paths=paths, seed=seed, threads=threads, **kw)
        rows = sim.recursion_diagnostic(_needs_family(family, "simulation"), exp, s.get("rho", 4.0),
                                        s.get("levels", 4), c, s.get("w"))
        return {"rows": [r.to_dict() for r in rows], "holds": all(r.holds for r in rows)}
    if task == "fit_CE":
        c = sim.SimConfig(paths=paths, seed=seed, threads=threads, **kw)
        return sim.fit_CE(exp, model, c, tuple(s.get("ratios", (2, 4, 8, 16))))
    raise ConfigError(f"[simulation] task: unknown task '{task}'")


def to_jsonable(obj):
    """Plain JSON types; non-finite floats become the strings ``inf``, ``-inf`` and ``nan``."""
    if hasattr(obj, "to_dict"):
        return to_jsonable(obj.to_dict())
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple, np.ndarray)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else ("nan" if math.isnan(x) else ("inf" if x > 0 else "-inf"))
    return obj


def dump_json(obj):
    return json.dumps(to_jsonable(obj), sort_keys=True, indent=2, allow_nan=False) + "\n"


def config_hash(cfg):
    return hashlib.sha256(json.dumps(cfg, sort_keys=True, separators=(",", ":")).encode()).hexdigest()


def _classifications(results):
    found = []
    for point in results:
        for value in point["results"].values():
            if isinstance(value, dict):
                for key in ("classification", "verdict"):
                    if value.get(key) in (CONVERGES, DIVERGES, INDETERMINATE, "Avoidable", "Unavoidable"):
                        found.append(value[key])
    return found


def execute(cfg, out_dir, fmt="json", threads=1, base_dir=Path("."), only=None, simulate_only=False):
    """Run a parsed scenario and write its artifacts; returns the exit status."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cfg = copy.deepcopy(cfg)
    if only is not None:
        cfg.setdefault("criteria", {})["run"] = only
    if simulate_only:
        cfg.setdefault("criteria", {})["run"] = []
        if "simulation" not in cfg:
            raise ConfigError("scenario has no [simulation] table")
    elif only is not None:
        cfg.pop("simulation", None)
    points = []
    files = ["results.json"]
    for k, (value, point_cfg) in enumerate(sweep_points(cfg)):
        exp, model, family, res = run_criteria(point_cfg, base_dir)
        if "simulation" in point_cfg:
            res["simulation"] = run_simulation(point_cfg, exp, model, family, threads)
        if fmt == "csv":
            for name, verdict in res.items():
                if hasattr(verdict, "csv_rows"):
                    fname = f"point{k}_{name}.csv"
                    write_series_csv(out_dir / fname, verdict)
                    files.append(fname)
        points.append({"sweep_value": value, "results": to_jsonable(res)})
    results = {"scenario": cfg["name"], "sweep": cfg.get("sweep"), "points": points}
    (out_dir / "results.json").write_text(dump_json(results))
    verdicts = _classifications(points)
    status = EXIT_INDETERMINATE if verdicts and all(v == INDETERMINATE for v in verdicts) else EXIT_OK
    manifest = {"scenario": cfg["name"], "config": cfg, "config_sha256": config_hash(cfg),
                "seed": int(cfg.get("seed", 0)), "version": __version__, "schema_version": SCHEMA_VERSION,
                "files": files + ["manifest.json"], "exit_status": status}
    (out_dir / "manifest.json").write_text(dump_json(manifest))
    return status


# comparison


def _load_run(manifest_path):
    p = Path(manifest_path)
    if p.is_dir():
        p = p / "manifest.json"
    manifest = json.loads(p.read_text())
    results = json.loads((p.parent / "results.json").read_text())
    return manifest, results


def _ci_equal(a, b):
    ci = 0.0
    for x in (a, b):
        c = x.get("ci")
        ci += float(c) if isinstance(c, (int, float)) else 0.0
    return abs(float(a["estimate"]) - float(b["estimate"])) <= ci


def _diff(a, b, path, out):
    if isinstance(a, dict) and isinstance(b, dict):
        if "estimate" in a and "estimate" in b and isinstance(a["estimate"], (int, float)):
            if not _ci_equal(a, b):
                out.append({"path": path + "/estimate", "a": a["estimate"], "b": b["estimate"], "kind": "estimate"})
            return
        for k in sorted(set(a) | set(b)):
            if k not in a or k not in b:
                out.append({"path": f"{path}/{k}", "a": a.get(k), "b": b.get(k), "kind": "missing"})
            else:
                _diff(a[k], b[k], f"{path}/{k}", out)
        return
    if isinstance(a, list) and isinstance(b, list):
        if len(a) != len(b):
            out.append({"path": path, "a": len(a), "b": len(b), "kind": "length"})
            return
        for i, (x, y) in enumerate(zip(a, b)):
            _diff(x, y, f"{path}/{i}", out)
        return
    if a != b:
        kind = "verdict" if path.endswith(("classification", "verdict")) else "value"
        out.append({"path": path, "a": a, "b": b, "kind": kind})


def compare(run_a, run_b):
    """Field-wise diff of two runs; Monte Carlo estimates compare equal when they agree within their CIs."""
    man_a, res_a = _load_run(run_a)
    man_b, res_b = _load_run(run_b)
    if man_a.get("schema_version") != man_b.get("schema_version"):
        raise VersionError(f"schema versions differ: {man_a.get('schema_version')} vs {man_b.get('schema_version')}")
    diffs = []
    _diff(res_a, res_b, "", diffs)
    diffs = [d for d in diffs if d["kind"] in ("verdict", "estimate", "missing", "length")
             or not _is_mc_detail(d["path"])]
    return {"identical": not diffs, "diffs": diffs, "seeds": [man_a.get("seed"), man_b.get("seed")]}


def _is_mc_detail(path):
    """Monte Carlo counts and per-level details move with the seed; only their headline estimate is compared."""
    return "/simulation/" in path + "/"


# entry point


def _parser():
    p = argparse.ArgumentParser(prog="levyavoid", description="Avoidability criteria and hitting simulations.")
    sub = p.add_subparsers(dest="verb", required=True)
    for verb in ("run", "classify", "series", "integral", "wiener", "simulate"):
        s = sub.add_parser(verb)
        s.add_argument("--scenario", required=True)
        s.add_argument("--out")
        s.add_argument("--seed", type=int)
        s.add_argument("--threads", type=int, default=1)
        s.add_argument("--format", choices=("json", "csv"), default="json")
    c = sub.add_parser("compare")
    c.add_argument("run_a")
    c.add_argument("run_b")
    return p


def main(argv=None):
    args = _parser().parse_args(argv)
    try:
        if args.verb == "compare":
            sys.stdout.write(dump_json(compare(args.run_a, args.run_b)))
            return EXIT_OK
        cfg = load_scenario(args.scenario)
        if args.seed is not None:
            if not 0 <= args.seed < 2**64:
                raise ConfigError("--seed must be an unsigned 64-bit integer")
            cfg["seed"] = args.seed
        out = args.out or cfg.get("output") or f"out/{cfg['name']}"
        status = execute(cfg, out, args.format, args.threads, Path(args.scenario).parent,
                         only=VERB_CRITERIA.get(args.verb), simulate_only=args.verb == "simulate")
        print(f"{cfg['name']}: wrote {out} (exit {status})")
        return status
    except Exception as e:  # noqa: BLE001 - every failure maps to exit status 1
        print(f"levyavoid: error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_ERROR
