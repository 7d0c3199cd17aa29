"""Command line front end: ``nlfilt run <config.json>`` and ``nlfilt presets``.

A run writes CSVs, field dumps and ``summary.json`` into one output
directory. Exit codes: 0 success, 2 invalid configuration, 3 solver failure.
"""

from __future__ import annotations

import argparse
import copy
import json
import logging
import math
import sys
from pathlib import Path

import jsonschema
import numpy as np

from . import evolve as ev
from . import parametrix as px
from . import regularity as rg
from . import selfsimilar as ss
from .discretize import assemble
from .grid import Grid
from .model import DomainError, model_from_dict, validate_hypotheses

log = logging.getLogger("nlfilt")

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_SOLVER = 3

EXPERIMENTS = ("evolve", "barenblatt", "asymptotics", "regularity", "parametrix", "check-hypotheses")

_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_int = {"type": "integer"}


def _obj(props: dict, required=()) -> dict:
    return {"type": "object", "properties": props, "required": list(required), "additionalProperties": False}


GRID_SCHEMA = _obj({
    "dim": {"enum": [1, 2]}, "h": _pos, "R_dom": _pos,
    "mode": {"enum": ["extended", "periodic"]},
    "operator": {"enum": ["auto", "dense", "lazy"]},
}, ["h", "R_dom"])

MODEL_SCHEMA = _obj({
    "form": {"enum": ["fractional", "truncated", "oscillating"]},
    "sigma": _pos, "Lambda": {"type": ["number", "null"]}, "m": _pos, "epsilon": _num,
    "seed": _int, "dim": {"enum": [1, 2]}, "normalization": {"type": ["number", "null"]},
    "phi_form": {"enum": ["power", "stefan", "fast"]}, "coef": _pos,
}, ["sigma"])

EVOLVE_SCHEMA = _obj({
    "tau": _pos, "T": {"type": "number", "minimum": 0},
    "solver": {"enum": ["newton", "fixed-point"]}, "tol": _pos, "max_iter": _int, "cadence": _int,
}, ["tau", "T"])

INITIAL_SCHEMA = _obj({
    "kind": {"enum": ["box", "gaussian", "two_bump", "near_delta", "random_smooth"]},
    "mass": _num, "width": _pos, "center": _num, "mass_pos": _num, "mass_neg": _num, "sep": _num,
    "modes": _int, "amplitude": _num, "support": _pos,
}, ["kind"])

CONFIG_SCHEMA = _obj({
    "experiment": {"enum": list(EXPERIMENTS)},
    "description": {"type": "string"},
    "output": {"type": "string"},
    "seed": {"type": "integer", "minimum": 0},
    "verbose": {"type": "boolean"},
    "grid": GRID_SCHEMA,
    "model": MODEL_SCHEMA,
    "evolve": EVOLVE_SCHEMA,
    "initial": INITIAL_SCHEMA,
    "snapshots": {"type": "array", "items": {"type": "number", "minimum": 0}},
    "analysis": _obj({
        "decay_window": {"type": "array", "items": _pos, "minItems": 2, "maxItems": 2},
        "mass_radii": {"type": "array", "items": _pos},
    }),
    "barenblatt": _obj({
        "M": _num, "horizon": _pos, "per_octave": _int, "max_doublings": _int, "gap_tol": _pos,
        "grid": GRID_SCHEMA,
    }),
    "asymptotics": _obj({"t_end": _pos, "per_octave": _int, "t_min": _pos}),
    "regularity": _obj({
        "t0": _pos, "R0": _pos, "gamma_ratio": _pos, "levels": _int,
        "probes": {"type": "array", "items": _num}, "zero_crossing": {"type": "boolean"},
    }),
    "parametrix": _obj({
        "n": _int, "sigma": _pos, "T": _pos, "n_time": _int, "tol": _pos, "K_max": _int,
        "grading": {"type": ["number", "null"]}, "residual_points": _int, "check_lag": _pos,
        "coefficient": _obj({
            "name": {"enum": sorted(px.COEFFICIENTS)}, "csv": {"type": "string"},
            "value": _num, "amplitude": _num, "base": _num, "width": _pos,
        }),
    }),
}, ["experiment"])


class ConfigError(ValueError):
    """The configuration failed validation; ``problems`` lists every issue."""

    def __init__(self, problems):
        super().__init__("; ".join(problems))
        self.problems = list(problems)


# ---------------------------------------------------------------------------
# presets

PRESETS = {
    "thm1.1-mass": {
        "experiment": "evolve",
        "description": "box data, m=2, sigma=1: mass drift against boundary leakage",
        "grid": {"dim": 1, "h": 0.1, "R_dom": 20.0},
        "model": {"form": "fractional", "sigma": 1.0, "m": 2.0},
        "evolve": {"tau": 0.05, "T": 2.0},
        "initial": {"kind": "box", "mass": 1.0, "width": 1.0},
        "snapshots": [0.0, 1.0, 2.0],
        "analysis": {"mass_radii": [2.0, 4.0, 8.0]},
    },
    "thm1.3-smoothing": {
        "experiment": "evolve",
        "description": "near-delta data, m=2, sigma=1: fitted L_inf decay exponent",
        "grid": {"dim": 1, "h": 0.1, "R_dom": 40.0},
        "model": {"form": "fractional", "sigma": 1.0, "m": 2.0},
        "evolve": {"tau": 0.25, "T": 20.0},
        "initial": {"kind": "near_delta", "mass": 1.0},
        "analysis": {"decay_window": [2.0, 20.0]},
    },
    "thm1.4-asymptotics": {
        "experiment": "asymptotics",
        "description": "box data, m=2, sigma=1: t^alpha |u - B_M|_inf at dyadic times",
        "grid": {"dim": 1, "h": 0.1, "R_dom": 160.0, "operator": "lazy"},
        "model": {"form": "fractional", "sigma": 1.0, "m": 2.0},
        "initial": {"kind": "box", "mass": 1.0, "width": 1.0},
        "barenblatt": {"horizon": 4.0, "per_octave": 8, "gap_tol": 1e-2},
        "asymptotics": {"t_end": 16.0, "per_octave": 8},
    },
    "thm1.2-holder": {
        "experiment": "regularity",
        "description": "two-bump data, m=2, sigma=1: empirical Hoelder exponents at t=1",
        "grid": {"dim": 1, "h": 0.05, "R_dom": 8.0},
        "model": {"form": "fractional", "sigma": 1.0, "m": 2.0},
        "evolve": {"tau": 0.025, "T": 2.0},
        "initial": {"kind": "two_bump", "mass_pos": 1.0, "mass_neg": 0.5, "sep": 2.0, "width": 0.5},
        "regularity": {"t0": 1.0, "R0": 0.8, "gamma_ratio": 0.5, "levels": 4,
                       "probes": [-2.0, -1.0, 1.0, 2.0], "zero_crossing": True},
    },
    "appendix-parametrix": {
        "experiment": "parametrix",
        "description": "a = 1 + 0.25 sin x, sigma=1: Levi series, conservation and residuals",
        "parametrix": {"n": 64, "sigma": 1.0, "T": 1.0, "n_time": 48, "tol": 1e-5, "K_max": 20,
                       "coefficient": {"name": "sine", "amplitude": 0.25}, "residual_points": 20,
                       "check_lag": 0.5},
    },
}


def list_presets() -> str:
    return "".join(f"{name}\t{cfg['experiment']}\t{cfg['description']}\n" for name, cfg in PRESETS.items())


# ---------------------------------------------------------------------------
# config handling


def load_config(source: str) -> dict:
    """Parse a config file, or take a preset by name."""
    if source in PRESETS:
        return copy.deepcopy(PRESETS[source])
    try:
        text = Path(source).read_text()
    except OSError as exc:
        raise ConfigError([f"cannot read {source}: {exc}"]) from exc
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError([f"malformed JSON: {exc}"]) from exc
    return cfg


def validate_config(cfg) -> None:
    if not isinstance(cfg, dict):
        raise ConfigError(["config must be a JSON object"])
    v = jsonschema.Draft202012Validator(CONFIG_SCHEMA)
    errs = sorted(v.iter_errors(cfg), key=lambda e: list(e.absolute_path))
    if errs:
        raise ConfigError([f"{'/'.join(map(str, e.absolute_path)) or '<root>'}: {e.message}" for e in errs])
    need = {"evolve": ("grid", "model", "evolve", "initial"),
            "barenblatt": ("grid", "model"),
            "asymptotics": ("grid", "model", "initial"),
            "regularity": ("grid", "model", "evolve", "initial"),
            "parametrix": (),
            "check-hypotheses": ("model",)}[cfg["experiment"]]
    missing = [k for k in need if k not in cfg]
    if missing:
        raise ConfigError([f"experiment {cfg['experiment']!r} needs block(s): {', '.join(missing)}"])


def _grid(block: dict) -> Grid:
    return Grid(int(block.get("dim", 1)), float(block["h"]), float(block["R_dom"]), block.get("mode", "extended"))


def _operator(cfg: dict, block: dict, g: Grid):
    k, _ = model_from_dict(cfg["model"])
    choice = block.get("operator", "auto")
    dense = None if choice == "auto" else choice == "dense"
    return assemble(k, g, dense=dense)


def _initial(block: dict, g: Grid, seed: int):
    kind = block["kind"]
    kw = {k: v for k, v in block.items() if k != "kind"}
    if kind == "random_smooth":
        return ev.random_smooth(g, np.random.default_rng(seed), **kw)
    fn = {"box": ev.box, "gaussian": ev.gaussian, "two_bump": ev.two_bump, "near_delta": ev.near_delta}[kind]
    return fn(g, **kw)


def _evolve_cfg(block: dict) -> ev.EvolveConfig:
    return ev.EvolveConfig(**block)


def _csv(path: Path, header: str, rows) -> str:
    lines = [header] + [",".join(repr(float(v)) if not isinstance(v, (int, np.integer)) else str(int(v))
                                 for v in row) for row in rows]
    path.write_text("\n".join(lines) + "\n")
    return path.name


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.floating, float)):
        return None if not math.isfinite(float(x)) else float(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    return x


# ---------------------------------------------------------------------------
# experiments; each returns (metrics, outputs) and writes into ``out``


def _run_evolve(cfg, out: Path, seed: int, state: dict):
    g = _grid(cfg["grid"])
    L = _operator(cfg, cfg["grid"], g)
    _, nl = model_from_dict(cfg["model"])
    u0 = _initial(cfg["initial"], g, seed)
    try:
        traj = ev.evolve(u0, L, nl, _evolve_cfg(cfg["evolve"]))
    except ev.EvolveError as exc:
        state["partial"] = True
        exc.trajectory.to_csv(out / "diagnostics.csv")
        state["outputs"].append("diagnostics.csv")
        raise
    traj.to_csv(out / "diagnostics.csv")
    state["outputs"].append("diagnostics.csv")
    for t in cfg.get("snapshots", []):
        name = f"field_t{t:g}.bin"
        traj.at(float(t)).save(out / name)
        state["outputs"].append(name)
    mass = traj.column("mass")
    metrics = {"rows": len(traj.rows), "mass_drift": float(np.max(np.abs(mass - mass[0]))),
               "boundary_leakage": ev.trajectory_leakage(traj), "exterior_loss": traj.exterior_loss}
    an = cfg.get("analysis", {})
    if "decay_window" in an:
        fit = ev.fit_decay_exponent(traj, tuple(an["decay_window"]))
        metrics["gamma_hat"] = fit.gamma_hat
        metrics["delta_hat"] = fit.delta_hat
        metrics["decay_fit_residual"] = fit.residual
    if "mass_radii" in an and L.kernel.translation_invariant:
        p = ev.mass_conservation_probe(traj, an["mass_radii"])
        metrics["mass_probe"] = {"R": p.R, "drift": p.drift, "bound": p.bound}
    return metrics


def _barenblatt_from(cfg, block: dict, g_default: Grid, op_default=None):
    k, nl = model_from_dict(cfg["model"])
    g = _grid(block["grid"]) if "grid" in block else g_default
    L = op_default if (op_default is not None and g.same_as(g_default)) else None
    if L is None and nl.m > 1:
        L = _operator(cfg, block.get("grid", cfg["grid"]), g)
    kw = {k2: block[k2] for k2 in ("horizon", "per_octave", "max_doublings", "gap_tol") if k2 in block}
    return ss.barenblatt(float(block.get("M", 1.0)), nl.m, k.sigma, g, operator=L, **kw)


def _run_barenblatt(cfg, out: Path, seed: int, state: dict):
    g = _grid(cfg["grid"])
    B = _barenblatt_from(cfg, cfg.get("barenblatt", {}), g)
    B.save(out / "profile")
    state["outputs"] += ["profile.bin", "profile.json"]
    B.Z.to_csv(out / "profile.csv")
    state["outputs"].append("profile.csv")
    return {"mass": B.mass(), "invariants": B.check_invariants(), "history": list(B.history),
            "horizon": B.horizon, "exponents": B.exps.as_dict()}


def _run_asymptotics(cfg, out: Path, seed: int, state: dict):
    g = _grid(cfg["grid"])
    L = _operator(cfg, cfg["grid"], g)
    _, nl = model_from_dict(cfg["model"])
    b = dict(cfg.get("barenblatt", {}))
    u0 = _initial(cfg["initial"], g, seed)
    b.setdefault("M", u0.integral())
    B = _barenblatt_from(cfg, b, g, L)
    a = cfg.get("asymptotics", {})
    t_end = float(a.get("t_end", 64.0))
    po = int(a.get("per_octave", 16))
    t_min = float(a.get("t_min", 2.0 ** -6))
    stops = [2.0 ** j for j in range(int(math.floor(math.log2(t_end))) + 1)]
    sched = np.unique(np.concatenate([ss.geometric_times(t_end, po, t_min), stops]))
    snaps = ss.march(u0, L, nl, sched, stops)
    series = ss.metric_series(snaps, B)
    state["outputs"].append(_csv(out / "asymptotics.csv", "t,metric", series))
    vals = [v for _, v in series]
    return {"metric_series": series, "ratio_last_first": vals[-1] / vals[0] if vals else None,
            "profile_history": list(B.history), "profile_mass": B.mass()}


def _run_regularity(cfg, out: Path, seed: int, state: dict):
    g = _grid(cfg["grid"])
    L = _operator(cfg, cfg["grid"], g)
    _, nl = model_from_dict(cfg["model"])
    traj = ev.evolve(_initial(cfg["initial"], g, seed), L, nl, _evolve_cfg(cfg["evolve"]))
    traj.to_csv(out / "diagnostics.csv")
    state["outputs"].append("diagnostics.csv")
    r = cfg.get("regularity", {})
    t0 = float(r.get("t0", 1.0))
    probes = [float(p) for p in r.get("probes", [])]
    if r.get("zero_crossing", False):
        z = zero_crossing(traj.at(t0))
        if z is None:
            raise DomainError("no sign change at t0 for a degeneracy probe")
        probes.append(z)
    reports = {}
    for j, p in enumerate(probes):
        rep = rg.holder_fit(traj, (p, t0), float(r.get("R0", 0.8)), float(r.get("gamma_ratio", 0.5)),
                            int(r.get("levels", 4)))
        name = f"oscillation_{j}.csv"
        rep.to_csv(out / name)
        state["outputs"].append(name)
        reports[f"{p!r}"] = rep.summary()
    return {"probes": probes, "alpha_hat": {k: v["alpha_hat"] for k, v in reports.items()}, "fits": reports}


def zero_crossing(u) -> float | None:
    """First x where a 1D field changes sign from + to -, by linear interpolation."""
    x = u.grid.axis
    v = u.values
    idx = np.nonzero((v[:-1] > 0) & (v[1:] <= 0))[0]
    if idx.size == 0:
        return None
    i = int(idx[0])
    return float(x[i] - v[i] * (x[i + 1] - x[i]) / (v[i + 1] - v[i]))


def _run_parametrix(cfg, out: Path, seed: int, state: dict):
    p = cfg.get("parametrix", {})
    g = Grid.periodic(int(p.get("n", 64)))
    c = dict(p.get("coefficient", {"name": "sine"}))
    if "csv" in c:
        a = px.coefficient_from_csv(Path(c["csv"]).read_text(), g)
    else:
        a = px.COEFFICIENTS[c.pop("name", "sine")](g, **c)
    sigma = float(p.get("sigma", 1.0))
    S = px.levi_series(a, sigma, T=float(p.get("T", 1.0)), n_time=int(p.get("n_time", 48)),
                       tol=float(p.get("tol", 1e-5)), K_max=int(p.get("K_max", 20)), grading=p.get("grading"))
    (out / "levi_norms.csv").write_text(S.norm_csv())
    state["outputs"].append("levi_norms.csv")
    fs = px.fundamental_solution(a, S)
    lag = float(p.get("check_lag", 0.5))
    rng = np.random.default_rng(seed)
    n_pts = int(p.get("residual_points", 20))
    lo, hi = 2 * fs.min_gap, fs.horizon - 2 * fs.min_gap
    pts = [(int(rng.integers(g.n_axis)), float(rng.uniform(lo, hi)), int(rng.integers(g.n_axis)))
           for _ in range(n_pts)]
    res = fs.residual(pts)
    G = fs.matrix(lag)
    g.field(G[:, g.n_axis // 2], lag).save(out / "gamma_slice.bin")
    state["outputs"].append("gamma_slice.bin")
    return {"K": S.K, "converged": S.converged, "levi_norms": S.norms, "grading": S.grading,
            "lambda1": a.lambda1, "lambda2": a.lambda2, "holder_exponent": a.holder_exponent(),
            "mass_x_max_dev": float(np.max(np.abs(fs.mass_x(lag) - 1.0))),
            "mass_xi_max_dev": float(np.max(np.abs(fs.mass_xi(lag) - 1.0))),
            "gamma_min": float(np.min(G)), "residual_max": float(np.max(res)) if n_pts else None}


def _run_check(cfg, out: Path, seed: int, state: dict):
    k, nl = model_from_dict(cfg["model"])
    rep = validate_hypotheses(k, nl)
    checks = [{"name": c.name, "passed": bool(c.passed), "worst_ratio": c.worst_ratio, "detail": str(c.detail)}
              for c in rep.checks]
    (out / "hypotheses.json").write_text(json.dumps(_jsonable(checks), indent=2, sort_keys=True) + "\n")
    state["outputs"].append("hypotheses.json")
    return {"passed": rep.passed, "failed": [c["name"] for c in checks if not c["passed"]]}


RUNNERS = {"evolve": _run_evolve, "barenblatt": _run_barenblatt, "asymptotics": _run_asymptotics,
           "regularity": _run_regularity, "parametrix": _run_parametrix, "check-hypotheses": _run_check}


def run(source: str, out=None, seed=None, verbose=None) -> int:
    """Validate and execute one run; returns the exit code."""
    try:
        cfg = load_config(source)
        validate_config(cfg)
    except ConfigError as exc:
        for p in exc.problems:
            print(f"nlfilt: invalid config: {p}", file=sys.stderr)
        return EXIT_INVALID
    if seed is not None:
        cfg["seed"] = int(seed)
    if verbose:
        cfg["verbose"] = True
    if out is not None:
        cfg["output"] = str(out)
    logging.basicConfig(level=logging.INFO if cfg.get("verbose") else logging.WARNING,
                        format="%(name)s: %(message)s")
    seed_v = int(cfg.get("seed", 0))
    outdir = Path(cfg.get("output", "nlfilt-out"))
    state = {"outputs": [], "partial": False}
    summary = {"experiment": cfg["experiment"], "inputs": cfg, "status": "ok"}
    code = EXIT_OK
    try:
        outdir.mkdir(parents=True, exist_ok=True)
        log.info("running %s into %s", cfg["experiment"], outdir)
        summary["metrics"] = RUNNERS[cfg["experiment"]](cfg, outdir, seed_v, state)
    except (DomainError, ValueError, KeyError) as exc:
        # bad parameter values that the schema cannot see
        summary.update(status="invalid", error=str(exc))
        code = EXIT_INVALID
    except (ss.SolverError, ev.EvolveError, ev.SolverError, px.LeviDivergence, np.linalg.LinAlgError) as exc:
        summary.update(status="solver_failure", error=str(exc))
        if isinstance(exc, px.LeviDivergence):
            summary["levi_norms"] = exc.norms
        code = EXIT_SOLVER
    except OSError as exc:
        print(f"nlfilt: cannot write outputs: {exc}", file=sys.stderr)
        return EXIT_INVALID
    summary["partial"] = bool(state["partial"] or code != EXIT_OK)
    summary["outputs"] = state["outputs"]
    (outdir / "summary.json").write_text(json.dumps(_jsonable(summary), indent=2, sort_keys=True) + "\n")
    if code != EXIT_OK:
        print(f"nlfilt: {summary['status']}: {summary.get('error')}", file=sys.stderr)
    else:
        log.info("wrote %s", ", ".join(state["outputs"] + ["summary.json"]))
    return code


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="nlfilt", description="Nonlocal filtration equation lab.")
    sub = ap.add_subparsers(dest="cmd", required=True)
    r = sub.add_parser("run", help="run a JSON config (or a preset name)")
    r.add_argument("config")
    r.add_argument("--out", default=None, help="output directory")
    r.add_argument("--seed", type=int, default=None)
    r.add_argument("--verbose", action="store_true")
    p = sub.add_parser("presets", help="list built-in presets")
    p.add_argument("--show", metavar="NAME", default=None, help="print one preset as JSON")
    sub.add_parser("schema", help="print the config JSON schema")
    args = ap.parse_args(argv)
    if args.cmd == "presets":
        if args.show is not None:
            if args.show not in PRESETS:
                print(f"nlfilt: unknown preset {args.show!r}", file=sys.stderr)
                return EXIT_INVALID
            print(json.dumps(PRESETS[args.show], indent=2, sort_keys=True))
        else:
            sys.stdout.write(list_presets())
        return EXIT_OK
    if args.cmd == "schema":
        print(json.dumps(CONFIG_SCHEMA, indent=2, sort_keys=True))
        return EXIT_OK
    return run(args.config, args.out, args.seed, args.verbose or None)


if __name__ == "__main__":
    sys.exit(main())
