"""Batch front end: ``mayersens <verb> [options]``.

Verbs run pipeline stages in dependency order
(audit -> hjb -> flow -> verify -> atlas) and write one report bundle per
invocation under ``<out>/<UTC timestamp>/``:

* ``config.json``: the resolved run configuration;
* ``audit.json``, ``value_field.vfld``, ``value_t0.csv``, ``dpp.json``;
* ``arcs/<arc id>.csv`` (columns ``t,x1..,p1..``);
* ``reports/<relation>__<arc id>.json`` and ``.csv`` (``t,residual,tolerance``);
* ``atlas.json``;
* ``summary.json`` (verdicts and exit status);
* ``manifest.json``: sha256 of every other file.

Report files carry no timestamps or timings, so identical configurations
and seeds give byte-identical bundles. Exit status: 0 every verdict passes,
1 some verification fails, 2 configuration error, 3 numerical stage error.
"""

import argparse
import datetime as _dt
import hashlib
import json
import os
import sys
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np

from . import benchmarks as bench
from . import flow
from . import sensitivity as sens
from .dynamics import audit_hypotheses
from .exceptions import CFLError, ConfigError, MayerSensError, NumericalError
from .expr import evaluate_constant
from .hjb import (GridSpec, ValueField, dpp_check, plan_grid, random_admissible_trajectories, solve_hjb,
                  synthesize_trajectory)
from .problem_file import load_problem

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3
STAGES = ("audit", "hjb", "flow", "verify", "atlas")
VERIFY_IDS = sens.RELATIONS + ("dpp", "max_principle", "optimality")
VERBS = {
    "audit": ("audit",),
    "solve": ("hjb",),
    "flow": ("hjb", "flow"),
    "verify": ("audit", "hjb", "flow", "verify"),
    "atlas": ("hjb", "atlas"),
    "run": STAGES,
}

# default arc starts per registry entry: (t, x)
DEFAULT_STARTS = {
    "eikonal1d": [(0.0, (2.0,))],
    "two_ray": [(0.0, (0.5,))],
    "ball_linear": [(0.0, (-0.5, 0.5)), (0.0, (0.0, 0.0))],
    "quartic_body": [(0.0, (0.0, 0.0))],
    "interval_fg": [(0.0, (0.5,))],
    "flat_eikonal1d": [(0.5, (0.0,))],
}
DEFAULT_ATLAS = {"two_ray": (0.0, (0.0,))}


class StageError(MayerSensError):
    def __init__(self, stage, exc):
        self.stage = stage
        self.cause = exc
        super().__init__(f"[{stage}] {type(exc).__name__}: {exc}")


@dataclass
class RunConfig:
    problem: str
    grid_nt: int = None
    grid_nx: tuple = None
    pad: object = None
    steps: int = 1000
    policy: str = "min_norm"
    relations: tuple = ("partial_proximal",)
    tol_factor: float = 3.0
    c0_max: float = 10.0
    radius: float = 0.1
    out: str = "runs"
    seed: int = 0
    starts: list = None
    atlas_point: tuple = None
    arc_source: str = "auto"
    dpp_count: int = 100
    run_id: str = None

    def validate(self):
        if self.tol_factor <= 0 or self.c0_max < 0 or self.radius <= 0:
            raise ConfigError("tolerances and the radius must be positive")
        if self.steps < 2:
            raise ConfigError("steps must be at least 2")
        if self.policy not in flow.POLICIES:
            raise ConfigError(f"unknown policy {self.policy!r}; choose from {', '.join(flow.POLICIES)}")
        bad = [r for r in self.relations if r not in VERIFY_IDS]
        if bad:
            raise ConfigError(f"unknown verification id(s) {bad}; known: {', '.join(VERIFY_IDS)}")
        if self.arc_source not in ("auto", "closed_form", "characteristic"):
            raise ConfigError(f"unknown arc source {self.arc_source!r}")


# ---------------------------------------------------------------------------
# configuration

_CONFIG_KEYS = {f.name for f in RunConfig.__dataclass_fields__.values()}


def _parse_point(text, what="point"):
    try:
        vals = [float(v) for v in str(text).replace(";", ",").split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"{what} must be comma-separated numbers: {text!r}") from None
    if len(vals) < 2:
        raise ConfigError(f"{what} needs t and at least one coordinate: {text!r}")
    return (vals[0], tuple(vals[1:]))


def _parse_nx(text):
    parts = [p for p in str(text).replace("x", ",").split(",") if p.strip()]
    try:
        vals = tuple(int(p) for p in parts)
    except ValueError:
        raise ConfigError(f"grid size must be integers: {text!r}") from None
    return vals


def read_config_file(path):
    """``key = value`` lines (``#`` comments) with :class:`RunConfig` keys."""
    out = {}
    src = str(path)
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError("expected 'key = value'", lineno, 1, src)
            key, value = (s.strip() for s in line.split("=", 1))
            if key not in _CONFIG_KEYS:
                raise ConfigError(f"unknown key {key!r}", lineno, raw.index(key) + 1, src)
            if key in out:
                raise ConfigError(f"duplicate key {key!r}", lineno, raw.index(key) + 1, src)
            out[key] = (value, lineno)
    return out, src


def _coerce(key, value, line=None, source=None):
    try:
        if key in ("grid_nt", "steps", "seed", "dpp_count"):
            return int(evaluate_constant(value, line=line, source=source))
        if key in ("tol_factor", "c0_max", "radius"):
            return float(evaluate_constant(value, line=line, source=source))
        if key == "grid_nx":
            return _parse_nx(value)
        if key == "pad":
            return value if value == "auto" else float(evaluate_constant(value, line=line, source=source))
        if key == "relations":
            return tuple(r.strip() for r in value.split(",") if r.strip())
        if key == "starts":
            return [_parse_point(p, "start") for p in value.split("|") if p.strip()]
        if key == "atlas_point":
            return _parse_point(value, "atlas point")
    except ConfigError as exc:
        if exc.line is None and line is not None:
            raise ConfigError(str(exc), line, None, source) from None
        raise
    return value


def build_config(args):
    """Merge command-line flags with a config file (if any); file entries
    override flags."""
    values = {}
    flags = {
        "problem": args.problem, "grid_nt": args.grid_nt, "pad": args.pad, "steps": args.steps,
        "policy": args.policy, "tol_factor": args.tol, "out": args.out, "seed": args.seed,
        "radius": args.radius, "arc_source": args.arc_source, "run_id": args.run_id,
    }
    for k, v in flags.items():
        if v is not None:
            values[k] = _coerce(k, v) if isinstance(v, str) and k in ("pad",) else v
    if args.grid is not None:
        sizes = _parse_nx(args.grid)
        if len(sizes) < 2:
            raise ConfigError("--grid expects NT,NX[,NX2..]")
        values["grid_nt"], values["grid_nx"] = sizes[0], sizes[1:]
    if args.relations is not None:
        values["relations"] = _coerce("relations", args.relations)
    if args.start:
        values["starts"] = [_parse_point(s, "start") for s in args.start]
    if args.point is not None:
        values["atlas_point"] = _parse_point(args.point, "atlas point")
    if args.config:
        entries, src = read_config_file(args.config)
        for k, (v, line) in entries.items():
            values[k] = _coerce(k, v, line, src)
    if "problem" not in values:
        raise ConfigError("no problem given (--problem NAME|FILE or 'problem =' in --config)")
    cfg = RunConfig(**values)
    cfg.validate()
    return cfg


def resolve_problem(cfg):
    """``(problem, grid, benchmark or None)`` for a registry name or file."""
    if cfg.problem in bench.NAMES:
        b = bench.instance(cfg.problem)
        problem, grid = b.problem, b.grid
    else:
        if not os.path.exists(cfg.problem):
            raise ConfigError(f"problem {cfg.problem!r} is neither a registry name ({', '.join(bench.NAMES)}) "
                              f"nor an existing file")
        d = load_problem(cfg.problem)
        problem, grid, b = d.problem, d.grid, None
    nt = cfg.grid_nt if cfg.grid_nt is not None else grid.nt
    nx = grid.nx
    if cfg.grid_nx is not None:
        nx = cfg.grid_nx[0] if len(cfg.grid_nx) == 1 else tuple(cfg.grid_nx)
    pad = cfg.pad if cfg.pad is not None else grid.pad
    grid = GridSpec(nt, nx, pad, grid.directions)
    if isinstance(nx, tuple) and len(nx) != problem.F.dim:
        raise ConfigError(f"grid has {len(nx)} spatial sizes for a {problem.F.dim}-dimensional problem")
    return problem, grid, b


# ---------------------------------------------------------------------------
# bundle writing

class Bundle:
    def __init__(self, root):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=False)
        self.files = []

    def path(self, rel):
        p = self.root / rel
        p.parent.mkdir(parents=True, exist_ok=True)
        return p

    def write_text(self, rel, text):
        self.path(rel).write_text(text)
        self.files.append(rel)

    def write_bytes(self, rel, data):
        self.path(rel).write_bytes(data)
        self.files.append(rel)

    def write_json(self, rel, obj):
        self.write_text(rel, dumps(obj))

    def finish(self):
        entries = {}
        for rel in sorted(set(self.files)):
            entries[rel] = hashlib.sha256(self.path(rel).read_bytes()).hexdigest()
        self.write_json("manifest.json", {"files": entries})


def dumps(obj):
    return json.dumps(sens._clean(obj), sort_keys=True, indent=2) + "\n"


def _bundle_dir(out, run_id):
    if run_id:
        return Path(out) / run_id
    stamp = _dt.datetime.now(_dt.timezone.utc).strftime("%Y%m%dT%H%M%SZ")
    base = Path(out) / stamp
    cand, k = base, 1
    while cand.exists():
        cand = Path(f"{base}-{k}")
        k += 1
    return cand


# ---------------------------------------------------------------------------
# pipeline

def _check_point(problem, what, t, x):
    x = np.asarray(x, float)
    if x.size != problem.F.dim:
        raise ConfigError(f"{what} has {x.size} coordinates for a {problem.F.dim}-dimensional problem")
    if not problem.t0 <= t < problem.T:
        raise ConfigError(f"{what} time {t} outside [{problem.t0}, {problem.T})")
    if np.any(x < problem.lo) or np.any(x > problem.hi):
        raise ConfigError(f"{what} {x.tolist()} outside the problem box")


def _arc_for_start(cfg, problem, field_, b, t, x):
    x = np.asarray(x, float)
    src = cfg.arc_source
    if src in ("auto", "closed_form") and b is not None and b.trajectory is not None:
        try:
            pair = b.optimal_pair(t, x, cfg.steps)
            if np.all(np.isfinite(pair.p)):
                return pair
        except ValueError:
            pass
        if src == "closed_form":
            raise NumericalError(f"no closed-form optimal pair from ({t}, {x.tolist()})")
    # characteristic through the endpoint of a greedy optimal trajectory
    tr = synthesize_trajectory(field_, problem.F, t, x)
    z = tr.y[-1]
    steps = max(2, int(round(cfg.steps * (problem.T - t) / (problem.T - problem.t0))))
    sub = replace(problem, t0=t)
    if problem.phi_grad is None:
        # no exact terminal gradient: dual arc along the frozen greedy state
        q = problem.terminal_gradient(z)
        return flow.solve_dual_terminal(tr, q, sub, cfg.policy)
    return flow.integrate_characteristics(sub, z, steps, cfg.policy)


def run(cfg, stages=STAGES, stream=None):
    """Execute ``stages`` for ``cfg``; returns ``(exit_status, bundle_path)``."""
    stream = stream if stream is not None else sys.stdout
    stages = tuple(s for s in STAGES if s in stages)
    problem, grid, b = resolve_problem(cfg)
    if any(s in stages for s in ("hjb", "flow", "verify", "atlas")):
        plan_grid(problem, grid)  # CFL rejection before any output or solve
    for what, pts in (("start", cfg.starts or []), ("atlas point", [cfg.atlas_point] if cfg.atlas_point else [])):
        for t, x in pts:
            _check_point(problem, what, t, x)
    bundle = Bundle(_bundle_dir(cfg.out, cfg.run_id))
    cfg_dict = asdict(cfg)
    cfg_dict.pop("run_id")
    cfg_dict.pop("out")
    cfg_dict["stages"] = list(stages)
    cfg_dict["grid"] = {"nt": grid.nt, "nx": grid.nx, "pad": grid.pad, "directions": grid.directions}
    bundle.write_json("config.json", cfg_dict)
    summary = {"problem": problem.name, "stages": list(stages), "verdicts": {}, "errors": []}
    status = EXIT_OK
    field_ = None
    arcs = []

    def stage(name, fn):
        try:
            return fn()
        except (NumericalError, CFLError, ValueError, MayerSensError) as exc:
            raise StageError(name, exc) from exc

    try:
        if "audit" in stages:
            audit = stage("audit", lambda: audit_hypotheses(problem.F, (problem.lo, problem.hi)))
            bundle.write_json("audit.json", audit.to_dict())
            summary["audit"] = {"sh": audit.sh_ok, "h1": audit.h1_ok, "h2": audit.h2_ok}
        if any(s in stages for s in ("hjb", "flow", "verify", "atlas")):
            field_ = stage("hjb", lambda: solve_hjb(problem, grid))
            bundle.write_bytes("value_field.vfld", field_.to_bytes())
            bundle.write_text("value_t0.csv", field_.to_csv(t_index=0))
            summary["value_field"] = {"id": field_.field_id, "interpolation_error": field_.interpolation_error(),
                                      "pad": field_.meta["pad"], "lookback": field_.meta["lookback"]}
            if b is not None and b.value is not None:
                summary["value_field"]["sup_error"] = field_.sup_error(b.value)
        if any(s in stages for s in ("flow", "verify")):
            starts = cfg.starts or DEFAULT_STARTS.get(problem.name, [(problem.t0, tuple(0.5 * (problem.lo + problem.hi)))])
            for t, x in starts:
                pair = stage("flow", lambda: _arc_for_start(cfg, problem, field_, b, t, x))
                arcs.append(pair)
                bundle.write_text(f"arcs/{pair.arc_id}.csv", pair.to_csv())
            summary["arcs"] = [{"id": a.arc_id, "start": [float(a.t[0])] + a.x[0].tolist(), "method": a.method}
                               for a in arcs]
        if "verify" in stages:
            for rel in cfg.relations:
                for pair in arcs:
                    key = f"{rel}__{pair.arc_id}"
                    rep = stage("verify", lambda: _verify_one(cfg, rel, field_, pair, problem))
                    if isinstance(rep, sens.SensitivityReport):
                        bundle.write_json(f"reports/{key}.json", rep.to_dict())
                        bundle.write_text(f"reports/{key}.csv", rep.table_csv())
                        ok = rep.passed
                    else:
                        bundle.write_json(f"reports/{key}.json", rep)
                        ok = rep["passed"]
                    summary["verdicts"][key] = "pass" if ok else "fail"
                    print(f"{key}: {'pass' if ok else 'FAIL'}", file=stream)
        h3 = b.profile.get("H3", True) if b is not None else True
        if "atlas" in stages and h3 is not True and cfg.atlas_point is None:
            # the gradient/trajectory correspondence needs a C1 boundary of F(x)
            why = "H3 only partially met" if h3 == "partial" else "H3 not met"
            summary["skipped"] = {"atlas": why}
            print(f"atlas: skipped ({why})", file=stream)
        elif "atlas" in stages:
            pt = cfg.atlas_point or DEFAULT_ATLAS.get(problem.name)
            if pt is None:
                starts = cfg.starts or DEFAULT_STARTS.get(problem.name)
                pt = starts[0] if starts else (problem.t0, tuple(0.5 * (problem.lo + problem.hi)))
            atlas = stage("atlas", lambda: sens.gradient_trajectory_atlas(field_, problem, pt[0], pt[1]))
            bundle.write_json("atlas.json", atlas.to_dict())
            for e in atlas.entries:
                for a in e.trajectories:
                    bundle.write_text(f"arcs/{a.arc_id}.csv", a.to_csv())
            ok = atlas.strongly_injective and not atlas.failures
            summary["verdicts"]["atlas"] = "pass" if ok else "fail"
            print(f"atlas: {'pass' if ok else 'FAIL'} ({len(atlas.entries)} gradients, "
                  f"min cross distance {atlas.min_cross_distance:.4g})", file=stream)
        if any(v == "fail" for v in summary["verdicts"].values()):
            status = EXIT_FAIL
    except StageError as exc:
        summary["errors"].append({"stage": exc.stage, "error": str(exc.cause), "type": type(exc.cause).__name__})
        status = EXIT_NUMERIC
        print(f"error {exc}", file=sys.stderr)
    summary["exit_status"] = status
    bundle.write_json("summary.json", summary)
    bundle.finish()
    return status, bundle.root


def _verify_one(cfg, rel, field_, pair, problem):
    if rel in ("partial_proximal", "partial_frechet"):
        return sens.verify_partial_sensitivity(field_, pair, r=cfg.radius, c0_max=cfg.c0_max,
                                               tol_factor=cfg.tol_factor, relation=rel,
                                               time_count=None if rel == "partial_proximal" else 20)
    if rel in ("full_frechet", "full_proximal"):
        return sens.verify_full_sensitivity(field_, pair, problem, tol_factor=cfg.tol_factor, seed=cfg.seed,
                                            relation=rel)
    if rel == "max_principle":
        if pair.stationary:
            return {"relation": rel, "max": 0.0, "mean": 0.0, "passed": True}
        r = flow.maximum_principle_residual(pair, problem)
        tol = 1e-4
        return {"relation": rel, "max": r.max, "mean": r.mean, "tolerance": tol, "passed": bool(r.max <= tol)}
    if rel == "optimality":
        v = sens.sufficient_optimality_check(pair, field_, problem, tol_factor=cfg.tol_factor, seed=cfg.seed)
        return {"relation": rel, **v.to_dict(), "passed": v.certified}
    if rel == "dpp":
        from .hjb import Trajectory
        trs = random_admissible_trajectories(problem, cfg.dpp_count, seed=cfg.seed)
        trs.append(Trajectory(pair.t, pair.x, True, "arc"))
        rep = dpp_check(field_, problem.F, trs, tol=cfg.tol_factor * field_.interpolation_error(),
                        adm_tol=max(1e-8, 10 * float(pair.step)))
        return {"relation": rel, "max_decrease": rep.max_decrease, "max_total_variation": rep.max_total_variation,
                "tolerance": rep.tolerance, "passed": rep.passed}
    raise ConfigError(f"unknown verification id {rel!r}")


# ---------------------------------------------------------------------------
# plot data export

EXPORT_KINDS = ("value_slice", "arc", "residuals")


def export_plot_data(bundle, what, t=None, arc=None, relation=None):
    """Write plot-ready CSV files into ``<bundle>/plots``; returns their paths.

    ``value_slice`` (needs ``t``): ``x1..,V``; ``arc`` (needs ``arc`` id):
    ``t,x..,p..``; ``residuals`` (needs ``relation``): ``t,gap`` per report.
    """
    root = Path(bundle)
    if not root.is_dir():
        raise ConfigError(f"bundle {bundle!r} does not exist")
    if what not in EXPORT_KINDS:
        raise ConfigError(f"unknown export kind {what!r}; choose from {', '.join(EXPORT_KINDS)}")
    out = root / "plots"
    out.mkdir(exist_ok=True)
    written = []
    if what == "value_slice":
        vf = root / "value_field.vfld"
        if not vf.exists():
            raise ConfigError("bundle has no value field")
        field_ = ValueField.load(vf)
        t = field_.t0 if t is None else float(t)
        k = field_.time_index(t)
        sl = field_.user_slice()
        grids = np.meshgrid(*[a[s] for a, s in zip(field_.axes, sl)], indexing="ij")
        vals = field_.values[(k,) + sl]
        head = ",".join([f"x{i + 1}" for i in range(field_.dim)] + ["V"])
        lines = [head] + [",".join(repr(float(v)) for v in (*[g.ravel()[j] for g in grids], vals.ravel()[j]))
                          for j in range(vals.size)]
        p = out / f"value_slice_t{t:g}.csv"
        p.write_text("\n".join(lines) + "\n")
        written.append(p)
    elif what == "arc":
        if arc is None:
            raise ConfigError("export arc needs an arc id")
        src = root / "arcs" / f"{arc}.csv"
        if not src.exists():
            raise ConfigError(f"no arc {arc!r} in bundle")
        p = out / f"arc_{arc}.csv"
        p.write_text(src.read_text())
        written.append(p)
    else:
        if relation is None:
            raise ConfigError("export residuals needs a relation id")
        reps = sorted((root / "reports").glob(f"{relation}__*.csv"))
        if not reps:
            raise ConfigError(f"no {relation!r} reports in bundle")
        for src in reps:
            rows = src.read_text().splitlines()[1:]
            p = out / f"residuals_{src.stem}.csv"
            p.write_text("\n".join(["t,gap"] + [",".join(r.split(",")[:2]) for r in rows]) + "\n")
            written.append(p)
    return written


# ---------------------------------------------------------------------------
# entry point

def make_parser():
    ap = argparse.ArgumentParser(prog="mayersens", description="Mayer problem solver and sensitivity checks.")
    sub = ap.add_subparsers(dest="verb", required=True)
    for verb in VERBS:
        p = sub.add_parser(verb, help=f"stages: {' -> '.join(VERBS[verb])}")
        p.add_argument("--problem", help="registry name or problem file")
        p.add_argument("--config", help="run configuration file (key = value lines; overrides flags)")
        p.add_argument("--grid", help="NT,NX[,NX2..] overriding the problem's grid")
        p.add_argument("--grid-nt", type=int, dest="grid_nt", help=argparse.SUPPRESS)
        p.add_argument("--pad", help="spatial padding or 'auto'")
        p.add_argument("--steps", type=int, help="arc mesh steps")
        p.add_argument("--policy", choices=flow.POLICIES)
        p.add_argument("--relations", help=f"comma list from {', '.join(VERIFY_IDS)}")
        p.add_argument("--tol", type=float, help="tolerance factor on interpolation budgets")
        p.add_argument("--radius", type=float, help="partial-sensitivity radius r")
        p.add_argument("--start", action="append", help="arc start 't,x1,..' (repeatable)")
        p.add_argument("--point", help="atlas base point 't,x1,..'")
        p.add_argument("--arc-source", dest="arc_source", choices=("auto", "closed_form", "characteristic"))
        p.add_argument("--out", help="output root (default: runs)")
        p.add_argument("--run-id", dest="run_id", help="bundle directory name instead of a timestamp")
        p.add_argument("--seed", type=int)
    ex = sub.add_parser("export", help="write plot CSVs from a bundle")
    ex.add_argument("bundle")
    ex.add_argument("what", help=f"one of {', '.join(EXPORT_KINDS)}")
    ex.add_argument("--t", type=float)
    ex.add_argument("--arc")
    ex.add_argument("--relation")
    return ap


def main(argv=None):
    args = make_parser().parse_args(argv)
    try:
        if args.verb == "export":
            for p in export_plot_data(args.bundle, args.what, args.t, args.arc, args.relation):
                print(p)
            return EXIT_OK
        cfg = build_config(args)
        status, root = run(cfg, VERBS[args.verb])
    except (ConfigError, CFLError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except MayerSensError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    print(f"bundle: {root}")
    print(f"exit status: {status}")
    return status


if __name__ == "__main__":
    sys.exit(main())
