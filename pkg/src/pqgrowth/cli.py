"""Command-line experiment runner.

    python -m pqgrowth <command> [options]

Commands: check, solve, path, cover, mollify, besov, gap, examples. Every
command writes JSON/CSV artifacts into ``--out`` and prints a one-line summary.
Exit codes: 0 success, 1 usage, 2 module error, 3 invariant violation.
"""
import argparse
import configparser
from dataclasses import dataclass, field
import io
import json
import math
import os
import sys

import numpy as np

from . import besov, covering, integrand, lavrentiev, mesh as meshmod, mollify, solver
from .errors import InternalError, InvalidArgument, OutOfRange, SolverDiagnostics, UnsupportedFlavor

EXIT_OK, EXIT_USAGE, EXIT_MODULE, EXIT_INVARIANT = 0, 1, 2, 3
COMMANDS = ("check", "solve", "path", "cover", "mollify", "besov", "gap", "examples")


class UsageError(Exception):
    pass


class InvariantViolation(Exception):
    pass


# ---------------------------------------------------------------------------
# experiment configuration


@dataclass
class ExperimentConfig:
    command: str
    integrand: dict = field(default_factory=dict)
    box: list = field(default_factory=lambda: [[0.0, 1.0], [0.0, 1.0]])
    resolutions: list = field(default_factory=lambda: [64])
    schedule: list = field(default_factory=list)
    seed: int = 0
    tol: float = 1e-6
    max_iter: int = 10_000
    threads: int = 1
    out: str = "pqgrowth-out"
    options: dict = field(default_factory=dict)

    def to_ini(self):
        cp = configparser.ConfigParser(interpolation=None)
        cp.optionxform = str
        cp["experiment"] = {"command": self.command}
        cp["integrand"] = {k: json.dumps(v) for k, v in sorted(self.integrand.items())}
        cp["mesh"] = {"box": json.dumps(self.box), "resolutions": json.dumps(self.resolutions)}
        cp["schedule"] = {"epsilons": json.dumps(self.schedule)}
        cp["run"] = {"seed": str(self.seed), "tol": repr(self.tol),
                     "max_iter": str(self.max_iter), "threads": str(self.threads)}
        cp["output"] = {"out": self.out}
        cp["options"] = {k: json.dumps(v) for k, v in sorted(self.options.items())}
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()

    @classmethod
    def from_ini(cls, text):
        cp = configparser.ConfigParser(interpolation=None)
        cp.optionxform = str
        try:
            cp.read_string(text)
            cmd = cp["experiment"]["command"]
            sec = lambda name: cp[name] if cp.has_section(name) else {}
            run = sec("run")
            return cls(
                command=cmd,
                integrand={k: json.loads(v) for k, v in sec("integrand").items()},
                box=json.loads(sec("mesh").get("box", "[[0.0, 1.0], [0.0, 1.0]]")),
                resolutions=json.loads(sec("mesh").get("resolutions", "[64]")),
                schedule=json.loads(sec("schedule").get("epsilons", "[]")),
                seed=int(run.get("seed", 0)),
                tol=float(run.get("tol", 1e-6)),
                max_iter=int(run.get("max_iter", 10_000)),
                threads=int(run.get("threads", 1)),
                out=sec("output").get("out", "pqgrowth-out"),
                options={k: json.loads(v) for k, v in sec("options").items()},
            )
        except (KeyError, ValueError, configparser.Error) as exc:
            raise UsageError(f"bad config: {exc}") from None


# ---------------------------------------------------------------------------
# argument parsing


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _floats(text):
    try:
        return [float(t) for t in text.replace(",", " ").split()]
    except ValueError:
        raise UsageError(f"expected a list of numbers, got {text!r}") from None


def build_parser():
    common = _Parser(add_help=False, allow_abbrev=False)
    common.add_argument("--config", help="experiment config file (INI sections)")
    common.add_argument("--write-config", help="write the effective config here and continue")
    common.add_argument("--out", help="output directory")
    common.add_argument("--seed", type=int)
    common.add_argument("--tol", type=float)
    common.add_argument("--max-iter", type=int)
    common.add_argument("--threads", type=int)
    common.add_argument("--resolution", type=int, nargs="+")
    common.add_argument("--eps-schedule", help="comma-separated epsilons")
    common.add_argument("--box", help="box as JSON, e.g. [[0,1],[0,1]]")
    common.add_argument("--integrand", help="library name")
    common.add_argument("--spec", help="integrand spec file (key = value lines)")
    for key in ("p", "q", "alpha", "n"):
        common.add_argument(f"--{key}", type=float if key != "n" else int)
    common.add_argument("--a", help="weight expression")
    common.add_argument("--param", action="append", default=[], metavar="KEY=VALUE")

    parser = _Parser(prog="pqgrowth", description="(p,q)-growth variational laboratory",
                     allow_abbrev=False)
    sub = parser.add_subparsers(dest="command")

    sp = sub.add_parser("check", parents=[common], help="hypothesis audits")
    sp.add_argument("--hyp", nargs="+")
    sp.add_argument("--samples", type=int)
    sp.add_argument("--refine", type=int)

    helps = {"solve": "solve a Dirichlet problem",
             "path": "regularisation path of a Dirichlet problem"}
    for name in ("solve", "path"):
        sp = sub.add_parser(name, parents=[common], help=helps[name])
        sp.add_argument("--g", help="boundary datum expression")
        sp.add_argument("--f", help="source expression")
        sp.add_argument("--space", choices=("p1", "cr"))
        sp.add_argument("--init", choices=("interpolant", "random"))
        sp.add_argument("--dump", action="store_true", help="write the field as binary and CSV")

    sp = sub.add_parser("cover", parents=[common], help="build and audit a WB cover")
    sp.add_argument("--domain")
    sp.add_argument("--depth", type=int)
    sp.add_argument("--audit", action="store_true")

    sp = sub.add_parser("mollify", parents=[common], help="WB mollification convergence study")
    sp.add_argument("--center", help="singularity centre, comma-separated")
    sp.add_argument("--gamma", type=float)
    sp.add_argument("--depth", type=int)

    sp = sub.add_parser("besov", parents=[common], help="difference-quotient seminorm study")
    sp.add_argument("--g")
    sp.add_argument("--s", type=float)
    sp.add_argument("--space", choices=("p1", "cr"))
    sp.add_argument("--h-samples", type=int)

    sp = sub.add_parser("gap", parents=[common], help="two-class Lavrentiev gap sweep")
    sp.add_argument("--qs", help="comma-separated q values (checkerboard sweep)")
    sp.add_argument("--amplitude", type=float)
    sp.add_argument("--g", help="datum for a single estimate with --integrand")

    sub.add_parser("examples", parents=[common], help="list the example library")
    return parser


_OPTION_KEYS = ("hyp", "samples", "refine", "g", "f", "space", "init", "dump", "domain", "depth",
                "audit", "center", "gamma", "s", "h_samples", "qs", "amplitude")


def config_from_args(args):
    if args.config:
        try:
            with open(args.config) as fh:
                cfg = ExperimentConfig.from_ini(fh.read())
        except OSError as exc:
            raise UsageError(f"cannot read config: {exc}") from None
        if cfg.command != args.command:
            raise UsageError(f"config is for {cfg.command!r}, not {args.command!r}")
    else:
        cfg = ExperimentConfig(args.command)
    if args.spec:
        try:
            with open(args.spec) as fh:
                cfg.integrand = integrand.loads_spec(fh.read())
        except OSError as exc:
            raise UsageError(f"cannot read spec: {exc}") from None
    if args.integrand:
        cfg.integrand = {"name": args.integrand}
    for key in ("p", "q", "alpha", "n", "a"):
        val = getattr(args, key)
        if val is not None:
            cfg.integrand[key] = val
    for item in args.param:
        if "=" not in item:
            raise UsageError(f"--param expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        cfg.integrand[k.strip()] = _value(v.strip())
    if args.box:
        cfg.box = _value(args.box)
    if args.resolution:
        cfg.resolutions = list(args.resolution)
    if args.eps_schedule:
        cfg.schedule = _floats(args.eps_schedule)
    for key in ("seed", "tol", "max_iter", "threads", "out"):
        val = getattr(args, key)
        if val is not None:
            setattr(cfg, key, val)
    for key in _OPTION_KEYS:
        val = getattr(args, key, None)
        if val not in (None, False):
            cfg.options[key] = val
    if cfg.threads < 1:
        raise UsageError("--threads must be >= 1")
    return cfg


# ---------------------------------------------------------------------------
# commands


def _write(cfg, name, text):
    os.makedirs(cfg.out, exist_ok=True)
    path = os.path.join(cfg.out, name)
    mode = "wb" if isinstance(text, bytes) else "w"
    with open(path, mode) as fh:
        fh.write(text)
    return path


def _dump_json(obj):
    return json.dumps(obj, sort_keys=True, indent=2, default=_jsonable) + "\n"


def _jsonable(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not serialisable: {type(obj).__name__}")


def _integrand(cfg, default="p-power"):
    spec = dict(cfg.integrand) or {"name": default}
    spec.setdefault("name", default)
    if spec["name"] == "below-threshold":
        kw = {k: spec[k] for k in ("alpha", "p", "q") if k in spec}
        return solver.below_threshold_example(**kw)
    if spec["name"] == "checkerboard":
        kw = {k: spec[k] for k in ("alpha", "p", "q") if k in spec}
        return lavrentiev.checkerboard_example(**kw)
    if "n" in spec:
        spec["n"] = int(spec["n"])
        if spec["n"] != len(cfg.box):
            cfg.box = [[0.0, 1.0]] * spec["n"]
    return integrand.from_spec(spec)


def _opts(cfg, **kw):
    base = dict(tol=cfg.tol, max_iter=cfg.max_iter, seed=cfg.seed,
                space=cfg.options.get("space", "p1"), init=cfg.options.get("init", "interpolant"))
    base.update(kw)
    return solver.SolveOptions(**base)


def _mesh(cfg, res=None):
    return meshmod.Mesh(np.asarray(cfg.box, dtype=float), res or cfg.resolutions[0])


def cmd_examples(cfg):
    rows = []
    for name in integrand.LIBRARY_NAMES:
        F = integrand.example_library(name)
        rows.append({"name": name, "flavor": F.flavor, "p": F.params.p, "q": F.params.q,
                     "hypotheses": list(F.hypotheses)})
    _write(cfg, "examples.json", _dump_json(rows))
    for r in rows:
        print(f"{r['name']:16s} {r['flavor']:18s} p={r['p']:g} q={r['q']:g} "
              f"{' '.join(r['hypotheses'])}")
    return EXIT_OK


def cmd_check(cfg):
    F = _integrand(cfg, "double-phase")
    hyps = cfg.options.get("hyp") or list(F.hypotheses)
    sampler = integrand.SampleSpec(count=int(cfg.options.get("samples", 10_000)), seed=cfg.seed,
                                   refine=int(cfg.options.get("refine", 0)))
    reports = [integrand.check_hypothesis(F, h, sampler) for h in hyps]
    _write(cfg, "check.json", _dump_json([json.loads(r.to_json()) for r in reports]))
    bad = [r.hypothesis for r in reports if not r.passed]
    print(f"check {F.name}: " + " ".join(f"{r.hypothesis}={'ok' if r.passed else 'FAIL'}"
                                          for r in reports))
    if bad:
        raise InvariantViolation(f"violations in {', '.join(bad)}")
    return EXIT_OK


def cmd_solve(cfg):
    F = _integrand(cfg)
    M = _mesh(cfg)
    g = cfg.options.get("g", "0")
    rep = solver.minimize(F, M, g, cfg.options.get("f"), 0.0, _opts(cfg))
    _write(cfg, "solve.json", rep.to_json() + "\n")
    if cfg.options.get("dump"):
        _write(cfg, "solve_field.bin", meshmod.to_binary(rep.field))
        _write(cfg, "solve_field.csv", meshmod.to_csv(rep.field))
    print(f"solve {F.name} res={M.resolution[0]}: energy={rep.energy:.10g} "
          f"residual={rep.el_residual:.3g} iterations={rep.iterations} converged={rep.converged}")
    if not rep.converged:
        raise InvariantViolation(rep.message)
    return EXIT_OK


def cmd_path(cfg):
    F = _integrand(cfg)
    M = _mesh(cfg)
    g = cfg.options.get("g", "0")
    eps = cfg.schedule or None
    rep = solver.regularization_path(F, M, g, cfg.options.get("f"), eps, _opts(cfg))
    _write(cfg, "path.json", rep.to_json() + "\n")
    E = rep.energies()
    print(f"path {F.name} res={M.resolution[0]}: {len(E)} levels, limit={rep.limit_energy_estimate:.10g}")
    tol = cfg.tol * max(1.0, max((abs(e) for e in E), default=1.0))
    if rep.failed:
        raise InvariantViolation("a path solve failed")
    if any(b > a + tol for a, b in zip(E, E[1:])):
        raise InvariantViolation("energies increase along the path")
    return EXIT_OK


def cmd_cover(cfg):
    dom = covering.parse_domain(cfg.options.get("domain", "unit-square"))
    depth = int(cfg.options.get("depth", 8))
    cov = covering.wb_enlarge(covering.whitney(dom, depth), seed=cfg.seed)
    _write(cfg, "cover.csv", cov.to_csv())
    audit = cov.audit
    _write(cfg, "cover_audit.json", _dump_json(audit.to_dict()))
    if cfg.options.get("audit"):
        for key, val, bound in (
            ("multiplicity M", audit.multiplicity, f"<= {audit.multiplicity_bound}"),
            ("overlap ratio", f"{audit.overlap_min:.6g}", f">= {audit.overlap_bound:.6g}"),
            ("comparable sides", audit.comparability, "True"),
            ("coverage", audit.coverage, "True"),
            ("containment", audit.containment, "True"),
            ("min dist/side", f"{audit.distance_ratio_min:.6g}", f">= {audit.distance_required:.6g}"),
        ):
            print(f"  {key:18s} {str(val):>12s}   {bound}")
    print(f"cover depth={depth}: {cov.count} cubes, M={audit.multiplicity}, "
          f"structural={'ok' if audit.structural_ok else 'FAIL'}, "
          f"distance bound violated by {audit.distance_violations} cubes")
    return EXIT_OK


def cmd_mollify(cfg):
    F = _integrand(cfg, "below-threshold")
    M = _mesh(cfg)
    center = _floats(cfg.options.get("center", "0.3,0.6"))
    u = mollify.point_singularity_field(M, center, float(cfg.options.get("gamma", 0.5)))
    config = mollify.ApproximantConfig(F.n, F.params.p, F.params.q)
    depth = int(cfg.options.get("depth", int(math.log2(max(M.resolution))) + 1))
    cov = covering.wb_enlarge(covering.whitney(covering.Domain(M.box), depth), config.m)
    eps = cfg.schedule or [2.0 ** -k for k in range(2, 8)]
    rows = mollify.convergence_study(F, u, cov, config, eps)
    target = meshmod.energy(F, u)
    for r in rows:
        r["relative_energy_defect"] = abs(r["energy"] - target) / abs(target)
    _write(cfg, "mollify.csv", mollify.rows_to_csv(rows))
    defect = mollify.h4_commutation_defect(F, u, eps[0])
    _write(cfg, "mollify_h4.json", _dump_json({"C": defect.C, "C_max": defect.C_max,
                                               "p95": defect.percentile(95)}))
    last = rows[-1]["relative_energy_defect"]
    print(f"mollify {F.name} res={M.resolution[0]}: final relative energy defect {last:.3g}, "
          f"H4 C={defect.C:.4g}")
    if last > 0.02:
        raise InvariantViolation("approximant energies do not reach the field energy within 2%")
    return EXIT_OK


def cmd_besov(cfg):
    F = _integrand(cfg, "below-threshold")
    g = cfg.options.get("g", "x1")
    p = F.params.p
    s = float(cfg.options.get("s", F.params.alpha / max(2.0, p)))
    fields = []
    for res in cfg.resolutions:
        rep = solver.minimize(F, _mesh(cfg, res), g, None, 0.0, _opts(cfg))
        fields.append(meshmod.gradient(rep.field))
    reps = besov.refinement_study(fields, s, p, h_samples=int(cfg.options.get("h_samples", 16)))
    _write(cfg, "besov.json", _dump_json([r.to_dict() for r in reps]))
    lines = ["level,seminorm,argmax_h"]
    for res, r in zip(cfg.resolutions, reps):
        lines.append(f"{res},{r.seminorm!r},\"{' '.join(repr(t) for t in r.argmax_h)}\"")
    _write(cfg, "besov.csv", "\n".join(lines) + "\n")
    print(f"besov {F.name} s={s:g} p={p:g}: " + " ".join(f"{r.seminorm:.6g}" for r in reps))
    return EXIT_OK


def cmd_gap(cfg):
    opts = _opts(cfg)
    res = cfg.resolutions if len(cfg.resolutions) > 1 else [16, 32, 64, 128]
    if cfg.integrand and cfg.integrand.get("name") != "checkerboard":
        F = _integrand(cfg)
        meshes = lavrentiev.mesh_ladder(np.asarray(cfg.box, dtype=float), res)
        rep = lavrentiev.estimate_gap(F, meshes, cfg.options.get("g", "0"), opts=opts)
        reps, qs = [rep], [F.params.q]
        rows = [{"q": F.params.q, "level": e["level"], "inf_full": e["inf_full"],
                 "inf_smooth": e["inf_smooth"], "gap": e["gap"], "verdict": rep.verdict}
                for e in rep.path]
    else:
        qs = _floats(cfg.options.get("qs", "3.2,3.5,3.8"))
        amp = float(cfg.options.get("amplitude", lavrentiev.CHECKERBOARD_AMPLITUDE))
        kw = {k: cfg.integrand[k] for k in ("p", "alpha") if k in cfg.integrand}
        rows, reps = lavrentiev.gap_sweep(qs, res, amplitude=amp, box=cfg.box, opts=opts, **kw)
    _write(cfg, "gap.json", _dump_json([r.to_dict() for r in reps]))
    _write(cfg, "gap.csv", lavrentiev.sweep_csv(rows))
    print("gap: " + " ".join(f"q={q:g}:{r.verdict}({r.gap:.6g})" for q, r in zip(qs, reps)))
    for r in reps:
        if any(e["gap"] < -e["tolerance"] for e in r.path):
            raise InvariantViolation("class inclusion violated: smooth infimum below full infimum")
    return EXIT_OK


_DISPATCH = {"check": cmd_check, "solve": cmd_solve, "path": cmd_path, "cover": cmd_cover,
             "mollify": cmd_mollify, "besov": cmd_besov, "gap": cmd_gap, "examples": cmd_examples}


def run(cfg):
    """Run one experiment; returns the exit status."""
    return _DISPATCH[cfg.command](cfg)


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("a command is required: " + ", ".join(COMMANDS))
        cfg = config_from_args(args)
        if args.write_config:
            _write_text(args.write_config, cfg.to_ini())
        return run(cfg)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except InvariantViolation as exc:
        print(f"invariant violation: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except (InvalidArgument, OutOfRange, UnsupportedFlavor, InternalError, SolverDiagnostics) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MODULE


def _write_text(path, text):
    d = os.path.dirname(path)
    if d:
        os.makedirs(d, exist_ok=True)
    with open(path, "w") as fh:
        fh.write(text)


if __name__ == "__main__":
    sys.exit(main())
