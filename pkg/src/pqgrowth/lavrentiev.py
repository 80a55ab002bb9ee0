"""Lavrentiev gap estimation: infima over a rough and a regular admissible class
on a mesh ladder, the mollification sequence criterion and the checkerboard
experiments.

The rough ("full") class is the Crouzeix-Raviart space with Dirichlet data, which
contains the P1 fields and can represent the jump-like profiles of W^{1,p}
minimisers. The regular ("conforming-smooth") class consists of P1 fields
prolonged from a coarse P1 minimiser and re-minimised under a cap on
int |Du|^q, a refinement-uniform proxy for membership in W^{1,q}.
"""
from dataclasses import dataclass, field
import io
import csv
import json
import math

import numpy as np

from .covering import Domain, partition_of_unity, wb_enlarge, whitney
from .errors import InvalidArgument, SolverDiagnostics
from .integrand import example_library
from .mesh import DiscreteField, Mesh, cr_to_nodes, energy, evaluate_at, gradient, lp_norm
from .mollify import ApproximantConfig, cube_radii, wb_approximant
from .solver import SolveOptions, aitken, minimize

CAP_FACTOR = 1.05
PENALTY_WEIGHT = 1e4


@dataclass(frozen=True)
class AdmissibleClass:
    kind: str                    # "full" or "conforming-smooth"
    description: str = ""

    def __post_init__(self):
        if self.kind not in ("full", "conforming-smooth"):
            raise InvalidArgument(f"unknown admissible class {self.kind!r}")


FULL = AdmissibleClass("full", "Crouzeix-Raviart fields with boundary data g")
SMOOTH = AdmissibleClass("conforming-smooth",
                         "P1 prolongations of the coarse P1 minimiser, re-minimised "
                         f"with int |Du|^q capped at {CAP_FACTOR}^q times its coarse value")


@dataclass
class GapReport:
    inf_full: float
    inf_smooth: float
    gap: float
    path: list
    verdict: str
    thresholds: dict
    extrapolated_gap: float = None
    diagnostics: list = field(default_factory=list)

    def to_dict(self):
        return {"inf_full": self.inf_full, "inf_smooth": self.inf_smooth, "gap": self.gap,
                "extrapolated_gap": self.extrapolated_gap, "path": self.path,
                "verdict": self.verdict, "thresholds": self.thresholds,
                "diagnostics": self.diagnostics}

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)


def _ladder(meshes):
    meshes = [m if isinstance(m, Mesh) else None for m in meshes]
    if len(meshes) < 2 or any(m is None for m in meshes):
        raise InvalidArgument("estimate_gap needs two or more meshes")
    box = meshes[0].box
    for a, b in zip(meshes, meshes[1:]):
        if not np.allclose(a.box, box) or not np.allclose(b.box, box):
            raise InvalidArgument("mesh ladder must share one box")
        if np.any(np.asarray(b.resolution) < np.asarray(a.resolution)):
            raise InvalidArgument("mesh ladder must be ordered coarse to fine")
    return meshes


def mesh_ladder(box, resolutions):
    return [Mesh(box, r) for r in resolutions]


def q_cap_penalty(mesh, q, cap, weight=PENALTY_WEIGHT):
    """weight * max(0, int |Du|^q / cap - 1)^2 as a solver penalty (the weight is
    scaled by the coarse energy so the cap binds at any energy level). The returned
    gradient is per unit area; the solver applies the element areas."""
    areas = mesh.areas

    def pen(U, DU):
        mag2 = np.einsum("kij,kij->k", DU, DU)
        total = float(np.dot(areas, mag2 ** (q / 2)))
        excess = total / cap - 1.0
        if excess <= 0:
            return 0.0, np.zeros_like(DU)
        val = weight * excess ** 2
        coef = 2 * weight * excess / cap * q * mag2 ** (q / 2 - 1)
        coef = np.where(mag2 > 0, coef, 0.0)
        return val, coef[:, None, None] * DU

    return pen


def prolong(u, mesh):
    """Evaluate a coarse field at the P1 nodes of a finer mesh (exact for nested P1)."""
    vals = evaluate_at(cr_to_nodes(u), mesh.nodes)
    return DiscreteField(mesh, vals, kind="p1")


def _q_energy(u, q):
    return lp_norm(gradient(u), q) ** q


def _combined_tol(opts, a, b):
    return opts.tol * (max(1.0, abs(a)) + max(1.0, abs(b)))


def gap_verdict(gaps, tols, contraction=0.25):
    """Verdict from per-level gaps and tolerances; returns (verdict, extrapolated gap).

    gap: the two finest gaps exceed 10x their combined tolerance and the Aitken
    limit keeps at least ``contraction`` of the finest gap. no-gap: the finest gap
    is within 10x tolerance or the limit falls below that fraction.
    """
    if len(gaps) < 2:
        return "inconclusive", None
    thr = [10 * t for t in tols]
    if any(g < -t for g, t in zip(gaps, tols)):
        return "inconclusive", None
    if gaps[-1] <= thr[-1]:
        return "no-gap", float(gaps[-1])
    if len(gaps) < 3:
        return "inconclusive", float(gaps[-1])
    limit = aitken(gaps)
    if limit <= max(thr[-1], contraction * gaps[-1]):
        return "no-gap", float(limit)
    if gaps[-2] > thr[-2]:
        return "gap", float(limit)
    return "inconclusive", float(limit)


def estimate_gap(F, meshes, g, f=None, opts=None):
    """Infima over the full and conforming-smooth classes on each level of the ladder."""
    meshes = _ladder(meshes)
    opts = opts or SolveOptions()
    q = F.params.q
    path, diags = [], []
    try:
        coarse = minimize(F, meshes[0], g, f, 0.0, _with(opts, "p1"))
        cap = CAP_FACTOR ** q * _q_energy(coarse.field, q)
        for k, mesh in enumerate(meshes):
            full = minimize(F, mesh, g, f, 0.0, _with(opts, "cr"))
            if k == 0:
                smooth = coarse
            else:
                u0 = prolong(coarse.field, mesh)
                pen = q_cap_penalty(mesh, q, cap, PENALTY_WEIGHT * max(1.0, abs(coarse.energy))) if cap > 0 else None
                smooth = minimize(F, mesh, g, f, 0.0, _with(opts, "p1", pen), u0=u0)
            ok = _settled(full) and _settled(smooth)
            if not ok:
                diags.append({"level": k, "full": full.message, "smooth": smooth.message})
            path.append({
                "level": k, "resolution": int(mesh.resolution[0]),
                "inf_full": full.energy, "inf_smooth": smooth.energy,
                "gap": smooth.energy - full.energy,
                "tolerance": _combined_tol(opts, full.energy, smooth.energy),
                "q_energy_smooth": _q_energy(smooth.field, q), "q_cap": cap,
                "converged": ok,
            })
    except SolverDiagnostics as exc:
        diags.append({"error": str(exc), "report": exc.report})
        return _report(path, "inconclusive", None, diags)
    if not all(e["converged"] for e in path):
        return _report(path, "inconclusive", None, diags)
    verdict, limit = gap_verdict([e["gap"] for e in path], [e["tolerance"] for e in path])
    return _report(path, verdict, limit, diags)


def _settled(rep):
    # a solve that stagnates at roundoff has reached the discrete minimum to
    # machine precision even if the residual test was not met
    return rep.converged or rep.message.startswith("stagnated")


def _with(opts, space, penalty=None):
    return SolveOptions(opts.tol, opts.max_iter, space, opts.init, opts.seed, opts.memory,
                        opts.armijo, opts.shrink, penalty, opts.stagnation)


def _report(path, verdict, limit, diags):
    last = path[-1] if path else {"inf_full": math.nan, "inf_smooth": math.nan, "gap": math.nan,
                                  "tolerance": math.nan}
    thresholds = {"gap_factor": 10.0, "tolerance": last["tolerance"],
                  "cap_factor": CAP_FACTOR, "levels": len(path)}
    return GapReport(last["inf_full"], last["inf_smooth"], last["gap"], path, verdict,
                     thresholds, limit, diags)


def relaxed_energy_estimate(F, meshes, g, f=None, opts=None, report=None):
    """Extrapolated infimum over the conforming-smooth class along the ladder."""
    rep = report or estimate_gap(F, meshes, g, f, opts)
    vals = [e["inf_smooth"] for e in rep.path]
    return aitken(vals) if vals else math.nan


# ---------------------------------------------------------------------------
# sequence criterion


def sequence_criterion(F, u, config=None, epsilons=None, depth=None, tol=0.02, f=None):
    """Energies of the WB approximants u_eps along an eps ladder.

    Only rungs where some mollification radius exceeds one cell are informative
    (below that u_eps = u on the mesh). The verdict is "no-gap-at-u" when the
    finest informative energy is within ``tol`` (relative) of int F(x, Du), or
    when no rung is informative; otherwise "undecided". CR fields are averaged
    to nodes first and the target is the energy of that nodal field.
    """
    mesh = u.mesh
    n, p, q = F.n, F.params.p, F.params.q
    if config is None:
        try:
            config = ApproximantConfig(n, p, q)
        except InvalidArgument:
            # no admissible order for this (p, q): fall back to the p-growth order
            config = ApproximantConfig(n, p, p)
    epsilons = list(epsilons or [2.0 ** -k for k in range(2, 7)])
    depth = depth or int(math.log2(max(mesh.resolution))) + 1
    cover = wb_enlarge(whitney(Domain(mesh.box), depth), config.m)
    pou = partition_of_unity(cover)
    u = cr_to_nodes(u)
    h = float(mesh.h.min())
    target = energy(F, u, f)
    energies, dists, active = [], [], []
    for e in epsilons:
        cfg = config.with_epsilon(e)
        ue = wb_approximant(u, cover, pou, cfg)
        energies.append(energy(F, ue, f))
        dists.append(lp_norm(ue.with_values(ue.values - u.values), p))
        active.append(bool(np.any(cube_radii(cover, cfg, h) > h * (1 + 1e-9))))
    informative = [E for E, a in zip(energies, active) if a]
    last = informative[-1] if informative else energies[-1]
    rel = abs(last - target) / max(abs(target), 1e-300)
    increasing = all(b > a for a, b in zip(informative, informative[1:]))
    verdict = "no-gap-at-u" if rel <= tol else "undecided"
    return {"config": {"p": config.p, "q": config.q, "m": config.m}, "epsilons": epsilons,
            "energies": energies, "lp_distances": dists, "informative": active,
            "target": target, "relative_defect": rel, "increasing": increasing,
            "verdict": verdict}


# ---------------------------------------------------------------------------
# experiments


CHECKERBOARD_WEIGHT = "min(dist_quadrant(1), dist_quadrant(3))"
# large enough that the minimisers feel the q-phase: at amplitude 1 the gap is
# below the resolution of a 16..128 ladder
CHECKERBOARD_AMPLITUDE = 100.0


def checkerboard_datum(amplitude=CHECKERBOARD_AMPLITUDE):
    """Angular datum: amplitude on quadrant II, 0 on quadrant IV, linear in the polar
    angle across quadrants I and III (where the weight vanishes)."""
    A = float(amplitude)
    return f"{A!r}*(max(0, min(1, 2*angle()/pi)) + max(0, min(1, -2*angle()/pi - 1)))"


def checkerboard_example(p=1.7, q=3.5, alpha=1.0):
    """Double-phase with a(x) = dist(x, quadrants I and III)^alpha."""
    return example_library("double-phase", {"p": p, "q": q, "alpha": alpha,
                                            "a": f"{CHECKERBOARD_WEIGHT}^{alpha!r}"})


def gap_sweep(qs, resolutions, p=1.7, alpha=1.0, amplitude=CHECKERBOARD_AMPLITUDE, box=((0, 1), (0, 1)), opts=None):
    """Checkerboard gap over a list of q values; returns (rows, reports)."""
    meshes = mesh_ladder(np.asarray(box, dtype=float), resolutions)
    g = checkerboard_datum(amplitude)
    rows, reps = [], []
    for q in qs:
        rep = estimate_gap(checkerboard_example(p, q, alpha), meshes, g, opts=opts)
        reps.append(rep)
        for e in rep.path:
            rows.append({"q": float(q), "level": e["level"], "inf_full": e["inf_full"],
                         "inf_smooth": e["inf_smooth"], "gap": e["gap"], "verdict": rep.verdict})
    return rows, reps


def sweep_csv(rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    keys = ["q", "level", "inf_full", "inf_smooth", "gap", "verdict"]
    w.writerow(keys)
    for r in rows:
        w.writerow([r[k] if isinstance(r[k], str) else repr(r[k]) for k in keys])
    return buf.getvalue()
