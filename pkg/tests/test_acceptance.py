"""Acceptance criteria 1-11.

Each criterion is a function returning ``(passed, detail, report)``; the report
is a JSON-serialisable dict used for the determinism check. Run this file
directly to print the verdict lines without pytest.
"""
from functools import lru_cache
import json
import math
import time

import numpy as np
import pytest

from pqgrowth import besov as B
from pqgrowth import covering as C
from pqgrowth import integrand as I
from pqgrowth import lavrentiev as L
from pqgrowth import mesh as M
from pqgrowth import mollify as Mo
from pqgrowth import solver as S

UNIT2 = np.array([[0.0, 1.0], [0.0, 1.0]])
RESULTS = {}


def _timed(limit):
    def wrap(fn):
        def inner():
            t = time.perf_counter()
            ok, detail, report = fn()
            dt = time.perf_counter() - t
            ok = ok and dt < limit
            return ok, f"{detail}; {dt:.1f}s (limit {limit:g}s)", report
        inner.__name__ = fn.__name__
        return inner
    return wrap


def _dump(report):
    return json.dumps(report, sort_keys=True, default=float)


# ---------------------------------------------------------------------------
# 1. covering constants


@_timed(10)
def criterion_1():
    cov = C.wb_enlarge(C.whitney("unit-square", 8))
    a = cov.audit
    ok_m = a.multiplicity <= 21
    ok_o = a.overlap_min >= 1 / 196
    ok_d = a.distance_ok
    detail = (f"M={a.multiplicity} (<=21 {ok_m}), overlap={a.overlap_min:.4g} (>=1/196 {ok_o}), "
              f"distance ratio min={a.distance_ratio_min:.4g} vs {a.distance_required:.4g} "
              f"({a.distance_violations}/{cov.count} cubes violate)")
    return ok_m and ok_o and ok_d, detail, a.to_dict()


# ---------------------------------------------------------------------------
# 2. partition of unity


@_timed(30)
def criterion_2():
    consts = {}
    for depth in (6, 7, 8):
        consts[depth] = C.partition_of_unity(C.wb_enlarge(C.whitney("unit-square", depth))).gradient_constant()
    cov = C.wb_enlarge(C.whitney("unit-square", 8))
    pou = C.partition_of_unity(cov)
    X = C.covered_samples("unit-square", 8, 10_000, seed=0)
    sum_err = float(np.max(np.abs(pou.sum_at(X) - 1)))
    lower = pou.lower_bound_check(X)
    M_ = cov.audit.multiplicity
    spread = max(abs(c - consts[6]) / consts[6] for c in consts.values())
    ok = sum_err <= 1e-9 and lower >= 1 / M_ and spread <= 0.1
    detail = (f"max|sum-1|={sum_err:.2e}, min psi_i on Q_i={lower:.4g} vs 1/M={1 / M_:.4g}, "
              f"gradient constant {', '.join(f'{consts[d]:.4g}' for d in consts)} (spread {spread:.1%})")
    return ok, detail, {"sum_err": sum_err, "lower": lower, "constants": list(consts.values())}


# ---------------------------------------------------------------------------
# 3. hypothesis audits


@_timed(30)
def criterion_3():
    spec = I.SampleSpec(count=10_000, seed=0)
    failures, reports = [], {}
    for name in I.LIBRARY_NAMES:
        F = I.example_library(name)
        for h in F.hypotheses:
            rep = I.check_hypothesis(F, h, spec)
            reports[f"{name}:{h}"] = rep.details.get("violation_count", len(rep.violations))
            if not rep.passed:
                failures.append(f"{name}:{h}")
    F = I.example_library("double-phase", {"p": 2, "q": 3})
    from dataclasses import replace
    broken = replace(F, params=replace(F.params, p=F.params.q))
    brep = I.check_hypothesis(broken, "H1", spec)
    nb = brep.details.get("violation_count", len(brep.violations))
    ok = not failures and nb >= 1
    detail = (f"{len(reports)} audits, failing: {failures or 'none'}; "
              f"broken integrand violations={nb}")
    reports["broken"] = nb
    return ok, detail, reports


# ---------------------------------------------------------------------------
# 4. analytic minimisers


@_timed(60)
def criterion_4():
    # random seeded start: the interpolant of g is already the exact minimiser
    opts = S.SolveOptions(init="random", seed=0)
    errs = {}
    for p in (1.5, 2.0, 3.0):
        F = I.example_library("p-power", {"p": p, "n": 1})
        rep = S.minimize(F, M.Mesh([[0, 1]], 64), "x1", opts=opts)
        errs[f"1d p={p:g}"] = (abs(rep.energy - 1), 1e-6)
    F = I.example_library("p-power", {"p": 2})
    rep = S.minimize(F, M.Mesh(UNIT2, 64), "x1", opts=opts)
    errs["2d dirichlet"] = (abs(rep.energy - 1), 1e-5)
    ok = all(e <= tol for e, tol in errs.values())
    detail = ", ".join(f"{k}: |E-1|={e:.1e}" for k, (e, _) in errs.items())
    return ok, detail, {k: e for k, (e, _) in errs.items()}


# ---------------------------------------------------------------------------
# 5 and 6. regularisation path and Euler-Lagrange residual


@lru_cache(maxsize=1)
def _below_threshold_path():
    F = S.below_threshold_example()
    mesh = M.Mesh(UNIT2, 128)
    path = S.regularization_path(F, mesh, "x1", epsilons=[2.0 ** -k for k in range(3, 9)])
    ratios = [S.dual_norm_check(F, r.field, None, "x1")["ratio"] for _, r in path.entries]
    return path, ratios


@_timed(300)
def criterion_5():
    path, _ = _below_threshold_path()
    E = path.energies()
    d = path.cauchy_defects
    non_inc = all(b <= a for a, b in zip(E, E[1:]))
    dec = all(b < a for a, b in zip(d, d[1:]))
    ok = not path.failed and len(E) == 6 and non_inc and dec and d[-1] < 1e-2
    detail = (f"energies non-increasing={non_inc}, Cauchy defects "
              f"{' '.join(f'{x:.2e}' for x in d)} (monotone={dec})")
    return ok, detail, {"energies": E, "defects": d}


@_timed(300)
def criterion_6():
    path, ratios = _below_threshold_path()
    res = [r.el_residual for _, r in path.entries]
    conv = [r.converged for _, r in path.entries]
    spread = max(abs(r - ratios[0]) / ratios[0] for r in ratios)
    ok = all(conv) and max(res) <= 1e-6 and spread <= 0.2
    detail = (f"max relative residual={max(res):.2e}, dual ratios "
              f"{min(ratios):.4g}..{max(ratios):.4g} (spread {spread:.1%})")
    return ok, detail, {"residuals": res, "ratios": ratios}


# ---------------------------------------------------------------------------
# 7. mollification energy convergence


@_timed(180)
def criterion_7():
    F = S.below_threshold_example()
    cfg = Mo.ApproximantConfig(2, F.params.p, F.params.q)
    rng = np.random.default_rng(0)
    x0 = 0.3 + 0.4 * rng.random(2)
    eps = [2.0 ** -k for k in range(2, 8)]
    fitted, out = {}, {}
    for res in (64, 128):
        mesh = M.Mesh(UNIT2, res)
        u = Mo.point_singularity_field(mesh, x0, 0.5)
        cov = C.wb_enlarge(C.whitney("unit-square", int(math.log2(res)) + 1), cfg.m)
        target = M.energy(F, u)
        rows = Mo.convergence_study(F, u, cov, cfg, eps)
        h = float(mesh.h.min())
        informative = [r for r in rows
                       if np.any(Mo.cube_radii(cov, cfg.with_epsilon(r["epsilon"]), h) > h * (1 + 1e-9))]
        rel = [abs(r["energy"] - target) / target for r in informative]
        fitted[res] = {e: Mo.h4_commutation_defect(F, u, e) for e in (2 / 64, 4 / 64)}
        out[res] = rel
    rel = out[128]
    p95 = max(d.percentile(95) for per in fitted.values() for d in per.values())
    Cs = {e: (fitted[64][e].C, fitted[128][e].C) for e in fitted[64]}
    c_spread = max(abs(a - b) / a for a, b in Cs.values())
    ok = (rel[-1] <= 0.02 and all(b <= a for a, b in zip(rel, rel[1:])) and p95 == 0
          and c_spread <= 0.1)
    detail = (f"relative energy defects {' '.join(f'{x:.3g}' for x in rel)} over informative eps, "
              f"H4 p95 defect={p95:g}, fitted C "
              + ", ".join(f"{a:.4g}/{b:.4g}" for a, b in Cs.values()))
    return ok, detail, {"rel": out, "C": {str(k): v for k, v in Cs.items()}, "p95": p95}


# ---------------------------------------------------------------------------
# 8. Theta scaling


@_timed(120)
def criterion_8():
    cfg = Mo.ApproximantConfig(2, 2, 2.2)
    cov = C.wb_enlarge(C.whitney("unit-square", 8), cfg.m)
    x0 = (0.25 - 1 / 192, 0.3125)
    r = Mo.theta_scaling_study(cov, cfg, 2.2, x0)
    rel = abs(r["slope"] - r["Theta"]) / r["Theta"]
    ok = rel <= 0.15
    detail = f"slope={r['slope']:.4g}, Theta={r['Theta']:.4g} ({rel:.1%} off)"
    return ok, detail, r


# ---------------------------------------------------------------------------
# 9. Besov diagnostics


@_timed(300)
def criterion_9():
    F = S.below_threshold_example()
    s, p = F.params.alpha / max(2, F.params.p), F.params.p
    below = [B.dq_seminorm(M.gradient(S.minimize(F, M.Mesh(UNIT2, r), "x1").field), s, p).seminorm
             for r in (64, 128, 256)]
    G = L.checkerboard_example()
    s2, p2 = G.params.alpha / max(2, G.params.p), G.params.p
    g = L.checkerboard_datum()
    above = [B.dq_seminorm(M.gradient(S.minimize(G, M.Mesh(UNIT2, r), g,
                                                 opts=S.SolveOptions(space="cr")).field),
                           s2, p2).seminorm for r in (64, 128, 256)]
    stable = all(abs(b - a) <= 0.1 * a for a, b in zip(below, below[1:]))
    growth = [b / a - 1 for a, b in zip(above, above[1:])]
    ok = stable and all(x >= 0.25 for x in growth)
    detail = (f"below-threshold {' '.join(f'{x:.4g}' for x in below)} (stable={stable}); "
              f"checkerboard growth {' '.join(f'{x:+.1%}' for x in growth)}")
    return ok, detail, {"below": below, "above": above}


# ---------------------------------------------------------------------------
# 10. gap dichotomy

AUTONOMOUS = [("p-power", {"p": 1.5}), ("p-power", {"p": 2.0}), ("p-power", {"p": 3.0}),
              ("double-phase", {"a": "1"}), ("F2", {"weights": ["1", "1"]}),
              ("F4", {"p": 2, "q": 2.5}), ("composed-h", {"a": "1"}),
              ("log-growth", {"px": "2.3"})]


@_timed(900)
def criterion_10():
    verdicts = {}
    ladder = L.mesh_ladder(UNIT2, [16, 32, 64])
    for name, params in AUTONOMOUS:
        F = I.example_library(name, params)
        verdicts[f"{name}{params}"] = L.estimate_gap(F, ladder, "x1^2 + 0.5*x2").verdict
    rep = L.estimate_gap(S.below_threshold_example(), L.mesh_ladder(UNIT2, [64, 128, 256]), "x1")
    verdicts["below-threshold"] = rep.verdict
    _, reps = L.gap_sweep([3.2, 3.5, 3.8], [16, 32, 64, 128])
    gaps = [r.extrapolated_gap for r in reps]
    cb = [r.verdict for r in reps]
    auto_ok = all(v == "no-gap" for v in verdicts.values())
    monotone = all(b > a for a, b in zip(gaps, gaps[1:]))
    ok = auto_ok and cb[1] == "gap" and all(v == "gap" for v in cb) and monotone
    bad = [k for k, v in verdicts.items() if v != "no-gap"]
    detail = (f"no-gap cases {len(verdicts) - len(bad)}/{len(verdicts)}"
              + (f" (failing {bad})" if bad else "")
              + f"; checkerboard q=3.2/3.5/3.8 {'/'.join(cb)}, gaps "
              + " ".join(f"{x:.4g}" for x in gaps))
    return ok, detail, {"verdicts": verdicts, "gaps": gaps}


# ---------------------------------------------------------------------------
# 11. determinism


@_timed(300)
def criterion_11():
    fns = [criterion_1, criterion_3, criterion_4, criterion_8]
    same = []
    for fn in fns:
        a, b = _dump(fn()[2]), _dump(fn()[2])
        same.append(a == b)
    gap = [L.gap_sweep([3.5], [8, 16, 32])[1][0].to_json() for _ in range(2)]
    same.append(gap[0] == gap[1])
    path = [S.regularization_path(S.below_threshold_example(), M.Mesh(UNIT2, 16), "x1").to_json()
            for _ in range(2)]
    same.append(path[0] == path[1])
    ok = all(same)
    return ok, f"{sum(same)}/{len(same)} repeated runs byte-identical", {"same": same}


CRITERIA = [criterion_1, criterion_2, criterion_3, criterion_4, criterion_5, criterion_6,
            criterion_7, criterion_8, criterion_9, criterion_10, criterion_11]


def _line(k, ok, detail):
    return f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}"


@pytest.mark.parametrize("k", range(1, 12))
def test_criterion(k):
    ok, detail, _ = CRITERIA[k - 1]()
    RESULTS[k] = _line(k, ok, detail)
    print(RESULTS[k])
    assert ok, RESULTS[k]


if __name__ == "__main__":
    for k, fn in enumerate(CRITERIA, 1):
        ok, detail, _ = fn()
        print(_line(k, ok, detail), flush=True)
