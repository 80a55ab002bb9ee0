"""Discrete minimisation of F(x, Du) - f.u over a Dirichlet class, the
regularisation path eps_k -> 0 and Euler-Lagrange diagnostics.

The descent method is L-BFGS preconditioned by the (factorised) stiffness
matrix, with Armijo backtracking; every accepted step decreases the energy.
"""
from dataclasses import dataclass, field
import json
import math

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .errors import InvalidArgument, SolverDiagnostics
from .integrand import regularize
from .mesh import DiscreteField, Mesh, energy, gradient, interpolate, lp_norm, norm_ladder, source_values


@dataclass(frozen=True)
class SolveOptions:
    tol: float = 1e-6
    max_iter: int = 10_000
    space: str = "p1"
    init: str = "interpolant"     # or "random"
    seed: int = 0
    memory: int = 12
    armijo: float = 1e-4
    shrink: float = 0.5
    penalty: object = None        # optional callable(U, DU) -> (value, gradient wrt Du) added to the energy
    stagnation: int = 50


@dataclass
class SolveReport:
    energy: float
    el_residual: float
    el_residual_abs: float
    iterations: int
    converged: bool
    epsilon: float
    norm_ladder: object
    trace: list
    field: DiscreteField = None
    message: str = ""

    def to_dict(self):
        return {
            "energy": self.energy,
            "el_residual": self.el_residual,
            "el_residual_abs": self.el_residual_abs,
            "iterations": self.iterations,
            "converged": self.converged,
            "epsilon": self.epsilon,
            "norm_ladder": self.norm_ladder.to_dict() if self.norm_ladder is not None else None,
            "trace_head": self.trace[:5],
            "trace_tail": self.trace[-5:],
            "message": self.message,
        }

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)


class _Problem:
    """Energy and gradient of the discrete functional in the free dofs."""

    def __init__(self, F, mesh, kind, m, fvals, penalty=None):
        self.F, self.mesh, self.kind, self.m = F, mesh, kind, m
        self.G = mesh.grad_operator(kind)
        self.GT = self.G.T.tocsr()
        self.areas = mesh.areas
        self.bary = mesh.barycenters
        self.w = mesh.lumped_weights(kind)
        self.fvals = fvals
        self.penalty = penalty
        self.bmask = mesh.boundary_dofs(kind)
        self.free = np.flatnonzero(~self.bmask)

    def full(self, x, U0):
        U = U0.copy()
        U[self.free] = x.reshape(-1, self.m)
        return U

    def value_grad(self, x, U0):
        U = self.full(x, U0)
        M = self.mesh
        DU = (self.G @ U).reshape(M.n_elements, M.n, self.m)
        val = float(np.dot(self.areas, self.F.density(self.bary, DU)))
        S = self.F.gradient(self.bary, DU) * self.areas[:, None, None]
        if self.penalty is not None:
            pv, pg = self.penalty(U, DU)
            val += pv
            S = S + pg * self.areas[:, None, None]
        g = self.GT @ S.reshape(M.n_elements * M.n, self.m)
        if self.fvals is not None:
            val -= float(np.dot(self.w, np.sum(self.fvals * U, axis=1)))
            g = g - self.w[:, None] * self.fvals
        return val, g[self.free].ravel()

    def test_norms(self, q):
        """||D phi_j||_{L^q} for every dof basis function."""
        M = self.mesh
        C = self.G.tocoo()
        # entries of |D phi_j|^2 per element (duplicates are summed on conversion)
        sq = sp.csr_matrix((C.data ** 2, (C.col, C.row // M.n)), shape=(C.shape[1], M.n_elements))
        vals = sq.power(q / 2) @ self.areas
        return np.asarray(vals).ravel() ** (1.0 / q)


def _stiffness(mesh, kind, free):
    G = mesh.grad_operator(kind)
    A = sp.diags(np.repeat(mesh.areas, mesh.n))
    K = (G.T @ A @ G).tocsc()
    return K[free][:, free].tocsc()


def initial_field(mesh, g, m=1, kind="p1", init="interpolant", seed=0):
    u = interpolate(mesh, g, m=m, kind=kind)
    if init == "random":
        rng = np.random.default_rng(seed)
        vals = u.values.copy()
        free = ~u.boundary_mask
        vals[free] = vals[free] + rng.uniform(-0.5, 0.5, size=(int(free.sum()), m))
        u = u.with_values(vals)
    elif init != "interpolant":
        raise InvalidArgument(f"unknown init {init!r}")
    return u


def el_residual(F, u, f=None, relative_to=None):
    """max_j |int dF(x,Du).D phi_j - f phi_j| / ||D phi_j||_{L^q} over interior dofs
    and components; divided by ``relative_to`` when given."""
    prob = _Problem(F, u.mesh, u.kind, u.m, source_values(u, f))
    _, gvec = prob.value_grad(u.values[prob.free].ravel(), u.values)
    tn = prob.test_norms(F.params.q)[prob.free]
    r = np.abs(gvec.reshape(-1, u.m)) / tn[:, None]
    val = float(r.max()) if r.size else 0.0
    if relative_to:
        return val / relative_to
    return val


def minimize(F, mesh, g, f=None, epsilon=0.0, opts=None, u0=None):
    """Minimise the (regularised) discrete energy over fields with boundary values g."""
    opts = opts or SolveOptions()
    if not isinstance(mesh, Mesh):
        raise InvalidArgument("mesh expected")
    if F.n != mesh.n:
        raise InvalidArgument("integrand and mesh dimensions differ")
    if epsilon < 0:
        raise InvalidArgument("epsilon must be >= 0")
    Fe = regularize(F, epsilon) if epsilon > 0 else F
    m = F.m
    kind = opts.space
    if u0 is None:
        u0 = initial_field(mesh, g, m, kind, opts.init, opts.seed)
    else:
        if u0.mesh != mesh or u0.kind != kind:
            raise InvalidArgument("warm start lives on a different mesh or space")
        bd = interpolate(mesh, g, m=m, kind=kind)
        vals = u0.values.copy()
        vals[bd.boundary_mask] = bd.values[bd.boundary_mask]
        u0 = u0.with_values(vals)
    fvals = source_values(u0, f)
    prob = _Problem(Fe, mesh, kind, m, fvals, opts.penalty)
    U0 = u0.values
    x = U0[prob.free].ravel().copy()
    tn = prob.test_norms(F.params.q)[prob.free]
    tn_rep = np.repeat(tn, m)

    def resid(gv):
        return float(np.max(np.abs(gv) / tn_rep)) if gv.size else 0.0

    val, gv = prob.value_grad(x, U0)
    # residuals are measured relative to that of the g-interpolant, so warm
    # starts do not tighten the stopping rule
    ref = interpolate(mesh, g, m=m, kind=kind).values
    # (the penalty is left out of the reference: it only shapes the admissible set)
    pen, prob.penalty = prob.penalty, None
    r0 = resid(prob.value_grad(ref[prob.free].ravel(), ref)[1]) if x.size else 0.0
    prob.penalty = pen
    if r0 == 0.0:
        r0 = resid(gv)
    trace = [val]
    if x.size == 0 or r0 == 0.0 or resid(gv) == 0.0:
        uf = DiscreteField(mesh, prob.full(x, U0), kind=kind)
        return SolveReport(val, 0.0, r0, 0, True, epsilon, norm_ladder(uf), trace, uf, "initial field optimal")

    lu = splu(_stiffness(mesh, kind, prob.free))

    def precond(v):
        return lu.solve(v.reshape(-1, m)).ravel()

    S, Y, RHO = [], [], []
    it, converged, message = 0, False, ""
    stall = 0
    while it < opts.max_iter:
        r = resid(gv)
        if r <= opts.tol * r0:
            converged = True
            break
        # two-loop recursion
        qv = gv.copy()
        alphas = []
        for s_, y_, rho in zip(reversed(S), reversed(Y), reversed(RHO)):
            a = rho * np.dot(s_, qv)
            alphas.append(a)
            qv -= a * y_
        z = precond(qv)
        if S:
            z *= np.dot(S[-1], Y[-1]) / np.dot(Y[-1], precond(Y[-1]))
        for (s_, y_, rho), a in zip(zip(S, Y, RHO), reversed(alphas)):
            b = rho * np.dot(y_, z)
            z += (a - b) * s_
        d = -z
        slope = float(np.dot(gv, d))
        if not slope < 0:
            S, Y, RHO = [], [], []
            d = -precond(gv)
            slope = float(np.dot(gv, d))
        step = 1.0
        accepted = False
        for _ in range(60):
            xn = x + step * d
            vn, gn = prob.value_grad(xn, U0)
            if vn <= val + opts.armijo * step * slope:
                accepted = True
                break
            step *= opts.shrink
        it += 1
        if not accepted:
            if S:
                S, Y, RHO = [], [], []
                continue
            message = "line search failed along the preconditioned gradient"
            break
        s_vec, y_vec = xn - x, gn - gv
        sy = float(np.dot(s_vec, y_vec))
        scale = float(np.linalg.norm(s_vec) * np.linalg.norm(y_vec))
        if sy < -1e-10 * scale:
            raise SolverDiagnostics("negative curvature detected: the energy is not convex",
                                    report={"iteration": it, "sy": sy})
        if sy > 1e-14 * scale:
            S.append(s_vec)
            Y.append(y_vec)
            RHO.append(1.0 / sy)
            if len(S) > opts.memory:
                S.pop(0), Y.pop(0), RHO.pop(0)
        if val - vn <= 1e-15 * max(1.0, abs(val)):
            stall += 1
            if stall >= opts.stagnation:
                message = "stagnated at roundoff level"
                break
        else:
            stall = 0
        x, val, gv = xn, vn, gn
        trace.append(val)
    r = resid(gv)
    converged = converged or r <= opts.tol * r0
    uf = DiscreteField(mesh, prob.full(x, U0), kind=kind)
    if opts.penalty is not None:
        val = energy(Fe, uf, f)
    return SolveReport(val, r / r0, r, it, converged, epsilon, norm_ladder(uf), trace, uf,
                       message or ("converged" if converged else "max_iter reached"))


# ---------------------------------------------------------------------------
# regularisation path


@dataclass
class PathReport:
    entries: list
    limit_energy_estimate: float
    cauchy_defects: list
    failed: bool = False

    def energies(self):
        return [r.energy for _, r in self.entries]

    def to_dict(self):
        return {
            "entries": [{"epsilon": e, **r.to_dict()} for e, r in self.entries],
            "limit_energy_estimate": self.limit_energy_estimate,
            "cauchy_defects": self.cauchy_defects,
            "failed": self.failed,
        }

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)


def aitken(values):
    """Aitken delta-squared extrapolation of the last three values."""
    if len(values) < 3:
        return float(values[-1])
    a, b, c = values[-3:]
    den = (c - b) - (b - a)
    if den == 0 or not math.isfinite(den) or abs(den) < 1e-14 * max(1.0, abs(c)):
        return float(c)
    est = c - (c - b) ** 2 / den
    # only trust the extrapolation when the sequence contracts
    if abs(c - b) >= abs(b - a):
        return float(c)
    return float(est)


def default_schedule(F, mesh, g, count=6, start=1):
    ui = interpolate(mesh, g, m=F.m)
    nq = lp_norm(gradient(ui), F.params.q) ** F.params.q
    return [2.0 ** -k / (1 + nq) for k in range(start, start + count)]


def regularization_path(F, mesh, g, f=None, epsilons=None, opts=None):
    eps = list(default_schedule(F, mesh, g) if epsilons is None else epsilons)
    if any(e <= 0 for e in eps) or any(b >= a for a, b in zip(eps, eps[1:])):
        raise InvalidArgument("epsilons must be positive and strictly decreasing")
    opts = opts or SolveOptions()
    entries, warm, failed = [], None, False
    for e in eps:
        try:
            rep = minimize(F, mesh, g, f, e, opts, u0=warm)
        except SolverDiagnostics:
            failed = True
            break
        entries.append((e, rep))
        warm = rep.field
        if not rep.converged:
            failed = True
    p = F.params.p
    defects = []
    for (_, a), (_, b) in zip(entries, entries[1:]):
        diff = gradient(a.field.with_values(a.field.values - b.field.values))
        defects.append(lp_norm(diff, p))
    energies = [r.energy for _, r in entries]
    limit = aitken(energies) if energies else float("nan")
    return PathReport(entries, limit, defects, failed)


def dual_norm_check(F, u, f=None, g=None):
    """Ratio int |dF(x,Du)|^{q'} / (1 + int |f|^{q'} + |g|^q + |Dg|^q)."""
    mesh = u.mesh
    q = F.params.q
    qc = q / (q - 1)
    Du = gradient(u).values
    sig = F.gradient(mesh.barycenters, Du)
    num = float(np.dot(mesh.areas, np.sqrt(np.einsum("kij,kij->k", sig, sig)) ** qc))
    den = 1.0
    fv = source_values(u, f)
    if fv is not None:
        den += float(np.dot(mesh.lumped_weights(u.kind), np.linalg.norm(fv, axis=1) ** qc))
    if g is not None:
        gi = interpolate(mesh, g, m=u.m, kind=u.kind)
        den += lp_norm(gi, q) ** q + lp_norm(gradient(gi), q) ** q
    return {"numerator": num, "denominator": den, "ratio": num / den}


def below_threshold_example(alpha=0.5, p=2.0, q=2.2):
    """Double-phase with a vanishing on one diagonal half, a = dist^alpha on the other."""
    from .integrand import example_library

    return example_library("double-phase", {"p": p, "q": q, "alpha": alpha,
                                            "a": f"dist_half(1)^{alpha}"})
