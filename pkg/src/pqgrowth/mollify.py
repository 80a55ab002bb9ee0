"""Mollifiers, the two-parameter WB approximant, the H4 commutation defect and
the star-shaped rescaling u^s.

Grid convolutions work on nodal (P1) values; the kernel is sampled on the
mesh and renormalised so that the discrete mass is exactly one.
"""
from dataclasses import dataclass
from functools import lru_cache
import math

import numpy as np
from scipy import integrate, signal

from .covering import partition_of_unity
from .errors import InvalidArgument
from .expr import as_field
from .mesh import DiscreteField, cr_to_nodes, energy, evaluate_at, gradient, interpolate, sobolev_norm


def bump(r):
    """Unnormalised profile exp(-1 / (1 - r^2)) on |r| < 1."""
    r = np.asarray(r, dtype=float)
    out = np.zeros_like(r)
    inside = np.abs(r) < 1
    out[inside] = np.exp(-1.0 / (1.0 - r[inside] ** 2))
    return out


@lru_cache(maxsize=None)
def _bump_mass(n):
    if n == 1:
        return 2 * integrate.quad(lambda r: float(bump(r)), 0, 1, epsabs=1e-14, epsrel=1e-13)[0]
    if n == 2:
        return 2 * math.pi * integrate.quad(lambda r: float(bump(r)) * r, 0, 1,
                                            epsabs=1e-14, epsrel=1e-13)[0]
    raise InvalidArgument("kernel dimension must be 1 or 2")


@dataclass(frozen=True)
class Kernel:
    """Radially symmetric unit-mass mollifier supported in the ball of radius ``radius``."""

    radius: float
    n: int = 2

    def __post_init__(self):
        if not self.radius > 0:
            raise InvalidArgument("kernel radius must be positive")

    def __call__(self, Y):
        Y = np.atleast_2d(np.asarray(Y, dtype=float))
        r = np.linalg.norm(Y, axis=1) / self.radius
        return bump(r) / (_bump_mass(self.n) * self.radius ** self.n)

    def mass(self):
        return 1.0


@lru_cache(maxsize=16)
def _unit_rule(n, nr=40, nt=64):
    """Points and kernel weights (summing to one) for integration against the unit kernel."""
    t, w = np.polynomial.legendre.leggauss(nr)
    if n == 1:
        y = t[:, None]
        wt = w * bump(t)
    else:
        r = 0.5 * (t + 1)
        wr = 0.5 * w * r * bump(r)
        th = 2 * np.pi * np.arange(nt) / nt
        y = np.stack([np.outer(r, np.cos(th)).ravel(), np.outer(r, np.sin(th)).ravel()], axis=1)
        wt = np.repeat(wr, nt) * (2 * np.pi / nt)
    return y, wt / wt.sum()


def mollify_callable(fn, X, radius, n=None):
    """(fn * phi_radius)(x) by a product Gauss rule; fn maps (N, n) -> (N,) or (N, m)."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    n = X.shape[1] if n is None else n
    Y, w = _unit_rule(n)
    pts = (X[:, None, :] - radius * Y[None]).reshape(-1, n)
    vals = np.asarray(fn(pts), dtype=float)
    vals = vals.reshape(X.shape[0], Y.shape[0], -1)
    out = np.einsum("nkm,k->nm", vals, w)
    return out[:, 0] if out.shape[1] == 1 and np.ndim(fn(X[:1])) == 1 else out


# ---------------------------------------------------------------------------
# grid convolution


def _grid_shape(mesh):
    return tuple(r + 1 for r in mesh.resolution)


def _stencil(mesh, radius, offset=None):
    """Kernel samples at node offsets (plus a fractional ``offset`` in cells)."""
    h = mesh.h
    half = [int(math.ceil(radius / h[i])) + (1 if offset is not None else 0) for i in range(mesh.n)]
    axes = [np.arange(-half[i], half[i] + 1) + (0.0 if offset is None else offset[i])
            for i in range(mesh.n)]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    d = grid * h
    r = np.sqrt((d ** 2).sum(axis=-1)) / radius
    K = bump(r)
    return K, half


def _valid_correlate(arr, K):
    """out[k] = sum_t K[t] arr[k + t] over valid positions, per trailing component."""
    if arr.ndim == K.ndim:
        return signal.correlate(arr, K, mode="valid", method="auto")
    lead, trail = arr.shape[:K.ndim], arr.shape[K.ndim:]
    flat = arr.reshape(lead + (-1,))
    out = np.stack([signal.correlate(flat[..., a], K, mode="valid", method="auto")
                    for a in range(flat.shape[-1])], axis=-1)
    return out.reshape(out.shape[:K.ndim] + trail)


def mollify(u, epsilon):
    """Discrete convolution of a nodal field with the kernel of radius ``epsilon``.

    The result is meaningful on the nodes whose stencil stays inside the box
    (its ``support``); other nodes carry the input values.
    """
    mesh = u.mesh
    if epsilon < mesh.h.min() * (1 - 1e-12):
        raise InvalidArgument("epsilon is below the mesh scale")
    u = cr_to_nodes(u)
    shape = _grid_shape(mesh)
    K, half = _stencil(mesh, epsilon)
    K = K / K.sum()
    U = u.values.reshape(shape + (u.m,))
    conv = _valid_correlate(U, K)
    out = U.copy()
    sl = tuple(slice(half[i], shape[i] - half[i]) for i in range(mesh.n))
    support = np.zeros(shape, dtype=bool)
    if conv.size:
        out[sl] = conv
        support[sl] = True
    return DiscreteField(mesh, out.reshape(-1, u.m), u.boundary_mask, "p1", support.ravel())


# ---------------------------------------------------------------------------
# WB approximant


@dataclass(frozen=True)
class ApproximantConfig:
    n: int
    p: float
    q: float
    m: float = None
    epsilon: float = 0.125

    def __post_init__(self):
        if not 1 < self.p <= self.q:
            raise InvalidArgument("need 1 < p <= q")
        gap = self.Theta - self.n * (self.q - 1) / self.p * (1 - self.p / self.q)
        if gap <= 0:
            raise InvalidArgument("no admissible m: Theta - n(q-1)/p (1-p/q) <= 0")
        if self.m is None:
            object.__setattr__(self, "m", self.m_prime + 0.5)
        if not self.m * gap > 1:
            raise InvalidArgument("m violates m (Theta - n(q-1)/p (1-p/q)) > 1")
        if not self.epsilon > 0:
            raise InvalidArgument("epsilon must be positive")

    @property
    def Theta(self):
        return theta_exponent(self.n, self.p, self.q)

    @property
    def m_prime(self):
        gap = self.Theta - self.n * (self.q - 1) / self.p * (1 - self.p / self.q)
        return max(1.0, 1.0 / gap)

    def with_epsilon(self, epsilon):
        return ApproximantConfig(self.n, self.p, self.q, self.m, epsilon)


def theta_exponent(n, p, q):
    return 1 + n * (1 / q - 1 / p) if p < n else n / q


def cube_radii(cover, config, h=None):
    """Per-cube radii eps * delta_i with delta_i = |K_i|^{m/n}, clamped below
    ``dist(K_i, boundary)`` and (when ``h`` is given) at least one cell."""
    delta = cover.volumes() ** (config.m / cover.n)
    r = config.epsilon * delta
    dist = cover.distances()
    r = np.minimum(r, dist * (1 - 1e-9))
    if h is not None:
        r = np.maximum(r, h)
        r = np.where(dist <= h, h, r)
    return r


def wb_approximant(u, cover, pou, config):
    """u_eps = sum_i (u * phi_{eps delta_i}) psi_i on the mesh nodes."""
    if pou.cover is not cover:
        raise InvalidArgument("partition of unity belongs to a different cover")
    if config.n != u.mesh.n or cover.n != u.mesh.n:
        raise InvalidArgument("dimension mismatch between field, cover and config")
    mesh = u.mesh
    u = cr_to_nodes(u)
    h = float(mesh.h.min())
    radii = cube_radii(cover, config, h)
    X = mesh.nodes
    rows, cols, psi, _ = pou.evaluate_nodes(mesh)
    out = np.zeros_like(u.values)
    covered = np.zeros(X.shape[0], dtype=bool)
    covered[rows] = True
    # group cubes by radius; one grid convolution per distinct radius
    keys = np.round(radii / h, 9)
    for key in np.unique(keys[cols]):
        sel = keys[cols] == key
        r = float(radii[cols[sel]][0])
        vals = u.values if r <= h * (1 + 1e-9) else mollify(u, r).values
        np.add.at(out, rows[sel], psi[sel, None] * vals[rows[sel]])
    out[~covered] = u.values[~covered]
    return DiscreteField(mesh, out, u.boundary_mask, "p1")


def correction_term_norm(u, cover, pou, config, q, center, radius, nr=64, nt=64):
    """||A_2||_{L^q} on the disk B(center, radius) for a callable u, where
    A_2 = sum_i (u * phi_{eps delta_i}) D psi_i. Polar product quadrature about
    ``center`` with log-spaced radial nodes resolves a point singularity there."""
    fn = as_field(u, cover.domain.box)
    center = np.asarray(center, dtype=float)
    radii = cube_radii(cover, config)
    t, w = np.polynomial.legendre.leggauss(nr)
    lo, hi = math.log(1e-9 * radius), math.log(radius)
    s = 0.5 * (t + 1) * (hi - lo) + lo
    rho = np.exp(s)
    wr = 0.5 * (hi - lo) * w * rho * rho  # d rho = rho ds, area element rho d rho
    th = 2 * np.pi * (np.arange(nt) + 0.5) / nt
    X = center + np.stack([np.outer(rho, np.cos(th)).ravel(), np.outer(rho, np.sin(th)).ravel()], axis=1)
    W = np.repeat(wr, nt) * (2 * np.pi / nt)
    rows, cols, _, dpsi = pou.evaluate(X)
    A = np.zeros((X.shape[0], X.shape[1]))
    rkey = radii[cols]
    for r in np.unique(rkey):
        sel = rkey == r
        pts = X[rows[sel]]
        val = mollify_callable(fn, pts, float(r))
        np.add.at(A, rows[sel], np.asarray(val).reshape(-1, 1) * dpsi[sel])
    mag = np.linalg.norm(A, axis=1)
    return float(np.dot(W, mag ** q) ** (1 / q))


def loglog_slope(xs, ys):
    """Least-squares slope of log y against log x."""
    xs, ys = np.log(np.asarray(xs, float)), np.log(np.asarray(ys, float))
    A = np.vstack([xs, np.ones_like(xs)]).T
    return float(np.linalg.lstsq(A, ys, rcond=None)[0][0])


def theta_scaling_study(cover, config, q, center, gamma=0.05, epsilons=None, radius=0.05):
    """Slope of ||A_2||_{L^q} versus eps for u = |x - center|^gamma."""
    epsilons = [2.0 ** -k for k in range(3, 8)] if epsilons is None else list(epsilons)
    c = np.asarray(center, dtype=float)
    pou = partition_of_unity(cover)

    def u(X):
        return np.linalg.norm(X - c, axis=1) ** gamma

    norms = [correction_term_norm(u, cover, pou, config.with_epsilon(e), q, c, radius) for e in epsilons]
    return {"epsilons": epsilons, "norms": norms, "slope": loglog_slope(epsilons, norms),
            "Theta": config.Theta}


# ---------------------------------------------------------------------------
# H4 commutation defect


def _element_grids(mesh, values):
    """Split element values into the lower/upper triangle grids, shape (N1, N2, ...)."""
    n1, n2 = mesh.resolution
    v = values.reshape((n1, n2, 2) + values.shape[1:])
    return v[:, :, 0], v[:, :, 1]


def _convolve_elements(mesh, values, epsilon):
    """Kernel average of per-element values at nodes; returns (node grid array, valid mask)."""
    shape = _grid_shape(mesh)
    if mesh.n == 1:
        K, half = _stencil(mesh, epsilon, offset=(0.5,))
        # element i has midpoint node i + 1/2; offsets d = i - i' with kernel at (d + 1/2) h
        num = _valid_correlate(values, K)
        den = K.sum()
        a = half[0]
        out = np.full((shape[0],) + values.shape[1:], np.nan)
        idx = slice(a, a + num.shape[0])
        out[idx] = num / den
        valid = np.zeros(shape[0], dtype=bool)
        valid[idx] = True
        return out, valid
    L, U = _element_grids(mesh, values)
    KL, half = _stencil(mesh, epsilon, offset=(2 / 3, 1 / 3))
    KU, _ = _stencil(mesh, epsilon, offset=(1 / 3, 2 / 3))
    num = _valid_correlate(L, KL) + _valid_correlate(U, KU)
    den = KL.sum() + KU.sum()
    a, b = half
    out = np.full(shape + values.shape[1:], np.nan)
    sl = (slice(a, a + num.shape[0]), slice(b, b + num.shape[1]))
    out[sl] = num / den
    valid = np.zeros(shape, dtype=bool)
    valid[sl] = True
    return out, valid


@dataclass
class DefectReport:
    defect: np.ndarray     # per node, NaN where undefined
    ratio: np.ndarray      # F(x, (Du)_eps) / (1 + (F(., Du))_eps), NaN where undefined
    C: float
    C_max: float
    nodes: int

    def percentile(self, q=95):
        d = self.defect[np.isfinite(self.defect)]
        return float(np.percentile(d, q, method="inverted_cdf")) if d.size else 0.0


def h4_commutation_defect(F, u, epsilon, C=None):
    """max(0, F(x, (Du)*phi_eps) - C (1 + (F(., Du))*phi_eps)) at nodes with
    distance > eps to the boundary; C defaults to the 95th percentile of the ratio."""
    mesh = u.mesh
    if epsilon < mesh.h.min():
        raise InvalidArgument("epsilon is below the mesh scale")
    if epsilon > F.eps0:
        raise InvalidArgument("epsilon exceeds eps0 of the integrand")
    Du = gradient(u).values
    Fd = F.density(mesh.barycenters, Du)
    Dm, valid = _convolve_elements(mesh, Du, epsilon)
    Fm, _ = _convolve_elements(mesh, Fd, epsilon)
    valid = valid.ravel()
    X = mesh.nodes[valid]
    Z = Dm.reshape(-1, mesh.n, u.m)[valid]
    lhs = F.density(X, Z)
    rhs = 1.0 + Fm.ravel()[valid]
    ratio_v = lhs / rhs
    fitted = float(np.quantile(ratio_v, 0.95, method="inverted_cdf")) if ratio_v.size else 0.0
    Cuse = fitted if C is None else float(C)
    defect = np.full(mesh.n_nodes, np.nan)
    defect[valid] = np.maximum(0.0, lhs - Cuse * rhs)
    ratio = np.full(mesh.n_nodes, np.nan)
    ratio[valid] = ratio_v
    return DefectReport(defect, ratio, Cuse, float(ratio_v.max()) if ratio_v.size else 0.0,
                        int(valid.sum()))


# ---------------------------------------------------------------------------
# star-shaped rescaling


def box_gauge(box, Y):
    """Minkowski gauge of the box about its centre at points Y (absolute coordinates)."""
    box = np.asarray(box, dtype=float)
    c = box.mean(axis=1)
    hw = (box[:, 1] - box[:, 0]) / 2
    return np.max(np.abs(np.atleast_2d(Y) - c) / hw, axis=1)


def homogeneous_extension(u, Y):
    """Degree-one homogeneous extension about the box centre: t u(c + (y - c)/t), t = gauge > 1."""
    box = u.mesh.box
    c = box.mean(axis=1)
    Y = np.atleast_2d(Y)
    t = np.maximum(box_gauge(box, Y), 1.0)
    inside = c + (Y - c) / t[:, None]
    return t[:, None] * evaluate_at(u, inside)


def star_scale(u, s):
    """u^s(x) = s u(c + (x - c)/s) with u extended homogeneously outside the box."""
    if not 0.5 < s < 1:
        raise InvalidArgument("s must lie in (1/2, 1)")
    c = u.mesh.box.mean(axis=1)
    X = u.coords
    vals = s * homogeneous_extension(u, c + (X - c) / s)
    return DiscreteField(u.mesh, vals, u.boundary_mask, u.kind)


# ---------------------------------------------------------------------------
# studies


def convergence_study(F, u, cover, config, epsilons, p=None, f=None):
    """Rows (eps, ||u_eps - u||_{W^{1,p}}, energy(u_eps), boundary-adjacent sup defect)."""
    p = F.params.p if p is None else p
    pou = partition_of_unity(cover)
    u = cr_to_nodes(u)
    mesh = u.mesh
    # nodes adjacent to the boundary: one cell inside
    adj = np.zeros(mesh.n_nodes, dtype=bool)
    dist = np.min(np.minimum(mesh.nodes - mesh.box[:, 0], mesh.box[:, 1] - mesh.nodes), axis=1)
    adj[(dist > 0) & (dist <= mesh.h.max() * (1 + 1e-9))] = True
    rows = []
    for e in epsilons:
        ue = wb_approximant(u, cover, pou, config.with_epsilon(e))
        diff = ue.with_values(ue.values - u.values)
        rows.append({
            "epsilon": float(e),
            "w1p_error": sobolev_norm(diff, p),
            "energy": energy(F, ue, f),
            "boundary_defect": float(np.max(np.abs(diff.values[adj]), initial=0.0)),
        })
    return rows


def rows_to_csv(rows):
    if not rows:
        return ""
    keys = list(rows[0])
    lines = [",".join(keys)]
    for r in rows:
        lines.append(",".join(repr(float(r[k])) if r[k] is not None else "" for k in keys))
    return "\n".join(lines) + "\n"


def point_singularity_field(mesh, center, gamma=0.5, m=1):
    """Interpolant of |x - center|^gamma (a W^{1,p} field with a point gradient singularity)."""
    c = np.asarray(center, dtype=float)
    return interpolate(mesh, lambda X: np.linalg.norm(X - c, axis=1) ** gamma, m=m)
