"""Energy densities F(x, z) with (p, q)-growth and their hypothesis audits.

Points ``x`` are arrays of shape ``(N, n)``; gradients ``z`` have shape
``(N, n, m)`` with ``z[k, i, a]`` the derivative of component ``a`` in
direction ``i``. Every density shipped here is normalised so that
``F(x, 0) = 0``.
"""
from dataclasses import dataclass, field, replace
import json
import math

import numpy as np
from scipy.optimize import minimize_scalar

from .errors import InvalidArgument, UnsupportedFlavor
from .expr import Expression, as_field

FLAVORS = ("autonomous", "x-dependent", "variable-exponent", "anisotropic", "combined")
HYPOTHESES = ("H1", "H1.1", "H1.2", "H1.3", "H2", "H3", "H4",
              "lower-bound-1.2", "derivative-bound-1.3", "lemma-2.13")


@dataclass(frozen=True)
class GrowthParams:
    """Growth exponents and constants of an integrand.

    ``K`` is the implicit constant used for the ``≲`` relations (H2 is
    checked against ``Lambda`` directly, the derived bounds against ``K``).
    """

    p: float
    q: float
    alpha: float = 1.0
    mu: float = 0.0
    nu: float = 1.0
    Lambda: float = 1.0
    n: int = 2
    m: int = 1
    K: float = 10.0

    def __post_init__(self):
        vals = [self.p, self.q, self.alpha, self.mu, self.nu, self.Lambda, self.K]
        if not all(math.isfinite(v) for v in vals):
            raise InvalidArgument("growth parameters must be finite")
        if not 1 < self.p <= self.q:
            raise InvalidArgument(f"need 1 < p <= q, got p={self.p}, q={self.q}")
        if not 0 < self.alpha <= 1:
            raise InvalidArgument("alpha must lie in (0, 1]")
        if self.nu <= 0 or self.Lambda <= 0 or self.mu < 0:
            raise InvalidArgument("need nu > 0, Lambda > 0, mu >= 0")
        if int(self.n) != self.n or self.n < 1 or int(self.m) != self.m or self.m < 1:
            raise InvalidArgument("n and m must be positive integers")
        if self.p < self.n and self.q > self.n * self.p / (self.n - self.p) + 1e-12:
            raise InvalidArgument("q exceeds the Sobolev exponent np/(n-p)")

    @property
    def q_conj(self):
        return self.q / (self.q - 1.0)

    @property
    def threshold(self):
        """Largest admissible q, namely (n + alpha) p / n."""
        return (self.n + self.alpha) * self.p / self.n


@dataclass(frozen=True)
class Integrand:
    name: str
    params: GrowthParams
    flavor: str
    density: object
    gradient: object
    box: np.ndarray
    exponent: object = None          # p(x) for H1.1
    exponents: tuple = ()            # p_i or p_i(x) for H1.2 / H1.3
    weights: dict = field(default_factory=dict)
    radial: object = None            # profile phi(x, r) when F(x, z) = phi(x, |z|)
    hypotheses: tuple = ()
    eps0: float = None
    spec: dict = None

    def __post_init__(self):
        if self.flavor not in FLAVORS:
            raise InvalidArgument(f"unknown flavor {self.flavor!r}")
        box = np.asarray(self.box, dtype=float).reshape(-1, 2)
        object.__setattr__(self, "box", box)
        if box.shape[0] != self.params.n:
            raise InvalidArgument("box dimension does not match n")
        if self.eps0 is None:
            diam = float(np.linalg.norm(box[:, 1] - box[:, 0]))
            object.__setattr__(self, "eps0", 0.25 * diam)

    @property
    def n(self):
        return self.params.n

    @property
    def m(self):
        return self.params.m

    def __call__(self, x, z):
        return evaluate(self, x, z)


# ---------------------------------------------------------------------------
# evaluation


def _prepare(F, x, z):
    x = np.asarray(x, dtype=float)
    z = np.asarray(z, dtype=float)
    single = z.ndim <= 2 and x.ndim <= 1
    X = np.atleast_2d(x.reshape(-1, F.n) if x.size else x)
    Z = z.reshape(-1, F.n, F.m)
    if X.shape[0] == 1 and Z.shape[0] > 1:
        X = np.broadcast_to(X, (Z.shape[0], F.n))
    if X.shape[0] != Z.shape[0]:
        raise InvalidArgument("x and z batch sizes differ")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(Z))):
        raise InvalidArgument("non-finite input")
    return X, Z, single


def evaluate(F, x, z):
    """F(x, z); scalar for a single point, array for batches."""
    X, Z, single = _prepare(F, x, z)
    val = F.density(X, Z)
    return float(val[0]) if single else val


def grad_z(F, x, z):
    """Partial derivative in z, same shape convention as ``z``."""
    X, Z, single = _prepare(F, x, z)
    g = F.gradient(X, Z)
    return g[0] if single else g


def _norm(Z):
    return np.sqrt(np.einsum("kij,kij->k", Z, Z))


def _rpow(r, e):
    """r**e with 0**e = 0 for e > 0 (arrays, e broadcastable)."""
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.power(r, e)
    return np.where(r > 0, out, 0.0)


def _radial_grad(dphi_over_r, Z):
    return dphi_over_r[:, None, None] * Z


def regularize(F, epsilon):
    """Return F_eps(x, z) = F(x, z) + eps |z|^q."""
    epsilon = float(epsilon)
    if not epsilon > 0 or not math.isfinite(epsilon):
        raise InvalidArgument("epsilon must be positive")
    q = F.params.q
    base_d, base_g = F.density, F.gradient

    def density(X, Z):
        return base_d(X, Z) + epsilon * _rpow(_norm(Z), q)

    def gradient(X, Z):
        r = _norm(Z)
        return base_g(X, Z) + _radial_grad(epsilon * q * _rpow(r, q - 2.0), Z)

    radial = None
    if F.radial is not None:
        base_r = F.radial
        radial = lambda X, r: base_r(X, r) + epsilon * np.abs(r) ** q  # noqa: E731
    params = replace(F.params, Lambda=F.params.Lambda + epsilon)
    spec = dict(F.spec, regularize=epsilon) if F.spec is not None else None
    return replace(F, name=f"{F.name}+eps", params=params, density=density,
                   gradient=gradient, radial=radial, spec=spec)


def v_functional(mu, t, z):
    """V_{mu,t}(z) = (mu^2 + |z|^2)^((t-2)/4) z."""
    z = np.asarray(z, dtype=float)
    if not np.all(np.isfinite(z)) or not math.isfinite(mu) or not math.isfinite(t):
        raise InvalidArgument("non-finite input")
    if t <= 0:
        raise InvalidArgument("t must be positive")
    s = mu * mu + float(np.sum(z * z)) if z.ndim <= 2 else None
    if s is not None:
        if s == 0.0:
            return np.zeros_like(z)
        return s ** ((t - 2.0) / 4.0) * z
    flat = z.reshape(z.shape[0], -1)
    s = mu * mu + np.sum(flat * flat, axis=1)
    fac = np.where(s > 0, _rpow(s, (t - 2.0) / 4.0), 0.0)
    return fac.reshape((-1,) + (1,) * (z.ndim - 1)) * z


def fenchel_identity_check(F, x, z):
    """Relative defect of the extremal Fenchel-Young identity at (x, z).

    The conjugate is computed by maximising ``t |xi| - phi(x, t)`` over the
    ray through ``z``, which is exact for densities radial in ``z``.
    """
    if F.radial is None:
        raise UnsupportedFlavor(f"{F.name} is not radial in z")
    X, Z, _ = _prepare(F, x, z)
    val = float(F.density(X, Z)[0])
    xi = F.gradient(X, Z)[0]
    xz = float(np.sum(xi * Z[0]))
    s = float(np.linalg.norm(xi))
    r = float(np.linalg.norm(Z[0]))
    if s == 0.0:
        conj = -float(F.radial(X, np.zeros(1))[0])
    else:
        hi = 2.0 * r + 1.0
        res = minimize_scalar(lambda t: -(t * s - float(F.radial(X, np.array([t]))[0])),
                              bounds=(0.0, hi), method="bounded",
                              options={"xatol": 1e-12 * max(1.0, hi), "maxiter": 500})
        conj = -float(res.fun)
    return abs(xz - val - conj) / (1.0 + abs(xz))


# ---------------------------------------------------------------------------
# hypothesis audits


@dataclass(frozen=True)
class SampleSpec:
    count: int = 10_000
    zmin: float = 1e-3
    zmax: float = 1e2
    seed: int = 0
    refine: int = 0
    h4_centers: int = 64
    h4_directions: int = 48


@dataclass
class HypothesisReport:
    hypothesis: str
    sample_count: int
    seed: int
    violations: list
    fitted: dict
    details: dict = field(default_factory=dict)

    @property
    def passed(self):
        return not self.violations

    def to_dict(self):
        return {
            "hypothesis": self.hypothesis,
            "sample_count": self.sample_count,
            "seed": self.seed,
            "passed": self.passed,
            "violations": [_jsonable(v) for v in self.violations],
            "fitted": {k: float(v) for k, v in self.fitted.items()},
            "details": _jsonable(self.details),
        }

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    return obj


def sample_points(box, count, rng):
    box = np.asarray(box, dtype=float)
    return box[:, 0] + (box[:, 1] - box[:, 0]) * rng.random((count, box.shape[0]))


def sample_matrices(n, m, count, zmin, zmax, rng):
    """Log-uniform magnitudes in [zmin, zmax], uniform directions."""
    d = rng.standard_normal((count, n, m))
    d /= _norm(d)[:, None, None]
    r = np.exp(rng.uniform(np.log(zmin), np.log(zmax), count))
    return d * r[:, None, None]


def _record(X, Z, W, slack, idx, limit=50):
    out = []
    for k in idx[:limit]:
        out.append({
            "x": X[k].tolist(),
            "z": None if Z is None else Z[k].ravel().tolist(),
            "w": None if W is None else W[k].ravel().tolist(),
            "slack": float(slack[k]),
        })
    return out


def _bregman(F, X, Z, W):
    dz = Z - W
    num = F.density(X, Z) - F.density(X, W) - np.einsum("kij,kij->k", F.gradient(X, W), dz)
    return num, np.einsum("kij,kij->k", dz, dz)


def check_hypothesis(F, hyp, sampler=None):
    """Audit hypothesis ``hyp`` on seeded samples."""
    sampler = sampler or SampleSpec()
    if hyp not in HYPOTHESES:
        raise InvalidArgument(f"unknown hypothesis id {hyp!r}")
    if hyp == "H4":
        return _check_h4(F, sampler)
    P = F.params
    rng = np.random.default_rng(sampler.seed)
    N = int(sampler.count)
    X = sample_points(F.box, N, rng)
    Z = sample_matrices(F.n, F.m, N, sampler.zmin, sampler.zmax, rng)
    W = None
    tiny = 1e-9

    if hyp in ("H1", "H1.1", "H1.2", "H1.3"):
        W = sample_matrices(F.n, F.m, N, sampler.zmin, sampler.zmax, rng)
        num, dz2 = _bregman(F, X, Z, W)
        ratio = num / dz2
        mu2 = P.mu ** 2
        if hyp in ("H1", "H1.1"):
            if hyp == "H1":
                expo = np.full(N, P.p)
            else:
                if F.exponent is None:
                    raise UnsupportedFlavor(f"{F.name} has no exponent field")
                expo = np.asarray(F.exponent(X), dtype=float)
            base = mu2 + _norm(Z) ** 2 + _norm(W) ** 2
            weight = _rpow(base, (expo - 2.0) / 2.0)
            c = ratio / weight
        else:
            if not F.exponents:
                raise UnsupportedFlavor(f"{F.name} has no per-direction exponents")
            denom = np.zeros(N)
            for i, pi in enumerate(F.exponents):
                pe = np.asarray(pi(X), dtype=float) if callable(pi) else np.full(N, float(pi))
                zi, wi = Z[:, i, :], W[:, i, :]
                base = mu2 + (zi ** 2).sum(1) + (wi ** 2).sum(1)
                denom += _rpow(base, (pe - 2.0) / 2.0) * ((zi - wi) ** 2).sum(1)
            c = num / denom
        bad = np.flatnonzero(~(c >= P.nu * (1 - tiny)))
        fitted = {"nu": float(np.min(c))}
        slack = c - P.nu
    elif hyp == "H2":
        c = np.abs(F.density(X, Z)) / (1 + _norm(Z) ** 2) ** (P.q / 2)
        bad = np.flatnonzero(~(c <= P.Lambda * (1 + tiny)))
        fitted = {"Lambda": float(np.max(c))}
        slack = P.Lambda - c
    elif hyp == "H3":
        Y = sample_points(F.box, N, rng)
        dx = np.linalg.norm(X - Y, axis=1)
        keep = dx > 0
        c = np.zeros(N)
        c[keep] = (np.abs(F.density(X, Z) - F.density(Y, Z))[keep]
                   / (dx[keep] ** P.alpha * (1 + _norm(Z)[keep] ** 2) ** (P.q / 2)))
        bad = np.flatnonzero(~(c <= P.Lambda * (1 + tiny)))
        fitted = {"Lambda": float(np.max(c))}
        slack = P.Lambda - c
        W = Y[:, :, None]
    elif hyp == "lower-bound-1.2":
        val = F.density(X, Z)
        lhs = _norm(Z) ** P.p - 1
        c = np.where(lhs > 0, lhs / np.where(val > 0, val, np.nan), 0.0)
        c = np.where(np.isnan(c), np.inf, c)
        bad = np.flatnonzero(~(c <= P.K))
        fitted = {"C": float(np.max(c))}
        slack = P.K - c
    elif hyp == "derivative-bound-1.3":
        g = _norm(F.gradient(X, Z))
        c = g / (P.Lambda * (1 + _norm(Z) ** 2) ** ((P.q - 1) / 2))
        bad = np.flatnonzero(~(c <= P.K))
        fitted = {"C": float(np.max(c))}
        slack = P.K - c
    else:  # dual lower bound, with the |z|^p lower term
        g = F.gradient(X, Z)
        lhs = np.einsum("kij,kij->k", g, Z) + 1.0
        rhs = _norm(Z) ** P.p + _norm(g) ** P.q_conj
        c = lhs / rhs
        bad = np.flatnonzero(~(c >= 1.0 / P.K))
        fitted = {"c": float(np.min(c))}
        slack = c - 1.0 / P.K

    return HypothesisReport(hyp, N, sampler.seed, _record(X, Z, W, slack, bad), fitted,
                            {"violation_count": int(bad.size)})


def _ball_lattice(box, center, radius, per_axis):
    axes = []
    for i in range(box.shape[0]):
        lo = max(box[i, 0], center[i] - radius)
        hi = min(box[i, 1], center[i] + radius)
        axes.append(np.linspace(lo, hi, per_axis))
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, box.shape[0])
    inside = np.linalg.norm(grid - center, axis=1) <= radius * (1 + 1e-12)
    return grid[inside]


def _check_h4(F, sampler):
    rng = np.random.default_rng(sampler.seed)
    per_axis = (9 if F.n > 1 else 33) * 2 ** sampler.refine
    centers = sample_points(F.box, sampler.h4_centers, rng)
    radii = F.eps0 * rng.uniform(0.05, 1.0, sampler.h4_centers)
    Z = sample_matrices(F.n, F.m, sampler.h4_directions, sampler.zmin, sampler.zmax, rng)
    violations, witnesses = [], []
    worst = 0.0
    for x, eps in zip(centers, radii):
        Y = _ball_lattice(F.box, x, eps, per_axis)
        ny, nz = Y.shape[0], Z.shape[0]
        vals = F.density(np.repeat(Y, nz, axis=0), np.tile(Z, (ny, 1, 1))).reshape(ny, nz)
        colmin = vals.min(axis=0)
        scale = np.maximum(np.abs(colmin), 1e-300)
        excess = ((vals - colmin) / scale).max(axis=1)
        k = int(np.argmin(excess))
        worst = max(worst, float(excess[k]))
        if excess[k] > 1e-10:
            violations.append({"x": x.tolist(), "z": None, "w": None, "radius": float(eps),
                               "slack": -float(excess[k])})
        witnesses.append({"x": x.tolist(), "radius": float(eps), "y_hat": Y[k].tolist()})
    return HypothesisReport("H4", int(sampler.h4_centers * sampler.h4_directions), sampler.seed,
                            violations, {"max_relative_excess": worst},
                            {"witnesses": witnesses, "lattice_per_axis": per_axis})


# ---------------------------------------------------------------------------
# example library


def _unit_box(n):
    return np.array([[0.0, 1.0]] * n)


def _box_lattice(box, per_axis):
    axes = [np.linspace(b[0], b[1], per_axis) for b in box]
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, len(box))


def _field_range(fn, box):
    vals = fn(_box_lattice(box, 65 if len(box) > 1 else 2049))
    return float(np.min(vals)), float(np.max(vals))


def _calibrate(F, nu=None, Lambda=None):
    """Fill unspecified nu / Lambda from a wide deterministic sample with margin 2."""
    if nu is not None and Lambda is not None:
        return F
    wide = SampleSpec(count=4000, zmin=1e-4, zmax=1e3, seed=918273)
    updates = {}
    if Lambda is None:
        probe = replace(F, params=replace(F.params, Lambda=1e300))
        lam = max(check_hypothesis(probe, "H2", wide).fitted["Lambda"],
                  check_hypothesis(probe, "H3", wide).fitted["Lambda"], 1e-12)
        updates["Lambda"] = float(2.0 * lam)
    if nu is None:
        probe = replace(F, params=replace(F.params, nu=1e-300))
        ids = [h for h in F.hypotheses if h in ("H1", "H1.1", "H1.2", "H1.3")]
        vals = [check_hypothesis(probe, h, wide).fitted["nu"] for h in ids]
        updates["nu"] = float(0.5 * min(vals)) if vals else 1.0
    return replace(F, params=replace(F.params, **updates))


def _power_parts(p):
    def phi(r):
        return _rpow(r, p)

    def dphi_over_r(r):
        return p * _rpow(r, p - 2.0) if p >= 2 else np.where(r > 0, p * _rpow(r, p - 2.0), 0.0)

    return phi, dphi_over_r


def _make(name, params, flavor, density, gradient, box, hypotheses, spec, nu=None,
          Lambda=None, **kw):
    F = Integrand(name=name, params=params, flavor=flavor, density=density,
                  gradient=gradient, box=box, hypotheses=tuple(hypotheses), spec=spec, **kw)
    return _calibrate(F, nu=nu, Lambda=Lambda)


def _params(p, q, alpha, n, m, mu=0.0, nu=None, Lambda=None, K=10.0):
    return GrowthParams(p=p, q=q, alpha=alpha, mu=mu, nu=1.0 if nu is None else nu,
                        Lambda=1.0 if Lambda is None else Lambda, n=n, m=m, K=K)


def p_power(p=2.0, n=2, m=1, box=None, nu=None, Lambda=None, K=10.0):
    """F(z) = |z|^p."""
    box = _unit_box(n) if box is None else box
    phi, dr = _power_parts(p)
    spec = {"name": "p-power", "p": p, "n": n, "m": m}
    return _make("p-power", _params(p, p, 1.0, n, m, nu=nu, Lambda=Lambda, K=K), "autonomous",
                 lambda X, Z: phi(_norm(Z)),
                 lambda X, Z: _radial_grad(dr(_norm(Z)), Z),
                 box, ("H1", "H2", "H3", "H4"), spec, nu=nu, Lambda=Lambda,
                 radial=lambda X, r: phi(np.abs(r)))


def double_phase(p=2.0, q=3.0, a=None, alpha=1.0, n=2, m=1, box=None, nu=None,
                 Lambda=None, K=10.0, name="double-phase"):
    """F(x, z) = |z|^p + a(x) |z|^q with a >= 0 alpha-Hölder."""
    box = _unit_box(n) if box is None else np.asarray(box, dtype=float)
    if a is None:
        a = f"dist_quadrant(3)^{alpha}" if n == 2 else f"abs(x1)^{alpha}"
    afn = as_field(a, box)
    lo, _ = _field_range(afn, box)
    if lo < -1e-12:
        raise InvalidArgument("weight a(x) must be non-negative")
    php, drp = _power_parts(p)
    phq, drq = _power_parts(q)

    def density(X, Z):
        r = _norm(Z)
        return php(r) + afn(X) * phq(r)

    def gradient(X, Z):
        r = _norm(Z)
        return _radial_grad(drp(r) + afn(X) * drq(r), Z)

    spec = {"name": name, "p": p, "q": q, "alpha": alpha, "n": n, "m": m,
            "a": a if isinstance(a, str) else getattr(a, "text", None)}
    return _make(name, _params(p, q, alpha, n, m, nu=nu, Lambda=Lambda, K=K), "x-dependent",
                 density, gradient, box, ("H1", "H2", "H3", "H4"), spec, nu=nu,
                 Lambda=Lambda, weights={"a": afn},
                 radial=lambda X, r: php(np.abs(r)) + afn(X) * phq(np.abs(r)))


def weighted_power(p=2.0, a="1 + x1", alpha=1.0, n=2, m=1, box=None, L=None, nu=None,
                   Lambda=None, K=10.0):
    """F1: a(x) |z|^p with 1 <= a <= L."""
    box = _unit_box(n) if box is None else np.asarray(box, dtype=float)
    afn = as_field(a, box)
    lo, hi = _field_range(afn, box)
    if lo < 1 - 1e-12 or (L is not None and hi > L + 1e-12):
        raise InvalidArgument("F1 needs 1 <= a(x) <= L")
    phi, dr = _power_parts(p)
    spec = {"name": "F1", "p": p, "alpha": alpha, "n": n, "m": m, "a": a if isinstance(a, str) else None}
    return _make("F1", _params(p, p, alpha, n, m, nu=nu, Lambda=Lambda, K=K), "x-dependent",
                 lambda X, Z: afn(X) * phi(_norm(Z)),
                 lambda X, Z: _radial_grad(afn(X) * dr(_norm(Z)), Z),
                 box, ("H1", "H2", "H3", "H4"), spec, nu=nu, Lambda=Lambda,
                 weights={"a": afn}, radial=lambda X, r: afn(X) * phi(np.abs(r)))


def _check_ordered(exps):
    if any(b < a for a, b in zip(exps, exps[1:])):
        raise InvalidArgument("anisotropic exponents must be ordered p_1 <= ... <= p_n")


def directional_sum(exponents=(2.0, 2.5), weights=None, alpha=1.0, m=1, box=None, nu=None,
                    Lambda=None, K=10.0):
    """F2: sum_i a_i(x) |D_i u|^{p_i} with 1 <= a_i and p = p_1 <= ... <= p_n = q."""
    exps = tuple(float(e) for e in exponents)
    n = len(exps)
    _check_ordered(exps)
    box = _unit_box(n) if box is None else np.asarray(box, dtype=float)
    if weights is None:
        weights = tuple(f"1 + 0.5*x{i + 1}" for i in range(n))
    afns = [as_field(w, box) for w in weights]
    for fn in afns:
        if _field_range(fn, box)[0] < 1 - 1e-12:
            raise InvalidArgument("F2 weights must satisfy a_i >= 1")
    parts = [_power_parts(e) for e in exps]

    def density(X, Z):
        out = np.zeros(X.shape[0])
        for i, (fn, (phi, _)) in enumerate(zip(afns, parts)):
            out += fn(X) * phi(np.linalg.norm(Z[:, i, :], axis=1))
        return out

    def gradient(X, Z):
        G = np.zeros_like(Z)
        for i, (fn, (_, dr)) in enumerate(zip(afns, parts)):
            r = np.linalg.norm(Z[:, i, :], axis=1)
            G[:, i, :] = (fn(X) * dr(r))[:, None] * Z[:, i, :]
        return G

    spec = {"name": "F2", "exponents": list(exps), "alpha": alpha, "m": m,
            "weights": [w if isinstance(w, str) else None for w in weights]}
    return _make("F2", _params(exps[0], exps[-1], alpha, n, m, nu=nu, Lambda=Lambda, K=K),
                 "anisotropic", density, gradient, box, ("H1.2", "H2", "H3"), spec, nu=nu,
                 Lambda=Lambda, exponents=exps, weights={f"a{i + 1}": f for i, f in enumerate(afns)})


def quadratic_form_phase(p=2.0, q=2.0, lam="1", coupling=None, alpha=1.0, n=2, m=1, box=None,
                         nu=None, Lambda=None, K=10.0):
    """F4: |z|^p + (lam(x) <C z, z>)^{q/2} with C symmetric positive definite."""
    box = _unit_box(n) if box is None else np.asarray(box, dtype=float)
    lfn = as_field(lam, box)
    if _field_range(lfn, box)[0] < -1e-12:
        raise InvalidArgument("lambda(x) must be non-negative")
    C = np.eye(n * m) if coupling is None else np.asarray(coupling, dtype=float)
    if C.shape != (n * m, n * m) or not np.allclose(C, C.T):
        raise InvalidArgument("coupling must be a symmetric (nm x nm) matrix")
    if np.linalg.eigvalsh(C).min() <= 0:
        raise InvalidArgument("coupling must be positive definite")
    identity = np.allclose(C, np.eye(n * m))
    php, drp = _power_parts(p)

    def form(X, Z):
        v = Z.reshape(Z.shape[0], -1)
        return lfn(X) * np.einsum("ka,ab,kb->k", v, C, v), v

    def density(X, Z):
        f, _ = form(X, Z)
        return php(_norm(Z)) + _rpow(np.maximum(f, 0), q / 2)

    def gradient(X, Z):
        f, v = form(X, Z)
        fac = (q / 2) * _rpow(np.maximum(f, 0), q / 2 - 1) if q >= 2 else np.where(
            f > 0, (q / 2) * _rpow(f, q / 2 - 1), 0.0)
        g2 = (fac * lfn(X))[:, None] * 2.0 * (v @ C)
        return _radial_grad(drp(_norm(Z)), Z) + g2.reshape(Z.shape)

    radial = None
    if identity:
        radial = lambda X, r: php(np.abs(r)) + _rpow(lfn(X) * r * r, q / 2)  # noqa: E731
    spec = {"name": "F4", "p": p, "q": q, "alpha": alpha, "n": n, "m": m,
            "lam": lam if isinstance(lam, str) else None,
            "coupling": None if coupling is None else C.tolist()}
    return _make("F4", _params(p, q, alpha, n, m, nu=nu, Lambda=Lambda, K=K), "x-dependent",
                 density, gradient, box, ("H1", "H2", "H3", "H4"), spec, nu=nu, Lambda=Lambda,
                 weights={"lambda": lfn}, radial=radial)


def anisotropic_px(exponents=("2 + 0.25*x1", "2.25 + 0.25*x2"), p=None, q=None, alpha=1.0,
                   m=1, box=None, nu=None, Lambda=None, K=10.0):
    """F5: sum_i |D_i u|^{p_i(x)} with p <= p_i(x) <= q."""
    n = len(exponents)
    box = _unit_box(n) if box is None else np.asarray(box, dtype=float)
    efns = [as_field(e, box) for e in exponents]
    ranges = [_field_range(f, box) for f in efns]
    p = min(r[0] for r in ranges) if p is None else float(p)
    q = max(r[1] for r in ranges) + 0.5 if q is None else float(q)
    if any(r[0] < p - 1e-12 or r[1] > q + 1e-12 for r in ranges) or p <= 1:
        raise InvalidArgument("exponent fields must satisfy 1 < p <= p_i(x) <= q")

    def density(X, Z):
        out = np.zeros(X.shape[0])
        for i, fn in enumerate(efns):
            out += _rpow(np.linalg.norm(Z[:, i, :], axis=1), fn(X))
        return out

    def gradient(X, Z):
        G = np.zeros_like(Z)
        for i, fn in enumerate(efns):
            e = fn(X)
            r = np.linalg.norm(Z[:, i, :], axis=1)
            G[:, i, :] = (e * _rpow(r, e - 2.0))[:, None] * Z[:, i, :]
        return G

    spec = {"name": "anisotropic-px", "exponents": [e if isinstance(e, str) else None for e in exponents],
            "p": p, "q": q, "alpha": alpha, "m": m}
    return _make("anisotropic-px", _params(p, q, alpha, n, m, nu=nu, Lambda=Lambda, K=K),
                 "combined", density, gradient, box, ("H1.3", "H2", "H3"), spec, nu=nu,
                 Lambda=Lambda, exponents=tuple(efns))


def px_laplacian(px="2 - 0.3*max(0.5 - x1, 0)", p=None, q=None, alpha=1.0, n=2, m=1, box=None,
                 nu=None, Lambda=None, K=10.0):
    """|z|^{p(x)} with p <= p(x) <= q; q defaults to max p(x) + 0.5."""
    box = _unit_box(n) if box is None else np.asarray(box, dtype=float)
    efn = as_field(px, box)
    lo, hi = _field_range(efn, box)
    p = lo if p is None else float(p)
    q = hi + 0.5 if q is None else float(q)
    if lo < p - 1e-12 or hi > q + 1e-12 or p <= 1:
        raise InvalidArgument("exponent field must satisfy 1 < p <= p(x) <= q")

    def density(X, Z):
        return _rpow(_norm(Z), efn(X))

    def gradient(X, Z):
        e = efn(X)
        r = _norm(Z)
        return _radial_grad(e * _rpow(r, e - 2.0), Z)

    spec = {"name": "px-laplacian", "px": px if isinstance(px, str) else None, "p": p, "q": q,
            "alpha": alpha, "n": n, "m": m}
    return _make("px-laplacian", _params(p, q, alpha, n, m, nu=nu, Lambda=Lambda, K=K),
                 "variable-exponent", density, gradient, box, ("H1.1", "H2", "H3"), spec,
                 nu=nu, Lambda=Lambda, exponent=efn,
                 radial=lambda X, r: _rpow(np.abs(r), efn(X)))


def log_growth(px="2 + 0.3*x1", mu=1.0, p=None, q=None, alpha=1.0, n=2, m=1, box=None,
               nu=None, Lambda=None, K=10.0):
    """F6 with the mu-regularisation: phi(s) - phi(mu), phi(t) = t^{p(x)} log(1 + t),
    s = (mu^2 + |z|^2)^{1/2}. With mu = 0 this is |z|^{p(x)} log(1 + |z|)."""
    box = _unit_box(n) if box is None else np.asarray(box, dtype=float)
    efn = as_field(px, box)
    lo, hi = _field_range(efn, box)
    p = lo if p is None else float(p)
    q = hi + 0.5 if q is None else float(q)
    if lo < p - 1e-12 or hi > q + 1e-12 or p <= 1:
        raise InvalidArgument("exponent field must satisfy 1 < p <= p(x) <= q")
    mu = float(mu)

    def prof(X, r):
        e = efn(X)
        s = np.sqrt(mu * mu + r * r)
        return _rpow(s, e) * np.log1p(s) - (mu ** e * np.log1p(mu) if mu > 0 else 0.0)

    def density(X, Z):
        return prof(X, _norm(Z))

    def gradient(X, Z):
        e = efn(X)
        r = _norm(Z)
        s = np.sqrt(mu * mu + r * r)
        # d/dr phi(s) = phi'(s) r / s, so the factor multiplying z is phi'(s) / s
        with np.errstate(divide="ignore", invalid="ignore"):
            fac = e * _rpow(s, e - 2.0) * np.log1p(s) + _rpow(s, e - 1.0) / (1 + s)
        fac = np.where(s > 0, fac, 0.0)
        return _radial_grad(fac, Z)

    spec = {"name": "log-growth", "px": px if isinstance(px, str) else None, "mu": mu, "p": p,
            "q": q, "alpha": alpha, "n": n, "m": m}
    return _make("log-growth", _params(p, q, alpha, n, m, mu=mu, nu=nu, Lambda=Lambda, K=K),
                 "variable-exponent", density, gradient, box, ("H1.1", "H2", "H3"), spec,
                 nu=nu, Lambda=Lambda, exponent=efn, radial=lambda X, r: prof(X, np.abs(r)))


def max_phase(q=3.0, a="0.5 + 0.5*x1", alpha=1.0, n=2, m=1, box=None, nu=None, Lambda=None,
              K=10.0):
    """F7: |z|^q + a(x) max(|D_n u|, 0), q > 2.

    At the kink D_n u = 0 the gradient takes the ray limit, which is 0.
    """
    if q <= 2:
        raise InvalidArgument("F7 needs q > 2")
    box = _unit_box(n) if box is None else np.asarray(box, dtype=float)
    afn = as_field(a, box)
    if _field_range(afn, box)[0] < -1e-12:
        raise InvalidArgument("weight a(x) must be non-negative")
    phi, dr = _power_parts(q)

    def density(X, Z):
        return phi(_norm(Z)) + afn(X) * np.maximum(np.linalg.norm(Z[:, n - 1, :], axis=1), 0.0)

    def gradient(X, Z):
        G = _radial_grad(dr(_norm(Z)), Z)
        zn = Z[:, n - 1, :]
        r = np.linalg.norm(zn, axis=1)
        unit = np.where(r[:, None] > 0, zn / np.where(r > 0, r, 1.0)[:, None], 0.0)
        G[:, n - 1, :] += afn(X)[:, None] * unit
        return G

    spec = {"name": "F7-max", "q": q, "alpha": alpha, "n": n, "m": m,
            "a": a if isinstance(a, str) else None}
    return _make("F7-max", _params(q, q, alpha, n, m, nu=nu, Lambda=Lambda, K=K), "x-dependent",
                 density, gradient, box, ("H1", "H2", "H3", "H4"), spec, nu=nu, Lambda=Lambda,
                 weights={"a": afn})


def composed_h(p=2.0, q=2.5, a="x1*x2", alpha=1.0, n=2, m=1, box=None, nu=None, Lambda=None,
               K=10.0):
    """F8: h(a(x), z) = |z|^p + a(x) ((1 + |z|^2)^{q/2} - 1), increasing in a."""
    box = _unit_box(n) if box is None else np.asarray(box, dtype=float)
    afn = as_field(a, box)
    if _field_range(afn, box)[0] < -1e-12:
        raise InvalidArgument("a(x) must be non-negative")
    php, drp = _power_parts(p)

    def prof(X, r):
        return php(r) + afn(X) * ((1 + r * r) ** (q / 2) - 1)

    def gradient(X, Z):
        r = _norm(Z)
        return _radial_grad(drp(r) + afn(X) * q * (1 + r * r) ** (q / 2 - 1), Z)

    spec = {"name": "composed-h", "p": p, "q": q, "alpha": alpha, "n": n, "m": m,
            "a": a if isinstance(a, str) else None}
    return _make("composed-h", _params(p, q, alpha, n, m, nu=nu, Lambda=Lambda, K=K),
                 "x-dependent", lambda X, Z: prof(X, _norm(Z)), gradient, box,
                 ("H1", "H2", "H3", "H4"), spec, nu=nu, Lambda=Lambda, weights={"a": afn},
                 radial=lambda X, r: prof(X, np.abs(r)))


_LIBRARY = {
    "p-power": p_power,
    "double-phase": double_phase,
    "F1": weighted_power,
    "F2": directional_sum,
    "F3": lambda **kw: double_phase(name="F3", **kw),
    "F4": quadratic_form_phase,
    "F5": anisotropic_px,
    "anisotropic-px": anisotropic_px,
    "F6": log_growth,
    "log-growth": log_growth,
    "F7": max_phase,
    "F7-max": max_phase,
    "F8": composed_h,
    "composed-h": composed_h,
    "px-laplacian": px_laplacian,
}

LIBRARY_NAMES = tuple(_LIBRARY)


def example_library(name, parameters=None):
    """Build a named example integrand."""
    if name not in _LIBRARY:
        raise InvalidArgument(f"unknown integrand {name!r}")
    parameters = dict(parameters or {})
    parameters.pop("name", None)
    reg = parameters.pop("regularize", None)
    try:
        F = _LIBRARY[name](**parameters)
    except TypeError as exc:
        raise InvalidArgument(f"bad parameters for {name}: {exc}") from None
    return regularize(F, reg) if reg else F


# ---------------------------------------------------------------------------
# key-value serialisation


def dumps_spec(F_or_spec):
    """Serialise an integrand spec as ``key = value`` lines."""
    spec = F_or_spec.spec if isinstance(F_or_spec, Integrand) else F_or_spec
    if spec is None:
        raise InvalidArgument("integrand has no serialisable spec")
    lines = []
    for key in sorted(spec):
        val = spec[key]
        if val is None:
            continue
        lines.append(f"{key} = {json.dumps(val)}")
    return "\n".join(lines) + "\n"


def loads_spec(text):
    spec = {}
    for raw in text.splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise InvalidArgument(f"malformed line {raw!r}")
        key, val = (s.strip() for s in line.split("=", 1))
        try:
            spec[key] = json.loads(val)
        except json.JSONDecodeError:
            spec[key] = val
    if "name" not in spec:
        raise InvalidArgument("integrand spec needs a name")
    return spec


def from_spec(spec):
    spec = dict(spec)
    if "coupling" in spec and spec["coupling"] is not None:
        spec["coupling"] = np.asarray(spec["coupling"])
    for key in ("exponents", "weights"):
        if key in spec and isinstance(spec[key], list):
            spec[key] = tuple(spec[key])
    return example_library(spec.pop("name"), spec)
