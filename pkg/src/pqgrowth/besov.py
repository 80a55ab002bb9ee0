"""Difference-quotient Besov seminorms over cones of translations, the blended
translation T_h, and exponent bookkeeping for the a-priori estimates."""
from dataclasses import dataclass, field
import json
import math

import numpy as np

from .covering import _smooth_step
from .errors import InvalidArgument, OutOfRange
from .mesh import DiscreteField, ElementField, evaluate_at


@dataclass(frozen=True)
class ConeSpec:
    axis: tuple
    aperture: float = math.pi / 4
    height: float = None

    def __post_init__(self):
        a = np.asarray(self.axis, dtype=float)
        nrm = np.linalg.norm(a)
        if nrm == 0:
            raise InvalidArgument("cone axis must be non-zero")
        object.__setattr__(self, "axis", tuple(a / nrm))
        if not 0 < self.aperture < math.pi / 2:
            raise InvalidArgument("aperture must lie in (0, pi/2)")
        if self.height is not None and not self.height > 0:
            raise InvalidArgument("cone height must be positive")


def default_cone(box):
    """Inward normal of the face x1 = lower bound, aperture pi/4, height 0.1 diam."""
    box = np.asarray(box, dtype=float)
    n = box.shape[0]
    diam = float(np.linalg.norm(box[:, 1] - box[:, 0]))
    axis = np.zeros(n)
    axis[0] = 1.0
    return ConeSpec(tuple(axis), math.pi / 4, 0.1 * diam)


@dataclass
class BesovReport:
    s: float
    p: float
    seminorm: float
    argmax_h: tuple
    samples: list
    stability: list = field(default_factory=list)

    @property
    def root(self):
        """The seminorm in the un-powered form [v]_{s,p}."""
        return self.seminorm ** (1.0 / self.p)

    def to_dict(self):
        return {"s": self.s, "p": self.p, "seminorm": self.seminorm, "root": self.root,
                "argmax_h": list(self.argmax_h), "samples": self.samples,
                "stability": self.stability}

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)


def sample_translations(cone, n, h_min, count=16):
    """Dyadic lengths from the cone height down to ``h_min`` times a fan of directions."""
    rho = cone.height
    lengths = []
    L = rho
    while L >= h_min * (1 - 1e-12):
        lengths.append(L)
        L /= 2
    if not lengths:
        lengths = [rho]
    axis = np.asarray(cone.axis)
    if n == 1:
        dirs = [axis]
    else:
        nd = max(3, math.ceil(count / len(lengths)))
        if nd % 2 == 0:
            nd += 1
        base = math.atan2(axis[1], axis[0])
        angles = base + cone.aperture * np.linspace(-1, 1, nd) * (1 - 1e-9)
        dirs = [np.array([math.cos(a), math.sin(a)]) for a in angles]
    hs = [L * d for L in lengths for d in dirs]
    while len(hs) < count:  # refine lengths in 1D to reach the requested count
        extra = [0.75 * h for h in hs]
        hs = sorted(hs + extra, key=lambda v: -np.linalg.norm(v))
    return hs


def _points_and_values(v, region):
    """Quadrature points (element barycentres), weights and values of v there."""
    mesh = v.mesh
    X = mesh.barycenters
    w = mesh.areas
    if region is not None:
        region = np.asarray(region, dtype=float)
        keep = np.all((X > region[:, 0]) & (X < region[:, 1]), axis=1)
        X, w = X[keep], w[keep]
    else:
        keep = slice(None)
    if isinstance(v, ElementField):
        vals = v.values.reshape(v.values.shape[0], -1)[keep]
    else:
        vals = evaluate_at(v, X)
    return X, w, vals


def _eval(v, X):
    if isinstance(v, ElementField):
        return v(X).reshape(X.shape[0], -1)
    return evaluate_at(v, X)


def dq_integral(v, h, s, p, region=None):
    """int_{Omega_h} |v(x+h) - v(x)|^p / |h|^{sp} with Omega_h the |h|-inset of the region."""
    mesh = v.mesh
    box = mesh.box if region is None else np.asarray(region, dtype=float)
    h = np.atleast_1d(np.asarray(h, dtype=float))
    hn = float(np.linalg.norm(h))
    if hn == 0:
        return 0.0
    X, w, vx = _points_and_values(v, box if region is not None else None)
    inset = np.all((X > box[:, 0] + hn) & (X < box[:, 1] - hn), axis=1)
    if not np.any(inset):
        raise InvalidArgument("empty inset domain for this translation")
    X, w, vx = X[inset], w[inset], vx[inset]
    vh = _eval(v, X + h)
    diff = np.sqrt(np.sum((vh - vx) ** 2, axis=1))
    return float(np.dot(w, diff ** p)) / hn ** (s * p)


def dq_seminorm(v, s, p, cone=None, h_samples=16, region=None):
    """Sampled sup over translations in the cone of the difference-quotient integral."""
    if not 0 <= s < 1 or p < 1:
        raise InvalidArgument("need s in [0, 1) and p >= 1")
    if h_samples < 8:
        raise InvalidArgument("at least 8 translation samples are required")
    mesh = v.mesh
    box = mesh.box if region is None else np.asarray(region, dtype=float)
    cone = cone or default_cone(mesh.box)
    if cone.height is None:
        cone = ConeSpec(cone.axis, cone.aperture, 0.1 * float(np.linalg.norm(box[:, 1] - box[:, 0])))
    if cone.height >= float(np.min(box[:, 1] - box[:, 0])) / 2:
        raise InvalidArgument("translations must be shorter than half the domain")
    hs = sample_translations(cone, mesh.n, 2 * float(mesh.h.max()), h_samples)
    samples = []
    best, arg = -1.0, None
    for h in hs:
        val = dq_integral(v, h, s, p, region)
        samples.append({"h": [float(t) for t in h], "value": val})
        if val > best:
            best, arg = val, tuple(float(t) for t in h)
    return BesovReport(float(s), float(p), best, arg, samples)


def refinement_study(fields, s, p, cone=None, h_samples=16):
    """Seminorms of a list of fields on successively refined meshes."""
    reps = [dq_seminorm(v, s, p, cone, h_samples) for v in fields]
    values = [r.seminorm for r in reps]
    for r in reps:
        r.stability = values
    return reps


def localisation(v, s, p, cone=None, h_samples=16, overlap=0.25):
    """Global seminorm against the sum over a 2x2 overlapping cover of sub-boxes."""
    box = v.mesh.box
    n = box.shape[0]
    mid = box.mean(axis=1)
    half = (box[:, 1] - box[:, 0]) / 2
    pieces = []
    for corner in np.ndindex(*(2,) * n):
        lo = np.where(np.array(corner) == 0, box[:, 0], mid - overlap * half)
        hi = np.where(np.array(corner) == 0, mid + overlap * half, box[:, 1])
        pieces.append(np.stack([lo, hi], axis=1))
    cone = cone or default_cone(box)
    small = ConeSpec(cone.axis, cone.aperture, min(cone.height, 0.2 * float(half.min())))
    glob = dq_seminorm(v, s, p, small, h_samples).seminorm
    local = [dq_seminorm(v, s, p, small, h_samples, region=r).seminorm for r in pieces]
    total = float(sum(local))
    return {"global": glob, "local_sum": total, "ratio": glob / total if total > 0 else math.inf}


def translate_blend(v, h, x0, rho0):
    """T_h v = phi v(. + h) + (1 - phi) v, with v extended by zero outside the box and
    phi a smooth cutoff equal to 1 on B(x0, rho0) and vanishing outside B(x0, 2 rho0)."""
    h = np.atleast_1d(np.asarray(h, dtype=float))
    if np.linalg.norm(h) > rho0 * (1 + 1e-12):
        raise InvalidArgument("|h| must not exceed rho0")
    X = v.coords
    box = v.mesh.box
    Y = X + h
    inside = np.all((Y >= box[:, 0] - 1e-12) & (Y <= box[:, 1] + 1e-12), axis=1)
    vh = np.zeros_like(v.values)
    if np.any(inside):
        vh[inside] = evaluate_at(v, Y[inside])
    phi = cutoff(X, x0, rho0)
    vals = phi[:, None] * vh + (1 - phi[:, None]) * v.values
    return DiscreteField(v.mesh, vals, v.boundary_mask, v.kind)


def cutoff(X, x0, rho0):
    r = np.linalg.norm(np.atleast_2d(X) - np.asarray(x0, dtype=float), axis=1)
    s, _ = _smooth_step((2 * rho0 - r) / rho0)
    return s


@dataclass(frozen=True)
class AprioriExponents:
    target_exponent: float
    theta: float
    higher_diff_order: float
    q_theta_below_p: bool
    q_supremum: float

    def to_dict(self):
        return dict(self.__dict__)


def apriori_exponents(params, beta):
    """Target exponent np/(n-beta), interpolation exponent theta and the
    higher-differentiability order alpha / max(2, p)."""
    n, p, q, alpha = params.n, params.p, params.q, params.alpha
    if not 0 <= beta < alpha:
        raise InvalidArgument("beta must lie in [0, alpha)")
    target = n * p / (n - beta)
    if beta == 0:
        theta = 0.0 if q == p else math.inf
    else:
        theta = n * p / beta * (1 / p - 1 / q)
    flag = q * theta < p if math.isfinite(theta) else False
    return AprioriExponents(target, theta, alpha / max(2.0, p), bool(flag), (n + alpha) * p / n)


def embedding_exponent(s, p, n):
    """p_1 with s - n/p = -n/p_1."""
    if p < 1 or n < 1:
        raise InvalidArgument("need p >= 1 and n >= 1")
    d = n / p - s
    if d <= 0:
        raise OutOfRange("supercritical: s - n/p >= 0")
    return n / d
