"""Whitney and Whitney-Besicovitch coverings of boxes, with a smooth partition of unity.

Cubes are stored as ``(center, side)``. A Whitney family is truncated at a
dyadic depth; cubes at the floor that still fail the Whitney test are kept
separately in ``truncated`` and never enter the audits.
"""
from dataclasses import dataclass, field
import csv
import io
import math

import numpy as np

from .errors import InternalError, InvalidArgument

DELTA = 1.0 / 6.0


@dataclass(frozen=True)
class Domain:
    """Open box minus an optional closed rectangular hole."""

    box: np.ndarray
    hole: np.ndarray = None

    def __post_init__(self):
        box = np.asarray(self.box, dtype=float).reshape(-1, 2)
        object.__setattr__(self, "box", box)
        if not np.all(np.isfinite(box)):
            raise InvalidArgument("the domain has empty complement; a bounded box is required")
        if np.any(box[:, 1] <= box[:, 0]):
            raise InvalidArgument("degenerate box")
        if self.hole is not None:
            hole = np.asarray(self.hole, dtype=float).reshape(-1, 2)
            if hole.shape != box.shape or np.any(hole[:, 0] < box[:, 0]) or np.any(hole[:, 1] > box[:, 1]):
                raise InvalidArgument("hole must be a sub-rectangle of the box")
            object.__setattr__(self, "hole", hole)

    @property
    def n(self):
        return self.box.shape[0]

    def contains(self, X):
        X = np.atleast_2d(X)
        inside = np.all((X > self.box[:, 0]) & (X < self.box[:, 1]), axis=1)
        if self.hole is not None:
            inside &= ~np.all((X >= self.hole[:, 0]) & (X <= self.hole[:, 1]), axis=1)
        return inside

    def inf_distance(self, X):
        """Sup-norm distance from points of the domain to its complement."""
        X = np.atleast_2d(X)
        d = np.minimum(X - self.box[:, 0], self.box[:, 1] - X).min(axis=1)
        if self.hole is not None:
            gap = np.maximum(self.hole[:, 0] - X, X - self.hole[:, 1]).max(axis=1)
            d = np.minimum(d, gap)
        return np.where(self.contains(X), d, 0.0)

    def box_distance(self, lo, hi):
        """Euclidean distance from closed boxes [lo, hi] (rows) to the boundary."""
        d = np.minimum(lo - self.box[:, 0], self.box[:, 1] - hi).min(axis=1)
        if self.hole is not None:
            gap = np.maximum(np.maximum(self.hole[:, 0] - hi, lo - self.hole[:, 1]), 0.0)
            d = np.minimum(d, np.sqrt((gap ** 2).sum(axis=1)))
        return d

    def box_inside(self, lo, hi):
        """Closed boxes contained in the open domain."""
        ok = np.all((lo > self.box[:, 0]) & (hi < self.box[:, 1]), axis=1)
        if self.hole is not None:
            apart = np.any((hi < self.hole[:, 0]) | (lo > self.hole[:, 1]), axis=1)
            ok &= apart
        return ok


def parse_domain(spec):
    """Domain from a name: unit-interval, unit-square, square-with-hole, R^n."""
    if isinstance(spec, Domain):
        return spec
    s = str(spec).strip().lower()
    if s in ("unit-interval", "interval"):
        return Domain([[0.0, 1.0]])
    if s in ("unit-square", "square"):
        return Domain([[0.0, 1.0], [0.0, 1.0]])
    if s in ("square-with-hole", "unit-square-hole"):
        return Domain([[0.0, 1.0], [0.0, 1.0]], [[0.375, 0.625], [0.375, 0.625]])
    if s in ("r^1", "r^2", "r^n", "r1", "r2", "rn", "whole-space"):
        raise InvalidArgument("the domain has empty complement")
    raise InvalidArgument(f"unknown domain {spec!r}")


@dataclass
class Whitney:
    domain: Domain
    depth: int
    centers: np.ndarray
    sides: np.ndarray
    levels: np.ndarray
    truncated: np.ndarray  # (k, n) centers of floor cubes failing the test

    @property
    def count(self):
        return self.sides.size


def whitney(domain, depth=8):
    """Maximal dyadic cubes Q of the root box with closed 2Q inside the domain."""
    domain = parse_domain(domain)
    box = domain.box
    sides0 = box[:, 1] - box[:, 0]
    if not np.allclose(sides0, sides0[0]):
        raise InvalidArgument("the root box must be a cube for dyadic subdivision")
    if depth < 0 or depth > 14:
        raise InvalidArgument("depth must lie in 0..14")
    n = domain.n
    L = float(sides0[0])
    centers, sides, levels, trunc = [], [], [], []
    cur = (box[:, 0] + 0.5 * L)[None, :]
    offsets = np.array(np.meshgrid(*[[-1, 1]] * n, indexing="ij")).reshape(n, -1).T * 0.25
    for lvl in range(depth + 1):
        side = L / 2 ** lvl
        lo, hi = cur - side, cur + side  # the closed double cube 2Q
        ok = domain.box_inside(lo, hi)
        centers.append(cur[ok])
        sides.append(np.full(ok.sum(), side))
        levels.append(np.full(ok.sum(), lvl))
        rest = cur[~ok]
        if domain.hole is not None and rest.size:
            qlo, qhi = rest - side / 2, rest + side / 2
            inside_hole = np.all((qlo >= domain.hole[:, 0]) & (qhi <= domain.hole[:, 1]), axis=1)
            rest = rest[~inside_hole]
        if lvl == depth:
            trunc.append(rest)
            break
        cur = (rest[:, None, :] + offsets[None, :, :] * side).reshape(-1, n)
    order_c = np.concatenate(centers)
    order_s = np.concatenate(sides)
    order_l = np.concatenate(levels)
    # deterministic lexicographic order (level, then coordinates)
    idx = np.lexsort(tuple(order_c[:, k] for k in reversed(range(n))) + (order_l,))
    return Whitney(domain, depth, order_c[idx], order_s[idx], order_l[idx],
                   np.concatenate(trunc) if trunc else np.zeros((0, n)))


@dataclass
class CoverAudit:
    multiplicity: int
    multiplicity_bound: int
    overlap_min: float
    overlap_bound: float
    comparability: bool
    coverage: bool
    containment: bool
    distance_ratio_min: float
    distance_required: float
    distance_violations: int
    worst_pair: tuple = None

    @property
    def distance_ok(self):
        return self.distance_violations == 0

    @property
    def structural_ok(self):
        return (self.multiplicity <= self.multiplicity_bound and self.overlap_min >= self.overlap_bound
                and self.comparability and self.coverage and self.containment)

    def to_dict(self):
        d = dict(self.__dict__)
        d["distance_ok"] = self.distance_ok
        d["structural_ok"] = self.structural_ok
        d["worst_pair"] = None if self.worst_pair is None else [int(t) for t in self.worst_pair]
        return {k: (float(v) if isinstance(v, (np.floating,)) else v) for k, v in d.items()}


@dataclass
class WBCover:
    whitney: Whitney
    centers: np.ndarray
    sides: np.ndarray       # sides of K_i
    scales: np.ndarray      # delta_i = |K_i|^{m/n}
    m_exponent: float
    neighbors: list
    audit: CoverAudit
    constants: dict = field(default_factory=dict)

    @property
    def n(self):
        return self.centers.shape[1]

    @property
    def count(self):
        return self.sides.size

    @property
    def base_sides(self):
        return self.whitney.sides

    @property
    def domain(self):
        return self.whitney.domain

    def volumes(self):
        return self.sides ** self.n

    def distances(self):
        lo, hi = self.centers - self.sides[:, None] / 2, self.centers + self.sides[:, None] / 2
        return self.domain.box_distance(lo, hi)

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["index"] + [f"c{i + 1}" for i in range(self.n)] + ["side", "delta", "flags"])
        for i in range(self.count):
            w.writerow([i] + [repr(float(c)) for c in self.centers[i]]
                       + [repr(float(self.sides[i])), repr(float(self.scales[i])), ""])
        for c in self.whitney.truncated:
            w.writerow([-1] + [repr(float(t)) for t in c] + [repr(float(self.whitney.sides.min() if self.whitney.count else 0)), "", "truncated"])
        return buf.getvalue()


def _neighbors(lo, hi, chunk=512):
    """Index lists of boxes whose closures meet each box (excluding itself)."""
    N = lo.shape[0]
    out = []
    for s in range(0, N, chunk):
        a_lo, a_hi = lo[s:s + chunk, None, :], hi[s:s + chunk, None, :]
        meet = np.all((a_lo <= hi[None]) & (lo[None] <= a_hi), axis=2)
        for k in range(meet.shape[0]):
            row = np.flatnonzero(meet[k])
            out.append(row[row != s + k])
    return out


def _multiplicity(lo, hi, nbrs, closed):
    best = 1
    for a, nb in enumerate(nbrs):
        group = np.concatenate([[a], nb])
        glo, ghi = lo[group], hi[group]
        # every clique point can be moved to (max of lower corners) along each axis;
        # those coordinates are lower corners of members meeting box a
        n = lo.shape[1]
        axes = [glo[:, k] for k in range(n)]
        pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, n)
        if closed:
            inside = np.all((pts[:, None, :] >= glo[None]) & (pts[:, None, :] <= ghi[None]), axis=2)
        else:
            inside = np.all((pts[:, None, :] >= glo[None]) & (pts[:, None, :] < ghi[None]), axis=2)
        best = max(best, int(inside.sum(axis=1).max()))
    return best


def wb_enlarge(wh, m_exponent=1.0, coverage_samples=20_000, seed=0):
    """Enlarge Whitney cubes to K_i = (7/6) Q_i and audit the covering constants."""
    if m_exponent < 1:
        raise InvalidArgument("m-exponent must be >= 1")
    n = wh.domain.n
    if wh.count == 0:
        raise InvalidArgument("empty Whitney family")
    sides = (1 + DELTA) * wh.sides
    lo = wh.centers - sides[:, None] / 2
    hi = wh.centers + sides[:, None] / 2
    nbrs = _neighbors(lo, hi)
    vol = sides ** n

    # overlap ratio and comparability over intersecting pairs
    overlap_min, worst, comp = math.inf, None, True
    for i, nb in enumerate(nbrs):
        if nb.size == 0:
            continue
        inter = np.prod(np.clip(np.minimum(hi[i], hi[nb]) - np.maximum(lo[i], lo[nb]), 0, None), axis=1)
        ratio = inter / np.maximum(vol[i], vol[nb])
        k = int(np.argmin(ratio))
        if ratio[k] < overlap_min:
            overlap_min, worst = float(ratio[k]), (i, int(nb[k]))
        r = wh.sides[nb] / wh.sides[i]
        comp &= bool(np.all(np.isclose(r, 0.5) | np.isclose(r, 1.0) | np.isclose(r, 2.0)))

    mult = max(_multiplicity(lo, hi, nbrs, closed=True), _multiplicity(lo, hi, nbrs, closed=False))
    mbound = 6 ** n - 4 ** n + 1

    containment = bool(np.all(wh.domain.box_inside(lo, hi)))

    # coverage by the base cubes (hence by the K_i) away from the truncation strip
    rng = np.random.default_rng(seed)
    box = wh.domain.box
    X = box[:, 0] + (box[:, 1] - box[:, 0]) * rng.random((coverage_samples, n))
    floor = 1.5 * (box[0, 1] - box[0, 0]) / 2 ** wh.depth
    X = X[wh.domain.inf_distance(X) > floor]
    coverage = bool(np.all(_count_containing(X, wh.centers - wh.sides[:, None] / 2,
                                             wh.centers + wh.sides[:, None] / 2) > 0))

    dist = wh.domain.box_distance(lo, hi)
    required = 2.0 / (1 + DELTA) ** (1.0 / n) * vol ** (1.0 / n)
    dviol = int(np.sum(dist < required * (1 - 1e-12)))

    audit = CoverAudit(
        multiplicity=mult, multiplicity_bound=mbound,
        overlap_min=overlap_min if math.isfinite(overlap_min) else 1.0,
        overlap_bound=1.0 / 14 ** n, comparability=comp, coverage=coverage,
        containment=containment,
        distance_ratio_min=float(np.min(dist / vol ** (1.0 / n))),
        distance_required=2.0 / (1 + DELTA) ** (1.0 / n),
        distance_violations=dviol, worst_pair=worst,
    )
    if not audit.structural_ok:
        raise InternalError("WB covering self-check failed", detail=audit.to_dict())
    return WBCover(wh, wh.centers.copy(), sides, vol ** (m_exponent / n), float(m_exponent), nbrs,
                   audit, {"delta": DELTA, "epsilon_overlap": audit.overlap_min, "M": mult})


def _count_containing(X, lo, hi, chunk=2048):
    cnt = np.zeros(X.shape[0], dtype=int)
    for s in range(0, X.shape[0], chunk):
        P = X[s:s + chunk, None, :]
        cnt[s:s + chunk] = np.all((P >= lo[None]) & (P <= hi[None]), axis=2).sum(axis=1)
    return cnt


# ---------------------------------------------------------------------------
# partition of unity


def _smooth_step(t):
    """C-infinity step: 0 for t <= 0, 1 for t >= 1, and its derivative."""
    t = np.clip(t, 0.0, 1.0)
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        a = np.where(t > 0, np.exp(-1.0 / t), 0.0)
        b = np.where(t < 1, np.exp(-1.0 / (1 - t)), 0.0)
        s = a / (a + b)
        da = np.where(t > 0, a / t ** 2, 0.0)
        db = np.where(t < 1, -b / (1 - t) ** 2, 0.0)
        ds = (da * (a + b) - a * (da + db)) / (a + b) ** 2
    return s, np.nan_to_num(ds)


@dataclass
class PartitionOfUnity:
    cover: WBCover
    inner: np.ndarray   # half-widths where the raw bump equals 1 (the base cubes)
    outer: np.ndarray   # half-widths of the support cubes

    _node_cache: dict = field(default_factory=dict, repr=False)

    def evaluate_nodes(self, mesh):
        """Cached :meth:`evaluate` at the nodes of ``mesh``."""
        key = (mesh.resolution, mesh.box.tobytes())
        if key not in self._node_cache:
            self._node_cache[key] = self.evaluate(mesh.nodes)
        return self._node_cache[key]

    @property
    def support_sides(self):
        return 2 * self.outer

    def _raw(self, X, idx):
        """Raw bumps and gradients of cubes ``idx`` at points X: (N, k), (N, k, n)."""
        c = self.cover.centers[idx]
        a, b = self.inner[idx], self.outer[idx]
        d = np.abs(X[:, None, :] - c[None])
        t = (b[None, :, None] - d) / (b - a)[None, :, None]
        s, ds = _smooth_step(t)
        raw = np.prod(s, axis=2)
        sign = np.sign(X[:, None, :] - c[None])
        dt = -sign / (b - a)[None, :, None]
        n = X.shape[1]
        grad = np.empty(s.shape)
        for k in range(n):
            others = np.prod(np.delete(s, k, axis=2), axis=2) if n > 1 else 1.0
            grad[:, :, k] = ds[:, :, k] * dt[:, :, k] * others
        return raw, grad

    def evaluate(self, X, chunk=1024):
        """Dense (N, I) arrays of psi_i(x) and the (N, I, n) gradients would be large;
        this returns per-point lists via sparse triples (rows, cols, psi, dpsi)."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        lo = self.cover.centers - self.outer[:, None]
        hi = self.cover.centers + self.outer[:, None]
        rows, cols, vals, grads = [], [], [], []
        for s in range(0, X.shape[0], chunk):
            P = X[s:s + chunk]
            hit = np.all((P[:, None, :] > lo[None]) & (P[:, None, :] < hi[None]), axis=2)
            r, c = np.nonzero(hit)
            if r.size == 0:
                continue
            raw, g = self._raw_pairs(P[r], c)
            S = np.bincount(r, weights=raw, minlength=P.shape[0])
            DS = np.stack([np.bincount(r, weights=g[:, k], minlength=P.shape[0])
                           for k in range(X.shape[1])], axis=1)
            Sr = S[r]
            with np.errstate(divide="ignore", invalid="ignore"):
                psi = raw / Sr
                dpsi = (g * Sr[:, None] - raw[:, None] * DS[r]) / Sr[:, None] ** 2
            rows.append(r + s)
            cols.append(c)
            vals.append(psi)
            grads.append(dpsi)
        if not rows:
            return (np.zeros(0, int), np.zeros(0, int), np.zeros(0), np.zeros((0, X.shape[1])))
        return (np.concatenate(rows), np.concatenate(cols), np.concatenate(vals),
                np.concatenate(grads))

    def _raw_pairs(self, P, c):
        cen = self.cover.centers[c]
        a, b = self.inner[c], self.outer[c]
        d = np.abs(P - cen)
        t = (b[:, None] - d) / (b - a)[:, None]
        s, ds = _smooth_step(t)
        raw = np.prod(s, axis=1)
        dt = -np.sign(P - cen) / (b - a)[:, None]
        n = P.shape[1]
        g = np.empty_like(s)
        for k in range(n):
            others = np.prod(np.delete(s, k, axis=1), axis=1) if n > 1 else 1.0
            g[:, k] = ds[:, k] * dt[:, k] * others
        return raw, g

    def sum_at(self, X):
        X = np.atleast_2d(X)
        r, _, psi, _ = self.evaluate(X)
        return np.bincount(r, weights=psi, minlength=X.shape[0])

    def gradient_constant(self, per_axis=9):
        """Fitted c = max |D psi_i| |K_i|^{1/n}, sampled on a lattice relative to each support."""
        cover = self.cover
        n = cover.n
        u = (np.arange(per_axis) + 0.5) / per_axis * 2 - 1
        rel = np.stack(np.meshgrid(*[u] * n, indexing="ij"), axis=-1).reshape(-1, n)
        best = 0.0
        for i in range(cover.count):
            P = cover.centers[i] + rel * self.outer[i]
            P = P[cover.domain.contains(P)]
            if P.size == 0:
                continue
            group = np.concatenate([[i], cover.neighbors[i]])
            rows = np.repeat(np.arange(P.shape[0]), group.size)
            cols = np.tile(group, P.shape[0])
            raw, g = self._raw_pairs(P[rows], cols)
            raw = raw.reshape(P.shape[0], group.size)
            g = g.reshape(P.shape[0], group.size, n)
            S = raw.sum(axis=1)
            DS = g.sum(axis=1)
            ok = S > 0
            dpsi = (g[ok, 0] * S[ok, None] - raw[ok, :1] * DS[ok]) / S[ok, None] ** 2
            val = float(np.max(np.linalg.norm(dpsi, axis=1), initial=0.0)) * cover.sides[i]
            best = max(best, val)
        return best

    def lower_bound_check(self, X):
        """min over sample points x in a base cube Q_i of psi_i(x) * M."""
        X = np.atleast_2d(X)
        r, c, psi, _ = self.evaluate(X)
        wh = self.cover.whitney
        inQ = np.all(np.abs(X[r] - wh.centers[c]) <= wh.sides[c, None] / 2, axis=1)
        if not np.any(inQ):
            return math.inf
        return float(np.min(psi[inQ]))


def partition_of_unity(cover):
    """Normalised products of smooth steps; bump i is 1 on Q_i and vanishes
    outside the support cube ((1 + delta/2) / (1 + delta)) K_i."""
    inner = cover.base_sides / 2
    outer = (1 + DELTA / 2) / (1 + DELTA) * cover.sides / 2
    return PartitionOfUnity(cover, inner, outer)


def covered_samples(domain, depth, count, seed=0):
    """Seeded uniform points of the domain away from the truncation strip."""
    domain = parse_domain(domain)
    rng = np.random.default_rng(seed)
    box = domain.box
    out = []
    floor = 1.5 * (box[0, 1] - box[0, 0]) / 2 ** depth
    while sum(len(o) for o in out) < count:
        X = box[:, 0] + (box[:, 1] - box[:, 0]) * rng.random((2 * count, domain.n))
        out.append(X[domain.inf_distance(X) > floor])
    return np.concatenate(out)[:count]
