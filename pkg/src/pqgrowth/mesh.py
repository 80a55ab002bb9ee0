"""Structured simplicial meshes on boxes, discrete fields, quadrature and norms.

Two function models are available on the same mesh: continuous piecewise
affine fields (``kind="p1"``, degrees of freedom at nodes) and the
Crouzeix-Raviart space (``kind="cr"``, degrees of freedom at edge midpoints,
2D only). The P1 space embeds exactly into CR via :func:`p1_to_cr`.
"""
from dataclasses import dataclass, field
from functools import cached_property
import csv
import io
import struct

import numpy as np
import scipy.sparse as sp

from .errors import InvalidArgument
from .expr import as_field

MAGIC = b"PQLF"


class Mesh:
    """Uniform mesh of an axis-aligned box; intervals in 1D, two triangles per cell in 2D."""

    def __init__(self, box, resolution):
        box = np.asarray(box, dtype=float).reshape(-1, 2)
        n = box.shape[0]
        if n not in (1, 2):
            raise InvalidArgument("only n = 1 or 2 is supported")
        res = np.broadcast_to(np.asarray(resolution, dtype=int), (n,)).copy()
        if np.any(res < 1) or np.any(box[:, 1] <= box[:, 0]):
            raise InvalidArgument("need positive resolution and cell sizes")
        self.box = box
        self.n = n
        self.resolution = tuple(int(r) for r in res)
        self.h = (box[:, 1] - box[:, 0]) / res
        axes = [np.linspace(box[i, 0], box[i, 1], res[i] + 1) for i in range(n)]
        self.nodes = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, n)
        if n == 1:
            idx = np.arange(res[0])
            self.elements = np.stack([idx, idx + 1], axis=1)
        else:
            n1, n2 = res
            I, J = np.meshgrid(np.arange(n1), np.arange(n2), indexing="ij")
            v00 = (I * (n2 + 1) + J).ravel()
            v10 = v00 + (n2 + 1)
            v11 = v10 + 1
            v01 = v00 + 1
            lower = np.stack([v00, v10, v11], axis=1)
            upper = np.stack([v00, v11, v01], axis=1)
            # element 2c is the lower triangle of cell c, 2c+1 the upper one
            self.elements = np.stack([lower, upper], axis=1).reshape(-1, 3)

    def __eq__(self, other):
        return (isinstance(other, Mesh) and self.resolution == other.resolution
                and np.array_equal(self.box, other.box))

    def __hash__(self):
        return hash((self.resolution, self.box.tobytes()))

    def __repr__(self):
        return f"Mesh(box={self.box.tolist()}, resolution={self.resolution})"

    @property
    def n_nodes(self):
        return self.nodes.shape[0]

    @property
    def n_elements(self):
        return self.elements.shape[0]

    @property
    def volume(self):
        return float(np.prod(self.box[:, 1] - self.box[:, 0]))

    @cached_property
    def areas(self):
        if self.n == 1:
            return np.full(self.n_elements, self.h[0])
        return np.full(self.n_elements, 0.5 * self.h[0] * self.h[1])

    @cached_property
    def barycenters(self):
        return self.nodes[self.elements].mean(axis=1)

    @cached_property
    def node_boundary(self):
        lo = np.isclose(self.nodes, self.box[:, 0], rtol=0, atol=1e-12 * self.h.min())
        hi = np.isclose(self.nodes, self.box[:, 1], rtol=0, atol=1e-12 * self.h.min())
        return np.any(lo | hi, axis=1)

    @cached_property
    def barycentric_gradients(self):
        """(n_el, n+1, n) gradients of the barycentric coordinates."""
        P = self.nodes[self.elements]
        if self.n == 1:
            g = 1.0 / (P[:, 1, 0] - P[:, 0, 0])
            return np.stack([-g, g], axis=1)[:, :, None]
        B = np.stack([P[:, 1] - P[:, 0], P[:, 2] - P[:, 0]], axis=2)
        Binv = np.linalg.inv(B)
        g12 = Binv  # rows are grad lambda_1, grad lambda_2
        g0 = -g12.sum(axis=1, keepdims=True)
        return np.concatenate([g0, g12], axis=1)

    # ----- Crouzeix-Raviart bookkeeping
    @cached_property
    def _edges(self):
        if self.n != 2:
            raise InvalidArgument("the CR space is only available in 2D")
        E = self.elements
        # edge k of an element is opposite to local vertex k
        loc = np.stack([E[:, [1, 2]], E[:, [2, 0]], E[:, [0, 1]]], axis=1)
        flat = np.sort(loc.reshape(-1, 2), axis=1)
        edges, inv = np.unique(flat, axis=0, return_inverse=True)
        return edges, inv.reshape(-1, 3)

    @property
    def edges(self):
        return self._edges[0]

    @property
    def element_edges(self):
        return self._edges[1]

    # ----- degrees of freedom
    def dof_coords(self, kind="p1"):
        if kind == "p1":
            return self.nodes
        if kind == "cr":
            return self.nodes[self.edges].mean(axis=1)
        raise InvalidArgument(f"unknown space {kind!r}")

    def n_dofs(self, kind="p1"):
        return self.dof_coords(kind).shape[0]

    def boundary_dofs(self, kind="p1"):
        if kind == "p1":
            return self.node_boundary
        nb = self.node_boundary
        e = self.edges
        X = self.nodes[e]
        same_axis = np.any(np.isclose(X[:, 0], X[:, 1], rtol=0, atol=1e-12 * self.h.min())
                           & (np.isclose(X[:, 0], self.box[:, 0], atol=1e-12 * self.h.min(), rtol=0)
                              | np.isclose(X[:, 0], self.box[:, 1], atol=1e-12 * self.h.min(), rtol=0)),
                           axis=1)
        return nb[e[:, 0]] & nb[e[:, 1]] & same_axis

    def grad_operator(self, kind="p1"):
        """Sparse matrix mapping dof values to stacked element gradients (row e*n + d)."""
        return self._grad_ops[kind]

    @cached_property
    def _grad_ops(self):
        return _LazyOps(self)

    def lumped_weights(self, kind="p1"):
        if kind == "p1":
            w = np.zeros(self.n_nodes)
            k = self.elements.shape[1]
            np.add.at(w, self.elements.ravel(), np.repeat(self.areas / k, k))
            return w
        w = np.zeros(self.n_dofs("cr"))
        np.add.at(w, self.element_edges.ravel(), np.repeat(self.areas / 3.0, 3))
        return w

    def locate(self, X):
        """Element index and barycentric coordinates of points (clipped into the box)."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        rel = (X - self.box[:, 0]) / self.h
        res = np.array(self.resolution)
        cell = np.clip(np.floor(rel).astype(int), 0, res - 1)
        loc = np.clip(rel - cell, 0.0, 1.0)
        if self.n == 1:
            el = cell[:, 0]
            lam = np.stack([1 - loc[:, 0], loc[:, 0]], axis=1)
            return el, lam
        c = cell[:, 0] * res[1] + cell[:, 1]
        s, t = loc[:, 0], loc[:, 1]
        low = s >= t
        el = 2 * c + (~low)
        # lower: (v00, v10, v11) ; upper: (v00, v11, v01)
        lam = np.where(low[:, None], np.stack([1 - s, s - t, t], axis=1),
                       np.stack([1 - t, s, t - s], axis=1))
        return el, lam


class _LazyOps(dict):
    def __init__(self, mesh):
        super().__init__()
        self.mesh = mesh

    def __missing__(self, kind):
        M = self.mesh
        G = M.barycentric_gradients  # (n_el, k, n)
        n_el, k, n = G.shape
        rows = (np.arange(n_el)[:, None, None] * n + np.arange(n)[None, None, :])
        rows = np.broadcast_to(rows, (n_el, k, n))
        if kind == "p1":
            cols = np.broadcast_to(M.elements[:, :, None], (n_el, k, n))
            vals = G
            ncol = M.n_nodes
        elif kind == "cr":
            cols = np.broadcast_to(M.element_edges[:, :, None], (n_el, k, n))
            vals = -2.0 * G
            ncol = M.n_dofs("cr")
        else:
            raise InvalidArgument(f"unknown space {kind!r}")
        op = sp.csr_matrix((vals.ravel(), (rows.ravel(), cols.ravel())), shape=(n_el * n, ncol))
        self[kind] = op
        return op


@dataclass(frozen=True, eq=False)
class DiscreteField:
    """Degree-of-freedom values of an m-vector field; ``values`` has shape (N, m)."""

    mesh: Mesh
    values: np.ndarray
    boundary_mask: np.ndarray = None
    kind: str = "p1"
    support: np.ndarray = None  # dofs where the values are meaningful (None = all)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        if v.shape[0] != self.mesh.n_dofs(self.kind):
            raise InvalidArgument("value count does not match the mesh")
        if not np.all(np.isfinite(v[self.support] if self.support is not None else v)):
            raise InvalidArgument("non-finite field values")
        object.__setattr__(self, "values", v)
        mask = self.mesh.boundary_dofs(self.kind) if self.boundary_mask is None else np.asarray(
            self.boundary_mask, dtype=bool)
        object.__setattr__(self, "boundary_mask", mask)

    @property
    def m(self):
        return self.values.shape[1]

    @property
    def coords(self):
        return self.mesh.dof_coords(self.kind)

    def with_values(self, values):
        return DiscreteField(self.mesh, values, self.boundary_mask, self.kind, self.support)

    def __call__(self, X):
        return evaluate_at(self, X)


@dataclass(frozen=True, eq=False)
class ElementField:
    """Per-element n x m matrices (or scalars); shape (n_el, n, m)."""

    mesh: Mesh
    values: np.ndarray

    def __call__(self, X):
        el, _ = self.mesh.locate(X)
        return self.values[el]


@dataclass
class NormLadder:
    u: dict = field(default_factory=dict)
    Du: dict = field(default_factory=dict)
    besov: float = None

    def to_dict(self):
        return {"u": {str(k): float(v) for k, v in self.u.items()},
                "Du": {str(k): float(v) for k, v in self.Du.items()},
                "besov": None if self.besov is None else float(self.besov)}


def zero_field(mesh, m=1, kind="p1"):
    return DiscreteField(mesh, np.zeros((mesh.n_dofs(kind), m)), kind=kind)


def interpolate(mesh, g, m=1, kind="p1"):
    """Interpolant of g; CR values are averages of the endpoint values (keeps P1 inside CR)."""
    fn = as_field(g, mesh.box)
    if kind == "p1":
        vals = _eval_vector(fn, mesh.nodes, m)
    else:
        nv = _eval_vector(fn, mesh.nodes, m)
        vals = nv[mesh.edges].mean(axis=1)
    return DiscreteField(mesh, vals, kind=kind)


def _eval_vector(fn, X, m):
    v = np.asarray(fn(X), dtype=float)
    if v.ndim == 1:
        v = v[:, None]
    if v.shape[1] == 1 and m > 1:
        v = np.repeat(v, m, axis=1)
    return v


def p1_to_cr(u):
    if u.kind != "p1":
        raise InvalidArgument("expected a P1 field")
    vals = u.values[u.mesh.edges].mean(axis=1)
    return DiscreteField(u.mesh, vals, kind="cr")


def cr_to_nodes(u):
    """Nodal averages of the element-wise affine CR field (a P1 field)."""
    if u.kind == "p1":
        return u
    M = u.mesh
    el_node_vals = _element_vertex_values(u)  # (n_el, 3, m)
    acc = np.zeros((M.n_nodes, u.m))
    cnt = np.zeros(M.n_nodes)
    np.add.at(acc, M.elements.ravel(), el_node_vals.reshape(-1, u.m))
    np.add.at(cnt, M.elements.ravel(), 1.0)
    return DiscreteField(M, acc / cnt[:, None], kind="p1")


def _element_vertex_values(u):
    # at vertex k, lambda_k = 1 and the CR basis 1 - 2 lambda_opp(E) gives
    # +1 for the two edges touching k and -1 for the opposite edge
    E = u.values[u.mesh.element_edges]  # (n_el, 3, m), edge k opposite vertex k
    tot = E.sum(axis=1, keepdims=True)
    return tot - 2.0 * E


def evaluate_at(u, X):
    """Evaluate a field at arbitrary points of the box by its element-wise affine model."""
    el, lam = u.mesh.locate(X)
    if u.kind == "p1":
        vals = u.values[u.mesh.elements[el]]  # (N, k, m)
        return np.einsum("nk,nkm->nm", lam, vals)
    vals = u.values[u.mesh.element_edges[el]]
    return np.einsum("nk,nkm->nm", 1.0 - 2.0 * lam, vals)


def gradient(u):
    """Exact gradient of the element-wise affine field, shape (n_el, n, m)."""
    M = u.mesh
    D = M.grad_operator(u.kind) @ u.values
    return ElementField(M, D.reshape(M.n_elements, M.n, u.m))


def _check_same(u, f):
    if f is not None and isinstance(f, DiscreteField) and (f.mesh != u.mesh or f.kind != u.kind):
        raise InvalidArgument("fields live on different meshes or spaces")


def source_values(u, f):
    """Source f at the dofs of u as an (N, m) array (f may be a field, callable or constant)."""
    if f is None:
        return None
    if isinstance(f, DiscreteField):
        _check_same(u, f)
        return f.values
    if isinstance(f, (int, float)) and f == 0:
        return None
    return _eval_vector(as_field(f, u.mesh.box), u.coords, u.m)


def energy(F, u, f=None):
    """Midpoint quadrature of F(x, Du) minus lumped quadrature of f.u."""
    M = u.mesh
    if F.n != M.n or F.m != u.m:
        raise InvalidArgument("integrand dimensions do not match the field")
    Du = gradient(u).values
    val = float(np.dot(M.areas, F.density(M.barycenters, Du)))
    fv = source_values(u, f)
    if fv is not None:
        val -= float(np.dot(M.lumped_weights(u.kind), np.sum(fv * u.values, axis=1)))
    return val


def lp_norm(v, exponent):
    """L^p norm of a DiscreteField (lumped quadrature) or ElementField (exact per element)."""
    if not exponent >= 1:
        raise InvalidArgument("exponent must be >= 1")
    if isinstance(v, ElementField):
        mag = np.sqrt(np.sum(v.values.reshape(v.values.shape[0], -1) ** 2, axis=1))
        w = v.mesh.areas
    else:
        vals = v.values
        w = v.mesh.lumped_weights(v.kind)
        if v.support is not None:
            vals, w = vals[v.support], w[v.support]
        mag = np.sqrt(np.sum(vals ** 2, axis=1))
    if np.isinf(exponent):
        return float(mag.max()) if mag.size else 0.0
    return float(np.dot(w, mag ** exponent) ** (1.0 / exponent))


def sobolev_norm(u, exponent):
    a = lp_norm(u, exponent)
    b = lp_norm(gradient(u), exponent)
    if np.isinf(exponent):
        return max(a, b)
    return float((a ** exponent + b ** exponent) ** (1.0 / exponent))


def norm_ladder(u, exponents=(1, 2, 4)):
    Du = gradient(u)
    return NormLadder(u={e: lp_norm(u, e) for e in exponents},
                      Du={e: lp_norm(Du, e) for e in exponents})


def apply_boundary(u, g):
    """Overwrite the Dirichlet dofs of u with the datum g."""
    mask = u.mesh.boundary_dofs(u.kind)
    gi = interpolate(u.mesh, g, m=u.m, kind=u.kind).values
    vals = u.values.copy()
    vals[mask] = gi[mask]
    return DiscreteField(u.mesh, vals, mask, u.kind, u.support)


# ---------------------------------------------------------------------------
# serialisation


def to_csv(u):
    """CSV text with dof coordinates followed by the component values."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([f"x{i + 1}" for i in range(u.mesh.n)] + [f"u{a + 1}" for a in range(u.m)])
    for xy, val in zip(u.coords, u.values):
        w.writerow([repr(float(t)) for t in xy] + [repr(float(t)) for t in val])
    return buf.getvalue()


def to_binary(u):
    """Binary dump: magic, n, m, resolution (n ints), box (2n doubles), row-major float64 values.

    Only nodal (P1) fields are dumped; CR fields are averaged to nodes first.
    """
    u = cr_to_nodes(u)
    M = u.mesh
    head = MAGIC + struct.pack("<ii", M.n, u.m) + struct.pack(f"<{M.n}i", *M.resolution)
    head += struct.pack(f"<{2 * M.n}d", *M.box.ravel())
    return head + np.ascontiguousarray(u.values, dtype="<f8").tobytes()


def from_binary(data):
    if data[:4] != MAGIC:
        raise InvalidArgument("not a field dump")
    n, m = struct.unpack_from("<ii", data, 4)
    off = 12
    res = struct.unpack_from(f"<{n}i", data, off)
    off += 4 * n
    box = np.array(struct.unpack_from(f"<{2 * n}d", data, off)).reshape(n, 2)
    off += 16 * n
    mesh = Mesh(box, res)
    vals = np.frombuffer(data, dtype="<f8", offset=off).reshape(mesh.n_nodes, m).copy()
    return DiscreteField(mesh, vals)
