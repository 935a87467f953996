"""Uniform-grid fields, the FLD1 format and discrete operators.

Node ``i`` of a grid sits at ``origin + i * spacing``.  Field data is stored
as an array of shape ``(*grid.shape, m)`` (row-major nodes, component
fastest), which is also the FLD1 payload order.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np

from .convex_geom import ConvexBody, sup_norm
from .errors import FieldFormatError, GridError, PreconditionError

BOUNDARIES = ("extend", "periodic")
FLD_MAGIC = b"FLD1\n"
FLD_LAYOUT = "row-major-node,component-fastest"
_RADIUS_TOL = 1e-9


@dataclass(frozen=True)
class Grid:
    shape: tuple
    spacing: float
    origin: tuple = None
    boundary: str = "extend"

    def __post_init__(self):
        shape = tuple(int(s) for s in self.shape)
        object.__setattr__(self, "shape", shape)
        if not shape:
            raise GridError("grid needs at least one axis")
        if min(shape) < 5:
            raise GridError(f"every axis needs >= 5 nodes for the stencils, got {shape}")
        if not (self.spacing > 0 and math.isfinite(self.spacing)):
            raise GridError(f"spacing must be positive, got {self.spacing}")
        origin = (0.0,) * len(shape) if self.origin is None else tuple(float(o) for o in self.origin)
        if len(origin) != len(shape):
            raise GridError("origin length differs from grid dimension")
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "spacing", float(self.spacing))
        if self.boundary not in BOUNDARIES:
            raise GridError(f"boundary must be one of {BOUNDARIES}, got {self.boundary!r}")

    @property
    def dim(self) -> int:
        return len(self.shape)

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    @property
    def periodic(self) -> bool:
        return self.boundary == "periodic"

    @property
    def cell_volume(self) -> float:
        return self.spacing ** self.dim

    @property
    def volume(self) -> float:
        return self.size * self.cell_volume

    def axes(self) -> list[np.ndarray]:
        return [o + self.spacing * np.arange(n) for o, n in zip(self.origin, self.shape)]

    def coords(self) -> np.ndarray:
        """Node coordinates, shape ``(*shape, dim)``."""
        return np.stack(np.meshgrid(*self.axes(), indexing="ij"), axis=-1)

    def index_of(self, point) -> np.ndarray:
        """Fractional node index of a physical point."""
        return (np.asarray(point, dtype=float) - np.asarray(self.origin)) / self.spacing

    def to_json(self) -> dict:
        return {
            "dim": self.dim,
            "shape": list(self.shape),
            "spacing": self.spacing,
            "origin": list(self.origin),
            "boundary": self.boundary,
        }


@dataclass(frozen=True, eq=False)
class GridField:
    grid: Grid
    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=float)
        if data.ndim == self.grid.dim:
            data = data[..., None]
        if data.shape[:-1] != self.grid.shape or data.ndim != self.grid.dim + 1:
            raise GridError(f"data shape {data.shape} does not match grid {self.grid.shape}")
        if data.shape[-1] < 1:
            raise GridError("a field needs at least one component")
        if not np.all(np.isfinite(data)):
            raise GridError("field values must be finite")
        object.__setattr__(self, "data", data)

    @property
    def components(self) -> int:
        return self.data.shape[-1]

    def with_data(self, data) -> "GridField":
        return GridField(self.grid, data)

    def copy(self) -> "GridField":
        return GridField(self.grid, self.data.copy())


# ---------------------------------------------------------------------------
# FLD1 I/O
# ---------------------------------------------------------------------------

def write_fld(path, field: GridField) -> None:
    g = field.grid
    header = {
        "dim": g.dim,
        "shape": list(g.shape),
        "components": field.components,
        "spacing": g.spacing,
        "origin": list(g.origin),
        "boundary": g.boundary,
        "dtype": "f64le",
        "layout": FLD_LAYOUT,
    }
    payload = np.ascontiguousarray(field.data, dtype="<f8").tobytes()
    with open(path, "wb") as fh:
        fh.write(FLD_MAGIC)
        fh.write(json.dumps(header, separators=(",", ":")).encode("utf-8") + b"\n")
        fh.write(payload)


def read_fld(path) -> GridField:
    raw = Path(path).read_bytes()
    if not raw.startswith(FLD_MAGIC):
        raise FieldFormatError(f"{path}: bad magic, expected FLD1")
    nl = raw.find(b"\n", len(FLD_MAGIC))
    if nl < 0:
        raise FieldFormatError(f"{path}: missing header line")
    try:
        header = json.loads(raw[len(FLD_MAGIC):nl].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FieldFormatError(f"{path}: unreadable header ({exc})") from exc
    for key in ("dim", "shape", "components", "spacing", "origin", "boundary"):
        if key not in header:
            raise FieldFormatError(f"{path}: header lacks {key!r}")
    if header.get("dtype", "f64le") != "f64le" or header.get("layout", FLD_LAYOUT) != FLD_LAYOUT:
        raise FieldFormatError(f"{path}: unsupported dtype/layout")
    shape = tuple(header["shape"])
    if len(shape) != header["dim"]:
        raise FieldFormatError(f"{path}: dim {header['dim']} inconsistent with shape {shape}")
    m = int(header["components"])
    payload = raw[nl + 1:]
    expected = int(np.prod(shape)) * m * 8
    if len(payload) != expected:
        raise FieldFormatError(f"{path}: payload has {len(payload)} bytes, expected {expected}")
    data = np.frombuffer(payload, dtype="<f8").reshape(*shape, m).astype(float)
    if not np.all(np.isfinite(data)):
        raise FieldFormatError(f"{path}: non-finite values in payload")
    grid = Grid(shape, header["spacing"], header["origin"], header["boundary"])
    return GridField(grid, data)


# ---------------------------------------------------------------------------
# homogeneous operators
# ---------------------------------------------------------------------------

def multi_indices(dim: int, order: int) -> list[tuple]:
    """All multi-indices of length ``dim`` and total order ``order``, sorted."""
    out = []
    for combo in itertools.combinations_with_replacement(range(dim), order):
        a = [0] * dim
        for ax in combo:
            a[ax] += 1
        out.append(tuple(a))
    return sorted(out, reverse=True)


@dataclass(frozen=True, eq=False)
class HomogeneousOperator:
    """``B = sum_{|alpha| = l} B^alpha d_alpha`` with constant ``k x m`` blocks."""

    order: int
    in_components: int
    out_components: int
    coeffs: dict
    name: str = ""

    def __post_init__(self):
        if self.order not in (1, 2):
            raise GridError(f"only orders 1 and 2 are supported, got {self.order}")
        clean = {}
        dims = set()
        for alpha, mat in self.coeffs.items():
            alpha = tuple(int(a) for a in alpha)
            if sum(alpha) != self.order or min(alpha) < 0:
                raise GridError(f"multi-index {alpha} does not have order {self.order}")
            mat = np.asarray(mat, dtype=float).reshape(self.out_components, self.in_components)
            dims.add(len(alpha))
            clean[alpha] = mat
        if len(dims) != 1:
            raise GridError("all multi-indices must have the same length")
        if not any(np.any(m != 0) for m in clean.values()):
            raise GridError("operator has no nonzero coefficient")
        object.__setattr__(self, "coeffs", clean)

    @property
    def dim(self) -> int:
        return len(next(iter(self.coeffs)))

    def c1(self) -> float:
        """The regularisation constant: 9 sum|B^i| (l=1) or 36 sum|B^ij| (l=2).

        Norms are spectral.  For l=2 the sum runs over ordered pairs (i, j);
        with the symmetric split B^ij = B^ji = B^alpha / 2 of a mixed block
        both orders together contribute |B^alpha|.
        """
        factor = 9.0 if self.order == 1 else 36.0
        return factor * sum(np.linalg.norm(m, 2) for m in self.coeffs.values())

    def to_json(self) -> dict:
        return {
            "order": self.order,
            "in_components": self.in_components,
            "out_components": self.out_components,
            "coeffs": [{"alpha": list(a), "matrix": m.tolist()} for a, m in sorted(self.coeffs.items())],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "HomogeneousOperator":
        coeffs = {tuple(c["alpha"]): c["matrix"] for c in obj["coeffs"]}
        return cls(obj["order"], obj["in_components"], obj["out_components"], coeffs, obj.get("name", ""))


def gradient_operator(dim: int) -> HomogeneousOperator:
    """Gradient of a scalar field (l=1, m=1, k=dim)."""
    coeffs = {}
    for i in range(dim):
        mat = np.zeros((dim, 1))
        mat[i, 0] = 1.0
        coeffs[tuple(1 if a == i else 0 for a in range(dim))] = mat
    return HomogeneousOperator(1, 1, dim, coeffs, "gradient")


def laplacian_operator(dim: int) -> HomogeneousOperator:
    """Trace of the Hessian of a scalar field (l=2, m=k=1)."""
    coeffs = {tuple(2 if a == i else 0 for a in range(dim)): [[1.0]] for i in range(dim)}
    return HomogeneousOperator(2, 1, 1, coeffs, "hessian_trace")


# ---------------------------------------------------------------------------
# finite differences
# ---------------------------------------------------------------------------

def _d1(a: np.ndarray, axis: int, h: float, periodic: bool) -> np.ndarray:
    if periodic:
        return (np.roll(a, -1, axis) - np.roll(a, 1, axis)) / (2 * h)
    out = np.empty_like(a)
    sl = lambda s: tuple(s if ax == axis else slice(None) for ax in range(a.ndim))  # noqa: E731
    out[sl(slice(1, -1))] = (a[sl(slice(2, None))] - a[sl(slice(None, -2))]) / (2 * h)
    out[sl(0)] = (-3 * a[sl(0)] + 4 * a[sl(1)] - a[sl(2)]) / (2 * h)
    out[sl(-1)] = (3 * a[sl(-1)] - 4 * a[sl(-2)] + a[sl(-3)]) / (2 * h)
    return out


def _d2(a: np.ndarray, axis: int, h: float, periodic: bool) -> np.ndarray:
    if periodic:
        return (np.roll(a, -1, axis) - 2 * a + np.roll(a, 1, axis)) / (h * h)
    out = np.empty_like(a)
    sl = lambda s: tuple(s if ax == axis else slice(None) for ax in range(a.ndim))  # noqa: E731
    out[sl(slice(1, -1))] = (a[sl(slice(2, None))] - 2 * a[sl(slice(1, -1))] + a[sl(slice(None, -2))]) / (h * h)
    out[sl(0)] = (2 * a[sl(0)] - 5 * a[sl(1)] + 4 * a[sl(2)] - a[sl(3)]) / (h * h)
    out[sl(-1)] = (2 * a[sl(-1)] - 5 * a[sl(-2)] + 4 * a[sl(-3)] - a[sl(-4)]) / (h * h)
    return out


def partial(data: np.ndarray, alpha: tuple, h: float, periodic: bool) -> np.ndarray:
    """Finite-difference ``d^alpha`` of an array whose leading axes are the grid."""
    out = data
    for axis, count in enumerate(alpha):
        if count == 1:
            out = _d1(out, axis, h, periodic)
        elif count == 2:
            out = _d2(out, axis, h, periodic)
        elif count:
            raise GridError("derivatives above second order are not supported")
    return out


def apply_operator(op: HomogeneousOperator, u: GridField) -> GridField:
    if u.components != op.in_components:
        raise GridError(f"operator expects {op.in_components} components, field has {u.components}")
    if op.dim != u.grid.dim:
        raise GridError(f"operator acts in dimension {op.dim}, grid has dimension {u.grid.dim}")
    g = u.grid
    out = np.zeros(g.shape + (op.out_components,))
    for alpha, mat in op.coeffs.items():
        if not np.any(mat):
            continue
        out += partial(u.data, alpha, g.spacing, g.periodic) @ mat.T
    return GridField(g, out)


def derivative_tensor(u: GridField, order: int) -> np.ndarray:
    """All partial derivatives of the given order, shape ``(*shape, m, d[, d])``."""
    g = u.grid
    d = g.dim
    if order == 1:
        parts = [partial(u.data, tuple(int(a == i) for a in range(d)), g.spacing, g.periodic) for i in range(d)]
        return np.stack(parts, axis=-1)
    if order == 2:
        out = np.empty(g.shape + (u.components, d, d))
        for i in range(d):
            for j in range(i, d):
                alpha = tuple((a == i) + (a == j) for a in range(d))
                val = partial(u.data, alpha, g.spacing, g.periodic)
                out[..., i, j] = val
                out[..., j, i] = val
        return out
    raise GridError(f"unsupported derivative order {order}")


def interior_mask(grid: Grid, margin: int = 1) -> np.ndarray:
    mask = np.ones(grid.shape, dtype=bool)
    if grid.periodic or margin == 0:
        return mask
    for axis, n in enumerate(grid.shape):
        idx = [slice(None)] * grid.dim
        idx[axis] = slice(0, margin)
        mask[tuple(idx)] = False
        idx[axis] = slice(n - margin, n)
        mask[tuple(idx)] = False
    return mask


def derivative_norm(u: GridField, order: int) -> np.ndarray:
    """Pointwise Frobenius norm of the finite-difference ``D^l u`` tensor."""
    t = derivative_tensor(u, order)
    return np.sqrt(np.sum(t.reshape(u.grid.shape + (-1,)) ** 2, axis=-1))


def sup_norm_derivative(u: GridField, order: int, mask: np.ndarray | None = None) -> float:
    """Max over interior nodes (optionally restricted by ``mask``) of ``|D^l u|``."""
    norm = derivative_norm(u, order)
    sel = interior_mask(u.grid)
    if mask is not None:
        sel = sel & mask
    return float(norm[sel].max()) if np.any(sel) else 0.0


# ---------------------------------------------------------------------------
# integrals
# ---------------------------------------------------------------------------

def pairwise_sum(values) -> float:
    """Sum in a fixed binary-tree order, independent of chunking."""
    a = np.asarray(values, dtype=float).ravel()
    if a.size == 0:
        return 0.0
    n = 1 << (a.size - 1).bit_length()
    if n != a.size:
        a = np.concatenate([a, np.zeros(n - a.size)])
    while a.size > 1:
        a = a[0::2] + a[1::2]
    return float(a[0])


def pointwise_distance(f: GridField, K: ConvexBody) -> np.ndarray:
    if f.components != K.dim:
        raise GridError(f"field has {f.components} components, body lives in R^{K.dim}")
    return K.distance(f.data)


def l1_dist_integral(f: GridField, K: ConvexBody, mask: np.ndarray | None = None):
    """``(raw, lambda)`` with ``raw = h^d sum dist(f, K)`` and ``lambda = raw / |K|_inf``."""
    ks = sup_norm(K)
    if ks <= 0:
        raise PreconditionError("|K|_inf = 0: the L1 functional is undefined")
    dist = pointwise_distance(f, K)
    if mask is not None:
        dist = np.where(mask, dist, 0.0)
    raw = f.grid.cell_volume * pairwise_sum(dist)
    return raw, raw / ks


# ---------------------------------------------------------------------------
# ball averaging
# ---------------------------------------------------------------------------

def _gather(data: np.ndarray, grid: Grid, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    """Sub-block of ``data`` for index ranges ``[lo, hi]`` using the boundary rule."""
    idx = []
    for axis, n in enumerate(grid.shape):
        r = np.arange(lo[axis], hi[axis] + 1)
        r = np.mod(r, n) if grid.periodic else np.clip(r, 0, n - 1)
        idx.append(r)
    return data[np.ix_(*idx)]


def _offsets(radius_idx: float, dim: int) -> tuple[np.ndarray, np.ndarray]:
    """Integer offsets with ``|o|^2 <= radius_idx^2`` and their squared norms."""
    R = int(math.floor(radius_idx + _RADIUS_TOL))
    rng = np.arange(-R, R + 1)
    o = np.stack(np.meshgrid(*([rng] * dim), indexing="ij"), axis=-1).reshape(-1, dim)
    q = np.sum(o * o, axis=1)
    keep = q <= radius_idx * radius_idx + _RADIUS_TOL
    o, q = o[keep], q[keep]
    order = np.lexsort(tuple(o.T[::-1]) + (q,))
    return o[order], q[order]


def ball_average(u: GridField, center, r: float) -> np.ndarray:
    """Mean of ``u`` over the nodes ``y`` with ``|y - center| <= r``."""
    g = u.grid
    if r < g.spacing:
        raise PreconditionError(f"radius {r} is below the grid spacing {g.spacing}")
    ci = g.index_of(center)
    R = r / g.spacing
    lo = np.floor(ci - R - _RADIUS_TOL).astype(int)
    hi = np.ceil(ci + R + _RADIUS_TOL).astype(int)
    block = _gather(u.data, g, lo, hi)
    rel = [np.arange(lo[a], hi[a] + 1) - ci[a] for a in range(g.dim)]
    q = sum(np.meshgrid(*[x * x for x in rel], indexing="ij"))
    sel = q <= R * R + _RADIUS_TOL
    return block[sel].mean(axis=0)


def ball_node_mask(grid: Grid, center, r: float, closed: bool = True) -> np.ndarray:
    """Nodes within distance ``r`` of ``center`` (no wrap-around)."""
    ci = grid.index_of(center)
    R = r / grid.spacing
    q = sum(np.meshgrid(*[(np.arange(n) - c) ** 2 for n, c in zip(grid.shape, ci)], indexing="ij"))
    if closed:
        return q <= R * R + _RADIUS_TOL
    return q < R * R - _RADIUS_TOL


def ball_inside(grid: Grid, center, r: float) -> bool:
    if grid.periodic:
        return True
    ci = grid.index_of(center)
    R = r / grid.spacing
    return bool(np.all(ci - R >= -_RADIUS_TOL) and np.all(ci + R <= np.asarray(grid.shape) - 1 + _RADIUS_TOL))


def variable_mollify(u: GridField, a, r: float, profile, return_mask: bool = False):
    """Average ``u`` over balls of radius ``r * profile.rho(|x - a| / r)``.

    Nodes with ``|x - a| >= 7r/8`` and nodes whose radius is below the grid
    spacing keep their value.  ``profile`` needs a vectorised ``rho(s)`` on
    the unit ball.
    """
    g = u.grid
    if not ball_inside(g, a, r):
        raise PreconditionError(f"ball B_{r}({list(np.atleast_1d(a))}) leaves the grid domain")
    h = g.spacing
    ci = g.index_of(a)
    R = r / h
    lo = np.floor(ci - R).astype(int)
    hi = np.ceil(ci + R).astype(int)
    if not g.periodic:
        lo = np.maximum(lo, 0)
        hi = np.minimum(hi, np.asarray(g.shape) - 1)
    rel = [np.arange(lo[k], hi[k] + 1) - ci[k] for k in range(g.dim)]
    s = np.sqrt(sum(np.meshgrid(*[x * x for x in rel], indexing="ij"))) / R
    rad = R * profile.rho(s)  # mollification radius in index units
    rad = np.where(s < 7.0 / 8.0, rad, 0.0)
    active = rad >= 1.0 - _RADIUS_TOL
    out = u.data.copy()
    full_mask = np.zeros(g.shape, dtype=bool)
    if not np.any(active):
        return (u.with_data(out), full_mask) if return_mask else u.with_data(out)
    level = np.floor(rad * rad + _RADIUS_TOL)
    offs, q = _offsets(math.sqrt(level.max()), g.dim)
    Rm = int(np.abs(offs).max())
    block = _gather(u.data, g, lo - Rm, hi + Rm)
    sub_shape = tuple(hi - lo + 1)
    shells, first = np.unique(q, return_index=True)
    shell_of = np.searchsorted(shells, level, side="right") - 1
    acc = np.zeros(sub_shape + (u.components,))
    result = np.empty_like(acc)
    count = 0
    bounds = list(first[1:]) + [len(q)]
    start = 0
    for t, stop in enumerate(bounds):
        for o in offs[start:stop]:
            sl = tuple(slice(Rm + o[k], Rm + o[k] + sub_shape[k]) for k in range(g.dim))
            acc += block[sl]
        count = stop
        start = stop
        sel = active & (shell_of == t)
        if np.any(sel):
            result[sel] = acc[sel] / count
    sub = tuple(np.mod(np.arange(lo[k], hi[k] + 1), g.shape[k]) for k in range(g.dim))
    target = out[np.ix_(*sub)]
    target[active] = result[active]
    out[np.ix_(*sub)] = target
    mask_block = full_mask[np.ix_(*sub)]
    mask_block[active] = True
    full_mask[np.ix_(*sub)] = mask_block
    field = u.with_data(out)
    return (field, full_mask) if return_mask else field



def block_bounds(grid: Grid, center, r: float, margin: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Index box ``[lo, hi]`` covering ``B_r(center)`` plus ``margin`` nodes."""
    ci = grid.index_of(center)
    R = r / grid.spacing
    lo = np.floor(ci - R + _RADIUS_TOL).astype(int) - margin
    hi = np.ceil(ci + R - _RADIUS_TOL).astype(int) + margin
    if not grid.periodic:
        lo = np.maximum(lo, 0)
        hi = np.minimum(hi, np.asarray(grid.shape) - 1)
    return lo, hi


def extract_block(u: GridField, lo, hi) -> tuple[GridField, tuple]:
    """Copy of ``u`` on the index box ``[lo, hi]`` as a field on its own grid.

    The returned index tuple (for ``np.ix_``) maps block nodes back to ``u``.
    Derivatives on the block agree with those on the full grid at nodes at
    least one node away from any block face that is not a face of ``u``'s grid.
    """
    g = u.grid
    lo, hi = np.asarray(lo), np.asarray(hi)
    idx = tuple(np.mod(np.arange(lo[k], hi[k] + 1), g.shape[k]) for k in range(g.dim))
    origin = tuple(np.asarray(g.origin) + lo * g.spacing)
    sub = Grid(tuple(hi - lo + 1), g.spacing, origin, "extend")
    return GridField(sub, u.data[np.ix_(*idx)]), idx


def node_distances(grid: Grid, center) -> np.ndarray:
    """Euclidean distance of every node to ``center`` (no wrap-around).

    Computed from fractional indices, the same way the ball routines decide
    membership, so shell tests agree between them.
    """
    ci = grid.index_of(center)
    q = sum(np.meshgrid(*[(np.arange(n) - c) ** 2 for n, c in zip(grid.shape, ci)], indexing="ij"))
    return grid.spacing * np.sqrt(q)
