"""Compact convex target sets: balls and vertex polytopes.

A body may carry an inflation offset ``gamma``; it then stands for the
closed gamma-neighbourhood ``K_gamma = {z : dist(z, K) <= gamma}``, whose
distance function is ``(dist(z, K) - gamma)^+`` (exact for convex K).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import InvalidBodyError, ProjectionError

TOL_PROJ = 1e-10

# boundary sampling resolution for the mixed ball/polytope Hausdorff distance
_SPHERE_SAMPLES = {2: 4096, 3: 16384}
_SPHERE_SAMPLES_DEFAULT = 16384


@dataclass(frozen=True)
class DistanceResult:
    distance: float
    foot_point: np.ndarray


@dataclass(frozen=True, eq=False)
class ConvexBody:
    """A ball ``B(center, radius)`` or the convex hull of ``vertices``.

    Use :meth:`ball` / :meth:`vpolytope` rather than the raw constructor.
    """

    kind: str
    center: np.ndarray | None = None
    radius: float = 0.0
    vertices: np.ndarray | None = None
    inflation: float = 0.0
    _sup: float = field(default=0.0, repr=False)

    @classmethod
    def ball(cls, center, radius, inflation=0.0):
        c = np.atleast_1d(np.asarray(center, dtype=float)).copy()
        if c.ndim != 1 or c.size == 0:
            raise InvalidBodyError("ball center must be a nonempty vector")
        radius = float(radius)
        if not np.isfinite(radius) or radius < 0:
            raise InvalidBodyError(f"ball radius must be >= 0, got {radius}")
        if not np.all(np.isfinite(c)):
            raise InvalidBodyError("ball center must be finite")
        _check_inflation(inflation)
        c.setflags(write=False)
        sup = float(np.linalg.norm(c)) + radius
        return cls("ball", center=c, radius=radius, inflation=float(inflation), _sup=sup)

    @classmethod
    def vpolytope(cls, vertices, inflation=0.0):
        v = np.asarray(vertices, dtype=float)
        if v.ndim == 1 and v.size:
            v = v[:, None]
        if v.ndim != 2 or v.shape[0] == 0 or v.shape[1] == 0:
            raise InvalidBodyError("vpolytope needs a nonempty (n, k) vertex list")
        if not np.all(np.isfinite(v)):
            raise InvalidBodyError("vpolytope vertices must be finite")
        _check_inflation(inflation)
        v = v.copy()
        v.setflags(write=False)
        sup = float(np.max(np.linalg.norm(v, axis=1)))
        return cls("vpolytope", vertices=v, inflation=float(inflation), _sup=sup)

    @property
    def dim(self) -> int:
        return int(self.center.size if self.kind == "ball" else self.vertices.shape[1])

    def inflate(self, gamma: float) -> "ConvexBody":
        """Return ``K_gamma``; a ball stays a plain (larger) ball."""
        _check_inflation(gamma)
        if self.kind == "ball":
            return ConvexBody.ball(self.center, self.radius + self.inflation + gamma)
        return ConvexBody.vpolytope(self.vertices, self.inflation + gamma)

    def base(self) -> "ConvexBody":
        """The body without its inflation offset."""
        if self.inflation == 0.0:
            return self
        if self.kind == "ball":
            return ConvexBody.ball(self.center, self.radius)
        return ConvexBody.vpolytope(self.vertices)

    def distance(self, points) -> np.ndarray:
        """Vectorised distance of ``points`` (shape ``(..., k)``) to the body."""
        p = np.asarray(points, dtype=float)
        if p.shape[-1] != self.dim:
            raise InvalidBodyError(f"point dimension {p.shape[-1]} != body dimension {self.dim}")
        if self.kind == "ball":
            d = np.linalg.norm(p - self.center, axis=-1) - self.radius
        else:
            flat = p.reshape(-1, self.dim)
            uniq, inv = np.unique(flat, axis=0, return_inverse=True)
            du = np.array([_polytope_project(self.vertices, q)[0] for q in uniq])
            d = du[inv.ravel()].reshape(p.shape[:-1])
        return np.maximum(d - self.inflation, 0.0)

    def to_json(self) -> dict:
        if self.kind == "ball":
            out = {"kind": "ball", "center": self.center.tolist(), "radius": self.radius}
        else:
            out = {"kind": "vpolytope", "vertices": self.vertices.tolist()}
        if self.inflation:
            out["inflation"] = self.inflation
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "ConvexBody":
        kind = obj.get("kind")
        infl = obj.get("inflation", 0.0)
        if kind == "ball":
            return cls.ball(obj["center"], obj["radius"], infl)
        if kind == "vpolytope":
            return cls.vpolytope(obj["vertices"], infl)
        raise InvalidBodyError(f"unknown body kind {kind!r}")

    def __repr__(self):
        extra = f", inflation={self.inflation}" if self.inflation else ""
        if self.kind == "ball":
            return f"ConvexBody.ball({self.center.tolist()}, {self.radius}{extra})"
        return f"ConvexBody.vpolytope({self.vertices.tolist()}{extra})"


def _check_inflation(gamma):
    if not np.isfinite(gamma) or gamma < 0:
        raise InvalidBodyError(f"inflation must be a finite nonnegative number, got {gamma}")


def sup_norm(K: ConvexBody) -> float:
    """``|K|_inf``: the largest Euclidean norm of a point of K."""
    return K._sup + K.inflation


def project(K: ConvexBody, p) -> DistanceResult:
    """Euclidean distance from ``p`` to K together with a nearest point."""
    p = np.asarray(p, dtype=float).reshape(-1)
    if p.size != K.dim:
        raise InvalidBodyError(f"point dimension {p.size} != body dimension {K.dim}")
    if K.kind == "ball":
        diff = p - K.center
        n = float(np.linalg.norm(diff))
        if n <= K.radius:
            d, foot = 0.0, p.copy()
        else:
            d, foot = n - K.radius, K.center + diff * (K.radius / n)
    else:
        d, foot = _polytope_project(K.vertices, p)
    if K.inflation:
        g = K.inflation
        if d <= g:
            return DistanceResult(0.0, p.copy())
        foot = foot + (p - foot) * (g / d)
        d = d - g
    return DistanceResult(float(d), foot)


def inflated_distance(K: ConvexBody, gamma: float, p) -> float:
    """``dist(p, K_gamma) = (dist(p, K) - gamma)^+``."""
    if gamma < 0:
        raise ValueError(f"gamma must be >= 0, got {gamma}")
    return max(project(K, p).distance - gamma, 0.0)


def _polytope_project(vertices: np.ndarray, p: np.ndarray, tol: float = TOL_PROJ):
    """Wolfe's minimum-norm-point algorithm on the translated vertex set."""
    P = np.unique(vertices, axis=0) - p
    n = P.shape[0]
    if n == 1:
        return float(np.linalg.norm(P[0])), vertices[0].copy()
    scale = float(np.max(np.einsum("ij,ij->i", P, P)))
    if scale == 0.0:
        return 0.0, p.copy()
    eps = np.finfo(float).eps
    max_iter = 10 * n * n
    sq = np.einsum("ij,ij->i", P, P)
    S = [int(np.argmin(sq))]
    lam = np.array([1.0])
    x = P[S[0]].copy()
    it = 0
    gap = np.inf
    best = None
    seen = set()
    while True:
        g = P @ x
        j = int(np.argmin(g))
        gap = float(x @ x - g[j])
        # rounding in g is about eps |x| sqrt(scale), so the gap test scales with |x|
        gap_tol = max(0.5 * tol * tol * scale, 8 * eps * np.sqrt(scale * (x @ x)))
        if gap <= gap_tol or j in S:
            break
        # in exact arithmetic no corral repeats; a repeat means rounding has stalled progress
        corral = frozenset(S)
        if corral in seen:
            break
        seen.add(corral)
        if best is None or x @ x < best[0]:
            best = (float(x @ x), x.copy())
        S.append(j)
        lam = np.append(lam, 0.0)
        while True:
            it += 1
            if it > max_iter:
                raise ProjectionError("minimum-norm-point iteration did not converge", gap)
            Q = P[S]
            # affine minimiser q0 + D t, solved on D directly rather than its Gram matrix
            D = (Q[1:] - Q[0]).T
            t = np.linalg.lstsq(D, -Q[0], rcond=None)[0]
            mu = np.concatenate(([1.0 - t.sum()], t))
            if np.all(mu > 0):
                lam = mu
                x = mu @ Q
                break
            # step from lam toward mu until the first weight hits zero
            neg = np.flatnonzero(mu <= 0)
            ratios = lam[neg] / np.maximum(lam[neg] - mu[neg], 1e-300)
            k = int(np.argmin(ratios))
            theta = float(np.clip(ratios[k], 0.0, 1.0))
            lam = theta * mu + (1.0 - theta) * lam
            lam[neg[k]] = 0.0
            keep = lam > 0
            S = [s for s, kk in zip(S, keep) if kk]
            lam = lam[keep]
            lam = lam / lam.sum()
            x = lam @ P[S]
    if best is not None and best[0] < x @ x:
        x = best[1]
    d = float(np.linalg.norm(x))
    if d <= 4 * eps * np.sqrt(scale):  # rounding floor: p is in the hull
        return 0.0, p.copy()
    return d, x + p


def _boundary_points(K: ConvexBody) -> np.ndarray:
    """Points of K among which convex functions attain (approximately) their max."""
    k = K.dim
    if K.kind == "ball" or K.inflation > 0:
        dirs = _sphere_directions(k)
    if K.kind == "ball":
        return K.center + (K.radius + K.inflation) * dirs
    if K.inflation > 0:
        return (K.vertices[:, None, :] + K.inflation * dirs[None]).reshape(-1, k)
    return np.asarray(K.vertices)


def _sphere_directions(k: int) -> np.ndarray:
    if k == 1:
        return np.array([[-1.0], [1.0]])
    n = _SPHERE_SAMPLES.get(k, _SPHERE_SAMPLES_DEFAULT)
    if k == 2:
        t = 2 * np.pi * np.arange(n) / n
        return np.stack([np.cos(t), np.sin(t)], axis=1)
    if k == 3:
        # Fibonacci lattice
        i = np.arange(n) + 0.5
        z = 1 - 2 * i / n
        r = np.sqrt(1 - z * z)
        phi = np.pi * (3 - np.sqrt(5)) * i
        return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)
    g = np.random.default_rng(0).standard_normal((n, k))
    return g / np.linalg.norm(g, axis=1, keepdims=True)


def excess(K1: ConvexBody, K2: ConvexBody) -> float:
    """One-sided excess ``max_{A in K1} dist(A, K2)``."""
    if K1.kind == "ball" and K2.kind == "ball":
        r1, r2 = K1.radius + K1.inflation, K2.radius + K2.inflation
        return max(float(np.linalg.norm(K1.center - K2.center)) + r1 - r2, 0.0)
    return float(np.max(K2.distance(_boundary_points(K1))))


def hausdorff(K1: ConvexBody, K2: ConvexBody) -> float:
    """Hausdorff distance; exact for ball/ball and polytope/polytope pairs.

    A ball (or an inflated polytope) is represented by a fixed sampling of
    its boundary: 4096 directions in R^2, 16384 in R^3 and above.
    """
    if K1.dim != K2.dim:
        raise InvalidBodyError("bodies live in different dimensions")
    return max(excess(K1, K2), excess(K2, K1))


def body_from_spec(spec) -> ConvexBody:
    if isinstance(spec, ConvexBody):
        return spec
    return ConvexBody.from_json(spec)


def as_bodies(specs: Sequence) -> list[ConvexBody]:
    return [body_from_spec(s) for s in specs]
