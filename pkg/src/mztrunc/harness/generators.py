"""Deterministic synthetic sequences with a prescribed L1 distance law.

Every family builds ``u_j = A_j * shape_j`` and picks the amplitude ``A_j``
by root finding so that ``lambda(u_j) = lambda_0 * ratio^j`` (normalised by
``|K|_inf``, as returned by :func:`l1_dist_integral`).
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import brentq

from ..convex_geom import ConvexBody, sup_norm
from ..errors import ConfigError, PreconditionError
from ..field import Grid, GridField, HomogeneousOperator, apply_operator, l1_dist_integral, sup_norm_derivative

FAMILIES = ("spike_train", "oscillation", "shear_layer")
LAMBDA_RTOL = 0.05


@dataclass
class SyntheticFamily:
    name: str
    lambda0: float
    ratio: float = 0.5
    j_range: tuple = (0, 8)
    support_lo: tuple = (0.25, 0.25)
    support_hi: tuple = (0.75, 0.75)
    seed: int = 0
    spikes: int = 1
    width: float = 0.01
    wavelength: float = 0.1
    M: float | None = None  # declared bound on |D^l u_j| / |K|_inf

    def __post_init__(self):
        if self.name not in FAMILIES:
            raise ConfigError(f"unknown family {self.name!r}; choose from {FAMILIES}")
        if not self.lambda0 > 0:
            raise ConfigError("lambda0 must be positive")
        if not 0 < self.ratio <= 1:
            raise ConfigError("ratio must lie in (0, 1]")
        self.j_range = tuple(int(j) for j in self.j_range)
        self.support_lo = tuple(float(x) for x in self.support_lo)
        self.support_hi = tuple(float(x) for x in self.support_hi)

    def target(self, j: int) -> float:
        return self.lambda0 * self.ratio**j

    def to_json(self) -> dict:
        return asdict(self)


def _bump(t):
    return np.where(t < 1.0, (1.0 - t * t) ** 4, 0.0)


def spike_centers(family: SyntheticFamily, dim: int) -> np.ndarray:
    """Seeded centres in the support box, at least ``4 * width`` apart."""
    rng = np.random.default_rng(family.seed)
    lo = np.resize(np.asarray(family.support_lo), dim)
    hi = np.resize(np.asarray(family.support_hi), dim)
    centers = []
    for _ in range(1000 * family.spikes):
        c = lo + (hi - lo) * rng.random(dim)
        if all(np.linalg.norm(c - o) >= 4 * family.width for o in centers):
            centers.append(c)
        if len(centers) == family.spikes:
            return np.array(centers)
    raise ConfigError("could not place the spikes; enlarge the support box")


def _shape(family: SyntheticFamily, grid: Grid, op: HomogeneousOperator, j: int) -> np.ndarray:
    """Unit-amplitude profile, shape ``(*grid.shape, m)``."""
    X = grid.coords()
    d = grid.dim
    m = op.in_components
    rng = np.random.default_rng([family.seed, 1])
    dirs = rng.standard_normal((max(family.spikes, 1), m))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    lo = np.resize(np.asarray(family.support_lo), d)
    hi = np.resize(np.asarray(family.support_hi), d)
    out = np.zeros(grid.shape + (m,))
    if family.name == "spike_train":
        s = family.width
        for c, v in zip(spike_centers(family, d), dirs):
            t = np.linalg.norm(X - c, axis=-1) / s
            out += (s**op.order * _bump(t))[..., None] * v
        return out
    # layered families: smooth window on the support box
    win = np.ones(grid.shape)
    for ax in range(d):
        x = X[..., ax]
        mid, half = 0.5 * (lo[ax] + hi[ax]), 0.5 * (hi[ax] - lo[ax])
        win *= _bump(np.abs(x - mid) / half)
    k = 2 * np.pi / family.wavelength
    if family.name == "oscillation":
        # finer layers as j grows
        kj = k * 2 ** (j / 2)
        phase = kj * X[..., 0]
        prof = np.sin(phase) / kj**op.order
    else:  # shear_layer
        delta = family.wavelength * 2 ** (-j / 2)
        y = (X[..., -1] - 0.5 * (lo[-1] + hi[-1])) / delta
        prof = delta**op.order * np.log(np.cosh(y))
    out += (prof * win)[..., None] * dirs[0]
    return out


def measured_lambda(u: GridField, K: ConvexBody, op: HomogeneousOperator) -> float:
    return l1_dist_integral(apply_operator(op, u), K)[1]


def generate_sequence(family: SyntheticFamily, j: int, grid: Grid, K: ConvexBody,
                      op: HomogeneousOperator, background: GridField | None = None) -> GridField:
    """The ``j``-th member: ``background + A_j * shape_j`` with ``lambda(u_j)`` equal to the target.

    ``background`` defaults to zero and must satisfy ``B u0 in K``; the
    amplitude is calibrated with the background in place.
    """
    if not family.j_range[0] <= j <= family.j_range[1]:
        raise PreconditionError(f"j={j} outside {family.j_range}")
    if op.dim != grid.dim or op.out_components != K.dim:
        raise PreconditionError("operator, grid and K dimensions disagree")
    if background is None:
        if K.distance(np.zeros(K.dim)) > 0:
            raise PreconditionError("the zero background needs 0 in K")
        bg = np.zeros(grid.shape + (op.in_components,))
    else:
        if background.grid != grid or background.components != op.in_components:
            raise PreconditionError("background must live on the sequence grid")
        if measured_lambda(background, K, op) > 0:
            raise PreconditionError("the background must satisfy B u0 in K")
        bg = background.data
    base = _shape(family, grid, op, j)
    target = family.target(j)

    def lam(A):
        return measured_lambda(GridField(grid, bg + A * base), K, op)

    b0 = np.linalg.norm(apply_operator(op, GridField(grid, base)).data, axis=-1).max()
    a_lo = 0.0
    a_hi = max(2.0 * sup_norm(K) / b0, 1e-12)
    while lam(a_hi) < target:
        a_hi *= 2.0
        if a_hi > 1e12:
            raise PreconditionError("cannot reach the requested lambda")
    A = brentq(lambda a: lam(a) - target, a_lo, a_hi, xtol=1e-14, rtol=1e-12)
    u = GridField(grid, bg + A * base)
    if family.M is not None:
        dl = sup_norm_derivative(u, op.order) / sup_norm(K)
        if dl > family.M * (1 + 1e-9):
            raise PreconditionError(f"|D^l u_{j}| / |K| = {dl:.4g} exceeds the declared M = {family.M}")
    return u


def amplitude_for_peak(family: SyntheticFamily, grid: Grid, op: HomogeneousOperator, peak: float) -> float:
    """Amplitude at which ``max |B u|`` equals ``peak``."""
    base = _shape(family, grid, op, 0)
    b0 = np.linalg.norm(apply_operator(op, GridField(grid, base)).data, axis=-1).max()
    return peak / b0


def lambda_for_peak(family: SyntheticFamily, grid: Grid, K: ConvexBody, op: HomogeneousOperator,
                    peak: float) -> float:
    """``lambda`` of the ``j = 0`` shape scaled so that ``max |B u| = peak``; handy for picking ``lambda0``."""
    base = _shape(family, grid, op, 0)
    A = amplitude_for_peak(family, grid, op, peak)
    return measured_lambda(GridField(grid, A * base), K, op)
