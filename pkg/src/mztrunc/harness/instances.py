"""Bundled, seeded test instances for the ball, sweep and end-to-end suites."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from ..convex_geom import ConvexBody, sup_norm
from ..euler import symgrad_pair
from ..field import (
    Grid,
    GridField,
    HomogeneousOperator,
    apply_operator,
    ball_node_mask,
    gradient_operator,
    laplacian_operator,
    sup_norm_derivative,
)
from ..truncation.schedule import DEFAULT_C2
from .generators import SyntheticFamily, generate_sequence

GAMMA_FRACTION = 0.95


def unit_square(n: int) -> Grid:
    """``n x n`` nodes on ``[0, 1]^2``."""
    return Grid((n, n), 1.0 / (n - 1))


def bump(t):
    return np.where(t < 1.0, (1.0 - t * t) ** 4, 0.0)


def admissible_gamma(op: HomogeneousOperator, M: float, K: ConvexBody, fraction: float = GAMMA_FRACTION) -> float:
    """``fraction * C2 (1 + C1 M) |K|``, just inside the admissible sweep range."""
    return fraction * DEFAULT_C2 * (1.0 + op.c1() * M) * sup_norm(K)


# ---------------------------------------------------------------------------
# single-ball instances
# ---------------------------------------------------------------------------

@dataclass
class BallInstance:
    """``u = g . x + A s bump(|x - c| / s)`` on the unit square, K the unit disc.

    The bump sits inside ``B_{r/4}(a)``; ``A`` is fixed on the 257-node grid
    so that the ball mean of ``dist(grad u, K)`` is ``mean_fraction * theta``.
    """

    slope: np.ndarray
    bump_center: np.ndarray
    width: float
    amplitude: float
    center: np.ndarray
    radius: float
    theta: float

    K = ConvexBody.ball([0.0, 0.0], 1.0)
    op = gradient_operator(2)

    def field(self, n: int) -> GridField:
        g = unit_square(n)
        X = g.coords()
        t = np.linalg.norm(X - self.bump_center, axis=-1) / self.width
        return GridField(g, X @ self.slope + self.amplitude * self.width * bump(t))

    def mean_ratio(self, n: int) -> float:
        u = self.field(n)
        e = self.K.distance(apply_operator(self.op, u).data)
        return float(e[ball_node_mask(u.grid, self.center, self.radius)].mean()) / sup_norm(self.K)

    def M(self, n: int) -> float:
        return max(1.0, sup_norm_derivative(self.field(n), 1) / sup_norm(self.K))


def ball_instances(count: int = 10, seed: int = 0, theta: float = 9e-4, radius: float = 0.25,
                   calibration_grid: int = 257) -> list[BallInstance]:
    rng = np.random.default_rng(seed)
    a = np.array([0.5, 0.5])
    out = []
    for _ in range(count):
        slope = rng.normal(size=2)
        slope *= rng.uniform(0.2, 0.6) / np.linalg.norm(slope)
        width = rng.uniform(0.02, radius / 8)
        c = a + rng.uniform(-1, 1, 2) * (radius / 4 - width) / np.sqrt(2)
        frac = rng.uniform(0.3, 0.7)
        inst = BallInstance(slope, c, width, 0.0, a, radius, theta)

        def gap(A, inst=inst, frac=frac):
            inst.amplitude = A
            return inst.mean_ratio(calibration_grid) - frac * theta

        hi = 1.0
        while gap(hi) < 0:
            hi *= 2.0
        inst.amplitude = brentq(gap, 0.0, hi, xtol=1e-12)
        out.append(inst)
    return out


# ---------------------------------------------------------------------------
# sweep instances
# ---------------------------------------------------------------------------

@dataclass
class SweepInstance:
    name: str
    u: GridField
    K: ConvexBody
    op: HomogeneousOperator
    M: float
    gamma: float


def _spike_instance(name, n, op, K, lam, spikes, width, seed, lo=(0.3, 0.3), hi=(0.7, 0.7)) -> SweepInstance:
    g = unit_square(n)
    fam = SyntheticFamily("spike_train", lam, spikes=spikes, width=width, seed=seed,
                          support_lo=lo, support_hi=hi)
    u = generate_sequence(fam, 0, g, K, op)
    M = sup_norm_derivative(u, op.order) / sup_norm(K) * 1.001
    return SweepInstance(name, u, K, op, M, admissible_gamma(op, M, K))


def sweep_instances() -> list[SweepInstance]:
    """Spike fields for the gradient, symmetric gradient and Hessian trace.

    The L1 levels are chosen so that at least one stopping-time ball is
    large enough for the averaging radius to exceed a grid spacing.
    """
    disc = ConvexBody.ball([0.0, 0.0], 1.0)
    square = ConvexBody.vpolytope([[-1, -1], [1, -1], [-1, 1], [1, 1]])
    sym_ball = ConvexBody.ball([0.0, 0.0, 0.0], 1.0)
    segment = ConvexBody.vpolytope([[-1.0], [1.0]])
    grad, lap = gradient_operator(2), laplacian_operator(2)
    sym = symgrad_pair(2)[0]
    return [
        _spike_instance("gradient_single", 257, grad, disc, 4e-6, 1, 0.01, 0, (0.5, 0.5), (0.5, 0.5)),
        _spike_instance("gradient_pair", 257, grad, disc, 2e-6, 2, 0.01, 1),
        _spike_instance("gradient_many", 257, grad, disc, 1.2e-5, 6, 0.008, 2, (0.15, 0.15), (0.85, 0.85)),
        _spike_instance("gradient_square", 257, grad, square, 4e-6, 1, 0.01, 3, (0.5, 0.5), (0.5, 0.5)),
        _spike_instance("symgrad_single", 257, sym, sym_ball, 4e-6, 1, 0.01, 4, (0.5, 0.5), (0.5, 0.5)),
        _spike_instance("hessian_trace_single", 513, lap, segment, 1e-6, 1, 0.01, 5, (0.5, 0.5), (0.5, 0.5)),
    ]
