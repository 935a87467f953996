"""Regularisation of a field on a single ball by variable-radius averaging."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from ..convex_geom import ConvexBody, sup_norm
from ..errors import PreconditionError
from ..field import (
    GridField,
    HomogeneousOperator,
    apply_operator,
    block_bounds,
    derivative_norm,
    extract_block,
    node_distances,
    pairwise_sum,
    variable_mollify,
)
from .profile import S_PLATEAU, make_profile

_SHELL_TOL = 1e-9


@dataclass
class BallCert:
    """Measured quantities of one ball regularisation and the bounds they should obey."""

    center: list
    radius: float
    theta: float
    epsilon: float
    gamma: float
    mean_ratio: float
    l1_before: float
    l1_before_annulus: float
    l1_after: float
    l1_bound: float
    dl_before: float
    dl_after: float
    dl_bound: float
    interior_sup: float
    modified_nodes: int

    def to_json(self) -> dict:
        return asdict(self)


def theta_limit(dim: int) -> float:
    return 10.0 ** (-(dim + 1))


def ball_gamma(theta: float, dim: int, c1: float, M: float, k_sup: float) -> float:
    return theta ** (1.0 / (1 + dim)) * (1.0 + c1 * M) * k_sup


def regularize_on_ball(
    u: GridField,
    a,
    r: float,
    theta: float,
    K: ConvexBody,
    M: float,
    op: HomogeneousOperator,
    strict: bool = True,
) -> tuple[GridField, BallCert]:
    """Replace ``u`` on ``B_{7r/8}(a)`` by averages over balls of radius ``r rho``.

    ``theta`` must dominate the normalised mean of ``dist(Bu, K)`` over the
    ball; with ``strict`` a violation raises, otherwise it is only reported
    through ``cert.mean_ratio > cert.theta``.
    """
    new_block, idx, _, cert = regularize_block(u, a, r, theta, K, M, op, strict)
    out = u.data.copy()
    out[np.ix_(*idx)] = new_block.data
    return GridField(u.grid, out), cert


def regularize_block(u, a, r, theta, K, M, op, strict=True):
    """Work horse of :func:`regularize_on_ball` on the ball's own index box.

    Returns ``(new_block, index, modified_mask, cert)``; only nodes in
    ``modified_mask`` differ from ``u``.
    """
    d = u.grid.dim
    if not 0.0 < theta < theta_limit(d):
        raise PreconditionError(f"theta must lie in (0, 10^-{d + 1}), got {theta}")
    ks = sup_norm(K)
    if ks <= 0:
        raise PreconditionError("|K|_inf must be positive")
    a = np.asarray(a, dtype=float)
    eps = theta ** (1.0 / (1 + d))
    c1 = op.c1()
    gamma = ball_gamma(theta, d, c1, M, ks)
    profile = make_profile(eps, r)

    lo, hi = block_bounds(u.grid, a, r, margin=2)
    block, idx = extract_block(u, lo, hi)
    dist = node_distances(block.grid, a) / r
    in_ball = dist <= 1.0 + _SHELL_TOL
    annulus = in_ball & (dist >= 0.5 - _SHELL_TOL)
    inner = dist <= S_PLATEAU + _SHELL_TOL
    hd = block.grid.cell_volume

    e_before = K.distance(apply_operator(op, block).data)
    l1_before = hd * pairwise_sum(e_before[in_ball])
    mean_ratio = l1_before / (hd * in_ball.sum()) / ks
    if strict and mean_ratio > theta * (1 + 1e-12):
        raise PreconditionError(f"ball mean {mean_ratio:.3e} exceeds theta {theta:.3e}")

    new_block, mask = variable_mollify(block, a, r, profile, return_mask=True)
    bu_after = apply_operator(op, new_block).data
    e_after = K.distance(bu_after)
    K_gamma = K.inflate(gamma)
    e_after_gamma = K_gamma.distance(bu_after)

    l1_after = hd * pairwise_sum(e_after_gamma[in_ball])
    cert = BallCert(
        center=a.tolist(),
        radius=float(r),
        theta=float(theta),
        epsilon=eps,
        gamma=gamma,
        mean_ratio=float(mean_ratio),
        l1_before=l1_before,
        l1_before_annulus=hd * pairwise_sum(e_before[annulus]),
        l1_after=l1_after,
        l1_bound=(1 + 2 * eps) * hd * pairwise_sum(e_before[annulus]),
        dl_before=float(derivative_norm(block, op.order)[in_ball].max()),
        dl_after=float(derivative_norm(new_block, op.order)[in_ball].max()),
        dl_bound=(1 + c1 * eps) * ks * M,
        interior_sup=float(e_after[inner].max()),
        modified_nodes=int(mask.sum()),
    )
    return new_block, idx, mask, cert
