"""Diagnostics for sequences of truncations."""

from __future__ import annotations

import itertools
import math
from typing import Sequence

import numpy as np

from ..errors import GridError
from ..field import GridField, pairwise_sum


def growth_admissibility(lambda_j: float, M_j: float, eps: float, d: int, K_sup: float,
                         C1: float, C2: float) -> float:
    """``lambda^(1-eps) (1 + C1 M) |K|^(d+1) exp(2 (d+1) C2 (1 + C1 M))``.

    A sequence with varying derivative bounds ``M_j`` is admissible when
    these values tend to zero.
    """
    if lambda_j < 0:
        raise ValueError("lambda_j must be nonnegative")
    if not 0.0 < eps < 1.0:
        raise ValueError("eps must lie in (0, 1)")
    if lambda_j == 0:
        return 0.0
    a = 1.0 + C1 * M_j
    return lambda_j ** (1.0 - eps) * a * K_sup ** (d + 1) * math.exp(2 * (d + 1) * C2 * a)


def is_decreasing(values: Sequence[float]) -> bool:
    return all(b <= a for a, b in zip(values, values[1:]))


def monomials(components: int, max_degree: int = 3) -> list[tuple]:
    """Exponent vectors of all monomials in ``components`` variables with degree 1..max_degree."""
    out = []
    for deg in range(1, max_degree + 1):
        for combo in itertools.combinations_with_replacement(range(components), deg):
            e = [0] * components
            for c in combo:
                e[c] += 1
            out.append(tuple(e))
    return out


def young_measure_compare(f1: GridField, f2: GridField, test_moments: Sequence[tuple] | None = None) -> list[dict]:
    """Spatial averages of monomials of the field values for two fields.

    Each row holds the exponent vector, both averages and their absolute
    difference.
    """
    if f1.grid != f2.grid or f1.components != f2.components:
        raise GridError("fields must share grid and component count")
    if test_moments is None:
        test_moments = monomials(f1.components)
    a = f1.data.reshape(-1, f1.components)
    b = f2.data.reshape(-1, f2.components)
    n = a.shape[0]
    rows = []
    for e in test_moments:
        e = tuple(int(x) for x in e)
        if len(e) != f1.components or sum(e) > 3 or min(e) < 0:
            raise GridError(f"moment {e} must have {f1.components} entries and degree <= 3")
        ma = pairwise_sum(np.prod(a ** np.asarray(e), axis=1)) / n
        mb = pairwise_sum(np.prod(b ** np.asarray(e), axis=1)) / n
        rows.append({"moment": list(e), "first": ma, "second": mb, "difference": abs(ma - mb)})
    return rows
