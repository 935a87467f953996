"""Brute-force reference implementations used only by the tests."""

import itertools

import numpy as np


def hull_distance_bruteforce(vertices, p):
    """Distance from ``p`` to conv(vertices) by enumerating every vertex subset.

    For each subset the point is projected onto the affine hull (parametrised
    from the first vertex); projections with nonnegative barycentric weights
    are feasible and the smallest feasible distance is returned.
    """
    V = np.asarray(vertices, dtype=float)
    p = np.asarray(p, dtype=float)
    best = np.inf
    for r in range(1, len(V) + 1):
        for S in itertools.combinations(range(len(V)), r):
            v0 = V[S[0]]
            E = (V[list(S[1:])] - v0).T  # columns span the affine hull
            if r == 1:
                t = np.zeros(0)
            else:
                t, *_ = np.linalg.lstsq(E, p - v0, rcond=None)
            weights = np.concatenate([[1.0 - t.sum()], t])
            if np.all(weights >= -1e-12):
                x = v0 + (E @ t if r > 1 else 0.0)
                best = min(best, float(np.linalg.norm(p - x)))
    return best


def hausdorff_polytopes_bruteforce(V1, V2):
    """Exact Hausdorff distance of two polytopes: the excess is attained at vertices."""
    e12 = max(hull_distance_bruteforce(V2, v) for v in np.asarray(V1))
    e21 = max(hull_distance_bruteforce(V1, v) for v in np.asarray(V2))
    return max(e12, e21)


def poly_derivative(coeffs, powers, alpha):
    """Differentiate a polynomial given as parallel lists of coefficients and exponent tuples."""
    out_c, out_p = [], []
    for c, pw in zip(coeffs, powers):
        c2 = float(c)
        pw2 = list(pw)
        for ax, a in enumerate(alpha):
            for _ in range(a):
                c2 *= pw2[ax]
                pw2[ax] = max(pw2[ax] - 1, 0)
        if c2 != 0.0:
            out_c.append(c2)
            out_p.append(tuple(pw2))
    return out_c, out_p


def poly_eval(coeffs, powers, X):
    X = np.asarray(X, dtype=float)
    out = np.zeros(X.shape[:-1])
    for c, pw in zip(coeffs, powers):
        out = out + c * np.prod(X ** np.asarray(pw), axis=-1)
    return out
