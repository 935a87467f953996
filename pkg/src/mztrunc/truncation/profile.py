"""Radius function for the variable-radius ball average.

On the unit ball the profile is ``eps`` up to ``|x| = 5/8``, decays to zero
through two matched quadratics on ``[5/8, 7/8]`` and vanishes beyond (the
point ``|x| = 7/8`` itself included).  Its slope peaks at ``8 eps`` and its
curvature is ``64 eps`` in absolute value on the transition.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import PreconditionError

S_PLATEAU = 5.0 / 8.0
S_MID = 3.0 / 4.0
S_ZERO = 7.0 / 8.0
SLOPE_FACTOR = 8.0
CURVATURE_FACTOR = 64.0
SLOPE_BUDGET = 9.0
CURVATURE_BUDGET = 65.0
EPS_MAX = 0.1


@dataclass(frozen=True)
class RadialProfile:
    """``rho`` on the unit ball; the ball of radius ``r`` uses ``r * rho(|x - a| / r)``."""

    epsilon: float
    r: float = 1.0

    def rho(self, s) -> np.ndarray:
        s = np.abs(np.asarray(s, dtype=float))
        e = self.epsilon
        out = np.zeros_like(s)
        out[s <= S_PLATEAU] = e
        t = (s > S_PLATEAU) & (s <= S_MID)
        out[t] = e - 32.0 * e * (s[t] - S_PLATEAU) ** 2
        t = (s > S_MID) & (s < S_ZERO)
        out[t] = 32.0 * e * (S_ZERO - s[t]) ** 2
        return out

    def drho(self, s) -> np.ndarray:
        s = np.abs(np.asarray(s, dtype=float))
        e = self.epsilon
        out = np.zeros_like(s)
        t = (s > S_PLATEAU) & (s <= S_MID)
        out[t] = -64.0 * e * (s[t] - S_PLATEAU)
        t = (s > S_MID) & (s < S_ZERO)
        out[t] = -64.0 * e * (S_ZERO - s[t])
        return out

    def d2rho(self, s) -> np.ndarray:
        s = np.abs(np.asarray(s, dtype=float))
        e = self.epsilon
        out = np.zeros_like(s)
        out[(s > S_PLATEAU) & (s < S_MID)] = -64.0 * e
        out[(s > S_MID) & (s < S_ZERO)] = 64.0 * e
        return out

    def physical_radius(self, dist) -> np.ndarray:
        """Averaging radius at distance ``dist`` from the ball centre."""
        return self.r * self.rho(np.asarray(dist, dtype=float) / self.r)

    def certificate(self, samples: int = 100_001) -> dict:
        return profile_certificate(self, samples)


def make_profile(epsilon: float, r: float = 1.0) -> RadialProfile:
    if not 0.0 < epsilon < EPS_MAX:
        raise PreconditionError(f"profile height must lie in (0, 1/10), got {epsilon}")
    if not r > 0:
        raise PreconditionError(f"ball radius must be positive, got {r}")
    return RadialProfile(float(epsilon), float(r))


def profile_certificate(profile: RadialProfile, samples: int = 100_001) -> dict:
    """Measure slope and curvature of ``rho`` by differences on a uniform grid of [0, 1].

    Differences are exact on each quadratic piece, so the measured maxima
    reproduce ``8 eps`` and ``64 eps`` up to rounding; stencils that straddle
    a breakpoint average neighbouring values and cannot exceed them.
    """
    s = np.linspace(0.0, 1.0, samples)
    ds = s[1] - s[0]
    v = profile.rho(s)
    e = profile.epsilon
    slope = float(np.max(np.abs(np.diff(v)) / ds))
    curv = float(np.max(np.abs(v[2:] - 2 * v[1:-1] + v[:-2]) / ds**2))
    plateau = s <= S_PLATEAU
    inner = s < S_ZERO
    return {
        "epsilon": e,
        "samples": samples,
        "max_slope": slope,
        "max_curvature": curv,
        "slope_ratio": slope / e,
        "curvature_ratio": curv / e,
        "slope_ok": slope <= SLOPE_BUDGET * e,
        "curvature_ok": curv <= CURVATURE_BUDGET * e,
        "plateau_ok": bool(np.all(v[plateau] == e)),
        "positive_inside": bool(np.all((v[inner] > 0) & (v[inner] <= e))),
        "zero_outside": bool(np.all(v[~inner] == 0.0)),
        "rho_mid": float(profile.rho(S_MID)),
    }
