"""Inflation schedule for repeated sweeps.

Stage ``i`` works against ``K_i`` with ``|K_i| = M_i |K|`` and inflates it by
``gamma_i = delta q^i M_i`` (in units of ``|K|``), ``q = alpha^(1/(2(d+1)))``.
``delta`` is fixed by ``gamma = delta abar exp(delta abar)`` with
``abar = sum_i q^i``, which keeps the total inflation below ``gamma``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

from ..errors import ScheduleError

DEFAULT_C2 = 0.09
RESIDUAL_TOL = 1e-12


def default_alpha(dim: int) -> float:
    return 1.0 - 5.0 ** (-dim) / 4.0


def default_c(dim: int) -> float:
    return 2.0**dim


@dataclass
class Schedule:
    gamma_target: float
    dim: int
    M: float
    alpha: float
    k_sup: float
    c1: float | None
    c2: float
    c3: float
    c4: float
    c5: float
    delta: float
    alpha_bar: float
    M_bar: float
    gamma_bar: float
    residual: float
    factors: list = field(default_factory=list)  # delta * alpha^(i/(2(d+1)))
    M_stage: list = field(default_factory=list)  # M_i = |K_i| / |K|
    gamma_stage: list = field(default_factory=list)  # gamma_i in units of |K|

    @property
    def stages(self) -> int:
        return len(self.gamma_stage)

    def gamma_phys(self, i: int) -> float:
        return self.gamma_stage[i] * self.k_sup

    def inflation_before(self, i: int) -> float:
        """Total physical inflation of ``K_i`` relative to ``K``."""
        return math.fsum(self.gamma_stage[:i]) * self.k_sup

    def measure_bound(self, lam: float) -> float:
        """Bound on ``|{u != g}|`` for the whole schedule."""
        d = self.dim
        a = 1.0 + (self.c1 or 0.0) * self.M
        return (
            self.c4 * lam * (a * self.k_sup / self.gamma_target) ** (d + 1)
            * math.exp(2 * (d + 1) * self.c2 * a)
        )

    def support_radius(self, lam: float) -> float:
        """Dilation of the declared support that contains ``{u != g}``."""
        d = self.dim
        a = 1.0 + (self.c1 or 0.0) * self.M
        p = 1.0 / d + 1.0
        return (
            self.c5 * (a * self.k_sup) ** p * math.exp(2 * p * self.c2 * a)
            * lam ** (1.0 / d) / self.gamma_target**p
        )

    def to_json(self) -> dict:
        return asdict(self)


def alpha_series(q: float, rtol: float = 1e-15) -> float:
    """``sum_i q^i`` summed term by term until the tail ``q^n / (1 - q)`` is below ``rtol`` of the sum."""
    total, term = 0.0, 1.0
    terms = []
    while True:
        terms.append(term)
        total += term
        term *= q
        if term / (1.0 - q) < rtol * total:
            break
    return math.fsum(terms)


def solve_delta(g: float, abar: float, tol: float = RESIDUAL_TOL) -> tuple[float, float]:
    """Bisection for ``delta abar exp(delta abar) = g`` on ``[0, g / abar]``."""
    if g <= 0:
        raise ScheduleError(f"gamma must be positive, got {g}")
    f = lambda x: x * abar * math.exp(x * abar) - g  # noqa: E731
    lo, hi = 0.0, g / abar
    assert f(lo) < 0 <= f(hi), "bisection bracket must change sign"
    mid = 0.5 * (lo + hi)
    for _ in range(2000):
        mid = 0.5 * (lo + hi)
        val = f(mid)
        if abs(val) <= tol * max(1.0, g) and hi - lo <= 4 * math.ulp(hi):
            break
        if val < 0:
            lo = mid
        else:
            hi = mid
        if hi - lo <= math.ulp(hi):
            break
    # take whichever end has the smaller residual
    best = min((lo, hi, mid), key=lambda x: abs(f(x)))
    return best, abs(f(best))


def build_schedule(
    gamma: float,
    d: int,
    M: float,
    alpha: float,
    K_sup: float,
    c1: float | None = None,
    c2: float = DEFAULT_C2,
    c3: float | None = None,
    c4: float | None = None,
    c5: float | None = None,
    stage_floor: float = 1e-3,
    max_stages: int = 500,
) -> Schedule:
    """Stages are emitted while ``gamma_i >= stage_floor * gamma_0`` (at most ``max_stages``).

    The floor is relative to the first stage: for ``alpha`` close to 1 the
    first inflation is a small fraction of ``gamma``.

    With ``c1`` given, ``gamma < c2 (1 + c1 M) K_sup`` is enforced.
    """
    if not 0.0 < alpha < 1.0:
        raise ScheduleError(f"alpha must lie in (0, 1), got {alpha}")
    if K_sup <= 0:
        raise ScheduleError("|K|_inf must be positive")
    if not gamma > 0:
        raise ScheduleError(f"gamma must be positive, got {gamma}")
    if c1 is not None and gamma >= c2 * (1.0 + c1 * M) * K_sup:
        raise ScheduleError(
            f"gamma={gamma} must be below C2 (1 + C1 M) |K| = {c2 * (1 + c1 * M) * K_sup:.6g}"
        )
    g = gamma / K_sup
    expo = 1.0 / (2 * (d + 1))
    abar = alpha_series(alpha**expo)
    delta, residual = solve_delta(g, abar)
    M_bar = math.exp(delta * abar)
    sched = Schedule(
        gamma_target=gamma,
        dim=d,
        M=M,
        alpha=alpha,
        k_sup=K_sup,
        c1=c1,
        c2=c2,
        c3=default_c(d) if c3 is None else c3,
        c4=default_c(d) if c4 is None else c4,
        c5=default_c(d) if c5 is None else c5,
        delta=delta,
        alpha_bar=abar,
        M_bar=M_bar,
        gamma_bar=delta * abar * M_bar * K_sup,
        residual=residual,
    )
    Mi = 1.0
    for i in range(max_stages):
        factor = delta * alpha ** (i * expo)
        gi = factor * Mi
        if i > 0 and gi < stage_floor * sched.gamma_stage[0]:
            break
        sched.factors.append(factor)
        sched.M_stage.append(Mi)
        sched.gamma_stage.append(gi)
        Mi = Mi + gi
    return sched
