"""Whole-space, domain and varying-K truncation drivers."""

from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.ndimage import distance_transform_edt

from ..convex_geom import ConvexBody, hausdorff, sup_norm
from ..errors import DivergenceError, PreconditionError, ScheduleError
from ..field import (
    Grid,
    GridField,
    HomogeneousOperator,
    apply_operator,
    derivative_norm,
    derivative_tensor,
    interior_mask,
    pairwise_sum,
)
from .schedule import DEFAULT_C2, build_schedule, default_alpha
from .sweep import sweep

DIVERGENCE_PATIENCE = 3
LAMBDA_STOP_FACTOR = 1e-8


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    return obj


@dataclass
class TruncationReport:
    stages: list = field(default_factory=list)
    lambda_initial: float = 0.0
    lambda_final: float = 0.0
    modified_measure: float = 0.0  # |{u != g}|
    sum_mu: float = 0.0
    measure_bound: float = 0.0
    sup_dist_K: float = 0.0
    sup_dist_K_gamma: float = 0.0
    gamma_bar: float = 0.0
    dl_initial: float = 0.0
    dl_final: float = 0.0
    dl_bound: float = 0.0
    support_radius: float | None = None
    support_ok: bool | None = None
    status: str = ""
    schedule: dict = field(default_factory=dict)
    checks: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)
    wall_clock: float = 0.0

    @property
    def ok(self) -> bool:
        return all(bool(v) for v in self.checks.values())

    def to_json(self) -> dict:
        return _jsonable(asdict(self))


# ---------------------------------------------------------------------------
# whole space
# ---------------------------------------------------------------------------

def truncate_whole_space(
    u: GridField,
    K: ConvexBody,
    gamma: float,
    M: float,
    op: HomogeneousOperator,
    alpha: float | None = None,
    c2: float = DEFAULT_C2,
    c3: float | None = None,
    c4: float | None = None,
    c5: float | None = None,
    lambda_stop: float | None = None,
    stage_floor: float = 1e-3,
    max_stages: int = 500,
    support: np.ndarray | None = None,
    allowed: np.ndarray | None = None,
    slack: float = 1.0,
) -> tuple[GridField, TruncationReport]:
    """Repeat sweeps along the inflation schedule until ``B g`` lies in ``K_gamma``.

    The grid stands for the whole space: the deviation of ``u`` from its
    background must vanish near the box faces.  ``M`` bounds
    ``|D^l u| / |K|_inf``; ``lambda_stop`` bounds the raw L1 integral of
    ``dist(Bu_i, K_i)`` at which iteration stops (default
    ``1e-8 |K|_inf |domain|``).  ``support`` is a node mask V with
    ``Bu in K`` off V; the report then checks ``{u != g}`` against its
    dilate ``V_rho``.
    """
    t0 = time.perf_counter()
    g = u.grid
    d = g.dim
    ks = sup_norm(K)
    c1 = op.c1()
    alpha = default_alpha(d) if alpha is None else alpha
    sched = build_schedule(gamma, d, M, alpha, ks, c1=c1, c2=c2, c3=c3, c4=c4, c5=c5,
                           stage_floor=stage_floor, max_stages=max_stages)
    if lambda_stop is None:
        lambda_stop = LAMBDA_STOP_FACTOR * ks * g.volume
    hd = g.cell_volume
    report = TruncationReport(gamma_bar=sched.gamma_bar, schedule=sched.to_json())

    e0 = K.distance(apply_operator(op, u).data)
    report.lambda_initial = hd * pairwise_sum(e0) / ks
    report.dl_initial = float(derivative_norm(u, op.order)[interior_mask(g)].max())

    cur = u
    dl_abs = M * ks
    rising = 0
    prev_lam = math.inf
    report.status = "schedule_exhausted"
    for i in range(sched.stages):
        infl = sched.inflation_before(i)
        K_i = K.inflate(infl) if infl > 0 else K
        ks_i = sup_norm(K_i)
        gamma_i = sched.gamma_phys(i)
        M_i = dl_abs / ks_i
        raw_i = hd * pairwise_sum(K_i.distance(apply_operator(op, cur).data))
        lam_i = raw_i / ks_i
        if raw_i <= lambda_stop:
            report.status = "converged"
            break
        if lam_i >= prev_lam:
            rising += 1
            if rising >= DIVERGENCE_PATIENCE:
                report.status = "diverged"
                raise DivergenceError(
                    f"lambda did not decrease over {DIVERGENCE_PATIENCE} sweeps",
                    diagnostics=report.to_json(),
                )
        else:
            rising = 0
        prev_lam = lam_i
        if gamma_i >= c2 * (1 + c1 * M_i) * ks_i:
            raise ScheduleError(f"stage {i}: gamma_i={gamma_i:.4g} outside the admissible sweep range")
        res = sweep(cur, K_i, gamma_i, M_i, op, c2=c2, c3=sched.c3, allowed=allowed, slack=slack)
        report.stages.append({
            "stage": i,
            "lambda": lam_i,
            "lambda_new": res.lambda_new * ks_i / sup_norm(K_i.inflate(gamma_i)),
            "contraction": res.contraction,
            "mu": res.mu,
            "mu_bound": res.mu_bound,
            "gamma_i": gamma_i,
            "K_sup_i": ks_i,
            "M_i": M_i,
            "theta": res.theta,
            "balls": len(res.balls),
            "ball_radii": [b.radius for b in res.balls],
            "uncovered": res.uncovered,
            "dl_after": res.dl_after,
            "dl_bound": res.dl_bound,
            "support_radius": res.support_radius,
            "checks": res.checks,
        })
        cur = res.u_tilde
        dl_abs = dl_abs + gamma_i

    bg = apply_operator(op, cur).data
    modified = np.any(cur.data != u.data, axis=-1)
    report.modified_measure = float(modified.sum()) * hd
    report.sum_mu = math.fsum(s["mu"] for s in report.stages)
    report.measure_bound = sched.measure_bound(report.lambda_initial)
    report.sup_dist_K = float(K.distance(bg).max())
    report.sup_dist_K_gamma = float(K.inflate(sched.gamma_bar).distance(bg).max())
    report.lambda_final = hd * pairwise_sum(K.inflate(sched.gamma_bar).distance(bg)) / ks
    report.dl_final = float(derivative_norm(cur, op.order)[interior_mask(g)].max())
    report.dl_bound = M * ks + sched.gamma_bar
    checks = {
        "stage_measure_bounds": all(s["checks"]["measure_bound"] for s in report.stages),
        "stage_disjoint": all(s["checks"]["disjoint"] for s in report.stages),
        "stage_coverage": all(s["checks"]["coverage"] for s in report.stages),
        "derivative_bound": report.dl_final <= report.dl_bound * (1 + slack * g.spacing),
    }
    if support is not None:
        rho = sched.support_radius(report.lambda_initial)
        dist = distance_transform_edt(~support, sampling=g.spacing)
        report.support_radius = rho
        report.support_ok = bool(np.all(dist[modified] <= rho))
        checks["support"] = report.support_ok
    report.checks = checks
    report.wall_clock = time.perf_counter() - t0
    return cur, report


# ---------------------------------------------------------------------------
# domain version
# ---------------------------------------------------------------------------

def smoothstep5(t):
    t = np.clip(t, 0.0, 1.0)
    return np.clip(t * t * t * (10.0 - 15.0 * t + 6.0 * t * t), 0.0, 1.0)


def _dsmooth(t):
    t = np.clip(t, 0.0, 1.0)
    return 30.0 * t * t * (1.0 - t) ** 2


def _d2smooth(t):
    t = np.clip(t, 0.0, 1.0)
    return 60.0 * t * (1.0 - t) * (1.0 - 2.0 * t)


def box_cutoff(grid: Grid, lo, hi, width: float):
    """Product cutoff equal to 1 on ``[lo + w, hi - w]`` and 0 outside ``(lo, hi)``.

    Returns ``(phi, grad, hess)`` with analytic derivatives, shapes
    ``(*shape)``, ``(*shape, d)`` and ``(*shape, d, d)``.
    """
    d = grid.dim
    axes = grid.axes()
    f, df, d2f = [], [], []
    for k in range(d):
        x = axes[k]
        a = (x - lo[k]) / width
        b = (hi[k] - x) / width
        use_a = a <= b
        t = np.where(use_a, a, b)
        sgn = np.where(use_a, 1.0, -1.0) / width
        f.append(smoothstep5(t))
        df.append(_dsmooth(t) * sgn)
        d2f.append(_d2smooth(t) / width**2)
    mesh = lambda arrs: np.meshgrid(*arrs, indexing="ij")  # noqa: E731
    F, DF, D2F = mesh(f), mesh(df), mesh(d2f)
    phi = np.prod(F, axis=0)
    grad = np.zeros(grid.shape + (d,))
    hess = np.zeros(grid.shape + (d, d))
    for a in range(d):
        others = [F[k] for k in range(d) if k != a]
        rest = np.prod(others, axis=0) if others else 1.0
        grad[..., a] = DF[a] * rest
        hess[..., a, a] = D2F[a] * rest
        for b in range(a + 1, d):
            others = [F[k] for k in range(d) if k not in (a, b)]
            rest2 = np.prod(others, axis=0) if others else 1.0
            hess[..., a, b] = hess[..., b, a] = DF[a] * DF[b] * rest2
    return phi, grad, hess


def box_mask(grid: Grid, lo, hi, closed: bool = False) -> np.ndarray:
    axes = grid.axes()
    masks = []
    for k in range(grid.dim):
        x = axes[k]
        masks.append((x >= lo[k]) & (x <= hi[k]) if closed else (x > lo[k]) & (x < hi[k]))
    return np.all(np.stack(np.meshgrid(*masks, indexing="ij")), axis=0)


@dataclass
class DomainTruncationConfig:
    """Limit ``u0`` and the open box ``U`` (``U_lo``, ``U_hi``) inside the grid box.

    The cutoff rises from 0 at the faces of U to 1 at depth ``width`` (at
    least ten grid spacings); ``V`` is U shrunk by ``width``.
    """

    u0: GridField
    U_lo: Sequence[float]
    U_hi: Sequence[float]
    gamma: float
    width: float | None = None
    alpha: float | None = None
    c2: float = DEFAULT_C2
    c3: float | None = None
    c4: float | None = None
    c5: float | None = None
    lambda_stop: float | None = None
    stage_floor: float = 1e-3
    k_tol: float = 1e-8
    slack: float = 1.0

    def resolved_width(self) -> float:
        h = self.u0.grid.spacing
        return max(10.0 * h, self.width or 0.0)

    def V(self):
        w = self.resolved_width()
        return np.asarray(self.U_lo) + w, np.asarray(self.U_hi) - w


def exhaustion_box(grid: Grid, j: int, margin0: float, margin_min: float):
    """``U_j``: the grid box shrunk by ``max(margin_min, margin0 2^-j)``; increasing in j."""
    m = max(margin_min, margin0 * 2.0**-j)
    lo = np.asarray(grid.origin) + m
    hi = np.asarray(grid.origin) + (np.asarray(grid.shape) - 1) * grid.spacing - m
    return lo, hi


def _check_nesting(grid: Grid, cfg: DomainTruncationConfig):
    lo_box = np.asarray(grid.origin)
    hi_box = lo_box + (np.asarray(grid.shape) - 1) * grid.spacing
    U_lo, U_hi = np.asarray(cfg.U_lo, float), np.asarray(cfg.U_hi, float)
    V_lo, V_hi = cfg.V()
    if np.any(U_lo <= lo_box) or np.any(U_hi >= hi_box):
        raise PreconditionError("U must be compactly contained in the grid box")
    if np.any(V_lo >= V_hi):
        raise PreconditionError("V = U shrunk by the cutoff width is empty")


def blend_remainder_check(u: GridField, u0: GridField, w: GridField, phi, grad, hess, slack: float = 1.0) -> dict:
    """Pointwise check of ``|D^2 w| <= phi |D^2 u| + (1 - phi)|D^2 u0| + |R|`` with
    ``|R| <= 2 |D(u - u0)| |D phi| + |u - u0| |D^2 phi|``."""
    g = u.grid
    inner = interior_mask(g)
    dw = derivative_norm(w, 2)
    du = derivative_norm(u, 2)
    du0 = derivative_norm(u0, 2)
    diff = GridField(g, u.data - u0.data)
    d1 = np.sqrt(np.sum(derivative_tensor(diff, 1).reshape(g.shape + (-1,)) ** 2, axis=-1))
    vabs = np.linalg.norm(diff.data, axis=-1)
    gphi = np.linalg.norm(grad, axis=-1)
    hphi = np.sqrt(np.sum(hess**2, axis=(-2, -1)))
    r_bound = 2.0 * d1 * gphi + vabs * hphi
    rhs = phi * du + (1.0 - phi) * du0 + r_bound
    scale = float(max(du.max(), du0.max(), 1e-300))
    excess = (dw - rhs)[inner]
    return {
        "max_excess": float(excess.max()),
        "allowed_slack": slack * g.spacing * scale,
        "ok": bool(excess.max() <= slack * g.spacing * scale),
        "max_remainder_bound": float(r_bound.max()),
    }


def truncate_domain(
    u_j: GridField,
    config: DomainTruncationConfig,
    K: ConvexBody,
    M: float,
    op: HomogeneousOperator,
) -> tuple[GridField, TruncationReport]:
    """Blend ``u_j`` into ``u0`` near the faces of U, then truncate inside U."""
    t0 = time.perf_counter()
    cfg = config
    g = u_j.grid
    u0 = cfg.u0
    if u0.grid != g or u0.components != u_j.components:
        raise PreconditionError("u_j and u0 must live on the same grid with equal components")
    _check_nesting(g, cfg)
    ks = sup_norm(K)
    inner = interior_mask(g)
    k_err = float(K.distance(apply_operator(op, u0).data)[inner].max())
    if k_err > cfg.k_tol * ks:
        raise PreconditionError(f"B u0 leaves K by {k_err:.3e}")

    width = cfg.resolved_width()
    U_lo, U_hi = np.asarray(cfg.U_lo, float), np.asarray(cfg.U_hi, float)
    phi, grad, hess = box_cutoff(g, U_lo, U_hi, width)
    U = box_mask(g, U_lo, U_hi)
    blend = u0.data + phi[..., None] * (u_j.data - u0.data)  # exact when u_j = u0
    blend[~U] = u0.data[~U]
    w = GridField(g, blend)
    dl_w = float(derivative_norm(w, op.order)[inner].max()) / ks
    M_blend = max(M, dl_w)

    out, report = truncate_whole_space(
        w, K, cfg.gamma, M_blend, op, alpha=cfg.alpha, c2=cfg.c2, c3=cfg.c3, c4=cfg.c4, c5=cfg.c5,
        lambda_stop=cfg.lambda_stop, stage_floor=cfg.stage_floor, support=phi > 0, allowed=U,
        slack=cfg.slack,
    )
    data = out.data.copy()
    data[~U] = u0.data[~U]
    res = GridField(g, data)
    diff = np.any(res.data != u_j.data, axis=-1)
    report.extra["modified_measure_in_U"] = float((diff & U).sum()) * g.cell_volume
    report.extra["modified_measure"] = float(diff.sum()) * g.cell_volume
    report.extra["truncation_measure"] = report.modified_measure
    report.extra["M_blend"] = M_blend
    report.extra["width"] = width
    report.extra["outside_U_exact"] = bool(np.array_equal(res.data[~U], u0.data[~U]))
    report.checks["outside_U_exact"] = report.extra["outside_U_exact"]
    if op.order == 2:
        rc = blend_remainder_check(u_j, u0, w, phi, grad, hess, cfg.slack)
        report.extra["remainder_check"] = rc
        report.checks["blend_remainder"] = rc["ok"]
    bg = apply_operator(op, res).data
    report.sup_dist_K = float(K.distance(bg).max())
    report.sup_dist_K_gamma = float(K.inflate(report.gamma_bar).distance(bg).max())
    report.wall_clock = time.perf_counter() - t0
    return res, report


# ---------------------------------------------------------------------------
# varying K
# ---------------------------------------------------------------------------

@dataclass
class VaryingKConfig:
    """Family ``x -> K_x`` with ``|K_x| >= eta`` and a modulus of continuity.

    ``modulus`` lists pairs ``(eps, delta)`` with ``d_H(K_x, K_y) <= eps``
    whenever ``|x - y| <= delta``.  Cubes are dyadic, ``[k 2^-N, (k+1) 2^-N)``
    per axis in absolute coordinates; a grid with nodes at cell centres
    splits cleanly.  ``margin`` is the depth (in grid spacings) of the band
    along cube faces kept equal to ``u0``.
    """

    u0: GridField
    K_map: Callable
    eta: float
    modulus: Sequence
    gamma_factor: float = 0.5
    margin: int = 2
    width: float | None = None
    alpha: float | None = None
    c2: float = DEFAULT_C2
    stage_floor: float = 1e-3
    slack: float = 1.0
    max_depth: int = 12


def dyadic_depth(config: VaryingKConfig, level: int, dim: int) -> int:
    """Smallest N with ``sqrt(d) 2^-N <= delta`` for a modulus pair with ``eps <= 1/level``."""
    target = 1.0 / level
    deltas = [dl for eps, dl in config.modulus if eps <= target]
    if not deltas:
        raise PreconditionError(f"modulus table has no entry with eps <= 1/{level}")
    delta = max(deltas)
    N = 0
    while math.sqrt(dim) * 2.0**-N > delta:
        N += 1
        if N > config.max_depth:
            raise PreconditionError("modulus table requires cubes finer than max_depth")
    return N


def dist_to_family(values: np.ndarray, grid: Grid, K_map: Callable) -> np.ndarray:
    """``dist(values(x), K_x)`` node by node."""
    pts = grid.coords().reshape(-1, grid.dim)
    vals = values.reshape(-1, values.shape[-1])
    out = np.array([K_map(p).distance(v[None])[0] for p, v in zip(pts, vals)])
    return out.reshape(grid.shape)


def truncate_varying_K(
    u_j: GridField,
    config: VaryingKConfig,
    M: float,
    op: HomogeneousOperator,
    level: int,
) -> tuple[GridField, TruncationReport]:
    """Level-``level`` construction: per dyadic cube, truncate towards the
    inflated body at the cube's reference point and stitch the results.

    ``M`` bounds ``|D^l u_j|`` in absolute units.
    """
    t0 = time.perf_counter()
    cfg = config
    g = u_j.grid
    d = g.dim
    volume = g.volume
    N = dyadic_depth(cfg, level, d)
    side = 2.0**-N
    coords = g.axes()
    cube_of = [np.floor(x / side).astype(int) for x in coords]
    cube_ids = [np.unique(c) for c in cube_of]
    out = cfg.u0.data.copy()
    report = TruncationReport(status="assembled")
    report.extra.update({"level": level, "depth": N, "cubes": []})
    inflation = volume / level
    h = g.spacing
    for key in np.ndindex(*[len(c) for c in cube_ids]):
        label = [int(cube_ids[k][key[k]]) for k in range(d)]
        sel = [np.flatnonzero(cube_of[k] == label[k]) for k in range(d)]
        if min(len(s) for s in sel) < 2 * cfg.margin + 5:
            raise PreconditionError(f"cube {label} has too few nodes for the stencils")
        sub_origin = tuple(coords[k][sel[k][0]] for k in range(d))
        sub = Grid(tuple(len(s) for s in sel), h, sub_origin, "extend")
        ix = np.ix_(*sel)
        centre = np.array([(lab + 0.5) * side for lab in label])
        lo_c = np.array([coords[k][sel[k][0]] for k in range(d)])
        hi_c = np.array([coords[k][sel[k][-1]] for k in range(d)])
        ref = np.clip(centre, lo_c, hi_c)
        K_ref = cfg.K_map(ref)
        ks_ref = sup_norm(K_ref)
        if ks_ref < cfg.eta:
            raise PreconditionError(f"|K_x| = {ks_ref:.4g} below eta at {ref.tolist()}")
        K_n = K_ref.inflate(inflation)
        U_lo = lo_c + cfg.margin * h
        U_hi = hi_c - cfg.margin * h
        gamma = cfg.gamma_factor / level
        dcfg = DomainTruncationConfig(
            u0=GridField(sub, cfg.u0.data[ix]), U_lo=U_lo, U_hi=U_hi, gamma=gamma,
            width=cfg.width, alpha=cfg.alpha, c2=cfg.c2, stage_floor=cfg.stage_floor,
            slack=cfg.slack,
        )
        M_rel = M / cfg.eta
        w_n, rep_n = truncate_domain(GridField(sub, u_j.data[ix]), dcfg, K_n, M_rel, op)
        out[ix] = w_n.data
        report.extra["cubes"].append({
            "label": label,
            "reference": ref.tolist(),
            "gamma_bar": rep_n.gamma_bar,
            "sup_dist_inflated": rep_n.sup_dist_K_gamma,
            "modified_measure": rep_n.extra["modified_measure"],
            "checks": rep_n.checks,
        })
    w = GridField(g, out)
    bw = apply_operator(op, w).data
    dist = dist_to_family(bw, g, cfg.K_map)
    report.sup_dist_K = float(dist.max())
    report.modified_measure = float(np.any(w.data != u_j.data, axis=-1).sum()) * g.cell_volume
    bound = (2.0 + volume) / level
    report.extra["level_bound"] = bound
    report.checks["level_bound"] = report.sup_dist_K <= bound + cfg.slack * h * bound
    report.checks["cubes"] = all(all(c["checks"].values()) for c in report.extra["cubes"])
    report.wall_clock = time.perf_counter() - t0
    return w, report


def varying_K_ladder(sequence: Sequence[GridField], config: VaryingKConfig, M: float,
                     op: HomogeneousOperator, levels: Sequence[int]) -> dict:
    """Choose the strictly increasing ``j_i`` of the diagonal argument.

    ``j_i`` is the first index (after ``j_{i-1}``) whose level-i output has
    modified measure at most ``1/i`` and cube-wise residual at most ``1/i``.
    Returns per-level reports and the resulting ``j -> level`` assignment.
    """
    out = {"levels": [], "assignment": {}}
    j_prev = -1
    for level in levels:
        chosen = None
        for j in range(j_prev + 1, len(sequence)):
            w, rep = truncate_varying_K(sequence[j], config, M, op, level)
            resid = max(c["sup_dist_inflated"] for c in rep.extra["cubes"])
            if rep.modified_measure <= 1.0 / level and resid <= 1.0 / level:
                chosen = (j, rep)
                break
        if chosen is None:
            break
        j_prev = chosen[0]
        out["levels"].append({"level": level, "j": chosen[0], "report": chosen[1].to_json()})
    js = [lv["j"] for lv in out["levels"]]
    for n, (lv, j) in enumerate(zip(out["levels"], js)):
        j_next = js[n + 1] if n + 1 < len(js) else len(sequence)
        for jj in range(j, j_next):
            out["assignment"][jj] = lv["level"]
    return out


def constant_family(K: ConvexBody) -> Callable:
    return lambda x: K


def hausdorff_modulus_check(K_map: Callable, points: np.ndarray, eps: float, delta: float) -> bool:
    """Spot check of one modulus pair on all point pairs closer than ``delta``."""
    for a in points:
        for b in points:
            if np.linalg.norm(a - b) <= delta and hausdorff(K_map(a), K_map(b)) > eps * (1 + 1e-12):
                return False
    return True
