import dataclasses

import numpy as np
import pytest

from mztrunc.convex_geom import ConvexBody
from mztrunc.errors import DivergenceError, PreconditionError
from mztrunc.field import Grid, GridField, gradient_operator, laplacian_operator, sup_norm_derivative
from mztrunc.harness.generators import SyntheticFamily, generate_sequence
from mztrunc.harness.instances import admissible_gamma, unit_square
from mztrunc.truncation import (
    DomainTruncationConfig,
    VaryingKConfig,
    truncate_domain,
    truncate_varying_K,
    truncate_whole_space,
)
from mztrunc.truncation import drivers
from mztrunc.truncation.drivers import box_cutoff, constant_family, dyadic_depth, exhaustion_box

DISC = ConvexBody.ball([0.0, 0.0], 1.0)
SEGMENT = ConvexBody.ball([0.0], 1.0)
GRAD = gradient_operator(2)
LAP = laplacian_operator(2)


def spike(n, lam, width=0.01, op=GRAD, K=DISC, j=0, lo=(0.5, 0.5), hi=(0.5, 0.5)):
    fam = SyntheticFamily("spike_train", lam, width=width, support_lo=lo, support_hi=hi)
    return generate_sequence(fam, j, unit_square(n), K, op)


@pytest.fixture(scope="module")
def spike_run():
    u = spike(257, 4e-6)
    M = sup_norm_derivative(u, 1) * 1.001
    gamma = admissible_gamma(GRAD, M, DISC)
    support = np.linalg.norm(u.grid.coords() - 0.5, axis=-1) <= 0.25
    w, rep = truncate_whole_space(u, DISC, gamma, M, GRAD, alpha=1e-6, support=support)
    return u, w, rep


def test_whole_space_identity_when_Bu_in_K():
    g = unit_square(65)
    u = GridField(g, g.coords() @ np.array([0.2, 0.1]))
    w, rep = truncate_whole_space(u, DISC, 0.5, 1.0, GRAD)
    assert np.array_equal(w.data, u.data)
    assert rep.status == "converged" and rep.sum_mu == 0.0 and rep.stages == []


def test_spike_run_reaches_inflated_body(spike_run):
    u, w, rep = spike_run
    assert rep.ok, rep.checks
    assert rep.sum_mu > 0
    assert rep.sup_dist_K_gamma == 0.0
    assert rep.modified_measure <= rep.sum_mu + 1e-15
    assert rep.stages[0]["balls"] >= 1


def test_support_tracking(spike_run):
    _, _, rep = spike_run
    assert rep.support_ok and rep.support_radius > 0


def test_report_round_trips_to_json(spike_run):
    import json

    _, _, rep = spike_run
    js = json.loads(json.dumps(rep.to_json()))
    assert js["checks"] == {k: bool(v) for k, v in rep.checks.items()}


def test_growing_lambda_raises_divergence(monkeypatch):
    real = drivers.sweep

    def amplifying(u, *args, **kwargs):
        return dataclasses.replace(real(u, *args, **kwargs), u_tilde=GridField(u.grid, 10.0 * u.data))

    monkeypatch.setattr(drivers, "sweep", amplifying)
    u = spike(129, 4e-5, width=0.03)
    M = sup_norm_derivative(u, 1) * 1.001
    with pytest.raises(DivergenceError) as exc:
        truncate_whole_space(u, DISC, admissible_gamma(GRAD, M, DISC), M, GRAD)
    assert len(exc.value.diagnostics["stages"]) == drivers.DIVERGENCE_PATIENCE


def test_box_cutoff_values_and_derivatives():
    g = unit_square(101)
    phi, grad, hess = box_cutoff(g, [0.1, 0.1], [0.9, 0.9], 0.1)
    X = g.coords()
    inner = np.all((X > 0.2 + 1e-9) & (X < 0.8 - 1e-9), axis=-1)
    outer = np.any((X <= 0.1) | (X >= 0.9), axis=-1)
    assert np.all(phi[inner] == 1.0) and np.all(phi[outer] == 0.0)
    assert phi.min() >= 0 and phi.max() <= 1
    fd = np.gradient(phi, g.spacing, axis=0)
    assert np.abs(fd - grad[..., 0])[5:-5, 5:-5].max() < 0.05 * np.abs(grad).max()
    assert np.array_equal(hess[..., 0, 1], hess[..., 1, 0])


def test_exhaustion_boxes_increase():
    g = unit_square(65)
    boxes = [exhaustion_box(g, j, 0.2, 0.05) for j in range(5)]
    for (lo0, hi0), (lo1, hi1) in zip(boxes, boxes[1:]):
        assert np.all(lo1 <= lo0) and np.all(hi1 >= hi0)
    assert np.allclose(boxes[-1][0], 0.05)


def domain_cfg(g, gamma, **kw):
    return DomainTruncationConfig(u0=GridField(g, np.zeros(g.shape)), U_lo=[0.1, 0.1], U_hi=[0.9, 0.9],
                                  gamma=gamma, alpha=1e-6, **kw)


def test_domain_identity_for_limit_input():
    g = unit_square(65)
    u0 = GridField(g, 0.3 * g.coords()[..., 0])
    cfg = dataclasses.replace(domain_cfg(g, 0.5), u0=u0)
    w, rep = truncate_domain(u0, cfg, DISC, 1.0, GRAD)
    assert np.array_equal(w.data, u0.data)
    assert rep.extra["modified_measure"] == 0.0


def test_domain_output_equals_limit_outside_U():
    u = spike(257, 4e-6)
    M = sup_norm_derivative(u, 1) * 1.001
    cfg = domain_cfg(u.grid, admissible_gamma(GRAD, M, DISC))
    w, rep = truncate_domain(u, cfg, DISC, M, GRAD)
    X = u.grid.coords()
    outside = np.any((X <= 0.1) | (X >= 0.9), axis=-1)
    assert np.all(w.data[outside] == 0.0)
    assert rep.checks["outside_U_exact"] and rep.ok
    assert rep.extra["modified_measure_in_U"] > 0


def test_domain_nesting_and_limit_checks():
    g = unit_square(65)
    u = GridField(g, np.zeros(g.shape))
    with pytest.raises(PreconditionError):
        truncate_domain(u, dataclasses.replace(domain_cfg(g, 0.5), U_lo=[0.0, 0.1]), DISC, 1.0, GRAD)
    with pytest.raises(PreconditionError):
        truncate_domain(u, dataclasses.replace(domain_cfg(g, 0.5), width=0.45), DISC, 1.0, GRAD)
    bad = GridField(g, 3.0 * g.coords()[..., 0])
    with pytest.raises(PreconditionError, match="leaves K"):
        truncate_domain(u, dataclasses.replace(domain_cfg(g, 0.5), u0=bad), DISC, 1.0, GRAD)


def test_domain_second_order_remainder_check():
    u = spike(257, 1e-6, width=0.02, op=LAP, K=SEGMENT)
    M = sup_norm_derivative(u, 2) * 1.001
    cfg = domain_cfg(u.grid, admissible_gamma(LAP, M, SEGMENT), width=0.05)
    _, rep = truncate_domain(u, cfg, SEGMENT, M, LAP)
    rc = rep.extra["remainder_check"]
    assert rc["ok"] and rc["max_excess"] <= rc["allowed_slack"]


def cell_grid(n):
    h = 1.0 / n
    return Grid((n, n), h, origin=(h / 2, h / 2))


def test_dyadic_depth_from_modulus():
    g = cell_grid(64)
    cfg = VaryingKConfig(u0=GridField(g, np.zeros(g.shape)), K_map=constant_family(DISC), eta=1.0,
                         modulus=[(0.1, 1.0), (0.05, 0.5), (0.02, 0.2)])
    assert dyadic_depth(cfg, 10, 2) == 1  # sqrt(2) / 2 <= 1
    assert dyadic_depth(cfg, 20, 2) == 2  # sqrt(2) / 4 <= 0.5
    with pytest.raises(PreconditionError):
        dyadic_depth(cfg, 100, 2)


def test_constant_family_reduces_to_fixed_K():
    g = cell_grid(96)
    fam = SyntheticFamily("spike_train", 2e-5, width=0.03, support_lo=(0.5, 0.5), support_hi=(0.5, 0.5))
    u = generate_sequence(fam, 0, g, DISC, GRAD)
    M = sup_norm_derivative(u, 1) * 1.001
    u0 = GridField(g, np.zeros(g.shape))
    level = 2
    vcfg = VaryingKConfig(u0=u0, K_map=constant_family(DISC), eta=1.0, modulus=[(0.0, np.inf)], alpha=1e-6)
    w_v, rep_v = truncate_varying_K(u, vcfg, M, GRAD, level)
    h = g.spacing
    lo = np.array([h / 2, h / 2]) + vcfg.margin * h
    hi = np.array([1 - h / 2, 1 - h / 2]) - vcfg.margin * h
    dcfg = DomainTruncationConfig(u0=u0, U_lo=lo, U_hi=hi, gamma=vcfg.gamma_factor / level, alpha=1e-6)
    w_d, _ = truncate_domain(u, dcfg, DISC.inflate(1.0 / level), M, GRAD)
    assert rep_v.extra["depth"] == 0
    assert np.array_equal(w_v.data, w_d.data)
    assert rep_v.ok
