import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mztrunc.convex_geom import ConvexBody
from mztrunc.errors import PreconditionError
from mztrunc.field import GridField, gradient_operator
from mztrunc.harness.instances import admissible_gamma, sweep_instances, unit_square
from mztrunc.truncation import select_balls, sweep
from mztrunc.truncation.sweep import _ball_nodes, ball_means, balls_disjoint, radius_ladder, sweep_theta

DISC = ConvexBody.ball([0.0, 0.0], 1.0)
GRAD = gradient_operator(2)


def spikes(n, nodes, value=1e-3):
    g = unit_square(n)
    e = np.zeros(g.shape + (1,))
    for i in nodes:
        e[tuple(i) + (0,)] = value
    return GridField(g, e)


def test_radius_ladder_is_dyadic_and_capped():
    r = radius_ladder(unit_square(65))
    h = 1 / 64
    assert r[0] == h
    assert all(b == 2 * a for a, b in zip(r, r[1:]))
    assert r[-1] <= 0.25 * (1 + 1e-9) and 2 * r[-1] > 0.25


def test_ball_means_match_direct_average():
    g = unit_square(33)
    vals = np.random.default_rng(0).random(g.shape)
    m = ball_means(vals, g, 3 * g.spacing)
    nodes = _ball_nodes(g, (16, 10), 3 * g.spacing)
    assert m[16, 10] == pytest.approx(vals.ravel()[nodes].mean(), rel=1e-12)


def test_zero_input_selects_nothing():
    sel = select_balls(spikes(65, []), 1e-4, 1.0)
    assert sel.balls == [] and len(sel.uncovered_index) == 0


def test_negative_input_raises():
    e = spikes(33, [(5, 5)], value=-1.0)
    with pytest.raises(PreconditionError):
        select_balls(e, 1e-4, 1.0)


def test_single_spike_gives_one_ball_around_it():
    sel = select_balls(spikes(65, [(32, 32)]), 1e-4, 1.0)
    assert len(sel.balls) == 1
    b = sel.balls[0]
    assert b.index == (32, 32)
    assert b.radius == pytest.approx(2 / 64)


def test_two_far_spikes_give_two_disjoint_balls():
    g_n = 129
    sel = select_balls(spikes(g_n, [(40, 40), (90, 90)]), 1e-4, 1.0)
    grid = unit_square(g_n)
    assert len(sel.balls) == 2
    assert balls_disjoint(sel.balls, grid)
    assert sel.coverage_ok(grid)


def test_allowed_mask_excludes_balls():
    grid = unit_square(65)
    allowed = np.zeros(grid.shape, dtype=bool)
    sel = select_balls(spikes(65, [(32, 32)]), 1e-4, 1.0, allowed=allowed)
    assert sel.balls == [] and len(sel.uncovered_index) == 1


@settings(max_examples=30, deadline=None)
@given(
    pts=st.lists(st.tuples(st.integers(8, 56), st.integers(8, 56)), min_size=1, max_size=12),
    vals=st.lists(st.floats(1e-4, 5e-3), min_size=12, max_size=12),
)
def test_selection_is_disjoint_and_covers_candidates(pts, vals):
    grid = unit_square(65)
    e = np.zeros(grid.shape + (1,))
    for p, v in zip(pts, vals):
        e[p + (0,)] += v
    sel = select_balls(GridField(grid, e), 1e-4, 1.0)
    assert balls_disjoint(sel.balls, grid)
    assert sel.coverage_ok(grid)
    # a node with e > 5 tau has mean above tau on B_h: it is a candidate or reported
    pos = {tuple(i) for i in np.argwhere(e[..., 0] > 5e-4)}
    seen = {tuple(i) for i in sel.candidate_index} | {tuple(i) for i in sel.uncovered_index}
    assert pos <= seen


def test_sweep_is_identity_when_Bu_in_K():
    g = unit_square(65)
    u = GridField(g, g.coords() @ np.array([0.5, 0.5]))
    res = sweep(u, DISC, 0.5, 1.0, GRAD)
    assert np.array_equal(res.u_tilde.data, u.data)
    assert res.mu == 0.0 and res.lambda_new == 0.0 and res.balls == []


def test_sweep_rejects_gamma_out_of_range():
    g = unit_square(33)
    u = GridField(g, np.zeros(g.shape))
    with pytest.raises(PreconditionError):
        sweep(u, DISC, 0.0, 1.0, GRAD)
    with pytest.raises(PreconditionError):
        sweep(u, DISC, 0.09 * 19.0, 1.0, GRAD)


def test_sweep_theta_formula():
    assert sweep_theta(0.5, 2, 18.0, 1.0, 1.0) == pytest.approx((0.5 / 19.0) ** 3)


@pytest.fixture(scope="module")
def instances():
    return sweep_instances()


def test_sweep_instances_satisfy_bounds(instances):
    for inst in instances:
        res = sweep(inst.u, inst.K, inst.gamma, inst.M, inst.op)
        assert res.balls, inst.name
        assert all(res.checks.values()), (inst.name, res.checks)
        d = inst.u.grid.dim
        ks = 1.0
        assert res.mu <= 2**d * res.lambda_before * ((1 + inst.op.c1() * inst.M) * ks / inst.gamma) ** (d + 1)
        assert res.lambda_new <= res.lambda_before


def test_gamma_helper_is_inside_range():
    assert admissible_gamma(GRAD, 1.0, DISC) < 0.09 * 19.0
