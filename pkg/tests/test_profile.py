import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mztrunc.errors import PreconditionError
from mztrunc.truncation.profile import make_profile


def test_plateau_midpoint_and_tail():
    p = make_profile(0.05)
    assert p.rho(0.0) == 0.05
    assert p.rho(0.6) == 0.05
    assert p.rho(0.75) == pytest.approx(0.025, abs=1e-17)
    assert p.rho(0.875) == 0.0
    assert p.rho(0.9) == 0.0


def test_physical_radius_scales_with_ball():
    p = make_profile(0.05, r=0.2)
    assert p.physical_radius(0.0) == pytest.approx(0.01)
    assert p.physical_radius(0.18) == 0.0


@pytest.mark.parametrize("eps", [0.0, -0.01, 0.1, 0.5])
def test_height_out_of_range(eps):
    with pytest.raises(PreconditionError):
        make_profile(eps)


def test_nonpositive_radius():
    with pytest.raises(PreconditionError):
        make_profile(0.05, 0.0)


def test_continuity_at_breakpoints():
    p = make_profile(0.07)
    for s in (5 / 8, 3 / 4, 7 / 8):
        lo, hi = s - 1e-12, s + 1e-12
        assert abs(p.rho(lo) - p.rho(hi)) < 1e-11
        assert abs(p.drho(lo) - p.drho(hi)) < 1e-9


@settings(max_examples=40, deadline=None)
@given(eps=st.floats(1e-4, 0.0999), s=st.floats(0.0, 1.2))
def test_derivatives_match_differences(eps, s):
    p = make_profile(eps)
    ds = 1e-6
    fd = (p.rho(s + ds) - p.rho(s - ds)) / (2 * ds)
    assert fd == pytest.approx(float(p.drho(s)), abs=64 * eps * ds * 2)
    assert abs(p.drho(s)) <= 8 * eps * (1 + 1e-12)
    assert abs(p.d2rho(s)) in (0.0, pytest.approx(64 * eps))


@pytest.mark.parametrize("eps", [0.01, 0.05, 0.099])
def test_certificate_reproduces_slope_and_curvature(eps):
    c = make_profile(eps).certificate()
    assert c["slope_ok"] and c["curvature_ok"] and c["plateau_ok"]
    assert c["positive_inside"] and c["zero_outside"]
    assert c["slope_ratio"] == pytest.approx(8.0, rel=1e-2)
    assert c["curvature_ratio"] == pytest.approx(64.0, rel=1e-2)
    assert c["rho_mid"] == pytest.approx(eps / 2)


def test_profile_is_radially_nonincreasing():
    p = make_profile(0.03)
    v = p.rho(np.linspace(0, 1, 10_001))
    assert np.all(np.diff(v) <= 0)
