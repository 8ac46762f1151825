import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from iegs import ech
from iegs.ech import EchCase
from iegs.model import GasPipeline


def pipe(w=1.0, **kw):
    return GasPipeline("P", "i", "j", w, **kw)


@pytest.mark.parametrize(
    "bi,bj,case,rng",
    [
        ((1, 5), (1, 5), EchCase.GENERAL, (-4, 4)),
        ((3, 5), (1, 3), EchCase.DIRECTED_TOUCHING, (0, 4)),
        ((4, 6), (1, 3), EchCase.DIRECTED_POSITIVE, (1, 5)),
    ],
)
def test_classify(bi, bj, case, rng):
    c, lo, hi = ech.classify_case(pipe(), {"i": bi, "j": bj})
    assert c is case
    assert (lo, hi) == rng


def test_fixed_direction_clamps_to_zero():
    c, lo, hi = ech.classify_case(pipe(fixed_direction=True), {"i": (1, 5), "j": (1, 5)})
    assert c is EchCase.DIRECTED_TOUCHING and (lo, hi) == (0.0, 4)


def test_degenerate_range_is_an_error():
    with pytest.raises(ValueError):
        ech.classify_case(pipe(), {"i": (2, 2), "j": (2, 2)})


def test_general_symmetric_example():
    e = ech.build_general_ech(pipe(), -4, 4)
    assert (e.g_min, e.g_max) == (-2, 2)
    assert e.a_L == e.a_U == pytest.approx(0.5)
    assert e.b_U == pytest.approx(0.5)
    assert e.b_L == pytest.approx(-0.5)


def test_general_asymmetric_example():
    e = ech.build_general_ech(pipe(), -1, 9)
    assert (e.g_min, e.g_max) == pytest.approx((-1, 3))
    assert e.a_U == pytest.approx(0.4)
    assert e.b_U == pytest.approx(0.625)
    assert e.b_L == pytest.approx(-0.6)


def test_invalid_weymouth_constant():
    with pytest.raises(ValueError):
        ech.build_general_ech(pipe(0.0), -1, 1)


def test_directed_examples():
    e = ech.build_directed_ech(pipe(), 0, 4)
    assert (e.g_min, e.g_max, e.a_L, e.b_L) == pytest.approx((0, 2, 0.5, 0))
    e = ech.build_directed_ech(pipe(), 1, 4)
    assert (e.g_min, e.g_max, e.a_L, e.b_L) == pytest.approx((1, 2, 1 / 3, 2 / 3))
    with pytest.raises(ValueError):
        ech.build_directed_ech(pipe(), -1, 4)


def test_membership_examples():
    gen = ech.build_general_ech(pipe(), -4, 4)
    assert ech.ech_contains(gen, 0.0, 0.0)[0]
    assert not ech.ech_contains(gen, 2.0, -4.0)[0]
    d = ech.build_directed_ech(pipe(), 0, 4)
    assert not ech.ech_contains(d, 1.0, 4.0)[0]
    assert ech.ech_contains(d, 2.0, 4.0)[0]


def test_user_caps_shrink_the_range():
    e = ech.build_general_ech(pipe(g_cap_min=-1.0, g_cap_max=1.5), -4, 4)
    assert e.g_min == pytest.approx(-1.0) and e.g_max == pytest.approx(1.5)
    g, d = ech.sample_curve(e, 2001)
    assert ech.ech_violation(e, g, d).max() <= 1e-12


def gap_oracle(w, lo, hi, s, n=400_001):
    d = np.linspace(lo, hi, n)
    gap = np.sign(d) * np.sqrt(w * np.abs(d)) - s * d
    return gap.min(), gap.max()


@settings(max_examples=60, deadline=None)
@given(
    w=st.floats(0.1, 10),
    lo=st.floats(-50, -0.01),
    hi=st.floats(0.01, 50),
)
def test_general_offsets_match_dense_gap_search(w, lo, hi):
    e = ech.build_general_ech(pipe(w), lo, hi)
    gmin, gmax = gap_oracle(w, lo, hi, e.a_U)
    scale = math.sqrt(w * max(hi, -lo))
    assert e.b_U == pytest.approx(gmax, abs=1e-5 * scale)
    assert e.b_L == pytest.approx(gmin, abs=1e-5 * scale)


@settings(max_examples=100, deadline=None)
@given(
    w=st.floats(0.1, 10),
    a=st.floats(0, 100),
    b=st.floats(0, 100),
    c=st.floats(0, 100),
    d=st.floats(0, 100),
)
def test_curve_lies_inside_generated_set(w, a, b, c, d):
    bi, bj = (min(a, b), max(a, b)), (min(c, d), max(c, d))
    if bi[1] - bj[0] <= 0 or (bi[1] - bj[0]) - (bi[0] - bj[1]) <= 1e-9:
        return
    e = ech.build_ech(pipe(w), {"i": bi, "j": bj})
    g, dpi = ech.sample_curve(e, 10_000)
    assert ech.ech_violation(e, g, dpi).max() <= ech.CONTAINMENT_TOL


def test_directed_set_is_the_convex_hull():
    # points just outside the chord / cap are rejected, curve points are on the boundary
    e = ech.build_directed_ech(pipe(2.0), 1, 9)
    g, d = ech.sample_curve(e, 101)
    assert np.all(ech.ech_violation(e, g + 1e-6, d) > 0)
    mid = 0.5 * (d[0] + d[-1])
    chord = e.a_L * mid + e.b_L
    assert ech.ech_contains(e, chord, mid)[0]
    assert not ech.ech_contains(e, chord - 1e-6, mid)[0]
