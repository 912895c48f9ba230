import math

import numpy as np
import pytest

from genflow.epsilon import ScalingLaw, make_epsilon_net
from genflow.errors import ConfigurationError, UsageError
from genflow.fields import (
    base_grid, check_bounded_derivative, check_global_bound, check_linear_growth,
    check_logtype_derivative, custom_field, linear_field, marsden_field, marsden_zero_set,
    quadratic_field, torus_field, zero_field,
)
from genflow.manifold import Space
from genflow.mollifier import build_bump

NET = make_epsilon_net(1e-2, 1e-8, 7)
HALF_PI = math.pi / 2
RHO_SUP = 0.8285688398691  # [DERIVED] frozen in test_mollifier
ULP_MARGIN = 1e-13
LINE = np.linspace(-10, 10, 201)[:, None]


# -- scenario field values ---------------------------------------------------------------


@pytest.mark.parametrize("case", ["a", "b", "c"])
def test_marsden_examples(case):
    f = marsden_field(case, NET)
    assert f(1e-6, [0.0])[0] == 1.0
    assert f(1e-6, [math.pi])[0] == 0.0


def test_marsden_symmetric_half_at_layer_center():
    # H(π) - H(0) = 1 - 1/2 for the symmetric kernel
    assert marsden_field("a", NET)(1e-6, [HALF_PI])[0] == pytest.approx(0.5, abs=1e-13)


@pytest.mark.parametrize("case", ["a", "b", "c"])
def test_marsden_plateaus_are_exact(case):
    f = marsden_field(case, NET)
    for eps in NET:
        s = NET.sigma(eps) + ULP_MARGIN  # a boundary computed in floats may land an ulp inside
        inner = np.linspace(-HALF_PI + s, HALF_PI - s, 301)
        outer = np.concatenate([np.linspace(HALF_PI + s, math.pi, 101), np.linspace(-math.pi, -HALF_PI - s, 101)])
        assert all(f(eps, [a])[0] == 1.0 for a in inner)
        assert all(f(eps, [a])[0] == 0.0 for a in outer)
        allv = np.array([f(eps, [a])[0] for a in np.linspace(-4, 4, 2001)])
        assert np.all((allv >= 0) & (allv <= 1))


def test_marsden_even_symmetry_symmetric_case():
    f = marsden_field("a", NET)
    for eps in NET:
        for a in np.linspace(0, math.pi, 401):
            assert f(eps, [-a])[0] == pytest.approx(f(eps, [a])[0], abs=1e-14)


def test_marsden_periodic_in_cover():
    f = marsden_field("a", NET)
    for a in np.linspace(-3, 3, 31):
        assert f(1e-4, [a + 2 * math.pi])[0] == pytest.approx(f(1e-4, [a])[0], abs=1e-12)


@pytest.mark.parametrize("case", ["a", "b", "c"])
def test_marsden_zero_set(case):
    f = marsden_field(case, NET)
    s = NET.sigma(1e-6)
    lo, hi = marsden_zero_set(case, s)
    assert f(1e-6, [lo + ULP_MARGIN])[0] == 0.0 and f(1e-6, [hi - ULP_MARGIN])[0] == 0.0
    assert abs(f(1e-6, [lo])[0]) < 1e-200 and abs(f(1e-6, [hi])[0]) < 1e-200
    assert f(1e-6, [lo - 0.5 * s])[0] > 0
    if case == "a":
        assert (lo, hi) == pytest.approx((HALF_PI + s, 3 * HALF_PI - s), abs=1e-15)


def test_overlap_preconditions():
    wide = make_epsilon_net(0.6, 1e-3, 4)  # σ(0.6) ≈ 1.96 > π/2
    with pytest.raises(ConfigurationError):
        marsden_field("a", wide)
    with pytest.raises(ConfigurationError):
        torus_field("a", make_epsilon_net(0.8, 1e-3, 4))  # σ(0.8) ≈ 4.48 > π


def test_torus_examples():
    f = torus_field("a", NET)
    for eps in NET:
        s = NET.sigma(eps)
        for a in (s, -s, 1.5 * s, 2.0, -3.0):
            assert list(f(eps, [a, 0.3])) == [1.0, 1.0]
        assert f(eps, [0.0, 0.0])[1] == pytest.approx(1 - build_bump("a")(0.0) / s, rel=1e-14)
        for b in np.linspace(-3, 3, 13):
            assert np.array_equal(f(eps, [0.2 * s, b]), f(eps, [0.2 * s, 0.0]))


def test_tangent_wraps_base():
    t = marsden_field("a", NET).tangent(1e-4, [3 * math.pi])
    assert t.base[0] == pytest.approx(math.pi) and t.components[0] == 0.0


@pytest.mark.parametrize("kind", ["marsden", "torus"])
def test_bound_and_array_paths_agree(kind):
    f = marsden_field("a", NET) if kind == "marsden" else torus_field("a", NET)
    rng = np.random.default_rng(2)
    for eps in NET:
        r, j = f.bound(eps)
        s = NET.sigma(eps)
        for _ in range(50):
            y = np.zeros(f.space.n)
            y[0] = rng.choice(f.layer_list(eps)[0].centers) + rng.uniform(-1.2, 1.2) * s
            assert np.allclose(r(list(y)), f(eps, y), rtol=1e-13, atol=1e-13)
            assert np.allclose(j(list(y)), f.derivative(eps, y), rtol=1e-13, atol=1e-13)


# -- derivative consistency ----------------------------------------------------------------

FIELDS = [("marsden", c) for c in "abc"] + [("torus", c) for c in "abc"]


def _layer_samples(kind, case, rng, count=1000):
    """(field, eps, point) inside the layers, on the interior of the kernel support."""
    f = (marsden_field if kind == "marsden" else torus_field)(case, NET)
    lo, hi = build_bump(case).support
    out = []
    for _ in range(count):
        eps = NET.values[rng.integers(len(NET.values))]
        s = NET.sigma(eps)
        v = rng.uniform(-0.75, 0.75)
        if kind == "torus" and abs(v) < 0.05:
            v = math.copysign(0.05, v)  # the kernel derivative vanishes at its peak
        y = np.zeros(f.space.n)
        y[0] = rng.choice(f.layer_list(eps)[0].centers) + s * ((lo + hi) / 2 + v * (hi - lo) / 2)
        if f.space.n == 2:
            y[1] = rng.uniform(-3, 3)
        out.append((f, eps, y))
    return out


def _central(f, eps, y, h, levels=1):
    d = np.zeros(f.space.n)
    d[0] = 1.0
    T = [(f(eps, y + d * h / 2**j) - f(eps, y - d * h / 2**j)) / (2 * h / 2**j) for j in range(levels)]
    for m in range(1, levels):
        T = [(4**m * T[j + 1] - T[j]) / (4**m - 1) for j in range(len(T) - 1)]
    return T[0]


def _worst_rel(kind, case, levels):
    worst = 0.0
    for f, eps, y in _layer_samples(kind, case, np.random.default_rng(17)):
        an = f.derivative(eps, y)[:, 0]
        fd = _central(f, eps, y, NET.sigma(eps) / 100, levels)
        worst = max(worst, float(np.max(np.abs(fd - an)) / np.max(np.abs(an))))
    return worst


@pytest.mark.xfail(strict=True, reason="central-difference truncation at step σ/100 is 1e-4..2e-3 "
                                      "relative on these kernels; see ledger")
@pytest.mark.parametrize("kind, case", FIELDS)
def test_derivative_consistency_literal(kind, case):
    assert _worst_rel(kind, case, levels=1) <= 1e-5


@pytest.mark.parametrize("kind, case", FIELDS)
def test_derivative_consistency_extrapolated(kind, case):
    # same samples and starting step, three-level Richardson table (order 6)
    assert _worst_rel(kind, case, levels=3) <= 1e-5


def test_beta_column_of_torus_jacobian_is_zero():
    f = torus_field("a", NET)
    for _, eps, y in _layer_samples("torus", "a", np.random.default_rng(1), 50):
        assert np.all(f.derivative(eps, y)[:, 1] == 0)


# -- conditions ------------------------------------------------------------------------


def test_linear_growth_examples():
    r = check_linear_growth(linear_field(NET), LINE)
    assert r.verdict == "holds" and r.constant < 1 and r.growth.kind == "bounded"
    r = check_linear_growth(quadratic_field(NET), LINE)
    assert r.verdict == "fails"
    assert r.details["radial_exponent"] > 1.05
    r = check_linear_growth(zero_field(Space.euclidean(1), NET), LINE)
    assert r.verdict == "holds" and r.constant == 0.0


def test_linear_growth_rejects_compact_space():
    with pytest.raises(UsageError):
        check_linear_growth(marsden_field("a", NET), 64)
    with pytest.raises(ConfigurationError):
        check_linear_growth(linear_field(NET), np.zeros((3, 1)))


def test_global_bound_examples():
    r = check_global_bound(marsden_field("a", NET), 256)
    assert r.verdict == "holds" and r.constant <= 1.0
    r = check_global_bound(torus_field("a", NET), 48)
    assert r.verdict == "fails" and r.growth.kind == "log-type"
    # second component peaks at ‖ρ‖∞|ln ε| - 1
    assert r.witness[2] == pytest.approx(math.hypot(1, RHO_SUP * abs(math.log(NET.eps_min)) - 1), rel=1e-9)
    r = check_global_bound(zero_field(Space.circle(), NET), 64)
    assert r.verdict == "holds" and r.constant == 0.0


def test_logtype_examples():
    r = check_logtype_derivative(marsden_field("a", NET), 256)
    assert r.verdict == "holds" and r.growth.kind == "log-type"
    assert r.constant == pytest.approx(RHO_SUP, rel=0.05)
    assert r.growth.residual < 0.05
    r = check_logtype_derivative(zero_field(Space.torus2(), NET), 16)
    assert r.verdict == "holds" and r.growth.kind == "bounded" and r.constant == 0.0


def test_logtype_fails_for_linear_scaling():
    net = make_epsilon_net(1e-2, 1e-8, 7, ScalingLaw.power(1.0))
    r = check_logtype_derivative(marsden_field("a", net), 256)
    assert r.verdict == "fails"
    assert r.growth.kind == "power" and r.growth.exponent == pytest.approx(1.0, abs=0.05)


def test_bounded_derivative_fails_for_marsden():
    assert check_bounded_derivative(marsden_field("a", NET), 256).verdict == "fails"
    assert check_bounded_derivative(linear_field(NET), LINE).verdict == "holds"


def test_grid_resolution_enforced_without_layers():
    f = custom_field(Space.circle(), NET, lambda e, y: np.zeros(1), lambda e, y: np.zeros((1, 1)),
                     needs_resolution=True)
    with pytest.raises(ConfigurationError, match="grid spacing"):
        check_global_bound(f, 64)


def test_report_serialization():
    d = check_global_bound(marsden_field("a", NET), 64).to_dict()
    for key in ("condition", "verdict", "constant", "growth", "witness", "admissible"):
        assert key in d


def test_base_grid_shapes():
    assert base_grid(Space.torus2(), 5).shape == (25, 2)
    assert base_grid(Space.circle(), 4)[:, 0] == pytest.approx([-HALF_PI, 0, HALF_PI, math.pi])
    with pytest.raises(UsageError):
        base_grid(Space.euclidean(1), 4)
