import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from randnodal.gaussian_linalg import SingularConditioningError
from randnodal.model_ensembles import build_basis, jet_covariance
from randnodal.nodal_analysis import default_morse
from randnodal.rice_density import (
    DensityQuery,
    asymptotic_constant,
    circle_oracle_density,
    dtn_constants,
    finite_L_density,
    integrated_density,
)
from randnodal.symbol_geometry import SymbolSpec, annulus_moments, ball_moments, mc_moments


def _brute_circle_oracle(L):
    # zero density of a stationary process: sqrt(-r''(0) / r(0)) / pi
    ks = [k for k in range(0, 200) if k * k <= L]
    r0 = 1 / (2 * math.pi) + sum(1 / math.pi for k in ks if k)
    r2 = sum(k * k / math.pi for k in ks if k)
    return math.sqrt(r2 / r0) / math.pi


@pytest.mark.parametrize("L", [1, 4, 50, 400, 6400])
def test_circle_oracle_closed_form(L):
    assert circle_oracle_density(L) == pytest.approx(_brute_circle_oracle(L), rel=1e-12)


def test_circle_finite_density_matches_oracle():
    r = finite_L_density(DensityQuery(build_basis("circle", 400), (1.3,), samples=40000, seed=2))
    assert abs(r.density - circle_oracle_density(400)) < 4 * r.stderr
    assert r.jacobian == 1.0


def _oracle_torus_density(L, point, index, samples=200000, seed=11):
    """Kac-Rice by direct conditioning of the raw 2-jet, index from the bordered Hessian."""
    b = build_basis("torus2", L)
    morse = default_morse("torus2")
    C = jet_covariance(b, point).matrix
    x = np.asarray([point], float)
    (pt, pf), = morse.grad(x)
    Hp = morse.hess(x)[0]
    K = np.zeros((6, 2))
    K[0, 0] = 1.0
    K[1, 1], K[2, 1] = pf, -pt          # D = s_t p_f - s_f p_t
    S = K.T @ C @ K
    Cc = C - C @ K @ np.linalg.solve(S, K.T @ C)
    J = stats.multivariate_normal(np.zeros(6), Cc, allow_singular=True).rvs(
        samples, random_state=np.random.default_rng(seed))
    s_t, s_f, s_tt, s_tf, s_ff = J[:, 1], J[:, 2], J[:, 3], J[:, 4], J[:, 5]
    D_t = s_tt * pf + s_t * Hp[0, 1] - s_tf * pt - s_f * Hp[0, 0]
    D_f = s_tf * pf + s_t * Hp[1, 1] - s_ff * pt - s_f * Hp[0, 1]
    jac = np.abs(s_t * D_f - s_f * D_t)
    lam = (pt * s_t + pf * s_f) / (s_t ** 2 + s_f ** 2)
    Ltt, Ltf, Lff = Hp[0, 0] - lam * s_tt, Hp[0, 1] - lam * s_tf, Hp[1, 1] - lam * s_ff
    B = np.zeros((samples, 3, 3))
    B[:, 0, 1] = B[:, 1, 0] = s_t
    B[:, 0, 2] = B[:, 2, 0] = s_f
    B[:, 1, 1], B[:, 1, 2], B[:, 2, 1], B[:, 2, 2] = Ltt, Ltf, Ltf, Lff
    is_min = np.linalg.det(B) < 0
    keep = is_min if index == 0 else ~is_min
    p0 = stats.multivariate_normal(np.zeros(2), S).pdf([0.0, 0.0])
    v = jac * keep * p0
    return v.mean(), v.std(ddof=1) / math.sqrt(samples)


@pytest.mark.parametrize("index,point", [(0, (1.0, 2.0)), (1, (2.4, 0.7))])
def test_torus_density_matches_independent_oracle(index, point):
    L = 60
    r = finite_L_density(DensityQuery(build_basis("torus2", L), point, index,
                                      samples=200000, seed=4))
    m, se = _oracle_torus_density(L, point, index)
    assert abs(r.density - m) < 4 * math.hypot(r.stderr, se)


def test_density_invariant_under_coefficient_scaling():
    b = build_basis("torus2", 100)
    q = DensityQuery(b, (0.9, 2.2), 0, samples=5000, seed=3)
    a = finite_L_density(q).density
    q.scale = 7.3
    assert finite_L_density(q).density == pytest.approx(a, rel=1e-8)
    s = build_basis("sphere2", 42)
    qs = DensityQuery(s, (1.0, 0.4), 1, samples=5000, seed=3)
    a = finite_L_density(qs).density
    qs.scale = 0.01
    assert finite_L_density(qs).density == pytest.approx(a, rel=1e-8)


@settings(max_examples=15, deadline=None)
@given(st.floats(0.3, 2.8), st.floats(0.3, 2.8), st.floats(-3.0, 3.0), st.floats(-3.0, 3.0))
def test_torus_density_translation_covariant(x, y, dx, dy):
    # the ensemble is homogeneous: moving both the point and p changes nothing
    b = build_basis("torus2", 80)
    a = finite_L_density(DensityQuery(b, (x, y), 0, samples=2000, seed=1)).density
    m = default_morse("torus2", shift=(dx, dy))
    c = finite_L_density(DensityQuery(b, (x + dx, y + dy), 0, samples=2000, seed=1,
                                      morse=m)).density
    assert c == pytest.approx(a, rel=1e-8)


def test_sphere_density_metric_conversion():
    r = finite_L_density(DensityQuery(build_basis("sphere2", 30), (0.8, 1.0), 0, samples=3000))
    assert r.jacobian == pytest.approx(math.sin(0.8))
    assert r.density_metric == pytest.approx(r.density / math.sin(0.8))
    assert r.stderr_metric == pytest.approx(r.stderr / math.sin(0.8))


def test_density_errors():
    t = build_basis("torus2", 50)
    with pytest.raises(ValueError, match="within"):
        finite_L_density(DensityQuery(t, (0.01, 0.02)))
    with pytest.raises(ValueError):
        finite_L_density(DensityQuery(t, (1.0, 1.0), index=2))
    with pytest.raises(ValueError):
        finite_L_density(DensityQuery(build_basis("circle", 50), (1.0,), index=1))
    with pytest.raises(ValueError):
        finite_L_density(DensityQuery(t, (1.0,)))
    with pytest.raises(ValueError):
        finite_L_density(DensityQuery(t, (1.0, 1.0), samples=1))
    # only the constant mode: the conditioning on s = 0 is singular
    with pytest.raises(SingularConditioningError):
        finite_L_density(DensityQuery(build_basis("torus2", 0.5), (1.0, 1.0)))
    with pytest.raises(ValueError):
        integrated_density(build_basis("sphere2", 20))


def test_integrated_density_circle_expected_count():
    b = build_basis("circle", 400)
    out = integrated_density(b, grid=8, samples=20000, seed=5)
    assert abs(out["expected"] - 2 * math.pi * circle_oracle_density(400)) < \
        4 * out["stderr"] * 2 * math.pi


def test_integrated_density_torus_excludes_discs():
    out = integrated_density(build_basis("torus2", 50), grid=16, samples=500)
    r = default_morse("torus2").exclusion_radius
    assert out["area"] == pytest.approx(4 * math.pi ** 2 - 4 * math.pi * r * r)
    assert out["points"] <= 256 and out["density"] > 0


# --------------------------------------------------------------------------
# asymptotic constants


def test_asymptotic_constant_circle():
    c = asymptotic_constant(1, 0)
    assert c.value == pytest.approx(1 / (math.pi * math.sqrt(3)), rel=1e-12)
    assert c.det_value == 1.0 and c.exponent == 0.5


def test_asymptotic_constant_surface_full():
    e01 = math.sqrt(6) / (4 * math.sqrt(math.pi))
    for i in (0, 1):
        c = asymptotic_constant(2, i)
        assert c.det_value == pytest.approx(e01, rel=1e-12)
        assert c.value == pytest.approx(1 / (8 * math.pi ** 2), rel=1e-12)
        assert c.gamma == pytest.approx(1 / 6)


def test_closed_form_dimension_formula():
    # ball moments reduce the constant to E / (pi^{(n+1)/2} sqrt((n+2)(n+4)^{n-1}))
    for n in (2, 3, 4):
        c = asymptotic_constant(n, 0, det=0.8)
        want = 0.8 * math.pi ** (-(n + 1) / 2) / math.sqrt((n + 2) * (n + 4) ** (n - 1))
        assert c.value == pytest.approx(want, rel=1e-12)


def test_pure_constant():
    c = asymptotic_constant(2, 0, "pure")
    assert c.det_value == pytest.approx(1 / (2 * math.sqrt(math.pi)), rel=1e-12)
    assert c.gamma == pytest.approx(0.5)
    assert c.value == pytest.approx(1 / (4 * math.sqrt(2) * math.pi ** 2), rel=1e-12)
    assert 4 * math.pi * c.value == pytest.approx(1 / (math.pi * math.sqrt(2)), rel=1e-12)


def test_window_tends_to_pure():
    pure = asymptotic_constant(2, 0, "pure").value
    prev = None
    for g in (0.5, 0.9, 0.99, 0.999):
        v = asymptotic_constant(2, 0, "window", gamma=g).value
        if prev is not None:
            assert abs(v - pure) < abs(prev - pure)
        prev = v
    assert prev == pytest.approx(pure, rel=5e-3)


def test_constant_scaling_in_moments():
    m = ball_moments(3)
    a = asymptotic_constant(3, 1, det=0.7).value
    # a common factor on all moments drops out
    u = replace(m, c0=m.c0 * 9, c1=m.c1 * 9, c2=m.c2 * 9, c4=m.c4 * 9)
    assert asymptotic_constant(3, 1, moments=u, det=0.7).value == pytest.approx(a, rel=1e-12)
    # dilating the body by t multiplies c_k by t^{n+2k} and the constant by t^n
    t = 1.7
    big = replace(m, c0=m.c0 * t ** 3, c1=m.c1 * t ** 5, c2=m.c2 * t ** 7, c4=m.c4 * t ** 7)
    b = asymptotic_constant(3, 1, moments=big, det=0.7).value
    assert b == pytest.approx(a * t ** 3, rel=1e-12)


def test_mc_moments_accepted_for_full_family():
    m = mc_moments(SymbolSpec(2, 2.0, lambda x: (x ** 2).sum(-1)), 400000, 1)
    c = asymptotic_constant(2, 0, moments=m)
    assert c.value == pytest.approx(1 / (8 * math.pi ** 2), rel=0.02)


def test_index_symmetry_higher_dimension():
    a = asymptotic_constant(3, 0, samples=200000, seed=1)
    b = asymptotic_constant(3, 2, samples=200000, seed=2)
    assert abs(a.value - b.value) < 3 * math.hypot(a.stderr, b.stderr)
    mid = asymptotic_constant(3, 1, samples=200000, seed=3)
    assert mid.value > a.value


def test_dtn_constants():
    for n in (1, 2):
        d = dtn_constants(n)
        lap = asymptotic_constant(n, 0)
        assert d.value == pytest.approx(lap.value, rel=1e-12)
        assert d.exponent == n and lap.exponent == n / 2


def test_asymptotic_errors():
    with pytest.raises(ValueError):
        asymptotic_constant(2, 0, "cubic")
    with pytest.raises(ValueError):
        asymptotic_constant(2, 2)
    with pytest.raises(ValueError):
        asymptotic_constant(2, 0, "window")
    with pytest.raises(ValueError, match="ball"):
        asymptotic_constant(2, 0, "full", moments=annulus_moments(2, 0.5))
    with pytest.raises(ValueError):
        asymptotic_constant(3, 0, moments=ball_moments(2))
    with pytest.raises(ValueError):
        asymptotic_constant(2, 0, det=0.0)


def test_as_dict_fields():
    d = asymptotic_constant(2, 0, det=(0.35, 0.001)).as_dict()
    assert d["stderr"] > 0 and d["exponent"] == 1.0 and d["family"] == "full"
