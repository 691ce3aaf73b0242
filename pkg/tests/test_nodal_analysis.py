import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from skimage import measure

from randnodal.model_ensembles import (
    RandomSection,
    build_basis,
    draw_section,
    eval_section,
)
from randnodal.nodal_analysis import (
    EnsembleConfig,
    DegenerateFractionError,
    ResolutionError,
    analyze_section,
    count_zeros_circle,
    critical_points_on_nodal,
    default_morse,
    extract_nodal_components,
    extract_nodal_components_torus,
    kac_rice_circle_mean,
    critical_value_gaps,
    restricted_hessian,
    run_trials,
    surface_grid,
    summarize_trials,
    trial_section,
)


def _section(manifold, L, terms):
    """Section with the given (freq, kind) -> value; values are in function units."""
    b = build_basis(manifold, L)
    c = np.zeros(b.dim)
    for (freq, kind), v in terms.items():
        hit = np.flatnonzero(np.all(b.freq == np.array(freq), axis=1) & (b.kind == kind))
        assert hit.size == 1
        c[hit[0]] = v / b.amplitude[hit[0]]
    return RandomSection(b, c)


# ---------------------------------------------------------------- circle


def _brute_zero_count(section, M=200_000):
    t = 2 * math.pi * np.arange(M) / M
    s = eval_section(section, t[:, None])
    return int(np.count_nonzero(np.sign(s) != np.sign(np.roll(s, -1))))


@pytest.mark.parametrize("seed", range(6))
def test_circle_count_matches_brute_force(seed):
    s = draw_section(build_basis("circle", 900), seed)
    assert count_zeros_circle(s).n_zeros == _brute_zero_count(s)


@pytest.mark.parametrize("k", [1, 7, 40])
def test_pure_circle_mode_has_2k_zeros(k):
    b = build_basis("circle", k * k, pure=True)
    for seed in range(5):
        out = count_zeros_circle(draw_section(b, seed))
        assert out.n_zeros == 2 * k and not out.degenerate


@settings(max_examples=30)
@given(st.integers(0, 2 ** 32 - 1), st.sampled_from([10, 100, 1000]))
def test_circle_count_is_even(seed, L):
    out = count_zeros_circle(draw_section(build_basis("circle", L), seed))
    assert out.n_zeros % 2 == 0


def test_kac_rice_circle_mean_small_cases():
    # L = 1: s = a + b cos + c sin with Var s' / Var s = 1 / 1.5
    assert kac_rice_circle_mean(1) == pytest.approx(2 * math.sqrt(1 / 1.5))
    # finite-K correction is O(1/K)
    assert kac_rice_circle_mean(10000) / 100 == pytest.approx(2 / math.sqrt(3), rel=1e-2)


def test_circle_mean_matches_kac_rice():
    cfg = EnsembleConfig("circle", 100)
    res = run_trials(cfg, 1500, seed=4)
    st_ = summarize_trials(res, "n_zeros")
    assert abs(st_.mean - kac_rice_circle_mean(100)) < 4 * st_.stderr


# ---------------------------------------------------------------- surfaces


def test_torus_components_of_separable_section():
    # cos 3t + 0.3 cos f = 0: six closed curves, each wrapping in f
    s = _section("torus2", 9, {((3, 0), 1): 1.0, ((0, 1), 1): 0.3})
    _, b0 = extract_nodal_components_torus(s)
    assert b0 == 6


@pytest.mark.parametrize("k", [1, 2, 5])
def test_torus_pure_cosine_components(k):
    s = _section("torus2", k * k, {((k, 0), 1): 1.0})
    assert extract_nodal_components(s).b0 == 2 * k


def test_torus_contractible_components():
    # cos t + cos f = 0.0 is a square grid of lines; shift the level to get
    # closed ovals: cos t + cos f + c = 0 with a constant term
    s = _section("torus2", 1, {((1, 0), 1): 1.0, ((0, 1), 1): 1.0, ((0, 0), 0): 1.2})
    assert extract_nodal_components(s).b0 == 1
    s = _section("torus2", 4, {((2, 0), 1): 1.0, ((0, 2), 1): 1.0, ((0, 0), 0): 1.2})
    assert extract_nodal_components(s).b0 == 4


def _oracle_torus_crit(s, M=700, pad=0.6):
    """(minima, maxima) of p on s = 0 in the fundamental domain.

    Independent route: skimage contours on a padded fine grid, with
    D = s_t p_f - s_f p_t evaluated exactly at the contour vertices.  Each sign
    change of D along a contour is a critical point; p a few vertices either
    side says whether it is a minimum or a maximum.
    """
    x = np.linspace(-pad, 2 * math.pi + pad, M)
    T, P = np.meshgrid(x, x, indexing="ij")
    V = eval_section(s, np.stack([T.ravel(), P.ravel()], 1)).reshape(M, M)
    h = x[1] - x[0]
    morse = default_morse("torus2")
    n_min = n_max = 0
    for c in measure.find_contours(V, 0.0):
        pts = x[0] + h * c
        closed = np.allclose(c[0], c[-1])
        if closed:
            pts = pts[:-1]
        gp = morse.grad(pts)
        D = eval_section(s, pts, "t") * gp[:, 1] - eval_section(s, pts, "p") * gp[:, 0]
        p = morse.value(pts)
        k = len(pts)
        nxt = np.arange(k) + 1
        if closed:
            nxt %= k
        else:
            nxt = nxt[:-1]
        i = np.flatnonzero((D[: len(nxt)] > 0) != (D[nxt] > 0))
        for j in i:
            mid = 0.5 * (pts[j] + pts[nxt[j]])
            # generic offset so a critical point on the chart seam is counted once
            if not np.all((mid >= 0.3) & (mid < 0.3 + 2 * math.pi)):
                continue
            w = 4
            lo, hi = j - w, nxt[j] + w
            if closed:
                lo, hi = lo % k, hi % k
            elif lo < 0 or hi >= k:
                continue
            pm = 0.5 * (p[j] + p[nxt[j]])
            if p[lo] > pm and p[hi] > pm:
                n_min += 1
            elif p[lo] < pm and p[hi] < pm:
                n_max += 1
            else:
                raise AssertionError("ambiguous critical point in the oracle")
    return n_min, n_max


@pytest.mark.parametrize("seed", range(4))
def test_torus_critical_points_against_contour_oracle(seed):
    s = draw_section(build_basis("torus2", 40), seed)
    out = analyze_section(s, default_morse("torus2"))
    assert not out.degenerate
    assert (out.crit0, out.crit1) == _oracle_torus_crit(s)


def test_separable_section_critical_points_by_hand():
    # on cos 3t + 0.3 cos f = 0 each of the six branches t(f) is a graph over f;
    # p = cos t + cos f / 2 has exactly one min and one max on each
    s = _section("torus2", 9, {((3, 0), 1): 1.0, ((0, 1), 1): 0.3})
    out = analyze_section(s, default_morse("torus2"))
    assert out.b0 == 6
    assert (out.crit0, out.crit1) == _oracle_torus_crit(s)
    assert out.crit0 == out.crit1 >= 6


@pytest.mark.parametrize("manifold,L", [("torus2", 120), ("sphere2", 110)])
def test_surface_invariants(manifold, L):
    cfg = EnsembleConfig(manifold, L)
    for i in range(4):
        out = analyze_section(trial_section(cfg, 3, i))
        if out.degenerate:
            continue
        assert out.crit0 == out.crit1
        assert out.b0 <= out.crit0
        assert out.excluded0 <= out.crit0 and out.excluded1 <= out.crit1


def test_counts_stable_under_grid_refinement():
    # trial 0 has a saddle of s at level -0.007 a third of a cell from a grid line
    cfg = EnsembleConfig("torus2", 150)
    for i in range(3):
        s = trial_section(cfg, 8, i)
        a = analyze_section(s, cells_per_wavelength=12)
        b = analyze_section(s, cells_per_wavelength=36)
        assert (a.b0, a.crit0, a.crit1) == (b.b0, b.crit0, b.crit1)


def test_counts_agree_across_resolutions_at_larger_L():
    cfg = EnsembleConfig("torus2", 400)
    agree = 0
    for i in range(6):
        s = trial_section(cfg, 3, i)
        a = analyze_section(s, cells_per_wavelength=12)
        b = analyze_section(s, cells_per_wavelength=48)
        agree += (a.b0, a.crit0, a.crit1) == (b.b0, b.crit0, b.crit1)
    assert agree >= 5


def test_near_zero_saddle_is_snapped():
    s = trial_section(EnsembleConfig("torus2", 150), 8, 0)
    gaps = critical_value_gaps(s, 12)
    assert gaps.min() < 0.5
    g = surface_grid(s, 12)
    assert g.snapped >= 1 and g.conflicts == 0
    plain = extract_nodal_components(s, 12, surface_grid(s, 12, snap_factor=0.0)).b0
    fine = extract_nodal_components(s, 96).b0
    assert extract_nodal_components(s, 12, g).b0 == fine != plain


@pytest.mark.parametrize("manifold,L", [("circle", 400), ("torus2", 100), ("sphere2", 90)])
def test_coefficient_scaling_invariance(manifold, L):
    for i in range(3):
        base = trial_section(EnsembleConfig(manifold, L), 2, i)
        for f in (1e-6, 3.7, 1e5):
            a = analyze_section(base)
            b = analyze_section(base.scaled(f))
            assert (a.n_zeros, a.b0, a.crit0, a.crit1, a.degenerate) == \
                   (b.n_zeros, b.b0, b.crit0, b.crit1, b.degenerate)


def _strip_time(rows):
    return [{k: v for k, v in r.as_row().items() if k != "seconds"} for r in rows]


@pytest.mark.parametrize("manifold,L", [("circle", 300), ("torus2", 60)])
def test_worker_count_determinism(manifold, L):
    cfg = EnsembleConfig(manifold, L)
    a = run_trials(cfg, 20, seed=5, workers=1, chunk=3)
    b = run_trials(cfg, 20, seed=5, workers=3, chunk=7)
    assert _strip_time(a) == _strip_time(b)


def test_trial_streams_are_independent_of_order():
    cfg = EnsembleConfig("torus2", 50)
    assert np.array_equal(trial_section(cfg, 1, 7).coeffs, trial_section(cfg, 1, 7).coeffs)
    assert not np.array_equal(trial_section(cfg, 1, 7).coeffs, trial_section(cfg, 1, 8).coeffs)


def test_restricted_hessian_by_hand():
    # s = y (the curve is the x-axis), p = x^2 at x = 0: minimum, index 0
    jet = np.array([[0.0], [0.0], [1.0], [0.0], [0.0], [0.0]])
    gp = np.array([[0.0, 0.0]])
    hp = np.array([[[2.0, 0.0], [0.0, 0.0]]])
    R, _ = restricted_hessian(jet, gp, hp)
    assert R[0] > 0
    # s = y - x^2 and p = y: p|curve = x^2, min; with dp = lam ds, lam = 1
    jet = np.array([[0.0], [0.0], [1.0], [-2.0], [0.0], [0.0]])
    gp = np.array([[0.0, 1.0]])
    hp = np.zeros((1, 2, 2))
    R, _ = restricted_hessian(jet, gp, hp)
    assert R[0] > 0


def test_default_morse_shift_and_exclusion():
    m = default_morse("torus2", shift=(0.5, 1.0))
    assert m.distance_to_critical([[0.5, 1.0]])[0] == pytest.approx(0.0)
    assert m.distance_to_critical([[0.5 + 2 * math.pi - 0.01, 1.0]])[0] == pytest.approx(0.01)
    with pytest.raises(ValueError):
        default_morse("sphere2", shift=(0.1, 0.0))
    with pytest.raises(ValueError):
        default_morse("circle")


def test_resolution_error():
    s = draw_section(build_basis("torus2", 50), 0)
    with pytest.raises(ResolutionError):
        analyze_section(s, cells_per_wavelength=4)
    with pytest.raises(ResolutionError):
        count_zeros_circle(draw_section(build_basis("circle", 50), 0), cells_per_wavelength=2)


def test_degenerate_fraction_error(monkeypatch):
    import randnodal.nodal_analysis as na

    real = na.analyze_section

    def flaky(section, *args, trial_id=0, **kw):
        out = real(section, *args, trial_id=trial_id, **kw)
        if trial_id % 2:
            out.degenerate, out.reasons = True, ("forced",)
        return out

    monkeypatch.setattr(na, "analyze_section", flaky)
    cfg = EnsembleConfig("circle", 50)
    with pytest.raises(DegenerateFractionError):
        run_trials(cfg, 6, seed=0)
    out = run_trials(cfg, 6, seed=0, max_degenerate_fraction=0.5)
    assert [r.degenerate for r in out] == [False, True] * 3
    assert summarize_trials(out, "n_zeros").n_clean == 3


def test_run_trials_validation():
    with pytest.raises(ValueError):
        run_trials(EnsembleConfig("circle", 10), 0, seed=0)


def test_sphere_critical_points_indices():
    s = draw_section(build_basis("sphere2", 72), 11)
    cps, curve = critical_points_on_nodal(s, default_morse("sphere2"))
    assert not cps.reasons
    assert np.all(np.isin(cps.index, [0, 1]))
    assert np.all(cps.points[:, 0] >= 0) and np.all(cps.points[:, 0] <= math.pi)
    # each component carries matched minima and maxima of the height
    for c in range(curve.b0):
        sel = cps.component == c
        assert (cps.index[sel] == 0).sum() == (cps.index[sel] == 1).sum() >= 1
