import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wavenvelope.torus import GridSpec, lp_norm, random_band_field, synthesize
from wavenvelope.geometry import cap_index_for_abscissa
from wavenvelope import schrodinger as sch


# ---------------------------------------------------------------------------
# time cutoff and multiplier profiles

def test_eta_values():
    assert sch.eta(0.0) == 1.0
    assert sch.eta(-1.0) == sch.eta(1.0)
    t = np.linspace(-1.0, 1.0, 201)
    assert np.min(sch.eta(t)) > 0.91
    assert np.all(sch.eta(np.linspace(-50, 50, 999)) >= 0.0)


def test_eta_transform_matches_triangle():
    # independent oracle: trapezoid quadrature of the defining integral
    t = np.linspace(-3000.0, 3000.0, 600001)
    for w in (0.0, 0.3, 0.9, 1.2, 2.0):
        numeric = np.trapezoid(sch.eta(t) * np.exp(-1j * w * t), t)
        assert abs(numeric - sch.eta_hat(w)) < 3e-3
    assert sch.eta_hat(1.0) == 0.0
    assert sch.eta_hat(0.0) == 2.0 * np.pi


def test_bump_and_ring_profiles():
    assert sch.smooth_bump(0.625, 0.25, 1.0) == 1.0
    assert sch.smooth_bump(0.25, 0.25, 1.0) == 0.0
    assert sch.smooth_bump(1.0, 0.25, 1.0) == 0.0
    u = np.linspace(-3, 3, 601)
    vals = sch.psi_ring(u)
    assert sch.psi_ring(0.0) == 1.0
    assert sch.psi_ring(2.0) == 0.0 and sch.psi_ring(-2.0) == 0.0
    assert np.all((vals >= 0.0) & (vals <= 1.0))
    assert np.all(vals[np.abs(u) >= 2.0] == 0.0)


# ---------------------------------------------------------------------------
# propagation

def test_delta_mode_is_cutoff_times_constant():
    R = 64
    prop = sch.propagate([0.0], [1.0], R, 8.0 * R, 32, np.linspace(0, R, 9))
    mod = np.abs(prop.samples)
    assert np.max(np.ptp(mod, axis=1)) == 0.0
    assert np.max(np.abs(mod[:, 0] - np.abs(sch.eta(prop.times / R)))) == 0.0


def test_single_mode_unimodular():
    R, L = 64, 512.0
    step = 2 * np.pi / L
    prop = sch.propagate([40 * step], [1.0 + 0j], R, L, 128, [0.0, 10.0, 60.0])
    target = np.abs(sch.eta(prop.times / R))[:, None]
    assert np.max(np.abs(np.abs(prop.samples) - target)) < 1e-12


def test_slices_match_direct_evaluation():
    R, L = 64, 512.0
    step = 2 * np.pi / L
    freqs = step * np.array([-50, 3, 41])
    amps = np.array([0.3 - 1j, 1.0, -0.7j])
    prop = sch.propagate(freqs, amps, R, L, 128, [5.0, 17.0])
    pts = np.column_stack([prop.x[::13], np.full(len(prop.x[::13]), 17.0)])
    direct = sch.propagator_at(freqs, amps, R, pts)
    assert np.max(np.abs(direct - prop.samples[1, ::13])) < 1e-10


def test_propagate_validations():
    R, L = 64, 512.0
    step = 2 * np.pi / L
    with pytest.raises(ValueError, match="lattice"):
        sch.propagate([0.5 * step], [1.0], R, L, 64, [0.0])
    with pytest.raises(ValueError, match=r"\[-1, 1\]"):
        sch.propagate([100 * step], [1.0], R, L, 512, [0.0])
    with pytest.raises(ValueError, match="duplicate"):
        sch.propagate([step, step], [1.0, 2.0], R, L, 64, [0.0])
    with pytest.raises(ValueError, match="alias"):
        sch.propagate([40 * step], [1.0], R, L, 80, [0.0])
    with pytest.raises(ValueError, match="mismatch"):
        sch.propagate([step], [1.0, 2.0], R, L, 64, [0.0])


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10 ** 6))
def test_unitarity_of_random_spectra(seed):
    rng = np.random.default_rng(seed)
    R, L = 64, 512.0
    step = 2 * np.pi / L
    n = rng.choice(np.arange(-81, 82), size=rng.integers(1, 24), replace=False)
    amps = rng.standard_normal(len(n)) + 1j * rng.standard_normal(len(n))
    times = rng.uniform(-R, R, size=5)
    prop = sch.propagate(n * step, amps, R, L, 192, times)
    assert prop.unitarity_defect <= 1e-10


def test_band_check_lattice_exact_and_leak():
    R, L = 64, 512.0
    step = 2 * np.pi / L
    times = np.linspace(-R, R, 256, endpoint=False)
    prop = sch.propagate(step * np.array([40, 70]), [1.0, 0.5j],
                         R, L, 256, times)
    report = sch.band_check(prop)
    assert report["lattice_outside"] == 0.0
    assert report["window_leak"] < 0.02
    assert report["band_halfwidth"] == 1.0 / R
    assert "sinc" in report["eta"]


def test_band_check_rejections():
    R, L = 64, 512.0
    step = 2 * np.pi / L
    prop = sch.propagate([40 * step], [1.0], R, L, 128,
                         np.array([0.0, 1.0, 3.0, 6.0]))
    with pytest.raises(ValueError, match="uniform"):
        sch.band_check(prop)
    coarse = sch.propagate([80 * step], [1.0], R, L, 256,
                           np.arange(32) * 4.0)
    with pytest.raises(ValueError, match="too coarse"):
        sch.band_check(coarse)


def test_slab_roundtrip_and_csv(tmp_path):
    R, L = 64, 512.0
    step = 2 * np.pi / L
    times = np.linspace(0, R, 8)
    prop = sch.propagate(step * np.array([-3, 12]), [1.0, 2j], R, L, 64, times)
    pth = tmp_path / "slab.bin"
    prop.write_slab(pth)
    R2, L2, t2, s2 = sch.read_slab(pth)
    assert R2 == R and L2 == L
    assert np.array_equal(t2, prop.times)
    assert np.array_equal(s2, prop.samples)

    cp = tmp_path / "slices.csv"
    prop.write_slices_csv(cp, t_stride=4, x_stride=16)
    lines = cp.read_text().splitlines()
    assert lines[0].startswith("# eta =")
    assert lines[1] == "t,x,re,im"
    row = lines[2].split(",")
    assert len(row) == 4
    assert float(row[0]) == prop.times[0]
    # strided rows: 2 time slices x 4 columns
    assert len(lines) - 2 == 2 * 4


# ---------------------------------------------------------------------------
# annulus multiplier

def test_apply_SR_matches_profile():
    spec = GridSpec(64)
    fld = random_band_field(spec, seed=5, band="circle")
    out = sch.apply_SR(fld)
    xi = spec.freq_step * fld.freqs.astype(float)
    dev = spec.R * (1.0 - np.hypot(xi[:, 0], xi[:, 1]))
    assert np.max(np.abs(out.amps - fld.amps * sch.psi_ring(dev))) == 0.0
    assert lp_norm(out, 2) <= 1.0000001 * lp_norm(fld, 2)


def test_apply_SR_rejects_outside_annulus():
    spec = GridSpec(64)
    # sector is right but the radius is half a unit: far from the circle
    bad = synthesize(np.array([[0, -spec.L / (4 * np.pi) // 1]], dtype=np.int64),
                     np.array([1.0 + 0j]), spec, band="free")
    with pytest.raises(ValueError, match="annulus"):
        sch.apply_SR(bad)
    up = synthesize(np.array([[0, 5]], dtype=np.int64),
                    np.array([1.0 + 0j]), spec, band="free")
    with pytest.raises(ValueError, match="sector"):
        sch.apply_SR(up)


def test_arc_caps_grouping():
    spec = GridSpec(64)
    fld = random_band_field(spec, seed=9, band="circle")
    groups = sch.arc_caps(fld)
    xi1 = spec.freq_step * fld.freqs[:, 0].astype(float)
    s = spec.R ** -0.5
    total = 0
    for k, idx in groups.items():
        assert np.all(cap_index_for_abscissa(xi1[idx], s) == k)
        total += len(idx)
    assert total == len(fld.freqs)


# ---------------------------------------------------------------------------
# maximal average along tilted tubes

def test_constant_g_averages_to_one():
    R = 64
    x, t = sch.nikodym_grid(R)
    idx, vals = sch.nikodym_max(np.ones((len(t), len(x))), R, 1.0 / R)
    assert np.max(np.abs(vals - 1.0)) == 0.0


def test_vertical_tube_witness():
    R = 64
    x, t = sch.nikodym_grid(R)
    g = np.zeros((len(t), len(x)))
    y0 = len(x) // 2 + 37
    g[:, np.abs(x - x[y0]) <= 1.0 / R + 1e-12] = 1.0
    idx, vals = sch.nikodym_max(g, R, 1.0 / R)
    assert vals[np.where(idx == y0)[0][0]] == 1.0
    assert np.max(vals) <= 1.0


def test_tilted_tube_witness():
    R = 64
    x, t = sch.nikodym_grid(R)
    dx = 1.0 / R
    g = np.zeros((len(t), len(x)))
    y0 = len(x) // 2 - 21
    w = 0.5  # on the slope lattice
    shifts = np.rint(-2.0 * t * w / dx).astype(int)
    for i, s in enumerate(shifts):
        g[i, y0 + s - 1: y0 + s + 2] = 1.0
    idx, vals = sch.nikodym_max(g, R, dx)
    assert vals[np.where(idx == y0)[0][0]] == 1.0


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10 ** 6))
def test_maximal_average_contraction_and_monotone(seed):
    rng = np.random.default_rng(seed)
    R = 16
    x, t = sch.nikodym_grid(R, x_half=3.0, n_t=9)
    g = rng.standard_normal((len(t), len(x)))
    _, a = sch.nikodym_max(g, R, 1.0 / R)
    assert np.max(a) <= np.max(np.abs(g)) + 1e-12
    _, b = sch.nikodym_max(np.abs(g) + 0.25, R, 1.0 / R)
    assert np.all(b >= a - 1e-12)
    _, c = sch.nikodym_max(3.0 * g, R, 1.0 / R)
    assert np.max(np.abs(c - 3.0 * a)) < 1e-9


def test_coarse_grid_rejected_with_resolution():
    R = 64
    with pytest.raises(ValueError, match="1/R"):
        sch.nikodym_max(np.ones((9, 400)), R, 2.0 / R)


def test_maximal_ratio_slopes_stay_flat():
    for q in (2, 4):
        fit = sch.nikodym_experiment(q, [64, 256, 1024], seed=1)
        assert fit.slope <= 0.1
        assert fit.passed


# ---------------------------------------------------------------------------
# anisotropic rescaling

def test_rescale_positions_and_mass():
    pos, m = sch.unit_square_atoms(8)
    before = float(np.sum(m))
    pos_R, comps = sch.rescale_measure(pos, m, 64.0)
    assert comps == []
    assert np.array_equal(pos_R, pos * np.array([64.0, 4096.0]))
    assert float(np.sum(m)) == before


def test_delta_keeps_unit_certificate_at_every_index():
    pos, m = sch.delta_atoms()
    for alpha in (0.0, 0.7, 1.0, 1.4, 2.0):
        _, comps = sch.rescale_measure(pos, m, 256.0, alpha=alpha)
        assert comps[0]["measured"] == 1.0


def test_lebesgue_ball_mass_change_of_variables():
    pos, m = sch.unit_square_atoms(8)
    R = 4.0
    pos_R, _ = sch.rescale_measure(pos, m, R)
    for rho in (1.0, 2.0, 4.0, 8.0, 16.0, 64.0):
        direct = float(np.sum(m[np.sum(pos_R ** 2, axis=1) <= rho ** 2]))
        # preimage of the ball is the ellipse with semi-axes rho/R, rho/R^2
        ell = (pos[:, 0] / (rho / R)) ** 2 + (pos[:, 1] / (rho / R ** 2)) ** 2
        mapped = float(np.sum(m[ell <= 1.0]))
        assert direct == mapped


def test_all_families_satisfy_scale_bounds():
    for name in sch.MEASURE_FAMILIES:
        pos, m, beta, alpha, spacing = sch.measure_family(name)
        for R in (64.0, 256.0):
            _, comps = sch.rescale_measure(pos, m, R, beta=beta, alpha=alpha,
                                           spacing=spacing)
            assert len(comps) == 2
            for cmp in comps:
                assert 0.0 < cmp["ratio"] <= 8.0, (name, R, cmp)


def test_sqrt_profile_certificate_bounded_across_scales():
    pos, m, beta, alpha, spacing = sch.measure_family("sqrt-profile")
    vals = []
    for R in (64.0, 256.0):
        _, comps = sch.rescale_measure(pos, m, R, beta=beta, spacing=spacing)
        assert comps[0]["target_index"] == 1.5
        vals.append(comps[0]["measured"] * R ** 2)
    assert max(vals) <= 8.0 * max(comps[0]["base_norm"], 1.0)
    assert max(vals) / min(vals) < 8.0


def test_certificate_matches_brute_force_at_small_scale():
    # same search space (atom centers x dyadic radii), independent arithmetic
    pos, m, beta, alpha, spacing = sch.measure_family("sqrt-profile")
    R = 64.0
    pos_R, comps = sch.rescale_measure(pos, m, R, alpha=alpha, spacing=spacing)
    r_min = max(1.0, R * spacing[0], R * R * spacing[1])
    r_max = 2.0 * float(np.max(np.abs(pos_R)))
    lo = int(math.floor(math.log2(r_min)))
    hi = int(math.ceil(math.log2(r_max * (1 + 1e-9))))
    best = 0.0
    for z in pos_R:
        d2 = np.sum((pos_R - z) ** 2, axis=1)
        for e in range(lo, hi + 1):
            rho = 2.0 ** e
            mass = float(np.sum(m[d2 <= (rho * (1 + 1e-12)) ** 2]))
            best = max(best, mass * rho ** (-alpha))
    assert abs(best - comps[0]["measured"]) <= 1e-12 * best


def test_rescale_validations():
    pos, m = sch.delta_atoms()
    with pytest.raises(ValueError, match=r"\[0, 3\]"):
        sch.rescale_measure(pos, m, 64.0, beta=3.5)
    with pytest.raises(ValueError, match=r"\[0, 2\]"):
        sch.rescale_measure(pos, m, 64.0, alpha=2.5)
    with pytest.raises(ValueError, match="degenerate"):
        sch.rescale_measure(pos, 0.0 * m, 64.0, alpha=1.0)
    with pytest.raises(ValueError, match="positions"):
        sch.rescale_measure(np.zeros((2, 3)), np.ones(2), 64.0)


def test_reduction_identity_is_exact():
    step = 2 * np.pi / 512.0
    freqs = step * np.array([10, 40, 70])
    amps = np.array([1.0, 0.5j, -0.25])
    pos = np.array([[0.1, 0.2], [0.5, -0.3], [1.0, 0.7]])
    m = np.array([0.2, 0.3, 0.5])
    assert sch.reduction_identity_defect(freqs, amps, 64.0, pos, m, 3.0) == 0.0


# ---------------------------------------------------------------------------
# exponent fits

def test_fit_exponent_mechanics():
    R = [64, 256, 1024]
    ratios = [2.0 * r ** 0.25 for r in R]
    fit = sch.fit_exponent("toy", "zeta", R, ratios, prediction=0.25)
    assert abs(fit.slope - 0.25) < 1e-12
    assert fit.residual < 1e-12
    assert fit.passed
    assert sch.fit_exponent("toy", "zeta", R, ratios, 0.4, sided="lower").passed is False
    assert sch.fit_exponent("toy", "zeta", R, ratios, 0.4, sided="upper").passed is True
    with pytest.raises(ValueError, match="3 scales"):
        sch.fit_exponent("toy", "zeta", [64, 256], [1.0, 2.0], 0.0)
    with pytest.raises(ValueError, match="degenerate"):
        sch.fit_exponent("toy", "zeta", R, [1.0, 0.0, 1.0], 0.0)
    with pytest.raises(ValueError, match="sidedness"):
        sch.fit_exponent("toy", "zeta", R, ratios, 0.0, sided="both")


def test_fit_json_export(tmp_path):
    fit = sch.fit_exponent("toy", "sigma", [64, 256, 1024], [1.0, 1.1, 1.2],
                           prediction=0.0, notes="eta = test")
    pth = tmp_path / "fit.json"
    fit.write_json(pth)
    back = json.loads(pth.read_text())
    assert back["name"] == "toy" and back["exponent"] == "sigma"
    assert back["passed"] == fit.passed
    assert len(back["R_values"]) == len(back["log_ratios"]) == 3
    for key in ("slope", "residual", "prediction", "band", "sided", "notes"):
        assert key in back


# ---------------------------------------------------------------------------
# slope families (small-scale variants; the full grids run in acceptance)

def test_chirp_family_slope():
    fit = sch.fls_experiment("chirp", 3.0, R_values=(64, 256, 1024))
    assert fit.exponent == "zeta"
    assert fit.passed  # one-sided: slope >= 1/2 - 1/p - band
    assert abs(fit.slope - fit.prediction) < 0.1
    assert "eta" in fit.notes


def test_packet_family_slope_and_band():
    fit = sch.fls_experiment("packet", 4.0, alpha=1.5,
                             R_values=(64, 256, 1024))
    assert fit.prediction == pytest.approx(3.0 / 16.0)
    assert abs(fit.slope - fit.prediction) < 0.1
    lo, hi = sch.packet_band(256)
    assert 0.0 < lo <= hi
    assert hi / lo < 2.0


def test_lattice_family_slope():
    fit = sch.fls_experiment("lattice", 3.0,
                             R_values=(6 ** 6, 8 ** 6, 10 ** 6))
    assert fit.exponent == "sigma"
    assert fit.sided == "two"
    assert abs(fit.slope - (-1.0 / 6.0)) < 0.1
    assert fit.passed


def test_family_validations():
    with pytest.raises(ValueError, match="alpha"):
        sch.fls_experiment("packet", 4.0)
    with pytest.raises(ValueError, match="unknown family"):
        sch.fls_experiment("sawtooth", 4.0)
