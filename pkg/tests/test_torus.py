"""Band-limited synthesis, norms, and IO against independent oracles.

The load-bearing checks are the ones with a second computational route:
point_eval (direct trig sums) against the FFT grid, Parseval against the
grid quadrature, and the quartic norm against coefficient convolution.
"""

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from wavenvelope.torus import (
    GridSpec, TorusField, analyze, circle_band_modes, constant_field,
    grid_lp, l2sq_coeff, lp_norm, parabola_band_modes, point_eval,
    random_band_field, read_back_coeffs, read_field, read_spectrum_csv,
    synthesize, write_field, write_spectrum_csv,
)
from wavenvelope.measures import GridMeasure, constant_weight

SPEC4 = GridSpec(4)
SPEC16 = GridSpec(16)


def test_gridspec_defaults():
    assert SPEC16.L == 64.0 and SPEC16.M == 128
    assert SPEC16.delta == 0.5
    assert SPEC16.freq_step == 2.0 * math.pi / 64.0
    ax = SPEC16.axis()
    assert len(ax) == 128 and ax[1] - ax[0] == pytest.approx(0.5)


@pytest.mark.parametrize("bad", [3, 8, 2, 0, -4])
def test_gridspec_rejects_non_power_of_four(bad):
    with pytest.raises(ValueError):
        GridSpec(bad)


def test_gridspec_rejects_bad_grid():
    with pytest.raises(ValueError):
        GridSpec(16, M=100)           # not a power of two
    with pytest.raises(ValueError):
        GridSpec(16, M=64)            # quartic quadrature needs M > 5L/pi
    with pytest.raises(ValueError):
        GridSpec(16, L=8.0)           # frequency step above 2/R


def test_parabola_band_membership():
    modes = parabola_band_modes(SPEC16)
    xi = SPEC16.freq_step * modes
    assert np.all(np.abs(xi[:, 0]) <= 1 + 1e-9)
    assert np.all(np.abs(xi[:, 1] - xi[:, 0] ** 2) <= 1.0 / SPEC16.R + 1e-9)


def test_parabola_band_count_oracle():
    # brute-force double loop over a safe window
    step = SPEC4.freq_step
    n_max = int(2.0 / step) + 2
    count = 0
    for n1 in range(-n_max, n_max + 1):
        for n2 in range(-n_max, n_max + 1):
            x1, x2 = step * n1, step * n2
            if abs(x1) <= 1 + 1e-9 and abs(x2 - x1 * x1) <= 1 / SPEC4.R + 1e-9:
                count += 1
    assert len(parabola_band_modes(SPEC4)) == count


def test_circle_band_membership():
    modes = circle_band_modes(SPEC16)
    assert len(modes) > 0
    xi = SPEC16.freq_step * modes
    r = np.hypot(xi[:, 0], xi[:, 1])
    assert np.all(np.abs(1.0 - r) <= 2.0 / SPEC16.R + 1e-9)
    assert np.all(xi[:, 1] < 0)
    assert np.all(np.abs(xi[:, 0]) <= -xi[:, 1] + 1e-9)


def test_synthesize_rejections():
    with pytest.raises(ValueError, match="duplicate"):
        synthesize([[0, 0], [0, 0]], [1.0, 1.0], SPEC16)
    with pytest.raises(ValueError, match="band"):
        synthesize([[0, 40]], [1.0], SPEC16)
    with pytest.raises(ValueError, match="off-lattice"):
        synthesize(np.array([[0.5, 0.0]]), [1.0], SPEC16)


def test_point_eval_matches_fft_grid():
    f = random_band_field(SPEC16, seed=0)
    S = f.samples
    rng = np.random.default_rng(1)
    jj = rng.integers(0, SPEC16.M, size=(20, 2))
    pts = SPEC16.delta * jj.astype(float)
    direct = point_eval(f, pts)
    assert np.max(np.abs(direct - S[jj[:, 0], jj[:, 1]])) < 1e-10 * f.n_modes


def test_parseval_exact():
    f = random_band_field(SPEC16, seed=2)
    grid = grid_lp(f.samples, SPEC16.L, 2.0) ** 2
    assert grid == pytest.approx(l2sq_coeff(f), rel=1e-12)


def test_quartic_norm_by_coefficient_convolution():
    # ||f||_4^4 = L^2 sum_n |c_n|^2 where c = a * a (Fourier of f^2);
    # exact on the grid because M clears the doubled bandwidth.
    f = random_band_field(SPEC4, seed=3)
    conv = {}
    for (k1, k2), ak in zip(f.freqs, f.amps):
        for (l1, l2), al in zip(f.freqs, f.amps):
            key = (k1 + l1, k2 + l2)
            conv[key] = conv.get(key, 0.0) + ak * al
    oracle = SPEC4.L ** 2 * sum(abs(c) ** 2 for c in conv.values())
    assert lp_norm(f, 4.0) ** 4 == pytest.approx(oracle, rel=1e-11)


def test_lp_norm_p_range():
    f = constant_field(SPEC4)
    with pytest.raises(ValueError):
        lp_norm(f, 1.5)
    with pytest.raises(ValueError):
        lp_norm(f, 5.0)


def test_weighted_norm_is_atomic_sum():
    f = random_band_field(SPEC4, seed=4)
    rng = np.random.default_rng(5)
    ij = np.unique(rng.integers(0, SPEC4.M, size=(12, 2)), axis=0)
    mass = rng.uniform(0.1, 1.0, size=len(ij))
    mu = GridMeasure(SPEC4, ij, mass)
    vals = point_eval(f, SPEC4.delta * mu.ij.astype(float))
    oracle = float(np.sum(np.asarray(mu.mass) * np.abs(vals) ** 3)) ** (1 / 3)
    assert lp_norm(f, 3.0, measure=mu) == pytest.approx(oracle, rel=1e-12)


def test_constant_weight_norm_factorizes():
    f = random_band_field(SPEC4, seed=6)
    w = constant_weight(SPEC4, lam=0.25)
    for p in (2.0, 4.0):
        assert lp_norm(f, p, measure=w) == \
            pytest.approx(0.25 ** (1 / p) * lp_norm(f, p), rel=1e-12)


def test_norm_homogeneity():
    f = random_band_field(SPEC4, seed=7)
    g = f.scaled(3.0 - 4.0j)
    for p in (2.0, 3.0, 4.0):
        assert lp_norm(g, p) == pytest.approx(5.0 * lp_norm(f, p), rel=1e-12)


def test_read_back_coeffs_identity():
    f = random_band_field(SPEC16, seed=8)
    assert np.max(np.abs(read_back_coeffs(f) - f.amps)) < 1e-12


def test_analyze_inverts_synthesize():
    f = random_band_field(SPEC4, seed=9)
    freqs, amps = analyze(f.samples, SPEC4)
    assert np.array_equal(freqs, f.freqs)
    assert np.max(np.abs(amps - f.amps)) < 1e-12


def test_analyze_zero_field():
    freqs, amps = analyze(np.zeros((SPEC4.M, SPEC4.M), dtype=complex), SPEC4)
    assert len(freqs) == 0 and len(amps) == 0


def test_binary_roundtrip(tmp_path):
    f = random_band_field(SPEC4, seed=10)
    path = tmp_path / "field.bin"
    write_field(f, path)
    spec, samples, n_modes = read_field(path)
    assert spec == SPEC4 and n_modes == f.n_modes
    assert np.array_equal(samples, f.samples)
    # header is 32 bytes, payload M^2 c16
    assert path.stat().st_size == 32 + 16 * SPEC4.M ** 2


def test_spectrum_csv_roundtrip(tmp_path):
    f = random_band_field(SPEC4, seed=11)
    path = tmp_path / "spec.csv"
    write_spectrum_csv(f, path)
    g = read_spectrum_csv(path, SPEC4)
    assert np.array_equal(g.freqs, f.freqs)
    assert np.array_equal(g.amps, f.amps)  # %.17g round-trips doubles


def test_random_field_determinism():
    a = random_band_field(SPEC16, seed=42)
    b = random_band_field(SPEC16, seed=42)
    c = random_band_field(SPEC16, seed=43)
    assert np.array_equal(a.amps, b.amps)
    assert not np.array_equal(a.amps, c.amps)


def test_density_thins_modes():
    full = random_band_field(SPEC16, seed=1)
    thin = random_band_field(SPEC16, seed=1, density=0.3)
    assert 0 < thin.n_modes < full.n_modes


def test_samples_on_finer_grid_consistent():
    f = random_band_field(SPEC4, seed=12)
    coarse = f.samples
    fine = f.samples_on(2 * SPEC4.M)
    assert np.max(np.abs(fine[::2, ::2] - coarse)) < 1e-12


BAND4 = parabola_band_modes(SPEC4)


@settings(max_examples=25, deadline=None)
@given(st.data())
def test_synthesis_analyze_roundtrip_property(data):
    n = data.draw(st.integers(1, min(8, len(BAND4))))
    idx = data.draw(st.permutations(range(len(BAND4))))[:n]
    # magnitudes bounded away from 0 so analyze's relative cut keeps them
    mag = data.draw(st.lists(st.floats(0.1, 2.0), min_size=n, max_size=n))
    ph = data.draw(st.lists(st.floats(0, 6.28), min_size=n, max_size=n))
    amps = np.asarray(mag) * np.exp(1j * np.asarray(ph))
    f = synthesize(BAND4[list(idx)], amps, SPEC4)
    freqs, back = analyze(f.samples, SPEC4, tol=1e-9)
    lookup = {tuple(fr): a for fr, a in zip(freqs, back)}
    for fr, a in zip(f.freqs, f.amps):
        assert abs(lookup.get(tuple(fr), 0.0) - a) < 1e-9 * max(1, abs(a))
