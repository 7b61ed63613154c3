"""Band-limited fields on a periodic square with exact L^p quadrature.

The continuum statements live on R^2; here every function is an honest
trigonometric polynomial on the torus [0,L)^2.  Frequencies sit on the
lattice (2pi/L)Z^2 and samples on an M x M grid of spacing Delta = L/M.
With the default oversampling (M = 8R = 2L) grid sums of |f|^2 and |f|^4
are exact integrals, which is what makes the downstream inequality
comparisons trustworthy: any discrepancy we see is in the mathematics
being tested, not in the quadrature.

Conventions used throughout the package:
  * samples[j1, j2] = f(Delta * (j1, j2)), first axis is x1;
  * a mode is an integer lattice point n, its frequency is (2pi/L) * n;
  * all FFTs run single threaded (workers=1) so runs are bit reproducible.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np
from scipy.fft import fft2, ifft2

TWO_PI = 2.0 * np.pi

# relative slack for band membership of lattice frequencies (pure float noise)
_BAND_TOL = 1e-9


def _is_pow2(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


def is_power_of_four(n: int) -> bool:
    return _is_pow2(n) and (n.bit_length() - 1) % 2 == 0


@dataclass(frozen=True)
class GridSpec:
    """Discretization parameters: scale R, period L, samples per side M.

    Defaults L = 4R (envelopes of dimensions up to R x R fit with margin)
    and M = 8R.  M > 5L/pi guarantees that grid sums of fourth powers of
    admissible band-limited fields are exact, see lp_norm.
    """

    R: int
    L: float = 0.0  # 0 means "use the default 4R"
    M: int = 0      # 0 means "use the default 8R"

    def __post_init__(self):
        if not isinstance(self.R, int) or not is_power_of_four(self.R) or self.R < 4:
            raise ValueError(f"R must be a power of 4, >= 4; got {self.R!r}")
        if self.L == 0.0:
            object.__setattr__(self, "L", float(4 * self.R))
        if self.M == 0:
            object.__setattr__(self, "M", 8 * self.R)
        object.__setattr__(self, "L", float(self.L))
        if self.L <= 0:
            raise ValueError("period L must be positive")
        if not _is_pow2(self.M):
            raise ValueError(f"M must be a power of 2, got {self.M}")
        # one frequency column per theta needs lattice spacing <= 2/R: a
        # window of length 2/R then always contains a lattice point
        if TWO_PI / self.L > 2.0 / self.R + 1e-12:
            raise ValueError(
                f"frequency spacing 2pi/L = {TWO_PI / self.L:.3g} exceeds 2/R; "
                f"increase L (default 4R)")
        if self.M <= 5.0 * self.L / np.pi:
            raise ValueError(
                f"M = {self.M} too small for exact quartic quadrature; "
                f"need M > 5L/pi = {5.0 * self.L / np.pi:.1f}")

    @property
    def delta(self) -> float:
        return self.L / self.M

    @property
    def freq_step(self) -> float:
        return TWO_PI / self.L

    def axis(self, m: int | None = None) -> np.ndarray:
        """Sample coordinates along one axis, spacing L/m."""
        m = self.M if m is None else m
        return (self.L / m) * np.arange(m)

    @property
    def samples_nbytes(self) -> int:
        return 16 * self.M * self.M


def parabola_band_modes(spec: GridSpec) -> np.ndarray:
    """All lattice modes n with (2pi/L)n inside N_{1/R} of the parabola.

    The band is {|xi1| <= 1, |xi2 - xi1^2| <= 1/R}.  Returns an (n, 2)
    int64 array sorted lexicographically.
    """
    step = spec.freq_step
    n1_max = int(np.floor((1.0 + _BAND_TOL) / step))
    n1 = np.arange(-n1_max, n1_max + 1)
    xi1sq = (step * n1) ** 2
    lo = np.ceil((xi1sq - 1.0 / spec.R) / step - _BAND_TOL).astype(np.int64)
    hi = np.floor((xi1sq + 1.0 / spec.R) / step + _BAND_TOL).astype(np.int64)
    counts = hi - lo + 1
    out = np.empty((int(counts.sum()), 2), dtype=np.int64)
    out[:, 0] = np.repeat(n1, counts)
    # ranges lo[i]..hi[i] flattened
    offsets = np.arange(len(out)) - np.repeat(np.cumsum(counts) - counts, counts)
    out[:, 1] = np.repeat(lo, counts) + offsets
    return out


def _band_violations(freqs: np.ndarray, spec: GridSpec, band: str) -> np.ndarray:
    """Boolean mask of modes outside the admissible region."""
    xi = spec.freq_step * freqs.astype(float)
    if band == "parabola":
        return (np.abs(xi[:, 0]) > 1.0 + _BAND_TOL) | (
            np.abs(xi[:, 1] - xi[:, 0] ** 2) > (1.0 + _BAND_TOL) / spec.R)
    if band == "circle":
        r = np.hypot(xi[:, 0], xi[:, 1])
        in_annulus = np.abs(1.0 - r) <= 2.0 / spec.R * (1.0 + _BAND_TOL)
        in_sector = (xi[:, 1] < 0) & (np.abs(xi[:, 0]) <= -xi[:, 1] * (1 + 1e-12))
        return ~(in_annulus & in_sector)
    if band == "free":
        return np.zeros(len(freqs), dtype=bool)
    raise ValueError(f"unknown band {band!r}")


@dataclass(frozen=True, eq=False)
class TorusField:
    """Immutable trigonometric polynomial; samples computed on demand."""

    spec: GridSpec
    freqs: np.ndarray          # (n, 2) int64 lattice modes
    amps: np.ndarray           # (n,) complex128
    band: str = "parabola"
    _samples: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        self.freqs.setflags(write=False)
        self.amps.setflags(write=False)

    @property
    def n_modes(self) -> int:
        return len(self.amps)

    def samples_on(self, m: int, cache: bool = True) -> np.ndarray:
        """Sample values on the m x m grid of spacing L/m.

        Requires m to strictly exceed twice the mode bandwidth so the
        placement n mod m is alias free; then the values are exactly
        f(j L/m) up to FFT roundoff.  Results are cached per m unless
        cache=False (for throwaway pieces in large sweeps).
        """
        if m in self._samples:
            return self._samples[m]
        bw = int(np.abs(self.freqs).max(initial=0))
        if 2 * bw >= m:
            raise ValueError(f"grid m={m} aliases modes of bandwidth {bw}")
        A = np.zeros((m, m), dtype=np.complex128)
        A[self.freqs[:, 0] % m, self.freqs[:, 1] % m] = self.amps
        out = ifft2(A, workers=1)
        out *= m * m
        out.setflags(write=False)
        if cache:
            self._samples[m] = out
        return out

    @property
    def samples(self) -> np.ndarray:
        return self.samples_on(self.spec.M)

    def scaled(self, c: complex) -> "TorusField":
        return TorusField(self.spec, self.freqs, c * self.amps, self.band)


def synthesize(freqs, amps, spec: GridSpec, band: str = "parabola") -> TorusField:
    """Build a TorusField from integer lattice modes and amplitudes.

    Rejects off-lattice input (freqs must be integers), duplicate modes,
    aliasing modes, and frequencies outside the requested band.
    """
    freqs = np.asarray(freqs)
    amps = np.asarray(amps, dtype=np.complex128).ravel()
    if freqs.ndim != 2 or freqs.shape[1] != 2 or len(freqs) != len(amps):
        raise ValueError("freqs must be (n, 2) with matching amps")
    if not np.issubdtype(freqs.dtype, np.integer):
        fint = np.rint(freqs).astype(np.int64)
        if np.max(np.abs(freqs - fint), initial=0) > 1e-9:
            bad = freqs[np.argmax(np.abs(freqs - fint).max(axis=1))]
            raise ValueError(f"off-lattice frequency {spec.freq_step * bad}")
        freqs = fint
    freqs = freqs.astype(np.int64)
    if len(np.unique(freqs, axis=0)) != len(freqs):
        raise ValueError("duplicate modes in spectrum")
    if 2 * int(np.abs(freqs).max(initial=0)) >= spec.M:
        raise ValueError("mode bandwidth exceeds Nyquist for this M")
    bad = _band_violations(freqs, spec, band)
    if bad.any():
        xi = spec.freq_step * freqs[bad][0]
        raise ValueError(f"frequency outside {band} band: xi = {tuple(xi)}")
    return TorusField(spec, freqs, amps, band)


def constant_field(spec: GridSpec, value: complex = 1.0) -> TorusField:
    return synthesize(np.zeros((1, 2), dtype=np.int64), [value], spec)


def random_band_field(spec: GridSpec, seed, density: float = 1.0,
                      band: str = "parabola") -> TorusField:
    """Unit-modulus amplitudes with iid uniform phases, one per band mode.

    density < 1 keeps each mode independently with that probability.
    """
    if band == "parabola":
        modes = parabola_band_modes(spec)
    elif band == "circle":
        modes = circle_band_modes(spec)
    else:
        raise ValueError(f"no random family for band {band!r}")
    rng = np.random.default_rng(seed)
    if density < 1.0:
        modes = modes[rng.random(len(modes)) < density]
    phases = rng.uniform(0.0, TWO_PI, size=len(modes))
    return synthesize(modes, np.exp(1j * phases), spec, band=band)


def circle_band_modes(spec: GridSpec) -> np.ndarray:
    """Lattice modes in the lower-sector annulus |1 - |xi|| <= 2/R."""
    step = spec.freq_step
    n_max = int(np.floor((1.0 + 2.0 / spec.R) / step + _BAND_TOL))
    n1 = np.arange(-n_max, n_max + 1)
    n2 = np.arange(-n_max, 0)
    N1, N2 = np.meshgrid(n1, n2, indexing="ij")
    cand = np.stack([N1.ravel(), N2.ravel()], axis=1)
    keep = ~_band_violations(cand, spec, "circle")
    return cand[keep]


def point_eval(field: TorusField, points) -> np.ndarray:
    """Direct trigonometric summation at arbitrary points, O(modes) each.

    The ground-truth oracle for synthesize, and the evaluator for sparse
    atomic integrals where a full grid would be wasteful.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    n = len(pts)
    out = np.empty(n, dtype=np.complex128)
    fT = field.freqs.T.astype(float)
    step = field.spec.freq_step
    block = max(1, int(2e7) // max(1, field.n_modes))
    for i in range(0, n, block):
        phase = (step * pts[i:i + block]) @ fT
        out[i:i + block] = np.exp(1j * phase) @ field.amps
    return out if np.ndim(points) == 2 else out[0] if n == 1 else out


def l2sq_coeff(field: TorusField) -> float:
    """||f||_2^2 from coefficients: L^2 sum |a|^2 (Parseval, exact)."""
    return field.spec.L ** 2 * float(np.vdot(field.amps, field.amps).real)


def grid_lp(samples: np.ndarray, L: float, p: float) -> float:
    """(Delta^2 sum |f|^p)^(1/p) on an m x m grid of period L."""
    m = samples.shape[0]
    delta2 = (L / m) ** 2
    a = np.abs(samples)
    if p == 2.0:
        acc = float(np.sum(a * a))
    elif p == 4.0:
        a *= a
        acc = float(np.sum(a * a))
    else:
        acc = float(np.sum(a ** p))
    return (delta2 * acc) ** (1.0 / p)


def lp_norm(field: TorusField, p: float, measure=None, m: int | None = None) -> float:
    """L^p norm; unweighted grid quadrature or exact atomic sum.

    Unweighted: (Delta^2 sum_grid |f|^p)^(1/p) on the m x m grid
    (default the spec's M).  Exact for p in {2, 4} by bandwidth counting;
    for other p the oversampling keeps the error ~1e-6 (checked by
    refinement in the tests).

    Weighted: measure supplies grid atoms (ij indices and masses); the
    weighted integral is by definition the atomic sum, so it is exact.
    """
    if not 2.0 <= p <= 4.0:
        raise ValueError(f"p must lie in [2, 4], got {p}")
    if measure is None:
        return grid_lp(field.samples_on(m or field.spec.M), field.spec.L, p)
    if measure.spec != field.spec:
        raise ValueError("measure defined on a different GridSpec")
    if measure.is_full_constant:
        # one atom per grid cell: sum row blocks to bound peak memory
        S = field.samples_on(field.spec.M, cache=False)
        step = max(1, 2 ** 22 // field.spec.M)
        acc = 0.0
        for i0 in range(0, field.spec.M, step):
            a = np.abs(S[i0:i0 + step])
            acc += float(np.sum(a ** p))
        return (float(measure.mass) * acc) ** (1.0 / p)
    vals = eval_at_atoms(field, measure)
    return float(np.sum(measure.mass * np.abs(vals) ** p)) ** (1.0 / p)


def eval_at_atoms(field: TorusField, measure) -> np.ndarray:
    """Field values at a measure's atom locations.

    Uses cached full-grid samples when already synthesized, otherwise
    direct summation (cheaper for sparse measures than an M x M FFT).
    """
    M = field.spec.M
    if M in field._samples:
        return field._samples[M][measure.ij[:, 0], measure.ij[:, 1]]
    if len(measure.ij) * max(field.n_modes, 1) > 4 * M * M:
        return field.samples[measure.ij[:, 0], measure.ij[:, 1]]
    return point_eval(field, field.spec.delta * measure.ij.astype(float))


def read_back_coeffs(field: TorusField) -> np.ndarray:
    """Forward FFT of the samples, gathered at the field's own modes."""
    M = field.spec.M
    A = fft2(field.samples, workers=1) / (M * M)
    return A[field.freqs[:, 0] % M, field.freqs[:, 1] % M]


def analyze(samples: np.ndarray, spec: GridSpec, tol: float = 1e-12) -> tuple[np.ndarray, np.ndarray]:
    """Extract (freqs, amps) of all modes with |a| > tol * max|a|."""
    M = samples.shape[0]
    A = fft2(samples, workers=1) / (M * M)
    mags = np.abs(A)
    cut = tol * mags.max(initial=0.0)
    idx = np.argwhere(mags > cut)
    amps = A[idx[:, 0], idx[:, 1]]
    # map FFT bins to signed lattice coordinates
    freqs = np.where(idx >= M // 2, idx - M, idx).astype(np.int64)
    order = np.lexsort((freqs[:, 1], freqs[:, 0]))
    return freqs[order], amps[order]


# ---------------------------------------------------------------------------
# import/export

_HEADER = struct.Struct("<ddQQ")  # R, L, M, mode count; 32 bytes


def write_field(field: TorusField, path) -> None:
    """Binary export: 32-byte header then M^2 little-endian (re, im) pairs."""
    spec = field.spec
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(float(spec.R), spec.L, spec.M, field.n_modes))
        fh.write(np.ascontiguousarray(field.samples, dtype="<c16").tobytes())


def read_field(path) -> tuple[GridSpec, np.ndarray, int]:
    """Binary import; returns (spec, samples, mode count)."""
    with open(path, "rb") as fh:
        R, L, M, n_modes = _HEADER.unpack(fh.read(_HEADER.size))
        M = int(M)
        data = np.frombuffer(fh.read(16 * M * M), dtype="<c16")
    if len(data) != M * M:
        raise ValueError(f"truncated field file {path}")
    return GridSpec(int(R), L, M), data.reshape(M, M), int(n_modes)


def write_spectrum_csv(field: TorusField, path) -> None:
    with open(path, "w") as fh:
        fh.write("n1,n2,re,im\n")
        for (n1, n2), a in zip(field.freqs, field.amps):
            fh.write(f"{n1},{n2},{a.real:.17g},{a.imag:.17g}\n")


def read_spectrum_csv(path, spec: GridSpec, band: str = "parabola") -> TorusField:
    with open(path) as fh:
        body = fh.read().strip().splitlines()[1:]
    if body:
        raw = np.loadtxt(body, delimiter=",", ndmin=2)
    else:
        raw = np.empty((0, 4))
    freqs = raw[:, :2].astype(np.int64)
    return synthesize(freqs, raw[:, 2] + 1j * raw[:, 3], spec, band=band)
