"""Cap decomposition, square functions, and the envelope weight functional.

The two inequalities evaluated here share a shape: the weighted L^p mass
of a band-limited f is controlled by square-function norms times a factor
that measures how much of the weight concentrates on single dual tubes
relative to their envelopes,

    kappa_p(U) = max_{T in U} (H(T)/|T|)^(1/4) * (H(U)/|U|)^(1/p - 1/4).

Everything feeding kappa is exact: H(T) and H(U) are finite sums of atom
masses, |T| = s^-3 and |U| = R^2 s are dyadic, and the tube/envelope keys
come from the integer location path.  The quadratures of the square
function are the only approximate ingredient, and for p in {2, 4} they
are exact too (the grid clears the doubled and quadrupled bandwidth).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field as dataclass_field

import numpy as np

from .torus import TorusField, lp_norm, synthesize
from .geometry import (
    Cap, cap_index_for_abscissa, caps_at_scale, dyadic_scales,
    envelope_factor, envelope_index_of_tube, envelope_lattice_dims,
    locate_grid_envelopes, locate_grid_tubes, theta_scale,
    tube_lattice_dims, wrap_envelope_index, wrap_tube_index,
)
from .measures import GRID_FLOOR_EXP, GridMeasure

# window transition half-width, in units of the cap width
WINDOW_DELTA = 0.0625

# envelope weight w_U: (1 + |d|_inf)^-10 over the 5x5 neighbor block,
# far cells folded into a uniform tail correction
W_EXPONENT = 10
W_BLOCK = 2


def _w_tail(exponent: int = W_EXPONENT, block: int = W_BLOCK) -> float:
    total, r = 0.0, block + 1
    while True:
        term = 8.0 * r * (1.0 + r) ** -exponent
        total += term
        if term < 1e-25:
            return total
        r += 1


W_TAIL = _w_tail()


# ---------------------------------------------------------------------------
# windows

def smooth_step(u):
    """C^infinity monotone 0 -> 1 on [0, 1]; exactly 1/2 at the midpoint."""
    u = np.clip(np.asarray(u, dtype=float), 0.0, 1.0)
    with np.errstate(divide="ignore", over="ignore"):
        a = np.where(u > 0, np.exp(-1.0 / np.where(u > 0, u, 1.0)), 0.0)
        b = np.where(u < 1, np.exp(-1.0 / np.where(u < 1, 1.0 - u, 1.0)), 0.0)
    return a / (a + b)


def step_profile(t, half_width: float = WINDOW_DELTA):
    """Smooth step: 0 for t <= -hw, 1 for t >= hw."""
    return smooth_step(0.5 * (np.asarray(t, dtype=float) / half_width + 1.0))


def window_profile(t):
    """The cap window in unit coordinates: even, supported in
    [-1/2 - hw, 1/2 + hw], and sum_k psi(t - k) = 1 identically."""
    t = np.asarray(t, dtype=float)
    return step_profile(t + 0.5) - step_profile(t - 0.5)


def _window_weights(xi1: np.ndarray, s: float):
    """Split weights of modes across caps at scale s.

    Returns (k_mid, w_left, w_mid, w_right): the mode's own cap and the
    mass handed to caps k_mid -+ 1.  Weights sum to 1 exactly by
    construction (w_mid = 1 - w_left - w_right); boundary mass pointing
    past the edge caps is folded back so edge caps saturate.
    """
    k_max = int(round(1.0 / s))
    k_mid = cap_index_for_abscissa(xi1, s)
    u = xi1 / s - k_mid
    w_right = step_profile(u - 0.5)
    w_left = 1.0 - step_profile(u + 0.5)
    fold_r = k_mid + 1 > k_max
    fold_l = k_mid - 1 < -k_max
    w_mid = 1.0 - np.where(fold_r, 0.0, w_right) - np.where(fold_l, 0.0, w_left)
    w_right = np.where(fold_r, 0.0, w_right)
    w_left = np.where(fold_l, 0.0, w_left)
    return k_mid, w_left, w_mid, w_right


@dataclass(frozen=True)
class CapDecomposition:
    """f = sum over caps of f_tau at one scale; pieces keyed by cap index."""

    scale: float
    pieces: dict
    window: str = f"step(delta={WINDOW_DELTA})"

    def caps(self):
        return sorted(self.pieces)

    def reconstruction(self, spec):
        """Coefficient-space sum of the pieces, for exactness checks."""
        acc = {}
        for piece in self.pieces.values():
            for fr, a in zip(piece.freqs, piece.amps):
                key = (int(fr[0]), int(fr[1]))
                acc[key] = acc.get(key, 0.0) + a
        return acc


def cap_decompose(field: TorusField, scale: float) -> CapDecomposition:
    """Split a parabola-band field into cap pieces at a dyadic scale.

    Multiplication by the chi windows in coefficient space; a mode within
    the transition zone of a cap boundary is shared between the two
    adjacent caps with weights summing to 1 exactly.
    """
    spec = field.spec
    if scale not in dyadic_scales(spec.R):
        raise ValueError(f"scale {scale} not dyadic in [R^-1/2, 1]")
    xi1 = spec.freq_step * field.freqs[:, 0].astype(float)
    k_mid, w_left, w_mid, w_right = _window_weights(xi1, scale)
    pieces = {}
    for k_arr, w in ((k_mid - 1, w_left), (k_mid, w_mid), (k_mid + 1, w_right)):
        live = w > 0.0
        for k in np.unique(k_arr[live]):
            sel = live & (k_arr == k)
            fld = synthesize(field.freqs[sel], field.amps[sel] * w[sel],
                             spec, band=field.band)
            if int(k) in pieces:
                prev = pieces[int(k)]
                merged_freqs = np.concatenate([prev.freqs, fld.freqs])
                merged_amps = np.concatenate([prev.amps, fld.amps])
                # a mode can reach the same cap only once per branch, so
                # concatenation never duplicates
                fld = synthesize(merged_freqs, merged_amps, spec,
                                 band=field.band)
            pieces[int(k)] = fld
    return CapDecomposition(scale, dict(sorted(pieces.items())))


def square_function(field: TorusField, scale: float,
                    m: int | None = None) -> np.ndarray:
    """Pointwise (sum_tau |f_tau|^2)^(1/2) on the m x m grid."""
    m = m or field.spec.M
    dec = cap_decompose(field, scale)
    S2 = np.zeros((m, m))
    for k in dec.caps():
        a = np.abs(dec.pieces[k].samples_on(m, cache=False))
        S2 += a * a
    return np.sqrt(S2)


def sq_norm_from_sq2(S2: np.ndarray, L: float, p: float) -> float:
    """L^p norm of sqrt(S2) by grid quadrature."""
    m = S2.shape[0]
    return float((L / m) ** 2 * np.sum(S2 ** (p / 2))) ** (1.0 / p)


# ---------------------------------------------------------------------------
# kappa

def tube_area(s: float) -> float:
    return s ** -3


def envelope_area(R: int, s: float) -> float:
    return float(R) * R * s


def envelope_stats(H: GridMeasure, cap: Cap):
    """(flat envelope keys, H(U), max_T H(T)) for envelopes charged by H.

    Streams the atoms once: tube masses by bincount on wrapped tube keys,
    then envelope masses and per-envelope tube maxima via the exact
    nesting (an envelope is a union of whole tubes).
    """
    spec = H.spec
    N1, N2, _ = tube_lattice_dims(cap, spec)
    N1U, N2U, _ = envelope_lattice_dims(cap, spec)
    if H.is_full_constant:
        raise ValueError("constant weights take the closed-form path")
    if H.n_atoms == 0:
        return (np.empty(0, np.int64), np.empty(0), np.empty(0), (N1U, N2U))
    z1, z2 = locate_grid_tubes(H.ij[:, 0], H.ij[:, 1], cap, spec)
    tkeys, inv = np.unique(z1 * N2 + z2, return_inverse=True)
    HT = np.bincount(inv, weights=np.asarray(H.mass))
    e1, e2 = envelope_index_of_tube(tkeys // N2, tkeys % N2,
                                    envelope_factor(cap, spec))
    e1, e2 = wrap_envelope_index(e1, e2, cap, spec)
    ekeys, einv = np.unique(e1 * N2U + e2, return_inverse=True)
    HU = np.bincount(einv, weights=HT)
    maxT = np.zeros(len(ekeys))
    np.maximum.at(maxT, einv, HT)
    return ekeys, HU, maxT, (N1U, N2U)


def kappa_table(H: GridMeasure, p: float, cap: Cap):
    """kappa for every envelope of cap that H charges.

    Returns (flat envelope keys, kappa values, (N1U, N2U)).  Envelopes
    with H(U) = 0 are absent (kappa = 0 by convention: H(T) = 0 for all
    their tubes kills the product).
    """
    ekeys, HU, maxT, dims = envelope_stats(H, cap)
    s, R = cap.s, H.spec.R
    vals = (maxT / tube_area(s)) ** 0.25 * \
        (HU / envelope_area(R, s)) ** (1.0 / p - 0.25)
    return ekeys, vals, dims


def kappa(H: GridMeasure, p: float, cap: Cap, z) -> float:
    """kappa_{p,H}(U) for the envelope U = (cap, z), z wrapped."""
    if not 2.0 <= p <= 4.0:
        raise ValueError("p in [2, 4]")
    if H.is_full_constant:
        lam = float(H.mass) / H.spec.delta ** 2
        return lam ** (1.0 / p)
    ekeys, vals, (N1U, N2U) = kappa_table(H, p, cap)
    flat = int(z[0]) * N2U + int(z[1])
    hit = np.searchsorted(ekeys, flat)
    if hit < len(ekeys) and ekeys[hit] == flat:
        return float(vals[hit])
    return 0.0


def kappa_max(H: GridMeasure, p: float):
    """(max kappa over all scales, caps, envelopes; witness dict).

    Scan order is coarse to fine, cap index ascending, envelope key
    ascending; ties keep the first witness, so the result is
    deterministic.
    """
    if not 2.0 <= p <= 4.0:
        raise ValueError("p in [2, 4]")
    R = H.spec.R
    if H.is_full_constant:
        lam = float(H.mass) / H.spec.delta ** 2
        return lam ** (1.0 / p), {"s": 1.0, "k": 0, "z1": 0, "z2": 0}
    best, witness = 0.0, {"s": 1.0, "k": 0, "z1": 0, "z2": 0}
    for s in dyadic_scales(R):
        for cap in caps_at_scale(s):
            ekeys, vals, (N1U, N2U) = kappa_table(H, p, cap)
            if len(vals) == 0:
                continue
            i = int(np.argmax(vals))
            if vals[i] > best:
                best = float(vals[i])
                witness = {"s": s, "k": cap.k,
                           "z1": int(ekeys[i] // N2U),
                           "z2": int(ekeys[i] % N2U)}
    return best, witness


# ---------------------------------------------------------------------------
# the envelope weight w_U and the theorem evaluation

def _env_shift(C: np.ndarray, d1: int, d2: int, shear: int) -> np.ndarray:
    """C[zU + d] on the wrapped envelope lattice, as an array over zU.

    The z2 axis wraps with a shear in z1 (the lattice is a sheared torus),
    so a straight np.roll is wrong across the z2 seam.
    """
    N1U, N2U = C.shape
    z1 = np.arange(N1U)[:, None]
    z2 = np.arange(N2U)[None, :]
    t2 = z2 + d2
    m = t2 // N2U
    return C[(z1 + d1 + m * shear) % N1U, t2 - m * N2U]


def weighted_cell_integrals(C: np.ndarray, shear: int) -> np.ndarray:
    """integral of S^2 w_U for every envelope U, from per-cell integrals C.

    w_U is cell-constant: (1 + |d|_inf)^-10 on the 5x5 block of envelope
    neighbors (periodized by the wrap), plus the exact lattice tail mass
    spread uniformly (far cells at their average).
    """
    out = np.zeros_like(C)
    for d1 in range(-W_BLOCK, W_BLOCK + 1):
        for d2 in range(-W_BLOCK, W_BLOCK + 1):
            w = (1.0 + max(abs(d1), abs(d2))) ** -W_EXPONENT
            out += w * _env_shift(C, d1, d2, shear)
    return out + W_TAIL * C.mean()


@dataclass
class RatioReport:
    """Both theorem sides for one (field, weight, p), with the breakdown.

    ratio_sq compares first powers (lhs vs the square-function side);
    ratio_env compares p-th powers (lhs^p vs the envelope sum).  terms
    rows are (s, cap_id, z1, z2, kappa, term).
    """

    p: float
    weight: str
    R: int
    m_grid: int
    floor: float
    lhs: float
    sq_norm: float
    kappa_max: float
    kappa_witness: dict
    sq_rhs: float
    env_rhs: float
    ratio_sq: float
    ratio_env: float
    env_by_scale: dict
    zero_field: bool = False
    terms: list = dataclass_field(default_factory=list, repr=False)

    def to_dict(self) -> dict:
        return {
            "p": self.p, "weight": self.weight, "R": self.R,
            "m_grid": self.m_grid, "floor": self.floor,
            "lhs": self.lhs, "sq_norm": self.sq_norm,
            "kappa_max": self.kappa_max, "kappa_witness": self.kappa_witness,
            "sq_rhs": self.sq_rhs, "env_rhs": self.env_rhs,
            "ratio_sq": self.ratio_sq, "ratio_env": self.ratio_env,
            "env_by_scale": {str(k): v for k, v in self.env_by_scale.items()},
            "zero_field": self.zero_field,
            "n_terms": len(self.terms),
        }

    def write_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, sort_keys=True, indent=1)
            fh.write("\n")

    def write_terms_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("s,cap_id,z1,z2,kappa,term\n")
            for s, cap_id, z1, z2, kap, term in self.terms:
                fh.write(f"{s:.17g},{cap_id},{z1},{z2},{kap:.17g},{term:.17g}\n")


def _cell_sums(P: np.ndarray, cap: Cap, spec, stride: int) -> np.ndarray:
    """Quadrature of P over each envelope cell of cap, on the subgrid.

    P lives on the m x m subgrid (m = M / stride); subgrid points are
    grid points, so the exact integer location path applies.
    """
    m = P.shape[0]
    N1U, N2U, _ = envelope_lattice_dims(cap, spec)
    out = np.zeros(N1U * N2U)
    jj = np.arange(m, dtype=np.int64) * stride
    rows = max(1, int(4e6) // m)
    for i0 in range(0, m, rows):
        nb = min(rows, m - i0)
        j1 = np.repeat(jj[i0:i0 + nb], m)
        j2 = np.tile(jj, nb)
        e1, e2 = locate_grid_envelopes(j1, j2, cap, spec)
        out += np.bincount(e1 * N2U + e2, weights=P[i0:i0 + nb].ravel(),
                           minlength=N1U * N2U)
    return out * (spec.L / m) ** 2


def verify_weighted_sq(field: TorusField, H: GridMeasure, p: float,
                       m: int | None = None) -> RatioReport:
    """Evaluate both weighted square-function inequalities.

    lhs     = ||f||_{L^p(H)}                       (exact atomic sum)
    sq_rhs  = (kappa_max + R^-40) ||S_theta||_p    (first-power side)
    env_rhs = sum over (s, tau, U) of
              kappa(U)^p |U|^(1-p/2) (int S_tau^2 w_U)^(p/2)

    m defaults to min(M, 2R): f is still alias-free there, and the
    square function is low-frequency (each |f_theta|^2 has bandwidth
    O(R^1/2)), so the p in {2, 4} quadratures of S^2 and S^4 remain
    exact while the envelope accumulation runs 16x cheaper than on the
    full grid.
    """
    spec = field.spec
    R = spec.R
    if m is None:
        m = min(spec.M, 2 * R)
    if spec.M % m != 0:
        raise ValueError("m must divide M")
    stride = spec.M // m
    floor = float(R) ** -GRID_FLOOR_EXP
    scales = dyadic_scales(R)
    s_theta = theta_scale(R)

    lhs = lp_norm(field, p, measure=H)
    zero_field = not np.any(np.abs(field.amps) > 0)

    constant = H.is_full_constant
    lam = float(H.mass) / spec.delta ** 2 if constant else 0.0

    dec = cap_decompose(field, s_theta)

    # one pass over theta pieces: the theta-scale square function and the
    # per-(s, tau) envelope cell integrals of S_tau^2.  Theta indices are
    # ascending, so parent indices per scale are non-decreasing; S_tau^2
    # accumulates until the parent advances, then one cell pass flushes it.
    S2 = np.zeros((m, m))
    cell = {}
    open_k = dict.fromkeys(scales)
    acc = dict.fromkeys(scales)

    def _flush(s):
        if open_k[s] is not None:
            cell[(s, open_k[s])] = _cell_sums(
                acc[s], Cap(s, open_k[s]), spec, stride)

    for k_theta in dec.caps():
        a = np.abs(dec.pieces[k_theta].samples_on(m, cache=False))
        P = a * a
        S2 += P
        for s in scales:
            k_tau = int(cap_index_for_abscissa(k_theta * s_theta, s))
            if open_k[s] != k_tau:
                _flush(s)
                open_k[s] = k_tau
                acc[s] = P.copy()
            else:
                acc[s] += P
    for s in scales:
        _flush(s)
    del acc

    sq_norm = sq_norm_from_sq2(S2, spec.L, p)
    kmax, kwitness = kappa_max(H, p)
    sq_rhs = (kmax + floor) * sq_norm

    env_rhs = 0.0
    env_by_scale = {s: 0.0 for s in scales}
    terms = []
    for s in scales:
        U_area = envelope_area(R, s)
        geom = U_area ** (1.0 - 0.5 * p)
        for cap in caps_at_scale(s):
            key = (s, cap.k)
            if key not in cell:
                continue
            N1U, N2U, shearU = envelope_lattice_dims(cap, spec)
            wint = weighted_cell_integrals(
                cell[key].reshape(N1U, N2U), shearU).ravel()
            if constant:
                kap = lam ** (1.0 / p)
                if kap == 0.0:
                    continue
                contrib = kap ** p * geom * np.sum(wint ** (0.5 * p))
                env_rhs += contrib
                env_by_scale[s] += contrib
                top = int(np.argmax(wint))
                terms.append((s, cap.cap_id, top // N2U, top % N2U, kap,
                              kap ** p * geom * wint[top] ** (0.5 * p)))
                continue
            ekeys, kvals, _ = kappa_table(H, p, cap)
            if len(ekeys) == 0:
                continue
            tvals = kvals ** p * geom * wint[ekeys] ** (0.5 * p)
            env_rhs += float(tvals.sum())
            env_by_scale[s] += float(tvals.sum())
            for i in range(len(ekeys)):
                terms.append((s, cap.cap_id, int(ekeys[i] // N2U),
                              int(ekeys[i] % N2U), float(kvals[i]),
                              float(tvals[i])))

    ratio_sq = lhs / sq_rhs if sq_rhs > 0 else 0.0
    ratio_env = lhs ** p / env_rhs if env_rhs > 0 else 0.0
    return RatioReport(
        p=p, weight=H.label, R=R, m_grid=m, floor=floor, lhs=lhs,
        sq_norm=sq_norm, kappa_max=kmax, kappa_witness=kwitness,
        sq_rhs=sq_rhs, env_rhs=env_rhs, ratio_sq=ratio_sq,
        ratio_env=ratio_env, env_by_scale=env_by_scale,
        zero_field=zero_field, terms=terms)
