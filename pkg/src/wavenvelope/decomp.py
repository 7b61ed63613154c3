"""Broad-narrow decomposition, parabolic rescaling, bilinear tracking.

Three layers of the multiscale reduction.  First, an elementary split of
(sum a_i)^p into a max term plus a separated bilinear term, with the
constant carried explicitly.  Second, the pointwise iteration of that
split down a cap tree, certified at every sample point.  Third, the
rescaling of a cap to unit scale and the measured constants of the local
bilinear estimate on balls of the new radius R_s = R s^2.

Constants here are measured, never proved: each report records the
witnesses so drift across R is visible in regression sweeps.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import fftconvolve

from .torus import GridSpec, TorusField, point_eval, synthesize
from .geometry import (
    Cap, build_cap_tree, cap_index_for_abscissa, envelope_lattice_dims,
    theta_scale,
)
from .measures import ball_weight, lattice_weight
from .envelope import (
    WINDOW_DELTA, _cell_sums, cap_decompose, envelope_area, kappa_table,
    weighted_cell_integrals,
)

# the "locally constant on unit cubes" mollifier exponent
MOLLIFIER_N = 10


# ---------------------------------------------------------------------------
# the elementary split

def bg_split(a, neighborhoods, p: float):
    """Split (sum a_i)^p into max + separated-bilinear with certified C.

    neighborhoods[i] lists the indices near i (including i itself); the
    bilinear max runs over pairs (i, j) with j outside neighborhoods[i].
    Returns (max_i a_i^p, (#I)^p max_pairs (a_i a_j)^(p/2), C) where
    C = 2^(p-1) max(C1^p, 1) and C1 = max |I_i|; the inequality

        (sum a_i)^p <= C (max term + bilinear term)

    is asserted, not just returned.
    """
    a = np.asarray(a, dtype=float)
    n = len(a)
    if n == 0:
        raise ValueError("empty sequence")
    if np.any(a < 0):
        raise ValueError("negative entries")
    if p < 1:
        raise ValueError("p >= 1 required")
    if len(neighborhoods) != n:
        raise ValueError("one neighborhood per entry")
    hoods = [frozenset(int(j) for j in I) for I in neighborhoods]
    for i, I in enumerate(hoods):
        if i not in I:
            raise ValueError(f"neighborhood {i} does not contain itself")
        if any(j < 0 or j >= n for j in I):
            raise ValueError(f"neighborhood {i} indexes outside the set")
    C1 = max(len(I) for I in hoods)
    C = 2.0 ** (p - 1) * max(float(C1) ** p, 1.0)
    max_term = float(a.max()) ** p
    pairmax = 0.0
    for i, I in enumerate(hoods):
        far = max((a[j] for j in range(n) if j not in I), default=0.0)
        pairmax = max(pairmax, a[i] * far)
    bilinear = float(n) ** p * pairmax ** (0.5 * p)
    lhs = float(a.sum()) ** p
    slack = 1.0 + 1e-12
    assert lhs <= C * (max_term + bilinear) * slack, \
        f"split bound violated: {lhs} > {C * (max_term + bilinear)}"
    return max_term, bilinear, C


# ---------------------------------------------------------------------------
# the pointwise iteration over a cap tree

@dataclass
class BroadNarrowReport:
    """Per-point evaluation of the iterated split.

    narrow and bilinear are the bare sums (no constants); bound is the
    certified right-hand side C^m (narrow + sum_j N_j^p max-pair terms),
    which dominates lhs at every point by construction.  empirical[i] is
    lhs / (narrow + K^p bilinear), the constant the canonical form would
    need at that point.
    """

    p: float
    K: int
    m: int
    threshold: float
    C_stage: float
    points: np.ndarray
    lhs: np.ndarray
    narrow: np.ndarray
    bilinear: np.ndarray
    bound: np.ndarray
    empirical: np.ndarray

    @property
    def C_certified(self) -> float:
        return self.C_stage ** self.m

    @property
    def max_empirical(self) -> float:
        return float(self.empirical.max()) if len(self.empirical) else 0.0

    @property
    def witness(self):
        i = int(np.argmax(self.empirical))
        return tuple(self.points[i])


def _pair_gap_ok(dk: int, threshold: float) -> bool:
    # caps k, k' at scale s_c are (|dk|-1) s_c apart edge to edge
    return abs(dk) - 1 >= threshold


def broad_narrow(field: TorusField, points, p: float, K: int,
                 threshold: float = 0.5) -> BroadNarrowReport:
    """Evaluate the pointwise broad-narrow inequality at sample points.

    |f(x)|^p <= C^m sum_theta |f_theta(x)|^p
                + C^m K^p sum_stages sum_parents sum_pairs |f_1 f_2|^(p/2)

    with per-stage C = 2^(p-1) C1^p from bg_split, C1 the neighborhood
    count excluded by the separation threshold.  The honest certificate
    replaces K^p by each level's actual children count and the pair sum
    by the per-parent maximum; that bound is asserted pointwise.
    """
    if p < 1:
        raise ValueError("p >= 1 required")
    spec = field.spec
    tree = build_cap_tree(spec.R, K)
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    dec = cap_decompose(field, theta_scale(spec.R))

    from .torus import point_eval
    vals = {}  # level -> {k: complex values at pts}
    vals[tree.m] = {k: np.atleast_1d(point_eval(pc, pts))
                    for k, pc in dec.pieces.items()}
    for level in range(tree.m, 0, -1):
        up = {}
        for k, v in vals[level].items():
            kp = int(tree.parent_index(level, k))
            if kp in up:
                up[kp] = up[kp] + v
            else:
                up[kp] = v.copy()
        vals[level - 1] = up

    f_vals = sum(vals[tree.m].values())
    lhs = np.abs(f_vals) ** p
    narrow = sum(np.abs(v) ** p for v in vals[tree.m].values())

    C1 = 2 * int(np.ceil(1 + threshold) - 1) + 1
    C_stage = 2.0 ** (p - 1) * max(float(C1) ** p, 1.0)

    npts = len(pts)
    pair_sum = np.zeros(npts)
    cert_pairs = np.zeros(npts)
    for level in range(1, tree.m + 1):
        level_vals = vals[level]
        by_parent = {}
        for k in sorted(level_vals):
            by_parent.setdefault(int(tree.parent_index(level, k)), []).append(k)
        N_level = max((len(tree.children_index(level - 1, kp))
                       for kp in by_parent), default=0)
        for kp in sorted(by_parent):
            kids = by_parent[kp]
            best = np.zeros(npts)
            for ai in range(len(kids)):
                for bi in range(ai + 1, len(kids)):
                    if not _pair_gap_ok(kids[bi] - kids[ai], threshold):
                        continue
                    term = (np.abs(level_vals[kids[ai]])
                            * np.abs(level_vals[kids[bi]])) ** (0.5 * p)
                    pair_sum += term
                    np.maximum(best, term, out=best)
            cert_pairs += float(N_level) ** p * best

    bilinear = float(K) ** p * pair_sum
    bound = C_stage ** tree.m * (narrow + cert_pairs)
    bad = lhs > bound * (1 + 1e-9)
    assert not np.any(bad), \
        f"iteration bound violated at {pts[np.argmax(bad)]}"
    denom = narrow + bilinear
    empirical = np.divide(lhs, denom, out=np.zeros(npts),
                          where=denom > 0)
    return BroadNarrowReport(
        p=p, K=K, m=tree.m, threshold=threshold, C_stage=C_stage,
        points=pts, lhs=lhs, narrow=narrow, bilinear=bilinear,
        bound=bound, empirical=empirical)


# ---------------------------------------------------------------------------
# parabolic rescaling

@dataclass(frozen=True)
class RescaledField:
    """Trig polynomial in cap-model coordinates eta = A_tau^{-1} xi.

    Frequencies are real vectors (integer offsets from the recentering
    keep them off any single lattice); evaluation is by direct summation.
    Amplitudes are carried unchanged so |g(x)| = |f_tau(L_tau x)|; the
    s^3 Jacobian lives in the spectral density convention only.
    """

    cap: Cap
    R_new: float
    freqs: np.ndarray
    amps: np.ndarray

    @property
    def n_modes(self) -> int:
        return len(self.amps)

    def point_eval(self, points) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        out = np.zeros(len(pts), dtype=np.complex128)
        step = max(1, int(4e6) // max(1, self.n_modes))
        for i0 in range(0, len(pts), step):
            ph = pts[i0:i0 + step] @ self.freqs.T
            out[i0:i0 + step] = np.exp(1j * ph) @ self.amps
        return out if np.ndim(points) > 1 else out[0]

    def modulation(self, points) -> np.ndarray:
        """c_tau(x) with g(x) = c_tau(x) f_tau(L_tau x), |c_tau| = 1."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        s, c = self.cap.s, self.cap.c
        ph = -(c / s) * pts[:, 0] + (c * c / (s * s)) * pts[:, 1]
        out = np.exp(1j * ph)
        return out if np.ndim(points) > 1 else out[0]

    def spectrum(self):
        """(model frequencies, continuum-density amplitudes s^3 a)."""
        return self.freqs, self.cap.s ** 3 * self.amps

    def l2sq(self) -> float:
        """Mean of |g|^2 over large boxes (frequencies are distinct)."""
        return float(np.sum(np.abs(self.amps) ** 2))


def parabolic_rescale(field: TorusField, cap: Cap) -> RescaledField:
    """Pull a cap piece back to unit scale: eta = A_tau^{-1}(xi).

    The cap is identified with the image of [-1,1] x [-2,2] under A_tau,
    so modes must land in that model box; the new scale is R_s = R s^2.
    """
    spec = field.spec
    s, c = cap.s, cap.c
    xi = spec.freq_step * field.freqs.astype(float)
    eta1 = (xi[:, 0] - c) / s
    eta2 = (xi[:, 1] - 2 * c * xi[:, 0] + c * c) / (s * s)
    tol = 1e-9
    if len(eta1) and (np.abs(eta1).max() > 1 + WINDOW_DELTA + tol
                      or np.abs(eta2).max() > 2 + tol):
        i = int(np.argmax(np.abs(eta1)))
        raise ValueError(
            f"mode xi1 = {xi[i, 0]:.6f} outside cap {cap.cap_id}")
    return RescaledField(cap, spec.R * s * s,
                         np.column_stack([eta1, eta2]),
                         field.amps.copy())


# ---------------------------------------------------------------------------
# bilinear pairs and the local estimate constants

@dataclass(frozen=True)
class BilinearPair:
    """Two separated children of a cap, rescaled to unit scale.

    g1, g2 are the children's theta sums after the parent's rescaling;
    g_thetas holds every rescaled theta piece of the parent (the local
    orthogonality denominator runs over all of them).
    """

    parent: Cap
    child1: Cap
    child2: Cap
    g1: RescaledField
    g2: RescaledField
    g_thetas: tuple
    R: int
    threshold: float = 0.5

    def __post_init__(self):
        if self.child1.s != self.child2.s:
            raise ValueError("children at different scales")
        ratio = self.parent.s / self.child1.s
        if abs(ratio - round(ratio)) > 1e-12 or round(ratio) < 2:
            raise ValueError("child scale must divide parent scale")
        if self.separation < self.threshold * self.child1.s - 1e-12:
            raise ValueError(
                f"pair separation {self.separation:.4f} below "
                f"{self.threshold} x {self.child1.s}")

    @property
    def K(self) -> int:
        return int(round(self.parent.s / self.child1.s))

    @property
    def R_s(self) -> float:
        return self.R * self.parent.s ** 2

    @property
    def separation(self) -> float:
        return max(0.0, abs(self.child1.c - self.child2.c) - self.child1.s)

    @property
    def pair_id(self) -> str:
        # colon-separated so the id stays a single CSV field
        return f"{self.parent.cap_id}:{self.child1.k}:{self.child2.k}"


def _merge_pieces(pieces, spec, band) -> TorusField:
    # adjacent theta windows share boundary modes; sum their halves
    acc = {}
    for pc in pieces:
        for (n1, n2), a in zip(pc.freqs, pc.amps):
            key = (int(n1), int(n2))
            acc[key] = acc.get(key, 0.0) + a
    fr = np.array(sorted(acc), dtype=np.int64).reshape(-1, 2)
    am = np.array([acc[key] for key in sorted(acc)])
    return synthesize(fr, am, spec, band=band)


def _collect_children(field: TorusField, parent: Cap, child1: Cap,
                      child2: Cap):
    """(theta pieces in parent, theta pieces per child) by window center.

    A unit-scale parent is read as the whole band (the virtual tree
    root), not as the |xi_1| < 1/2 cap, so level-one pairs of the
    broad-narrow iteration are constructible.
    """
    spec = field.spec
    s_theta = theta_scale(spec.R)
    dec = cap_decompose(field, s_theta)
    full_band = parent.s >= 1.0
    in_parent, per_child = [], {child1.k: [], child2.k: []}
    for k, piece in dec.pieces.items():
        c_th = k * s_theta
        if not full_band and \
                int(cap_index_for_abscissa(c_th, parent.s)) != parent.k:
            continue
        in_parent.append(piece)
        kc = int(cap_index_for_abscissa(c_th, child1.s))
        if kc in per_child:
            per_child[kc].append(piece)
    if not per_child[child1.k] or not per_child[child2.k]:
        raise ValueError("a child cap carries no modes")
    return in_parent, per_child


def bilinear_pair(field: TorusField, parent: Cap, child1: Cap, child2: Cap,
                  threshold: float = 0.5) -> BilinearPair:
    """Assemble a separated pair from a field's theta pieces."""
    spec = field.spec
    in_parent, per_child = _collect_children(field, parent, child1, child2)
    g1 = parabolic_rescale(
        _merge_pieces(per_child[child1.k], spec, field.band), parent)
    g2 = parabolic_rescale(
        _merge_pieces(per_child[child2.k], spec, field.band), parent)
    gth = tuple(parabolic_rescale(pc, parent) for pc in in_parent)
    return BilinearPair(parent, child1, child2, g1, g2, gth,
                        spec.R, threshold)


def _gauss_weighted_l2sq(g: RescaledField, center, sigma: float) -> float:
    """int w_B |g|^2 exactly, w_B(x) = exp(-|x - c|^2 / (2 sigma^2)).

    Gaussian weight makes the quadratic form over mode pairs closed form:
    sum a_m conj(a_n) 2 pi sigma^2 exp(i d.c - sigma^2 |d|^2 / 2),
    d = eta_m - eta_n.
    """
    d1 = g.freqs[:, 0][:, None] - g.freqs[:, 0][None, :]
    d2 = g.freqs[:, 1][:, None] - g.freqs[:, 1][None, :]
    phase = np.exp(1j * (d1 * center[0] + d2 * center[1])
                   - 0.5 * sigma ** 2 * (d1 * d1 + d2 * d2))
    quad = np.conj(g.amps) @ phase @ g.amps
    # hermitian form of a psd kernel; imaginary part is roundoff
    return float(2 * np.pi * sigma ** 2 * quad.real)


def _mollifier_kernel(h: float, radius: float = 3.0) -> np.ndarray:
    """phi_N on the quadrature grid, truncated and unit-normalized."""
    r = int(np.ceil(radius / h))
    ax = np.arange(-r, r + 1) * h
    X, Y = np.meshgrid(ax, ax, indexing="ij")
    k = (1.0 + np.sqrt(X * X + Y * Y)) ** -MOLLIFIER_N
    return k / k.sum()


@dataclass
class BilinearReport:
    """Measured constants of the local bilinear estimate on one ball."""

    pair_id: str
    R_s: float
    K: int
    s: float
    center: tuple
    int_B: float
    int_BY: float
    max_cell_ratio: float
    norm1_w: float
    norm2_w: float
    sq_norm_w: float
    C_bil: float
    C_l4: float
    C_orth1: float
    C_orth2: float
    loc_const_ratio: float
    quad_per_unit: int
    sigma: float
    witness: tuple

    def csv_row(self) -> str:
        x1, x2 = self.witness
        return (f"{self.R_s:.17g},{self.K},{self.s:.17g},{self.pair_id},"
                f"{self.C_l4:.17g},{x1:.17g},{x2:.17g}\n")


CONSTANTS_CSV_HEADER = "R,K,s,pair_id,constant,x1,x2\n"


def write_constants_csv(reports, path) -> None:
    with open(path, "w") as fh:
        fh.write(CONSTANTS_CSV_HEADER)
        for rep in reports:
            fh.write(rep.csv_row())


def bilinear_check(pair: BilinearPair, Y=None, center=(0.0, 0.0),
                   quad_per_unit: int = 4) -> BilinearReport:
    """Measure the bilinear constants of a pair on one R_s ball.

    B is the axis cube of side R_s at center.  Y (an atomic set on the
    parent grid, or None for the full plane) enters through its pullback
    by L_tau: a quadrature point x lands in Y-tilde when L_tau x falls in
    an occupied cell.  The weighted norms use a Gaussian w_B with
    sigma = R_s / 2, evaluated in closed form.

      C_bil  : int_B |g1 g2|^2 * |B| / (||g1||_w^2 ||g2||_w^2)
      C_l4   : same with int_{B and Y-tilde} and the max cell ratio
      C_orth : ||g_i||_w / ||(sum_theta |g_theta|^2)^(1/2)||_w

    The orthogonality ratios are asserted against their Cauchy-Schwarz
    ceilings; everything else is recorded with witnesses.
    """
    if pair.separation < pair.threshold * pair.child1.s - 1e-12:
        raise ValueError("pair not separated")
    side = pair.R_s
    n_cells = int(round(side))
    npq = int(quad_per_unit)
    n = n_cells * npq
    h = side / n
    ax = (np.arange(n) + 0.5) * h - side / 2
    X1 = np.repeat(ax + center[0], n)
    X2 = np.tile(ax + center[1], n)
    pts = np.column_stack([X1, X2])

    v1 = pair.g1.point_eval(pts)
    v2 = pair.g2.point_eval(pts)
    prod2 = (np.abs(v1) * np.abs(v2)) ** 2
    int_B = float(prod2.sum()) * h * h

    if Y is None:
        mask = np.ones(len(pts), dtype=bool)
    else:
        # physical point is L_tau x; Y-tilde = L_tau^{-1}(Y)
        L = pair.parent.transforms()[2]
        phys = pts @ np.asarray(L).T
        mask = _in_measure_cells(phys, Y)
    int_BY = float(prod2[mask].sum()) * h * h

    # per-unit-cell occupancy of Y-tilde and the locally-constant check
    cell_i = np.minimum((np.repeat(np.arange(n), n) // npq), n_cells - 1)
    cell_j = np.minimum((np.tile(np.arange(n), n) // npq), n_cells - 1)
    cid = cell_i * n_cells + cell_j
    per_cell = npq * npq
    counts = np.bincount(cid, weights=mask.astype(float),
                         minlength=n_cells * n_cells)
    max_cell_ratio = float(counts.max()) / per_cell

    grid = prod2.reshape(n, n)
    kern = _mollifier_kernel(h)
    smooth = fftconvolve(grid, kern, mode="same")
    peaks = np.bincount(cid, weights=grid.ravel(), minlength=n_cells ** 2)
    bases = np.bincount(cid, weights=smooth.ravel(), minlength=n_cells ** 2)
    live = bases > 1e-300 * max(1.0, float(peaks.max()))
    loc_const = float((peaks[live] / bases[live]).max()) if live.any() else 0.0

    sigma = side / 2
    n1w = np.sqrt(max(_gauss_weighted_l2sq(pair.g1, center, sigma), 0.0))
    n2w = np.sqrt(max(_gauss_weighted_l2sq(pair.g2, center, sigma), 0.0))
    sqw2 = sum(_gauss_weighted_l2sq(g, center, sigma)
               for g in pair.g_thetas)
    sq_norm_w = np.sqrt(max(sqw2, 0.0))

    area = side * side
    denom = (n1w * n2w) ** 2
    C_bil = int_B * area / denom if denom > 0 else 0.0
    l4_denom = max_cell_ratio * denom / area
    C_l4 = int_BY / l4_denom if l4_denom > 0 else 0.0
    C_o1 = n1w / sq_norm_w if sq_norm_w > 0 else 0.0
    C_o2 = n2w / sq_norm_w if sq_norm_w > 0 else 0.0
    for C_o, g in ((C_o1, pair.g1), (C_o2, pair.g2)):
        n_th = sum(1 for gt in pair.g_thetas if gt.n_modes)
        assert C_o <= np.sqrt(max(n_th, 1)) * (1 + 1e-9), \
            "orthogonality ratio above Cauchy-Schwarz ceiling"

    i_w = int(np.argmax(prod2))
    witness = (float(pts[i_w, 0]), float(pts[i_w, 1]))
    return BilinearReport(
        pair_id=pair.pair_id, R_s=side, K=pair.K, s=pair.parent.s,
        center=tuple(center), int_B=int_B, int_BY=int_BY,
        max_cell_ratio=max_cell_ratio, norm1_w=n1w, norm2_w=n2w,
        sq_norm_w=sq_norm_w, C_bil=C_bil, C_l4=C_l4,
        C_orth1=C_o1, C_orth2=C_o2, loc_const_ratio=loc_const,
        quad_per_unit=npq, sigma=sigma, witness=witness)


def _in_measure_cells(points: np.ndarray, Y) -> np.ndarray:
    """Membership of physical points in a measure's occupied grid cells."""
    if Y.is_full_constant:
        return np.ones(len(points), dtype=bool)
    if Y.n_atoms == 0:
        return np.zeros(len(points), dtype=bool)
    spec = Y.spec
    jj = np.floor(points / spec.delta + 0.5).astype(np.int64) % spec.M
    keys = jj[:, 0] * spec.M + jj[:, 1]
    occupied = np.sort(Y.ij[:, 0] * spec.M + Y.ij[:, 1])
    pos = np.minimum(np.searchsorted(occupied, keys), len(occupied) - 1)
    return occupied[pos] == keys


# ---------------------------------------------------------------------------
# the summed form and the trial sweeps

@dataclass(frozen=True)
class PairEnvelopeSum:
    """Global bilinear bound for one pair, summed over the parent's
    envelopes: lhs is the weighted p-th power of the geometric mean,
    rhs the kappa-weighted envelope sum it should be dominated by."""

    pair_id: str
    p: float
    lhs: float
    rhs: float
    n_envelopes: int

    @property
    def ratio(self) -> float:
        return self.lhs / self.rhs if self.rhs > 0 else 0.0


def bilinear_envelope_sum(field: TorusField, H, p: float, parent: Cap,
                          child1: Cap, child2: Cap,
                          m: int | None = None) -> PairEnvelopeSum:
    """Sum the local bilinear bound over every envelope of the parent.

    lhs = integral of |f_1 f_2|^(p/2) against H (exact atomic sum; for
    the constant weight, a full-grid quadrature -- small R only).
    rhs = sum over U of kappa_{p,H}(U)^p |U|^(1-p/2) (int S^2 w_U)^(p/2)
    with S^2 the square sum over every theta inside the parent.
    """
    if not 2.0 <= p <= 4.0:
        raise ValueError("p in [2, 4]")
    spec = field.spec
    if m is None:
        m = min(spec.M, 2 * spec.R)
    if spec.M % m:
        raise ValueError("m must divide M")
    stride = spec.M // m
    in_parent, per_child = _collect_children(field, parent, child1, child2)
    f1 = _merge_pieces(per_child[child1.k], spec, field.band)
    f2 = _merge_pieces(per_child[child2.k], spec, field.band)

    if H.is_full_constant:
        v1 = np.abs(f1.samples_on(spec.M, cache=False))
        v2 = np.abs(f2.samples_on(spec.M, cache=False))
        lhs = float(H.mass) / spec.delta ** 2 * \
            float(np.sum((v1 * v2) ** (0.5 * p))) * spec.delta ** 2
    else:
        pts = H.positions()
        v1 = np.abs(np.atleast_1d(point_eval(f1, pts)))
        v2 = np.abs(np.atleast_1d(point_eval(f2, pts)))
        lhs = float(np.sum(np.asarray(H.mass) * (v1 * v2) ** (0.5 * p)))

    S2 = np.zeros((m, m))
    for piece in in_parent:
        a = np.abs(piece.samples_on(m, cache=False))
        S2 += a * a
    N1U, N2U, shearU = envelope_lattice_dims(parent, spec)
    wint = weighted_cell_integrals(
        _cell_sums(S2, parent, spec, stride).reshape(N1U, N2U),
        shearU).ravel()
    geom = envelope_area(spec.R, parent.s) ** (1.0 - 0.5 * p)
    if H.is_full_constant:
        kap = (float(H.mass) / spec.delta ** 2) ** (1.0 / p)
        rhs = kap ** p * geom * float(np.sum(wint ** (0.5 * p)))
        n_env = int(N1U * N2U)
    else:
        ekeys, kvals, _ = kappa_table(H, p, parent)
        rhs = float(np.sum(kvals ** p * geom * wint[ekeys] ** (0.5 * p)))
        n_env = len(ekeys)
    pid = f"{parent.cap_id}:{child1.k}:{child2.k}"
    return PairEnvelopeSum(pair_id=pid, p=p, lhs=lhs, rhs=rhs,
                           n_envelopes=n_env)


def _trial_modes(rng, spec: GridSpec, s_c: float, kc: int):
    """Random parabola modes whose windows stay inside child (s_c, kc).

    The window center of a mode sits within half a theta width of it, so
    the sampling interval shrinks by a full theta; when the child is only
    a couple of thetas wide that interval is empty and we fall back to a
    sliver around the child center (the center-to-center ratio s_c
    sqrt(R) is even, so those windows land exactly on the child center).
    """
    s_theta = theta_scale(spec.R)
    halfw = 0.5 * s_c - s_theta
    if halfw < 0.4 * s_theta:
        halfw = 0.4 * s_theta
    lo_xi = max(kc * s_c - halfw, -1.0)
    hi_xi = min(kc * s_c + halfw, 1.0)
    step = spec.freq_step
    lo = int(np.ceil(lo_xi / step))
    hi = int(np.floor(hi_xi / step))
    size = min(int(rng.integers(6, 16)), hi - lo + 1)
    n1 = rng.choice(np.arange(lo, hi + 1), size=size, replace=False)
    modes = []
    for v in n1:
        xi1 = v * step
        modes.append((int(v), int(round(xi1 * xi1 / step))))
    return modes


def bilinear_trials(R_s: int, K: int, n_trials: int, seed=0,
                    quad_per_unit: int | None = None,
                    weights: str = "mixed"):
    """Measured bilinear constants for random separated pairs at R_s.

    For K >= 4 half the trials start from physical scale R = 4 R_s with
    an s = 1/2 parent, exercising the rescaling; the rest use the unit
    parent at R = R_s directly.  weights: "none" keeps Y full; "mixed"
    alternates with a ball through the pullback.  Returns the reports
    (write_constants_csv serializes them).
    """
    if quad_per_unit is None:
        quad_per_unit = 4 if R_s <= 64 else 2
    rng = np.random.default_rng(seed)
    reports = []
    for _ in range(n_trials):
        half = K >= 4 and rng.random() < 0.5
        if half:
            spec = GridSpec(4 * R_s)
            kp = int(rng.integers(-1, 2))
            parent = Cap(0.5, kp)
            s_c = 0.5 / K
            kids = np.arange(K * kp - K // 2, K * kp + K // 2)
        else:
            spec = GridSpec(R_s)
            parent = Cap(1.0, 0)
            s_c = 1.0 / K
            kids = np.arange(-K, K + 1)
        while True:
            k1, k2 = rng.choice(kids, size=2, replace=False)
            if abs(int(k2) - int(k1)) >= 2:
                break
        k1, k2 = int(min(k1, k2)), int(max(k1, k2))
        modes = _trial_modes(rng, spec, s_c, k1) + \
            _trial_modes(rng, spec, s_c, k2)
        amps = rng.standard_normal(len(modes)) + \
            1j * rng.standard_normal(len(modes))
        field = synthesize(np.array(modes, dtype=np.int64), amps, spec)
        pair = bilinear_pair(field, parent, Cap(s_c, k1), Cap(s_c, k2))
        draw = rng.random() if weights == "mixed" else 0.0
        if draw < 0.4:
            Y = None
        elif draw < 0.7:
            # ball centered inside the physical image of B
            L = np.asarray(pair.parent.transforms()[2])
            u = rng.uniform(-0.25, 0.25, size=2) * pair.R_s
            cx = L @ u
            Y = ball_weight(spec, rho=spec.L / 8.0,
                            center=(float(cx[0]), float(cx[1])))
        else:
            # isolated cells: the pullback cell ratio is genuinely < 1
            Y = lattice_weight(spec, kappa=1.0 / 3.0, c=0.45)
        reports.append(bilinear_check(pair, Y=Y,
                                      quad_per_unit=quad_per_unit))
    return reports
