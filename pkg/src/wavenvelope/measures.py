"""Atomic weights and measures on the grid, with dimension certificates.

A GridMeasure is a finite list of atoms (grid point, mass >= 0).  Weights
H: R^2 -> [0,1] are the special case mass = h * Delta^2 with density
h <= 1, so that H(E) = integral of H over E becomes the exact finite sum
of atom masses in E.  All downstream quantities (kappa, theorem sides)
consume measures through that sum, which removes every quadrature
ambiguity from the inequalities being tested.

Certificates approximate sup_{z, rho} rho^(-a) mu(B_rho(z)) over dyadic
radii with centers restricted to atom locations.  The standard doubling
argument (any ball meeting the support sits inside the double of an
atom-centered ball of the next dyadic radius) pins the true supremum
within a factor 4^a of the certified value.

Atoms live on the torus, so distances are wrapped; families placed across
the fundamental-domain boundary keep their geometry.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .torus import GridSpec
from .geometry import Cap, locate_grid_tubes, theta_scale

# Schwartz-tail exponent of the smoothing kernel.  10 matches the envelope
# weights used elsewhere; anything > 3 integrates.
PHI_EXPONENT = 10

GRID_FLOOR_EXP = 40  # level sets and pointwise floors cut at R^-40


@dataclass(frozen=True, eq=False)
class GridMeasure:
    """Immutable atomic measure; ij indexes the spec's sample grid.

    ij is None for the full-grid constant weight (every grid point carries
    the same scalar mass); consumers special-case that representation so a
    dense weight at large R never materializes M^2 explicit atoms.
    """

    spec: GridSpec
    ij: np.ndarray | None      # (n, 2) int64 in [0, M)^2, lexsorted unique
    mass: np.ndarray | float   # (n,) float64, or a scalar when ij is None
    kind: str = "measure"      # "weight" densities obey h <= 1
    label: str = ""

    def __post_init__(self):
        M = self.spec.M
        if self.ij is None:
            if not np.isscalar(self.mass) or self.mass < 0:
                raise ValueError("constant measure needs one scalar mass")
        else:
            ij = np.asarray(self.ij, dtype=np.int64).reshape(-1, 2)
            mass = np.asarray(self.mass, dtype=np.float64).ravel()
            if len(ij) != len(mass):
                raise ValueError("atom count != mass count")
            if len(ij) and (ij.min() < 0 or ij.max() >= M):
                raise ValueError("atom off the sample grid")
            order = np.lexsort((ij[:, 1], ij[:, 0]))
            ij, mass = ij[order], mass[order]
            if len(ij) > 1:
                dup = np.all(np.diff(ij, axis=0) == 0, axis=1)
                if dup.any():
                    raise ValueError(f"duplicate atom at {ij[1:][dup][0]}")
            if len(mass) and mass.min() < 0:
                raise ValueError("negative mass")
            object.__setattr__(self, "ij", ij)
            object.__setattr__(self, "mass", mass)
            ij.setflags(write=False)
            mass.setflags(write=False)
        if self.kind == "weight":
            d2 = self.spec.delta ** 2
            top = float(self.mass) if self.ij is None else \
                (float(self.mass.max()) if len(self.mass) else 0.0)
            if top > d2 * (1 + 1e-9):
                raise ValueError(f"weight density {top / d2} exceeds 1")
        elif self.kind != "measure":
            raise ValueError(f"kind must be weight or measure, got {self.kind!r}")

    @property
    def is_full_constant(self) -> bool:
        return self.ij is None

    @property
    def n_atoms(self) -> int:
        return self.spec.M ** 2 if self.ij is None else len(self.mass)

    @property
    def total(self) -> float:
        if self.ij is None:
            return float(self.mass) * self.spec.M ** 2
        return float(self.mass.sum())

    def density(self):
        """Pointwise density h = mass / Delta^2 at the atoms."""
        return self.mass / self.spec.delta ** 2

    def positions(self) -> np.ndarray:
        if self.ij is None:
            raise ValueError("constant measure has no atom list; materialize first")
        return self.spec.delta * self.ij.astype(float)

    def materialize(self) -> "GridMeasure":
        """Explicit atom list for the constant representation (small R only)."""
        if self.ij is not None:
            return self
        M = self.spec.M
        jj = np.arange(M, dtype=np.int64)
        ij = np.stack(np.meshgrid(jj, jj, indexing="ij"), axis=-1).reshape(-1, 2)
        return GridMeasure(self.spec, ij, np.full(M * M, float(self.mass)),
                           self.kind, self.label)

    def scaled(self, c: float) -> "GridMeasure":
        kind = self.kind if (self.kind == "measure" or c <= 1.0 + 1e-12) \
            else "measure"
        return GridMeasure(self.spec, self.ij, self.mass * c, kind, self.label)


def _torus_disp(a, b, L: float):
    """Componentwise wrapped displacement a - b, reduced into [-L/2, L/2)."""
    return (a - b + 0.5 * L) % L - 0.5 * L


# ---------------------------------------------------------------------------
# weight families

def constant_weight(spec: GridSpec, lam: float = 1.0) -> GridMeasure:
    if not 0.0 <= lam <= 1.0 + 1e-12:
        raise ValueError("constant weight density must lie in [0, 1]")
    return GridMeasure(spec, None, lam * spec.delta ** 2, "weight",
                       f"constant({lam})")


def ball_weight(spec: GridSpec, rho: float = 1.0, center=(0.0, 0.0)) -> GridMeasure:
    """1 on the torus ball B_rho(center), atom mass Delta^2."""
    M, d = spec.M, spec.delta
    if rho >= 0.5 * spec.L:
        return constant_weight(spec)
    r_cells = int(math.ceil(rho / d))
    cz = np.asarray(center, dtype=float)
    c_idx = np.rint(cz / d).astype(np.int64)
    jj = np.arange(-r_cells - 1, r_cells + 2, dtype=np.int64)
    J1, J2 = np.meshgrid(jj + c_idx[0], jj + c_idx[1], indexing="ij")
    ij = np.stack([J1.ravel(), J2.ravel()], axis=1)
    dd = _torus_disp(d * ij.astype(float), cz, spec.L)
    ij = ij[np.hypot(dd[:, 0], dd[:, 1]) <= rho * (1 + 1e-12)] % M
    ij = np.unique(ij, axis=0)
    return GridMeasure(spec, ij, np.full(len(ij), d * d), "weight",
                       f"ball({rho})")


def dual_tube_weight(spec: GridSpec, alpha: float = 1.0, k: int = 0) -> GridMeasure:
    """R^((alpha-2)/2) on the dual tube theta*: the z = 0 tube of the
    theta-scale cap with index k, an R^(1/2) x R slab tilted to slope -2c.

    The density R^((alpha-2)/2) makes the weight alpha-dimensional at
    scales up to R (ball mass grows like rho along the slab and saturates
    across it).
    """
    if not 0.0 <= alpha <= 2.0:
        raise ValueError("alpha in [0, 2]")
    M = spec.M
    cap = Cap(theta_scale(spec.R), k)
    rows = []
    jj = np.arange(M, dtype=np.int64)
    block = max(1, int(4e6) // M)
    for j0 in range(0, M, block):
        nb = min(block, M - j0)
        j1v = np.repeat(jj[j0:j0 + nb], M)
        j2v = np.tile(jj, nb)
        z1, z2 = locate_grid_tubes(j1v, j2v, cap, spec)
        keep = (z1 == 0) & (z2 == 0)
        rows.append(np.stack([j1v[keep], j2v[keep]], axis=1))
    ij = np.concatenate(rows)
    h = spec.R ** (0.5 * (alpha - 2.0))
    return GridMeasure(spec, ij, np.full(len(ij), h * spec.delta ** 2),
                       "weight", f"dual_tube(alpha={alpha},k={k})")


def _lattice_sites(R: int, kappa: float, c: float, window: str) -> np.ndarray:
    """Sites of 2 pi R^kappa Z x 2 pi R^(2 kappa) Z inside the window.

    window "ball": |gamma| <= c R;  window "corner": [0, R^(1/2)] x [0, R].
    """
    g1 = 2.0 * math.pi * R ** kappa
    g2 = 2.0 * math.pi * R ** (2.0 * kappa)
    if window == "ball":
        ii = np.arange(-int(c * R / g1), int(c * R / g1) + 1)
        jj = np.arange(-int(c * R / g2), int(c * R / g2) + 1)
    elif window == "corner":
        ii = np.arange(0, int(R ** 0.5 / g1) + 1)
        jj = np.arange(0, int(R / g2) + 1)
    else:
        raise ValueError(f"unknown window {window!r}")
    I, J = np.meshgrid(ii, jj, indexing="ij")
    pts = np.stack([g1 * I.ravel(), g2 * J.ravel()], axis=1)
    if window == "ball":
        pts = pts[np.hypot(pts[:, 0], pts[:, 1]) <= c * R]
    return pts


def lattice_weight(spec: GridSpec, kappa: float = 1.0 / 3.0,
                   c: float = 0.125) -> GridMeasure:
    """1 on (2 pi R^kappa Z x 2 pi R^(2 kappa) Z) cap B_cR, fattened by B_c.

    Support = grid points within distance c of a lattice site.  With c
    below the cell size most sites trap no grid point at all; an empty
    result is legal and signalled by n_atoms == 0.
    """
    sites = _lattice_sites(spec.R, kappa, c, "ball")
    return _fatten_sites(spec, sites, c, f"lattice(kappa={kappa},c={c})")


def _fatten_sites(spec: GridSpec, sites: np.ndarray, c: float,
                  label: str) -> GridMeasure:
    M, d = spec.M, spec.delta
    r_cells = int(math.ceil(c / d))
    jj = np.arange(-r_cells, r_cells + 1, dtype=np.int64)
    DJ1, DJ2 = np.meshgrid(jj, jj, indexing="ij")
    dj = np.stack([DJ1.ravel(), DJ2.ravel()], axis=1)
    out = []
    for site in sites:
        cand = np.rint(site / d).astype(np.int64) + dj
        dist = np.hypot(*(d * cand.astype(float) - site).T)
        out.append(cand[dist <= c * (1 + 1e-12)])
    if out:
        ij = np.unique(np.concatenate(out) % M, axis=0)
    else:
        ij = np.empty((0, 2), dtype=np.int64)
    return GridMeasure(spec, ij, np.full(len(ij), d * d), "weight", label)


def truncated_lattice_weight(spec: GridSpec, alpha: float = 1.5,
                             c: float = 0.25) -> GridMeasure:
    """Corner-window parabolic lattice with each B_c ball lumped to one atom.

    Sites of 2 pi R^kappa Z x 2 pi R^(2 kappa) Z, kappa = (2 - alpha)/6,
    inside [0, R^(1/2)] x [0, R]; each site carries the exact ball mass
    pi c^2 at its nearest grid point.  Lumping keeps the per-site mass
    R-independent, which is what the two-branch weight exponents see;
    c <= 0.28 keeps the lumped density a legal weight on the default grid.
    """
    if not 1.0 < alpha < 2.0:
        raise ValueError("alpha in (1, 2)")
    kappa = (2.0 - alpha) / 6.0
    sites = _lattice_sites(spec.R, kappa, c, "corner")
    ij = np.unique(np.rint(sites / spec.delta).astype(np.int64) % spec.M, axis=0)
    mass = np.full(len(ij), math.pi * c * c)
    return GridMeasure(spec, ij, mass, "weight",
                       f"truncated_lattice(alpha={alpha},c={c})")


def parabolic_box_weight(spec: GridSpec, boxes) -> GridMeasure:
    """1 on a union of parabolic boxes [x1, x1 + rho) x [x2, x2 + rho^2)."""
    M, d = spec.M, spec.delta
    chunks = []
    for x1, x2, rho in boxes:
        i0, j0 = int(math.ceil(x1 / d)), int(math.ceil(x2 / d))
        ni = max(int(math.ceil((x1 + rho) / d)) - i0, 0)
        nj = max(int(math.ceil((x2 + rho * rho) / d)) - j0, 0)
        I, J = np.meshgrid(i0 + np.arange(ni), j0 + np.arange(nj), indexing="ij")
        chunks.append(np.stack([I.ravel(), J.ravel()], axis=1))
    if chunks:
        ij = np.unique(np.concatenate(chunks) % M, axis=0)
    else:
        ij = np.empty((0, 2), dtype=np.int64)
    return GridMeasure(spec, ij, np.full(len(ij), d * d), "weight",
                       f"parabolic_boxes({len(boxes)})")


def custom_weight(spec: GridSpec, ij, mass, kind: str = "weight",
                  label: str = "custom") -> GridMeasure:
    return GridMeasure(spec, np.asarray(ij, dtype=np.int64),
                       np.asarray(mass, dtype=float), kind, label)


_FAMILIES = {
    "constant": constant_weight,
    "ball": ball_weight,
    "dual-tube": dual_tube_weight,
    "lattice": lattice_weight,
    "truncated-lattice": truncated_lattice_weight,
    "parabolic-box": parabolic_box_weight,
    "custom": custom_weight,
}


def make_weight(family: str, spec: GridSpec, **params) -> GridMeasure:
    if family not in _FAMILIES:
        raise ValueError(f"unknown family {family!r}; have {sorted(_FAMILIES)}")
    return _FAMILIES[family](spec, **params)


# ---------------------------------------------------------------------------
# smoothing H = mu * phi

def phi_decay(r2, exponent: int = PHI_EXPONENT):
    """Unit-integral kernel c_N (1 + |y|)^-N at squared radii r2.

    c_N = (N-1)(N-2) / (2 pi) since int_R2 (1+|y|)^-N = 2 pi / ((N-1)(N-2)).
    """
    c = (exponent - 1) * (exponent - 2) / (2.0 * math.pi)
    return c * (1.0 + np.sqrt(r2)) ** (-float(exponent))


def smooth_measure(mu: GridMeasure, exponent: int = PHI_EXPONENT,
                   clamp: bool = False, support_tol: float = 0.0) -> GridMeasure:
    """H = mu * phi with phi(y) = c_N (1 + |y|)^-N, dense direct sum.

    The convolution uses the torus metric.  support_tol > 0 drops cells
    with density below tol * max to keep the atom list short; clamp caps
    the density at 1 so the result is always a legal weight.
    """
    src = mu.materialize()
    M, d, L = mu.spec.M, mu.spec.delta, mu.spec.L
    h = np.zeros((M, M))
    ax = d * np.arange(M)
    for (px, py), m in zip(src.positions(), src.mass):
        dx = _torus_disp(ax, px, L)
        dy = _torus_disp(ax, py, L)
        h += m * phi_decay(dx[:, None] ** 2 + dy[None, :] ** 2, exponent)
    if clamp:
        np.minimum(h, 1.0, out=h)
    keep = h > (support_tol * h.max() if support_tol > 0 else 0.0)
    ij = np.argwhere(keep).astype(np.int64)
    kind = "weight" if (clamp or h.max() <= 1 + 1e-12) else "measure"
    return GridMeasure(mu.spec, ij, h[keep] * d * d, kind,
                       f"smooth({src.label})")


# ---------------------------------------------------------------------------
# dyadic level sets

def dyadic_level_sets(H: GridMeasure, floor: float | None = None):
    """Split a weight into dyadic levels Y_lam = {lam <= h < 2 lam}.

    Returns (levels, below): levels is a list of (lam, atom indices) for
    lam = 2^-j from 1 down to the floor (default R^-40); `below` indexes
    leftover atoms with 0 < h below the last level.
    """
    if H.kind != "weight":
        raise ValueError("level sets are defined for weights")
    H = H.materialize()
    floor = float(H.spec.R) ** (-GRID_FLOOR_EXP) if floor is None else floor
    e_floor = int(math.floor(math.log2(floor)))
    h = np.asarray(H.density())
    pos = h > 0
    e = np.zeros(len(h), dtype=np.int64)
    e[pos] = np.floor(np.log2(h[pos])).astype(np.int64)
    np.minimum(e, 0, out=e)  # tolerance overage above h = 1 stays in lam = 1
    levels = []
    for ex in range(0, e_floor - 1, -1):
        idx = np.nonzero(pos & (e == ex))[0]
        if len(idx):
            levels.append((2.0 ** ex, idx))
    below = np.nonzero(pos & (e < e_floor))[0]
    return levels, below


# ---------------------------------------------------------------------------
# dimension certificates

@dataclass(frozen=True)
class Certificate:
    mode: str                  # alpha-ball | alpha-ball-all | beta-par | mc
    param: tuple               # (alpha,) | (beta,) | (delta, q)
    value: float
    witness_center: tuple      # (x, t)
    witness_radius: float

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "param": [float(p) for p in self.param],
            "value": float(self.value),
            "witness": {"center": [float(c) for c in self.witness_center],
                        "radius": float(self.witness_radius)},
        }

    def write_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, sort_keys=True, indent=1)
            fh.write("\n")


def _dyadic_radii(r_min: float, r_max: float) -> np.ndarray:
    lo = int(math.floor(math.log2(max(r_min, 1e-300))))
    hi = int(math.ceil(math.log2(max(r_max, r_min) * (1 + 1e-9))))
    return 2.0 ** np.arange(lo, hi + 1)


def ball_masses_at(centers: np.ndarray, positions: np.ndarray,
                   masses: np.ndarray, radii: np.ndarray,
                   L: float | None) -> np.ndarray:
    """mu(B_rho(z)) for each center z and radius rho; (n_centers, n_radii).

    Closed balls; torus metric when L is given, plain Euclidean otherwise.
    """
    out = np.empty((len(centers), len(radii)))
    block = max(1, int(4e6) // max(len(positions), 1))
    for i in range(0, len(centers), block):
        dd = positions[None, :, :] - centers[i:i + block, None, :]
        if L is not None:
            dd = (dd + 0.5 * L) % L - 0.5 * L
        dist2 = np.sum(dd * dd, axis=2)
        for r, rho in enumerate(radii):
            r2 = (rho * (1 + 1e-12)) ** 2
            out[i:i + block, r] = (dist2 <= r2) @ masses
    return out


def parbox_masses_at(centers: np.ndarray, positions: np.ndarray,
                     masses: np.ndarray, radii: np.ndarray,
                     L: float | None) -> np.ndarray:
    """mu of parabolic boxes |y - z1| <= rho, |s - z2| <= rho^2."""
    out = np.empty((len(centers), len(radii)))
    block = max(1, int(4e6) // max(len(positions), 1))
    for i in range(0, len(centers), block):
        dd = positions[None, :, :] - centers[i:i + block, None, :]
        if L is not None:
            dd = (dd + 0.5 * L) % L - 0.5 * L
        ax, at = np.abs(dd[:, :, 0]), np.abs(dd[:, :, 1])
        for r, rho in enumerate(radii):
            inside = (ax <= rho * (1 + 1e-12)) & (at <= rho * rho * (1 + 1e-12))
            out[i:i + block, r] = inside @ masses
    return out


def certificate_core(positions: np.ndarray, masses: np.ndarray, mode: str,
                     param, r_min: float, r_max: float,
                     centers: np.ndarray | None = None,
                     L: float | None = None) -> Certificate:
    """Shared dyadic-supremum evaluator over explicit points.

    For mode "mc" the masses must already be the per-cell integrals
    h^q * Delta^2 (dimension_certificate prepares them).
    """
    param_t = tuple(float(p) for p in np.atleast_1d(param))
    if centers is None:
        centers = positions
    if len(positions) == 0 or len(centers) == 0:
        return Certificate(mode, param_t, 0.0, (0.0, 0.0), 1.0)
    radii = _dyadic_radii(r_min, r_max)
    if mode in ("alpha-ball", "alpha-ball-all"):
        table = ball_masses_at(centers, positions, masses, radii, L)
        vals = table * radii[None, :] ** (-param_t[0])
    elif mode == "beta-par":
        table = parbox_masses_at(centers, positions, masses, radii, L)
        vals = table * radii[None, :] ** (-param_t[0])
    elif mode == "mc":
        delta, q = param_t
        if not (delta > 0 and 1 <= q <= 3.0 / delta):
            raise ValueError(f"need delta > 0 and 1 <= q <= 3/delta, got {param_t}")
        table = parbox_masses_at(centers, positions, masses, radii, L)
        vals = table ** (1.0 / q) * radii[None, :] ** (delta - 3.0 / q)
    else:
        raise ValueError(f"unknown certificate mode {mode!r}")
    flat = int(np.argmax(vals))
    ci, ri = divmod(flat, len(radii))
    return Certificate(mode, param_t, float(vals[ci, ri]),
                       (float(centers[ci][0]), float(centers[ci][1])),
                       float(radii[ri]))


def dimension_certificate(measure: GridMeasure, mode: str, param,
                          centers: np.ndarray | None = None) -> Certificate:
    """Dyadic-radius certificate of a dimension norm.

    mode "alpha-ball"      sup over radii rho >= 1 of rho^-alpha mu(B_rho);
    mode "alpha-ball-all"  the same with radii down to the cell size (the
        atomic model carries no information below one cell);
    mode "beta-par"        sup rho^-beta mu over boxes rho x rho^2;
    mode "mc"              Morrey-Campanato (delta, q): sup over the same
        boxes of rho^delta (rho^-3 int_box h^q)^(1/q).

    Centers default to the atom locations (callers may subsample for large
    supports); the unrestricted supremum is at most 4^param times the
    certified value.
    """
    mzd = measure.materialize() if measure.is_full_constant else measure
    masses = np.asarray(mzd.mass, dtype=float)
    if mode == "mc":
        if measure.kind != "weight":
            raise ValueError("mc certificates need a weight")
        cell = mzd.spec.delta ** 2
        masses = (masses / cell) ** float(param[1]) * cell
    r_min = 1.0 if mode == "alpha-ball" else mzd.spec.delta
    return certificate_core(mzd.positions(), masses, mode, param,
                            r_min, mzd.spec.L, centers, mzd.spec.L)


def evaluate_at_witness(measure: GridMeasure, cert: Certificate) -> float:
    """Recompute the certified ratio at the stored witness (reproducibility)."""
    mzd = measure.materialize() if measure.is_full_constant else measure
    center = np.asarray([cert.witness_center], dtype=float)
    radii = np.asarray([cert.witness_radius], dtype=float)
    masses = np.asarray(mzd.mass, dtype=float)
    L = mzd.spec.L
    if cert.mode in ("alpha-ball", "alpha-ball-all"):
        table = ball_masses_at(center, mzd.positions(), masses, radii, L)
        return float(table[0, 0]) * cert.witness_radius ** (-cert.param[0])
    if cert.mode == "beta-par":
        table = parbox_masses_at(center, mzd.positions(), masses, radii, L)
        return float(table[0, 0]) * cert.witness_radius ** (-cert.param[0])
    if cert.mode == "mc":
        delta, q = cert.param
        cell = mzd.spec.delta ** 2
        masses = (masses / cell) ** q * cell
        table = parbox_masses_at(center, mzd.positions(), masses, radii, L)
        return float(table[0, 0]) ** (1.0 / q) * \
            cert.witness_radius ** (delta - 3.0 / q)
    raise ValueError(f"no witness evaluation for mode {cert.mode!r}")


# ---------------------------------------------------------------------------
# import/export

def write_measure_csv(measure: GridMeasure, path) -> None:
    m = measure.materialize() if measure.is_full_constant else measure
    with open(path, "w") as fh:
        fh.write("i,j,mass\n")
        for (i, j), w in zip(m.ij, m.mass):
            fh.write(f"{i},{j},{w:.17g}\n")


def read_measure_csv(path, spec: GridSpec, kind: str = "measure") -> GridMeasure:
    with open(path) as fh:
        body = fh.read().strip().splitlines()[1:]
    if body:
        raw = np.loadtxt(body, delimiter=",", ndmin=2)
    else:
        raw = np.empty((0, 3))
    return GridMeasure(spec, raw[:, :2].astype(np.int64), raw[:, 2], kind,
                       label=str(path))
