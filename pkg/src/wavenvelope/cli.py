"""Experiment runner: configured, reproducible pipelines with reports.

A run resolves an ExperimentConfig (key = value file plus command-line
overrides), preflights its memory footprint against a cap, executes the
named pipeline, and reports a JSON summary with CSV sidecars and one
PASS/FAIL line per checked property.  Exit status is 0 iff every check
passed, 1 on a failed check, 2 on a rejected config.  In deterministic
mode two identical runs produce byte-identical reports: nothing
time- or path-dependent enters a report, and every random stream is
seeded from the config.

The module also owns the built-in example families: the field families
paired with weight families for the two-sided inequality sweeps, and the
slope experiments for the weight functional (unit ball, dilated lattice,
two-branch truncated lattice).
"""

import argparse
import csv
import hashlib
import json
import math
import os
import sys
from dataclasses import dataclass, fields as dataclass_fields, replace

import numpy as np

from .envelope import (cap_decompose, kappa_max, sq_norm_from_sq2,
                       verify_weighted_sq, window_profile)
from .decomp import broad_narrow, bilinear_trials, write_constants_csv
from .geometry import mode_cap_index, theta_scale
from .measures import make_weight
from .schrodinger import (FLS_DEFAULT_R, MEASURE_FAMILIES, fit_exponent,
                          fls_experiment, measure_family, nikodym_experiment,
                          rescale_measure)
from .torus import (GridSpec, lp_norm, parabola_band_modes, random_band_field,
                    synthesize)

SCHEMA_VERSION = 1


# ---------------------------------------------------------------------------
# configuration

_LIST_KEYS = {"R", "p"}
_INT_KEYS = {"K", "seed", "trials", "points"}
_FLOAT_KEYS = {"kappa", "alpha", "beta", "lam", "band", "mem_cap_mb"}
_OPT_FLOAT_KEYS = {"c"}
_BOOL_KEYS = {"deterministic"}
_STR_KEYS = {"experiment", "family", "out"}
_PAIR_KEYS = {"tol"}


@dataclass(frozen=True)
class ExperimentConfig:
    """One run's resolved inputs; canonical text form hashes stably.

    Empty R/p/family fall back to per-experiment defaults during
    resolution, and the resolved values are what the report embeds.
    c = None lets each weight family keep its own size default.  tol
    holds named tolerance overrides as (name, value) pairs.
    """

    experiment: str = ""
    R: tuple = ()
    p: tuple = ()
    K: int = 4
    family: str = ""
    kappa: float = 1.0 / 3.0
    alpha: float = 1.5
    beta: float = 1.0
    c: float | None = None
    lam: float = 1.0
    seed: int = 0
    trials: int = 25
    points: int = 10000
    band: float = 0.1
    tol: tuple = ()
    out: str = ""
    deterministic: bool = False
    mem_cap_mb: float = 3500.0

    def tol_value(self, name: str, default: float) -> float:
        for key, val in self.tol:
            if key == name:
                return float(val)
        return default

    def canonical(self) -> str:
        lines = []
        for f in dataclass_fields(self):
            lines.append(f"{f.name} = {_format_value(f.name, getattr(self, f.name))}")
        return "\n".join(lines) + "\n"

    def content_hash(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()

    def to_dict(self) -> dict:
        out = {}
        for f in dataclass_fields(self):
            v = getattr(self, f.name)
            out[f.name] = list(v) if isinstance(v, tuple) else v
        out["tol"] = [[k, v] for k, v in self.tol]
        return out

    def write(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.canonical())


def _format_value(key: str, v) -> str:
    if key in _LIST_KEYS:
        return ",".join(repr(x) if isinstance(x, float) else str(x) for x in v)
    if key in _PAIR_KEYS:
        return ",".join(f"{k}:{repr(float(x))}" for k, x in v) or "none"
    if key in _OPT_FLOAT_KEYS:
        return "none" if v is None else repr(float(v))
    if key in _BOOL_KEYS:
        return "true" if v else "false"
    if key in _FLOAT_KEYS:
        return repr(float(v))
    return str(v)


def _parse_value(key: str, text: str):
    text = text.strip()
    if key in _LIST_KEYS:
        if not text:
            return ()
        vals = [float(x) for x in text.split(",")]
        if key == "R":
            return tuple(int(x) for x in vals)
        return tuple(vals)
    if key in _PAIR_KEYS:
        if text == "none" or not text:
            return ()
        pairs = []
        for item in text.split(","):
            name, _, val = item.partition(":")
            if not _:
                raise ValueError(f"tolerance override needs name:value, got {item!r}")
            pairs.append((name.strip(), float(val)))
        return tuple(sorted(pairs))
    if key in _OPT_FLOAT_KEYS:
        return None if text == "none" else float(text)
    if key in _BOOL_KEYS:
        if text not in ("true", "false"):
            raise ValueError(f"{key} must be true or false, got {text!r}")
        return text == "true"
    if key in _INT_KEYS:
        return int(text)
    if key in _FLOAT_KEYS:
        return float(text)
    return text


_CONFIG_KEYS = {f.name for f in dataclass_fields(ExperimentConfig)}


def parse_config_text(text: str) -> dict:
    """key = value lines to a field dict; '#' starts a comment."""
    out = {}
    for ln, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, eq, val = line.partition("=")
        key = key.strip()
        if not eq:
            raise ValueError(f"line {ln}: expected key = value, got {raw!r}")
        if key not in _CONFIG_KEYS:
            raise ValueError(f"line {ln}: unknown config key {key!r}")
        out[key] = _parse_value(key, val)
    return out


def read_config(path) -> ExperimentConfig:
    with open(path) as fh:
        return ExperimentConfig(**parse_config_text(fh.read()))


# ---------------------------------------------------------------------------
# built-in field and pair families

def flat_field(spec: GridSpec):
    """Every band mode with amplitude 1: mass piles up at the origin."""
    modes = parabola_band_modes(spec)
    return synthesize(modes, np.ones(len(modes)), spec)


def knapp_field(spec: GridSpec):
    """One finest cap, one mode per column, smooth profile, sum 1."""
    s = theta_scale(spec.R)
    modes = parabola_band_modes(spec)
    xi = spec.freq_step * modes
    keep = np.abs(xi[:, 0]) <= 0.5 * s
    modes, xi = modes[keep], xi[keep]
    cols = {}
    for i in range(len(modes)):
        n1 = int(modes[i, 0])
        d = abs(xi[i, 1] - xi[i, 0] ** 2)
        if n1 not in cols or d < cols[n1][0]:
            cols[n1] = (d, i)
    idx = sorted(i for _, i in cols.values())
    modes = modes[idx]
    amps = window_profile(spec.freq_step * modes[:, 0] / s)
    return synthesize(modes, amps / amps.sum(), spec)


def spread_field(spec: GridSpec, seed):
    """One unit-modulus mode per finest cap, phases from the seed.

    Per cap the mode nearest the cap center on the parabola, so the cap
    pieces are singletons and the square function is flat.
    """
    s = theta_scale(spec.R)
    modes = parabola_band_modes(spec)
    ki = mode_cap_index(modes, spec, s)
    xi = spec.freq_step * modes
    score = np.abs(xi[:, 1] - xi[:, 0] ** 2) + np.abs(xi[:, 0] - ki * s)
    pick = {}
    for i in range(len(modes)):
        k = int(ki[i])
        if k not in pick or score[i] < score[pick[k]]:
            pick[k] = i
    idx = sorted(pick.values())
    rng = np.random.default_rng(seed)
    phases = np.exp(2j * np.pi * rng.random(len(idx)))
    return synthesize(modes[idx], phases, spec)


FIELD_FAMILIES = ("random", "flat", "knapp", "spread")


def make_field(family: str, spec: GridSpec, seed=0):
    if family == "random":
        return random_band_field(spec, seed)
    if family == "flat":
        return flat_field(spec)
    if family == "knapp":
        return knapp_field(spec)
    if family == "spread":
        return spread_field(spec, seed)
    raise ValueError(f"unknown field family {family!r}; have {FIELD_FAMILIES}")


# Each pair fixes its weight parameters so a sweep is reproducible without
# extra knobs.  p is the default exponent for the pair's ratio run.
PAIR_FAMILIES = {
    "random:constant": ("random", "constant", {}, 4.0),
    "random:ball": ("random", "ball", {}, 3.0),
    "flat:ball": ("flat", "ball", {}, 3.0),
    "knapp:constant": ("knapp", "constant", {}, 4.0),
    "knapp:dual-tube": ("knapp", "dual-tube", {"alpha": 1.0, "k": 0}, 4.0),
    "spread:constant": ("spread", "constant", {}, 4.0),
    "random:lattice": ("random", "lattice", {"kappa": 1.0 / 3.0, "c": 0.45}, 3.0),
    "random:parabolic-box": ("random", "parabolic-box",
                             {"boxes": ((0.0, 0.0, 2.0), (8.0, 3.0, 1.0))}, 4.0),
}


def pair_report(pair: str, R: int, p: float | None = None, seed=0):
    """verify_weighted_sq for one built-in (field, weight) pair."""
    if pair not in PAIR_FAMILIES:
        raise ValueError(f"unknown pair {pair!r}; have {sorted(PAIR_FAMILIES)}")
    ffam, wfam, params, p_default = PAIR_FAMILIES[pair]
    spec = GridSpec(R)
    field = make_field(ffam, spec, seed)
    H = make_weight(wfam, spec, **params)
    return verify_weighted_sq(field, H, p if p is not None else p_default)


def pair_growth_fit(pair: str, R_values=(64, 256, 1024), p: float | None = None,
                    seed=0, band: float = 0.1):
    """Growth exponent of lhs^p / envelope sum for one pair.

    The theorem allows at most logarithmic growth, so the fitted slope
    is compared one-sidedly against 0.
    """
    ratios = [pair_report(pair, R, p, seed).ratio_env for R in R_values]
    p_eff = p if p is not None else PAIR_FAMILIES[pair][3]
    return fit_exponent(f"weighted-env-{pair}-p{p_eff:g}", "gamma", R_values,
                        ratios, 0.0, band=band, sided="upper")


# ---------------------------------------------------------------------------
# weight-functional slope families

def unit_ball_fits(p_values=(2.0, 3.0, 4.0), R_values=(64, 256, 1024),
                   band: float = 0.1):
    """Unit-ball weight against the flat field over a grid of R.

    Per p two fits: the norm ratio ||f||_{L^p(1_B)} / ||S||_p and the
    weight functional maximum, both predicted to fall like
    R^(-2 (1/p - 1/4)).
    """
    ratios = {p: [] for p in p_values}
    kappas = {p: [] for p in p_values}
    for R in R_values:
        spec = GridSpec(R)
        f = flat_field(spec)
        H = make_weight("ball", spec)
        m = min(spec.M, 2 * R)
        S2 = np.zeros((m, m))
        dec = cap_decompose(f, theta_scale(R))
        for k in dec.caps():
            a = np.abs(dec.pieces[k].samples_on(m, cache=False))
            S2 += a * a
        for p in p_values:
            lhs = lp_norm(f, p, measure=H)
            ratios[p].append(lhs / sq_norm_from_sq2(S2, spec.L, p))
            kappas[p].append(kappa_max(H, p)[0])
    fits = []
    for p in p_values:
        pred = -2.0 * (1.0 / p - 0.25)
        fits.append(fit_exponent(f"unit-ball-norm-p{p:g}", "sigma", R_values,
                                 ratios[p], pred, band=band))
        fits.append(fit_exponent(f"unit-ball-kappa-p{p:g}", "sigma", R_values,
                                 kappas[p], pred, band=band))
    return fits


def alpha_lattice_fits(p_values=(2.0, 3.0, 4.0), R_values=(64, 256, 1024),
                       kappa: float = 1.0 / 3.0, c: float = 0.45,
                       band: float = 0.1):
    """Dilated-lattice weight: functional decay bounded by the dimension.

    The fattened lattice of pitch (R^kappa, R^(2 kappa)) in a ball of
    radius c R carries dimension alpha = 2 - 3 kappa; the functional
    maximum may fall faster than R^(-(2 - alpha)(1/p - 1/4)) but not
    slower, so the comparison is one-sided.
    """
    alpha = 2.0 - 3.0 * kappa
    weights = {R: make_weight("lattice", GridSpec(R), kappa=kappa, c=c)
               for R in R_values}
    fits = []
    for p in p_values:
        vals = [kappa_max(weights[R], p)[0] for R in R_values]
        pred = -(2.0 - alpha) * (1.0 / p - 0.25)
        fits.append(fit_exponent(f"alpha-lattice-kappa-p{p:g}", "sigma",
                                 R_values, vals, pred, band=band,
                                 sided="upper"))
    return fits


def y_lattice_fits(p_values=(2.0, 2.5, 3.0, 4.0),
                   R_values=(4096, 16384, 65536), alpha: float = 1.5,
                   c: float = 0.25, band: float = 0.1):
    """Two-branch exponents of the truncated corner-window lattice.

    Below the crossover p = 4/(3 - alpha) the tube piece drives the
    functional and the slope is -(2 - alpha)/(2p); above it the ball
    piece takes over with -((3 - alpha)/2)(1/p - 1/4).
    """
    weights = {R: make_weight("truncated-lattice", GridSpec(R), alpha=alpha,
                              c=c) for R in R_values}
    p_cross = 4.0 / (3.0 - alpha)
    fits = []
    for p in p_values:
        vals = [kappa_max(weights[R], p)[0] for R in R_values]
        if p <= p_cross:
            pred = -(2.0 - alpha) / (2.0 * p)
        else:
            pred = -((3.0 - alpha) / 2.0) * (1.0 / p - 0.25)
        fits.append(fit_exponent(f"y-lattice-kappa-p{p:g}", "sigma", R_values,
                                 vals, pred, band=band))
    return fits


# ---------------------------------------------------------------------------
# memory preflight

class PreflightError(RuntimeError):
    def __init__(self, estimate_mb: float, cap_mb: float):
        self.estimate_mb = estimate_mb
        self.cap_mb = cap_mb
        super().__init__(
            f"estimated peak {estimate_mb:.0f} MiB exceeds the configured "
            f"cap {cap_mb:.0f} MiB")


# Bytes per subgrid cell in the verification pass (pieces, squares, one
# accumulator per scale) and per streamed block cell; both calibrated
# against traced allocation peaks at R = 64..1024.
_VERIFY_CELL_BYTES = 104
_BLOCK_CELL_BYTES = 48
_BLOCK_CELLS = 4e6


def _verify_peak_bytes(R: int, weight_family: str) -> float:
    M = 8 * R
    m = min(M, 2 * R)
    cap_pass = _VERIFY_CELL_BYTES * m * m \
        + _BLOCK_CELL_BYTES * min(_BLOCK_CELLS, m * m)
    # the full-grid quadrature against a dense weight holds the synthesis
    # array and its transform at once
    dense = 32 * M * M if weight_family == "constant" else 0
    # the dual-tube support scan walks the full grid in blocks
    tube = 64 * min(_BLOCK_CELLS, M * M) + M * M / 8 \
        if weight_family == "dual-tube" else 0
    return max(cap_pass, dense, tube)


def preflight_mb(cfg: "ExperimentConfig") -> float:
    """Estimated peak allocation for the resolved config, in MiB."""
    R_max = max(cfg.R) if cfg.R else 1024
    exp = cfg.experiment
    if exp in ("square-verify", "envelope-verify"):
        est = _verify_peak_bytes(R_max, cfg.family.partition(":")[2])
    elif exp == "examples-suite":
        est = max(_verify_peak_bytes(1024, ""), 4e8)
    elif exp == "kappa-scan":
        est = 6e7
    elif exp == "broad-narrow":
        # point evaluation streams 2e7-entry phase blocks
        est = 5e8
    elif exp == "bilinear":
        est = 2e8
    elif exp == "schrodinger-fls":
        est = 4e8
    elif exp == "certificates":
        est = 2e8
    else:
        est = 2e8
    return est / 2 ** 20


# ---------------------------------------------------------------------------
# the experiments

def _check(name: str, passed: bool, detail: str) -> dict:
    return {"name": name, "passed": bool(passed), "detail": detail}


def _fit_check(fit) -> dict:
    return _check(f"fit:{fit.name}", fit.passed,
                  f"slope {fit.slope:+.4f} vs {fit.prediction:+.4f} "
                  f"({fit.sided}, band {fit.band:g})")


def _run_kappa_scan(cfg):
    rows, checks = [], []
    worst = 0.0
    for R in cfg.R:
        spec = GridSpec(R)
        H = _scan_weight(cfg, spec)
        for p in cfg.p:
            val, wit = kappa_max(H, p)
            row = {"R": R, "p": p, "family": cfg.family, "measured": val,
                   "witness_s": wit["s"], "witness_k": wit["k"],
                   "witness_z1": wit["z1"], "witness_z2": wit["z2"]}
            if cfg.family == "constant":
                pred = cfg.lam ** (1.0 / p)
                row["predicted"] = pred
                row["ratio"] = val / pred if pred > 0 else math.inf
                worst = max(worst, abs(val - pred))
            rows.append(row)
    if cfg.family == "constant":
        tol = cfg.tol_value("kappa-identity", 1e-12)
        checks.append(_check("kappa-constant-identity", worst <= tol,
                             f"max |kappa - lam^(1/p)| = {worst:.3g}"))
    else:
        finite = all(math.isfinite(r["measured"]) for r in rows)
        checks.append(_check("kappa-finite", finite,
                             f"{len(rows)} values, all finite" if finite
                             else "non-finite functional value"))
    return rows, [], checks


def _scan_weight(cfg, spec):
    fam = cfg.family
    if fam == "constant":
        return make_weight(fam, spec, lam=cfg.lam)
    if fam == "ball":
        return make_weight(fam, spec, rho=cfg.c if cfg.c is not None else 1.0)
    if fam == "dual-tube":
        return make_weight(fam, spec, alpha=cfg.alpha)
    if fam == "lattice":
        kw = {"kappa": cfg.kappa}
        if cfg.c is not None:
            kw["c"] = cfg.c
        return make_weight(fam, spec, **kw)
    if fam == "truncated-lattice":
        kw = {"alpha": cfg.alpha}
        if cfg.c is not None:
            kw["c"] = cfg.c
        return make_weight(fam, spec, **kw)
    raise ValueError(f"kappa-scan has no weight family {fam!r}")


def _pair_rows(cfg, ratio_key: str):
    """Shared body of the two verification experiments."""
    if cfg.family not in PAIR_FAMILIES:
        raise ValueError(
            f"unknown pair {cfg.family!r}; have {sorted(PAIR_FAMILIES)}")
    rows, fits, checks = [], [], []
    p_values = cfg.p or (PAIR_FAMILIES[cfg.family][3],)
    for p in p_values:
        ratios = []
        for R in cfg.R:
            rep = pair_report(cfg.family, R, p, cfg.seed)
            ratios.append(getattr(rep, ratio_key))
            rows.append({"R": R, "p": p, "family": cfg.family,
                         "lhs": rep.lhs, "sq_norm": rep.sq_norm,
                         "kappa_max": rep.kappa_max, "sq_rhs": rep.sq_rhs,
                         "env_rhs": rep.env_rhs, "ratio_sq": rep.ratio_sq,
                         "ratio_env": rep.ratio_env,
                         "measured": getattr(rep, ratio_key),
                         "zero_field": rep.zero_field})
            if cfg.out and ratio_key == "ratio_env":
                rep.write_terms_csv(os.path.join(
                    cfg.out, f"{cfg.experiment}_{cfg.family.replace(':', '-')}"
                    f"_R{R}_p{p:g}_terms.csv"))
        finite = all(math.isfinite(r) and r >= 0 for r in ratios)
        checks.append(_check(f"{ratio_key}-finite-p{p:g}", finite,
                             f"ratios {['%.3g' % r for r in ratios]}"))
        if len(cfg.R) >= 3:
            fit = fit_exponent(
                f"{cfg.experiment}-{cfg.family}-p{p:g}", "gamma", cfg.R,
                ratios, 0.0, band=cfg.band, sided="upper")
            fits.append(fit)
            checks.append(_fit_check(fit))
    return rows, fits, checks


def _run_square_verify(cfg):
    return _pair_rows(cfg, "ratio_sq")


def _run_envelope_verify(cfg):
    return _pair_rows(cfg, "ratio_env")


def _run_broad_narrow(cfg):
    rows, checks = [], []
    p = cfg.p[0]
    total_violations = 0
    worst = 0.0
    for R in cfg.R:
        spec = GridSpec(R)
        rng = np.random.default_rng(cfg.seed + R)
        for t in range(cfg.trials):
            f = random_band_field(spec, seed=int(rng.integers(2 ** 31)),
                                  density=0.5)
            pts = rng.uniform(0.0, spec.L, size=(cfg.points, 2))
            rep = broad_narrow(f, pts, p, cfg.K)
            viol = int(np.sum(rep.lhs > rep.bound))
            total_violations += viol
            worst = max(worst, rep.max_empirical)
            rows.append({"R": R, "p": p, "K": cfg.K, "trial": t,
                         "points": cfg.points, "violations": viol,
                         "max_empirical": rep.max_empirical,
                         "C_certified": rep.C_certified})
    checks.append(_check("pointwise-split-violations", total_violations == 0,
                         f"{total_violations} violations over "
                         f"{len(rows)} fields, max empirical constant "
                         f"{worst:.4g}"))
    return rows, [], checks


def _run_bilinear(cfg):
    rows, checks = [], []
    by_scale = {}
    all_finite = True
    l4_ok = True
    for R_s in cfg.R:
        reports = bilinear_trials(R_s, cfg.K, cfg.trials, seed=cfg.seed)
        if cfg.out:
            write_constants_csv(reports, os.path.join(
                cfg.out, f"bilinear_R{R_s}_K{cfg.K}_constants.csv"))
        c_l4 = []
        for rep in reports:
            ok = all(math.isfinite(v) for v in
                     (rep.C_bil, rep.C_l4, rep.C_orth1, rep.C_orth2))
            all_finite = all_finite and ok
            denom = rep.max_cell_ratio * (rep.norm1_w * rep.norm2_w) ** 2 \
                / rep.R_s ** 2
            holds = rep.int_BY <= rep.C_l4 * denom * (1 + 1e-9) + 1e-12
            l4_ok = l4_ok and holds
            c_l4.append(rep.C_l4)
            rows.append({"R": R_s, "K": cfg.K, "pair_id": rep.pair_id,
                         "s": rep.s, "C_bil": rep.C_bil, "C_l4": rep.C_l4,
                         "max_cell_ratio": rep.max_cell_ratio,
                         "int_BY": rep.int_BY, "l4_holds": holds})
        by_scale[R_s] = float(np.median(c_l4))
    checks.append(_check("bilinear-constants-finite", all_finite,
                         f"{len(rows)} trials"))
    checks.append(_check("bilinear-l4-inequality", l4_ok,
                         "cell-ratio bound holds in every trial" if l4_ok
                         else "cell-ratio bound violated"))
    if len(cfg.R) >= 2:
        meds = [by_scale[R] for R in cfg.R]
        var = max(meds) / min(meds) if min(meds) > 0 else math.inf
        factor = cfg.tol_value("variation-factor", 4.0)
        checks.append(_check("bilinear-variation", var <= factor,
                             f"median constant varies x{var:.2f} across "
                             f"R (cap x{factor:g})"))
    return rows, [], checks


def _run_schrodinger_fls(cfg):
    rows, fits, checks = [], [], []
    names = (cfg.family,) if cfg.family else \
        ("chirp", "packet", "lattice", "nikodym")
    for name in names:
        if name == "nikodym":
            for q in cfg.p:
                fits.append(nikodym_experiment(
                    q, cfg.R or (64, 256, 1024), seed=cfg.seed))
        elif name == "packet":
            for p in cfg.p:
                fits.append(fls_experiment(
                    "packet", p, R_values=cfg.R or None, alpha=cfg.alpha,
                    band=cfg.band, seed=cfg.seed))
        elif name in ("chirp", "lattice"):
            for p in cfg.p:
                fits.append(fls_experiment(
                    name, p, R_values=cfg.R or None, kappa=cfg.kappa,
                    band=cfg.band, seed=cfg.seed))
        else:
            raise ValueError(f"unknown lower-bound family {name!r}")
    for fit in fits:
        checks.append(_fit_check(fit))
        for R, lr in zip(fit.R_values, fit.log_ratios):
            rows.append({"R": R, "family": fit.name,
                         "measured": math.exp(lr)})
        if cfg.out:
            fit.write_json(os.path.join(cfg.out, f"fit_{fit.name}.json"))
    return rows, [fit.to_dict() for fit in fits], checks


def _run_certificates(cfg):
    rows, checks = [], []
    names = (cfg.family,) if cfg.family else MEASURE_FAMILIES
    factor = cfg.tol_value("measure-factor", 8.0)
    ok = True
    for name in names:
        pos, masses, beta, alpha, spacing = measure_family(name)
        for R in cfg.R:
            _, comps = rescale_measure(pos, masses, R, beta=beta, alpha=alpha,
                                       spacing=spacing)
            for comp in comps:
                good = 0.0 < comp["ratio"] <= factor
                ok = ok and good
                rows.append({"family": name, "R": R, "kind": comp["kind"],
                             "param": comp["param"],
                             "target_index": comp["target_index"],
                             "base_norm": comp["base_norm"],
                             "measured": comp["measured"],
                             "ratio": comp["ratio"], "within": good})
            if cfg.out:
                path = os.path.join(cfg.out, f"certificates_{name}_R{R}.json")
                with open(path, "w") as fh:
                    json.dump(comps, fh, sort_keys=True, indent=1)
                    fh.write("\n")
    checks.append(_check("measure-bounds", ok,
                         f"{len(rows)} comparisons within x{factor:g}" if ok
                         else f"a comparison left (0, {factor:g}]"))
    return rows, [], checks


def _run_examples_suite(cfg):
    """Every example family as one exponent fit each, canonical grids."""
    R_kappa = cfg.R or (64, 256, 1024)
    p_main = cfg.p or (2.0, 3.0, 4.0)
    fits = []
    fits += unit_ball_fits(p_main, R_kappa, band=cfg.band)
    fits += alpha_lattice_fits(p_main, R_kappa, kappa=1.0 / 3.0, c=0.45,
                               band=cfg.band)
    fits += y_lattice_fits(band=cfg.band)
    for p in (3.0, 4.0):
        fits.append(fls_experiment("chirp", p, band=cfg.band, seed=cfg.seed))
    for alpha in (0.5, 1.5):
        fits.append(fls_experiment("packet", 4.0, alpha=alpha, band=cfg.band,
                                   seed=cfg.seed))
    for p in (3.0, 4.0):
        fits.append(fls_experiment("lattice", p, band=cfg.band,
                                   seed=cfg.seed))
    for q in (2.0, 4.0):
        fits.append(nikodym_experiment(q, (64, 256, 1024), seed=cfg.seed))
    rows, checks = [], []
    for fit in fits:
        checks.append(_fit_check(fit))
        for R, lr in zip(fit.R_values, fit.log_ratios):
            rows.append({"R": R, "family": fit.name, "measured": math.exp(lr)})
        if cfg.out:
            fit.write_json(os.path.join(cfg.out, f"fit_{fit.name}.json"))
    return rows, [fit.to_dict() for fit in fits], checks


EXPERIMENTS = {
    "kappa-scan": _run_kappa_scan,
    "square-verify": _run_square_verify,
    "envelope-verify": _run_envelope_verify,
    "broad-narrow": _run_broad_narrow,
    "bilinear": _run_bilinear,
    "schrodinger-fls": _run_schrodinger_fls,
    "certificates": _run_certificates,
    "examples-suite": _run_examples_suite,
}

_DEFAULTS = {
    "kappa-scan": {"R": (64, 256), "p": (2.0, 3.0, 4.0),
                   "family": "constant"},
    "square-verify": {"R": (64, 256), "family": "random:constant"},
    "envelope-verify": {"R": (64, 256), "family": "random:constant"},
    "broad-narrow": {"R": (64, 256), "p": (4.0,), "trials": 10},
    "bilinear": {"R": (64, 256)},
    "schrodinger-fls": {"p": (3.0, 4.0)},
    "certificates": {"R": (64, 256)},
    "examples-suite": {},
}


def resolve(cfg: ExperimentConfig) -> ExperimentConfig:
    """Fill experiment defaults for empty R/p/family fields."""
    if cfg.experiment not in EXPERIMENTS:
        raise ValueError(f"unknown experiment {cfg.experiment!r}; have "
                         f"{sorted(EXPERIMENTS)}")
    updates = {}
    for key, val in _DEFAULTS[cfg.experiment].items():
        if not getattr(cfg, key):
            updates[key] = val
    return replace(cfg, **updates) if updates else cfg


# ---------------------------------------------------------------------------
# reports

@dataclass
class Report:
    experiment: str
    config: dict
    config_hash: str
    preflight_mb: float
    rows: list
    fits: list
    checks: list
    schema: int = SCHEMA_VERSION

    @property
    def passed(self) -> bool:
        return all(c["passed"] for c in self.checks)

    def to_dict(self) -> dict:
        return {"schema": self.schema, "experiment": self.experiment,
                "config": self.config, "config_hash": self.config_hash,
                "preflight_mb": round(self.preflight_mb, 3),
                "rows": self.rows, "fits": self.fits, "checks": self.checks,
                "passed": self.passed}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1) + "\n"

    def check_lines(self) -> list:
        return [f"{'PASS' if c['passed'] else 'FAIL'} {c['name']}: "
                f"{c['detail']}" for c in self.checks]


def run(cfg: ExperimentConfig) -> Report:
    cfg = resolve(cfg)
    est = preflight_mb(cfg)
    if est > cfg.mem_cap_mb:
        raise PreflightError(est, cfg.mem_cap_mb)
    if cfg.out:
        os.makedirs(cfg.out, exist_ok=True)
    rows, fits, checks = EXPERIMENTS[cfg.experiment](cfg)
    return Report(experiment=cfg.experiment, config=cfg.to_dict(),
                  config_hash=cfg.content_hash(), preflight_mb=est,
                  rows=rows, fits=fits, checks=checks)


_MD_COLUMNS = ("R", "p", "measured", "predicted", "ratio")


def _cell(value) -> str:
    if value is None:
        return "-"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return f"{value:.6g}"
    return str(value)


def emit(report: Report, fmt: str, out_dir) -> list:
    """Write the report in one format; returns the created paths.

    json is the canonical machine-readable summary, csv adds the row and
    fit tables as sidecars, md renders the measured-vs-predicted table.
    All three are byte-stable for a fixed resolved config.
    """
    os.makedirs(out_dir, exist_ok=True)
    base = os.path.join(out_dir, report.experiment)
    paths = []
    if fmt == "json":
        path = base + ".json"
        with open(path, "w") as fh:
            fh.write(report.to_json())
        paths.append(path)
    elif fmt == "csv":
        paths.append(_write_rows_csv(base + "_rows.csv", report.rows))
        paths.append(_write_rows_csv(base + "_fits.csv", report.fits))
    elif fmt == "md":
        path = base + ".md"
        with open(path, "w") as fh:
            fh.write(_render_md(report))
        paths.append(path)
    else:
        raise ValueError(f"unknown format {fmt!r}; have json, csv, md")
    return paths


def _write_rows_csv(path, rows) -> str:
    cols = sorted({k for row in rows for k in row}) if rows \
        else list(_MD_COLUMNS)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(cols)
        for row in rows:
            writer.writerow([_csv_cell(row.get(k)) for k in cols])
    return path


def _csv_cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return f"{value:.17g}"
    if isinstance(value, (list, tuple)):
        return ";".join(_csv_cell(v) for v in value)
    return str(value)


def _render_md(report: Report) -> str:
    lines = [f"# {report.experiment}", "",
             f"config `{report.config_hash[:16]}`, schema {report.schema}, "
             f"preflight {report.preflight_mb:.1f} MiB", ""]
    lines += ["| " + " | ".join(_MD_COLUMNS) + " |",
              "|" + "---|" * len(_MD_COLUMNS)]
    for row in report.rows:
        lines.append("| " + " | ".join(
            _cell(row.get(k)) for k in _MD_COLUMNS) + " |")
    if report.fits:
        lines += ["", "| fit | measured | predicted | band | sided | pass |",
                  "|---|---|---|---|---|---|"]
        for fit in report.fits:
            lines.append(
                f"| {fit['name']} | {fit['slope']:+.4f} "
                f"| {fit['prediction']:+.4f} | {fit['band']:g} "
                f"| {fit['sided']} | {'yes' if fit['passed'] else 'no'} |")
    lines += ["", ""]
    lines += [f"- {line}" for line in report.check_lines()]
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# command line

def _add_flags(sp):
    sp.add_argument("--config", help="key = value config file")
    sp.add_argument("--R", help="comma-separated scale list")
    sp.add_argument("--p", help="comma-separated exponent list")
    sp.add_argument("--K", type=int)
    sp.add_argument("--family")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--deterministic", action="store_true")
    sp.add_argument("--out")
    sp.add_argument("--kappa", type=float)
    sp.add_argument("--alpha", type=float)
    sp.add_argument("--beta", type=float)
    sp.add_argument("--c", type=float)
    sp.add_argument("--lam", type=float)
    sp.add_argument("--trials", type=int)
    sp.add_argument("--points", type=int)
    sp.add_argument("--band", type=float)
    sp.add_argument("--tol", help="name:value,... tolerance overrides")
    sp.add_argument("--mem-cap-mb", type=float, dest="mem_cap_mb")
    sp.add_argument("--format", default="json,csv",
                    help="any of json,csv,md (comma-separated)")


_EXPERIMENT_HELP = {
    "kappa-scan": "weight functional maxima over a weight family",
    "square-verify": "first-power square-function inequality ratios",
    "envelope-verify": "envelope-sum inequality ratios and growth",
    "broad-narrow": "pointwise split certificate on random fields",
    "bilinear": "bilinear constants over random separated pairs",
    "schrodinger-fls": "propagator lower-bound slope families",
    "certificates": "rescaled-measure dimension bounds",
    "examples-suite": "every example family as one exponent fit",
}


def config_from_args(args) -> ExperimentConfig:
    base = {}
    if args.config:
        with open(args.config) as fh:
            base = parse_config_text(fh.read())
    base["experiment"] = args.experiment
    for key in ("K", "family", "seed", "out", "kappa", "alpha", "beta",
                "c", "lam", "trials", "points", "band", "mem_cap_mb"):
        val = getattr(args, key)
        if val is not None:
            base[key] = val
    for key in ("R", "p", "tol"):
        val = getattr(args, key)
        if val is not None:
            base[key] = _parse_value(key, val)
    if args.deterministic:
        base["deterministic"] = True
    return ExperimentConfig(**base)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="wavenvelope",
        description="experiment runner for the envelope toolkit")
    sub = parser.add_subparsers(dest="experiment", required=True)
    for name, text in _EXPERIMENT_HELP.items():
        _add_flags(sub.add_parser(name, help=text))
    args = parser.parse_args(argv)
    try:
        cfg = config_from_args(args)
        if cfg.deterministic:
            os.environ["OMP_NUM_THREADS"] = "1"
        report = run(cfg)
    except (OSError, ValueError, PreflightError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    for line in report.check_lines():
        print(line)
    if cfg.out:
        for fmt in args.format.split(","):
            for path in emit(report, fmt.strip(), cfg.out):
                print(f"wrote {path}")
    return 0 if report.passed else 1


if __name__ == "__main__":
    sys.exit(main())
