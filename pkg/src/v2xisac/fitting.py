"""Parameter extraction from ray-traced link samples.

Pipeline: estimate node densities by averaging counts over realizations,
fit log-distance path-loss laws by least squares in the log-log domain
(mixed and LoS/NLoS-separated), fit the d2 parameter of the LoS-probability
model with d1 pinned to the link's minimum parallel distance, and classify
the small-scale fading from the ratio between observed powers and the
fitted law.

Received powers are regressed as

    [S]_dB = ref_power_db - beta_db - 10 * alpha * log10(r)

where ``ref_power_db`` is the known transmit-side constant
10*log10(P * G * c^2 / (4 pi f_c^2)) in dB re 1 W.  Fitting the model with a
negative slope and reporting the positive exponent keeps the reported
(alpha, beta) directly comparable with the propagation laws.  Zero-power
rows cannot enter a dB-domain fit; they are excluded and counted.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize_scalar

from .propagation import FadingSpec, los_probability


@dataclass(frozen=True)
class LinkObservation:
    """One per-link, per-realization power sample from the tracer.

    Interference rows are per-interferer powers, not aggregates.
    """

    kind: str  # 'radar' | 'comm' | 'interference'
    r: float  # m
    power: float  # W
    los: bool | None = None
    realization: int = 0

    def __post_init__(self):
        if self.kind not in ("radar", "comm", "interference"):
            raise ValueError(f"unknown link kind {self.kind!r}")
        if self.r <= 0.0:
            raise ValueError(f"distance must be > 0, got {self.r}")
        if self.power < 0.0:
            raise ValueError(f"power must be >= 0, got {self.power}")


@dataclass(frozen=True)
class FitResult:
    alpha_hat: float
    beta_hat_db: float
    rms_db: float
    n: int
    n_excluded: int = 0
    ref_power_db: float = 0.0

    def power_db(self, r):
        """Fitted received power at distance r, dB re 1 W."""
        return self.ref_power_db - self.beta_hat_db - 10.0 * self.alpha_hat * np.log10(r)


@dataclass(frozen=True)
class DensityEstimate:
    value: float  # 1/m
    ci_low: float
    ci_high: float
    n_realizations: int


def fit_path_loss(observations, ref_power_db=0.0) -> FitResult:
    """Ordinary least squares of [S]_dB against 10*log10(r).

    Needs at least two distinct distances with positive power; a design
    with all distances equal is a rank error.
    """
    rows = [(o.r, o.power) for o in observations]
    kept = [(r, p) for r, p in rows if p > 0.0]
    n_excluded = len(rows) - len(kept)
    if len(kept) < 2:
        raise ValueError(f"need >= 2 positive-power observations, got {len(kept)}")
    r = np.array([k[0] for k in kept])
    p = np.array([k[1] for k in kept])
    x = 10.0 * np.log10(r)
    y = 10.0 * np.log10(p)
    var_x = float(np.var(x))
    if var_x <= 1e-20:
        raise ValueError("degenerate design: all distances equal")
    slope = float(np.cov(x, y, bias=True)[0, 1] / var_x)
    intercept = float(np.mean(y) - slope * np.mean(x))
    resid = y - (intercept + slope * x)
    return FitResult(
        alpha_hat=-slope,
        beta_hat_db=ref_power_db - intercept,
        rms_db=float(np.sqrt(np.mean(resid**2))),
        n=len(kept),
        n_excluded=n_excluded,
        ref_power_db=ref_power_db,
    )


def split_and_fit(observations, ref_power_db=0.0) -> dict:
    """Mixed / LoS / NLoS fits; subsets too small to fit come back None."""
    out = {}
    subsets = {
        "mixed": list(observations),
        "los": [o for o in observations if o.los is True],
        "nlos": [o for o in observations if o.los is False],
    }
    for name, subset in subsets.items():
        try:
            out[name] = fit_path_loss(subset, ref_power_db)
        except ValueError:
            out[name] = None
    return out


def fit_los_d2(observations, d1, bracket=(0.05, 1e5), binned=False, n_bins=20):
    """Least-squares fit of the d2 parameter of the LoS-probability model
    against per-sample LoS indicators (or binned frequencies).

    d1 is held fixed.  All-LoS or all-NLoS data pins the optimum to a
    bracket edge, which is returned with a warning.
    """
    data = [(o.r, o.los) for o in observations if o.los is not None]
    if not data:
        raise ValueError("no observations with LoS flags")
    r = np.array([d[0] for d in data])
    ell = np.array([float(d[1]) for d in data])

    if binned:
        edges = np.geomspace(r.min(), r.max() * (1 + 1e-12), n_bins + 1)
        idx = np.clip(np.searchsorted(edges, r, side="right") - 1, 0, n_bins - 1)
        counts = np.bincount(idx, minlength=n_bins)
        good = counts > 0
        r_fit = np.bincount(idx, weights=r, minlength=n_bins)[good] / counts[good]
        ell_fit = np.bincount(idx, weights=ell, minlength=n_bins)[good] / counts[good]
        w = counts[good].astype(float)
    else:
        r_fit, ell_fit, w = r, ell, np.ones_like(ell)

    def objective(d2):
        return float(np.sum(w * (ell_fit - los_probability(r_fit, d1, d2)) ** 2))

    lo, hi = bracket
    grid = np.geomspace(lo, hi, 96)
    best = grid[int(np.argmin([objective(g) for g in grid]))]
    if ell.min() == ell.max():
        edge = hi if ell[0] == 1.0 else lo
        warnings.warn("degenerate LoS data (all identical indicators); returning bracket edge")
        return float(edge)
    res = minimize_scalar(objective, bounds=(max(lo, best / 8), min(hi, best * 8)),
                          method="bounded", options={"xatol": best * 1e-7})
    d2_hat = float(res.x)
    if d2_hat <= lo * 1.05 or d2_hat >= hi * 0.95:
        warnings.warn(f"d2 fit at bracket edge ({d2_hat:.3g} m)")
    return d2_hat


def estimate_fading(observations, fitted: FitResult) -> FadingSpec:
    """Moment-based fading classification from power ratios to the fitted
    law.

    With v = Var(g)/E[g]^2 the Rician K estimate is
    sqrt(1-v) / (1 - sqrt(1-v)) for v < 1 and 0 (Rayleigh) otherwise;
    near-zero variance reports deterministic 'none', K below 0.2 is folded
    into Rayleigh.
    """
    rows = [(o.r, o.power) for o in observations if o.power > 0.0]
    if not rows:
        raise ValueError("no positive-power observations")
    if len(rows) < 100:
        warnings.warn(f"only {len(rows)} ratios; fading estimate is low-confidence")
    r = np.array([x[0] for x in rows])
    p = np.array([x[1] for x in rows])
    model = 10.0 ** (fitted.power_db(r) / 10.0)
    g = p / model
    mean = float(np.mean(g))
    var = float(np.var(g))
    v = var / mean**2
    if v < 1e-9:
        return FadingSpec("none")
    if v >= 1.0:
        return FadingSpec("rayleigh")
    root = math.sqrt(1.0 - v)
    k = root / (1.0 - root)
    if k < 0.2:
        return FadingSpec("rayleigh")
    return FadingSpec("rician", k_factor=k)


def estimate_density(counts, lengths) -> DensityEstimate:
    """Total nodes over total observed length, with a normal-approximation
    Poisson interval."""
    c = np.atleast_1d(np.asarray(counts, dtype=float))
    ell = np.asarray(lengths, dtype=float)
    if ell.ndim == 0:
        ell = np.full_like(c, float(ell))
    if c.shape != ell.shape:
        raise ValueError("counts and lengths length mismatch")
    total_len = float(np.sum(ell))
    if total_len <= 0.0:
        raise ValueError("zero total window length")
    total = float(np.sum(c))
    lam = total / total_len
    half = 1.959963984540054 * math.sqrt(total) / total_len
    return DensityEstimate(lam, max(lam - half, 0.0), lam + half, int(c.size))


# ---------------------------------------------------------------------------
# Observation persistence (rt engine dumps, ingested by the fit command)
# ---------------------------------------------------------------------------

def observations_to_csv(observations, fh, meta=""):
    fh.write(f"# v2xisac-observations {meta}\n")
    fh.write("realization,link,r_m,power_w,los\n")
    for o in observations:
        los = "" if o.los is None else str(int(o.los))
        fh.write(f"{o.realization},{o.kind},{o.r:.6f},{o.power:.10e},{los}\n")


def observations_from_csv(fh):
    header = fh.readline()
    if not header.startswith("# v2xisac-observations"):
        raise ValueError("not a v2xisac observations file")
    cols = fh.readline().strip().split(",")
    if cols != ["realization", "link", "r_m", "power_w", "los"]:
        raise ValueError("unexpected observations CSV columns")
    out = []
    for line in fh:
        p = line.strip().split(",")
        if not p or p == [""]:
            continue
        out.append(LinkObservation(kind=p[1], r=float(p[2]), power=float(p[3]),
                                   los=bool(int(p[4])) if p[4] else None,
                                   realization=int(p[0])))
    return out
