"""Metric estimation from sample sets, and a semi-analytic evaluator of the
abstract model's communication coverage used as a numerical cross-check.

All five metrics are empirical event probabilities with Wilson score
intervals (stable near 0 and 1, where the joint-metric tails live):

* coverage      P(S_C >= eta_c * (S_R + I))           over all samples
* success       P(S_R >= eta_r * (S_C + I))           target-present samples
* detection     P(S_R + S_C + I >= gamma_r)           target-present samples
* jrdccp        detection and coverage jointly        target-present samples
* jrsccp        success and coverage jointly          target-present samples

Events are evaluated in product form (no ratios), so zero denominators mean
what the probability statement says.  Thresholds are linear here; grids are
typically specified in dB/dBm and converted once at the interface.
"""

from __future__ import annotations

import math
from bisect import bisect_left
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import quad
from scipy.interpolate import PchipInterpolator

from . import propagation as prop
from .scene import SystemConfig

_Z95 = 1.959963984540054


class UnsupportedModelError(ValueError):
    """The semi-analytic evaluator does not cover this configuration."""


@dataclass(frozen=True)
class MetricEstimate:
    value: float
    ci_low: float
    ci_high: float
    n_effective: int


@dataclass(frozen=True)
class ThresholdGrid:
    """Linear threshold grids: eta values are dimensionless SINRs, gamma
    values are watts; all sorted ascending and positive."""

    eta_c: tuple
    eta_r: tuple
    gamma_r: tuple

    def __post_init__(self):
        for name in ("eta_c", "eta_r", "gamma_r"):
            vals = getattr(self, name)
            object.__setattr__(self, name, tuple(float(v) for v in vals))
            vals = getattr(self, name)
            if any(v <= 0.0 for v in vals):
                raise ValueError(f"{name}: thresholds must be positive")
            if any(b < a for a, b in zip(vals, vals[1:])):
                raise ValueError(f"{name}: thresholds must be sorted ascending")

    @classmethod
    def from_db(cls, eta_c_db, eta_r_db, gamma_r_dbm):
        return cls(
            eta_c=tuple(10.0 ** (v / 10.0) for v in eta_c_db),
            eta_r=tuple(10.0 ** (v / 10.0) for v in eta_r_db),
            gamma_r=tuple(prop.dbm_to_watt(v) for v in gamma_r_dbm),
        )


@dataclass(frozen=True)
class CurvePoint:
    metric: str
    estimate: float
    ci_low: float
    ci_high: float
    n_effective: int
    eta_c_db: float | None = None
    eta_r_db: float | None = None
    gamma_r_dbm: float | None = None


def wilson_interval(k, n, z=_Z95):
    if n <= 0:
        raise ValueError("empty sample")
    p = k / n
    denom = 1.0 + z * z / n
    centre = (p + z * z / (2 * n)) / denom
    half = z * math.sqrt(p * (1.0 - p) / n + z * z / (4.0 * n * n)) / denom
    return max(centre - half, 0.0), min(centre + half, 1.0)


def _estimate(k, n):
    lo, hi = wilson_interval(k, n)
    return MetricEstimate(k / n, lo, hi, n)


@dataclass
class _Arrays:
    s_r: np.ndarray
    s_c: np.ndarray
    i: np.ndarray
    present: np.ndarray


def _arrays(samples) -> _Arrays:
    if hasattr(samples, "samples"):
        samples = samples.samples
    samples = list(samples)
    if not samples:
        raise ValueError("empty sample set")
    return _Arrays(
        s_r=np.array([s.s_r for s in samples]),
        s_c=np.array([s.s_c for s in samples]),
        i=np.array([s.i_total for s in samples]),
        present=np.array([s.target_present for s in samples], dtype=bool),
    )


def coverage(samples, eta_c) -> MetricEstimate:
    a = _arrays(samples)
    k = int(np.count_nonzero(a.s_c >= eta_c * (a.s_r + a.i)))
    return _estimate(k, a.s_r.size)


def _present(a: _Arrays):
    n = int(np.count_nonzero(a.present))
    if n == 0:
        raise ValueError("no target-present samples")
    return a.present, n


def success(samples, eta_r) -> MetricEstimate:
    a = _arrays(samples)
    m, n = _present(a)
    k = int(np.count_nonzero(a.s_r[m] >= eta_r * (a.s_c[m] + a.i[m])))
    return _estimate(k, n)


def detection(samples, gamma_r) -> MetricEstimate:
    a = _arrays(samples)
    m, n = _present(a)
    k = int(np.count_nonzero(a.s_r[m] + a.s_c[m] + a.i[m] >= gamma_r))
    return _estimate(k, n)


def jrdccp(samples, eta_c, gamma_r) -> MetricEstimate:
    a = _arrays(samples)
    m, n = _present(a)
    cov = a.s_c[m] >= eta_c * (a.s_r[m] + a.i[m])
    det = a.s_r[m] + a.s_c[m] + a.i[m] >= gamma_r
    return _estimate(int(np.count_nonzero(cov & det)), n)


def jrsccp(samples, eta_c, eta_r) -> MetricEstimate:
    a = _arrays(samples)
    m, n = _present(a)
    cov = a.s_c[m] >= eta_c * (a.s_r[m] + a.i[m])
    suc = a.s_r[m] >= eta_r * (a.s_c[m] + a.i[m])
    return _estimate(int(np.count_nonzero(cov & suc)), n)


def _tail_counts(sorted_stats, thresholds):
    """Count of values >= each threshold over a sorted array."""
    n = sorted_stats.size
    return [n - bisect_left(sorted_stats, t) for t in thresholds]


def sweep(samples, grid: ThresholdGrid):
    """All five metric curves on the grid via sorted-threshold counting;
    identical to the per-threshold operations, one sort per metric family.

    Joint metrics are evaluated on the outer product of their two grids.
    """
    a = _arrays(samples)
    rows = []

    denom_c = a.s_r + a.i
    free_c = int(np.count_nonzero(denom_c == 0.0))  # event holds for any eta
    ratio_c = np.sort(a.s_c[denom_c > 0.0] / denom_c[denom_c > 0.0])
    n_all = a.s_r.size
    for eta, k in zip(grid.eta_c, _tail_counts(ratio_c, grid.eta_c)):
        est = _estimate(k + free_c, n_all)
        rows.append(CurvePoint("coverage", est.value, est.ci_low, est.ci_high, n_all,
                               eta_c_db=10 * math.log10(eta)))

    m, n_p = _present(a)
    s_r, s_c, i = a.s_r[m], a.s_c[m], a.i[m]

    denom_r = s_c + i
    free_r = int(np.count_nonzero(denom_r == 0.0))
    ratio_r = np.sort(s_r[denom_r > 0.0] / denom_r[denom_r > 0.0])
    for eta, k in zip(grid.eta_r, _tail_counts(ratio_r, grid.eta_r)):
        est = _estimate(k + free_r, n_p)
        rows.append(CurvePoint("success", est.value, est.ci_low, est.ci_high, n_p,
                               eta_r_db=10 * math.log10(eta)))

    totals = np.sort(s_r + s_c + i)
    for gam, k in zip(grid.gamma_r, _tail_counts(totals, grid.gamma_r)):
        est = _estimate(k, n_p)
        rows.append(CurvePoint("detection", est.value, est.ci_low, est.ci_high, n_p,
                               gamma_r_dbm=prop.watt_to_dbm(gam)))

    tot_unsorted = s_r + s_c + i
    suc_den = s_c + i
    for eta in grid.eta_c:
        cov_mask = s_c >= eta * (s_r + i)
        eta_db = 10 * math.log10(eta)
        tot_cov = np.sort(tot_unsorted[cov_mask])
        for gam, k in zip(grid.gamma_r, _tail_counts(tot_cov, grid.gamma_r)):
            est = _estimate(k, n_p)
            rows.append(CurvePoint("jrdccp", est.value, est.ci_low, est.ci_high, n_p,
                                   eta_c_db=eta_db, gamma_r_dbm=prop.watt_to_dbm(gam)))
        hold = suc_den[cov_mask] > 0.0
        free_s = int(np.count_nonzero(~hold))
        rat = np.sort(s_r[cov_mask][hold] / suc_den[cov_mask][hold])
        for eta_r, k in zip(grid.eta_r, _tail_counts(rat, grid.eta_r)):
            est = _estimate(k + free_s, n_p)
            rows.append(CurvePoint("jrsccp", est.value, est.ci_low, est.ci_high, n_p,
                                   eta_c_db=eta_db, eta_r_db=10 * math.log10(eta_r)))
    return rows


def curves_to_csv(rows, fh, meta=""):
    fh.write(f"# v2xisac-curves {meta}\n")
    fh.write("metric,eta_c_db,eta_r_db,gamma_r_dbm,estimate,ci_low,ci_high,n_effective\n")
    for r in rows:
        def f(v):
            return "" if v is None else f"{v:.6f}"
        fh.write(f"{r.metric},{f(r.eta_c_db)},{f(r.eta_r_db)},{f(r.gamma_r_dbm)},"
                 f"{r.estimate:.8f},{r.ci_low:.8f},{r.ci_high:.8f},{r.n_effective}\n")


def curves_from_csv(fh):
    header = fh.readline()
    if not header.startswith("# v2xisac-curves"):
        raise ValueError("not a v2xisac curves file")
    cols = fh.readline().strip().split(",")
    expected = ["metric", "eta_c_db", "eta_r_db", "gamma_r_dbm", "estimate",
                "ci_low", "ci_high", "n_effective"]
    if cols != expected:
        raise ValueError("unexpected curves CSV columns")
    rows = []
    for line in fh:
        p = line.strip().split(",")
        if not p or p == [""]:
            continue
        rows.append(CurvePoint(
            metric=p[0],
            eta_c_db=float(p[1]) if p[1] else None,
            eta_r_db=float(p[2]) if p[2] else None,
            gamma_r_dbm=float(p[3]) if p[3] else None,
            estimate=float(p[4]), ci_low=float(p[5]), ci_high=float(p[6]),
            n_effective=int(p[7]),
        ))
    return rows


# ---------------------------------------------------------------------------
# Semi-analytic coverage for the abstract model
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class QuadSpec:
    """Knobs of the semi-analytic evaluation; defaults give roughly 1e-5
    absolute accuracy on the reference scenario."""

    n_x: int = 384  # log-x nodes for the shot-noise exponent integral
    talbot_m: int = 64  # inversion contour nodes
    n_t_grid: int = 320  # size of the interference-CDF interpolation grid
    n_inner: int = 240  # nodes of the serving-distance integral
    epsabs: float = 1e-8
    epsrel: float = 1e-7


class _InterferenceCdf:
    """P(I <= t) for line shot noise with unit-mean exponential fading.

    The log-characteristic exponent of I at complex frequency s (Laplace
    convention, E[e^{-sI}] = exp(psi(s))) is

        psi(s) = -lam * integral over the window of 1 - 1/(1 + s g(x)) dx,
        g(x) = rho * (x^2 + d^2)^(-alpha/2),

    computed with Gauss-Legendre nodes in log x.  The CDF is recovered by
    numerically inverting E[e^{-sI}]/s along a fixed Talbot contour, which
    evaluates the same exponent at complex arguments; a real-frequency
    inversion integral is hopeless here because the heavy-tailed g makes
    the envelope decay only like exp(-c w^(1/alpha)) over many decades of
    oscillation.  All singularities lie on the negative real axis, which
    the contour avoids.
    """

    def __init__(self, rho, alpha, d, lam, x_lo, x_hi, n_x=384, talbot_m=64):
        if x_hi <= x_lo or lam < 0.0:
            raise ValueError("bad interference window")
        self.lam = lam
        self.mass = lam * (x_hi - x_lo)
        self.p0 = math.exp(-self.mass)
        nodes, weights = np.polynomial.legendre.leggauss(n_x)
        u_lo, u_hi = math.log(x_lo), math.log(x_hi)
        u = 0.5 * (u_hi - u_lo) * nodes + 0.5 * (u_hi + u_lo)
        x = np.exp(u)
        self.w_eff = 0.5 * (u_hi - u_lo) * weights * x  # dx = x du
        self.g = rho * (x**2 + d**2) ** (-alpha / 2.0)
        m = talbot_m
        theta = np.arange(1, m) * math.pi / m
        cot = np.cos(theta) / np.sin(theta)
        self._m = m
        self._contour = theta * cot + 1j * theta  # s = (r/t-scale) * this
        self._weights = 1.0 + 1j * (theta + (theta * cot - 1.0) * cot)

    def log_laplace(self, s):
        """psi(s) for an array of complex s."""
        z = np.multiply.outer(s, self.g)
        integrand = 1.0 - 1.0 / (1.0 + z)
        return -self.lam * integrand @ self.w_eff

    def cdf(self, t):
        if t <= 0.0:
            return 0.0
        if self.lam == 0.0:
            return 1.0
        r = 2.0 * self._m / (5.0 * t)
        s = r * self._contour
        # exp(t s + psi(s))/s summed over contour nodes, plus the real node
        vals = np.exp(t * s + self.log_laplace(s)) / s * self._weights
        term0 = 0.5 * math.exp(t * r + self.log_laplace(np.array([r + 0j]))[0].real) / r
        total = (r / self._m) * (term0 + float(np.sum(vals.real)))
        return min(max(total, 0.0), 1.0)


def sg_coverage_analytic(cfg: SystemConfig, eta_c, quad_spec: QuadSpec | None = None) -> float:
    """Communication coverage of the abstract model by conditioning on the
    target and serving distances and numerically inverting the interference
    characteristic exponent.

    Requires Rayleigh interferer fading (K = 0), for which the shot-noise
    exponent is available in quadrature form.  Matches the sg engine's
    sampling semantics exactly: no fading on the radar and communication
    links, mixed laws, presence atoms for the target, the serving RSU and
    the empty interferer set.
    """
    q = quad_spec or QuadSpec()
    fad = cfg.interference.fading
    if not (fad.kind == "rayleigh" or (fad.kind == "rician" and fad.k_factor == 0.0)):
        raise UnsupportedModelError(
            f"analytic coverage needs Rayleigh interferer fading, got {fad.kind}")
    if eta_c < 0.0:
        raise ValueError("threshold must be >= 0")
    if eta_c == 0.0:
        return 1.0

    a, b = cfg.r_rmin, cfg.r_rmax
    c0, x0, length = cfg.r_cmin, cfg.r_imin, cfg.street_length
    lam_r, lam_c, lam_i = cfg.lambda_r, cfg.lambda_c, cfg.lambda_i
    rho_c = prop.rho_factor(cfg.p_l, cfg.g_c, cfg.f_c, cfg.comm.mixed.beta_db)
    rho_r = prop.rho_factor(cfg.p_v, cfg.g_r, cfg.f_c, cfg.radar.mixed.beta_db)
    rho_i = prop.rho_factor(cfg.p_v, cfg.g_i, cfg.f_c, cfg.interference.mixed.beta_db)
    al_c, al_r, al_i = cfg.comm.mixed.alpha, cfg.radar.mixed.alpha, cfg.interference.mixed.alpha

    def s_c(u):
        return rho_c * (u**2 + cfg.d_c**2) ** (-al_c / 2.0)

    def s_r(r):
        return rho_r * r ** (-al_r)

    q_r = -math.expm1(-lam_r * (b - a))
    len_c = max(length - c0, 0.0)
    q_c = -math.expm1(-lam_c * len_c)

    no_interferers = lam_i == 0.0 or length <= x0
    if no_interferers:
        p0 = 1.0
        cdf_i = None
    else:
        cdf_i = _InterferenceCdf(rho_i, al_i, cfg.d_i, lam_i, x0, length,
                                 n_x=q.n_x, talbot_m=q.talbot_m)
        p0 = cdf_i.p0
        t_hi = s_c(c0) / eta_c * (1.0 + 1e-9)
        t_lo = t_hi * 1e-16
        ts = np.geomspace(t_lo, t_hi, q.n_t_grid)
        fs = np.array([cdf_i.cdf(t) for t in ts])
        fs = np.maximum.accumulate(fs)  # guard tiny non-monotone jitter
        interp = PchipInterpolator(np.log(ts), fs, extrapolate=False)

        def cdf_interp(t):
            t = np.asarray(t, dtype=float)
            out = np.empty_like(t)
            low = t <= t_lo
            high = t >= t_hi
            mid = ~(low | high)
            out[low] = fs[0]
            out[high] = fs[-1]
            if np.any(mid):
                out[mid] = interp(np.log(t[mid]))
            return out

    nodes, weights = np.polynomial.legendre.leggauss(q.n_inner)

    def serving_integral(threshold_power, upper):
        """Integral over the serving distance of F_I(s_C(u)/eta - thr) for
        u in [c0, upper], against the unconditional serving density."""
        if upper <= c0 or lam_c == 0.0:
            return 0.0
        w_lo = math.exp(-lam_c * (upper - c0))
        w = 0.5 * (1.0 - w_lo) * nodes + 0.5 * (1.0 + w_lo)
        u = c0 - np.log(w) / lam_c
        t = s_c(u) / eta_c - threshold_power
        if no_interferers:
            vals = (t > 0.0).astype(float)
        else:
            vals = cdf_interp(np.maximum(t, 0.0)) * (t > 0.0)
        return 0.5 * (1.0 - w_lo) * float(vals @ weights)

    def u_star(thr):
        """Largest serving distance with s_C(u)/eta > thr."""
        if thr <= 0.0:
            return length
        base = (rho_c / (eta_c * thr)) ** (2.0 / al_c) - cfg.d_c**2
        if base <= c0**2:
            return c0
        return min(math.sqrt(base), length)

    def integrand_r(r):
        return lam_r * math.exp(-lam_r * (r - a)) * serving_integral(s_r(r), u_star(s_r(r)))

    # split at the range where the serving-distance cutoff leaves the
    # street end (a derivative kink of the integrand)
    pts = []
    thr_at_length = s_c(length) / eta_c
    if s_r(b) < thr_at_length < s_r(a):
        pts.append((rho_r / thr_at_length) ** (1.0 / al_r))
    pts = [p for p in pts if a < p < b]
    term_present, _ = quad(integrand_r, a, b, points=pts or None, limit=300,
                           epsabs=q.epsabs, epsrel=q.epsrel)
    term_absent = (1.0 - q_r) * serving_integral(0.0, length)
    # with no serving RSU the event reduces to S_R + I = 0
    term_no_rsu = (1.0 - q_c) * (1.0 - q_r) * p0
    return min(max(term_present + term_absent + term_no_rsu, 0.0), 1.0)
