"""Closed-form propagation laws for the roadside ISAC scenario.

Log-distance path loss, Friis-type powers for the communication and
interfering links, the geometrical-optics radar echo law, the d1/d2
line-of-sight probability model, and unit-mean small-scale fading.

All internal quantities are linear SI (watts, metres, hertz).  Decibel
values only appear in arguments or fields explicitly suffixed ``_db``;
fading samples are normalised so that E[|h|^2] = 1 for every kind, which
keeps fitted intercepts and simulated powers composable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

C_LIGHT = 299792458.0  # m/s

FADING_KINDS = ("none", "rayleigh", "rician")


def db_to_linear(x_db):
    return 10.0 ** (np.asarray(x_db, dtype=float) / 10.0) if np.ndim(x_db) else 10.0 ** (x_db / 10.0)


def linear_to_db(x):
    return 10.0 * math.log10(x)


def watt_to_dbm(p_w):
    """0 W maps to -inf dBm; negative powers are rejected."""
    if p_w < 0.0:
        raise ValueError(f"negative power: {p_w}")
    if p_w == 0.0:
        return -math.inf
    return 10.0 * math.log10(p_w) + 30.0


def dbm_to_watt(p_dbm):
    if p_dbm == -math.inf:
        return 0.0
    return 10.0 ** ((p_dbm - 30.0) / 10.0)


@dataclass(frozen=True)
class PathLossParams:
    """Log-distance law [L(r)]_dB = beta_db + 10 * alpha * log10(r)."""

    alpha: float
    beta_db: float

    def __post_init__(self):
        if self.alpha < 0.0:
            raise ValueError(f"path-loss exponent must be >= 0, got {self.alpha}")


@dataclass(frozen=True)
class FadingSpec:
    """Small-scale fading model with unit mean power.

    kind 'none' is the deterministic |h|^2 = 1, 'rayleigh' draws Exp(1),
    'rician' draws a unit-mean noncentral power with the given K factor.
    """

    kind: str = "none"
    k_factor: float = 0.0

    def __post_init__(self):
        if self.kind not in FADING_KINDS:
            raise ValueError(f"unknown fading kind {self.kind!r}, expected one of {FADING_KINDS}")
        if self.k_factor < 0.0:
            raise ValueError(f"K factor must be >= 0, got {self.k_factor}")


@dataclass(frozen=True)
class LinkPropagation:
    """Per-link propagation law: mixed fit, optional LoS/NLoS split, fading.

    When a LoS law is present the NLoS law and the d2 parameter of the
    LoS-probability model must be present as well; d1 may be left None
    here, in which case the enclosing scenario config resolves it to the
    link's minimum parallel distance.
    """

    mixed: PathLossParams
    los: PathLossParams | None = None
    nlos: PathLossParams | None = None
    fading: FadingSpec = field(default_factory=FadingSpec)
    d1: float | None = None
    d2: float | None = None

    def __post_init__(self):
        if self.los is not None:
            missing = [name for name, v in (("nlos", self.nlos), ("d2", self.d2)) if v is None]
            if missing:
                raise ValueError(f"LoS law requires nlos/d2, missing: {', '.join(missing)}")
        if self.d1 is not None and self.d1 <= 0.0:
            raise ValueError("d1 must be positive")
        if self.d2 is not None and self.d2 <= 0.0:
            raise ValueError("d2 must be positive")


def rho_factor(p_tx_w, gain, f_c_hz, beta_db):
    """Power prefactor P * G * c^2 / (4 pi f_c^2 beta), units W * m^alpha."""
    if p_tx_w <= 0.0 or gain <= 0.0 or f_c_hz <= 0.0:
        raise ValueError("power, gain and carrier frequency must be positive")
    beta = 10.0 ** (beta_db / 10.0)
    return p_tx_w * gain * C_LIGHT**2 / (4.0 * math.pi * f_c_hz**2 * beta)


def comm_power(rho, alpha, r_parallel, d_perp):
    """Received power rho * (r^2 + d^2)^(-alpha/2) at parallel distance r."""
    if r_parallel < 0.0:
        raise ValueError(f"parallel distance must be >= 0, got {r_parallel}")
    return rho * (r_parallel**2 + d_perp**2) ** (-alpha / 2.0)


def radar_power(rho, alpha, r):
    """Round-trip echo power rho * r^(-alpha)."""
    if r <= 0.0:
        raise ValueError(f"radar range must be > 0, got {r}")
    return rho * r ** (-alpha)


def offset_powers(rho, alpha, positions, d_perp):
    """Vector of rho * (x^2 + d^2)^(-alpha/2); rho/alpha may be arrays."""
    x = np.asarray(positions, dtype=float)
    return np.asarray(rho) * (x**2 + d_perp**2) ** (-np.asarray(alpha) / 2.0)


def interference_power(positions, fadings, rho, alpha, d_perp):
    """Aggregate interference: sum of per-node Friis powers times |h|^2."""
    x = np.asarray(positions, dtype=float)
    h2 = np.asarray(fadings, dtype=float)
    if x.shape != h2.shape:
        raise ValueError(f"positions and fadings length mismatch: {x.shape} vs {h2.shape}")
    if x.size == 0:
        return 0.0
    return float(np.sum(offset_powers(rho, alpha, x, d_perp) * h2))


def los_probability(r, d1, d2):
    """d1/d2 line-of-sight probability; equals 1 at r = 0, decays to 0.

    Accepts scalars or arrays for r.
    """
    if d1 <= 0.0 or d2 <= 0.0:
        raise ValueError("d1 and d2 must be positive")
    r_arr = np.asarray(r, dtype=float)
    if np.any(r_arr < 0.0):
        raise ValueError("distance must be >= 0")
    with np.errstate(divide="ignore"):
        ratio = np.where(r_arr > 0.0, np.minimum(np.divide(d1, r_arr, out=np.full_like(r_arr, np.inf), where=r_arr > 0.0), 1.0), 1.0)
    decay = np.exp(-r_arr / d2)
    p = ratio * (1.0 - decay) + decay
    return float(p) if np.ndim(r) == 0 else p


def sample_fading(spec: FadingSpec, rng) -> float:
    """One |h|^2 draw with E[|h|^2] = 1.

    'none' consumes no randomness.  'rician' uses |sqrt(K/(K+1)) + z|^2
    with z complex normal of total variance 1/(K+1).
    """
    if spec.kind == "none":
        return 1.0
    if spec.kind == "rayleigh":
        return float(rng.exponential())
    k = spec.k_factor
    sigma = math.sqrt(0.5 / (k + 1.0))
    re = math.sqrt(k / (k + 1.0)) + sigma * rng.standard_normal()
    im = sigma * rng.standard_normal()
    return re * re + im * im


def path_loss_db(params: PathLossParams, r):
    """beta_db + 10 * alpha * log10(r) in dB; r must be positive."""
    if r <= 0.0:
        raise ValueError(f"distance must be > 0, got {r}")
    return params.beta_db + 10.0 * params.alpha * math.log10(r)
