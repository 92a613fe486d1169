"""Random street-scene generation.

Two scene flavours are produced from the same :class:`SystemConfig`:

* :class:`LineScene` - three independent Poisson point processes on a line
  (targets ahead, roadside units, oncoming interferers), used by the
  abstract stochastic-geometry and Monte-Carlo engines.
* :class:`RtScene` - a plan-view rectangle world (building rows broken by
  perpendicular streets, hard-core vehicle blocks in both lanes, antenna
  points) used by the ray tracer.

Plan-view coordinates: x runs along the street, y across it.  The street
occupies y in [street_y_min, street_y_max]; same-direction vehicles drive
towards +x on the lane centred at ``same_lane_y``, oncoming vehicles
towards -x on ``opposite_lane_y``.  The observed vehicle's antennas sit on
its front face, and all positions in a :class:`LineScene` are parallel
distances measured from those antennas.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .propagation import FadingSpec, LinkPropagation, PathLossParams


class ConfigurationError(ValueError):
    """Invalid or incomplete configuration; message carries the field path."""


def min_parallel_distance(offset, beamwidth):
    """First along-road distance at which a node at a perpendicular offset
    enters a beam of the given full width; 0 when the beam covers a half
    plane or more."""
    if offset <= 0.0:
        raise ValueError(f"perpendicular offset must be > 0, got {offset}")
    if beamwidth <= 0.0:
        raise ValueError(f"beamwidth must be > 0, got {beamwidth}")
    if beamwidth >= math.pi:
        return 0.0
    return offset / math.tan(beamwidth / 2.0)


def _default_radar():
    return LinkPropagation(mixed=PathLossParams(1.74, 3.72), fading=FadingSpec("rayleigh"))


def _default_comm():
    return LinkPropagation(
        mixed=PathLossParams(2.20, 0.42),
        los=PathLossParams(1.53, 3.37),
        nlos=PathLossParams(2.32, 0.40),
        fading=FadingSpec("rayleigh"),
        d1=None,
        d2=110.44,
    )


def _default_interference():
    return LinkPropagation(
        mixed=PathLossParams(4.64, 0.0),
        los=PathLossParams(1.12, 14.41),
        nlos=PathLossParams(4.35, 0.0),
        fading=FadingSpec("rayleigh"),
        d1=None,
        d2=43.95,
    )


@dataclass(frozen=True)
class RtSettings:
    """Geometry and tracer knobs that only matter to the ray-tracing engine."""

    radar_tx: tuple = (6.1, 16.0, 0.5)
    radar_rx: tuple = (6.1, 16.2, 0.5)
    rsu_y: float = 18.0
    rsu_height: float = 2.5
    opposite_lane_y: float = 13.0
    interferer_height: float = 0.5
    same_lane_y: float = 16.0
    vehicle_length: float = 4.5
    vehicle_width: float = 1.8
    vehicle_height: float = 1.5
    building_depth: float = 10.0
    building_height: float = 10.0
    street_y_min: float = 9.0
    street_y_max: float = 18.0
    reflection_coeff_mag: float = 0.63
    reflection_coeff_phase_deg: float = 180.0
    diffraction_floor_db: float = 40.0
    max_order: int = 2
    coherent_sum: bool = True
    clutter_filtered_detection: bool = True

    @property
    def reflection_coeff(self) -> complex:
        phase = math.radians(self.reflection_coeff_phase_deg)
        return self.reflection_coeff_mag * complex(math.cos(phase), math.sin(phase))


@dataclass(frozen=True)
class SystemConfig:
    """Full scenario description; defaults reproduce the reference setup
    (26 GHz, 20 dBm, 20/10/2 vehicles/RSUs/interferers per km, 2 km street).

    Densities are 1/m, powers W, angles rad, distances m.  ``r_cmin`` and
    ``r_imin`` default to the beamwidth-derived minimum parallel distances;
    the d1 parameters of the comm and interference LoS models default to
    those minima.
    """

    lambda_r: float = 0.02
    lambda_c: float = 0.01
    lambda_i: float = 0.002
    p_i: float = 0.1
    p_v: float = 0.1
    p_l: float = 0.1
    g_r: float = 1.0
    g_c: float = 1.0
    g_i: float = 1.0
    f_c: float = 26e9
    phi_vt: float = math.radians(22.5)
    phi_vr: float = math.radians(45.0)
    phi_lt: float = math.radians(45.0)
    d_c: float = 1.8
    d_i: float = 3.2
    r_rmin: float = 5.0
    r_rmax: float = 200.0
    r_cmin: float | None = None
    r_imin: float | None = None
    street_length: float = 2000.0
    street_width: float = 9.0
    lambda_cross: float = 0.01
    radar: LinkPropagation = field(default_factory=_default_radar)
    comm: LinkPropagation = field(default_factory=_default_comm)
    interference: LinkPropagation = field(default_factory=_default_interference)
    rt: RtSettings = field(default_factory=RtSettings)

    def __post_init__(self):
        if self.r_cmin is None:
            object.__setattr__(self, "r_cmin", min_parallel_distance(self.d_c, min(self.phi_lt, self.phi_vr)))
        if self.r_imin is None:
            object.__setattr__(self, "r_imin", min_parallel_distance(self.d_i, min(self.phi_vt, self.phi_vr)))
        if self.comm.d1 is None:
            object.__setattr__(self, "comm", replace(self.comm, d1=self.r_cmin))
        if self.interference.d1 is None:
            object.__setattr__(self, "interference", replace(self.interference, d1=self.r_imin))
        self.validate()

    def validate(self):
        for name in ("lambda_r", "lambda_c", "lambda_i", "lambda_cross"):
            if getattr(self, name) < 0.0:
                raise ConfigurationError(f"{name}: density must be >= 0")
        if not 0.0 <= self.p_i <= 1.0:
            raise ConfigurationError("p_i: thinning probability must lie in [0, 1]")
        for name in ("p_v", "p_l", "g_r", "g_c", "g_i", "f_c", "d_c", "d_i"):
            if getattr(self, name) <= 0.0:
                raise ConfigurationError(f"{name}: must be > 0")
        if not 0.0 < self.r_rmin < self.r_rmax:
            raise ConfigurationError("r_rmin/r_rmax: need 0 < r_rmin < r_rmax")
        if self.r_cmin < 0.0 or self.r_imin < 0.0:
            raise ConfigurationError("r_cmin/r_imin: must be >= 0")
        if self.street_length <= 0.0 or self.street_width <= 0.0:
            raise ConfigurationError("street_length/street_width: must be > 0")
        for name in ("phi_vt", "phi_vr", "phi_lt"):
            if not 0.0 < getattr(self, name) <= 2.0 * math.pi:
                raise ConfigurationError(f"{name}: beamwidth must lie in (0, 2*pi]")

    def digest(self) -> str:
        """Short stable hash of the fully-resolved configuration."""
        blob = json.dumps(_to_jsonable(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:12]

    def to_dict(self) -> dict:
        return _to_jsonable(self)


def _to_jsonable(obj):
    if hasattr(obj, "__dataclass_fields__"):
        return {k: _to_jsonable(getattr(obj, k)) for k in obj.__dataclass_fields__}
    if isinstance(obj, (list, tuple)):
        return [_to_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    return obj


# ---------------------------------------------------------------------------
# Line scenes (stochastic-geometry / Monte-Carlo world)
# ---------------------------------------------------------------------------

def sample_ppp(rate, window, rng) -> np.ndarray:
    """Homogeneous Poisson point process on an interval, returned sorted.

    A zero-measure window yields an empty draw; an inverted window is an
    error.
    """
    lo, hi = float(window[0]), float(window[1])
    if hi < lo:
        raise ValueError(f"inverted window [{lo}, {hi}]")
    if rate < 0.0:
        raise ValueError(f"rate must be >= 0, got {rate}")
    length = hi - lo
    if rate == 0.0 or length == 0.0:
        return np.empty(0, dtype=float)
    n = rng.poisson(rate * length)
    return np.sort(rng.uniform(lo, hi, n))


@dataclass
class LineScene:
    """One realisation of the three line processes (positions in metres,
    sorted ascending, measured from the observed vehicle's antennas)."""

    radar_targets: np.ndarray
    rsus: np.ndarray
    interferers: np.ndarray

    def to_dict(self):
        return {
            "radar_targets_m": self.radar_targets.tolist(),
            "rsus_m": self.rsus.tolist(),
            "interferers_m": self.interferers.tolist(),
        }


def build_line_scene(cfg: SystemConfig, rng) -> LineScene:
    """Draw the three independent PPPs with their visibility windows.

    Draw order (targets, RSUs, interferers) is part of the reproducibility
    contract shared with the engines.
    """
    targets = sample_ppp(cfg.lambda_r, (cfg.r_rmin, cfg.r_rmax), rng)
    rsus = sample_ppp(cfg.lambda_c, (cfg.r_cmin, max(cfg.r_cmin, cfg.street_length)), rng)
    interferers = sample_ppp(cfg.lambda_i, (cfg.r_imin, max(cfg.r_imin, cfg.street_length)), rng)
    return LineScene(targets, rsus, interferers)


def remove_overlaps(positions, block_length, rng=None) -> np.ndarray:
    """Greedy left-to-right sweep keeping blocks that do not overlap the
    previously kept block (ties keep the earlier position).

    Positions are block centres; the result has every gap >= block_length.
    The sweep is deterministic; ``rng`` is accepted for interface symmetry
    with the samplers and ignored.
    """
    pos = np.asarray(positions, dtype=float)
    if pos.size == 0:
        return pos.copy()
    if np.any(np.diff(pos) < 0.0):
        raise ValueError("positions must be sorted ascending")
    kept = [pos[0]]
    for p in pos[1:]:
        if p - kept[-1] >= block_length:
            kept.append(p)
    return np.array(kept)


def nearest_in_window(positions, window):
    """Smallest position inside the closed window, or None."""
    lo, hi = window
    for p in positions:
        if p > hi:
            break
        if p >= lo:
            return float(p)
    return None


# ---------------------------------------------------------------------------
# Ray-tracing scenes
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Rect:
    """Axis-aligned plan-view block."""

    xmin: float
    ymin: float
    xmax: float
    ymax: float
    kind: str  # 'building' | 'vehicle'
    height: float
    lane: str | None = None  # 'same' | 'opposite' for vehicles
    interferer: bool = False
    typical: bool = False

    def bounds(self):
        return (self.xmin, self.ymin, self.xmax, self.ymax)


@dataclass
class RtScene:
    """Immutable rectangle world plus antenna points.

    ``rects`` concatenates buildings then vehicles; a block's id is its
    index in that list.  ``interferer_antennas`` holds one (x, y, z) point
    per interferer-flagged vehicle (front-face centre), aligned with
    ``interferer_ids``.
    """

    buildings: list
    vehicles: list
    rsu_nodes: np.ndarray
    interferer_antennas: np.ndarray
    interferer_ids: list
    typical_tx: tuple
    typical_rx: tuple
    typical_id: int | None
    cross_streets: np.ndarray
    street_length: float
    # derived arrays used by the tracer
    rect_bounds: np.ndarray = field(default=None, repr=False)

    @property
    def rects(self):
        return self.buildings + self.vehicles

    def finalize(self):
        rects = self.rects
        self.rect_bounds = (
            np.array([r.bounds() for r in rects], dtype=float) if rects else np.empty((0, 4))
        )
        return self

    def to_dict(self):
        def rect_entry(i, r):
            return {
                "id": i,
                "rect": [r.xmin, r.ymin, r.xmax, r.ymax],
                "kind": r.kind,
                "height": r.height,
                "lane": r.lane,
                "interferer": r.interferer,
                "typical": r.typical,
            }

        rects = self.rects
        return {
            "street_length_m": self.street_length,
            "buildings": [rect_entry(i, r) for i, r in enumerate(rects) if r.kind == "building"],
            "vehicles": [rect_entry(i, r) for i, r in enumerate(rects) if r.kind == "vehicle"],
            "rsu_nodes": self.rsu_nodes.tolist(),
            "interferer_antennas": self.interferer_antennas.tolist(),
            "interferer_ids": list(self.interferer_ids),
            "typical_tx": list(self.typical_tx),
            "typical_rx": list(self.typical_rx),
            "typical_id": self.typical_id,
            "cross_streets": self.cross_streets.tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        def to_rect(e):
            x0, y0, x1, y1 = e["rect"]
            return Rect(x0, y0, x1, y1, e["kind"], e["height"], e.get("lane"), e.get("interferer", False), e.get("typical", False))

        entries = sorted(d["buildings"] + d["vehicles"], key=lambda e: e["id"])
        rects = [to_rect(e) for e in entries]
        n_b = sum(1 for r in rects if r.kind == "building")
        scene = cls(
            buildings=rects[:n_b],
            vehicles=rects[n_b:],
            rsu_nodes=np.array(d["rsu_nodes"], dtype=float).reshape(-1, 3),
            interferer_antennas=np.array(d["interferer_antennas"], dtype=float).reshape(-1, 3),
            interferer_ids=list(d["interferer_ids"]),
            typical_tx=tuple(d["typical_tx"]),
            typical_rx=tuple(d["typical_rx"]),
            typical_id=d["typical_id"],
            cross_streets=np.array(d["cross_streets"], dtype=float),
            street_length=d["street_length_m"],
        )
        return scene.finalize()


def _building_row(y_near, depth, length, gaps, height, outward):
    """One building row along [0, length], interrupted by gap intervals."""
    y0, y1 = (y_near, y_near + depth) if outward > 0 else (y_near - depth, y_near)
    edges = [0.0]
    for g0, g1 in gaps:
        edges.extend((max(g0, 0.0), min(g1, length)))
    edges.append(length)
    rects = []
    for lo, hi in zip(edges[0::2], edges[1::2]):
        if hi - lo > 1e-9:
            rects.append(Rect(lo, y0, hi, y1, "building", height))
    return rects


def build_rt_scene(cfg: SystemConfig, rng) -> RtScene:
    """Sample one rectangle world.

    Draw order: perpendicular streets, same-lane vehicle centres, opposite
    lane vehicle centres, RSU positions, interferer thinning marks.  The
    observed vehicle occupies a fixed block ending at its antenna plane;
    same-lane vehicles colliding with it are discarded before the greedy
    overlap sweep.
    """
    rt = cfg.rt
    length = cfg.street_length
    cross = sample_ppp(cfg.lambda_cross, (0.0, length), rng)
    same_raw = sample_ppp(cfg.lambda_r, (0.0, length), rng)
    opp_raw = sample_ppp(cfg.lambda_r, (0.0, length), rng)
    rsu_x = sample_ppp(cfg.lambda_c, (0.0, length), rng)

    half_len = rt.vehicle_length / 2.0
    half_wid = rt.vehicle_width / 2.0
    front_x = rt.radar_tx[0]
    typ_center = front_x - half_len

    same_clear = same_raw[np.abs(same_raw - typ_center) >= rt.vehicle_length]
    same_centers = remove_overlaps(same_clear, rt.vehicle_length)
    opp_centers = remove_overlaps(opp_raw, rt.vehicle_length)
    intf_mask = rng.random(opp_centers.size) < cfg.p_i

    gaps = [(x - cfg.street_width / 2.0, x + cfg.street_width / 2.0) for x in cross]
    buildings = _building_row(rt.street_y_max, rt.building_depth, length, gaps, rt.building_height, +1)
    buildings += _building_row(rt.street_y_min, rt.building_depth, length, gaps, rt.building_height, -1)

    vehicles = [
        Rect(typ_center - half_len, rt.same_lane_y - half_wid, typ_center + half_len,
             rt.same_lane_y + half_wid, "vehicle", rt.vehicle_height, lane="same", typical=True)
    ]
    for c in same_centers:
        vehicles.append(Rect(c - half_len, rt.same_lane_y - half_wid, c + half_len,
                             rt.same_lane_y + half_wid, "vehicle", rt.vehicle_height, lane="same"))
    for c, flag in zip(opp_centers, intf_mask):
        vehicles.append(Rect(c - half_len, rt.opposite_lane_y - half_wid, c + half_len,
                             rt.opposite_lane_y + half_wid, "vehicle", rt.vehicle_height,
                             lane="opposite", interferer=bool(flag)))

    n_buildings = len(buildings)
    typical_id = n_buildings  # observed vehicle is the first vehicle rect
    interferer_ids = [n_buildings + i for i, v in enumerate(vehicles) if v.interferer]
    # oncoming traffic drives towards -x, so the transmit antenna sits on
    # the xmin face of the interferer block
    antennas = np.array(
        [[vehicles[i - n_buildings].xmin, rt.opposite_lane_y, rt.interferer_height] for i in interferer_ids],
        dtype=float,
    ).reshape(-1, 3)
    rsu_nodes = np.column_stack(
        [rsu_x, np.full_like(rsu_x, rt.rsu_y), np.full_like(rsu_x, rt.rsu_height)]
    ) if rsu_x.size else np.empty((0, 3))

    scene = RtScene(
        buildings=buildings,
        vehicles=vehicles,
        rsu_nodes=rsu_nodes,
        interferer_antennas=antennas,
        interferer_ids=interferer_ids,
        typical_tx=tuple(rt.radar_tx),
        typical_rx=tuple(rt.radar_rx),
        typical_id=typical_id,
        cross_streets=cross,
        street_length=length,
    )
    return scene.finalize()
