"""Per-realization link sampling under the three frameworks, plus batch
running and sample persistence.

Reproducibility contract
------------------------
Every realization ``i`` of a batch uses its own counter-based substream
``Philox(key=seed, counter=i << 128)``, so results are bit-identical for any
worker count and any execution order.  Within one realization the draw
order is fixed and documented on each engine function.

Binary cache layout (little endian)
-----------------------------------
``header``: magic ``b"V2XSAMP1"``, engine code u8 (0 sg, 1 mc, 2 rt),
seed u64, count u64, digest length u8, digest bytes (ascii).
``record`` (count times): s_r, s_c, i_total, r_r, r_c as f64 (absent
distances stored as NaN), flags u8 with bit0 = target present,
bit1 = los flag known, bit2 = los flag value.

CSV rows carry powers in dBm with six decimals (0 W serialises as ``-inf``)
and are meant for humans and plotting; the binary cache preserves exact
float64 values and is what metric evaluation should read back.
"""

from __future__ import annotations

import math
import os
import struct
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import propagation as prop
from . import raytracer as rt
from .scene import ConfigurationError, SystemConfig, build_line_scene, build_rt_scene
from .fitting import LinkObservation

ENGINES = ("sg", "mc", "rt")
_ENGINE_CODE = {"sg": 0, "mc": 1, "rt": 2}
_MAGIC = b"V2XSAMP1"

WORKERS_ENV = "V2XISAC_WORKERS"


@dataclass(slots=True)
class LinkSample:
    """One network realization seen by the observed vehicle."""

    s_r: float  # useful radar echo, W
    s_c: float  # communication power, W
    i_total: float  # aggregate interference, W
    r_r: float | None  # target distance, m (None when no target)
    r_c: float | None  # serving RSU distance, m (None when no RSU)
    target_present: bool
    los_c: bool | None = None  # comm link LoS flag (MC/RT only)


@dataclass
class SampleSet:
    engine: str
    samples: list
    seed: int
    config_digest: str


@dataclass(slots=True)
class SceneCounts:
    """Per-realization node counts used for density estimation."""

    realization: int
    same_lane: int
    opposite_lane: int
    interferers: int
    rsus: int
    cross_streets: int
    lane_length: float


def substream(seed: int, index: int):
    """Independent generator for realization ``index`` of batch ``seed``."""
    key = int(seed) & ((1 << 128) - 1)
    return np.random.Generator(np.random.Philox(key=key, counter=int(index) << 128))


def _rho(p, g, f_c, params):
    return prop.rho_factor(p, g, f_c, params.beta_db)


def run_sg_realization(cfg: SystemConfig, rng) -> LinkSample:
    """Abstract model: deterministic radar echo and communication power from
    the mixed laws, fading only on the interferers.

    Draw order: line scene (targets, RSUs, interferers), then one fading
    draw per interferer in position order.
    """
    scene = build_line_scene(cfg, rng)
    r_r = float(scene.radar_targets[0]) if scene.radar_targets.size else None
    r_c = float(scene.rsus[0]) if scene.rsus.size else None

    s_r = 0.0
    if r_r is not None:
        s_r = prop.radar_power(_rho(cfg.p_v, cfg.g_r, cfg.f_c, cfg.radar.mixed),
                               cfg.radar.mixed.alpha, r_r)
    s_c = 0.0
    if r_c is not None:
        s_c = prop.comm_power(_rho(cfg.p_l, cfg.g_c, cfg.f_c, cfg.comm.mixed),
                              cfg.comm.mixed.alpha, r_c, cfg.d_c)
    fadings = np.array([prop.sample_fading(cfg.interference.fading, rng)
                        for _ in range(scene.interferers.size)])
    i_total = prop.interference_power(scene.interferers, fadings,
                                      _rho(cfg.p_v, cfg.g_i, cfg.f_c, cfg.interference.mixed),
                                      cfg.interference.mixed.alpha, cfg.d_i)
    return LinkSample(s_r, s_c, float(i_total), r_r, r_c, r_r is not None)


def _require_los_model(cfg: SystemConfig, link_name: str):
    link = getattr(cfg, link_name)
    if link.los is None or link.nlos is None or link.d1 is None or link.d2 is None:
        raise ConfigurationError(
            f"propagation.{link_name}: the mc engine needs los/nlos laws and d1/d2")
    return link


def run_mc_realization(cfg: SystemConfig, rng) -> LinkSample:
    """Enriched model: LoS/NLoS marks per node and fading on every link.

    Draw order: line scene; serving-RSU LoS uniform (if any RSU);
    per-interferer LoS uniforms in position order; comm fading; radar
    fading; per-interferer fadings.  Fading kind 'none' consumes no draws,
    which makes the degenerate configuration reproduce the sg engine
    sample-for-sample under a shared seed.
    """
    comm = _require_los_model(cfg, "comm")
    intf = _require_los_model(cfg, "interference")
    scene = build_line_scene(cfg, rng)
    r_r = float(scene.radar_targets[0]) if scene.radar_targets.size else None
    r_c = float(scene.rsus[0]) if scene.rsus.size else None

    los_c = None
    if r_c is not None:
        los_c = bool(rng.random() < prop.los_probability(r_c, comm.d1, comm.d2))
    if scene.interferers.size:
        p_los = prop.los_probability(scene.interferers, intf.d1, intf.d2)
        los_i = rng.random(scene.interferers.size) < p_los
    else:
        los_i = np.zeros(0, dtype=bool)

    h2_c = prop.sample_fading(comm.fading, rng) if r_c is not None else 1.0
    h2_r = prop.sample_fading(cfg.radar.fading, rng) if r_r is not None else 1.0
    h2_i = np.array([prop.sample_fading(intf.fading, rng) for _ in range(scene.interferers.size)])

    s_r = 0.0
    if r_r is not None:
        s_r = prop.radar_power(_rho(cfg.p_v, cfg.g_r, cfg.f_c, cfg.radar.mixed),
                               cfg.radar.mixed.alpha, r_r) * h2_r
    s_c = 0.0
    if r_c is not None:
        law = comm.los if los_c else comm.nlos
        s_c = prop.comm_power(_rho(cfg.p_l, cfg.g_c, cfg.f_c, law), law.alpha, r_c, cfg.d_c) * h2_c

    if scene.interferers.size:
        rho_los = _rho(cfg.p_v, cfg.g_i, cfg.f_c, intf.los)
        rho_nlos = _rho(cfg.p_v, cfg.g_i, cfg.f_c, intf.nlos)
        rho_vec = np.where(los_i, rho_los, rho_nlos)
        alpha_vec = np.where(los_i, intf.los.alpha, intf.nlos.alpha)
        i_total = float(np.sum(prop.offset_powers(rho_vec, alpha_vec, scene.interferers, cfg.d_i) * h2_i))
    else:
        i_total = 0.0
    return LinkSample(s_r, s_c, i_total, r_r, r_c, r_r is not None, los_c)


def _trace_settings(cfg: SystemConfig):
    s = cfg.rt
    return dict(reflection_coeff=s.reflection_coeff, max_order=s.max_order,
                floor_db=s.diffraction_floor_db)


def _rt_realization(cfg: SystemConfig, rng, index=0, collect=False):
    """Shared body of the rt engine; optionally collects per-link fitting
    observations and node counts."""
    settings = cfg.rt
    scene = build_rt_scene(cfg, rng)
    ant_x = settings.radar_tx[0]
    rx = scene.typical_rx
    tx = scene.typical_tx
    kw = _trace_settings(cfg)
    cone_fwd_r = (0.0, cfg.phi_vr)
    coherent = settings.coherent_sum

    obs = [] if collect else None

    # communication: first RSU ahead at a servable parallel distance
    # (beam geometry blinds the receiver below r_cmin, matching the
    # abstract models' support for the serving process)
    ahead = scene.rsu_nodes[scene.rsu_nodes[:, 0] - rx[0] >= cfg.r_cmin]
    r_c = None
    s_c = 0.0
    los_c = None
    if ahead.shape[0]:
        serving = ahead[0]
        r_c = float(serving[0] - rx[0])
        ps = rt.trace_paths(serving, rx, scene, cfg.f_c,
                            tx_cone=(math.pi, cfg.phi_lt), rx_cone=cone_fwd_r, **kw)
        s_c = rt.received_power(ps, cfg.p_l, cfg.g_c, coherent)
        los_c = rt.visible(serving, rx, scene)
        if collect:
            obs.append(LinkObservation("comm", r_c, s_c, los_c, index))

    # radar: next same-lane vehicle ahead of the antennas
    targets = [(i + len(scene.buildings), v) for i, v in enumerate(scene.vehicles)
               if v.lane == "same" and not v.typical and v.xmin > ant_x]
    r_r = None
    s_r = 0.0
    s_r_raw = 0.0
    target_present = False
    if targets:
        tid, tv = min(targets, key=lambda e: e[1].xmin)
        r_next = tv.xmin - ant_x
        target_present = bool(cfg.r_rmin <= r_next <= cfg.r_rmax)
        if target_present:
            r_r = float(r_next)
            ps = rt.trace_paths(tx, rx, scene, cfg.f_c, tx_cone=(0.0, cfg.phi_vt),
                                rx_cone=cone_fwd_r, target_id=tid, **kw)
            echo = rt.filter_clutter(ps, tid)
            s_r = rt.received_power(echo, cfg.p_v, cfg.g_r, coherent)
            # raw mode keeps environment echoes but never the direct
            # transmitter-to-receiver leak (assumed cancelled)
            ps_raw = rt.PathSet([p for p in ps.paths if p.interactions], ps.tx, ps.rx, tid)
            s_r_raw = rt.received_power(ps_raw, cfg.p_v, cfg.g_r, coherent)
            if collect:
                obs.append(LinkObservation("radar", r_r, s_r, True, index))

    # interference: every interferer-flagged vehicle transmits
    i_total = 0.0
    for vid, ant in zip(scene.interferer_ids, scene.interferer_antennas):
        ps = rt.trace_paths(ant, rx, scene, cfg.f_c, tx_cone=(math.pi, cfg.phi_vt),
                            rx_cone=cone_fwd_r, **kw)
        p_k = rt.received_power(ps, cfg.p_v, cfg.g_i, coherent)
        i_total += p_k
        if collect:
            r_k = float(ant[0] - rx[0])
            if r_k > 0.0:
                obs.append(LinkObservation("interference", r_k, p_k,
                                           rt.visible(ant, rx, scene), index))

    s_r_used = s_r if settings.clutter_filtered_detection else s_r_raw
    sample = LinkSample(s_r_used, s_c, i_total, r_r, r_c, target_present, los_c)
    if not collect:
        return sample
    counts = SceneCounts(
        realization=index,
        same_lane=sum(1 for v in scene.vehicles if v.lane == "same" and not v.typical),
        opposite_lane=sum(1 for v in scene.vehicles if v.lane == "opposite"),
        interferers=len(scene.interferer_ids),
        rsus=int(scene.rsu_nodes.shape[0]),
        cross_streets=int(scene.cross_streets.size),
        lane_length=cfg.street_length,
    )
    return sample, obs, counts


def run_rt_realization(cfg: SystemConfig, rng) -> LinkSample:
    """Ray-traced model: powers are coherent sums over traced paths; the
    radar echo keeps only paths interacting with the next vehicle ahead."""
    return _rt_realization(cfg, rng)


_REALIZERS = {"sg": run_sg_realization, "mc": run_mc_realization, "rt": run_rt_realization}


def _run_chunk(args):
    engine, cfg, seed, lo, hi, collect = args
    out = []
    for i in range(lo, hi):
        rng = substream(seed, i)
        if engine == "rt" and collect:
            out.append(_rt_realization(cfg, rng, index=i, collect=True))
        else:
            out.append(_REALIZERS[engine](cfg, rng))
    return out


def _default_workers():
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        return 1


def _run_indexed(engine, cfg, n, seed, workers, collect):
    if n < 1:
        raise ValueError(f"batch size must be >= 1, got {n}")
    if engine not in ENGINES:
        raise ValueError(f"unknown engine {engine!r}, expected one of {ENGINES}")
    workers = _default_workers() if workers is None else max(1, workers)
    if workers == 1:
        return _run_chunk((engine, cfg, seed, 0, n, collect))
    bounds = np.linspace(0, n, workers + 1).astype(int)
    chunks = [(engine, cfg, seed, int(lo), int(hi), collect)
              for lo, hi in zip(bounds[:-1], bounds[1:]) if hi > lo]
    results = []
    with ProcessPoolExecutor(max_workers=workers) as pool:
        for part in pool.map(_run_chunk, chunks):
            results.extend(part)
    return results


def run_batch(engine: str, cfg: SystemConfig, n: int, seed: int, workers=None) -> SampleSet:
    """n independent realizations on per-index substreams; the result is
    identical for any degree of parallel execution."""
    samples = _run_indexed(engine, cfg, n, seed, workers, collect=False)
    return SampleSet(engine=engine, samples=samples, seed=seed, config_digest=cfg.digest())


def run_rt_batch_with_observations(cfg: SystemConfig, n: int, seed: int, workers=None):
    """rt batch that also returns fitting observations and scene counts."""
    triples = _run_indexed("rt", cfg, n, seed, workers, collect=True)
    samples = [t[0] for t in triples]
    observations = [o for t in triples for o in t[1]]
    counts = [t[2] for t in triples]
    sample_set = SampleSet(engine="rt", samples=samples, seed=seed, config_digest=cfg.digest())
    return sample_set, observations, counts


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------

def _fmt_dbm(p_w):
    v = prop.watt_to_dbm(p_w)
    return "-inf" if v == -math.inf else f"{v:.6f}"


def samples_to_csv(sample_set: SampleSet, fh):
    fh.write(f"# v2xisac-samples engine={sample_set.engine} seed={sample_set.seed} "
             f"n={len(sample_set.samples)} digest={sample_set.config_digest}\n")
    fh.write("engine,index,s_r_dbm,s_c_dbm,i_dbm,r_r_m,r_c_m,target_present,los_c\n")
    for i, s in enumerate(sample_set.samples):
        r_r = "" if s.r_r is None else f"{s.r_r:.6f}"
        r_c = "" if s.r_c is None else f"{s.r_c:.6f}"
        los = "" if s.los_c is None else str(int(s.los_c))
        fh.write(f"{sample_set.engine},{i},{_fmt_dbm(s.s_r)},{_fmt_dbm(s.s_c)},"
                 f"{_fmt_dbm(s.i_total)},{r_r},{r_c},{int(s.target_present)},{los}\n")


def samples_from_csv(fh) -> SampleSet:
    header = fh.readline().strip()
    if not header.startswith("# v2xisac-samples"):
        raise ValueError("not a v2xisac samples file")
    meta = dict(tok.split("=", 1) for tok in header.split()[2:])
    cols = fh.readline().strip().split(",")
    if cols != ["engine", "index", "s_r_dbm", "s_c_dbm", "i_dbm", "r_r_m", "r_c_m",
                "target_present", "los_c"]:
        raise ValueError("unexpected samples CSV columns")
    samples = []
    for line in fh:
        parts = line.strip().split(",")
        if not parts or parts == [""]:
            continue
        samples.append(LinkSample(
            s_r=prop.dbm_to_watt(float(parts[2])),
            s_c=prop.dbm_to_watt(float(parts[3])),
            i_total=prop.dbm_to_watt(float(parts[4])),
            r_r=float(parts[5]) if parts[5] else None,
            r_c=float(parts[6]) if parts[6] else None,
            target_present=bool(int(parts[7])),
            los_c=bool(int(parts[8])) if parts[8] else None,
        ))
    return SampleSet(engine=meta["engine"], samples=samples, seed=int(meta["seed"]),
                     config_digest=meta["digest"])


def samples_to_binary(sample_set: SampleSet, fh):
    digest = sample_set.config_digest.encode()
    fh.write(struct.pack("<8sBQQB", _MAGIC, _ENGINE_CODE[sample_set.engine],
                         sample_set.seed, len(sample_set.samples), len(digest)))
    fh.write(digest)
    nan = float("nan")
    for s in sample_set.samples:
        flags = int(s.target_present)
        if s.los_c is not None:
            flags |= 2 | (4 if s.los_c else 0)
        fh.write(struct.pack("<dddddB", s.s_r, s.s_c, s.i_total,
                             nan if s.r_r is None else s.r_r,
                             nan if s.r_c is None else s.r_c, flags))


def samples_from_binary(fh) -> SampleSet:
    head = fh.read(struct.calcsize("<8sBQQB"))
    magic, code, seed, count, dlen = struct.unpack("<8sBQQB", head)
    if magic != _MAGIC:
        raise ValueError("not a v2xisac binary sample cache")
    digest = fh.read(dlen).decode()
    engine = {v: k for k, v in _ENGINE_CODE.items()}[code]
    rec = struct.Struct("<dddddB")
    samples = []
    for _ in range(count):
        s_r, s_c, i_tot, r_r, r_c, flags = rec.unpack(fh.read(rec.size))
        samples.append(LinkSample(
            s_r, s_c, i_tot,
            None if math.isnan(r_r) else r_r,
            None if math.isnan(r_c) else r_c,
            bool(flags & 1),
            bool(flags & 4) if flags & 2 else None,
        ))
    return SampleSet(engine=engine, samples=samples, seed=seed, config_digest=digest)


def counts_to_csv(counts, fh):
    fh.write("realization,same_lane,opposite_lane,interferers,rsus,cross_streets,lane_length_m\n")
    for c in counts:
        fh.write(f"{c.realization},{c.same_lane},{c.opposite_lane},{c.interferers},"
                 f"{c.rsus},{c.cross_streets},{c.lane_length:.3f}\n")


def counts_from_csv(fh):
    cols = fh.readline().strip().split(",")
    if cols[:2] != ["realization", "same_lane"]:
        raise ValueError("unexpected counts CSV columns")
    out = []
    for line in fh:
        p = line.strip().split(",")
        if not p or p == [""]:
            continue
        out.append(SceneCounts(int(p[0]), int(p[1]), int(p[2]), int(p[3]), int(p[4]),
                               int(p[5]), float(p[6])))
    return out
