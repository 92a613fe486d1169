"""Deterministic 2.5D geometric propagation engine over rectangle scenes.

Geometry is plan-view (x, y): every block is an axis-aligned rectangle with
vertical faces, visibility and specular reflection are solved in 2D, and
antenna heights enter only through the unfolded 3D path length (height
differences here are small compared to along-street distances, and ground or
rooftop interactions are out of scope).

Enumerated path classes, up to two interactions:

* direct (when the open segment is unobstructed),
* one or two specular reflections via the image method,
* knife-edge diffraction on a vertical block edge, only as the *last*
  interaction: direct-to-edge or reflection-then-edge.

Face ids are (rect id, face index) with faces ordered x=xmin, x=xmax,
y=ymin, y=ymax; edge ids are (rect id, corner index) with corners ordered
(xmin,ymin), (xmax,ymin), (xmax,ymax), (xmin,ymax).

The Fresnel parameter of an edge is computed against the straight line from
the (unfolded) source to the receiver; its sign is positive when the real
last-leg segment is obstructed by the edge's own block.  Knife-edge loss
uses the single-edge approximation 6.9 + 20*log10(sqrt((v-0.1)^2+1)+v-0.1)
dB for v > -0.78 and 0 dB below; edges losing more than the configurable
floor are dropped, as are edges with v <= -0.78 (their contribution
duplicates the direct ray).

Multipath is summed coherently by default: the observed power oscillations
versus distance come from interference between the echo and edge-diffracted
replicas, which only a coherent sum reproduces.  A power-sum mode exists for
sensitivity checks.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass

import numpy as np

from .propagation import C_LIGHT

_EPS = 1e-9
_NU_CLEAR = -0.78  # below this Fresnel parameter the edge does not shadow


@dataclass(frozen=True)
class Interaction:
    kind: str  # 'reflection' | 'diffraction'
    rect: int
    index: int  # face index for reflections, corner index for diffractions
    loss_db: float = 0.0  # knife-edge loss, 0 for reflections


@dataclass
class RayPath:
    vertices: tuple  # ordered 3D points, TX first, RX last
    interactions: tuple
    length: float  # unfolded 3D length, m
    amplitude: complex = 0j

    @property
    def n_reflections(self):
        return sum(1 for i in self.interactions if i.kind == "reflection")

    @property
    def gain_db(self):
        a2 = abs(self.amplitude) ** 2
        return -math.inf if a2 == 0.0 else 10.0 * math.log10(a2)


@dataclass
class PathSet:
    paths: list
    tx: tuple
    rx: tuple
    target_id: int | None = None


@dataclass
class _SceneArrays:
    bounds: np.ndarray  # (M, 4)
    axis: np.ndarray  # (4M,) 0 for x=const faces, 1 for y=const
    coord: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    sign: np.ndarray
    rect: np.ndarray
    face_idx: np.ndarray
    corners: np.ndarray  # (4M, 2)
    corner_rect: np.ndarray
    corner_idx: np.ndarray


def _scene_arrays(scene) -> _SceneArrays:
    cache = getattr(scene, "_tracer_arrays", None)
    if cache is not None:
        return cache
    b = scene.rect_bounds
    m = b.shape[0]
    if m == 0:
        e = np.empty(0)
        ei = np.empty(0, dtype=int)
        arr = _SceneArrays(b, ei, e, e, e, e, ei, ei, np.empty((0, 2)), ei, ei)
    else:
        axis = np.tile(np.array([0, 0, 1, 1]), m)
        coord = np.column_stack([b[:, 0], b[:, 2], b[:, 1], b[:, 3]]).ravel()
        lo = np.column_stack([b[:, 1], b[:, 1], b[:, 0], b[:, 0]]).ravel()
        hi = np.column_stack([b[:, 3], b[:, 3], b[:, 2], b[:, 2]]).ravel()
        sign = np.tile(np.array([-1.0, 1.0, -1.0, 1.0]), m)
        rect = np.repeat(np.arange(m), 4)
        face_idx = np.tile(np.arange(4), m)
        cx = np.column_stack([b[:, 0], b[:, 2], b[:, 2], b[:, 0]]).ravel()
        cy = np.column_stack([b[:, 1], b[:, 1], b[:, 3], b[:, 3]]).ravel()
        arr = _SceneArrays(b, axis, coord, lo, hi, sign, rect, face_idx,
                           np.column_stack([cx, cy]),
                           np.repeat(np.arange(m), 4), np.tile(np.arange(4), m))
    try:
        scene._tracer_arrays = arr
    except AttributeError:
        pass
    return arr


def _contains_batch(bounds, pts):
    """(K, M) mask: point k lies in rect m (boundaries inclusive)."""
    return ((bounds[None, :, 0] - _EPS <= pts[:, 0:1]) & (pts[:, 0:1] <= bounds[None, :, 2] + _EPS)
            & (bounds[None, :, 1] - _EPS <= pts[:, 1:2]) & (pts[:, 1:2] <= bounds[None, :, 3] + _EPS))


def _hit_batch(p, q, bounds):
    """(K, M) slab test: open segment k crosses rect m.

    Touching a boundary exactly at an endpoint does not count; running
    along a face line does (grazing incidence is treated as blocked).
    """
    k = p.shape[0]
    m = bounds.shape[0]
    if m == 0 or k == 0:
        return np.zeros((k, m), dtype=bool)
    t_lo = np.zeros((k, m))
    t_hi = np.ones((k, m))
    ok = np.ones((k, m), dtype=bool)
    for ax in range(2):
        d = (q[:, ax] - p[:, ax])[:, None]
        lo = bounds[None, :, ax]
        hi = bounds[None, :, ax + 2]
        nz = np.abs(d) > 1e-300
        dd = np.where(nz, d, 1.0)
        t0 = (lo - p[:, ax][:, None]) / dd
        t1 = (hi - p[:, ax][:, None]) / dd
        t_lo = np.where(nz, np.maximum(t_lo, np.minimum(t0, t1)), t_lo)
        t_hi = np.where(nz, np.minimum(t_hi, np.maximum(t0, t1)), t_hi)
        inside = (p[:, ax][:, None] >= lo - _EPS) & (p[:, ax][:, None] <= hi + _EPS)
        ok &= nz | inside
    return ok & (t_hi - t_lo > 1e-12) & (t_hi > _EPS) & (t_lo < 1.0 - _EPS)


def _legs_clear(arr, p, q, forgive_p=True, forgive_q=True, extra=()):
    """(K,) mask of unobstructed open segments.

    ``forgive_p``/``forgive_q`` drop blocks containing the respective
    endpoint (a node sees out of its own block); ``extra`` lists (K,) rect
    index arrays to forgive as well (reflecting faces' own blocks).
    """
    p = np.atleast_2d(np.asarray(p, dtype=float))
    q = np.atleast_2d(np.asarray(q, dtype=float))
    hits = _hit_batch(p, q, arr.bounds)
    if not hits.any():
        return np.ones(p.shape[0], dtype=bool)
    excl = np.zeros_like(hits)
    if forgive_p:
        excl |= _contains_batch(arr.bounds, p)
    if forgive_q:
        excl |= _contains_batch(arr.bounds, q)
    rows = np.arange(p.shape[0])
    for rect_ids in extra:
        excl[rows, rect_ids] = True
    return ~(hits & excl.__invert__()).any(axis=1)


def visible(p, q, scene) -> bool:
    """True iff the open plan-view segment pq misses every block, ignoring
    blocks that contain an endpoint (a node sees out of its own block)."""
    p2 = (float(p[0]), float(p[1]))
    q2 = (float(q[0]), float(q[1]))
    if p2 == q2:
        raise ValueError("visibility of a degenerate segment is undefined")
    return bool(_legs_clear(_scene_arrays(scene), [p2], [q2])[0])


def _make_path(tx, rx, mid_xy, interactions):
    """Assemble a RayPath from plan-view interaction points; z is unfolded
    linearly along the polyline between the antenna heights."""
    pts = [(tx[0], tx[1])] + [(float(p[0]), float(p[1])) for p in mid_xy] + [(rx[0], rx[1])]
    s = [0.0]
    for (x0, y0), (x1, y1) in zip(pts[:-1], pts[1:]):
        s.append(s[-1] + math.hypot(x1 - x0, y1 - y0))
    total = s[-1]
    if total <= 0.0:
        raise ValueError("degenerate path")
    dz = rx[2] - tx[2]
    verts = tuple((x, y, tx[2] + dz * si / total) for (x, y), si in zip(pts, s))
    return RayPath(vertices=verts, interactions=tuple(interactions),
                   length=math.hypot(total, dz))


def _reflect_once_candidates(arr, txy, rxy):
    """Geometric single-bounce candidates (before visibility): returns
    face indices and specular points."""
    ax = arr.axis
    tx_a = np.where(ax == 0, txy[0], txy[1])
    tx_o = np.where(ax == 0, txy[1], txy[0])
    rx_a = np.where(ax == 0, rxy[0], rxy[1])
    rx_o = np.where(ax == 0, rxy[1], rxy[0])
    cand = (arr.sign * (tx_a - arr.coord) > _EPS) & (arr.sign * (rx_a - arr.coord) > _EPS)
    img_a = 2.0 * arr.coord - tx_a
    denom = rx_a - img_a
    cand &= np.abs(denom) > 1e-12
    t = (arr.coord - img_a) / np.where(np.abs(denom) > 1e-12, denom, 1.0)
    cand &= (t > _EPS) & (t < 1.0 - _EPS)
    sp_o = tx_o + t * (rx_o - tx_o)
    cand &= (sp_o >= arr.lo - _EPS) & (sp_o <= arr.hi + _EPS)
    idx = np.nonzero(cand)[0]
    if idx.size == 0:
        return idx, np.empty((0, 2))
    sp = np.where((ax[idx] == 0)[:, None],
                  np.column_stack([arr.coord[idx], sp_o[idx]]),
                  np.column_stack([sp_o[idx], arr.coord[idx]]))
    return idx, sp


def _reflect_paths_impl(tx, rx, scene, max_order):
    arr = _scene_arrays(scene)
    single = []
    paths = []
    if arr.bounds.shape[0] == 0:
        return paths, single
    txy = np.array([float(tx[0]), float(tx[1])])
    rxy = np.array([float(rx[0]), float(rx[1])])

    idx, sp = _reflect_once_candidates(arr, txy, rxy)
    if idx.size:
        rects = arr.rect[idx]
        good = (_legs_clear(arr, np.broadcast_to(txy, sp.shape), sp, extra=(rects,))
                & _legs_clear(arr, sp, np.broadcast_to(rxy, sp.shape), extra=(rects,)))
        for n in np.nonzero(good)[0]:
            fi = int(idx[n])
            path = _make_path(tx, rx, [sp[n]],
                              [Interaction("reflection", int(arr.rect[fi]), int(arr.face_idx[fi]))])
            paths.append(path)
            single.append((fi, sp[n], path))
    if max_order < 2:
        return paths, single

    # double bounce: compressed mesh over ordered face pairs (f1, f2)
    ax = arr.axis
    tx_a = np.where(ax == 0, txy[0], txy[1])
    rx_a = np.where(ax == 0, rxy[0], rxy[1])
    f1_sel = np.nonzero(arr.sign * (tx_a - arr.coord) > _EPS)[0]
    f2_sel = np.nonzero(arr.sign * (rx_a - arr.coord) > _EPS)[0]
    if f1_sel.size == 0 or f2_sel.size == 0:
        return paths, single

    a1 = ax[f1_sel][:, None]
    c1 = arr.coord[f1_sel][:, None]
    s1 = arr.sign[f1_sel][:, None]
    lo1 = arr.lo[f1_sel][:, None]
    hi1 = arr.hi[f1_sel][:, None]
    img1_x = np.where(a1 == 0, 2.0 * c1 - txy[0], txy[0])
    img1_y = np.where(a1 == 1, 2.0 * c1 - txy[1], txy[1])

    a2 = ax[f2_sel][None, :]
    c2 = arr.coord[f2_sel][None, :]
    s2 = arr.sign[f2_sel][None, :]
    lo2 = arr.lo[f2_sel][None, :]
    hi2 = arr.hi[f2_sel][None, :]

    valid = f1_sel[:, None] != f2_sel[None, :]
    img1_a2 = np.where(a2 == 0, img1_x, img1_y)
    valid &= s2 * (img1_a2 - c2) > _EPS
    img2_a2 = 2.0 * c2 - img1_a2
    img2_o2 = np.where(a2 == 0, img1_y, img1_x)
    rx_a2 = np.where(a2 == 0, rxy[0], rxy[1])
    rx_o2 = np.where(a2 == 0, rxy[1], rxy[0])
    den2 = rx_a2 - img2_a2
    valid &= np.abs(den2) > 1e-12
    t2 = (c2 - img2_a2) / np.where(np.abs(den2) > 1e-12, den2, 1.0)
    valid &= (t2 > _EPS) & (t2 < 1.0 - _EPS)
    sp2_o2 = img2_o2 + t2 * (rx_o2 - img2_o2)
    valid &= (sp2_o2 >= lo2 - _EPS) & (sp2_o2 <= hi2 + _EPS)
    sp2_x = np.where(a2 == 0, c2, sp2_o2)
    sp2_y = np.where(a2 == 0, sp2_o2, c2)

    sp2_a1 = np.where(a1 == 0, sp2_x, sp2_y)
    valid &= s1 * (sp2_a1 - c1) > _EPS
    img1_a1 = np.where(a1 == 0, img1_x, img1_y)
    den1 = sp2_a1 - img1_a1
    valid &= np.abs(den1) > 1e-12
    t1 = (c1 - img1_a1) / np.where(np.abs(den1) > 1e-12, den1, 1.0)
    valid &= (t1 > _EPS) & (t1 < 1.0 - _EPS)
    img1_o1 = np.where(a1 == 0, img1_y, img1_x)
    sp2_o1 = np.where(a1 == 0, sp2_y, sp2_x)
    sp1_o1 = img1_o1 + t1 * (sp2_o1 - img1_o1)
    valid &= (sp1_o1 >= lo1 - _EPS) & (sp1_o1 <= hi1 + _EPS)

    ii, jj = np.nonzero(valid)
    if ii.size:
        fi = f1_sel[ii]
        fj = f2_sel[jj]
        a1f = ax[fi]
        sp1 = np.where((a1f == 0)[:, None],
                       np.column_stack([arr.coord[fi], sp1_o1[ii, jj]]),
                       np.column_stack([sp1_o1[ii, jj], arr.coord[fi]]))
        sp2 = np.column_stack([np.broadcast_to(sp2_x, valid.shape)[ii, jj],
                               np.broadcast_to(sp2_y, valid.shape)[ii, jj]])
        r1 = arr.rect[fi]
        r2 = arr.rect[fj]
        good = (_legs_clear(arr, np.broadcast_to(txy, sp1.shape), sp1, extra=(r1,))
                & _legs_clear(arr, sp1, sp2, extra=(r1, r2))
                & _legs_clear(arr, sp2, np.broadcast_to(rxy, sp2.shape), extra=(r2,)))
        for n in np.nonzero(good)[0]:
            paths.append(_make_path(
                tx, rx, [sp1[n], sp2[n]],
                [Interaction("reflection", int(r1[n]), int(arr.face_idx[fi[n]])),
                 Interaction("reflection", int(r2[n]), int(arr.face_idx[fj[n]]))]))
    return paths, single


def reflect_paths(tx, rx, scene, max_order=2):
    """All specular reflection paths with up to ``max_order`` bounces,
    found with the image method and validated for face containment and
    segment visibility."""
    if max_order not in (1, 2):
        raise ValueError("max_order must be 1 or 2")
    paths, _ = _reflect_paths_impl(tx, rx, scene, max_order)
    return paths


def knife_edge_loss_db(nu):
    """Single knife-edge loss approximation; 0 dB for nu <= -0.78."""
    nu_arr = np.asarray(nu, dtype=float)
    u = nu_arr - 0.1
    loss = 6.9 + 20.0 * np.log10(np.sqrt(u * u + 1.0) + u)
    out = np.where(nu_arr > _NU_CLEAR, loss, 0.0)
    return float(out) if np.ndim(nu) == 0 else out


def fresnel_nu(h_signed, d1, d2, wavelength):
    return h_signed * math.sqrt(2.0 * (d1 + d2) / (wavelength * d1 * d2))


def _diffract_from_sources(tx, rx, scene, f_c, sources, floor_db):
    """Edge enumeration for a list of (real point, unfolded source,
    post-reflection face or None, interaction prefix, vertex prefix)."""
    arr = _scene_arrays(scene)
    if arr.bounds.shape[0] == 0:
        return []
    wavelength = C_LIGHT / f_c
    rxy = np.array([float(rx[0]), float(rx[1])])
    e = arr.corners
    paths = []
    for p_real, p_unfold, post_face, prefix_int, prefix_pts in sources:
        du = rxy - p_unfold
        ulen = math.hypot(du[0], du[1])
        if ulen <= _EPS:
            continue
        rel = e - p_unfold
        h = np.abs(du[0] * rel[:, 1] - du[1] * rel[:, 0]) / ulen
        d1 = np.hypot(rel[:, 0], rel[:, 1])
        d2 = np.hypot(e[:, 0] - rxy[0], e[:, 1] - rxy[1])
        good = (d1 > 1e-6) & (d2 > 1e-6)
        if post_face is not None:
            fa, fc, fs = post_face
            e_a = e[:, 0] if fa == 0 else e[:, 1]
            good &= fs * (e_a - fc) > _EPS
        # sign: positive when the real last leg is obstructed by the
        # edge's own block
        hits = _hit_batch(p_real[None, :], rxy[None, :], arr.bounds)[0]
        excl = (_contains_batch(arr.bounds, p_real[None, :])[0]
                | _contains_batch(arr.bounds, rxy[None, :])[0])
        blocked = hits & ~excl
        sign = np.where(blocked[arr.corner_rect], 1.0, -1.0)
        nu = sign * h * np.sqrt(2.0 * (d1 + d2) / (wavelength * d1 * d2))
        keep = good & (nu > _NU_CLEAR)
        loss = knife_edge_loss_db(np.where(keep, nu, 0.0))
        keep &= loss <= floor_db
        ks = np.nonzero(keep)[0]
        if ks.size == 0:
            continue
        ek = e[ks]
        # the leg towards the edge must not be forgiven for the edge's own
        # block: a segment through the interior to a far corner is blocked
        ok = (_legs_clear(arr, np.broadcast_to(p_real, ek.shape), ek, forgive_q=False)
              & _legs_clear(arr, ek, np.broadcast_to(rxy, ek.shape), forgive_p=False))
        for n in np.nonzero(ok)[0]:
            k = int(ks[n])
            inter = list(prefix_int) + [Interaction("diffraction", int(arr.corner_rect[k]),
                                                    int(arr.corner_idx[k]), loss_db=float(loss[k]))]
            paths.append(_make_path(tx, rx, list(prefix_pts) + [e[k]], inter))
    return paths


def _reflection_sources(arr, txy, single):
    sources = []
    for fi, sp1, _path in single:
        a1 = int(arr.axis[fi])
        img1 = txy.copy()
        img1[a1] = 2.0 * arr.coord[fi] - txy[a1]
        sources.append((np.asarray(sp1, dtype=float), img1,
                        (a1, arr.coord[fi], arr.sign[fi]),
                        list(_path.interactions), [sp1]))
    return sources


def diffract_paths(tx, rx, scene, f_c, after_reflection=False, floor_db=40.0):
    """Knife-edge diffraction paths with the edge as the last interaction.

    ``after_reflection`` enumerates TX -> reflection -> edge -> RX instead
    of TX -> edge -> RX; the Fresnel geometry then uses the mirrored source
    so that d1 is the full travelled distance to the edge.
    """
    arr = _scene_arrays(scene)
    txy = np.array([float(tx[0]), float(tx[1])])
    if not after_reflection:
        sources = [(txy, txy, None, [], [])]
    else:
        _paths, single = _reflect_paths_impl(tx, rx, scene, max_order=1)
        sources = _reflection_sources(arr, txy, single)
    return _diffract_from_sources(tx, rx, scene, f_c, sources, floor_db)


def path_amplitude(path: RayPath, f_c, reflection_coeff) -> complex:
    """Complex amplitude: free-space factor for the unfolded length, one
    constant coefficient per bounce, the knife-edge factor per diffraction,
    and the propagation phase."""
    if path.length <= 0.0:
        raise ValueError("path length must be positive")
    coeff = complex(1.0, 0.0)
    for it in path.interactions:
        if it.kind == "reflection":
            coeff *= reflection_coeff
        else:
            coeff *= 10.0 ** (-it.loss_db / 20.0)
    mag = C_LIGHT / (4.0 * math.pi * f_c * path.length)
    phase = -2.0 * math.pi * f_c * path.length / C_LIGHT
    return mag * coeff * cmath.exp(1j * phase)


def _in_cone(direction, cone):
    if cone is None:
        return True
    boresight, width = cone
    ang = math.atan2(direction[1], direction[0])
    diff = (ang - boresight + math.pi) % (2.0 * math.pi) - math.pi
    return abs(diff) <= width / 2.0 + 1e-12


def _cone_ok(path: RayPath, tx_cone, rx_cone):
    v = path.vertices
    dep = (v[1][0] - v[0][0], v[1][1] - v[0][1])
    arr_dir = (v[-2][0] - v[-1][0], v[-2][1] - v[-1][1])
    return _in_cone(dep, tx_cone) and _in_cone(arr_dir, rx_cone)


def _sort_key(path: RayPath):
    ids = tuple((i.kind, i.rect, i.index) for i in path.interactions)
    return (len(path.interactions), ids, path.length)


def trace_paths(tx, rx, scene, f_c, reflection_coeff=complex(-0.63, 0.0),
                max_order=2, floor_db=40.0, tx_cone=None, rx_cone=None,
                include_diffraction=True, diffraction_after_reflection=True,
                target_id=None) -> PathSet:
    """Enumerate every path class, apply antenna visibility cones to the
    departure and arrival directions, and fill in amplitudes."""
    tx = tuple(float(v) for v in tx)
    rx = tuple(float(v) for v in rx)
    txy = np.array(tx[:2])
    paths = []
    if visible(tx, rx, scene):
        paths.append(_make_path(tx, rx, [], []))
    refl, single = _reflect_paths_impl(tx, rx, scene, max_order)
    paths += refl
    if include_diffraction:
        sources = [(txy, txy, None, [], [])]
        if max_order >= 2 and diffraction_after_reflection:
            sources += _reflection_sources(_scene_arrays(scene), txy, single)
        paths += _diffract_from_sources(tx, rx, scene, f_c, sources, floor_db)
    paths = [p for p in paths if _cone_ok(p, tx_cone, rx_cone)]
    for p in paths:
        p.amplitude = path_amplitude(p, f_c, reflection_coeff)
    paths.sort(key=_sort_key)
    seqs = [tuple((i.kind, i.rect, i.index) for i in p.interactions) for p in paths]
    assert len(seqs) == len(set(seqs)), "duplicate interaction sequences"
    return PathSet(paths=paths, tx=tx, rx=rx, target_id=target_id)


def received_power(path_set: PathSet, p_tx=1.0, gain=1.0, coherent=True) -> float:
    """Coherent (default) or power-law sum over the path amplitudes."""
    if not path_set.paths:
        return 0.0
    amps = np.array([p.amplitude for p in path_set.paths])
    total = abs(np.sum(amps)) ** 2 if coherent else float(np.sum(np.abs(amps) ** 2))
    return float(total * p_tx * gain)


def filter_clutter(path_set: PathSet, target_id=None) -> PathSet:
    """Keep only paths that interact with the target block at least once."""
    tid = path_set.target_id if target_id is None else target_id
    if tid is None:
        raise ValueError("filter_clutter requires a target id")
    kept = [p for p in path_set.paths if any(i.rect == tid for i in p.interactions)]
    return PathSet(paths=kept, tx=path_set.tx, rx=path_set.rx, target_id=tid)


def paths_to_csv(path_set: PathSet, fh):
    """Per-path dump: id, interaction sequence, length, gain, phase."""
    fh.write("path,interactions,length_m,gain_db,phase_rad\n")
    for n, p in enumerate(path_set.paths):
        seq = "|".join(f"{i.kind[0]}{i.rect}.{i.index}" for i in p.interactions) or "direct"
        phase = cmath.phase(p.amplitude) if p.amplitude != 0 else 0.0
        fh.write(f"{n},{seq},{p.length:.6f},{p.gain_db:.4f},{phase:.6f}\n")
