"""Numba kernels: BVH traversal, ray-triangle tests, and the path tracer.

All kernels are nogil so row bands can run on Python threads; nothing here
mutates shared state. Per-sample randomness is a counter hash of
(seed, frame, pixel x, pixel y, sample index), which makes every output
bit-identical for any worker count or batch split.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

T_EPS = 1e-6          # minimum accepted ray parameter, meters
ORIGIN_NUDGE = 1e-7   # normal offset applied to secondary ray origins
INV_4PI = 1.0 / (4.0 * math.pi)

_GOLD = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_F64_NORM = 1.0 / 9007199254740992.0  # 2^-53


@njit(cache=True, nogil=True, inline="always")
def _mix64(x):
    x = (x ^ (x >> np.uint64(30))) * _MIX1
    x = (x ^ (x >> np.uint64(27))) * _MIX2
    return x ^ (x >> np.uint64(31))


@njit(cache=True, nogil=True, inline="always")
def rng_init(seed, frame, px, py, sample):
    s = _mix64(np.uint64(seed) ^ (np.uint64(frame) + _GOLD))
    s = _mix64(s ^ (np.uint64(px) + _GOLD))
    s = _mix64(s ^ (np.uint64(py) + _GOLD))
    s = _mix64(s ^ (np.uint64(sample) + _GOLD))
    return s


@njit(cache=True, nogil=True, inline="always")
def rng_next(state):
    state = state + _GOLD
    z = _mix64(state)
    return (z >> np.uint64(11)) * _F64_NORM, state


@njit(cache=True, nogil=True, inline="always")
def _safe_inv(d):
    if abs(d) > 1e-300:
        return 1.0 / d
    return 1e300 if d >= 0.0 else -1e300


@njit(cache=True, nogil=True, inline="always")
def _ray_tri(ox, oy, oz, dx, dy, dz, ax, ay, az,
             e1x, e1y, e1z, e2x, e2y, e2z):
    """Moller-Trumbore, two-sided. Returns (t, u, v); t < 0 means miss."""
    px = dy * e2z - dz * e2y
    py = dz * e2x - dx * e2z
    pz = dx * e2y - dy * e2x
    det = e1x * px + e1y * py + e1z * pz
    if abs(det) < 1e-14:
        return -1.0, 0.0, 0.0
    inv = 1.0 / det
    tx = ox - ax
    ty = oy - ay
    tz = oz - az
    u = (tx * px + ty * py + tz * pz) * inv
    if u < -1e-12 or u > 1.0 + 1e-12:
        return -1.0, 0.0, 0.0
    qx = ty * e1z - tz * e1y
    qy = tz * e1x - tx * e1z
    qz = tx * e1y - ty * e1x
    v = (dx * qx + dy * qy + dz * qz) * inv
    if v < -1e-12 or u + v > 1.0 + 1e-12:
        return -1.0, 0.0, 0.0
    t = (e2x * qx + e2y * qy + e2z * qz) * inv
    return t, u, v


@njit(cache=True, nogil=True, inline="always")
def _slab_hit(ox, oy, oz, ix, iy, iz, bmin, bmax, node, tmax):
    t1 = (bmin[node, 0] - ox) * ix
    t2 = (bmax[node, 0] - ox) * ix
    tlo = min(t1, t2)
    thi = max(t1, t2)
    t1 = (bmin[node, 1] - oy) * iy
    t2 = (bmax[node, 1] - oy) * iy
    tlo = max(tlo, min(t1, t2))
    thi = min(thi, max(t1, t2))
    t1 = (bmin[node, 2] - oz) * iz
    t2 = (bmax[node, 2] - oz) * iz
    tlo = max(tlo, min(t1, t2))
    thi = min(thi, max(t1, t2))
    return thi >= max(tlo, 0.0) and tlo <= tmax


@njit(cache=True, nogil=True)
def bvh_nearest(ox, oy, oz, dx, dy, dz,
                nmin, nmax, nleft, nfirst, ncount, norder,
                v0, e1, e2, stack):
    """Nearest hit with t > T_EPS; ties broken by lowest triangle index.

    Returns (t, tri_index, u, v); tri_index < 0 means no hit.
    """
    ix = _safe_inv(dx)
    iy = _safe_inv(dy)
    iz = _safe_inv(dz)
    best_t = np.inf
    best_g = -1
    best_u = 0.0
    best_v = 0.0
    sp = 0
    stack[sp] = 0
    sp += 1
    while sp > 0:
        sp -= 1
        node = stack[sp]
        if not _slab_hit(ox, oy, oz, ix, iy, iz, nmin, nmax, node, best_t):
            continue
        if ncount[node] > 0:
            first = nfirst[node]
            for k in range(first, first + ncount[node]):
                g = norder[k]
                t, u, v = _ray_tri(ox, oy, oz, dx, dy, dz,
                                   v0[g, 0], v0[g, 1], v0[g, 2],
                                   e1[g, 0], e1[g, 1], e1[g, 2],
                                   e2[g, 0], e2[g, 1], e2[g, 2])
                if t > T_EPS:
                    if t < best_t or (t == best_t and g < best_g):
                        best_t = t
                        best_g = g
                        best_u = u
                        best_v = v
        else:
            left = nleft[node]
            stack[sp] = left
            sp += 1
            stack[sp] = left + 1
            sp += 1
    return best_t, best_g, best_u, best_v


@njit(cache=True, nogil=True)
def bvh_occluded(ox, oy, oz, dx, dy, dz, tmax,
                 nmin, nmax, nleft, nfirst, ncount, norder,
                 v0, e1, e2, stack):
    """Any-hit test for t in (T_EPS, tmax)."""
    ix = _safe_inv(dx)
    iy = _safe_inv(dy)
    iz = _safe_inv(dz)
    sp = 0
    stack[sp] = 0
    sp += 1
    while sp > 0:
        sp -= 1
        node = stack[sp]
        if not _slab_hit(ox, oy, oz, ix, iy, iz, nmin, nmax, node, tmax):
            continue
        if ncount[node] > 0:
            first = nfirst[node]
            for k in range(first, first + ncount[node]):
                g = norder[k]
                t, u, v = _ray_tri(ox, oy, oz, dx, dy, dz,
                                   v0[g, 0], v0[g, 1], v0[g, 2],
                                   e1[g, 0], e1[g, 1], e1[g, 2],
                                   e2[g, 0], e2[g, 1], e2[g, 2])
                if T_EPS < t < tmax:
                    return True
        else:
            left = nleft[node]
            stack[sp] = left
            sp += 1
            stack[sp] = left + 1
            sp += 1
    return False


@njit(cache=True, nogil=True)
def k_intersect_rays(origins, dirs,
                     nmin, nmax, nleft, nfirst, ncount, norder,
                     v0, e1, e2, out_t, out_g, out_u, out_v):
    stack = np.empty(64, dtype=np.int64)
    for i in range(origins.shape[0]):
        t, g, u, v = bvh_nearest(origins[i, 0], origins[i, 1], origins[i, 2],
                                 dirs[i, 0], dirs[i, 1], dirs[i, 2],
                                 nmin, nmax, nleft, nfirst, ncount, norder,
                                 v0, e1, e2, stack)
        out_t[i] = t
        out_g[i] = g
        out_u[i] = u
        out_v[i] = v


@njit(cache=True, nogil=True)
def k_ground_truth(y0, y1, width, fx, fy, cx, cy, cam_rot, cam_rot_t, cam_t,
                   cam_center,
                   nmin, nmax, nleft, nfirst, ncount, norder,
                   v0, e1, e2, tri_inst, out_depth, out_inst):
    stack = np.empty(64, dtype=np.int64)
    ox, oy, oz = cam_center[0], cam_center[1], cam_center[2]
    for y in range(y0, y1):
        for x in range(width):
            dcx = (x - cx) / fx
            dcy = (y - cy) / fy
            dwx = cam_rot_t[0, 0] * dcx + cam_rot_t[0, 1] * dcy + cam_rot_t[0, 2]
            dwy = cam_rot_t[1, 0] * dcx + cam_rot_t[1, 1] * dcy + cam_rot_t[1, 2]
            dwz = cam_rot_t[2, 0] * dcx + cam_rot_t[2, 1] * dcy + cam_rot_t[2, 2]
            inv_n = 1.0 / math.sqrt(dwx * dwx + dwy * dwy + dwz * dwz)
            dwx *= inv_n
            dwy *= inv_n
            dwz *= inv_n
            t, g, u, v = bvh_nearest(ox, oy, oz, dwx, dwy, dwz,
                                     nmin, nmax, nleft, nfirst, ncount,
                                     norder, v0, e1, e2, stack)
            if g >= 0:
                px = ox + t * dwx
                py = oy + t * dwy
                pz = oz + t * dwz
                depth = (cam_rot[2, 0] * px + cam_rot[2, 1] * py
                         + cam_rot[2, 2] * pz + cam_t[2])
                out_depth[y, x] = depth
                out_inst[y, x] = tri_inst[g]
            else:
                out_depth[y, x] = 0.0
                out_inst[y, x] = 0


@njit(cache=True, nogil=True, inline="always")
def _onb(nx, ny, nz):
    """Branchless orthonormal basis around a unit normal."""
    sign = 1.0 if nz >= 0.0 else -1.0
    a = -1.0 / (sign + nz)
    b = nx * ny * a
    tx = 1.0 + sign * nx * nx * a
    ty = sign * b
    tz = -sign * nx
    bx = b
    by = sign + ny * ny * a
    bz = -ny
    return tx, ty, tz, bx, by, bz


@njit(cache=True, nogil=True, inline="always")
def _ggx_d(nh, alpha2):
    d = nh * nh * (alpha2 - 1.0) + 1.0
    return alpha2 / (math.pi * d * d)


@njit(cache=True, nogil=True, inline="always")
def _smith_g1(c, alpha2):
    return 2.0 * c / (c + math.sqrt(alpha2 + (1.0 - alpha2) * c * c))


@njit(cache=True, nogil=True, inline="always")
def _brdf_eval(ar, ag, ab, metallic, rough,
               nx, ny, nz, wox, woy, woz, wix, wiy, wiz):
    """Lambertian diffuse blended with a GGX lobe by `metallic`. Returns RGB."""
    cosi = nx * wix + ny * wiy + nz * wiz
    coso = nx * wox + ny * woy + nz * woz
    if cosi <= 0.0 or coso <= 0.0:
        return 0.0, 0.0, 0.0
    kd = (1.0 - metallic) / math.pi
    fr = kd * ar
    fg = kd * ag
    fb = kd * ab
    if metallic > 0.0:
        hx = wix + wox
        hy = wiy + woy
        hz = wiz + woz
        hl = math.sqrt(hx * hx + hy * hy + hz * hz)
        if hl > 1e-12:
            hx /= hl
            hy /= hl
            hz /= hl
            nh = nx * hx + ny * hy + nz * hz
            if nh > 0.0:
                alpha = rough * rough
                alpha2 = alpha * alpha
                d = _ggx_d(nh, alpha2)
                g = _smith_g1(cosi, alpha2) * _smith_g1(coso, alpha2)
                hwi = hx * wix + hy * wiy + hz * wiz
                fres = (1.0 - hwi) ** 5
                scale = metallic * d * g / (4.0 * cosi * coso)
                fr += scale * (ar + (1.0 - ar) * fres)
                fg += scale * (ag + (1.0 - ag) * fres)
                fb += scale * (ab + (1.0 - ab) * fres)
    return fr, fg, fb


@njit(cache=True, nogil=True, inline="always")
def _sample_brdf(state, metallic, rough, nx, ny, nz, wox, woy, woz):
    """One-sample mixture of cosine-diffuse and GGX-NDF lobes.

    Returns (wix, wiy, wiz, pdf, state); pdf <= 0 means absorbed.
    """
    tx, ty, tz, bx, by, bz = _onb(nx, ny, nz)
    r, state = rng_next(state)
    u1, state = rng_next(state)
    u2, state = rng_next(state)
    if r < metallic:
        alpha = rough * rough
        alpha2 = alpha * alpha
        cth = math.sqrt(max(0.0, (1.0 - u1) / (1.0 + (alpha2 - 1.0) * u1)))
        sth = math.sqrt(max(0.0, 1.0 - cth * cth))
        phi = 2.0 * math.pi * u2
        hlx = sth * math.cos(phi)
        hly = sth * math.sin(phi)
        hx = hlx * tx + hly * bx + cth * nx
        hy = hlx * ty + hly * by + cth * ny
        hz = hlx * tz + hly * bz + cth * nz
        hwo = hx * wox + hy * woy + hz * woz
        wix = 2.0 * hwo * hx - wox
        wiy = 2.0 * hwo * hy - woy
        wiz = 2.0 * hwo * hz - woz
    else:
        rad = math.sqrt(u1)
        phi = 2.0 * math.pi * u2
        lx = rad * math.cos(phi)
        ly = rad * math.sin(phi)
        lz = math.sqrt(max(0.0, 1.0 - u1))
        wix = lx * tx + ly * bx + lz * nx
        wiy = lx * ty + ly * by + lz * ny
        wiz = lx * tz + ly * bz + lz * nz
    cosi = nx * wix + ny * wiy + nz * wiz
    if cosi <= 0.0:
        return 0.0, 0.0, 0.0, -1.0, state
    # Mixture pdf evaluated at the chosen direction.
    pdf_d = cosi / math.pi
    pdf_s = 0.0
    if metallic > 0.0:
        hx = wix + wox
        hy = wiy + woy
        hz = wiz + woz
        hl = math.sqrt(hx * hx + hy * hy + hz * hz)
        if hl > 1e-12:
            hx /= hl
            hy /= hl
            hz /= hl
            nh = nx * hx + ny * hy + nz * hz
            hwo = hx * wox + hy * woy + hz * woz
            if nh > 0.0 and hwo > 1e-12:
                alpha = rough * rough
                alpha2 = alpha * alpha
                pdf_s = _ggx_d(nh, alpha2) * nh / (4.0 * hwo)
    pdf = metallic * pdf_s + (1.0 - metallic) * pdf_d
    return wix, wiy, wiz, pdf, state


@njit(cache=True, nogil=True, inline="always")
def _pattern_bilinear(pattern, u, v):
    """Bilinear lookup with pixel centers at integer coordinates.

    Returns -1.0 outside the raster footprint.
    """
    ph, pw = pattern.shape
    if u < -0.5 or u > pw - 0.5 or v < -0.5 or v > ph - 0.5:
        return -1.0
    x0 = int(math.floor(u))
    y0 = int(math.floor(v))
    fx = u - x0
    fy = v - y0
    x0c = min(max(x0, 0), pw - 1)
    x1c = min(max(x0 + 1, 0), pw - 1)
    y0c = min(max(y0, 0), ph - 1)
    y1c = min(max(y0 + 1, 0), ph - 1)
    a = pattern[y0c, x0c] * (1.0 - fx) + pattern[y0c, x1c] * fx
    b = pattern[y1c, x0c] * (1.0 - fx) + pattern[y1c, x1c] * fx
    return a * (1.0 - fy) + b * fy


@njit(cache=True, nogil=True)
def _projector_term(px, py, pz, nx, ny, nz,
                    pfx, pfy, pcx, pcy, proj_rot, proj_t, proj_center,
                    pattern, power,
                    nmin, nmax, nleft, nfirst, ncount, norder,
                    v0, e1, e2, stack):
    """Irradiance from the pattern projector at a surface point.

    Returns (E, wix, wiy, wiz); E = 0 when out of frustum, backfacing,
    unlit by the pattern, or shadowed.
    """
    xd = proj_rot[0, 0] * px + proj_rot[0, 1] * py + proj_rot[0, 2] * pz + proj_t[0]
    yd = proj_rot[1, 0] * px + proj_rot[1, 1] * py + proj_rot[1, 2] * pz + proj_t[1]
    zd = proj_rot[2, 0] * px + proj_rot[2, 1] * py + proj_rot[2, 2] * pz + proj_t[2]
    if zd <= 1e-12:
        return 0.0, 0.0, 0.0, 0.0
    up = pfx * xd / zd + pcx
    vp = pfy * yd / zd + pcy
    pat = _pattern_bilinear(pattern, up, vp)
    if pat <= 0.0:
        return 0.0, 0.0, 0.0, 0.0
    vx = proj_center[0] - px
    vy = proj_center[1] - py
    vz = proj_center[2] - pz
    d2 = vx * vx + vy * vy + vz * vz
    dist = math.sqrt(d2)
    wix = vx / dist
    wiy = vy / dist
    wiz = vz / dist
    coss = nx * wix + ny * wiy + nz * wiz
    if coss <= 0.0:
        return 0.0, 0.0, 0.0, 0.0
    sox = px + nx * ORIGIN_NUDGE
    soy = py + ny * ORIGIN_NUDGE
    soz = pz + nz * ORIGIN_NUDGE
    if bvh_occluded(sox, soy, soz, wix, wiy, wiz, dist - T_EPS,
                    nmin, nmax, nleft, nfirst, ncount, norder,
                    v0, e1, e2, stack):
        return 0.0, 0.0, 0.0, 0.0
    e = power * pat * coss * INV_4PI / d2
    return e, wix, wiy, wiz


@njit(cache=True, nogil=True)
def k_render(y0, y1, width, out,
             fx, fy, cx, cy, cam_rot, cam_rot_t, cam_center,
             nmin, nmax, nleft, nfirst, ncount, norder,
             v0, e1, e2, tri_mat,
             mat_albedo, mat_metallic, mat_rough,
             ambient, al_pos, al_size, al_rad,
             has_proj, pfx, pfy, pcx, pcy, proj_rot, proj_t, proj_center,
             pattern, power,
             spp, max_bounces, seed, frame):
    """Path-trace rows [y0, y1) into out (HxWx3, linear radiance)."""
    stack = np.empty(64, dtype=np.int64)
    n_lights = al_pos.shape[0]
    inv_spp = 1.0 / spp
    for y in range(y0, y1):
        for x in range(width):
            acc_r = 0.0
            acc_g = 0.0
            acc_b = 0.0
            for s in range(spp):
                state = rng_init(seed, frame, x, y, s)
                j1, state = rng_next(state)
                j2, state = rng_next(state)
                dcx = (x + j1 - 0.5 - cx) / fx
                dcy = (y + j2 - 0.5 - cy) / fy
                dx = cam_rot_t[0, 0] * dcx + cam_rot_t[0, 1] * dcy + cam_rot_t[0, 2]
                dy = cam_rot_t[1, 0] * dcx + cam_rot_t[1, 1] * dcy + cam_rot_t[1, 2]
                dz = cam_rot_t[2, 0] * dcx + cam_rot_t[2, 1] * dcy + cam_rot_t[2, 2]
                inv_n = 1.0 / math.sqrt(dx * dx + dy * dy + dz * dz)
                dx *= inv_n
                dy *= inv_n
                dz *= inv_n
                ox = cam_center[0]
                oy = cam_center[1]
                oz = cam_center[2]
                tp_r = 1.0
                tp_g = 1.0
                tp_b = 1.0
                res_r = 0.0
                res_g = 0.0
                res_b = 0.0
                for bounce in range(max_bounces + 1):
                    t, g, bu, bv = bvh_nearest(ox, oy, oz, dx, dy, dz,
                                               nmin, nmax, nleft, nfirst,
                                               ncount, norder, v0, e1, e2,
                                               stack)
                    if g < 0:
                        res_r += tp_r * ambient[0]
                        res_g += tp_g * ambient[1]
                        res_b += tp_b * ambient[2]
                        break
                    px = ox + t * dx
                    py = oy + t * dy
                    pz = oz + t * dz
                    nx = e1[g, 1] * e2[g, 2] - e1[g, 2] * e2[g, 1]
                    ny = e1[g, 2] * e2[g, 0] - e1[g, 0] * e2[g, 2]
                    nz = e1[g, 0] * e2[g, 1] - e1[g, 1] * e2[g, 0]
                    nl = math.sqrt(nx * nx + ny * ny + nz * nz)
                    nx /= nl
                    ny /= nl
                    nz /= nl
                    if nx * dx + ny * dy + nz * dz > 0.0:
                        nx = -nx
                        ny = -ny
                        nz = -nz
                    m = tri_mat[g]
                    ar = mat_albedo[m, 0]
                    ag = mat_albedo[m, 1]
                    ab = mat_albedo[m, 2]
                    metallic = mat_metallic[m]
                    rough = mat_rough[m]
                    wox = -dx
                    woy = -dy
                    woz = -dz
                    if has_proj != 0:
                        e_p, wix, wiy, wiz = _projector_term(
                            px, py, pz, nx, ny, nz,
                            pfx, pfy, pcx, pcy, proj_rot, proj_t, proj_center,
                            pattern, power,
                            nmin, nmax, nleft, nfirst, ncount, norder,
                            v0, e1, e2, stack)
                        if e_p > 0.0:
                            fr, fg_, fb = _brdf_eval(ar, ag, ab, metallic,
                                                     rough, nx, ny, nz,
                                                     wox, woy, woz,
                                                     wix, wiy, wiz)
                            res_r += tp_r * fr * e_p
                            res_g += tp_g * fg_ * e_p
                            res_b += tp_b * fb * e_p
                    for li in range(n_lights):
                        r1, state = rng_next(state)
                        r2, state = rng_next(state)
                        qx = al_pos[li, 0] + (r1 - 0.5) * al_size[li, 0]
                        qy = al_pos[li, 1] + (r2 - 0.5) * al_size[li, 1]
                        qz = al_pos[li, 2]
                        lvx = qx - px
                        lvy = qy - py
                        lvz = qz - pz
                        ld2 = lvx * lvx + lvy * lvy + lvz * lvz
                        ldist = math.sqrt(ld2)
                        if ldist < 1e-9:
                            continue
                        wix = lvx / ldist
                        wiy = lvy / ldist
                        wiz = lvz / ldist
                        coss = nx * wix + ny * wiy + nz * wiz
                        cosl = wiz  # emitter faces -z
                        if coss <= 0.0 or cosl <= 0.0:
                            continue
                        sox = px + nx * ORIGIN_NUDGE
                        soy = py + ny * ORIGIN_NUDGE
                        soz = pz + nz * ORIGIN_NUDGE
                        if bvh_occluded(sox, soy, soz, wix, wiy, wiz,
                                        ldist - T_EPS,
                                        nmin, nmax, nleft, nfirst, ncount,
                                        norder, v0, e1, e2, stack):
                            continue
                        fr, fg_, fb = _brdf_eval(ar, ag, ab, metallic, rough,
                                                 nx, ny, nz, wox, woy, woz,
                                                 wix, wiy, wiz)
                        area = al_size[li, 0] * al_size[li, 1]
                        w = coss * cosl * area / ld2
                        res_r += tp_r * fr * al_rad[li, 0] * w
                        res_g += tp_g * fg_ * al_rad[li, 1] * w
                        res_b += tp_b * fb * al_rad[li, 2] * w
                    if bounce == max_bounces:
                        break
                    wix, wiy, wiz, pdf, state = _sample_brdf(
                        state, metallic, rough, nx, ny, nz, wox, woy, woz)
                    if pdf <= 1e-12:
                        break
                    cosi = nx * wix + ny * wiy + nz * wiz
                    fr, fg_, fb = _brdf_eval(ar, ag, ab, metallic, rough,
                                             nx, ny, nz, wox, woy, woz,
                                             wix, wiy, wiz)
                    scale = cosi / pdf
                    tp_r *= fr * scale
                    tp_g *= fg_ * scale
                    tp_b *= fb * scale
                    if tp_r <= 0.0 and tp_g <= 0.0 and tp_b <= 0.0:
                        break
                    ox = px + nx * ORIGIN_NUDGE
                    oy = py + ny * ORIGIN_NUDGE
                    oz = pz + nz * ORIGIN_NUDGE
                    dx = wix
                    dy = wiy
                    dz = wiz
                acc_r += res_r
                acc_g += res_g
                acc_b += res_b
            out[y, x, 0] = acc_r * inv_spp
            out[y, x, 1] = acc_g * inv_spp
            out[y, x, 2] = acc_b * inv_spp
