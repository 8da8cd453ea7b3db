# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner loops.  Semantics mirror ``_pykernels`` exactly."""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, floor, fabs, sqrt, cos, sin, M_PI, lround

cnp.import_array()


def refine_extrema(double[:, :, ::1] dog, long[::1] layers, long[::1] ys, long[::1] xs,
                   int n_scales, double contrast_threshold, double edge_threshold,
                   int border, int max_iter=5):
    cdef Py_ssize_t n = layers.shape[0]
    cdef int L = dog.shape[0], H = dog.shape[1], W = dog.shape[2]
    out = np.zeros((n, 4), dtype=np.float64)
    pos = np.zeros((n, 3), dtype=np.int64)
    ok = np.zeros(n, dtype=np.uint8)
    cdef double[:, ::1] o = out
    cdef long[:, ::1] p = pos
    cdef unsigned char[::1] k = ok
    cdef Py_ssize_t i
    cdef int it, l, y, x, converged, pl, py, px, nl, ny, nx
    cdef double dx, dy, ds, dxx, dyy, dss, dxy, dxs, dys, v, det, ox, oy, os_, contrast, tr, det2
    cdef double a00, a01, a02, a11, a12, a22, c00, c01, c02, c11, c12, c22
    cdef double thr = contrast_threshold / n_scales
    cdef double edge = (edge_threshold + 1.0) * (edge_threshold + 1.0) / edge_threshold
    for i in range(n):
        l = layers[i]; y = ys[i]; x = xs[i]
        converged = 0
        pl = -1; py = -1; px = -1
        ox = 0.0; oy = 0.0; os_ = 0.0
        dx = 0.0; dy = 0.0; ds = 0.0
        for it in range(max_iter):
            v = dog[l, y, x]
            dx = 0.5 * (dog[l, y, x + 1] - dog[l, y, x - 1])
            dy = 0.5 * (dog[l, y + 1, x] - dog[l, y - 1, x])
            ds = 0.5 * (dog[l + 1, y, x] - dog[l - 1, y, x])
            dxx = dog[l, y, x + 1] + dog[l, y, x - 1] - 2.0 * v
            dyy = dog[l, y + 1, x] + dog[l, y - 1, x] - 2.0 * v
            dss = dog[l + 1, y, x] + dog[l - 1, y, x] - 2.0 * v
            dxy = 0.25 * (dog[l, y + 1, x + 1] - dog[l, y + 1, x - 1] - dog[l, y - 1, x + 1] + dog[l, y - 1, x - 1])
            dxs = 0.25 * (dog[l + 1, y, x + 1] - dog[l + 1, y, x - 1] - dog[l - 1, y, x + 1] + dog[l - 1, y, x - 1])
            dys = 0.25 * (dog[l + 1, y + 1, x] - dog[l + 1, y - 1, x] - dog[l - 1, y + 1, x] + dog[l - 1, y - 1, x])
            # symmetric 3x3 inverse by cofactors
            a00 = dxx; a01 = dxy; a02 = dxs; a11 = dyy; a12 = dys; a22 = dss
            c00 = a11 * a22 - a12 * a12
            c01 = a02 * a12 - a01 * a22
            c02 = a01 * a12 - a02 * a11
            c11 = a00 * a22 - a02 * a02
            c12 = a01 * a02 - a00 * a12
            c22 = a00 * a11 - a01 * a01
            det = a00 * c00 + a01 * c01 + a02 * c02
            if det == 0.0:
                break
            ox = -(c00 * dx + c01 * dy + c02 * ds) / det
            oy = -(c01 * dx + c11 * dy + c12 * ds) / det
            os_ = -(c02 * dx + c12 * dy + c22 * ds) / det
            if fabs(ox) < 0.5 and fabs(oy) < 0.5 and fabs(os_) < 0.5:
                converged = 1
                break
            if fabs(ox) > 1e6 or fabs(oy) > 1e6 or fabs(os_) > 1e6:
                break
            nx = x + <int>lround(ox)
            ny = y + <int>lround(oy)
            nl = l + <int>lround(os_)
            if nl == pl and ny == py and nx == px and fabs(ox) < 1.0 and fabs(oy) < 1.0 and fabs(os_) < 1.0:
                # bouncing between two samples: the extremum lies between them
                converged = 1
                break
            pl = l; py = y; px = x
            l = nl; y = ny; x = nx
            if l < 1 or l > L - 2 or y < border or y >= H - border or x < border or x >= W - border:
                break
        if not converged:
            continue
        contrast = dog[l, y, x] + 0.5 * (dx * ox + dy * oy + ds * os_)
        if fabs(contrast) < thr:
            continue
        tr = dxx + dyy
        det2 = dxx * dyy - dxy * dxy
        if det2 <= 0.0 or tr * tr >= edge * det2:
            continue
        o[i, 0] = x + ox
        o[i, 1] = y + oy
        o[i, 2] = l + os_
        o[i, 3] = contrast
        p[i, 0] = l
        p[i, 1] = y
        p[i, 2] = x
        k[i] = 1
    return out, pos, ok.astype(bool)


def orientation_histograms(double[:, :, ::1] mag, double[:, :, ::1] ang, long[::1] layers,
                           double[::1] ys, double[::1] xs, double[::1] sigmas, int nbins=36):
    cdef Py_ssize_t n = layers.shape[0]
    cdef int H = mag.shape[1], W = mag.shape[2]
    hist = np.zeros((n, nbins), dtype=np.float64)
    cdef double[:, ::1] h = hist
    cdef Py_ssize_t i
    cdef int l, radius, cx, cy, px, py, b
    cdef double s, inv2s2, ddx, ddy, w
    for i in range(n):
        l = layers[i]
        s = 1.5 * sigmas[i]
        radius = <int>lround(3.0 * s)
        inv2s2 = 1.0 / (2.0 * s * s)
        cx = <int>lround(xs[i]); cy = <int>lround(ys[i])
        for py in range(cy - radius, cy + radius + 1):
            if py < 1 or py > H - 2:
                continue
            for px in range(cx - radius, cx + radius + 1):
                if px < 1 or px > W - 2:
                    continue
                ddx = px - xs[i]; ddy = py - ys[i]
                w = exp(-(ddx * ddx + ddy * ddy) * inv2s2)
                b = <int>floor(ang[l, py, px] * nbins / (2.0 * M_PI))
                b = b % nbins
                if b < 0:
                    b += nbins
                h[i, b] += w * mag[l, py, px]
    return hist


def descriptors(double[:, :, ::1] mag, double[:, :, ::1] ang, long[::1] layers,
                double[::1] ys, double[::1] xs, double[::1] sigmas, double[::1] oris):
    cdef Py_ssize_t n = layers.shape[0]
    cdef int H = mag.shape[1], W = mag.shape[2]
    cdef int d = 4, nb = 8
    out = np.zeros((n, d * d * nb), dtype=np.float64)
    cdef double[:, ::1] o = out
    cdef double[::1] hst = np.zeros(d * d * nb, dtype=np.float64)
    cdef Py_ssize_t i, j
    cdef int l, radius, cx, cy, px, py, r0, c0, b0, dr, dc, db, rr, cc, bb
    cdef double hw, cos_t, sin_t, ddx, ddy, c_rot, r_rot, rbin, cbin, obin, w, m, fr, fc, fo
    cdef double wr, wc, wo, norm, thr
    for i in range(n):
        l = layers[i]
        hw = 3.0 * sigmas[i]
        radius = <int>lround(hw * sqrt(2.0) * (d + 1) * 0.5)
        cos_t = cos(oris[i]) / hw
        sin_t = sin(oris[i]) / hw
        cx = <int>lround(xs[i]); cy = <int>lround(ys[i])
        for j in range(d * d * nb):
            hst[j] = 0.0
        for py in range(cy - radius, cy + radius + 1):
            if py < 1 or py > H - 2:
                continue
            for px in range(cx - radius, cx + radius + 1):
                if px < 1 or px > W - 2:
                    continue
                ddx = px - xs[i]; ddy = py - ys[i]
                c_rot = ddx * cos_t + ddy * sin_t
                r_rot = -ddx * sin_t + ddy * cos_t
                rbin = r_rot + 0.5 * d - 0.5
                cbin = c_rot + 0.5 * d - 0.5
                if rbin <= -1.0 or rbin >= d or cbin <= -1.0 or cbin >= d:
                    continue
                w = exp(-(c_rot * c_rot + r_rot * r_rot) / (2.0 * (0.5 * d) * (0.5 * d)))
                m = w * mag[l, py, px]
                obin = (ang[l, py, px] - oris[i]) * nb / (2.0 * M_PI)
                obin = obin - nb * floor(obin / nb)
                r0 = <int>floor(rbin); c0 = <int>floor(cbin); b0 = <int>floor(obin)
                fr = rbin - r0; fc = cbin - c0; fo = obin - b0
                for dr in range(2):
                    rr = r0 + dr
                    if rr < 0 or rr >= d:
                        continue
                    wr = fr if dr else 1.0 - fr
                    for dc in range(2):
                        cc = c0 + dc
                        if cc < 0 or cc >= d:
                            continue
                        wc = fc if dc else 1.0 - fc
                        for db in range(2):
                            bb = (b0 + db) % nb
                            wo = fo if db else 1.0 - fo
                            hst[(rr * d + cc) * nb + bb] += m * wr * wc * wo
        norm = 0.0
        for j in range(d * d * nb):
            norm += hst[j] * hst[j]
        norm = sqrt(norm)
        if norm == 0.0:
            continue
        thr = 0.2 * norm
        norm = 0.0
        for j in range(d * d * nb):
            if hst[j] > thr:
                hst[j] = thr
            norm += hst[j] * hst[j]
        norm = sqrt(norm)
        for j in range(d * d * nb):
            o[i, j] = hst[j] / norm
    return out


def segments_occluded(double[::1] origin, double[:, ::1] targets, long[::1] target_ids,
                      double[:, ::1] v0, double[:, ::1] e1, double[:, ::1] e2,
                      long[:, ::1] faces, double eps, double near=0.0):
    """True where the segment origin->target crosses a face not incident to the target vertex.

    Crossings closer than ``near`` (world units) to the target are ignored.
    """
    cdef Py_ssize_t m = targets.shape[0], F = faces.shape[0]
    res = np.zeros(m, dtype=np.uint8)
    cdef unsigned char[::1] r = res
    cdef Py_ssize_t i, f
    cdef double dx, dy, dz, px, py, pz, det, inv, tx, ty, tz, u, v, qx, qy, qz, t, tmax, length
    cdef long tid
    for i in range(m):
        dx = targets[i, 0] - origin[0]
        dy = targets[i, 1] - origin[1]
        dz = targets[i, 2] - origin[2]
        tid = target_ids[i]
        length = sqrt(dx * dx + dy * dy + dz * dz)
        tmax = 1.0 - eps
        if length > 0 and 1.0 - near / length < tmax:
            tmax = 1.0 - near / length
        for f in range(F):
            if faces[f, 0] == tid or faces[f, 1] == tid or faces[f, 2] == tid:
                continue
            px = dy * e2[f, 2] - dz * e2[f, 1]
            py = dz * e2[f, 0] - dx * e2[f, 2]
            pz = dx * e2[f, 1] - dy * e2[f, 0]
            det = e1[f, 0] * px + e1[f, 1] * py + e1[f, 2] * pz
            if fabs(det) < 1e-300:
                continue
            inv = 1.0 / det
            tx = origin[0] - v0[f, 0]
            ty = origin[1] - v0[f, 1]
            tz = origin[2] - v0[f, 2]
            u = (tx * px + ty * py + tz * pz) * inv
            if u < 0.0 or u > 1.0:
                continue
            qx = ty * e1[f, 2] - tz * e1[f, 1]
            qy = tz * e1[f, 0] - tx * e1[f, 2]
            qz = tx * e1[f, 1] - ty * e1[f, 0]
            v = (dx * qx + dy * qy + dz * qz) * inv
            if v < 0.0 or u + v > 1.0:
                continue
            t = (e2[f, 0] * qx + e2[f, 1] * qy + e2[f, 2] * qz) * inv
            if t > eps and t < tmax:
                r[i] = 1
                break
    return res.astype(bool)
