"""Pure numpy implementations of the compiled kernels in ``_ckernels.pyx``.

Loops run per keypoint (or per ray) and vectorise over the sample window, so
these are slower but produce the same results to floating-point rounding.
"""
from __future__ import annotations

import math

import numpy as np

TWO_PI = 2.0 * math.pi


def _lround(v: float) -> int:
    # C lround: halves away from zero
    return int(math.copysign(math.floor(abs(v) + 0.5), v))


def refine_extrema(dog, layers, ys, xs, n_scales, contrast_threshold, edge_threshold,
                   border, max_iter=5):
    L, H, W = dog.shape
    n = len(layers)
    out = np.zeros((n, 4))
    pos = np.zeros((n, 3), dtype=np.int64)
    ok = np.zeros(n, dtype=bool)
    thr = contrast_threshold / n_scales
    edge = (edge_threshold + 1.0) ** 2 / edge_threshold
    for i in range(n):
        l, y, x = int(layers[i]), int(ys[i]), int(xs[i])
        converged = False
        off = np.zeros(3)
        grad = np.zeros(3)
        hess = None
        prev = None
        for _ in range(max_iter):
            c = dog[l - 1:l + 2, y - 1:y + 2, x - 1:x + 2]
            v = c[1, 1, 1]
            grad = 0.5 * np.array([c[1, 1, 2] - c[1, 1, 0], c[1, 2, 1] - c[1, 0, 1], c[2, 1, 1] - c[0, 1, 1]])
            dxx = c[1, 1, 2] + c[1, 1, 0] - 2 * v
            dyy = c[1, 2, 1] + c[1, 0, 1] - 2 * v
            dss = c[2, 1, 1] + c[0, 1, 1] - 2 * v
            dxy = 0.25 * (c[1, 2, 2] - c[1, 2, 0] - c[1, 0, 2] + c[1, 0, 0])
            dxs = 0.25 * (c[2, 1, 2] - c[2, 1, 0] - c[0, 1, 2] + c[0, 1, 0])
            dys = 0.25 * (c[2, 2, 1] - c[2, 0, 1] - c[0, 2, 1] + c[0, 0, 1])
            hess = np.array([[dxx, dxy, dxs], [dxy, dyy, dys], [dxs, dys, dss]])
            det = np.linalg.det(hess)
            if det == 0.0:
                break
            off = -np.linalg.solve(hess, grad)
            if np.all(np.abs(off) < 0.5):
                converged = True
                break
            if np.any(np.abs(off) > 1e6):
                break
            step = (l + _lround(off[2]), y + _lround(off[1]), x + _lround(off[0]))
            if step == prev and np.all(np.abs(off) < 1.0):
                # bouncing between two samples: the extremum lies between them
                converged = True
                break
            prev = (l, y, x)
            l, y, x = step
            if l < 1 or l > L - 2 or y < border or y >= H - border or x < border or x >= W - border:
                break
        if not converged:
            continue
        contrast = dog[l, y, x] + 0.5 * float(grad @ off)
        if abs(contrast) < thr:
            continue
        tr = hess[0, 0] + hess[1, 1]
        det2 = hess[0, 0] * hess[1, 1] - hess[0, 1] ** 2
        if det2 <= 0.0 or tr * tr >= edge * det2:
            continue
        out[i] = (x + off[0], y + off[1], l + off[2], contrast)
        pos[i] = (l, y, x)
        ok[i] = True
    return out, pos, ok


def _window(cx, cy, radius, H, W):
    y = np.arange(max(cy - radius, 1), min(cy + radius, H - 2) + 1)
    x = np.arange(max(cx - radius, 1), min(cx + radius, W - 2) + 1)
    return np.meshgrid(y, x, indexing="ij")


def orientation_histograms(mag, ang, layers, ys, xs, sigmas, nbins=36):
    _, H, W = mag.shape
    hist = np.zeros((len(layers), nbins))
    for i in range(len(layers)):
        s = 1.5 * sigmas[i]
        radius = _lround(3.0 * s)
        py, px = _window(_lround(xs[i]), _lround(ys[i]), radius, H, W)
        w = np.exp(-((px - xs[i]) ** 2 + (py - ys[i]) ** 2) / (2.0 * s * s))
        b = np.floor(ang[layers[i], py, px] * nbins / TWO_PI).astype(np.int64) % nbins
        np.add.at(hist[i], b.ravel(), (w * mag[layers[i], py, px]).ravel())
    return hist


def descriptors(mag, ang, layers, ys, xs, sigmas, oris):
    _, H, W = mag.shape
    d, nb = 4, 8
    out = np.zeros((len(layers), d * d * nb))
    for i in range(len(layers)):
        hw = 3.0 * sigmas[i]
        radius = _lround(hw * math.sqrt(2.0) * (d + 1) * 0.5)
        cos_t, sin_t = math.cos(oris[i]) / hw, math.sin(oris[i]) / hw
        py, px = _window(_lround(xs[i]), _lround(ys[i]), radius, H, W)
        ddx, ddy = px - xs[i], py - ys[i]
        c_rot = (ddx * cos_t + ddy * sin_t).ravel()
        r_rot = (-ddx * sin_t + ddy * cos_t).ravel()
        rbin = r_rot + 0.5 * d - 0.5
        cbin = c_rot + 0.5 * d - 0.5
        keep = (rbin > -1) & (rbin < d) & (cbin > -1) & (cbin < d)
        l = layers[i]
        m = (np.exp(-(c_rot ** 2 + r_rot ** 2) / (2.0 * (0.5 * d) ** 2)) * mag[l, py, px].ravel())[keep]
        obin = ((ang[l, py, px].ravel()[keep] - oris[i]) * nb / TWO_PI)
        obin = obin - nb * np.floor(obin / nb)
        rbin, cbin = rbin[keep], cbin[keep]
        r0, c0, b0 = np.floor(rbin).astype(int), np.floor(cbin).astype(int), np.floor(obin).astype(int)
        fr, fc, fo = rbin - r0, cbin - c0, obin - b0
        hist = np.zeros(d * d * nb)
        for dr in (0, 1):
            rr = r0 + dr
            wr = fr if dr else 1.0 - fr
            for dc in (0, 1):
                cc = c0 + dc
                wc = fc if dc else 1.0 - fc
                valid = (rr >= 0) & (rr < d) & (cc >= 0) & (cc < d)
                for db in (0, 1):
                    bb = (b0 + db) % nb
                    wo = fo if db else 1.0 - fo
                    idx = (rr * d + cc) * nb + bb
                    np.add.at(hist, idx[valid], (m * wr * wc * wo)[valid])
        norm = np.linalg.norm(hist)
        if norm == 0.0:
            continue
        hist = np.minimum(hist, 0.2 * norm)
        out[i] = hist / np.linalg.norm(hist)
    return out


def segments_occluded(origin, targets, target_ids, v0, e1, e2, faces, eps, near=0.0):
    res = np.zeros(len(targets), dtype=bool)
    tvec = origin[None, :] - v0
    for i in range(len(targets)):
        d = targets[i] - origin
        length = float(np.sqrt(d @ d))
        tmax = min(1.0 - eps, 1.0 - near / length) if length > 0 else 1.0 - eps
        incident = np.any(faces == target_ids[i], axis=1)
        p = np.cross(d[None, :], e2)
        det = np.einsum("ij,ij->i", e1, p)
        good = (np.abs(det) >= 1e-300) & ~incident
        inv = np.zeros_like(det)
        inv[good] = 1.0 / det[good]
        u = np.einsum("ij,ij->i", tvec, p) * inv
        q = np.cross(tvec, e1)
        v = (q @ d) * inv
        t = np.einsum("ij,ij->i", e2, q) * inv
        hit = good & (u >= 0) & (u <= 1) & (v >= 0) & (u + v <= 1) & (t > eps) & (t < tmax)
        res[i] = bool(hit.any())
    return res
