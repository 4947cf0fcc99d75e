"""Independent brute-force reference implementations used by the tests.

Everything here is written with plain loops or one-line numpy reductions,
deliberately ignoring efficiency, so that the fast library kernels have a
slow, obviously-correct counterpart to be checked against.  Nothing in this
module imports from voxseg.
"""

import numpy as np


def conv3d_forward(x, w, b, stride=1, padding=1):
    """Direct seven-nested-loop 3D cross-correlation, float64 accumulation."""
    n, c, d, h, wd = x.shape
    f = w.shape[0]
    k = w.shape[2]
    od = (d + 2 * padding - k) // stride + 1
    oh = (h + 2 * padding - k) // stride + 1
    ow = (wd + 2 * padding - k) // stride + 1
    out = np.zeros((n, f, od, oh, ow), np.float64)
    for ni in range(n):
        for fi in range(f):
            for z in range(od):
                for y in range(oh):
                    for xx in range(ow):
                        acc = float(b[fi])
                        for ci in range(c):
                            for kz in range(k):
                                for ky in range(k):
                                    for kx in range(k):
                                        iz = z * stride + kz - padding
                                        iy = y * stride + ky - padding
                                        ix = xx * stride + kx - padding
                                        if 0 <= iz < d and 0 <= iy < h and 0 <= ix < wd:
                                            acc += float(x[ni, ci, iz, iy, ix]) * float(w[fi, ci, kz, ky, kx])
                        out[ni, fi, z, y, xx] = acc
    return out


def conv3d_backward(x, w, g, stride=1, padding=1):
    """Loop-accumulated gradients of sum(conv3d(x,w,b) * g) w.r.t. x, w, b."""
    n, c, d, h, wd = x.shape
    f = w.shape[0]
    k = w.shape[2]
    od, oh, ow = g.shape[2:]
    gx = np.zeros_like(x, dtype=np.float64)
    gw = np.zeros_like(w, dtype=np.float64)
    gb = np.zeros(f, np.float64)
    for ni in range(n):
        for fi in range(f):
            for z in range(od):
                for y in range(oh):
                    for xx in range(ow):
                        go = float(g[ni, fi, z, y, xx])
                        gb[fi] += go
                        for ci in range(c):
                            for kz in range(k):
                                for ky in range(k):
                                    for kx in range(k):
                                        iz = z * stride + kz - padding
                                        iy = y * stride + ky - padding
                                        ix = xx * stride + kx - padding
                                        if 0 <= iz < d and 0 <= iy < h and 0 <= ix < wd:
                                            gx[ni, ci, iz, iy, ix] += go * float(w[fi, ci, kz, ky, kx])
                                            gw[fi, ci, kz, ky, kx] += go * float(x[ni, ci, iz, iy, ix])
    return gx, gw, gb


def trilinear_upscale(x, factor):
    """Per-voxel separable align-corners interpolation."""
    n, c, d, h, w = x.shape
    od, oh, ow = d * factor, h * factor, w * factor
    out = np.zeros((n, c, od, oh, ow), np.float64)

    def src(i, n_out, n_in):
        if n_out == 1:
            return 0.0
        return i * (n_in - 1) / (n_out - 1)

    for ni in range(n):
        for ci in range(c):
            for z in range(od):
                for y in range(oh):
                    for xx in range(ow):
                        sz, sy, sx = src(z, od, d), src(y, oh, h), src(xx, ow, w)
                        z0, y0, x0 = int(np.floor(sz)), int(np.floor(sy)), int(np.floor(sx))
                        z1, y1, x1 = min(z0 + 1, d - 1), min(y0 + 1, h - 1), min(x0 + 1, w - 1)
                        fz, fy, fx = sz - z0, sy - y0, sx - x0
                        v = 0.0
                        for dz, wz in ((z0, 1 - fz), (z1, fz)):
                            for dy, wy in ((y0, 1 - fy), (y1, fy)):
                                for dx, wx in ((x0, 1 - fx), (x1, fx)):
                                    v += wz * wy * wx * float(x[ni, ci, dz, dy, dx])
                        out[ni, ci, z, y, xx] = v
    return out


def resample_trilinear(values, spacing, target):
    """Fractional-coordinate resample oracle, voxel-center alignment."""
    d, h, w = values.shape
    ext = [max(1, round(e * s / target)) for e, s in zip((d, h, w), spacing)]
    out = np.zeros(ext, np.float64)
    for z in range(ext[0]):
        for y in range(ext[1]):
            for x in range(ext[2]):
                pos = []
                for i, (e, s) in zip((z, y, x), zip((d, h, w), spacing)):
                    p = ((i + 0.5) * target) / s - 0.5
                    pos.append(min(max(p, 0.0), e - 1))
                z0, y0, x0 = (int(np.floor(p)) for p in pos)
                z1, y1, x1 = min(z0 + 1, d - 1), min(y0 + 1, h - 1), min(x0 + 1, w - 1)
                fz, fy, fx = pos[0] - z0, pos[1] - y0, pos[2] - x0
                v = 0.0
                for dz, wz in ((z0, 1 - fz), (z1, fz)):
                    for dy, wy in ((y0, 1 - fy), (y1, fy)):
                        for dx, wx in ((x0, 1 - fx), (x1, fx)):
                            v += wz * wy * wx * float(values[dz, dy, dx])
                out[z, y, x] = v
    return out


def surface_voxels(mask):
    """Foreground voxels with a 6-connected background or out-of-bounds neighbor."""
    d, h, w = mask.shape
    coords = []
    for z in range(d):
        for y in range(h):
            for x in range(w):
                if not mask[z, y, x]:
                    continue
                on_surface = False
                for dz, dy, dx in ((1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1)):
                    nz, ny, nx = z + dz, y + dy, x + dx
                    if not (0 <= nz < d and 0 <= ny < h and 0 <= nx < w) or not mask[nz, ny, nx]:
                        on_surface = True
                        break
                if on_surface:
                    coords.append((z, y, x))
    return coords


def asd_all_pairs(pred, gt, spacing):
    """Average and maximum symmetric surface distance by all-pairs search."""
    sp = [np.array(c, np.float64) * spacing for c in surface_voxels(pred)]
    sg = [np.array(c, np.float64) * spacing for c in surface_voxels(gt)]
    assert sp and sg

    def directed(a, b):
        return [min(float(np.linalg.norm(p - q)) for q in b) for p in a]

    d_pg = directed(sp, sg)
    d_gp = directed(sg, sp)
    mean = (sum(d_pg) + sum(d_gp)) / (len(d_pg) + len(d_gp))
    return mean, max(max(d_pg), max(d_gp))


def dice(pred, gt):
    p = int(pred.sum())
    g = int(gt.sum())
    if p == 0 and g == 0:
        return 1.0
    inter = int((pred & gt).sum())
    return 2.0 * inter / (p + g)


def cohort_stats(values):
    """Streaming recomputation of mean/std(population)/extremes/median."""
    v = sorted(float(x) for x in values)
    n = len(v)
    mean = sum(v) / n
    var = sum((x - mean) ** 2 for x in v) / n
    med = v[n // 2] if n % 2 else (v[n // 2 - 1] + v[n // 2]) / 2
    return {"mean": mean, "std": var ** 0.5, "min": v[0], "max": v[-1], "median": med}


def di2in_param_count(base, levels, branch_levels):
    """Closed-form parameter tally for the generator construction rule.

    Encoder level l: conv(in -> B*2^l) + conv(B*2^l -> B*2^l, stride 2),
    each followed by batch norm (2 params per channel).  Decoder level l:
    conv(cat -> B*2^l) + conv(B*2^l -> B*2^l), batch norm on both.  Branch
    heads: conv(width(l) -> 1) at each attach level (the deepest attaches to
    the encoder bottom).  Fusion: conv(n_br -> n_br) + conv(n_br -> 1).
    """
    def conv(cin, cout):
        return cout * cin * 27 + cout

    def bn(c):
        return 2 * c

    total = 0
    for l in range(levels):
        w = base * 2 ** l
        cin = 1 if l == 0 else base * 2 ** (l - 1)
        total += conv(cin, w) + bn(w) + conv(w, w) + bn(w)
    bottom = base * 2 ** (levels - 1)
    for l in reversed(range(levels)):
        w = base * 2 ** l
        below = bottom if l == levels - 1 else base * 2 ** (l + 1)
        total += conv(below + w, w) + bn(w) + conv(w, w) + bn(w)
    for l in branch_levels:
        w = bottom if l == levels else base * 2 ** l
        total += conv(w, 1)
    nb = len(branch_levels)
    total += conv(nb, nb) + conv(nb, 1)
    return total


def discriminator_param_count(base, levels, in_channels=1):
    def conv(cin, cout):
        return cout * cin * 27 + cout

    total = 0
    cin = in_channels
    for l in range(levels):
        w = base * 2 ** l
        total += conv(cin, w) + 2 * w
        cin = w
    total += cin * 1 + 1
    return total
