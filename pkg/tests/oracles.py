"""Naive reference implementations used only by the tests.

Everything here is deliberately written as plain nested loops over numpy
scalars so it shares no code path with the vectorised library.
"""
import math

import numpy as np


def conv2d(x, k, b, padding=0, stride=1):
    h, w, cin = x.shape
    kk, _, _, cout = k.shape
    oh = (h + 2 * padding - kk) // stride + 1
    ow = (w + 2 * padding - kk) // stride + 1
    out = np.zeros((oh, ow, cout))
    for i in range(oh):
        for j in range(ow):
            for co in range(cout):
                acc = b[co]
                for u in range(kk):
                    for v in range(kk):
                        y = i * stride + u - padding
                        xx = j * stride + v - padding
                        if 0 <= y < h and 0 <= xx < w:
                            for ci in range(cin):
                                acc += x[y, xx, ci] * k[u, v, ci, co]
                out[i, j, co] = acc
    return out


def maxpool2d(x, k, stride=1):
    h, w, c = x.shape
    oh, ow = (h - k) // stride + 1, (w - k) // stride + 1
    out = np.zeros((oh, ow, c))
    for i in range(oh):
        for j in range(ow):
            for ch in range(c):
                best = -math.inf
                for u in range(k):
                    for v in range(k):
                        best = max(best, x[i * stride + u, j * stride + v, ch])
                out[i, j, ch] = best
    return out


def matmul(a, b):
    m, kk = a.shape
    n = b.shape[1]
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            s = 0.0
            for t in range(kk):
                s += a[i, t] * b[t, j]
            out[i, j] = s
    return out


def upsample_bilinear_2x(x):
    h, w, c = x.shape
    out = np.zeros((2 * h, 2 * w, c))

    def coord(g, n):
        s = (g + 0.5) / 2 - 0.5
        return min(max(s, 0.0), n - 1)

    for gy in range(2 * h):
        sy = coord(gy, h)
        y0 = int(math.floor(sy))
        y1 = min(y0 + 1, h - 1)
        fy = sy - y0
        for gx in range(2 * w):
            sx = coord(gx, w)
            x0 = int(math.floor(sx))
            x1 = min(x0 + 1, w - 1)
            fx = sx - x0
            for ch in range(c):
                top = (1 - fx) * x[y0, x0, ch] + fx * x[y0, x1, ch]
                bot = (1 - fx) * x[y1, x0, ch] + fx * x[y1, x1, ch]
                out[gy, gx, ch] = (1 - fy) * top + fy * bot
    return out


def pixel_shuffle_2x(x):
    h, w, c4 = x.shape
    c = c4 // 4
    out = np.zeros((2 * h, 2 * w, c))
    for i in range(h):
        for j in range(w):
            for ch in range(c):
                for a in range(2):
                    for b in range(2):
                        out[2 * i + a, 2 * j + b, ch] = x[i, j, ch * 4 + a * 2 + b]
    return out


def transposed_conv_fixed(x, kernel):
    """Direct double loop over input cells p and output cells q."""
    h, w, r = x.shape
    kh, kw, _ = kernel.shape
    ch, cw = kh // 2, kw // 2
    out = np.zeros((h, w, 1))
    for qy in range(h):
        for qx in range(w):
            acc = 0.0
            for py in range(h):
                for px in range(w):
                    u, v = qy - py + ch, qx - px + cw
                    if 0 <= u < kh and 0 <= v < kw:
                        for rr in range(r):
                            acc += x[py, px, rr] * kernel[u, v, rr]
            out[qy, qx, 0] = acc
    return out


def region_rule(dx, dy, radii, bins):
    """Independent log-polar membership: sector from integer-exact tests where possible."""
    d2 = dx * dx + dy * dy
    if d2 <= radii[0] ** 2:
        return 0
    ring = None
    for a in range(1, len(radii)):
        if radii[a - 1] ** 2 < d2 <= radii[a] ** 2:
            ring = a
            break
    if ring is None:
        return None
    # angle measured counter-clockwise from east with y pointing up
    theta = math.degrees(math.atan2(-dy, dx))
    if theta < 0:
        theta += 360.0
    width = 360.0 / bins
    sector = None
    for k in range(bins + 1):
        if math.isclose(theta, k * width, abs_tol=1e-9):
            # boundary: the lower-index neighbour wins; east belongs to sector 0
            sector = 0 if k % bins == 0 else k - 1
            break
    if sector is None:
        sector = next(s for s in range(bins) if s * width < theta < (s + 1) * width)
    return 1 + (ring - 1) * bins + sector


def voting_brute_force(fr, radii, bins, extent):
    """presence(q) = sum_p F(p, region(q - p)) / |region|."""
    h, w, r = fr.shape
    c = extent // 2
    sizes = {}
    for dy in range(-c, c + 1):
        for dx in range(-c, c + 1):
            reg = region_rule(dx, dy, radii, bins)
            if reg is not None:
                sizes[reg] = sizes.get(reg, 0) + 1
    out = np.zeros((h, w, 1))
    for qy in range(h):
        for qx in range(w):
            acc = 0.0
            for py in range(h):
                for px in range(w):
                    dx, dy = qx - px, qy - py
                    if abs(dx) > c or abs(dy) > c:
                        continue
                    reg = region_rule(dx, dy, radii, bins)
                    if reg is not None:
                        acc += fr[py, px, reg] / sizes[reg]
            out[qy, qx, 0] = acc
    return out


def group_correlation(bank, fs, groups):
    m, c = bank.shape
    h, w, _ = fs.shape
    cg = c // groups
    out = np.zeros((h, w, m * groups))
    for i in range(m):
        for n in range(groups):
            for y in range(h):
                for x in range(w):
                    s = 0.0
                    for ch in range(n * cg, (n + 1) * cg):
                        s += bank[i, ch] * fs[y, x, ch]
                    out[y, x, i * groups + n] = s
    return out


def pyramid_correlation(ft, w1, b1, w2, b2, fs, groups, use_attention=True):
    """Monolithic attention -> pyramid pooling -> group correlation."""
    h, _, c = ft.shape
    if use_attention:
        hid = np.zeros((h, h, w1.shape[-1]))
        att = np.zeros_like(ft)
        for y in range(h):
            for x in range(h):
                for o in range(w1.shape[-1]):
                    hid[y, x, o] = max(0.0, b1[o] + sum(ft[y, x, i] * w1[0, 0, i, o] for i in range(c)))
                for o in range(c):
                    z = b2[o] + sum(hid[y, x, i] * w2[0, 0, i, o] for i in range(w1.shape[-1]))
                    att[y, x, o] = 1.0 / (1.0 + math.exp(-z))
        fta = att * ft
    else:
        fta = ft
    sizes = [1] + list(range(3, h, 2))
    if sizes[-1] != h:
        sizes.append(h)
    vectors = []
    for k in sizes:
        pooled = maxpool2d(fta, k) if k > 1 else fta
        n = h - k + 1
        for y in range(n):
            for x in range(n):
                vectors.append(pooled[y, x])
    return group_correlation(np.array(vectors), fs, groups)


def box_iou(a, b):
    ix = max(0.0, min(a[2], b[2]) - max(a[0], b[0]))
    iy = max(0.0, min(a[3], b[3]) - max(a[1], b[1]))
    inter = ix * iy
    union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
    return inter / union if union > 0 else 0.0


def radius_scan(w, h, d, step=0.01):
    """Brute-force corner tolerance: scan r per displacement case, keep the worst."""
    gt = (0.0, 0.0, w, h)
    cases = [
        lambda r: (r, r, w - r, h - r),          # both corners inward
        lambda r: (-r, -r, w + r, h + r),        # both outward
        lambda r: (r, r, w + r, h + r),          # one in, one out (shift)
    ]
    best = []
    for make in cases:
        r, last = 0.0, 0.0
        while True:
            box = make(r)
            if box[2] <= box[0] or box[3] <= box[1] or box_iou(gt, box) < d:
                break
            last = r
            r += step
        best.append(last)
    return min(best)


def focal_loss(pred, y, alpha=2.0, beta=4.0, eps=1e-7):
    total = 0.0
    flat_p = pred.reshape(-1, *pred.shape[-3:])
    flat_y = y.reshape(-1, *y.shape[-3:])
    for p_s, y_s in zip(flat_p, flat_y):
        npos = 0
        acc = 0.0
        for p, t in zip(p_s.ravel(), y_s.ravel()):
            p = min(max(p, eps), 1 - eps)
            if t == 1:
                npos += 1
                acc += (1 - p) ** alpha * math.log(p)
            else:
                acc += (1 - t) ** beta * p ** alpha * math.log(1 - p)
        total += -acc / npos
    return total


def elementwise(fn, *arrays):
    """Apply a scalar function cell by cell after broadcasting."""
    arrays = np.broadcast_arrays(*arrays)
    out = np.zeros(arrays[0].shape)
    for idx in np.ndindex(out.shape):
        out[idx] = fn(*(float(a[idx]) for a in arrays))
    return out


def sigmoid(v):
    return 1.0 / (1.0 + math.exp(-v))
