"""Slow, independent reference implementations used to check the library.

Each function here is written from the defining formula with plain loops and
shares no code with the package.
"""

import math
from collections import deque

import numpy as np


def unproject_scalar(fx, fy, cx, cy, u, v, d):
    u, v, d = float(u), float(v), float(d)
    return ((u - cx) * d / fx, (v - cy) * d / fy, d)


def project_scalar(fx, fy, cx, cy, x, y, z):
    return (fx * x / z + cx, fy * y / z + cy)


def box_sum_loop(img, y0, x0, y1, x1):
    s = 0.0
    for r in range(y0, y1):
        for c in range(x0, x1):
            s += float(img[r, c])
    return s


def straightedge_bruteforce(x, y):
    """Largest gap under any taut line resting on two samples.

    At every sample, the straightedge height is the highest chord through a
    pair of samples that straddles it; this equals the upper concave envelope.
    Returns (depth, offset of the first sample attaining it).
    """
    n = len(x)
    best, at = 0.0, float(x[0])
    for k in range(n):
        top = y[k]
        for i in range(0, k + 1):
            for j in range(k, n):
                if i == j:
                    continue
                v = y[i] + (y[j] - y[i]) * (x[k] - x[i]) / (x[j] - x[i])
                if v > top:
                    top = v
        gap = top - y[k]
        if gap > best:
            best, at = gap, float(x[k])
    return best, at


def ols_normal_equations(est, tru):
    """Fit est = a + b*tru by solving the 2x2 normal equations directly."""
    n = len(tru)
    sx = sum(tru)
    sxx = sum(t * t for t in tru)
    sy = sum(est)
    sxy = sum(t * e for t, e in zip(tru, est))
    det = n * sxx - sx * sx
    b = (n * sxy - sx * sy) / det
    a = (sy * sxx - sx * sxy) / det
    mean = sy / n
    ss_res = sum((e - (a + b * t)) ** 2 for t, e in zip(tru, est))
    ss_tot = sum((e - mean) ** 2 for e in est)
    return 1.0 - ss_res / ss_tot, b, a


def components_bfs(mask):
    """4-connected components as lists of (row, col), in raster order of first pixel."""
    h, w = mask.shape
    seen = np.zeros_like(mask, dtype=bool)
    comps = []
    for r in range(h):
        for c in range(w):
            if mask[r, c] and not seen[r, c]:
                q = deque([(r, c)])
                seen[r, c] = True
                comp = []
                while q:
                    a, b = q.popleft()
                    comp.append((a, b))
                    for da, db in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                        na, nb = a + da, b + db
                        if 0 <= na < h and 0 <= nb < w and mask[na, nb] and not seen[na, nb]:
                            seen[na, nb] = True
                            q.append((na, nb))
                comps.append(comp)
    return comps


def normalized_gaussian_loop(depth, sigma, radius, lo=200, hi=8000):
    """Per-pixel weighted mean of valid neighbours, rounded half up."""
    h, w = depth.shape
    out = np.zeros((h, w), dtype=np.int64)
    for r in range(h):
        for c in range(w):
            num = den = 0.0
            for dr in range(-radius, radius + 1):
                for dc in range(-radius, radius + 1):
                    rr, cc = r + dr, c + dc
                    if 0 <= rr < h and 0 <= cc < w and lo <= depth[rr, cc] <= hi:
                        wt = math.exp(-0.5 * (dr * dr + dc * dc) / sigma ** 2)
                        num += wt * depth[rr, cc]
                        den += wt
            if den > 0:
                v = math.floor(num / den + 0.5)
                out[r, c] = v if lo <= v <= hi else 0
    return out


def plane_normal_eig(points):
    """Normal as the eigenvector of the scatter matrix with smallest eigenvalue."""
    p = np.asarray(points, dtype=float)
    c = p - p.mean(axis=0)
    vals, vecs = np.linalg.eigh(c.T @ c)
    n = vecs[:, 0]
    return n if n[2] >= 0 else -n


def parse_ply_ascii(text):
    """Minimal independent ASCII PLY reader: returns (property names, rows)."""
    lines = text.splitlines()
    assert lines[0] == "ply"
    assert lines[1] == "format ascii 1.0"
    props, count, i = [], None, 2
    while lines[i] != "end_header":
        parts = lines[i].split()
        if parts[0] == "element" and parts[1] == "vertex":
            count = int(parts[2])
        elif parts[0] == "property":
            props.append(parts[-1])
        i += 1
    rows = [[float(t) for t in ln.split()] for ln in lines[i + 1:] if ln.strip()]
    assert count == len(rows)
    return props, np.array(rows).reshape(len(rows), len(props))


def align_loop(depth, dintr, cintr, rot, trans):
    """Per-pixel forward warp with a nearest-surface z-buffer."""
    fx, fy, cx, cy = dintr
    gx, gy, gcx, gcy, gw, gh = cintr
    out = np.full((gh, gw), np.inf)
    h, w = depth.shape
    for v in range(h):
        for u in range(w):
            d = int(depth[v, u])
            if not 200 <= d <= 8000:
                continue
            p = np.array(unproject_scalar(fx, fy, cx, cy, u, v, d))
            q = rot @ p + trans
            if q[2] <= 0:
                continue
            uu, vv = project_scalar(gx, gy, gcx, gcy, *q)
            iu, iv = math.floor(uu + 0.5), math.floor(vv + 0.5)
            if 0 <= iu < gw and 0 <= iv < gh:
                out[iv, iu] = min(out[iv, iu], q[2])
    res = np.zeros((gh, gw), dtype=np.int64)
    for v in range(gh):
        for u in range(gw):
            if math.isfinite(out[v, u]):
                z = math.floor(out[v, u] + 0.5)
                res[v, u] = z if 200 <= z <= 8000 else 0
    return res
