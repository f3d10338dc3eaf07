"""Deterministic rasterization helpers.

Pixel (row r, col c) has its center at coordinates (x=c, y=r). Polygon
interiors follow the even-odd rule evaluated at pixel centers with
half-open edges, so shared vertices never double-count.
"""

import numpy as np


def polygon_mask(polygon, height: int, width: int) -> np.ndarray:
    """Boolean (height, width) mask of pixel centers inside the polygon.

    polygon: sequence of (x, y) vertices, implicitly closed.
    """
    pts = np.asarray(polygon, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[0] < 3 or pts.shape[1] != 2:
        raise ValueError("polygon needs at least 3 (x, y) vertices")
    mask = np.zeros((height, width), dtype=bool)
    x1, y1 = pts[:, 0], pts[:, 1]
    x2, y2 = np.roll(x1, -1), np.roll(y1, -1)
    ymin = max(0, int(np.ceil(pts[:, 1].min())))
    ymax = min(height - 1, int(np.floor(pts[:, 1].max())))
    for r in range(ymin, ymax + 1):
        # edges straddling the scanline, half-open in y
        lo, hi = np.minimum(y1, y2), np.maximum(y1, y2)
        hit = (lo <= r) & (r < hi)
        if not hit.any():
            continue
        t = (r - y1[hit]) / (y2[hit] - y1[hit])
        crossings = np.sort(x1[hit] + t * (x2[hit] - x1[hit]))
        for k in range(0, len(crossings) - 1, 2):
            c0 = max(0, int(np.ceil(crossings[k])))
            c1 = min(width - 1, int(np.ceil(crossings[k + 1])) - 1)
            if c0 <= c1:
                mask[r, c0 : c1 + 1] = True
    return mask


def polygon_is_simple(polygon) -> bool:
    """True when no two non-adjacent edges intersect."""
    pts = np.asarray(polygon, dtype=np.float64)
    n = len(pts)
    edges = [(pts[i], pts[(i + 1) % n]) for i in range(n)]

    def _cross(u, v):
        return u[0] * v[1] - u[1] * v[0]

    def _seg_intersect(p, q, a, b):
        d1 = _cross(b - a, p - a)
        d2 = _cross(b - a, q - a)
        d3 = _cross(q - p, a - p)
        d4 = _cross(q - p, b - p)
        return ((d1 > 0) != (d2 > 0)) and ((d3 > 0) != (d4 > 0))

    for i in range(n):
        for j in range(i + 1, n):
            if j == i or (j + 1) % n == i or (i + 1) % n == j:
                continue  # adjacent edges share a vertex
            if _seg_intersect(*edges[i], *edges[j]):
                return False
    return True


def disc_pixels(x: float, y: float, radius: float, height: int, width: int):
    """(rows, cols) of pixel centers within Euclidean distance <= radius of
    (x, y), clipped to the image bounds."""
    if radius <= 0:
        raise ValueError("radius must be > 0")
    r0 = max(0, int(np.ceil(y - radius)))
    r1 = min(height - 1, int(np.floor(y + radius)))
    c0 = max(0, int(np.ceil(x - radius)))
    c1 = min(width - 1, int(np.floor(x + radius)))
    if r0 > r1 or c0 > c1:
        return np.empty(0, dtype=int), np.empty(0, dtype=int)
    rr, cc = np.meshgrid(np.arange(r0, r1 + 1), np.arange(c0, c1 + 1),
                         indexing="ij")
    inside = (cc - x) ** 2 + (rr - y) ** 2 <= radius ** 2
    return rr[inside], cc[inside]
