import numpy as np

from relvis.geometry import disc_pixels, polygon_is_simple, polygon_mask


def brute_force_disc(x, y, radius, height, width):
    hits = []
    for r in range(height):
        for c in range(width):
            if (c - x) ** 2 + (r - y) ** 2 <= radius ** 2:
                hits.append((r, c))
    return hits


def brute_force_polygon(polygon, height, width):
    """Even-odd ray cast per pixel center, half-open edges in y."""
    pts = [(float(x), float(y)) for x, y in polygon]
    n = len(pts)
    mask = np.zeros((height, width), bool)
    for r in range(height):
        for c in range(width):
            crossings = 0
            for i in range(n):
                x1, y1 = pts[i]
                x2, y2 = pts[(i + 1) % n]
                if (min(y1, y2) <= r < max(y1, y2)):
                    xc = x1 + (r - y1) * (x2 - x1) / (y2 - y1)
                    if xc > c:
                        crossings += 1
                elif y1 == y2:
                    continue
            mask[r, c] = crossings % 2 == 1
    return mask


def test_disc_matches_brute_force():
    rng = np.random.default_rng(7)
    for _ in range(10):
        x = rng.uniform(0, 20)
        y = rng.uniform(0, 20)
        radius = rng.uniform(1, 8)
        rows, cols = disc_pixels(x, y, radius, 20, 20)
        got = sorted(zip(rows.tolist(), cols.tolist()))
        assert got == brute_force_disc(x, y, radius, 20, 20)


def test_disc_clipped_at_bounds():
    rows, cols = disc_pixels(0.0, 0.0, 3.0, 10, 10)
    assert rows.min() == 0 and cols.min() == 0
    assert len(rows) == len(brute_force_disc(0, 0, 3.0, 10, 10))


def test_polygon_rectangle_exact_area():
    poly = [(0.5, 0.5), (10.5, 0.5), (10.5, 20.5), (0.5, 20.5)]
    mask = polygon_mask(poly, 30, 30)
    # interior centers: cols 1..10, rows 1..20
    assert mask.sum() == 10 * 20
    assert mask[1, 1] and mask[20, 10]
    assert not mask[0, 0] and not mask[21, 11]


def test_polygon_matches_brute_force():
    rng = np.random.default_rng(3)
    for _ in range(8):
        k = int(rng.integers(3, 8))
        angles = np.sort(rng.uniform(0, 2 * np.pi, k))
        radii = rng.uniform(3, 9, k)
        poly = [(10 + r * np.cos(a) + 0.137, 10 + r * np.sin(a) + 0.211)
                for r, a in zip(radii, angles)]
        got = polygon_mask(poly, 20, 20)
        want = brute_force_polygon(poly, 20, 20)
        np.testing.assert_array_equal(got, want)


def test_simple_polygon_detection():
    square = [(0, 0), (4, 0), (4, 4), (0, 4)]
    bowtie = [(0, 0), (4, 4), (4, 0), (0, 4)]
    assert polygon_is_simple(square)
    assert not polygon_is_simple(bowtie)
