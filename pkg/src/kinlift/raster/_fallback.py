"""Pure-numpy rasterizer kernel. Semantics must match raster._core exactly."""

import numpy as np


def rasterize_flat(xy, inv_z, faces, colors, height, width):
    xy = np.ascontiguousarray(xy, dtype=np.float64)
    inv_z = np.ascontiguousarray(inv_z, dtype=np.float64)
    faces = np.ascontiguousarray(faces, dtype=np.int64)
    colors = np.ascontiguousarray(colors, dtype=np.float64)

    img = np.zeros((height, width, 3), dtype=np.float64)
    zbuf = np.zeros((height, width), dtype=np.float64)  # stores 1/z; larger wins
    mask = np.zeros((height, width), dtype=np.uint8)

    for f in range(faces.shape[0]):
        i0, i1, i2 = faces[f]
        x0, y0 = xy[i0]
        x1, y1 = xy[i1]
        x2, y2 = xy[i2]
        area = (x1 - x0) * (y2 - y0) - (y1 - y0) * (x2 - x0)
        if area <= 0.0:  # back-facing or degenerate
            continue

        xmin = max(int(np.floor(min(x0, x1, x2) - 0.5)), 0)
        xmax = min(int(np.ceil(max(x0, x1, x2) - 0.5)), width - 1)
        ymin = max(int(np.floor(min(y0, y1, y2) - 0.5)), 0)
        ymax = min(int(np.ceil(max(y0, y1, y2) - 0.5)), height - 1)
        if xmin > xmax or ymin > ymax:
            continue

        px = np.arange(xmin, xmax + 1, dtype=np.float64) + 0.5
        py = (np.arange(ymin, ymax + 1, dtype=np.float64) + 0.5)[:, None]
        w0 = (x2 - x1) * (py - y1) - (y2 - y1) * (px - x1)
        w1 = (x0 - x2) * (py - y2) - (y0 - y2) * (px - x2)
        w2 = (x1 - x0) * (py - y0) - (y1 - y0) * (px - x0)
        inside = (w0 >= 0.0) & (w1 >= 0.0) & (w2 >= 0.0)
        if not inside.any():
            continue

        iz = (
            (w0 / area) * inv_z[i0]
            + (w1 / area) * inv_z[i1]
            + (w2 / area) * inv_z[i2]
        )
        tile = (slice(ymin, ymax + 1), slice(xmin, xmax + 1))
        win = inside & (iz > zbuf[tile])
        zbuf[tile][win] = iz[win]
        img[tile][win] = colors[f]
        mask[tile][win] = 1
    return img, mask
