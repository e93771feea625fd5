# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled rasterizer kernel. Semantics must match raster._fallback exactly."""

import numpy as np

cimport numpy as cnp
from libc.math cimport ceil, floor

cnp.import_array()


def rasterize_flat(xy, inv_z, faces, colors, int height, int width):
    cdef cnp.float64_t[:, ::1] xy_v = np.ascontiguousarray(xy, dtype=np.float64)
    cdef cnp.float64_t[::1] iz_v = np.ascontiguousarray(inv_z, dtype=np.float64)
    cdef cnp.int64_t[:, ::1] faces_v = np.ascontiguousarray(faces, dtype=np.int64)
    cdef cnp.float64_t[:, ::1] colors_v = np.ascontiguousarray(colors, dtype=np.float64)

    img_arr = np.zeros((height, width, 3), dtype=np.float64)
    zbuf_arr = np.zeros((height, width), dtype=np.float64)
    mask_arr = np.zeros((height, width), dtype=np.uint8)
    cdef cnp.float64_t[:, :, ::1] img = img_arr
    cdef cnp.float64_t[:, ::1] zbuf = zbuf_arr
    cdef cnp.uint8_t[:, ::1] mask = mask_arr

    cdef Py_ssize_t f, i0, i1, i2, xi, yi
    cdef int xmin, xmax, ymin, ymax
    cdef double x0, y0, x1, y1, x2, y2, area
    cdef double px, py, w0, w1, w2, iz
    cdef double lo, hi

    for f in range(faces_v.shape[0]):
        i0 = faces_v[f, 0]
        i1 = faces_v[f, 1]
        i2 = faces_v[f, 2]
        x0 = xy_v[i0, 0]; y0 = xy_v[i0, 1]
        x1 = xy_v[i1, 0]; y1 = xy_v[i1, 1]
        x2 = xy_v[i2, 0]; y2 = xy_v[i2, 1]
        area = (x1 - x0) * (y2 - y0) - (y1 - y0) * (x2 - x0)
        if area <= 0.0:
            continue

        lo = x0
        if x1 < lo: lo = x1
        if x2 < lo: lo = x2
        hi = x0
        if x1 > hi: hi = x1
        if x2 > hi: hi = x2
        xmin = <int>floor(lo - 0.5)
        xmax = <int>ceil(hi - 0.5)
        if xmin < 0: xmin = 0
        if xmax > width - 1: xmax = width - 1

        lo = y0
        if y1 < lo: lo = y1
        if y2 < lo: lo = y2
        hi = y0
        if y1 > hi: hi = y1
        if y2 > hi: hi = y2
        ymin = <int>floor(lo - 0.5)
        ymax = <int>ceil(hi - 0.5)
        if ymin < 0: ymin = 0
        if ymax > height - 1: ymax = height - 1

        if xmin > xmax or ymin > ymax:
            continue

        for yi in range(ymin, ymax + 1):
            py = yi + 0.5
            for xi in range(xmin, xmax + 1):
                px = xi + 0.5
                w0 = (x2 - x1) * (py - y1) - (y2 - y1) * (px - x1)
                w1 = (x0 - x2) * (py - y2) - (y0 - y2) * (px - x2)
                w2 = (x1 - x0) * (py - y0) - (y1 - y0) * (px - x0)
                if w0 >= 0.0 and w1 >= 0.0 and w2 >= 0.0:
                    iz = (
                        (w0 / area) * iz_v[i0]
                        + (w1 / area) * iz_v[i1]
                        + (w2 / area) * iz_v[i2]
                    )
                    if iz > zbuf[yi, xi]:
                        zbuf[yi, xi] = iz
                        img[yi, xi, 0] = colors_v[f, 0]
                        img[yi, xi, 1] = colors_v[f, 1]
                        img[yi, xi, 2] = colors_v[f, 2]
                        mask[yi, xi] = 1
    return img_arr, mask_arr
