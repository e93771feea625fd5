"""Flat-shaded triangle rasterizer with z-buffer.

Two interchangeable kernels: a compiled Cython core and a pure-numpy
fallback. The compiled core is used when its extension module imported
cleanly; both produce bit-identical images. Set KINLIFT_RASTER=python to
force the fallback.
"""

import os

from . import _fallback

try:
    from . import _core
except ImportError:  # extension not built
    _core = None

BACKEND = "python" if (_core is None or os.environ.get("KINLIFT_RASTER") == "python") else "cython"


def rasterize_flat(xy, inv_z, faces, colors, height, width):
    """Rasterize triangles with per-face constant color.

    Args:
        xy: (V, 2) float64 screen coordinates in pixels; pixel (row i, col j)
            has its center at (j + 0.5, i + 0.5).
        inv_z: (V,) float64 inverse view depth (> 0 in front of the camera);
            interpolated linearly in screen space for the depth test.
        faces: (F, 3) int64 vertex indices. Faces whose projected signed area
            is <= 0 (back-facing or degenerate) are skipped.
        colors: (F, 3) float64 per-face color.
        height, width: output image size.

    Returns:
        (image, mask): (H, W, 3) float64 image with 0 background, and an
        (H, W) uint8 coverage mask.
    """
    if BACKEND == "cython":
        return _core.rasterize_flat(xy, inv_z, faces, colors, height, width)
    return _fallback.rasterize_flat(xy, inv_z, faces, colors, height, width)


def rasterize_flat_py(xy, inv_z, faces, colors, height, width):
    """Pure-numpy kernel, always available (used by tests and benchmarks)."""
    return _fallback.rasterize_flat(xy, inv_z, faces, colors, height, width)


def rasterize_flat_compiled(xy, inv_z, faces, colors, height, width):
    """Compiled kernel; raises if the extension is unavailable."""
    if _core is None:
        raise RuntimeError("compiled raster core is not built")
    return _core.rasterize_flat(xy, inv_z, faces, colors, height, width)


def has_compiled_core() -> bool:
    return _core is not None
