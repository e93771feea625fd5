"""Desk-scale expression-conditioned video lifting.

Subpackages:
    kinematics    expression coefficients, K-means reference selection
    raster        triangle rasterizer (compiled core + numpy fallback)
    synthworld    synthetic head proxy, Phong shading, dataset synthesis
    encoders      shading/expression encoders and the image autoencoder
    conditioning  token assembly for the transformer backbone
    backbone      compact video diffusion transformer + low-rank adapters
    flowmatch     flow-matching objective, training step, Euler sampler
    metrics       PSNR / SSIM
    cli           command-line orchestration
"""

__version__ = "0.1.0"
