"""
Software rasterizer with analytic backward passes
"""

from .raster_core import TextureAtlas, FrameBundle, render, backward_color, backward_normal
