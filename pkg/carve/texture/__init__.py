"""
Explicit texturing: atlas baking from multi-view images
"""

from .texture_core import TexConfig, tv_loss, recon_loss, bake
