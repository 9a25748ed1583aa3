"""
carve - mesh sculpting and explicit texturing toolkit
Fit a tetrahedral SDF to a coarse mesh, carve detail from normal maps,
and bake a UV texture atlas from multi-view renderings.
"""

__version__ = "1.0.0"
__all__ = ["__version__"]
