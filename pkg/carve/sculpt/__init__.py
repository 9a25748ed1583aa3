"""
Geometric sculpting from multi-view normal maps
"""

from .sculpt_core import SculptConfig, sculpt
