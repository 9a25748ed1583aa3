"""
Semantic partition, cylinder unwrapping and atlas packing
"""

from .unwrap_core import partition, cylinder_unwrap, pack_atlas
