"""Structure-from-motion for texture-poor monocular sequences with virtual-dye translation."""
__version__ = "0.1.0"
