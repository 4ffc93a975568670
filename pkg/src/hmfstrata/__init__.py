"""Harmonic map flow into spheres: densities, singular strata and covering tools."""
__version__ = "0.1.0"
