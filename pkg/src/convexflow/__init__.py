"""Harmonic map heat flow into geodesically convex bodies, with containment checks."""
from . import convex, flow, level_geometry, manifold, scenario, verify
from .convex import ConvexBody, ball, halfspace
from .flow import DomainMesh, MapField
from .manifold import ModelManifold

__version__ = "0.1.0"
