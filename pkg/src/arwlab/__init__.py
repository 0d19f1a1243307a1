"""arwlab: a simulation laboratory for activated random walks on the torus."""

__version__ = "0.1.0"

from .torus import SiteSet, TorusGeometry

__all__ = ["SiteSet", "TorusGeometry", "__version__"]
