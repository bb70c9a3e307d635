"""EMA coil recordings as motion capture: BVH interchange, vocal-tract mesh
registration, spline-IK tongue rigging, animation and fidelity evaluation."""

from .errors import DegenerateError, ParseError

__version__ = "0.1.0"

__all__ = ["DegenerateError", "ParseError", "__version__"]
