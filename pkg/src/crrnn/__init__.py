"""Learned convex-ridge regularizers for image denoising and linear inverse problems."""

__version__ = "0.1.0"

from .errors import ConvergenceError, FormatError, NumericalError  # noqa: E402
from .model import CrrModel, load, save  # noqa: E402
from .splines import ConvexPotential, MonotoneSpline, SplineGrid  # noqa: E402

__all__ = ["CrrModel", "ConvergenceError", "ConvexPotential", "FormatError", "MonotoneSpline",
           "NumericalError", "SplineGrid", "load", "save", "__version__"]
