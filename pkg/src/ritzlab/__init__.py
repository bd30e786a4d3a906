"""Deep Ritz laboratory: spectral ground truth, shallow-network approximation
and complexity bounds for Neumann problems on the unit cube."""
from .spectral import CosineSeries

__version__ = "0.1.0"
__all__ = ["CosineSeries", "__version__"]
