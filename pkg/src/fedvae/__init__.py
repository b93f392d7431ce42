from .errors import FedVaeError

__version__ = "0.1.0"

__all__ = ["FedVaeError", "__version__"]
