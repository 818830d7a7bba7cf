from .errors import MsctError

__version__ = "0.1.0"

__all__ = ["MsctError", "__version__"]
