"""Zero-shot policy transfer with a nominal trajectory and a tracking MPC."""
from ._backend import BACKEND

__version__ = "0.1.0"

__all__ = ["BACKEND", "__version__"]
