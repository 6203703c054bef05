"""Few-step generative models trained by matching interpolant moments.

Submodules are imported on demand so the command-line entry point can set
BLAS thread counts before numpy loads.
"""

__version__ = "0.1.0"
