"""flowtune: neural surrogate flowsheet simulation at desk scale.

Fit one small MLP per process unit, connect the surrogates into the
flowsheet's cyclic graph, solve tear streams by fixed-point methods, and
repair divergent nested cycles by fine-tuning through the unrolled solver.
"""

__version__ = "0.1.0"

from . import analysis, autograd, flowsheet, nn, plantgen, solvers, training

__all__ = ["analysis", "autograd", "flowsheet", "nn", "plantgen", "solvers",
           "training", "__version__"]
