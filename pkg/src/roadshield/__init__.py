"""Model-checking-strengthened reinforcement learning for quantized driving
controllers: fixed-point sensing, exhaustive pre-analysis, safety-shield
synthesis, statistical model checking, reward automata and shielded tabular
Q-learning over a bounded discrete-time game.
"""

from ._kernels import BACKEND
from .fixedpoint import FixedPointValue, ScaleConfig, to_fixed, to_real

__version__ = "0.1.0"

__all__ = ["BACKEND", "FixedPointValue", "ScaleConfig", "to_fixed", "to_real",
           "__version__"]
