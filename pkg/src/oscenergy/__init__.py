"""Energy-flow analysis of electromechanical oscillations in multimachine power systems."""

__version__ = "0.1.0"
