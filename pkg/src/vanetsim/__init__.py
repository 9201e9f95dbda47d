"""Position-based VANET routing simulator with learning-automata anchor routing."""

__version__ = "0.1.0"
