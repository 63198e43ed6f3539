"""Meta-learned surrogate models for sequential decision making."""

__version__ = "0.1.0"
