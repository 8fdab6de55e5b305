"""World-model pipeline for deformable cloth folding."""

__version__ = "0.1.0"
