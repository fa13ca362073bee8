"""Group-level emotion recognition from scene context and label semantics."""

__version__ = "0.1.0"
