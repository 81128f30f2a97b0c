"""Anisotropic goal-oriented space-time adaptive FEM for CDR problems."""

__version__ = "0.1.0"
