"""Acoustic diagnosis of electric point machines.

Separates switching sounds into per-component activations, decodes the seven
switching phases, screens out disturbed recordings and scores each phase with
an interpolation network trained on normal operation.
"""

__version__ = "0.1.0"
