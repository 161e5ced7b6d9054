"""Adversarial camouflage toolkit for vision-language driving models.

Optimizes a full-surface texture for a 3D vehicle mesh so rendered views
push the victim's intermediate features away from their clean values,
with multi-view and multi-scale robustness baked into the training loop,
plus the dataset generator and the text/judge evaluation harness.
"""

__version__ = "0.1.0"

from .errors import AdvCamoError  # noqa: F401
