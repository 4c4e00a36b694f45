"""Desk-scale OCTA skin-vasculature toolkit.

Covers the full loop: synthetic speckle phantoms with known ground truth,
decorrelation-based flow reconstruction, surface-referenced en-face
projection, six vascular metrics, self-supervised embedding learning with
clustering-derived subtypes, and summary statistics with post-hoc tests.
"""

__version__ = "0.1.0"
