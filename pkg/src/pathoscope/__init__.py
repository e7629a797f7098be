"""Patch-based pathogen detection for brightfield microscopy images.

A small, dependency-light implementation of the classic pipeline:
annotated whole images -> balanced augmented patch sets -> a compact
convolutional network trained from scratch -> sliding-window detection
with non-max suppression -> ROC/PR evaluation against a shape-feature
forest baseline. Includes a synthetic corpus generator so everything is
verifiable end to end on a laptop.
"""

__version__ = "0.1.0"
