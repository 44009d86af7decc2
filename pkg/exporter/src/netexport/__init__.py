"""Torch-to-manifest exporter for piecewise-affine ReLU classifiers."""

from .errors import ExportError

__all__ = ["ExportError"]
