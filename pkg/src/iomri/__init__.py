"""Reconstruction toolkit for accelerated intraoperative MRI.

Submodules cover centered FFTs and volume handling, Poisson-disc sampling,
protocol emulation, phantoms, SENSE/compressed-sensing baselines, an unrolled
cascade network, metrics with bias-field correction, and reader-study
statistics.
"""

__version__ = "0.1.0"
