"""Vessel segmentation toolkit for OCTA images.

Includes a small numpy autodiff engine, the Image Magnification Network with
U-Net and plain-CNN baselines, classical filters, Zhang-Suen thinning,
the CAL / skeleton-recall metric suite and tile-and-stitch inference.
"""

__version__ = "0.1.0"
