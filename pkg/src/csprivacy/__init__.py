"""Compressive-sensing privacy for video classification.

Clips are encoded block-wise with a key-seeded sensing matrix, classified in
the measurement domain by a small inflated-Inception 3D ConvNet, and the
privacy of the encoding is measured as a reconstruction PSNR gap between the
true key and a wrong one.
"""

__version__ = "0.1.0"
