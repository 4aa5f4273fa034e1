"""Online signature verification from path-signature features."""
__version__ = "0.1.0"
