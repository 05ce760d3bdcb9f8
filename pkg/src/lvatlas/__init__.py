"""Left-ventricular shape atlas pipeline."""
__version__ = "0.1.0"
