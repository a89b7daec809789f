"""Face-conditioned voice conversion (conditional VAE + NSF decoder) with a
face-to-average-F0 estimator and an objective evaluation suite."""

__version__ = "0.1.0"
