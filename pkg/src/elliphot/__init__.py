"""Maximum-likelihood ellipse estimation from photon-limited digital images."""

__version__ = "0.1.0"
