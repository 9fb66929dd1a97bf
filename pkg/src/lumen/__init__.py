"""Indoor lighting estimation from object appearance with a learned latent lighting space."""

__version__ = "0.1.0"
