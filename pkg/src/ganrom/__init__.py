"""GAN-based reduced-order model for prediction, assimilation and UQ of an
extended SEIRS epidemic simulation."""

__version__ = "0.1.0"
