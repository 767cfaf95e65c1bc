"""Infrared/visible image fusion with a heterogeneous-discriminator GAN, in pure numpy."""

__version__ = "0.1.0"
