"""Random electromagnetic fields, relativistic test-particle dynamics and diffusion limits."""
__version__ = "0.1.0"
