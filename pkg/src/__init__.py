"""citl-engine: convex-integration constructions for transport and transport-diffusion on the torus."""

__version__ = "0.3.0"
