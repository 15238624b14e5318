"""Frame-level-prompt video diffusion lab on synthetic latent sequences."""

__version__ = "0.1.0"
