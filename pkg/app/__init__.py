"""mdm - desk-scale masked-diffusion multimodal engine."""

__version__ = "0.1.0"
