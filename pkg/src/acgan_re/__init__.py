"""AC-GAN data augmentation for relation extraction, built on numpy."""
__version__ = "0.1.0"
