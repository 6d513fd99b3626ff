"""mixreg: learned k-nearest-neighbor mixup augmentation for regression."""

__version__ = "0.1.0"
