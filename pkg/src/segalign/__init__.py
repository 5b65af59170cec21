"""Text-supervised semantic segmentation via multi-level contrastive alignment."""

__version__ = "0.1.0"
