"""Segmentation-based Intrinsic LoRA with dual-space augmentation."""

__version__ = "0.1.0"
