"""Microplastic segmentation pipeline with inpainting-GAN data augmentation."""

__version__ = "0.1.0"
