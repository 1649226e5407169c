"""Unpaired image-to-image mapping that preserves siamese transformation vectors."""

__version__ = "0.1.0"
