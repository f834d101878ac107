"""Pose-guided person image synthesis: one generator, two discriminators."""

__version__ = "0.1.0"
