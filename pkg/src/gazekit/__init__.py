"""Rotation-exact data augmentation and evaluation tooling for gaze/head redirection."""

__version__ = "0.1.0"
