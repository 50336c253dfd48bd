"""Event-guided video frame interpolation trained by temporal cycle consistency."""

__version__ = "0.1.0"
