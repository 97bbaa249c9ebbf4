"""Joint radar-camera sensing with semantic transmission over a digital channel."""

__version__ = "0.1.0"
