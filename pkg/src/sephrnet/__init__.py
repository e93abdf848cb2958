"""SepHRNet: separable-convolution HRNet with temporal attention for crop mapping."""

__version__ = "0.1.0"
