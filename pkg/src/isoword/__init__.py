"""Isolated-word speech recognition: audio I/O, MFCC features, a small numpy
neural-network engine, five classifier architectures and a k-fold harness."""

__version__ = "0.1.0"
