"""1-D WDCGAN-GP for vibration data generation and damage classification."""
__version__ = "0.1.0"
