"""Compare artificial attention maps against human top-down gaze."""
__version__ = "0.1.0"
