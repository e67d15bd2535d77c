"""reskit: fitting and loss analysis for superconducting microwave resonators."""
__version__ = "0.1.0"
