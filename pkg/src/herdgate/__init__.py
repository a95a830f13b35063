"""Machine-learning augmented herd-test interpretation and bTB transmission simulation."""
__version__ = "0.1.0"
