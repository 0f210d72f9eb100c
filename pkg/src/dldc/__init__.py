"""Deep-learning discrete calculus: classical numerical methods as trainable networks."""

__version__ = "0.1.0"
