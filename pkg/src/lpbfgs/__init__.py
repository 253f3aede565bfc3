"""Sparse adversarial attacks: IG pixel selection + dense BFGS in tanh space."""

__version__ = "0.1.0"
