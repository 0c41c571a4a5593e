"""Optimal equilibria and mechanisms in mediator-augmented games."""

__version__ = "0.1.0"
