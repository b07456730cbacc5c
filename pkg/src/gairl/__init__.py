"""GAIRL: a Rainbow-style agent whose training alternates between a real
environment and a learned generative imagination of its dynamics."""

__version__ = "0.1.0"
