"""Learned measurement likelihoods for Bayes filters on depth images."""

__version__ = "0.1.0"
