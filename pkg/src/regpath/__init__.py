"""Regularization paths of piecewise-smooth problems."""
