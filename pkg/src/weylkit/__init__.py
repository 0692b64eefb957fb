"""Weyl-function toolkit for even-order boundary problems."""

__version__ = "0.1.0"
