"""From-scratch CNN training engine for binary helmet / no-helmet classification."""

__version__ = "0.1.0"
