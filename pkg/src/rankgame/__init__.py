"""Rank-based SDEs, two-barrier reflected BSDEs and American game options."""

__version__ = "0.1.0"
