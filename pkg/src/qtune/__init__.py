"""Robust LQ tracking with a scaled Youla-type residual filter, tuned by
iteration-domain extremum seeking."""

__version__ = "0.1.0"
