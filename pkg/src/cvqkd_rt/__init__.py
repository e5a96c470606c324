#!/usr/bin/env python

"""
cvqkd-rt - real-time Gaussian-modulated no-switching CV-QKD protocol engine,
link simulator, post-processing stack and rate calculus.
"""

__version__ = "0.1.0"
