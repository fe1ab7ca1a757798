"""Rank-based AFT regression for partly interval-censored and doubly-censored data"""

__version__ = "0.1.1"
__author__ = "Benjamin Borbe"
