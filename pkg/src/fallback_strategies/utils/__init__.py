"""Utility functions for the fallback strategies toolkit"""

from .helpers import *
