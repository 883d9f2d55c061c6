"""Data models for configuration and results"""

from .schemas import *
from .results import *
