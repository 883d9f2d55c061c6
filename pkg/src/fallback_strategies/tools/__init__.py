"""Training, oracle and evaluation tools"""

from .trainer import FallbackTrainer, run_training
from .report_generator import TextReportGenerator
